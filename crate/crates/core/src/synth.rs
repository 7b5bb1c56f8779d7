//! Synthetic PCB-defect images.
//!
//! A `side × side` grayscale image shows horizontal copper traces (bright) at
//! a fixed pitch on a dark substrate, with round pads along each trace. One to
//! six defects are drawn on top, each as a class-specific primitive:
//!
//! | class             | primitive                                        |
//! |-------------------|--------------------------------------------------|
//! | `missing_hole`    | solid disc where a drilled pad would be          |
//! | `mouse_bite`      | dark half-ellipse notch bitten from a trace edge |
//! | `open_circuit`    | dark gap cutting across a trace                  |
//! | `short`           | bright bridge between two adjacent traces        |
//! | `spur`            | bright tapered protrusion from a trace edge      |
//! | `spurious_copper` | irregular bright blob on the substrate           |
//!
//! Primitives are sized so that their bounding-box area, as a fraction of the
//! image, is the class target times a uniform jitter with mean one. The
//! annotation is the tight extent of the pixels actually drawn.
//!
//! Every image draws from its own stream keyed by `(seed, split, index)`, so
//! the output does not depend on generation order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::detector::{Sample, Target};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::{self, StreamRng};

pub const CLASS_NAMES: [&str; 6] = [
    "missing_hole",
    "mouse_bite",
    "open_circuit",
    "short",
    "spur",
    "spurious_copper",
];

/// Mean defect area as a fraction of the image, per class.
pub const DEFAULT_AREA_FRACTIONS: [f64; 6] = [0.0008, 0.0007, 0.0005, 0.0013, 0.0009, 0.0009];

const SUBSTRATE: f64 = 45.0;
const COPPER: f64 = 200.0;
const NOISE: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Primitive {
    FilledDisc,
    EdgeNotch,
    TraceGap,
    TraceBridge,
    Spur,
    StrayBlob,
}

impl Primitive {
    /// Primitive of one of the standard class names.
    pub fn for_class(name: &str) -> Option<Self> {
        Some(match name {
            "missing_hole" => Primitive::FilledDisc,
            "mouse_bite" => Primitive::EdgeNotch,
            "open_circuit" => Primitive::TraceGap,
            "short" => Primitive::TraceBridge,
            "spur" => Primitive::Spur,
            "spurious_copper" => Primitive::StrayBlob,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub primitive: Primitive,
    pub area_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub train_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub classes: Vec<ClassSpec>,
    pub trace_pitch: usize,
    pub trace_width: usize,
    pub pad_spacing: usize,
    pub min_defects: usize,
    pub max_defects: usize,
    /// Per-defect area is scaled by U(1 − jitter, 1 + jitter).
    pub area_jitter: f64,
    /// Placement attempts per defect before it is skipped.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            train_images: 400,
            val_images: 50,
            test_images: 50,
            classes: CLASS_NAMES
                .iter()
                .zip(DEFAULT_AREA_FRACTIONS)
                .map(|(&name, area_fraction)| ClassSpec {
                    name: name.into(),
                    primitive: Primitive::for_class(name).expect("standard class"),
                    area_fraction,
                })
                .collect(),
            trace_pitch: 20,
            trace_width: 8,
            pad_spacing: 48,
            min_defects: 1,
            max_defects: 6,
            area_jitter: 0.25,
            max_retries: 50,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Same settings restricted to one class (keeping its class id at 0).
    pub fn single_class(&self, class: usize) -> Self {
        Self {
            classes: vec![self.classes[class].clone()],
            ..self.clone()
        }
    }

    pub fn images(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_images,
            Split::Val => self.val_images,
            Split::Test => self.test_images,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes.is_empty() {
            return bad("at least one class is required".into());
        }
        for c in &self.classes {
            if !(c.area_fraction > 0.0 && c.area_fraction < 0.05) {
                return bad(format!("area fraction of {} must lie in (0, 0.05)", c.name));
            }
        }
        if self.trace_width == 0 || self.trace_pitch <= self.trace_width + 2 {
            return bad("trace pitch must exceed trace width by at least 3 pixels".into());
        }
        if self.image_size < 2 * self.trace_pitch {
            return bad("image must hold at least two traces".into());
        }
        if self.min_defects == 0 || self.min_defects > self.max_defects {
            return bad("need 1 <= min_defects <= max_defects".into());
        }
        if !(0.0..1.0).contains(&self.area_jitter) {
            return bad("area jitter must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// A defect annotation in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annotation {
    pub class_id: usize,
    pub bbox: BBox,
}

impl Annotation {
    /// `(cx, cy, w, h)` divided by the image side.
    pub fn normalized(&self, side: usize) -> [f64; 4] {
        self.bbox.scaled(1.0 / side as f64).to_array()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    /// `"{split}_{index:05}"`.
    pub name: String,
    pub split: Split,
    pub index: usize,
    pub side: usize,
    pub pixels: Vec<u8>,
    pub annotations: Vec<Annotation>,
}

impl SynthImage {
    /// Identifier unique across splits: split rank in the high 32 bits.
    pub fn image_id(&self) -> u64 {
        let rank = Split::ALL.iter().position(|&s| s == self.split).unwrap_or(0) as u64;
        (rank << 32) | self.index as u64
    }

    pub fn to_sample(&self) -> Sample {
        Sample {
            image_id: self.image_id(),
            pixels: self.pixels.clone(),
            targets: self
                .annotations
                .iter()
                .map(|a| Target {
                    class_id: a.class_id,
                    bbox: a.bbox,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthDataset {
    pub train: Vec<SynthImage>,
    pub val: Vec<SynthImage>,
    pub test: Vec<SynthImage>,
    /// One line per defect that could not be placed.
    pub log: Vec<String>,
}

impl SynthDataset {
    pub fn split(&self, s: Split) -> &[SynthImage] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &SynthImage> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

pub fn generate_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut out = SynthDataset::default();
    for split in Split::ALL {
        let images = (0..cfg.images(split))
            .map(|i| render_image(cfg, split, i, &mut out.log))
            .collect();
        match split {
            Split::Train => out.train = images,
            Split::Val => out.val = images,
            Split::Test => out.test = images,
        }
    }
    Ok(out)
}

fn image_rng(cfg: &SynthConfig, split: Split, index: usize) -> StreamRng {
    rng::stream(cfg.seed ^ rng::label_id(split.name()), index as u64)
}

/// Pixel canvas in `f64` with the drawing helpers the primitives need.
struct Canvas {
    side: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, v: f64) {
        self.px[y * self.side + x] = v;
    }
}

/// Integer rectangle `[x0, x0 + w) × [y0, y0 + h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Rect {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
}

impl Rect {
    fn inside(&self, side: usize) -> bool {
        self.x0 >= 0 && self.y0 >= 0 && self.x0 + self.w <= side as i64 && self.y0 + self.h <= side as i64
    }

    fn overlaps(&self, o: &Rect, margin: i64) -> bool {
        self.x0 - margin < o.x0 + o.w && o.x0 < self.x0 + self.w + margin
            && self.y0 - margin < o.y0 + o.h && o.y0 < self.y0 + self.h + margin
    }
}

/// Traces occupy rows `[first + k·pitch, first + k·pitch + width)`.
fn trace_rows(cfg: &SynthConfig) -> Vec<i64> {
    let first = ((cfg.trace_pitch - cfg.trace_width) / 2) as i64;
    (0..)
        .map(|k| first + k * cfg.trace_pitch as i64)
        .take_while(|&y| y + cfg.trace_width as i64 <= cfg.image_size as i64)
        .collect()
}

fn render_background(cfg: &SynthConfig, r: &mut StreamRng) -> Canvas {
    let side = cfg.image_size;
    let mut c = Canvas {
        side,
        px: vec![SUBSTRATE; side * side],
    };
    let tw = cfg.trace_width as i64;
    let pad_r = tw as f64 * 0.8;
    let hole_r = tw as f64 * 0.3;
    let phase = r.random_range(0..cfg.pad_spacing.max(1)) as f64;
    for (k, &y0) in trace_rows(cfg).iter().enumerate() {
        for y in y0..y0 + tw {
            for x in 0..side {
                c.set(x, y as usize, COPPER);
            }
        }
        // pads with drill holes, staggered between neighbouring traces
        let cy = y0 as f64 + tw as f64 / 2.0;
        let stagger = if k % 2 == 0 { 0.0 } else { cfg.pad_spacing as f64 / 2.0 };
        let mut cx = phase + stagger;
        while cx < side as f64 {
            for y in (cy - pad_r).max(0.0) as usize..(libm::ceil(cy + pad_r) as usize).min(side) {
                for x in (cx - pad_r).max(0.0) as usize..(libm::ceil(cx + pad_r) as usize).min(side) {
                    let d = libm::hypot(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    if d <= hole_r {
                        c.set(x, y, SUBSTRATE);
                    } else if d <= pad_r {
                        c.set(x, y, COPPER);
                    }
                }
            }
            cx += cfg.pad_spacing as f64;
        }
    }
    c
}

/// Pixels of a primitive as `(x, y, value)`.
type Mask = Vec<(i64, i64, f64)>;

fn ellipse_in(rect: Rect, value: f64) -> Mask {
    let (cx, cy) = (rect.x0 as f64 + rect.w as f64 / 2.0, rect.y0 as f64 + rect.h as f64 / 2.0);
    let (rx, ry) = (rect.w as f64 / 2.0, rect.h as f64 / 2.0);
    let mut m = Vec::new();
    for y in rect.y0..rect.y0 + rect.h {
        for x in rect.x0..rect.x0 + rect.w {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                m.push((x, y, value));
            }
        }
    }
    m
}

/// Integer `(w, h)` of area close to `area`, with `h` fixed when given.
fn dims(area: f64, aspect: f64, fixed_h: Option<i64>) -> (i64, i64) {
    match fixed_h {
        Some(h) => ((libm::round(area / h as f64) as i64).max(1), h),
        None => {
            let h = libm::sqrt(area / aspect);
            let w = area / h;
            ((libm::round(w) as i64).max(2), (libm::round(h) as i64).max(2))
        }
    }
}

/// Proposes one placement of a primitive with target bounding-box area.
fn propose(cfg: &SynthConfig, prim: Primitive, area: f64, r: &mut StreamRng) -> Option<(Rect, Mask)> {
    let side = cfg.image_size as i64;
    let tw = cfg.trace_width as i64;
    let gap = cfg.trace_pitch as i64 - tw;
    let traces = trace_rows(cfg);
    let trace = traces[r.random_range(0..traces.len())];
    let x_for = |w: i64, r: &mut StreamRng| r.random_range(0..(side - w).max(1));
    let dark = SUBSTRATE;
    let bright = COPPER + 20.0;
    match prim {
        Primitive::FilledDisc | Primitive::StrayBlob => {
            let (w, h) = dims(area, if prim == Primitive::FilledDisc { 1.0 } else { 1.3 }, None);
            // inside the substrate gap below a trace when it fits
            let y0 = if h <= gap - 2 {
                trace + tw + 1 + r.random_range(0..(gap - 1 - h))
            } else {
                r.random_range(0..(side - h).max(1))
            };
            let rect = Rect { x0: x_for(w, r), y0, w, h };
            let mask = if prim == Primitive::FilledDisc {
                ellipse_in(rect, bright)
            } else {
                // union of a few ellipses anchored on the rectangle corners
                let mut m = ellipse_in(rect, bright);
                let sub_w = (w * 2 / 3).max(1);
                let sub_h = (h * 2 / 3).max(1);
                for _ in 0..2 {
                    let sx = rect.x0 + r.random_range(0..=(w - sub_w));
                    let sy = rect.y0 + r.random_range(0..=(h - sub_h));
                    m.extend(
                        (sy..sy + sub_h)
                            .flat_map(|y| (sx..sx + sub_w).map(move |x| (x, y, bright))),
                    );
                }
                m
            };
            Some((rect, mask))
        }
        Primitive::EdgeNotch => {
            let (_, h) = dims(area, 1.5, None);
            let h = h.min(tw - 2).max(1);
            let w = (libm::round(area / h as f64) as i64).max(2);
            let top = r.random_bool(0.5);
            let edge = if top { trace } else { trace + tw };
            let y0 = if top { edge } else { edge - h };
            let x0 = x_for(w, r);
            let cx = x0 as f64 + w as f64 / 2.0;
            let mut m = Vec::new();
            for y in y0..y0 + h {
                for x in x0..x0 + w {
                    let dx = (x as f64 + 0.5 - cx) / (w as f64 / 2.0);
                    let dy = (y as f64 + 0.5 - edge as f64) / h as f64;
                    if dx * dx + dy * dy <= 1.0 {
                        m.push((x, y, dark));
                    }
                }
            }
            Some((Rect { x0, y0, w, h }, m))
        }
        Primitive::TraceGap => {
            let (w, h) = dims(area, 1.0, Some(tw));
            let rect = Rect { x0: x_for(w, r), y0: trace, w, h };
            Some((rect, rect_mask(rect, dark)))
        }
        Primitive::TraceBridge => {
            if trace + tw + gap + tw > side {
                return None;
            }
            let (w, h) = dims(area, 1.0, Some(gap));
            let rect = Rect { x0: x_for(w, r), y0: trace + tw, w, h };
            Some((rect, rect_mask(rect, bright)))
        }
        Primitive::Spur => {
            let h0 = libm::sqrt(area / 1.4);
            let h = (libm::round(h0) as i64).clamp(2, gap - 2);
            // the taper fills about 3/4 of its box
            let w = (libm::round(area / h as f64) as i64).max(h);
            let up = r.random_bool(0.5);
            let x0 = x_for(w, r);
            let cx = x0 as f64 + w as f64 / 2.0;
            let y0 = if up { trace - h } else { trace + tw };
            let mut m = Vec::new();
            for d in 1..=h {
                let y = if up { trace - d } else { trace + tw - 1 + d };
                let half = w as f64 / 2.0 * (1.0 - (d - 1) as f64 / (h as f64 + 1.0));
                for x in x0..x0 + w {
                    if (x as f64 + 0.5 - cx).abs() <= half.max(0.5) {
                        m.push((x, y, bright));
                    }
                }
            }
            Some((Rect { x0, y0, w, h }, m))
        }
    }
}

fn rect_mask(rect: Rect, value: f64) -> Mask {
    (rect.y0..rect.y0 + rect.h)
        .flat_map(|y| (rect.x0..rect.x0 + rect.w).map(move |x| (x, y, value)))
        .collect()
}

/// Tight integer extent of a mask.
fn extent(m: &Mask) -> Option<Rect> {
    let x0 = m.iter().map(|p| p.0).min()?;
    let x1 = m.iter().map(|p| p.0).max()?;
    let y0 = m.iter().map(|p| p.1).min()?;
    let y1 = m.iter().map(|p| p.1).max()?;
    Some(Rect {
        x0,
        y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

/// Renders one image; defects that cannot be placed are reported in `log`.
pub fn render_image(cfg: &SynthConfig, split: Split, index: usize, log: &mut Vec<String>) -> SynthImage {
    let mut r = image_rng(cfg, split, index);
    let mut canvas = render_background(cfg, &mut r);
    let side = cfg.image_size;
    let name = format!("{}_{index:05}", split.name());
    let count = r.random_range(cfg.min_defects..=cfg.max_defects);
    let mut placed: Vec<Rect> = Vec::new();
    let mut annotations = Vec::new();
    for d in 0..count {
        let class_id = r.random_range(0..cfg.classes.len());
        let spec = &cfg.classes[class_id];
        let jitter = if cfg.area_jitter > 0.0 {
            r.random_range(1.0 - cfg.area_jitter..1.0 + cfg.area_jitter)
        } else {
            1.0
        };
        let area = spec.area_fraction * jitter * (side * side) as f64;
        let mut done = false;
        for _ in 0..cfg.max_retries.max(1) {
            let Some((_, mask)) = propose(cfg, spec.primitive, area, &mut r) else {
                continue;
            };
            let Some(ext) = extent(&mask) else { continue };
            if !ext.inside(side) || placed.iter().any(|p| p.overlaps(&ext, 2)) {
                continue;
            }
            for &(x, y, v) in &mask {
                canvas.set(x as usize, y as usize, v);
            }
            placed.push(ext);
            annotations.push(Annotation {
                class_id,
                bbox: BBox::from_corners(
                    ext.x0 as f64,
                    ext.y0 as f64,
                    (ext.x0 + ext.w) as f64,
                    (ext.y0 + ext.h) as f64,
                ),
            });
            done = true;
            break;
        }
        if !done {
            log.push(format!(
                "{name}: skipped defect {d} ({}) after {} placement attempts",
                spec.name, cfg.max_retries
            ));
        }
    }
    let pixels = canvas
        .px
        .iter()
        .map(|&v| {
            let n = r.random_range(-NOISE..=NOISE);
            libm::round(v + n).clamp(0.0, 255.0) as u8
        })
        .collect();
    SynthImage {
        name,
        split,
        index,
        side,
        pixels,
        annotations,
    }
}

/// One normalized annotation as stored on disk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedBox {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub class_id: usize,
    pub name: String,
    pub count: usize,
    /// Share of all annotations.
    pub proportion: f64,
    pub mean_area_px: f64,
    pub mean_area_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStats {
    pub classes: Vec<ClassStats>,
    pub total: usize,
    pub area_fractions: Vec<f64>,
}

/// Per-class counts, shares and mean areas; `side` converts normalized areas
/// to pixels². Classes without annotations are reported with zero counts.
pub fn dataset_stats(boxes: &[NormalizedBox], class_names: &[String], side: usize) -> Result<DatasetStats> {
    let k = class_names.len();
    let mut count = vec![0usize; k];
    let mut area = vec![0.0f64; k];
    let mut fractions = Vec::with_capacity(boxes.len());
    for b in boxes {
        if b.class_id >= k {
            return Err(Error::UnknownClass {
                class_id: b.class_id,
                num_classes: k,
            });
        }
        let f = b.w * b.h;
        count[b.class_id] += 1;
        area[b.class_id] += f;
        fractions.push(f);
    }
    let total = boxes.len();
    let px = (side * side) as f64;
    let classes = (0..k)
        .map(|c| {
            let mean = if count[c] > 0 { area[c] / count[c] as f64 } else { 0.0 };
            ClassStats {
                class_id: c,
                name: class_names[c].clone(),
                count: count[c],
                proportion: if total > 0 { count[c] as f64 / total as f64 } else { 0.0 },
                mean_area_px: mean * px,
                mean_area_fraction: mean,
            }
        })
        .collect();
    Ok(DatasetStats {
        classes,
        total,
        area_fractions: fractions,
    })
}

/// Counts of `values` in the half-open bins `[edges[i], edges[i + 1])`.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<usize> {
    let mut out = vec![0; edges.len().saturating_sub(1)];
    for &v in values {
        if let Some(i) = edges.windows(2).position(|e| v >= e[0] && v < e[1]) {
            out[i] += 1;
        }
    }
    out
}

/// Share of `values` inside `[lo, hi]`.
pub fn band_share(values: &[f64], lo: f64, hi: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v >= lo && v <= hi).count() as f64 / values.len() as f64
}

/// Default histogram edges: 0.02 % steps from 0 to 0.3 %.
pub fn default_histogram_edges() -> Vec<f64> {
    (0..=15).map(|i| i as f64 * 0.0002).collect()
}

pub fn normalized_boxes<'a>(images: impl IntoIterator<Item = &'a SynthImage>) -> Vec<NormalizedBox> {
    images
        .into_iter()
        .flat_map(|im| {
            im.annotations.iter().map(move |a| {
                let [cx, cy, w, h] = a.normalized(im.side);
                NormalizedBox { class_id: a.class_id, cx, cy, w, h }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            train_images: n,
            val_images: 2,
            test_images: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&small(5)).unwrap();
        let b = generate_dataset(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train[0].pixels, a.val[0].pixels);
    }

    #[test]
    fn image_does_not_depend_on_split_size() {
        let a = generate_dataset(&small(3)).unwrap();
        let b = generate_dataset(&small(7)).unwrap();
        assert_eq!(a.train[..3], b.train[..3]);
        assert_eq!(a.val, b.val);
    }

    #[test]
    fn boxes_inside_and_tight() {
        let cfg = small(30);
        let d = generate_dataset(&cfg).unwrap();
        let side = cfg.image_size as f64;
        for im in d.all() {
            assert!((cfg.min_defects..=cfg.max_defects).contains(&(im.annotations.len() + d.log.iter().filter(|l| l.starts_with(&im.name)).count())));
            for a in &im.annotations {
                let (x0, y0, x1, y1) = a.bbox.corners();
                assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= side && y1 <= side, "{a:?}");
                let [cx, cy, w, h] = a.normalized(cfg.image_size);
                for v in [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0] {
                    assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }

    #[test]
    fn bbox_tightly_contains_rendered_pixels() {
        // render each primitive onto a blank canvas and compare extents
        let cfg = SynthConfig::default();
        let mut r = rng::labeled(1, "tight");
        for c in &cfg.classes {
            for _ in 0..20 {
                let (_, mask) = propose(&cfg, c.primitive, c.area_fraction * 65536.0, &mut r).unwrap();
                let e = extent(&mask).unwrap();
                for side in 0..4 {
                    let touches = mask.iter().any(|&(x, y, _)| match side {
                        0 => x == e.x0,
                        1 => x == e.x0 + e.w - 1,
                        2 => y == e.y0,
                        _ => y == e.y0 + e.h - 1,
                    });
                    assert!(touches);
                }
            }
        }
    }

    #[test]
    fn single_class_fraction_converges() {
        let cfg = SynthConfig {
            train_images: 500,
            val_images: 0,
            test_images: 0,
            ..SynthConfig::default().single_class(0)
        };
        let d = generate_dataset(&cfg).unwrap();
        let names: Vec<String> = cfg.classes.iter().map(|c| c.name.clone()).collect();
        let s = dataset_stats(&normalized_boxes(d.all()), &names, 256).unwrap();
        let f = s.classes[0].mean_area_fraction;
        assert!((f / 0.0008 - 1.0).abs() <= 0.2, "{f}");
    }

    #[test]
    fn stats_of_hand_fixture() {
        let names: Vec<String> = ["a", "b"].iter().map(|s| (*s).into()).collect();
        let b = |class_id, w, h| NormalizedBox { class_id, cx: 0.5, cy: 0.5, w, h };
        let s = dataset_stats(&[b(0, 0.1, 0.1), b(0, 0.2, 0.1), b(1, 0.05, 0.2)], &names, 100).unwrap();
        assert_eq!(s.classes[0].count, 2);
        assert!((s.classes[0].mean_area_px - 150.0).abs() < 1e-9);
        assert!((s.classes[1].mean_area_px - 100.0).abs() < 1e-9);
        assert!((s.classes[0].proportion - 2.0 / 3.0).abs() < 1e-12);
        let total: f64 = s.classes.iter().map(|c| c.proportion).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_stats() {
        let s = dataset_stats(&[], &["a".into()], 256).unwrap();
        assert_eq!(s.total, 0);
        assert_eq!(s.classes[0].count, 0);
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(histogram(&[0.1, 0.5, 0.55, 2.0], &[0.0, 0.5, 1.0]), vec![1, 2]);
        assert_eq!(band_share(&[1.0, 2.0, 3.0, 4.0], 2.0, 3.0), 0.5);
    }
}
