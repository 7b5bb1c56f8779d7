//! On-disk dataset layout:
//!
//! ```text
//! DIR/images/<name>.pgm   binary PGM (P5, maxval 255)
//! DIR/labels/<name>.txt   one `class_id cx cy w h` line per defect, normalized
//! DIR/train.txt …         manifest, one image path (relative to DIR) per line
//! DIR/classes.txt         class names, one per line
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sme_core::detector::{Sample, Target};
use sme_core::geometry::BBox;
use sme_core::synth::{NormalizedBox, Split, SynthDataset, SynthImage};

use crate::error::{at, Error, Result};

pub const CLASSES_FILE: &str = "classes.txt";

/// Grayscale image with 8-bit pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_pgm(img: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses binary PGM with maxval 255; `#` comments are allowed in the header.
pub fn decode_pgm(bytes: &[u8]) -> Result<Gray> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Format("non-ASCII PGM header".into()))?);
    }
    if fields[0] != "P5" {
        return Err(Error::Format(format!("not a binary PGM (magic {:?})", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM number {s:?}")));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("PGM maxval {maxval} unsupported")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height;
    if bytes.len() < pos + n {
        return Err(Error::Format(format!("PGM raster has {} of {n} bytes", bytes.len().saturating_sub(pos))));
    }
    Ok(Gray {
        width,
        height,
        pixels: bytes[pos..pos + n].to_vec(),
    })
}

pub fn format_annotations(boxes: &[NormalizedBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        writeln!(s, "{} {:.6} {:.6} {:.6} {:.6}", b.class_id, b.cx, b.cy, b.w, b.h).unwrap();
    }
    s
}

/// Parses annotation text; errors name `path` and the 1-based line.
pub fn parse_annotations(text: &str, path: &Path, num_classes: usize) -> Result<Vec<NormalizedBox>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        let class_id: usize = f[0].parse().map_err(|_| err(format!("bad class id {:?}", f[0])))?;
        if class_id >= num_classes {
            return Err(err(format!("class id {class_id} outside 0..{num_classes}")));
        }
        let mut v = [0.0; 4];
        for (dst, s) in v.iter_mut().zip(&f[1..]) {
            *dst = s.parse().map_err(|_| err(format!("bad number {s:?}")))?;
            if !(0.0..=1.0).contains(dst) {
                return Err(err(format!("coordinate {s} outside [0, 1]")));
            }
        }
        if v[2] <= 0.0 || v[3] <= 0.0 {
            return Err(err("box has zero size".into()));
        }
        out.push(NormalizedBox {
            class_id,
            cx: v[0],
            cy: v[1],
            w: v[2],
            h: v[3],
        });
    }
    Ok(out)
}

fn manifest_name(split: Split) -> String {
    format!("{}.txt", split.name())
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, bytes).map_err(at(path))
}

/// Writes every image, label file, manifest and the class list.
pub fn write_dataset(dir: &Path, ds: &SynthDataset, class_names: &[String]) -> Result<()> {
    for sub in ["images", "labels"] {
        fs::create_dir_all(dir.join(sub)).map_err(at(dir.join(sub)))?;
    }
    write(dir.join(CLASSES_FILE), class_names.iter().map(|c| format!("{c}\n")).collect::<String>())?;
    for split in Split::ALL {
        let mut manifest = String::new();
        for img in ds.split(split) {
            let rel = format!("images/{}.pgm", img.name);
            write(
                dir.join(&rel),
                encode_pgm(&Gray {
                    width: img.side,
                    height: img.side,
                    pixels: img.pixels.clone(),
                }),
            )?;
            let boxes: Vec<NormalizedBox> = sme_core::synth::normalized_boxes([img]);
            write(dir.join(format!("labels/{}.txt", img.name)), format_annotations(&boxes))?;
            manifest.push_str(&rel);
            manifest.push('\n');
        }
        write(dir.join(manifest_name(split)), manifest)?;
    }
    Ok(())
}

/// One image read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedImage {
    pub name: String,
    pub image: Gray,
    pub boxes: Vec<NormalizedBox>,
}

impl LoadedImage {
    /// Pixel-space training sample with identifier `id`.
    pub fn to_sample(&self, id: u64) -> Sample {
        let side = self.image.width as f64;
        Sample {
            image_id: id,
            pixels: self.image.pixels.clone(),
            targets: self
                .boxes
                .iter()
                .map(|b| Target {
                    class_id: b.class_id,
                    bbox: BBox::new(b.cx * side, b.cy * self.image.height as f64, b.w * side, b.h * self.image.height as f64),
                })
                .collect(),
        }
    }
}

pub fn read_class_names(dir: &Path) -> Result<Vec<String>> {
    let path = dir.join(CLASSES_FILE);
    let text = fs::read_to_string(&path).map_err(at(&path))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.trim().to_string()).collect())
}

/// Manifest entries of `split`, in file order.
pub fn read_manifest(dir: &Path, split: Split) -> Result<Vec<String>> {
    let path = dir.join(manifest_name(split));
    let text = fs::read_to_string(&path).map_err(at(&path))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(|l| l.trim().to_string()).collect())
}

fn label_path(dir: &Path, image_rel: &str) -> PathBuf {
    let stem = Path::new(image_rel).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dir.join("labels").join(format!("{stem}.txt"))
}

/// Annotations of every image in `split` without decoding the rasters.
pub fn read_split_annotations(dir: &Path, split: Split, num_classes: usize) -> Result<Vec<NormalizedBox>> {
    let mut out = Vec::new();
    for rel in read_manifest(dir, split)? {
        let path = label_path(dir, &rel);
        let text = fs::read_to_string(&path).map_err(at(&path))?;
        out.extend(parse_annotations(&text, &path, num_classes)?);
    }
    Ok(out)
}

pub fn read_split(dir: &Path, split: Split, num_classes: usize) -> Result<Vec<LoadedImage>> {
    let mut out = Vec::new();
    for rel in read_manifest(dir, split)? {
        let path = dir.join(&rel);
        let bytes = fs::read(&path).map_err(at(&path))?;
        let image = decode_pgm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let lpath = label_path(dir, &rel);
        let text = fs::read_to_string(&lpath).map_err(at(&lpath))?;
        out.push(LoadedImage {
            name: Path::new(&rel).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            image,
            boxes: parse_annotations(&text, &lpath, num_classes)?,
        });
    }
    Ok(out)
}

/// Samples of `split`; identifiers match [`SynthImage::image_id`] for the
/// generated layout (split rank in the high 32 bits, manifest position below).
pub fn load_samples(dir: &Path, split: Split, num_classes: usize) -> Result<Vec<Sample>> {
    let rank = Split::ALL.iter().position(|&s| s == split).unwrap_or(0) as u64;
    Ok(read_split(dir, split, num_classes)?
        .iter()
        .enumerate()
        .map(|(i, img)| img.to_sample((rank << 32) | i as u64))
        .collect())
}

/// Samples straight from an in-memory dataset.
pub fn samples(images: &[SynthImage]) -> Vec<Sample> {
    images.iter().map(SynthImage::to_sample).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use sme_core::synth::{generate_dataset, SynthConfig};

    #[test]
    fn pgm_round_trip_and_comments() {
        let g = Gray {
            width: 3,
            height: 2,
            pixels: vec![0, 10, 255, 32, 9, 13],
        };
        let bytes = encode_pgm(&g);
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), g);
        let mut commented = b"P5 # made by hand\n3 2\n# note\n255\n".to_vec();
        commented.extend_from_slice(&g.pixels);
        assert_eq!(decode_pgm(&commented).unwrap(), g);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn annotation_lines_are_fixed_point() {
        let b = NormalizedBox {
            class_id: 2,
            cx: 0.5,
            cy: 0.25,
            w: 1.0 / 64.0,
            h: 0.03,
        };
        let text = format_annotations(&[b]);
        assert_eq!(text, "2 0.500000 0.250000 0.015625 0.030000\n");
        let back = parse_annotations(&text, Path::new("x.txt"), 6).unwrap();
        assert_eq!(back, vec![b]);
    }

    #[test]
    fn malformed_annotations_name_file_and_line() {
        let p = Path::new("labels/a.txt");
        for bad in ["0 0.5 0.5 0.1\n", "0 0.5 0.5 0.1 x\n", "9 0.5 0.5 0.1 0.1\n", "0 1.5 0.5 0.1 0.1\n"] {
            let text = format!("1 0.5 0.5 0.1 0.1\n{bad}");
            match parse_annotations(&text, p, 6) {
                Err(Error::Parse { path, line, .. }) => {
                    assert_eq!(path, p);
                    assert_eq!(line, 2);
                }
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn dataset_round_trip() {
        let cfg = SynthConfig {
            image_size: 64,
            train_images: 3,
            val_images: 1,
            test_images: 1,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let names: Vec<String> = cfg.classes.iter().map(|c| c.name.clone()).collect();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds, &names).unwrap();
        assert_eq!(read_class_names(dir.path()).unwrap(), names);
        let loaded = load_samples(dir.path(), Split::Train, 6).unwrap();
        let direct = samples(&ds.train);
        assert_eq!(loaded.len(), 3);
        for (a, b) in loaded.iter().zip(&direct) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.pixels, b.pixels);
            assert_eq!(a.targets.len(), b.targets.len());
            for (ta, tb) in a.targets.iter().zip(&b.targets) {
                assert_eq!(ta.class_id, tb.class_id);
                // 6-decimal normalized coordinates at side 64
                for (u, v) in ta.bbox.to_array().iter().zip(tb.bbox.to_array()) {
                    assert!((u - v).abs() < 1e-4);
                }
            }
        }
        assert_eq!(read_manifest(dir.path(), Split::Val).unwrap(), vec!["images/val_00000.pgm"]);
    }
}
