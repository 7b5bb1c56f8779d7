//! Subcommand implementations. Each writes its outputs, the effective
//! configuration and a `summary.csv` of `key,value` rows under the output
//! directory; progress goes to stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sme_core::detector::{
    describe, detector_macs, evaluate, predict, train, DeepStage, Detector, DetectorConfig, NeckUpsample, Sample,
};
use sme_core::eucb::eucb_forward;
use sme_core::flops::msfa_flops;
use sme_core::geometry::sensitivity_sweep;
use sme_core::gradcheck::suite::{run_suite, BlockResult};
use sme_core::metrics::{map_report, EvalReport};
use sme_core::msfa::{branch_divergence, DEFAULT_BRANCH_KERNELS};
use sme_core::params::Parameters;
use sme_core::rng;
use sme_core::synth::{
    band_share, dataset_stats, default_histogram_edges, generate_dataset, histogram, normalized_boxes, NormalizedBox,
    Split, SynthDataset,
};
use sme_core::tensor::{upsample2x, BnMode, FeatureMap, Shape4, UpsampleMode};

use crate::checkpoint::Checkpoint;
use crate::config::{BlockName, BoxLossName, RunConfig, UpsamplerName};
use crate::dataset::{load_samples, read_class_names, read_split_annotations, samples, write_dataset};
use crate::error::{at, Error, Result};
use crate::report::{
    eval_table, f, gradcheck_table, histogram_table, metrics_table, predictions_table, sensitivity_table, stats_table,
    Table, ABLATION_HEADER,
};
use crate::svg::{emit_svg_plot, Panel, Reference, Series};

pub const SUMMARY_FILE: &str = "summary.csv";

/// Output directory plus the shared options of every subcommand.
pub struct Context {
    pub out: PathBuf,
    pub config: RunConfig,
    pub plot: bool,
}

impl Context {
    pub fn prepare(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(at(&self.out))?;
        self.config.echo(&self.out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn summary(&self, pairs: &[(String, String)]) -> Result<()> {
        Table::key_values(pairs).write(&self.path(SUMMARY_FILE))
    }
}

fn class_names(cfg: &RunConfig) -> Vec<String> {
    cfg.data.classes.clone()
}

/// `gen-data`: renders the dataset to disk. With `class`, only that class is
/// drawn (as class 0).
pub fn gen_data(ctx: &Context, class: Option<&str>) -> Result<SynthDataset> {
    let mut cfg = ctx.config.clone();
    if let Some(name) = class {
        let i = cfg
            .data
            .classes
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("class {name:?} is not configured")))?;
        cfg.data.classes = vec![cfg.data.classes[i].clone()];
        cfg.data.area_fractions = vec![cfg.data.area_fractions[i]];
    }
    let ctx = Context {
        out: ctx.out.clone(),
        config: cfg,
        plot: ctx.plot,
    };
    ctx.prepare()?;
    let ds = generate_dataset(&ctx.config.synth_config())?;
    write_dataset(&ctx.out, &ds, &class_names(&ctx.config))?;
    let log = ds.log.iter().map(|l| format!("{l}\n")).collect::<String>();
    std::fs::write(ctx.path("skipped.txt"), log).map_err(at(ctx.path("skipped.txt")))?;
    let mut pairs = Vec::new();
    for split in Split::ALL {
        let imgs = ds.split(split);
        pairs.push((split.name().into(), imgs.len().to_string()));
    }
    let defects: usize = ds.all().map(|i| i.annotations.len()).sum();
    pairs.push(("defects".into(), defects.to_string()));
    pairs.push(("skipped_defects".into(), ds.log.len().to_string()));
    let stats = dataset_stats(&normalized_boxes(ds.all()), &class_names(&ctx.config), ctx.config.data.image_size)?;
    for c in &stats.classes {
        pairs.push((format!("mean_area_fraction.{}", c.name), f(c.mean_area_fraction)));
    }
    ctx.summary(&pairs)?;
    eprintln!("wrote {} images with {defects} defects to {}", ds.all().count(), ctx.out.display());
    Ok(ds)
}

/// Which splits to pool for `stats`.
pub fn split_list(name: &str) -> Result<Vec<Split>> {
    match name {
        "all" => Ok(Split::ALL.to_vec()),
        _ => Split::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .map(|s| vec![s])
            .ok_or_else(|| Error::Config(format!("unknown split {name:?} (train, val, test or all)"))),
    }
}

/// `stats`: per-class count, proportion, mean area and mean area fraction,
/// plus the area-fraction histogram.
pub fn stats(ctx: &Context, data: Option<&Path>, splits: &[Split]) -> Result<()> {
    ctx.prepare()?;
    let (boxes, names, side): (Vec<NormalizedBox>, Vec<String>, usize) = match data {
        Some(dir) => {
            let names = read_class_names(dir)?;
            let mut boxes = Vec::new();
            for &s in splits {
                boxes.extend(read_split_annotations(dir, s, names.len())?);
            }
            (boxes, names, image_side(dir, splits)?.unwrap_or(ctx.config.data.image_size))
        }
        None => {
            let ds = generate_dataset(&ctx.config.synth_config())?;
            let imgs = splits.iter().flat_map(|&s| ds.split(s).iter());
            (normalized_boxes(imgs), class_names(&ctx.config), ctx.config.data.image_size)
        }
    };
    let st = dataset_stats(&boxes, &names, side)?;
    stats_table(&st).write(&ctx.path("stats.csv"))?;
    let edges = default_histogram_edges();
    histogram_table(&edges, &histogram(&st.area_fractions, &edges)).write(&ctx.path("histogram.csv"))?;
    let band = band_share(&st.area_fractions, 0.0004, 0.0014);
    ctx.summary(&[
        ("annotations".into(), st.total.to_string()),
        ("classes".into(), st.classes.len().to_string()),
        ("image_side".into(), side.to_string()),
        ("share_0.04_to_0.14_percent".into(), f(band)),
    ])?;
    eprintln!("{} annotations; {:.1}% within 0.04%-0.14% of the image area", st.total, 100.0 * band);
    Ok(())
}

/// Side of the first image listed for `splits`, read from its PGM header.
fn image_side(dir: &Path, splits: &[Split]) -> Result<Option<usize>> {
    for &s in splits {
        if let Some(rel) = crate::dataset::read_manifest(dir, s)?.first() {
            let path = dir.join(rel);
            let bytes = std::fs::read(&path).map_err(at(&path))?;
            return Ok(Some(crate::dataset::decode_pgm(&bytes)?.width));
        }
    }
    Ok(None)
}

/// `gradcheck`: the finite-difference suite; fails when any block does.
pub fn gradcheck(ctx: &Context, instances: Option<usize>) -> Result<Vec<BlockResult>> {
    ctx.prepare()?;
    let n = instances.unwrap_or(ctx.config.gradcheck.instances);
    let t = Instant::now();
    let results = run_suite(n, &ctx.config.gradcheck_config())?;
    gradcheck_table(&results).write(&ctx.path(SUMMARY_FILE))?;
    for r in &results {
        eprintln!(
            "{:<28} max rel {:.2e} (tol {:.0e}) probes {:>6} skipped {:>3}  {}",
            r.name,
            r.report.max_rel_err,
            r.tolerance,
            r.report.probes,
            r.report.skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    eprintln!("{} blocks × {n} instances in {:.1}s", results.len(), t.elapsed().as_secs_f64());
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::Config(format!("gradient check failed for {failed:?}")));
    }
    Ok(results)
}

/// `sensitivity`: IoU and NWD of a square against a shifted copy.
pub fn sensitivity(ctx: &Context) -> Result<()> {
    ctx.prepare()?;
    let s = &ctx.config.sensitivity;
    if s.sizes.is_empty() || s.sizes.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Config("sizes must be positive".into()));
    }
    let offsets: Vec<f64> = (0..=s.max_offset).map(f64::from).collect();
    let c = ctx.config.nwd_config().c_norm;
    let rows = sensitivity_sweep(&s.sizes, &offsets, c);
    sensitivity_table(&rows).write(&ctx.path("sensitivity.csv"))?;
    let mut pairs = vec![("c_norm".into(), f(c))];
    for &size in &s.sizes {
        let at3 = rows.iter().find(|r| r.size_px == size && r.offset_px == 3.0);
        if let Some(r) = at3 {
            pairs.push((format!("iou_at_3px.size_{size}"), f(r.iou)));
        }
    }
    ctx.summary(&pairs)?;
    if ctx.plot {
        let curve = |size: f64, pick: fn(&sme_core::geometry::SensitivityRow) -> f64| Series {
            label: format!("side {size} px"),
            points: rows.iter().filter(|r| r.size_px == size).map(|r| (r.offset_px, pick(r))).collect(),
        };
        let iou = Panel {
            title: "IoU vs offset".into(),
            x_label: "offset (px)".into(),
            y_label: "IoU".into(),
            series: s.sizes.iter().map(|&z| curve(z, |r| r.iou)).collect(),
            references: [0.81, 0.66, 0.39, 0.14]
                .iter()
                .map(|&y| Reference {
                    label: format!("reference {y}"),
                    y,
                })
                .collect(),
        };
        let nwd = Panel {
            title: "NWD vs offset".into(),
            x_label: "offset (px)".into(),
            y_label: "NWD (exp form)".into(),
            series: s.sizes.iter().map(|&z| curve(z, |r| r.nwd_canonical)).collect(),
            references: vec![],
        };
        emit_svg_plot(&[iou, nwd], &ctx.path("sensitivity.svg"))?;
    }
    Ok(())
}

/// Train/val/test samples: from `data` when given, otherwise generated from
/// the configuration.
pub fn load_splits(cfg: &RunConfig, data: Option<&Path>) -> Result<[Vec<Sample>; 3]> {
    match data {
        Some(dir) => {
            let k = read_class_names(dir)?.len();
            if k != cfg.data.classes.len() {
                return Err(Error::Config(format!(
                    "dataset has {k} classes, configuration {}",
                    cfg.data.classes.len()
                )));
            }
            Ok([
                load_samples(dir, Split::Train, k)?,
                load_samples(dir, Split::Val, k)?,
                load_samples(dir, Split::Test, k)?,
            ])
        }
        None => {
            let ds = generate_dataset(&cfg.synth_config())?;
            Ok([samples(&ds.train), samples(&ds.val), samples(&ds.test)])
        }
    }
}

pub struct TrainResult {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub stopped_early: bool,
    pub best_epoch: usize,
}

fn train_detector(cfg: &RunConfig, train_set: &[Sample], val_set: &[Sample], tag: &str) -> Result<TrainResult> {
    let dc = cfg.detector_config();
    let t = Instant::now();
    let out = train::<f32>(&dc, train_set, val_set, |m| {
        eprintln!("[{tag}] {}  ({:.0}s)", describe(m), t.elapsed().as_secs_f64())
    })?;
    let ck = |model: Detector<f32>| Checkpoint {
        config: cfg.clone(),
        model,
        optimizer: Some(out.optimizer.clone()),
        history: out.history.clone(),
    };
    Ok(TrainResult {
        best: Checkpoint {
            optimizer: None,
            ..ck(out.best)
        },
        last: ck(out.last),
        stopped_early: out.stopped_early,
        best_epoch: out.best_epoch,
    })
}

/// `train`: writes `metrics.csv`, `best.smec` and `last.smec`.
pub fn train_cmd(ctx: &Context, data: Option<&Path>) -> Result<TrainResult> {
    ctx.prepare()?;
    let [tr, va, _] = load_splits(&ctx.config, data)?;
    let r = train_detector(&ctx.config, &tr, &va, "train")?;
    let hist = &r.last.history;
    metrics_table(hist).write(&ctx.path("metrics.csv"))?;
    r.best.save(&ctx.path("best.smec"))?;
    r.last.save(&ctx.path("last.smec"))?;
    let first = hist.first().map_or(0.0, |m| m.train_loss);
    let last = hist.last().map_or(0.0, |m| m.train_loss);
    let dc = ctx.config.detector_config();
    ctx.summary(&[
        ("epochs_run".into(), hist.len().to_string()),
        ("best_epoch".into(), r.best_epoch.to_string()),
        ("stopped_early".into(), r.stopped_early.to_string()),
        ("first_train_loss".into(), f(first)),
        ("final_train_loss".into(), f(last)),
        ("loss_reduction".into(), f(if first > 0.0 { 1.0 - last / first } else { 0.0 })),
        ("best_val_mAP50".into(), f(hist.iter().map(|m| m.val_map50).fold(0.0, f64::max))),
        ("parameters".into(), r.last.model.num_params().to_string()),
        ("macs".into(), detector_macs(&dc).to_string()),
        ("box_loss".into(), dc.box_loss.label().to_string()),
    ])?;
    if ctx.plot {
        let series = |label: &str, pick: fn(&sme_core::detector::EpochMetrics) -> f64| Series {
            label: label.into(),
            points: hist.iter().map(|m| (m.epoch as f64, pick(m))).collect(),
        };
        emit_svg_plot(
            &[
                Panel {
                    title: "training loss".into(),
                    x_label: "epoch".into(),
                    y_label: "loss".into(),
                    series: vec![
                        series("total", |m| m.train_loss),
                        series("box", |m| m.box_loss),
                        series("objectness", |m| m.obj_loss),
                        series("class", |m| m.cls_loss),
                    ],
                    references: vec![],
                },
                Panel {
                    title: "validation".into(),
                    x_label: "epoch".into(),
                    y_label: "mAP@0.5".into(),
                    series: vec![series("val mAP@0.5", |m| m.val_map50)],
                    references: vec![],
                },
            ],
            &ctx.path("metrics.svg"),
        )?;
    }
    Ok(r)
}

/// `eval`: scores a checkpoint on one split. The model and evaluation
/// settings come from the checkpoint; without `data` the dataset is
/// regenerated from the checkpoint's configuration.
pub fn eval_cmd(ctx: &Context, checkpoint: &Path, split: Split, data: Option<&Path>) -> Result<EvalReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let ctx = Context {
        out: ctx.out.clone(),
        config: ck.config.clone(),
        plot: ctx.plot,
    };
    ctx.prepare()?;
    let splits = load_splits(&ck.config, data)?;
    let set = &splits[Split::ALL.iter().position(|&s| s == split).unwrap_or(2)];
    let dc = ck.config.detector_config();
    let preds = predict(&ck.model, set, &dc)?;
    let gts = sme_core::detector::ground_truths(set);
    let report = map_report(&preds, &gts, dc.num_classes, dc.eval.score_threshold)?;
    predictions_table(&preds).write(&ctx.path("predictions.csv"))?;
    eval_table(&report, &class_names(&ck.config)).write(&ctx.path("report.csv"))?;
    ctx.summary(&[
        ("split".into(), split.name().to_string()),
        ("images".into(), set.len().to_string()),
        ("predictions".into(), preds.len().to_string()),
        ("precision".into(), f(report.precision)),
        ("recall".into(), f(report.recall)),
        ("mAP50".into(), f(report.map50)),
        ("mAP50_95".into(), f(report.map50_95)),
    ])?;
    eprintln!(
        "{}: mAP@0.5 {:.4}  mAP@0.5:0.95 {:.4}  P {:.4}  R {:.4}",
        split.name(),
        report.map50,
        report.map50_95,
        report.precision,
        report.recall
    );
    Ok(report)
}

/// The four ablation rows: each adds one mechanism to the previous.
pub fn ablation_variants(base: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let mut rows = Vec::new();
    let mut c = base.clone();
    c.loss.box_loss = BoxLossName::Iou;
    c.model.upsampler = UpsamplerName::Plain;
    c.model.deep_block = BlockName::PlainConv;
    rows.push(("baseline", c.clone()));
    c.loss.box_loss = BoxLossName::Nwd;
    rows.push(("+nwd", c.clone()));
    c.model.upsampler = UpsamplerName::Eucb;
    rows.push(("+nwd+eucb", c.clone()));
    c.model.deep_block = BlockName::Msfa;
    rows.push(("+nwd+eucb+msfa", c));
    rows
}

/// Mean absolute step across the edge column over the mean absolute step
/// across all columns: 1 means no concentration at the edge.
pub fn edge_concentration(y: &FeatureMap<f32>, edge_col: usize) -> f64 {
    let s = y.shape();
    let (mut at_edge, mut all) = (0.0, 0.0);
    for n in 0..s.n {
        for c in 0..s.c {
            for r in 0..s.h {
                for x in 1..s.w {
                    let d = (y.at(n, c, r, x).as_f64() - y.at(n, c, r, x - 1).as_f64()).abs();
                    all += d;
                    if x == edge_col {
                        at_edge += d;
                    }
                }
            }
        }
    }
    let cols = (s.w - 1) as f64;
    if all == 0.0 { 0.0 } else { at_edge * cols / all }
}

use sme_core::Real as _;

/// Step-edge probe `(1, c, 8, 8)`: zero on the left half, one on the right.
pub fn step_edge(c: usize) -> FeatureMap<f32> {
    FeatureMap::from_fn(Shape4::new(1, c, 8, 8), |i| if i % 8 >= 4 { 1.0 } else { 0.0 })
}

/// Probe for branch divergence: fixed-seed uniform values in `[-1, 1]`.
pub fn divergence_probe(c: usize, side: usize) -> FeatureMap<f32> {
    let shape = Shape4::new(1, c, side, side);
    let mut r = rng::labeled(0, "divergence-probe");
    FeatureMap::from_vec(shape, rng::centered_uniform(&mut r, shape.len(), 1.0)).expect("shape matches")
}

/// `ablate`: trains the four rows with the shared seed, scores each best
/// checkpoint on the test split.
pub fn ablate(ctx: &Context, data: Option<&Path>) -> Result<Table> {
    ctx.prepare()?;
    let [tr, va, te] = load_splits(&ctx.config, data)?;
    let variants = ablation_variants(&ctx.config);
    let base_macs = detector_macs(&variants[0].1.detector_config());
    let mut table = Table::new(&ABLATION_HEADER);
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut curves = Vec::new();
    let mut reports = Vec::new();
    for (name, cfg) in &variants {
        let dc = cfg.detector_config();
        let r = train_detector(cfg, &tr, &va, name)?;
        let report = evaluate(&r.best.model, &te, &dc)?;
        let macs = detector_macs(&dc);
        let file = format!("metrics_{}.csv", name.trim_start_matches('+').replace('+', "_"));
        metrics_table(&r.last.history).write(&ctx.path(&file))?;
        table.push(vec![
            name.to_string(),
            dc.box_loss.label().to_string(),
            format!("{:?}", cfg.model.upsampler).to_lowercase(),
            format!("{:?}", cfg.model.deep_block).to_lowercase(),
            f(report.precision),
            f(report.recall),
            f(report.map50),
            f(report.map50_95),
            macs.to_string(),
            f(macs as f64 / base_macs as f64),
        ]);
        eprintln!("[{name}] test mAP@0.5 {:.4}  mAP@0.5:0.95 {:.4}  MACs {macs}", report.map50, report.map50_95);
        curves.push(Series {
            label: name.to_string(),
            points: r.last.history.iter().map(|m| (m.epoch as f64, m.val_map50)).collect(),
        });
        if let DeepStage::Msfa(trained) = &r.best.model.deep {
            let init = Detector::<f32>::build(&dc)?;
            if let DeepStage::Msfa(start) = &init.deep {
                let probe = divergence_probe(start.channels(), dc.input_size / 8);
                pairs.push(("msfa_branch_divergence_init".into(), f(branch_divergence(start, &probe)?)));
                pairs.push(("msfa_branch_divergence_trained".into(), f(branch_divergence(trained, &probe)?)));
            }
        }
        if let NeckUpsample::Eucb(e) = &r.best.model.neck {
            let mut e = e.clone();
            e.bn.mode = BnMode::Eval;
            let probe = step_edge(e.in_channels());
            let (y, _) = eucb_forward(&probe, &e)?;
            let plain = upsample2x(&probe, UpsampleMode::Bilinear)?;
            pairs.push((format!("eucb_edge_concentration.{name}"), f(edge_concentration(&y, 8))));
            pairs.push((format!("bilinear_edge_concentration.{name}"), f(edge_concentration(&plain, 8))));
        }
        reports.push(report);
    }
    table.write(&ctx.path("ablation.csv"))?;
    let (base, full) = (&reports[0], &reports[reports.len() - 1]);
    let full_macs = detector_macs(&variants[3].1.detector_config());
    let mut summary = vec![
        ("baseline_mAP50".into(), f(base.map50)),
        ("full_mAP50".into(), f(full.map50)),
        ("full_ge_baseline".into(), (full.map50 >= base.map50).to_string()),
        ("baseline_macs".into(), base_macs.to_string()),
        ("full_macs".into(), full_macs.to_string()),
        ("macs_ratio".into(), f(full_macs as f64 / base_macs as f64)),
    ];
    summary.extend(pairs);
    ctx.summary(&summary)?;
    if ctx.plot {
        emit_svg_plot(
            &[Panel {
                title: "validation mAP@0.5 per ablation row".into(),
                x_label: "epoch".into(),
                y_label: "mAP@0.5".into(),
                series: curves,
                references: vec![],
            }],
            &ctx.path("ablation.svg"),
        )?;
    }
    Ok(table)
}

/// `flops`: MAC counts of the attention block (default and with an added
/// 21-tap branch) and of the four detector variants.
pub fn flops(ctx: &Context) -> Result<Table> {
    ctx.prepare()?;
    let mut t = Table::new(&["item", "channels", "h", "w", "kernels", "macs"]);
    let with21: Vec<usize> = DEFAULT_BRANCH_KERNELS.iter().copied().chain([21]).collect();
    let mut all_smaller = true;
    for &(c, h, w) in &[(8, 16, 16), (32, 32, 32), (64, 80, 80), (128, 40, 40), (256, 20, 20)] {
        let a = msfa_flops(c, h, w, &DEFAULT_BRANCH_KERNELS);
        let b = msfa_flops(c, h, w, &with21);
        all_smaller &= a < b;
        for (label, k, m) in [("msfa_default", &DEFAULT_BRANCH_KERNELS[..], a), ("msfa_plus_21", &with21[..], b)] {
            t.push(vec![
                label.into(),
                c.to_string(),
                h.to_string(),
                w.to_string(),
                k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
                m.to_string(),
            ]);
        }
    }
    let side = ctx.config.data.image_size;
    let mut macs = Vec::new();
    for (name, cfg) in ablation_variants(&ctx.config) {
        let dc: DetectorConfig = cfg.detector_config();
        let m = detector_macs(&dc);
        macs.push(m);
        t.push(vec![
            format!("detector {name}"),
            "1".into(),
            side.to_string(),
            side.to_string(),
            dc.msfa_kernels.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            m.to_string(),
        ]);
    }
    t.write(&ctx.path("flops.csv"))?;
    ctx.summary(&[
        ("msfa_default_below_plus_21".into(), all_smaller.to_string()),
        ("baseline_macs".into(), macs[0].to_string()),
        ("full_macs".into(), macs[3].to_string()),
        ("macs_ratio".into(), f(macs[3] as f64 / macs[0] as f64)),
    ])?;
    Ok(t)
}
