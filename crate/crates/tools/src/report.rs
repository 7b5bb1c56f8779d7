//! CSV tables. Floats are written in shortest round-trip form, so a value
//! read back is bit-identical to the one written.

use std::path::Path;

use sme_core::detector::EpochMetrics;
use sme_core::geometry::{BBox, SensitivityRow};
use sme_core::gradcheck::suite::BlockResult;
use sme_core::metrics::{Detection, EvalReport};
use sme_core::synth::DatasetStats;

use crate::error::{at, Error, Result};

pub const METRICS_HEADER: [&str; 6] = ["epoch", "train_loss", "box_loss", "obj_loss", "cls_loss", "val_mAP50"];
pub const PREDICTIONS_HEADER: [&str; 7] = ["image_id", "class_id", "cx", "cy", "w", "h", "score"];
pub const SENSITIVITY_HEADER: [&str; 5] = ["size_px", "offset_px", "iou", "nwd_canonical", "nwd_linear_clamp"];
pub const STATS_HEADER: [&str; 6] = [
    "class_id",
    "class",
    "sample_count",
    "proportion",
    "mean_area_px",
    "mean_area_fraction",
];
pub const ABLATION_HEADER: [&str; 10] = [
    "variant",
    "box_loss",
    "upsampler",
    "deep_block",
    "precision",
    "recall",
    "mAP50",
    "mAP50_95",
    "macs",
    "macs_ratio",
];

/// A header plus string cells; rendered with the `csv` crate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(at(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(at(path))?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Cell of `row` under `name`.
    pub fn get(&self, row: usize, name: &str) -> Option<&str> {
        self.column(name).and_then(|c| self.rows.get(row).map(|r| r[c].as_str()))
    }

    /// Two-column `key,value` table.
    pub fn key_values(pairs: &[(String, String)]) -> Self {
        let mut t = Self::new(&["key", "value"]);
        for (k, v) in pairs {
            t.push(vec![k.clone(), v.clone()]);
        }
        t
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.rows.iter().find(|r| r[0] == key).map(|r| r[1].as_str())
    }
}

pub fn f(v: f64) -> String {
    format!("{v}")
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad {what} {s:?}")))
}

fn expect_header(t: &Table, header: &[&str]) -> Result<()> {
    if t.header != header {
        return Err(Error::Format(format!("expected columns {header:?}, found {:?}", t.header)));
    }
    Ok(())
}

pub fn metrics_table(history: &[EpochMetrics]) -> Table {
    let mut t = Table::new(&METRICS_HEADER);
    for m in history {
        t.push(vec![
            m.epoch.to_string(),
            f(m.train_loss),
            f(m.box_loss),
            f(m.obj_loss),
            f(m.cls_loss),
            f(m.val_map50),
        ]);
    }
    t
}

pub fn parse_metrics(t: &Table) -> Result<Vec<EpochMetrics>> {
    expect_header(t, &METRICS_HEADER)?;
    t.rows
        .iter()
        .map(|r| {
            Ok(EpochMetrics {
                epoch: num(&r[0], "epoch")?,
                train_loss: num(&r[1], "loss")?,
                box_loss: num(&r[2], "loss")?,
                obj_loss: num(&r[3], "loss")?,
                cls_loss: num(&r[4], "loss")?,
                val_map50: num(&r[5], "mAP")?,
            })
        })
        .collect()
}

pub fn predictions_table(preds: &[Detection]) -> Table {
    let mut t = Table::new(&PREDICTIONS_HEADER);
    for d in preds {
        t.push(vec![
            d.image_id.to_string(),
            d.class_id.to_string(),
            f(d.bbox.cx),
            f(d.bbox.cy),
            f(d.bbox.w),
            f(d.bbox.h),
            f(d.score),
        ]);
    }
    t
}

pub fn parse_predictions(t: &Table) -> Result<Vec<Detection>> {
    expect_header(t, &PREDICTIONS_HEADER)?;
    t.rows
        .iter()
        .map(|r| {
            Ok(Detection {
                image_id: num(&r[0], "image id")?,
                class_id: num(&r[1], "class id")?,
                bbox: BBox::new(num(&r[2], "cx")?, num(&r[3], "cy")?, num(&r[4], "w")?, num(&r[5], "h")?),
                score: num(&r[6], "score")?,
            })
        })
        .collect()
}

/// One row per class with ground truth, then a `mean` row (class means, as
/// used for mAP) and a `total` row (pooled counts).
pub fn eval_table(r: &EvalReport, class_names: &[String]) -> Table {
    let mut t = Table::new(&[
        "row", "class_id", "class", "gt_count", "pred_count", "tp", "fp", "fn", "precision", "recall", "ap50", "ap50_95",
    ]);
    for c in &r.classes {
        t.push(vec![
            "class".into(),
            c.class_id.to_string(),
            class_names.get(c.class_id).cloned().unwrap_or_default(),
            c.gt_count.to_string(),
            c.pred_count.to_string(),
            c.tp.to_string(),
            c.fp.to_string(),
            c.fn_count.to_string(),
            f(c.precision),
            f(c.recall),
            f(c.ap50),
            f(c.ap50_95),
        ]);
    }
    let gt: usize = r.classes.iter().map(|c| c.gt_count).sum();
    let preds: usize = r.classes.iter().map(|c| c.pred_count).sum();
    t.push(vec![
        "mean".into(),
        String::new(),
        String::new(),
        gt.to_string(),
        preds.to_string(),
        r.tp.to_string(),
        r.fp.to_string(),
        r.fn_count.to_string(),
        f(r.precision),
        f(r.recall),
        f(r.map50),
        f(r.map50_95),
    ]);
    t
}

pub fn sensitivity_table(rows: &[SensitivityRow]) -> Table {
    let mut t = Table::new(&SENSITIVITY_HEADER);
    for r in rows {
        t.push(vec![f(r.size_px), f(r.offset_px), f(r.iou), f(r.nwd_canonical), f(r.nwd_linear_clamp)]);
    }
    t
}

pub fn stats_table(s: &DatasetStats) -> Table {
    let mut t = Table::new(&STATS_HEADER);
    for c in &s.classes {
        t.push(vec![
            c.class_id.to_string(),
            c.name.clone(),
            c.count.to_string(),
            f(c.proportion),
            f(c.mean_area_px),
            f(c.mean_area_fraction),
        ]);
    }
    t
}

pub fn histogram_table(edges: &[f64], counts: &[usize]) -> Table {
    let total: usize = counts.iter().sum();
    let mut t = Table::new(&["fraction_lo", "fraction_hi", "count", "share"]);
    for (i, &c) in counts.iter().enumerate() {
        let share = if total == 0 { 0.0 } else { c as f64 / total as f64 };
        t.push(vec![f(edges[i]), f(edges[i + 1]), c.to_string(), f(share)]);
    }
    t
}

pub fn gradcheck_table(results: &[BlockResult]) -> Table {
    let mut t = Table::new(&[
        "block", "tolerance", "instances", "probes", "skipped", "max_rel_err", "max_abs_err", "worst_index", "passed",
    ]);
    for r in results {
        t.push(vec![
            r.name.to_string(),
            f(r.tolerance),
            r.instances.to_string(),
            r.report.probes.to_string(),
            r.report.skipped.to_string(),
            format!("{:e}", r.report.max_rel_err),
            format!("{:e}", r.report.max_abs_err),
            r.report.location.map(|l| l.to_string()).unwrap_or_default(),
            r.passed().to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_round_trip_exactly() {
        let h = vec![EpochMetrics {
            epoch: 3,
            train_loss: 0.1 + 0.2,
            box_loss: 1e-300,
            obj_loss: 2.0 / 3.0,
            cls_loss: 0.0,
            val_map50: 1.0,
        }];
        let t = metrics_table(&h);
        assert_eq!(t.to_csv().lines().next().unwrap(), "epoch,train_loss,box_loss,obj_loss,cls_loss,val_mAP50");
        let back = parse_metrics(&Table::parse(&t.to_csv()).unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn predictions_round_trip_exactly() {
        let p = vec![Detection {
            image_id: (1 << 32) | 7,
            class_id: 4,
            bbox: BBox::new(10.123456789, 3.0, 4.5, 1.0 / 3.0),
            score: 0.987654321,
        }];
        let csv = predictions_table(&p).to_csv();
        assert!(csv.starts_with("image_id,class_id,cx,cy,w,h,score\n"));
        assert_eq!(parse_predictions(&Table::parse(&csv).unwrap()).unwrap(), p);
        assert!(parse_predictions(&Table::parse("a,b\n1,2\n").unwrap()).is_err());
    }

    #[test]
    fn key_value_lookup() {
        let t = Table::key_values(&[("a".into(), "1".into()), ("b".into(), "x,y".into())]);
        let back = Table::parse(&t.to_csv()).unwrap();
        assert_eq!(back.value("b"), Some("x,y"));
        assert_eq!(back.get(0, "value"), Some("1"));
        assert_eq!(back.value("c"), None);
    }

    #[test]
    fn histogram_shares() {
        let t = histogram_table(&[0.0, 1.0, 2.0], &[1, 3]);
        assert_eq!(t.rows[1], vec!["1", "2", "3", "0.75"]);
    }
}
