//! Central finite-difference gradient checking.
//!
//! A check compares an analytic gradient against
//! `(f(x + h·e_i) - f(x - h·e_i)) / 2h` for every coordinate `i` (or a
//! fixed-seed random subset when there are more than `max_probes`
//! coordinates). The relative error of a coordinate is
//! `|a - n| / max(|a|, |n|, denom_floor)`; the floor keeps coordinates whose
//! true gradient is essentially zero from reporting pure rounding noise.
//!
//! With `richardson` set, the central differences at `h` and `h/2` are
//! combined as `(4·D(h/2) - D(h)) / 3`, cancelling the `h²` truncation term.
//! Blocks behind a batch normalization need this: normalization makes the
//! output nearly invariant to some parameters, so their true gradient is
//! tiny while higher derivatives are not.
//!
//! Piecewise-smooth functions (ReLU, clamps) report an activation pattern
//! alongside their value. A probe whose `±h` evaluations see a different
//! pattern than the base point straddles a kink, where central differences
//! say nothing about the derivative; such probes are skipped and counted.

pub mod suite;

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub denom_floor: f64,
    pub max_probes: usize,
    pub richardson: bool,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            denom_floor: 1e-4,
            max_probes: 10_000,
            richardson: true,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index of the coordinate with the largest relative error.
    pub location: Option<usize>,
    pub probes: usize,
    /// Probes dropped because they straddled a kink.
    pub skipped: usize,
    pub entries: usize,
}

impl GradCheckReport {
    /// Worst-case merge of two reports.
    pub fn merge(&mut self, other: &GradCheckReport) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.location = other.location;
        }
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.probes += other.probes;
        self.skipped += other.skipped;
        self.entries = self.entries.max(other.entries);
    }

    pub fn empty() -> Self {
        Self {
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            location: None,
            probes: 0,
            skipped: 0,
            entries: 0,
        }
    }
}

/// Checks `analytic` against central differences of `f` around `point`.
/// `f` must be pure.
pub fn grad_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    grad_check_piecewise(|x| Ok((f(x)?, 0)), point, analytic, cfg)
}

/// As [`grad_check`], for an `f` returning `(value, activation pattern)`.
pub fn grad_check_piecewise<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    if point.len() != analytic.len() {
        return Err(Error::shape("grad_check analytic gradient", point.len(), analytic.len()));
    }
    let indices = probe_indices(point.len(), cfg.max_probes, cfg.seed);
    let mut x = point.to_vec();
    let mut report = GradCheckReport::empty();
    report.entries = point.len();
    let (_, base) = f(&x)?;
    for &i in &indices {
        let mut central = |h: f64| -> Result<Option<f64>> {
            let orig = x[i];
            x[i] = orig + h;
            let (hi, p_hi) = f(&x)?;
            x[i] = orig - h;
            let (lo, p_lo) = f(&x)?;
            x[i] = orig;
            if !hi.is_finite() || !lo.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "grad_check probe",
                    index: i,
                });
            }
            Ok((p_hi == base && p_lo == base).then(|| (hi - lo) / (2.0 * h)))
        };
        let Some(d_h) = central(cfg.step)? else {
            report.skipped += 1;
            continue;
        };
        let numeric = if cfg.richardson {
            let Some(d_half) = central(cfg.step / 2.0)? else {
                report.skipped += 1;
                continue;
            };
            (4.0 * d_half - d_h) / 3.0
        } else {
            d_h
        };
        let abs = (analytic[i] - numeric).abs();
        let rel = abs / analytic[i].abs().max(numeric.abs()).max(cfg.denom_floor);
        report.max_abs_err = report.max_abs_err.max(abs);
        if report.location.is_none() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.location = Some(i);
        }
        report.probes += 1;
    }
    Ok(report)
}

fn probe_indices(len: usize, max_probes: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len <= max_probes {
        return all;
    }
    let mut r = rng::labeled(seed, "gradcheck.subset");
    for k in 0..max_probes {
        let j = r.random_range(k..len);
        all.swap(k, j);
    }
    all.truncate(max_probes);
    all.sort_unstable();
    all
}

/// Folds the sign pattern (`> 0`) of `data` into an FNV-1a hash.
pub fn sign_signature<T: crate::Real>(mut hash: u64, data: &[T]) -> u64 {
    for chunk in data.chunks(8) {
        let mut byte = 0u8;
        for (k, v) in chunk.iter().enumerate() {
            byte |= ((*v > T::zero()) as u8) << k;
        }
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Names the segments of a flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layout {
    segments: Vec<(String, usize)>,
}

impl Layout {
    pub fn push(&mut self, name: impl Into<String>, len: usize) {
        self.segments.push((name.into(), len));
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(segment name, offset inside the segment)` of a flat index.
    pub fn locate(&self, mut index: usize) -> Option<(&str, usize)> {
        for (name, len) in &self.segments {
            if index < *len {
                return Some((name, index));
            }
            index -= len;
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn richardson_cancels_quadratic_truncation() {
        let cubic = |x: &[f64]| Ok(x[0] * x[0] * x[0]);
        let plain = GradCheckConfig {
            richardson: false,
            ..GradCheckConfig::default()
        };
        let a = grad_check(cubic, &[0.01], &[3e-4], &plain).unwrap();
        let b = grad_check(cubic, &[0.01], &[3e-4], &GradCheckConfig::default()).unwrap();
        assert!(a.max_abs_err > 1e-9);
        assert!(b.max_abs_err < 1e-15);
    }

    #[test]
    fn linear_function_exact() {
        let point = [0.3, -1.2, 4.0];
        let analytic = [3.0, 3.0, 3.0];
        let r = grad_check(
            |x| Ok(x.iter().map(|v| 3.0 * v).sum()),
            &point,
            &analytic,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-10, "{r:?}");
        assert_eq!(r.probes, 3);
    }

    #[test]
    fn wrong_gradient_is_located() {
        let point = [1.0, 2.0];
        let r = grad_check(
            |x| Ok(x[0] * x[0] + x[1]),
            &point,
            &[2.0, 5.0],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(r.location, Some(1));
        assert!(r.max_rel_err > 0.5);
    }

    #[test]
    fn non_finite_probe_is_error() {
        let r = grad_check(
            |x| Ok(if x[0] > 0.0 { f64::INFINITY } else { 0.0 }),
            &[0.0],
            &[0.0],
            &GradCheckConfig::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn kink_straddling_probes_are_skipped() {
        let relu = |x: &[f64]| Ok((x[0].max(0.0) + 2.0 * x[1], (x[0] > 0.0) as u64));
        let r = grad_check_piecewise(relu, &[0.0, 1.0], &[0.0, 2.0], &GradCheckConfig::default()).unwrap();
        assert_eq!((r.probes, r.skipped), (1, 1));
        assert!(r.max_rel_err < 1e-10);
    }

    #[test]
    fn subset_is_deterministic_and_bounded() {
        let a = probe_indices(50_000, 100, 7);
        assert_eq!(a, probe_indices(50_000, 100, 7));
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn layout_locates_segments() {
        let mut l = Layout::default();
        l.push("input", 4);
        l.push("kernel", 3);
        assert_eq!(l.locate(5), Some(("kernel", 1)));
        assert_eq!(l.locate(7), None);
    }
}
