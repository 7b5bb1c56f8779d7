//! Box geometry: IoU, Gaussian box modeling, the closed-form squared
//! 2-Wasserstein distance between box Gaussians, its normalized similarity
//! and the regression loss built on it.
//!
//! Everything here works in `f64` pixels. A box `(cx, cy, w, h)` is modeled as
//! `N(mu, Sigma)` with `mu = (cx, cy)` and `Sigma = diag(w²/4, h²/4)`. For two
//! such Gaussians
//!
//! ```text
//! W2² = |mu1 - mu2|² + |Sigma1^½ - Sigma2^½|_F²
//!     = dcx² + dcy² + ((w1 - w2) / 2)² + ((h1 - h2) / 2)²
//! ```

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Smallest width/height a predicted box is allowed to have inside the loss.
pub const DEGENERATE_FLOOR: f64 = 1e-6;

/// Normalization constant at the reference 256-pixel input side.
pub const DEFAULT_C_NORM: f64 = 12.8;
pub const REFERENCE_INPUT_SIDE: f64 = 256.0;

/// Axis-aligned box in center format, pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn validated(self) -> Result<Self> {
        let finite = [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite());
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(alloc::format!("{self:?}")));
        }
        Ok(self)
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Scales every coordinate by `k` about the origin.
    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.cx * k, self.cy * k, self.w * k, self.h * k)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(bp: &BBox, bg: &BBox) -> f64 {
    let (px0, py0, px1, py1) = bp.corners();
    let (gx0, gy0, gx1, gy1) = bg.corners();
    let inter = overlap_1d(px0, px1, gx0, gx1) * overlap_1d(py0, py1, gy0, gy1);
    let union = bp.area() + bg.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// Box regression loss value with its gradient with respect to the predicted
/// `(cx, cy, w, h)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxLoss {
    pub loss: f64,
    pub grad: [f64; 4],
    /// Set when the predicted width or height was raised to the floor.
    pub degenerate: bool,
}

/// Derivatives of the clamped 1-D overlap with respect to the predicted
/// center and extent: `(d/dc, d/dsize)`.
fn overlap_1d_grad(c: f64, size: f64, g0: f64, g1: f64) -> (f64, f64, f64) {
    let (p0, p1) = (c - size / 2.0, c + size / 2.0);
    let len = p1.min(g1) - p0.max(g0);
    if len <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let right = if p1 < g1 { 1.0 } else { 0.0 };
    let left = if p0 > g0 { 1.0 } else { 0.0 };
    (len, right - left, 0.5 * (right + left))
}

/// `1 - IoU` with analytic gradients (zero when the boxes do not overlap).
pub fn iou_loss(bp: &BBox, bg: &BBox) -> BoxLoss {
    let (w, h, degenerate) = floor_size(bp);
    let (_, _, gx1, gy1) = bg.corners();
    let (gx0, gy0) = (bg.cx - bg.w / 2.0, bg.cy - bg.h / 2.0);
    let (ix, dix_dc, dix_dw) = overlap_1d_grad(bp.cx, w, gx0, gx1);
    let (iy, diy_dc, diy_dh) = overlap_1d_grad(bp.cy, h, gy0, gy1);
    let inter = ix * iy;
    let ap = w * h;
    let union = ap + bg.area() - inter;
    let value = inter / union;
    // dIoU = (dI * (U + I) - I * dAp) / U²
    let d_inter = [iy * dix_dc, ix * diy_dc, iy * dix_dw, ix * diy_dh];
    let d_area = [0.0, 0.0, h, w];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d = (d_inter[k] * (union + inter) - inter * d_area[k]) / (union * union);
        grad[k] = -d;
    }
    if degenerate {
        if bp.w < DEGENERATE_FLOOR {
            grad[2] = 0.0;
        }
        if bp.h < DEGENERATE_FLOOR {
            grad[3] = 0.0;
        }
    }
    BoxLoss {
        loss: 1.0 - value,
        grad,
        degenerate,
    }
}

fn floor_size(b: &BBox) -> (f64, f64, bool) {
    let w = b.w.max(DEGENERATE_FLOOR);
    let h = b.h.max(DEGENERATE_FLOOR);
    (w, h, w != b.w || h != b.h)
}

/// Two-dimensional Gaussian with diagonal covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2D {
    pub mu: [f64; 2],
    /// Diagonal of the covariance matrix, pixels².
    pub sigma_diag: [f64; 2],
}

pub fn gaussian_of_box(b: &BBox) -> Gaussian2D {
    Gaussian2D {
        mu: [b.cx, b.cy],
        sigma_diag: [b.w * b.w / 4.0, b.h * b.h / 4.0],
    }
}

/// Squared 2-Wasserstein distance between diagonal Gaussians.
pub fn wasserstein2_sq(g1: &Gaussian2D, g2: &Gaussian2D) -> f64 {
    let mut d = 0.0;
    for k in 0..2 {
        let dm = g1.mu[k] - g2.mu[k];
        let ds = libm::sqrt(g1.sigma_diag[k]) - libm::sqrt(g2.sigma_diag[k]);
        d += dm * dm + ds * ds;
    }
    d
}

/// How the squared distance is turned into a similarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NwdMode {
    /// `exp(-sqrt(W2²) / C)`; the loss is `1 - NWD`.
    #[default]
    CanonicalExp,
    /// `clamp(W2² / C, 0, 1)`, used directly as the loss (a distance, so the
    /// loss still grows with misalignment).
    LinearClamp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NwdConfig {
    pub c_norm: f64,
    pub mode: NwdMode,
}

impl Default for NwdConfig {
    fn default() -> Self {
        Self {
            c_norm: DEFAULT_C_NORM,
            mode: NwdMode::CanonicalExp,
        }
    }
}

impl NwdConfig {
    /// Default constant scaled linearly with the input side length.
    pub fn for_input_side(side: usize, mode: NwdMode) -> Self {
        Self {
            c_norm: DEFAULT_C_NORM * side as f64 / REFERENCE_INPUT_SIDE,
            mode,
        }
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.c_norm > 0.0 && self.c_norm.is_finite()) {
            return Err(Error::Config(alloc::format!(
                "NWD constant must be positive, got {}",
                self.c_norm
            )));
        }
        Ok(self)
    }
}

/// Normalized Wasserstein similarity in `[0, 1]`.
pub fn nwd(g1: &Gaussian2D, g2: &Gaussian2D, cfg: &NwdConfig) -> f64 {
    let d2 = wasserstein2_sq(g1, g2);
    match cfg.mode {
        NwdMode::CanonicalExp => libm::exp(-libm::sqrt(d2) / cfg.c_norm),
        NwdMode::LinearClamp => (d2 / cfg.c_norm).clamp(0.0, 1.0),
    }
}

/// NWD regression loss of a predicted box against a ground truth.
///
/// Predicted sizes below [`DEGENERATE_FLOOR`] are raised to the floor, the
/// result is flagged and the gradient of the clamped coordinate is zero. At
/// zero distance in canonical mode the (non-differentiable) gradient is
/// reported as zero.
pub fn nwd_loss(bp: &BBox, bg: &BBox, cfg: &NwdConfig) -> BoxLoss {
    let (w, h, degenerate) = floor_size(bp);
    let delta = [bp.cx - bg.cx, bp.cy - bg.cy, (w - bg.w) / 2.0, (h - bg.h) / 2.0];
    let d2: f64 = delta.iter().map(|d| d * d).sum();
    // dW2²/d(cx, cy, w, h)
    let dd2 = [2.0 * delta[0], 2.0 * delta[1], delta[2], delta[3]];
    let (loss, scale) = match cfg.mode {
        NwdMode::CanonicalExp => {
            let dist = libm::sqrt(d2);
            let sim = libm::exp(-dist / cfg.c_norm);
            let scale = if dist > 0.0 {
                sim / (cfg.c_norm * 2.0 * dist)
            } else {
                0.0
            };
            (1.0 - sim, scale)
        }
        NwdMode::LinearClamp => {
            let v = d2 / cfg.c_norm;
            if v < 1.0 {
                (v, 1.0 / cfg.c_norm)
            } else {
                (1.0, 0.0)
            }
        }
    };
    let mut grad = dd2.map(|d| d * scale);
    if bp.w < DEGENERATE_FLOOR {
        grad[2] = 0.0;
    }
    if bp.h < DEGENERATE_FLOOR {
        grad[3] = 0.0;
    }
    BoxLoss {
        loss,
        grad,
        degenerate,
    }
}

/// One row of the IoU/NWD sensitivity table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensitivityRow {
    pub size_px: f64,
    pub offset_px: f64,
    pub iou: f64,
    pub nwd_canonical: f64,
    pub nwd_linear_clamp: f64,
}

/// For each square of side `s` centred at the origin and each offset `d`,
/// compares the square with a copy shifted by `d` along x.
pub fn sensitivity_sweep(sizes: &[f64], offsets: &[f64], c_norm: f64) -> Vec<SensitivityRow> {
    let canonical = NwdConfig {
        c_norm,
        mode: NwdMode::CanonicalExp,
    };
    let linear = NwdConfig {
        c_norm,
        mode: NwdMode::LinearClamp,
    };
    let mut rows = Vec::with_capacity(sizes.len() * offsets.len());
    for &s in sizes {
        let base = BBox::new(0.0, 0.0, s, s);
        for &d in offsets {
            let moved = base.translated(d, 0.0);
            let (g1, g2) = (gaussian_of_box(&base), gaussian_of_box(&moved));
            rows.push(SensitivityRow {
                size_px: s,
                offset_px: d,
                iou: iou(&base, &moved),
                nwd_canonical: nwd(&g1, &g2, &canonical),
                nwd_linear_clamp: nwd(&g1, &g2, &linear),
            });
        }
    }
    rows
}
