use super::{FeatureMap, Shape4};
use crate::error::Result;
use crate::real::Real;

/// Interpolation used by [`upsample2x`].
///
/// `Bilinear` uses half-pixel centers: output index `u` samples source
/// coordinate `(u + 0.5) / 2 - 0.5`, clamped to `[0, len - 1]`, and blends the
/// two neighbouring source pixels `floor(s)` and `min(floor(s) + 1, len - 1)`
/// with weights `1 - t` and `t`, `t = s - floor(s)`. Rows and columns are
/// interpolated separably.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

/// Source taps for one output coordinate: `(i0, i1, weight of i1)`.
fn taps(u: usize, len: usize) -> (usize, usize, f64) {
    let s = ((u as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = libm::floor(s) as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}

pub fn upsample2x<T: Real>(x: &FeatureMap<T>, mode: UpsampleMode) -> Result<FeatureMap<T>> {
    x.check_finite("upsample2x input")?;
    let s = x.shape();
    let os = Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = FeatureMap::zeros(os);
    if s.is_empty() {
        return Ok(out);
    }
    let rows: alloc::vec::Vec<_> = (0..os.h).map(|u| taps(u, s.h)).collect();
    let cols: alloc::vec::Vec<_> = (0..os.w).map(|u| taps(u, s.w)).collect();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    dst[oy * os.w + ox] = match mode {
                        UpsampleMode::Nearest => src[(oy / 2) * s.w + ox / 2],
                        UpsampleMode::Bilinear => {
                            let (y0, y1, ty) = rows[oy];
                            let (x0, x1, tx) = cols[ox];
                            let (ty, tx) = (T::of(ty), T::of(tx));
                            let one = T::one();
                            let top = src[y0 * s.w + x0] * (one - tx) + src[y0 * s.w + x1] * tx;
                            let bot = src[y1 * s.w + x0] * (one - tx) + src[y1 * s.w + x1] * tx;
                            top * (one - ty) + bot * ty
                        }
                    };
                }
            }
        }
    }
    Ok(out)
}

pub fn upsample2x_backward<T: Real>(
    input_shape: Shape4,
    mode: UpsampleMode,
    grad_out: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    let s = input_shape;
    let os = Shape4::new(s.n, s.c, 2 * s.h, 2 * s.w);
    grad_out.expect_shape("upsample2x_backward grad_out", os)?;
    let mut gx = FeatureMap::zeros(s);
    if s.is_empty() {
        return Ok(gx);
    }
    let rows: alloc::vec::Vec<_> = (0..os.h).map(|u| taps(u, s.h)).collect();
    let cols: alloc::vec::Vec<_> = (0..os.w).map(|u| taps(u, s.w)).collect();
    for n in 0..s.n {
        for c in 0..s.c {
            let go = grad_out.plane(n, c);
            let dst = gx.plane_mut(n, c);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let g = go[oy * os.w + ox];
                    match mode {
                        UpsampleMode::Nearest => dst[(oy / 2) * s.w + ox / 2] += g,
                        UpsampleMode::Bilinear => {
                            let (y0, y1, ty) = rows[oy];
                            let (x0, x1, tx) = cols[ox];
                            let (ty, tx) = (T::of(ty), T::of(tx));
                            let one = T::one();
                            dst[y0 * s.w + x0] += g * (one - ty) * (one - tx);
                            dst[y0 * s.w + x1] += g * (one - ty) * tx;
                            dst[y1 * s.w + x0] += g * ty * (one - tx);
                            dst[y1 * s.w + x1] += g * ty * tx;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}
