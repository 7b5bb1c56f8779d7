use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{FeatureMap, Shape4};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::centered_uniform;

/// Grouped 2-D convolution parameters.
///
/// `kernel` has shape `(out_c, in_c / groups, kh, kw)`. Stride is not part of
/// the parameters: block-internal convolutions always run at stride 1 and the
/// detector stem calls [`conv2d_strided`] explicitly.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub kernel: FeatureMap<T>,
    pub bias: Option<Vec<T>>,
    pub groups: usize,
    pub padding: (usize, usize),
}

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: FeatureMap<T>,
    pub kernel: Vec<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(
        kernel: FeatureMap<T>,
        bias: Option<Vec<T>>,
        groups: usize,
        padding: (usize, usize),
    ) -> Result<Self> {
        let k = kernel.shape();
        if groups == 0 || k.n % groups != 0 {
            return Err(Error::Config(alloc::format!(
                "{} output channels not divisible into {groups} groups",
                k.n
            )));
        }
        if let Some(b) = &bias {
            if b.len() != k.n {
                return Err(Error::shape("ConvParams::new bias", k.n, b.len()));
            }
        }
        Ok(Self {
            kernel,
            bias,
            groups,
            padding,
        })
    }

    /// Centered uniform initialization with bound `1/sqrt(fan_in)`.
    pub fn init(
        rng: &mut impl Rng,
        in_c: usize,
        out_c: usize,
        (kh, kw): (usize, usize),
        groups: usize,
        padding: (usize, usize),
        with_bias: bool,
    ) -> Result<Self> {
        if groups == 0 || in_c % groups != 0 {
            return Err(Error::Config(alloc::format!(
                "{in_c} input channels not divisible into {groups} groups"
            )));
        }
        let per_group = in_c / groups;
        let fan_in = (per_group * kh * kw) as f64;
        let bound = 1.0 / libm::sqrt(fan_in);
        let shape = Shape4::new(out_c, per_group, kh, kw);
        let kernel = FeatureMap::from_vec(shape, centered_uniform(rng, shape.len(), bound))?;
        let bias = with_bias.then(|| centered_uniform(rng, out_c, bound));
        Self::new(kernel, bias, groups, padding)
    }

    /// Dense convolution with bias for layers followed by a ReLU: as
    /// [`init`](Self::init), with the kernel bound widened to `sqrt(6/fan_in)`
    /// so activations keep their scale through depth.
    pub fn init_relu(
        rng: &mut impl Rng,
        in_c: usize,
        out_c: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let mut p = Self::init(rng, in_c, out_c, kernel, 1, padding, true)?;
        let gain = T::of(libm::sqrt(6.0));
        for v in p.kernel.data_mut() {
            *v = *v * gain;
        }
        Ok(p)
    }

    /// Depthwise `kh × kw` convolution with no bias.
    pub fn depthwise(
        rng: &mut impl Rng,
        channels: usize,
        (kh, kw): (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        Self::init(rng, channels, channels, (kh, kw), channels, padding, false)
    }

    /// `1 × 1` convolution with bias.
    pub fn pointwise(rng: &mut impl Rng, in_c: usize, out_c: usize) -> Result<Self> {
        Self::init(rng, in_c, out_c, (1, 1), 1, (0, 0), true)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape().c * self.groups
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        let k = self.kernel.shape();
        (k.h, k.w)
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels() && self.groups == self.out_channels()
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Same-shaped parameters filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            kernel: FeatureMap::zeros(self.kernel.shape()),
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
            groups: self.groups,
            padding: self.padding,
        }
    }

    pub fn output_shape(&self, input: Shape4, stride: usize) -> Result<Shape4> {
        if input.c != self.in_channels() {
            return Err(Error::shape("conv2d input channels", self.in_channels(), input.c));
        }
        let (kh, kw) = self.kernel_size();
        let (ph, pw) = self.padding;
        if input.h + 2 * ph < kh || input.w + 2 * pw < kw || stride == 0 {
            return Err(Error::shape(
                "conv2d padded extent",
                (kh, kw),
                (input.h + 2 * ph, input.w + 2 * pw),
            ));
        }
        Ok(Shape4::new(
            input.n,
            self.out_channels(),
            (input.h + 2 * ph - kh) / stride + 1,
            (input.w + 2 * pw - kw) / stride + 1,
        ))
    }

    /// Adds `other` into `self` element-wise (gradient accumulation).
    pub fn accumulate(&mut self, kernel: &[T], bias: Option<&[T]>) {
        super::accumulate(self.kernel.data_mut(), kernel);
        if let (Some(acc), Some(b)) = (self.bias.as_mut(), bias) {
            super::accumulate(acc, b);
        }
    }
}

/// Stride-1 convolution with zero padding.
pub fn conv2d<T: Real>(x: &FeatureMap<T>, p: &ConvParams<T>) -> Result<FeatureMap<T>> {
    conv2d_strided(x, p, 1)
}

pub fn conv2d_backward<T: Real>(
    x: &FeatureMap<T>,
    p: &ConvParams<T>,
    grad_out: &FeatureMap<T>,
) -> Result<ConvGrads<T>> {
    conv2d_strided_backward(x, p, 1, grad_out)
}

/// Range of output columns `o` for which `o * stride + tap - pad` lands inside
/// `0..len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, tap: usize, pad: usize, stride: usize) -> (usize, usize) {
    // smallest o with o*stride + tap >= pad
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    // largest o with o*stride + tap - pad <= in_len - 1
    let limit = in_len + pad;
    let hi = if tap >= limit {
        0
    } else {
        ((limit - tap - 1) / stride + 1).min(out_len)
    };
    let lo = lo.min(out_len);
    (lo, hi.max(lo))
}

/// Geometry of one convolution call.
struct Plan {
    xs: Shape4,
    os: Shape4,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    in_pg: usize,
    out_pg: usize,
}

impl Plan {
    fn new<T: Real>(x: Shape4, p: &ConvParams<T>, stride: usize) -> Result<Self> {
        let os = p.output_shape(x, stride)?;
        let (kh, kw) = p.kernel_size();
        Ok(Self {
            xs: x,
            os,
            kh,
            kw,
            ph: p.padding.0,
            pw: p.padding.1,
            stride,
            in_pg: p.kernel.shape().c,
            out_pg: p.out_channels() / p.groups,
        })
    }

    /// Taps per output element and group: `in_pg · kh · kw`.
    fn taps(&self) -> usize {
        self.in_pg * self.kh * self.kw
    }

    /// A `1×1`, stride-1, unpadded convolution reads its input planes as is.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    /// Unfolds group `g` of item `n`: row `(icg, ky, kx)` of `cols` holds, for
    /// every output position, the input value under that tap (0 in padding).
    fn unfold<T: Real>(&self, x: &FeatureMap<T>, n: usize, g: usize, cols: &mut [T]) {
        let (xs, os) = (self.xs, self.os);
        let plane = os.plane();
        cols.fill(T::zero());
        for icg in 0..self.in_pg {
            let src = x.plane(n, g * self.in_pg + icg);
            for ky in 0..self.kh {
                let (oy0, oy1) = valid_range(os.h, xs.h, ky, self.ph, self.stride);
                for kx in 0..self.kw {
                    let r = (icg * self.kh + ky) * self.kw + kx;
                    let row = &mut cols[r * plane..(r + 1) * plane];
                    let (ox0, ox1) = valid_range(os.w, xs.w, kx, self.pw, self.stride);
                    if ox0 == ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * self.stride + ky - self.ph;
                        let srow = &src[iy * xs.w..(iy + 1) * xs.w];
                        let drow = &mut row[oy * os.w..(oy + 1) * os.w];
                        if self.stride == 1 {
                            let ix0 = ox0 + kx - self.pw;
                            drow[ox0..ox1].copy_from_slice(&srow[ix0..ix0 + (ox1 - ox0)]);
                        } else {
                            for ox in ox0..ox1 {
                                drow[ox] = srow[ox * self.stride + kx - self.pw];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Plan::unfold`]: adds every row of `cols` back into the
    /// input positions it was read from.
    fn fold<T: Real>(&self, cols: &[T], gx: &mut FeatureMap<T>, n: usize, g: usize) {
        let (xs, os) = (self.xs, self.os);
        let plane = os.plane();
        for icg in 0..self.in_pg {
            let dst = gx.plane_mut(n, g * self.in_pg + icg);
            for ky in 0..self.kh {
                let (oy0, oy1) = valid_range(os.h, xs.h, ky, self.ph, self.stride);
                for kx in 0..self.kw {
                    let r = (icg * self.kh + ky) * self.kw + kx;
                    let row = &cols[r * plane..(r + 1) * plane];
                    let (ox0, ox1) = valid_range(os.w, xs.w, kx, self.pw, self.stride);
                    if ox0 == ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = oy * self.stride + ky - self.ph;
                        let drow = &mut dst[iy * xs.w..(iy + 1) * xs.w];
                        let srow = &row[oy * os.w..(oy + 1) * os.w];
                        if self.stride == 1 {
                            let ix0 = ox0 + kx - self.pw;
                            for (d, &v) in drow[ix0..ix0 + (ox1 - ox0)].iter_mut().zip(&srow[ox0..ox1]) {
                                *d += v;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                drow[ox * self.stride + kx - self.pw] += srow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Real>(dst: &mut [T], k: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order (vectorizes without giving up reproducibility).
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// [`dot`] of `a` with four vectors at once, sharing the loads of `a`.
#[inline]
fn dot4<T: Real>(a: &[T], b: [&[T]; 4]) -> [T; 4] {
    let n = a.len();
    let b = b.map(|v| &v[..n]);
    let mut acc = [[T::zero(); 8]; 4];
    let (ca, tail_a) = a.split_at(n / 8 * 8);
    for (i, x) in ca.chunks_exact(8).enumerate() {
        for j in 0..4 {
            let y = &b[j][8 * i..8 * i + 8];
            for l in 0..8 {
                acc[j][l] += x[l] * y[l];
            }
        }
    }
    let mut out = [T::zero(); 4];
    for j in 0..4 {
        let mut tail = T::zero();
        for (k, &v) in tail_a.iter().enumerate() {
            tail += v * b[j][ca.len() + k];
        }
        let a = &acc[j];
        out[j] = ((a[0] + a[4]) + (a[1] + a[5])) + ((a[2] + a[6]) + (a[3] + a[7])) + tail;
    }
    out
}

#[inline]
fn sum<T: Real>(a: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.chunks_exact(8);
    let mut tail = T::zero();
    for &v in chunks.remainder() {
        tail += v;
    }
    for x in chunks {
        for l in 0..8 {
            acc[l] += x[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Convolution with an explicit stride, used by the downsampling stem.
///
/// The input of each group is unfolded into one row per tap, and every output
/// plane starts from its bias and adds `kernel[tap] · row[tap]` tap by tap, in
/// `(input channel, kernel row, kernel column)` order.
pub fn conv2d_strided<T: Real>(
    x: &FeatureMap<T>,
    p: &ConvParams<T>,
    stride: usize,
) -> Result<FeatureMap<T>> {
    x.check_finite("conv2d input")?;
    let plan = Plan::new(x.shape(), p, stride)?;
    let os = plan.os;
    let plane = os.plane();
    let taps = plan.taps();
    let kernel = p.kernel.data();
    let mut out = FeatureMap::zeros(os);
    let mut cols = if plan.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); taps * plane]
    };
    for n in 0..os.n {
        for g in 0..p.groups {
            if !plan.is_pointwise() {
                plan.unfold(x, n, g, &mut cols);
            }
            let oc0 = g * plan.out_pg;
            let item = &mut out.data_mut()[n * os.c * plane..(n + 1) * os.c * plane];
            let group = &mut item[oc0 * plane..(oc0 + plan.out_pg) * plane];
            // Output channels in blocks of four share each input row load.
            for (b, block) in group.chunks_mut(4 * plane).enumerate() {
                let first = oc0 + 4 * b;
                let width = block.len() / plane;
                if let Some(bias) = &p.bias {
                    for (j, dst) in block.chunks_mut(plane).enumerate() {
                        dst.fill(bias[first + j]);
                    }
                }
                for r in 0..taps {
                    let row = if plan.is_pointwise() {
                        x.plane(n, g * plan.in_pg + r)
                    } else {
                        &cols[r * plane..(r + 1) * plane]
                    };
                    let k = |j: usize| kernel[(first + j) * taps + r];
                    if width == 4 {
                        let (d0, rest) = block.split_at_mut(plane);
                        let (d1, rest) = rest.split_at_mut(plane);
                        let (d2, d3) = rest.split_at_mut(plane);
                        let (k0, k1, k2, k3) = (k(0), k(1), k(2), k(3));
                        let (d0, d1, d2, d3) = (&mut d0[..plane], &mut d1[..plane], &mut d2[..plane], &mut d3[..plane]);
                        let row = &row[..plane];
                        for i in 0..plane {
                            let v = row[i];
                            d0[i] += k0 * v;
                            d1[i] += k1 * v;
                            d2[i] += k2 * v;
                            d3[i] += k3 * v;
                        }
                    } else {
                        for (j, dst) in block.chunks_mut(plane).enumerate() {
                            axpy(dst, k(j), row);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_strided_backward<T: Real>(
    x: &FeatureMap<T>,
    p: &ConvParams<T>,
    stride: usize,
    grad_out: &FeatureMap<T>,
) -> Result<ConvGrads<T>> {
    let plan = Plan::new(x.shape(), p, stride)?;
    let os = plan.os;
    grad_out.expect_shape("conv2d_backward grad_out", os)?;
    grad_out.check_finite("conv2d grad_out")?;
    let plane = os.plane();
    let taps = plan.taps();
    let kernel = p.kernel.data();

    let mut gx = FeatureMap::zeros(plan.xs);
    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = p.bias.as_ref().map(|b| vec![T::zero(); b.len()]);
    let pointwise = plan.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); taps * plane] };
    let mut gcols = if pointwise { Vec::new() } else { vec![T::zero(); taps * plane] };

    // Per-item partial kernel gradients, reduced in batch order.
    let mut gk_item = vec![T::zero(); kernel.len()];
    for n in 0..os.n {
        gk_item.fill(T::zero());
        for g in 0..p.groups {
            if !pointwise {
                plan.unfold(x, n, g, &mut cols);
                gcols.fill(T::zero());
            }
            let oc0 = g * plan.out_pg;
            if let Some(gb) = gb.as_mut() {
                for oc in oc0..oc0 + plan.out_pg {
                    gb[oc] += sum(grad_out.plane(n, oc));
                }
            }
            let item = &grad_out.data()[n * os.c * plane..(n + 1) * os.c * plane];
            let group = &item[oc0 * plane..(oc0 + plan.out_pg) * plane];
            for r in 0..taps {
                let (src, dst): (&[T], &mut [T]) = if pointwise {
                    let ic = g * plan.in_pg + r;
                    (x.plane(n, ic), gx.plane_mut(n, ic))
                } else {
                    (&cols[r * plane..(r + 1) * plane], &mut gcols[r * plane..(r + 1) * plane])
                };
                // The input gradient row takes the output channels in order,
                // four per sweep.
                for (b, block) in group.chunks(4 * plane).enumerate() {
                    let first = oc0 + 4 * b;
                    let width = block.len() / plane;
                    if width == 4 {
                        let go = [
                            &block[..plane],
                            &block[plane..2 * plane],
                            &block[2 * plane..3 * plane],
                            &block[3 * plane..],
                        ];
                        let d = dot4(src, go);
                        let k = [0, 1, 2, 3].map(|j| kernel[(first + j) * taps + r]);
                        for j in 0..4 {
                            gk_item[(first + j) * taps + r] += d[j];
                        }
                        let dst = &mut dst[..plane];
                        let (g0, g1, g2, g3) = (&go[0][..plane], &go[1][..plane], &go[2][..plane], &go[3][..plane]);
                        for i in 0..plane {
                            let mut v = dst[i];
                            v += k[0] * g0[i];
                            v += k[1] * g1[i];
                            v += k[2] * g2[i];
                            v += k[3] * g3[i];
                            dst[i] = v;
                        }
                    } else {
                        for (j, go) in block.chunks(plane).enumerate() {
                            let oc = first + j;
                            gk_item[oc * taps + r] += dot(go, src);
                            axpy(dst, kernel[oc * taps + r], go);
                        }
                    }
                }
            }
            if !pointwise {
                plan.fold(&gcols, &mut gx, n, g);
            }
        }
        super::accumulate(&mut gk, &gk_item);
    }
    Ok(ConvGrads {
        input: gx,
        kernel: gk,
        bias: gb,
    })
}
