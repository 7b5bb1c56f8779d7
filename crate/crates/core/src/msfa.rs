//! Multi-scale focused attention.
//!
//! The block runs parallel separable depthwise branches over its input
//! (by default two independently parameterized `1×11 → 11×1` branches and a
//! `1×9 → 9×1` auxiliary branch), concatenates the untouched input with the
//! branch outputs, mixes the concatenation with a `1×1` convolution and uses
//! the sigmoid of the mix as a gate on the input:
//!
//! ```text
//! mixed  = conv1x1(concat(x, b1(x), b2(x), b3(x)))
//! output = x ⊙ sigmoid(mixed)
//! ```

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{prefixed, NamedTensor, Parameters};
use crate::real::Real;
use crate::rng;
use crate::tensor::{
    accumulate, activation, concat_channels, conv2d, conv2d_backward, eltwise, split_channels,
    Activation, ConvParams, Eltwise, FeatureMap,
};

/// Tap counts of the default branches: dual 11-tap branches and a 9-tap one.
pub const DEFAULT_BRANCH_KERNELS: [usize; 3] = [11, 11, 9];

/// Depthwise `1×k` followed by depthwise `k×1`, both same-padded, no
/// nonlinearity in between.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparablePair<T> {
    pub row: ConvParams<T>,
    pub col: ConvParams<T>,
}

impl<T: Real> SeparablePair<T> {
    pub fn init(rng: &mut impl rand::Rng, channels: usize, k: usize) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::Config(alloc::format!("branch kernel {k} must be odd")));
        }
        Ok(Self {
            row: ConvParams::depthwise(rng, channels, (1, k), (0, k / 2))?,
            col: ConvParams::depthwise(rng, channels, (k, 1), (k / 2, 0))?,
        })
    }

    pub fn taps(&self) -> usize {
        self.row.kernel_size().1
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
        let mid = conv2d(x, &self.row)?;
        let out = conv2d(&mid, &self.col)?;
        Ok((mid, out))
    }

    fn zeros_like(&self) -> Self {
        Self {
            row: self.row.zeros_like(),
            col: self.col.zeros_like(),
        }
    }
}

impl<T: Real> Parameters<T> for SeparablePair<T> {
    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = prefixed("row", self.row.tensors());
        out.extend(prefixed("col", self.col.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.row.tensors_mut();
        out.extend(self.col.tensors_mut());
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsfaParams<T> {
    pub branches: Vec<SeparablePair<T>>,
    /// `1×1` convolution from `(branches + 1) · C` to `C` channels, with bias.
    pub mix: ConvParams<T>,
}

impl<T: Real> MsfaParams<T> {
    /// Each branch and the mix layer draw from their own stream of `seed`.
    pub fn init(channels: usize, kernels: &[usize], seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("MSFA needs at least one channel".into()));
        }
        let branches = kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mut r = rng::labeled(seed, &alloc::format!("msfa.branch{i}"));
                SeparablePair::init(&mut r, channels, k)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut r = rng::labeled(seed, "msfa.mix");
        let mix = ConvParams::pointwise(&mut r, (kernels.len() + 1) * channels, channels)?;
        Ok(Self { branches, mix })
    }

    pub fn default_init(channels: usize, seed: u64) -> Result<Self> {
        Self::init(channels, &DEFAULT_BRANCH_KERNELS, seed)
    }

    pub fn channels(&self) -> usize {
        self.mix.out_channels()
    }

    pub fn kernels(&self) -> Vec<usize> {
        self.branches.iter().map(SeparablePair::taps).collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            branches: self.branches.iter().map(SeparablePair::zeros_like).collect(),
            mix: self.mix.zeros_like(),
        }
    }

    fn validate(&self, x: &FeatureMap<T>) -> Result<()> {
        let c = self.channels();
        if x.shape().c != c {
            return Err(Error::shape("msfa input channels", c, x.shape().c));
        }
        if self.mix.in_channels() != (self.branches.len() + 1) * c {
            return Err(Error::shape(
                "msfa mix input channels",
                (self.branches.len() + 1) * c,
                self.mix.in_channels(),
            ));
        }
        Ok(())
    }
}

impl<T: Real> Parameters<T> for MsfaParams<T> {
    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            out.extend(prefixed(&alloc::format!("branch{i}"), b.tensors()));
        }
        out.extend(prefixed("mix", self.mix.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        for b in self.branches.iter_mut() {
            out.extend(b.tensors_mut());
        }
        out.extend(self.mix.tensors_mut());
        out
    }
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MsfaCache<T> {
    input: FeatureMap<T>,
    mids: Vec<FeatureMap<T>>,
    branch_outs: Vec<FeatureMap<T>>,
    concat: FeatureMap<T>,
    gate: FeatureMap<T>,
}

pub fn msfa_forward<T: Real>(x: &FeatureMap<T>, p: &MsfaParams<T>) -> Result<FeatureMap<T>> {
    Ok(msfa_forward_cached(x, p)?.0)
}

pub fn msfa_forward_cached<T: Real>(
    x: &FeatureMap<T>,
    p: &MsfaParams<T>,
) -> Result<(FeatureMap<T>, MsfaCache<T>)> {
    p.validate(x)?;
    let mut mids = Vec::with_capacity(p.branches.len());
    let mut branch_outs = Vec::with_capacity(p.branches.len());
    for b in &p.branches {
        let (mid, out) = b.forward(x)?;
        mids.push(mid);
        branch_outs.push(out);
    }
    let mut parts: Vec<&FeatureMap<T>> = Vec::with_capacity(p.branches.len() + 1);
    parts.push(x);
    parts.extend(branch_outs.iter());
    let concat = concat_channels(&parts)?;
    let mixed = conv2d(&concat, &p.mix)?;
    let gate = activation(&mixed, Activation::Sigmoid)?;
    let out = eltwise(x, &gate, Eltwise::Mul)?;
    Ok((
        out,
        MsfaCache {
            input: x.clone(),
            mids,
            branch_outs,
            concat,
            gate,
        },
    ))
}

/// Returns the input gradient and parameter gradients (same layout as `p`).
pub fn msfa_backward<T: Real>(
    p: &MsfaParams<T>,
    cache: &MsfaCache<T>,
    grad_out: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, MsfaParams<T>)> {
    let x = &cache.input;
    grad_out.expect_shape("msfa_backward grad_out", x.shape())?;
    // out = x ⊙ s, s = sigmoid(mixed)
    let mut gx = eltwise(grad_out, &cache.gate, Eltwise::Mul)?;
    let gmixed = FeatureMap::from_fn(x.shape(), |i| {
        let s = cache.gate.data()[i];
        grad_out.data()[i] * x.data()[i] * s * (T::one() - s)
    });
    let mut grads = p.zeros_like();
    let mix_g = conv2d_backward(&cache.concat, &p.mix, &gmixed)?;
    grads.mix.accumulate(&mix_g.kernel, mix_g.bias.as_deref());

    let c = p.channels();
    let widths: Vec<usize> = core::iter::repeat_n(c, p.branches.len() + 1).collect();
    let pieces = split_channels(&mix_g.input, &widths)?;
    accumulate(gx.data_mut(), pieces[0].data());
    for (i, b) in p.branches.iter().enumerate() {
        let col_g = conv2d_backward(&cache.mids[i], &b.col, &pieces[i + 1])?;
        let row_g = conv2d_backward(x, &b.row, &col_g.input)?;
        grads.branches[i].col.accumulate(&col_g.kernel, None);
        grads.branches[i].row.accumulate(&row_g.kernel, None);
        accumulate(gx.data_mut(), row_g.input.data());
    }
    debug_assert_eq!(cache.branch_outs.len(), p.branches.len());
    Ok((gx, grads))
}

/// Mean absolute difference between the outputs of the first two branches on
/// `probe`, divided by their mean absolute activation. Zero when the two
/// branches are identical.
pub fn branch_divergence<T: Real>(p: &MsfaParams<T>, probe: &FeatureMap<T>) -> Result<f64> {
    if p.branches.len() < 2 {
        return Err(Error::Config("branch divergence needs two branches".into()));
    }
    p.validate(probe)?;
    let (_, a) = p.branches[0].forward(probe)?;
    let (_, b) = p.branches[1].forward(probe)?;
    let n = a.len().max(1) as f64;
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum::<f64>() / n;
    let scale: f64 = a
        .data()
        .iter()
        .chain(b.data())
        .map(|v| v.as_f64().abs())
        .sum::<f64>()
        / (2.0 * n);
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(diff / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    fn probe(seed: u64, shape: Shape4) -> FeatureMap<f64> {
        let mut r = rng::stream(seed, 99);
        FeatureMap::from_vec(shape, rng::centered_uniform(&mut r, shape.len(), 1.0)).unwrap()
    }

    #[test]
    fn shape_preserved() {
        let p = MsfaParams::<f32>::default_init(16, 1).unwrap();
        let x = probe(1, Shape4::new(2, 16, 32, 32)).cast::<f32>();
        assert_eq!(msfa_forward(&x, &p).unwrap().shape(), x.shape());
        for (h, w) in [(1, 1), (1, 7), (5, 2)] {
            let p = MsfaParams::<f64>::default_init(3, 2).unwrap();
            let x = probe(2, Shape4::new(1, 3, h, w));
            assert_eq!(msfa_forward(&x, &p).unwrap().shape(), x.shape());
        }
    }

    #[test]
    fn zero_mix_halves_input() {
        let mut p = MsfaParams::<f64>::default_init(4, 3).unwrap();
        p.mix = p.mix.zeros_like();
        let x = probe(3, Shape4::new(1, 4, 6, 6));
        let y = msfa_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn gate_bounds_output() {
        let p = MsfaParams::<f64>::default_init(4, 4).unwrap();
        let x = probe(4, Shape4::new(2, 4, 9, 7));
        let y = msfa_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(a.abs() <= b.abs());
        }
    }

    #[test]
    fn channel_mismatch_is_error() {
        let p = MsfaParams::<f32>::default_init(4, 4).unwrap();
        let x = FeatureMap::zeros(Shape4::new(1, 3, 4, 4));
        assert!(matches!(msfa_forward(&x, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn swapping_dual_branches_permutes_mix_blocks() {
        // Dyadic values keep every sum exact, so the reordered channel
        // reduction of the mix layer cannot change a single bit.
        let c = 3;
        let dyadic = |v: f64| libm::round(v * 16.0) / 16.0;
        let mut p = MsfaParams::<f64>::default_init(c, 5).unwrap();
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|v| *v = dyadic(*v));
        }
        let x = probe(5, Shape4::new(1, c, 8, 8)).map(dyadic);
        let mut q = p.clone();
        q.branches.swap(0, 1);
        // mix input blocks are [x, b0, b1, b2]; swap blocks 1 and 2
        let k = p.mix.kernel.shape();
        for oc in 0..k.n {
            for ic in 0..c {
                let a = p.mix.kernel.index(oc, c + ic, 0, 0);
                let b = p.mix.kernel.index(oc, 2 * c + ic, 0, 0);
                q.mix.kernel.data_mut()[a] = p.mix.kernel.data()[b];
                q.mix.kernel.data_mut()[b] = p.mix.kernel.data()[a];
            }
        }
        let y = msfa_forward(&x, &p).unwrap();
        let z = msfa_forward(&x, &q).unwrap();
        assert_eq!(y, z);
        // Without the permutation the output changes.
        let mut r = p.clone();
        r.branches.swap(0, 1);
        assert_ne!(msfa_forward(&x, &r).unwrap(), y);
    }

    #[test]
    fn divergence_zero_for_copies_positive_otherwise() {
        let mut p = MsfaParams::<f64>::default_init(4, 6).unwrap();
        let x = probe(6, Shape4::new(1, 4, 12, 12));
        assert!(branch_divergence(&p, &x).unwrap() > 0.0);
        p.branches[1] = p.branches[0].clone();
        assert_eq!(branch_divergence(&p, &x).unwrap(), 0.0);
    }

    #[test]
    fn dual_branches_use_independent_streams() {
        let p = MsfaParams::<f32>::default_init(4, 7).unwrap();
        assert_eq!(p.branches[0].row.kernel.shape(), p.branches[1].row.kernel.shape());
        assert_ne!(p.branches[0].row.kernel, p.branches[1].row.kernel);
        assert_eq!(p.kernels(), alloc::vec![11, 11, 9]);
    }

    #[test]
    fn deterministic_forward() {
        let p = MsfaParams::<f32>::default_init(8, 8).unwrap();
        let x = probe(8, Shape4::new(2, 8, 10, 10)).cast::<f32>();
        let a = msfa_forward(&x, &p).unwrap();
        let b = msfa_forward(&x, &p).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
