//! Efficient upsampling convolution block:
//! `proj1x1(relu(bn(dw3x3(upsample2x(x)))))`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{prefixed, NamedTensor, Parameters};
use crate::real::Real;
use crate::rng;
use crate::tensor::{
    activation, batchnorm, batchnorm_backward, conv2d, conv2d_backward, upsample2x,
    upsample2x_backward, Activation, BatchNormCache, BatchNormState, ConvParams, FeatureMap,
    Shape4, UpsampleMode,
};

#[derive(Clone, Debug, PartialEq)]
pub struct EucbParams<T> {
    /// Depthwise `3×3`, padding 1, no bias (the normalization follows).
    pub dw: ConvParams<T>,
    pub bn: BatchNormState<T>,
    /// `1×1` projection `in_c → out_c`, with bias.
    pub proj: ConvParams<T>,
    pub upsample_mode: UpsampleMode,
}

impl<T: Real> EucbParams<T> {
    pub fn init(in_c: usize, out_c: usize, upsample_mode: UpsampleMode, seed: u64) -> Result<Self> {
        let dw = ConvParams::depthwise(&mut rng::labeled(seed, "eucb.dw"), in_c, (3, 3), (1, 1))?;
        let proj = ConvParams::pointwise(&mut rng::labeled(seed, "eucb.proj"), in_c, out_c)?;
        Ok(Self {
            dw,
            bn: BatchNormState::new(in_c),
            proj,
            upsample_mode,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.dw.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.proj.out_channels()
    }

    pub fn zeros_like(&self) -> Self {
        let mut bn = self.bn.clone();
        for v in bn.gamma.iter_mut().chain(bn.beta.iter_mut()) {
            *v = T::zero();
        }
        Self {
            dw: self.dw.zeros_like(),
            bn,
            proj: self.proj.zeros_like(),
            upsample_mode: self.upsample_mode,
        }
    }
}

impl<T: Real> Parameters<T> for EucbParams<T> {
    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = prefixed("dw", self.dw.tensors());
        out.extend(prefixed("bn", self.bn.tensors()));
        out.extend(prefixed("proj", self.proj.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = self.dw.tensors_mut();
        out.extend(self.bn.tensors_mut());
        out.extend(self.proj.tensors_mut());
        out
    }
}

#[derive(Clone, Debug)]
pub struct EucbCache<T> {
    input_shape: Shape4,
    up: FeatureMap<T>,
    dw_out: FeatureMap<T>,
    pub bn: BatchNormCache<T>,
    bn_out: FeatureMap<T>,
    relu_out: FeatureMap<T>,
}

impl<T: Real> EucbCache<T> {
    /// Hash of the ReLU activation pattern, for kink-aware gradient checks.
    pub fn relu_signature(&self, seed: u64) -> u64 {
        crate::gradcheck::sign_signature(seed, self.bn_out.data())
    }
}

/// Forward pass. In train mode the batch statistics are returned in the
/// cache; fold them into the running estimates with
/// `p.bn.update_running(&cache.bn)`.
pub fn eucb_forward<T: Real>(
    x: &FeatureMap<T>,
    p: &EucbParams<T>,
) -> Result<(FeatureMap<T>, EucbCache<T>)> {
    let s = x.shape();
    if s.c != p.in_channels() {
        return Err(Error::shape("eucb input channels", p.in_channels(), s.c));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape("eucb spatial size", "h, w >= 1", (s.h, s.w)));
    }
    let up = upsample2x(x, p.upsample_mode)?;
    let dw_out = conv2d(&up, &p.dw)?;
    let (bn_out, bn) = batchnorm(&dw_out, &p.bn)?;
    let relu_out = activation(&bn_out, Activation::Relu)?;
    let out = conv2d(&relu_out, &p.proj)?;
    Ok((
        out,
        EucbCache {
            input_shape: s,
            up,
            dw_out,
            bn,
            bn_out,
            relu_out,
        },
    ))
}

pub fn eucb_backward<T: Real>(
    p: &EucbParams<T>,
    cache: &EucbCache<T>,
    grad_out: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, EucbParams<T>)> {
    let mut grads = p.zeros_like();
    let proj_g = conv2d_backward(&cache.relu_out, &p.proj, grad_out)?;
    grads.proj.accumulate(&proj_g.kernel, proj_g.bias.as_deref());
    let g_bn_out = crate::tensor::activation_backward(
        &cache.bn_out,
        &cache.relu_out,
        Activation::Relu,
        &proj_g.input,
    )?;
    let bn_g = batchnorm_backward(&p.bn, &cache.bn, &g_bn_out)?;
    grads.bn.gamma = bn_g.gamma;
    grads.bn.beta = bn_g.beta;
    let dw_g = conv2d_backward(&cache.up, &p.dw, &bn_g.input)?;
    grads.dw.accumulate(&dw_g.kernel, None);
    let gx = upsample2x_backward(cache.input_shape, p.upsample_mode, &dw_g.input)?;
    debug_assert_eq!(cache.dw_out.shape(), bn_g.input.shape());
    Ok((gx, grads))
}

/// Bare 2× interpolation with no convolutions; the ablation baseline.
pub fn plain_upsample_baseline<T: Real>(
    x: &FeatureMap<T>,
    mode: UpsampleMode,
) -> Result<FeatureMap<T>> {
    upsample2x(x, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BnMode;

    #[test]
    fn doubles_spatial_dims_and_projects_channels() {
        let p = EucbParams::<f32>::init(32, 16, UpsampleMode::Nearest, 1).unwrap();
        let x = FeatureMap::from_fn(Shape4::new(1, 32, 20, 20), |i| (i % 7) as f32 * 0.1);
        let (y, _) = eucb_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 16, 40, 40));
    }

    #[test]
    fn constant_input_passes_through_identity_pipeline() {
        let c = 4;
        let mut p = EucbParams::<f64>::init(c, 1, UpsampleMode::Nearest, 2).unwrap();
        let mut delta = FeatureMap::zeros(p.dw.kernel.shape());
        for ch in 0..c {
            let i = delta.index(ch, 0, 1, 1);
            delta.data_mut()[i] = 1.0;
        }
        p.dw.kernel = delta;
        p.bn.mode = BnMode::Eval;
        p.bn.epsilon = 0.0;
        p.proj.kernel = FeatureMap::filled(p.proj.kernel.shape(), 1.0 / c as f64);
        p.proj.bias = Some(alloc::vec![0.0]);
        let x = FeatureMap::filled(Shape4::new(1, c, 3, 5), 0.75);
        let (y, _) = eucb_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape4::new(1, 1, 6, 10));
        assert!(y.data().iter().all(|&v| (v - 0.75).abs() < 1e-15));
    }

    #[test]
    fn single_pixel_train_mode_is_insufficient() {
        let p = EucbParams::<f32>::init(2, 2, UpsampleMode::Nearest, 3).unwrap();
        let x = FeatureMap::zeros(Shape4::new(1, 2, 1, 1));
        // 1×1 upsamples to 2×2, which is enough
        assert!(eucb_forward(&x, &p).is_ok());
        let empty = FeatureMap::zeros(Shape4::new(0, 2, 1, 1));
        assert!(matches!(
            eucb_forward(&empty, &p),
            Err(Error::InsufficientStatistics { count: 0 })
        ));
    }

    #[test]
    fn eval_mode_is_repeatable() {
        let mut p = EucbParams::<f32>::init(3, 2, UpsampleMode::Bilinear, 4).unwrap();
        p.bn.mode = BnMode::Eval;
        let x = FeatureMap::from_fn(Shape4::new(2, 3, 5, 4), |i| ((i * 37) % 11) as f32 - 5.0);
        let (a, _) = eucb_forward(&x, &p).unwrap();
        let (b, _) = eucb_forward(&x, &p).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn plain_baseline_delegates() {
        let x = FeatureMap::from_vec(Shape4::new(1, 1, 2, 2), alloc::vec![0.0f32, 1.0, 1.0, 0.0]).unwrap();
        let y = plain_upsample_baseline(&x, UpsampleMode::Nearest).unwrap();
        assert_eq!(y, upsample2x(&x, UpsampleMode::Nearest).unwrap());
        assert_eq!(
            y.data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]
        );
    }
}
