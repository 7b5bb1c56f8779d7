use alloc::vec;
use alloc::vec::Vec;

use super::{FeatureMap, Shape4};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BnMode {
    #[default]
    Train,
    Eval,
}

/// Per-channel batch normalization parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    pub momentum: T,
    pub mode: BnMode,
}

/// Values saved by the forward pass. `mean`/`var` are the statistics that
/// were actually used (batch statistics in train mode, running ones in eval).
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub mode: BnMode,
    pub normalized: FeatureMap<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads<T> {
    pub input: FeatureMap<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNormState<T> {
    /// Identity affine transform, zero mean / unit variance running stats,
    /// `epsilon = 1e-5`, `momentum = 0.1`.
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::of(1e-5),
            momentum: T::of(0.1),
            mode: BnMode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running estimates. The running variance uses the unbiased estimate.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != BnMode::Train {
            return;
        }
        let m = self.momentum;
        let one = T::one();
        let unbias = if cache.count > 1 {
            T::of(cache.count as f64 / (cache.count - 1) as f64)
        } else {
            one
        };
        for c in 0..self.channels() {
            self.running_mean[c] = (one - m) * self.running_mean[c] + m * cache.mean[c];
            self.running_var[c] = (one - m) * self.running_var[c] + m * cache.var[c] * unbias;
        }
    }
}

/// `y = gamma * (x - mean) / sqrt(var + epsilon) + beta`, per channel.
///
/// The state is not mutated; call [`BatchNormState::update_running`] with the
/// returned cache to advance the running statistics.
pub fn batchnorm<T: Real>(
    x: &FeatureMap<T>,
    s: &BatchNormState<T>,
) -> Result<(FeatureMap<T>, BatchNormCache<T>)> {
    let xs = x.shape();
    if xs.c != s.channels() {
        return Err(Error::shape("batchnorm channels", s.channels(), xs.c));
    }
    x.check_finite("batchnorm input")?;
    let count = xs.n * xs.plane();
    let (mean, var) = match s.mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::InsufficientStatistics { count });
            }
            batch_stats(x)
        }
        BnMode::Eval => (s.running_mean.clone(), s.running_var.clone()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + s.epsilon).sqrt()).collect();
    let mut normalized = FeatureMap::zeros(xs);
    let mut y = FeatureMap::zeros(xs);
    for n in 0..xs.n {
        for c in 0..xs.c {
            let src = x.plane(n, c);
            let (mu, is, g, b) = (mean[c], inv_std[c], s.gamma[c], s.beta[c]);
            for (d, &v) in normalized.plane_mut(n, c).iter_mut().zip(src) {
                *d = (v - mu) * is;
            }
            let xhat = normalized.plane(n, c);
            for (d, &v) in y.plane_mut(n, c).iter_mut().zip(xhat) {
                *d = g * v + b;
            }
        }
    }
    Ok((
        y,
        BatchNormCache {
            mode: s.mode,
            normalized,
            mean,
            var,
            inv_std,
            count,
        },
    ))
}

/// Per-channel mean and biased variance over `(n, h, w)`.
fn batch_stats<T: Real>(x: &FeatureMap<T>) -> (Vec<T>, Vec<T>) {
    let xs = x.shape();
    let count = T::of((xs.n * xs.plane()) as f64);
    let mut mean = vec![T::zero(); xs.c];
    let mut var = vec![T::zero(); xs.c];
    for c in 0..xs.c {
        let mut s = T::zero();
        for n in 0..xs.n {
            s += x.plane(n, c).iter().copied().sum::<T>();
        }
        let mu = s / count;
        let mut q = T::zero();
        for n in 0..xs.n {
            q += x.plane(n, c).iter().map(|&v| (v - mu) * (v - mu)).sum::<T>();
        }
        mean[c] = mu;
        var[c] = q / count;
    }
    (mean, var)
}

pub fn batchnorm_backward<T: Real>(
    s: &BatchNormState<T>,
    cache: &BatchNormCache<T>,
    grad_out: &FeatureMap<T>,
) -> Result<BatchNormGrads<T>> {
    let xs: Shape4 = cache.normalized.shape();
    grad_out.expect_shape("batchnorm_backward grad_out", xs)?;
    let mut gamma = vec![T::zero(); xs.c];
    let mut beta = vec![T::zero(); xs.c];
    for c in 0..xs.c {
        for n in 0..xs.n {
            let go = grad_out.plane(n, c);
            let xhat = cache.normalized.plane(n, c);
            beta[c] += go.iter().copied().sum::<T>();
            gamma[c] += go.iter().zip(xhat).map(|(&g, &h)| g * h).sum::<T>();
        }
    }
    let mut gx = FeatureMap::zeros(xs);
    let m = T::of(cache.count as f64);
    for c in 0..xs.c {
        let scale = s.gamma[c] * cache.inv_std[c];
        for n in 0..xs.n {
            let go = grad_out.plane(n, c);
            let xhat = cache.normalized.plane(n, c);
            let dst = gx.plane_mut(n, c);
            match cache.mode {
                BnMode::Eval => {
                    for (d, &g) in dst.iter_mut().zip(go) {
                        *d = scale * g;
                    }
                }
                BnMode::Train => {
                    // dx = gamma/sigma * (dy - mean(dy) - xhat * mean(dy * xhat))
                    let mean_g = beta[c] / m;
                    let mean_gh = gamma[c] / m;
                    for ((d, &g), &h) in dst.iter_mut().zip(go).zip(xhat) {
                        *d = scale * (g - mean_g - h * mean_gh);
                    }
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: gx,
        gamma,
        beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_identity() {
        let x = FeatureMap::<f64>::from_fn(Shape4::new(2, 3, 2, 2), |i| i as f64 - 7.0);
        let mut s = BatchNormState::new(3);
        s.mode = BnMode::Eval;
        s.epsilon = 0.0;
        let (y, _) = batchnorm(&x, &s).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn train_mode_normalizes_pair() {
        let x = FeatureMap::from_vec(Shape4::new(1, 1, 1, 2), vec![1.0f64, 3.0]).unwrap();
        let s = BatchNormState::new(1);
        let (y, cache) = batchnorm(&x, &s).unwrap();
        assert_eq!(cache.mean[0], 2.0);
        assert_eq!(cache.var[0], 1.0);
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = FeatureMap::from_vec(Shape4::new(1, 1, 1, 2), vec![1.0f64, 3.0]).unwrap();
        let mut s = BatchNormState::new(1);
        let (_, cache) = batchnorm(&x, &s).unwrap();
        s.update_running(&cache);
        assert!((s.running_mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1, 3} is 2
        assert!((s.running_var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn train_mode_needs_two_values() {
        let x = FeatureMap::<f32>::zeros(Shape4::new(1, 2, 1, 1));
        let s = BatchNormState::new(2);
        assert_eq!(
            batchnorm(&x, &s).unwrap_err(),
            Error::InsufficientStatistics { count: 1 }
        );
        let empty = FeatureMap::<f32>::zeros(Shape4::new(0, 2, 4, 4));
        assert!(batchnorm(&empty, &s).is_err());
    }

    #[test]
    fn channel_mismatch() {
        let x = FeatureMap::<f32>::zeros(Shape4::new(1, 2, 2, 2));
        assert!(matches!(
            batchnorm(&x, &BatchNormState::new(3)),
            Err(Error::Shape { .. })
        ));
    }
}
