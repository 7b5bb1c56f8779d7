//! Adam with bias correction and no learning-rate schedule.

use alloc::vec::Vec;

use super::config::AdamConfig;
use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub step: u64,
    /// First and second moments, one vector per parameter tensor.
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<P: Parameters<T>>(cfg: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<T>> = params
            .tensors()
            .iter()
            .map(|t| alloc::vec![T::zero(); t.data.len()])
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update of `params` from `grads` (same structure).
    pub fn apply<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let g = grads.tensors();
        let mut p = params.tensors_mut();
        if p.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::shape("adam tensor count", self.m.len(), p.len()));
        }
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - libm::pow(c.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, self.step as f64);
        for (i, param) in p.iter_mut().enumerate() {
            let (m, v, grad) = (&mut self.m[i], &mut self.v[i], g[i].data);
            if grad.len() != param.len() || m.len() != param.len() {
                return Err(Error::shape("adam tensor length", param.len(), grad.len()));
            }
            for j in 0..param.len() {
                let gj = grad[j].as_f64();
                let mj = c.beta1 * m[j].as_f64() + (1.0 - c.beta1) * gj;
                let vj = c.beta2 * v[j].as_f64() + (1.0 - c.beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let update = c.lr * (mj / bc1) / (libm::sqrt(vj / bc2) + c.eps);
                param[j] = T::of(param[j].as_f64() - update);
            }
        }
        Ok(())
    }
}
