//! Uniform access to the trainable tensors of a block, in a fixed order.

use alloc::string::String;
use alloc::vec::Vec;

use crate::real::Real;
use crate::tensor::{BatchNormState, ConvParams};

/// A parameter tensor borrowed from a block.
#[derive(Debug)]
pub struct NamedTensor<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [T],
}

pub trait Parameters<T: Real> {
    /// Trainable tensors in a stable order.
    fn tensors(&self) -> Vec<NamedTensor<'_, T>>;

    /// Same tensors, same order, mutably.
    fn tensors_mut(&mut self) -> Vec<&mut [T]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Flattened copy of every parameter.
    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    /// Overwrites every parameter from a flat slice produced by [`flatten`].
    ///
    /// [`flatten`]: Parameters::flatten
    fn assign_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        debug_assert_eq!(offset, flat.len());
    }
}

pub(crate) fn prefixed<'a, T>(prefix: &str, inner: Vec<NamedTensor<'a, T>>) -> Vec<NamedTensor<'a, T>> {
    inner
        .into_iter()
        .map(|mut t| {
            t.name = alloc::format!("{prefix}.{}", t.name);
            t
        })
        .collect()
}

impl<T: Real> Parameters<T> for ConvParams<T> {
    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        let mut out = alloc::vec![NamedTensor {
            name: "kernel".into(),
            dims: self.kernel.shape().dims().to_vec(),
            data: self.kernel.data(),
        }];
        if let Some(b) = &self.bias {
            out.push(NamedTensor {
                name: "bias".into(),
                dims: alloc::vec![b.len()],
                data: b,
            });
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = alloc::vec![self.kernel.data_mut()];
        if let Some(b) = self.bias.as_mut() {
            out.push(b);
        }
        out
    }
}

/// Only the affine parameters are trainable; running statistics are buffers.
impl<T: Real> Parameters<T> for BatchNormState<T> {
    fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        alloc::vec![
            NamedTensor {
                name: "gamma".into(),
                dims: alloc::vec![self.gamma.len()],
                data: &self.gamma,
            },
            NamedTensor {
                name: "beta".into(),
                dims: alloc::vec![self.beta.len()],
                data: &self.beta,
            },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        alloc::vec![&mut self.gamma[..], &mut self.beta[..]]
    }
}
