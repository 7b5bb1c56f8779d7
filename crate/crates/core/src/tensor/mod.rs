//! Dense rank-4 feature maps and the operations the blocks are built from.
//!
//! Every operation comes as a forward function plus an explicit backward
//! function. There is no tape: blocks keep whatever intermediate values their
//! backward pass needs and call the op backwards in reverse order. No op
//! broadcasts; shapes must match exactly.

mod batchnorm;
mod conv;
mod pointwise;
mod upsample;

use alloc::vec;
use alloc::vec::Vec;

pub use batchnorm::{batchnorm, batchnorm_backward, BatchNormCache, BatchNormGrads, BatchNormState, BnMode};
pub use conv::{
    conv2d, conv2d_backward, conv2d_strided, conv2d_strided_backward, ConvGrads, ConvParams,
};
pub use pointwise::{
    activation, activation_backward, concat_channels, eltwise, eltwise_backward, split_channels,
    sigmoid, Activation, Eltwise,
};
pub use upsample::{upsample2x, upsample2x_backward, UpsampleMode};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dimensions of a feature map: batch, channels, rows, columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

/// Row-major `(n, c, h, w)` array with an optional gradient of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    shape: Shape4,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(shape: Shape4) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape4, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape("FeatureMap::from_vec", shape.len(), data.len()));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            shape,
            data: (0..shape.len()).map(&mut f).collect(),
            grad: None,
        }
    }

    #[inline]
    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("FeatureMap::set_grad", self.data.len(), grad.len()));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn take_grad(&mut self) -> Option<Vec<T>> {
        self.grad.take()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    /// The `h × w` plane of channel `c` in batch item `n`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Errors on the first NaN or infinity, naming the tensor.
    pub fn check_finite(&self, tensor: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { tensor, index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }

    /// Copy of batch items `start..start + count`.
    pub fn batch_slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.shape.n {
            return Err(Error::shape("FeatureMap::batch_slice", self.shape.n, start + count));
        }
        let item = self.shape.c * self.shape.plane();
        let shape = Shape4 { n: count, ..self.shape };
        Ok(Self {
            shape,
            data: self.data[start * item..(start + count) * item].to_vec(),
            grad: None,
        })
    }

    /// Stacks equally shaped maps along the batch axis.
    pub fn stack(items: &[FeatureMap<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Config("cannot stack an empty list".into()))?
            .shape;
        let mut data = Vec::with_capacity(items.iter().map(|m| m.len()).sum());
        let mut n = 0;
        for m in items {
            if (m.shape.c, m.shape.h, m.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::shape("FeatureMap::stack", first, m.shape));
            }
            n += m.shape.n;
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            shape: Shape4 { n, ..first },
            data,
            grad: None,
        })
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: Shape4) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(op, shape, self.shape));
        }
        Ok(())
    }
}

/// Element-wise `acc += other`.
pub(crate) fn accumulate<T: Real>(acc: &mut [T], other: &[T]) {
    debug_assert_eq!(acc.len(), other.len());
    for (a, &b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}
