use alloc::vec::Vec;

use super::{FeatureMap, Shape4};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Eltwise {
    Mul,
    Add,
}

/// Logistic function with separate branches for the two signs so neither
/// branch exponentiates a large positive number.
#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp_libm())
    } else {
        let e = v.exp_libm();
        e / (T::one() + e)
    }
}

pub fn activation<T: Real>(x: &FeatureMap<T>, kind: Activation) -> Result<FeatureMap<T>> {
    x.check_finite("activation input")?;
    Ok(match kind {
        Activation::Relu => x.map(|v| v.max(T::zero())),
        Activation::Sigmoid => x.map(sigmoid),
    })
}

/// Gradient of an activation. `x` is the forward input, `y` the forward output.
pub fn activation_backward<T: Real>(
    x: &FeatureMap<T>,
    y: &FeatureMap<T>,
    kind: Activation,
    grad_out: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    grad_out.expect_shape("activation_backward grad_out", x.shape())?;
    let data = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (T::one() - s))
            .collect(),
    };
    FeatureMap::from_vec(x.shape(), data)
}

pub fn eltwise<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>, kind: Eltwise) -> Result<FeatureMap<T>> {
    b.expect_shape("eltwise operand", a.shape())?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match kind {
            Eltwise::Mul => x * y,
            Eltwise::Add => x + y,
        })
        .collect();
    FeatureMap::from_vec(a.shape(), data)
}

/// Returns `(grad_a, grad_b)`.
pub fn eltwise_backward<T: Real>(
    a: &FeatureMap<T>,
    b: &FeatureMap<T>,
    kind: Eltwise,
    grad_out: &FeatureMap<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    b.expect_shape("eltwise_backward operand", a.shape())?;
    grad_out.expect_shape("eltwise_backward grad_out", a.shape())?;
    match kind {
        Eltwise::Add => Ok((grad_out.clone(), grad_out.clone())),
        Eltwise::Mul => {
            let ga = eltwise(grad_out, b, Eltwise::Mul)?;
            let gb = eltwise(grad_out, a, Eltwise::Mul)?;
            Ok((ga, gb))
        }
    }
}

/// Concatenates along the channel axis, preserving operand order.
pub fn concat_channels<T: Real>(xs: &[&FeatureMap<T>]) -> Result<FeatureMap<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::Config("concat of an empty list".into()))?
        .shape();
    for x in xs {
        let s = x.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "concat_channels",
                (first.n, first.h, first.w),
                (s.n, s.h, s.w),
            ));
        }
    }
    let c: usize = xs.iter().map(|x| x.shape().c).sum();
    let shape = Shape4::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for x in xs {
            for ch in 0..x.shape().c {
                data.extend_from_slice(x.plane(n, ch));
            }
        }
    }
    FeatureMap::from_vec(shape, data)
}

/// Inverse of [`concat_channels`]: splits into consecutive channel blocks.
pub fn split_channels<T: Real>(x: &FeatureMap<T>, channels: &[usize]) -> Result<Vec<FeatureMap<T>>> {
    let s = x.shape();
    let total: usize = channels.iter().sum();
    if total != s.c {
        return Err(Error::shape("split_channels", s.c, total));
    }
    let mut out = Vec::with_capacity(channels.len());
    let mut offset = 0;
    for &c in channels {
        let shape = Shape4::new(s.n, c, s.h, s.w);
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..s.n {
            for ch in 0..c {
                data.extend_from_slice(x.plane(n, offset + ch));
            }
        }
        out.push(FeatureMap::from_vec(shape, data)?);
        offset += c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn scalar_values() {
        let x = FeatureMap::from_vec(Shape4::new(1, 1, 1, 2), vec![0.0f64, -3.0]).unwrap();
        assert_eq!(activation(&x, Activation::Sigmoid).unwrap().data()[0], 0.5);
        assert_eq!(activation(&x, Activation::Relu).unwrap().data()[1], 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!(sigmoid(-80.0f32) > 0.0);
        assert!((sigmoid(2.0f64) + sigmoid(-2.0f64) - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn concat_preserves_order_and_split_inverts() {
        let parts: Vec<FeatureMap<f32>> = (0..4)
            .map(|k| FeatureMap::filled(Shape4::new(2, 4, 3, 3), k as f32))
            .collect();
        let refs: Vec<&FeatureMap<f32>> = parts.iter().collect();
        let cat = concat_channels(&refs).unwrap();
        assert_eq!(cat.shape(), Shape4::new(2, 16, 3, 3));
        for n in 0..2 {
            for c in 0..16 {
                assert!(cat.plane(n, c).iter().all(|&v| v == (c / 4) as f32));
            }
        }
        let back = split_channels(&cat, &[4, 4, 4, 4]).unwrap();
        assert_eq!(back, parts);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = FeatureMap::<f32>::zeros(Shape4::new(1, 1, 2, 2));
        let b = FeatureMap::<f32>::zeros(Shape4::new(1, 1, 2, 3));
        assert!(concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn eltwise_shape_mismatch() {
        let a = FeatureMap::<f32>::zeros(Shape4::new(1, 1, 2, 2));
        let b = FeatureMap::<f32>::zeros(Shape4::new(1, 2, 2, 2));
        assert!(eltwise(&a, &b, Eltwise::Add).is_err());
    }
}
