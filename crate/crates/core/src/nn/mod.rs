//! Minimal neural-network blocks with hand-written backward passes.
//!
//! Layers are generic over the float type so gradient checks can run in
//! `f64` while training runs in `f32`. Every layer follows the same pattern:
//! `forward` returns the output and a cache, `backward` consumes the cache
//! and the upstream gradient, accumulates parameter gradients and returns
//! the gradient with respect to the input.

mod adam;
mod convlstm;
mod dense;
mod lstm;

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array, Array2, Dimension, ShapeBuilder};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use adam::{Adam, AdamConfig};
pub use convlstm::{col2im, im2col, ConvLstm, ConvLstmCache};
pub use dense::{Activation, Dense, DenseCache};
pub use lstm::{Lstm, LstmCache};

pub trait Real:
    Float
    + FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits the float type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Parameter visitor: `(name, shape, values, grads)`.
pub type Visitor<'a, T> = dyn FnMut(&str, &[usize], &mut [T], &mut [T]) + 'a;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T, D: Dimension> {
    pub value: Array<T, D>,
    pub grad: Array<T, D>,
}

impl<T: Real, D: Dimension> Param<T, D> {
    pub fn new(value: Array<T, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn visit(&mut self, name: &str, f: &mut Visitor<'_, T>) {
        let shape = self.value.shape().to_vec();
        let value = self.value.as_slice_mut().expect("parameters are contiguous");
        let grad = self.grad.as_slice_mut().expect("gradients are contiguous");
        f(name, &shape, value, grad);
    }
}

pub trait Module<T: Real> {
    fn visit_params(&mut self, prefix: &str, f: &mut Visitor<'_, T>);

    fn zero_grad(&mut self) {
        self.visit_params("", &mut |_, _, _, g| g.fill(T::zero()));
    }

    fn param_shapes(&mut self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |n, s, _, _| out.push((n.to_string(), s.to_vec())));
        out
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, s, _, _| n += s.iter().product::<usize>());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform in `(-limit, limit)` with `limit = sqrt(scale / fan_in)`.
pub(crate) fn fan_in_uniform<T: Real, Sh>(rng: &mut ChaCha8Rng, shape: Sh, fan_in: usize, scale: f64) -> Array<T, Sh::Dim>
where
    Sh: ShapeBuilder,
{
    let limit = (scale / fan_in.max(1) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || T::lit(rng.random_range(-limit..limit)))
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.iter().cloned().fold(T::zero(), |a, b| a + b);
        row.mapv_inplace(|v| v / z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_handles_large_logits() {
        let p = softmax_rows(&array![[1000.0f64, 1000.0], [0.0, -1000.0]]);
        assert!((p[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((p[[1, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for x in [-30.0f64, -1.0, 0.0, 2.5, 40.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }
}
