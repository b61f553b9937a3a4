use ndarray::{Array1, Array2, Axis, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_uniform, join, Module, Param, Real, Visitor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected layer `y = act(x W + b)` with `W: in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Real> {
    pub w: Param<T, Ix2>,
    pub b: Param<T, Ix1>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    x: Array2<T>,
    y: Array2<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, output: usize, act: Activation) -> Self {
        let scale = match act {
            Activation::Relu => 6.0,
            Activation::Identity => 3.0,
        };
        Self {
            w: Param::new(fan_in_uniform(rng, (input, output), input, scale)),
            b: Param::new(Array1::zeros(output)),
            act,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn infer(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w.value) + &self.b.value;
        if self.act == Activation::Relu {
            y.mapv_inplace(|v| v.max(T::zero()));
        }
        y
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, DenseCache<T>) {
        let y = self.infer(x);
        (y.clone(), DenseCache { x: x.clone(), y })
    }

    pub fn backward(&mut self, cache: DenseCache<T>, mut dy: Array2<T>) -> Array2<T> {
        if self.act == Activation::Relu {
            dy.zip_mut_with(&cache.y, |d, &y| {
                if y <= T::zero() {
                    *d = T::zero();
                }
            });
        }
        self.w.grad += &cache.x.t().dot(&dy);
        self.b.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.value.t())
    }
}

impl<T: Real> Module<T> for Dense<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.w.visit(&join(prefix, "w"), f);
        self.b.visit(&join(prefix, "b"), f);
    }
}
