use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis, Ix1, Ix2, Zip};
use rand_chacha::ChaCha8Rng;

use super::{fan_in_uniform, join, sigmoid, Module, Param, Real, Visitor};

/// Single-layer LSTM returning the last hidden state.
///
/// Gate blocks are laid out `[input | forget | cell | output]` along the
/// `4 × units` axis of every weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T: Real> {
    pub units: usize,
    pub wx: Param<T, Ix2>,
    pub wh: Param<T, Ix2>,
    pub b: Param<T, Ix1>,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    /// Inputs in time-major rows: row `t * batch + b`.
    x_tm: Array2<T>,
    steps: Vec<Step<T>>,
    batch: usize,
}

#[derive(Debug, Clone)]
struct Step<T> {
    h_prev: Array2<T>,
    c_prev: Array2<T>,
    /// Activated gates `[i | f | g | o]`.
    gates: Array2<T>,
    tanh_c: Array2<T>,
}

/// Applies the gate nonlinearities in place and returns the new `(c, h, tanh c)`.
pub(super) fn lstm_cell<T: Real>(z: &mut Array2<T>, c_prev: ArrayView2<'_, T>, u: usize) -> (Array2<T>, Array2<T>, Array2<T>) {
    z.slice_mut(s![.., 0..2 * u]).mapv_inplace(sigmoid);
    z.slice_mut(s![.., 2 * u..3 * u]).mapv_inplace(T::tanh);
    z.slice_mut(s![.., 3 * u..]).mapv_inplace(sigmoid);
    let mut c = Array2::zeros(c_prev.raw_dim());
    Zip::from(&mut c)
        .and(&c_prev)
        .and(z.slice(s![.., 0..u]))
        .and(z.slice(s![.., u..2 * u]))
        .and(z.slice(s![.., 2 * u..3 * u]))
        .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
    let tanh_c = c.mapv(T::tanh);
    let h = &tanh_c * &z.slice(s![.., 3 * u..]);
    (c, h, tanh_c)
}

/// Gate pre-activation gradients for one step; returns `(dz, dc_prev)`.
pub(super) fn lstm_cell_backward<T: Real>(
    gates: &Array2<T>,
    tanh_c: &Array2<T>,
    c_prev: &Array2<T>,
    dh: &Array2<T>,
    dc: &Array2<T>,
    u: usize,
) -> (Array2<T>, Array2<T>) {
    let one = T::one();
    let rows = dh.nrows();
    let mut dz = Array2::zeros((rows, 4 * u));
    let mut dc_prev = Array2::zeros((rows, u));
    for r in 0..rows {
        for k in 0..u {
            let i = gates[[r, k]];
            let f = gates[[r, u + k]];
            let g = gates[[r, 2 * u + k]];
            let o = gates[[r, 3 * u + k]];
            let tc = tanh_c[[r, k]];
            let dhv = dh[[r, k]];
            let dct = dc[[r, k]] + dhv * o * (one - tc * tc);
            dz[[r, k]] = dct * g * i * (one - i);
            dz[[r, u + k]] = dct * c_prev[[r, k]] * f * (one - f);
            dz[[r, 2 * u + k]] = dct * i * (one - g * g);
            dz[[r, 3 * u + k]] = dhv * tc * o * (one - o);
            dc_prev[[r, k]] = dct * f;
        }
    }
    (dz, dc_prev)
}

impl<T: Real> Lstm<T> {
    pub fn new(rng: &mut ChaCha8Rng, input: usize, units: usize) -> Self {
        Self {
            units,
            wx: Param::new(fan_in_uniform(rng, (input, 4 * units), input, 3.0)),
            wh: Param::new(fan_in_uniform(rng, (units, 4 * units), units, 3.0)),
            b: Param::new(Array1::zeros(4 * units)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.wx.value.nrows()
    }

    /// `x: batch × time × input` → last hidden state `batch × units`.
    pub fn forward(&self, x: &Array3<T>) -> (Array2<T>, LstmCache<T>) {
        let (batch, time, input) = x.dim();
        let u = self.units;
        let x_tm = x
            .view()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((time * batch, input))
            .expect("contiguous time-major input");
        let xw = x_tm.dot(&self.wx.value);
        let mut h = Array2::zeros((batch, u));
        let mut c = Array2::zeros((batch, u));
        let mut steps = Vec::with_capacity(time);
        for t in 0..time {
            let mut z = h.dot(&self.wh.value) + xw.slice(s![t * batch..(t + 1) * batch, ..]) + &self.b.value;
            let (c_new, h_new, tanh_c) = lstm_cell(&mut z, c.view(), u);
            steps.push(Step {
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates: z,
                tanh_c,
            });
        }
        (h, LstmCache { x_tm, steps, batch })
    }

    pub fn infer(&self, x: &Array3<T>) -> Array2<T> {
        self.forward(x).0
    }

    /// Takes the gradient of the last hidden state; returns `d x`.
    pub fn backward(&mut self, cache: LstmCache<T>, dh_last: Array2<T>) -> Array3<T> {
        let u = self.units;
        let batch = cache.batch;
        let time = cache.steps.len();
        let mut dz_all = Array2::zeros((time * batch, 4 * u));
        let mut h_prev_all = Array2::zeros((time * batch, u));
        let mut dh = dh_last;
        let mut dc = Array2::zeros((batch, u));
        for (t, step) in cache.steps.iter().enumerate().rev() {
            let (dz, dc_prev) = lstm_cell_backward(&step.gates, &step.tanh_c, &step.c_prev, &dh, &dc, u);
            dh = dz.dot(&self.wh.value.t());
            dc = dc_prev;
            dz_all.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&dz);
            h_prev_all.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&step.h_prev);
        }
        self.wh.grad += &h_prev_all.t().dot(&dz_all);
        self.wx.grad += &cache.x_tm.t().dot(&dz_all);
        self.b.grad += &dz_all.sum_axis(Axis(0));
        let dx_tm = dz_all.dot(&self.wx.value.t());
        dx_tm
            .into_shape_with_order((time, batch, self.input_dim()))
            .expect("time-major gradient")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
    }
}

impl<T: Real> Module<T> for Lstm<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.wx.visit(&join(prefix, "wx"), f);
        self.wh.visit(&join(prefix, "wh"), f);
        self.b.visit(&join(prefix, "b"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn output_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Lstm::<f64>::new(&mut rng, 3, 5);
        let x = Array3::from_shape_fn((2, 7, 3), |(b, t, i)| (b + t * i) as f64 * 0.1);
        let h = l.infer(&x);
        assert_eq!(h.dim(), (2, 5));
        assert!(h.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn zero_input_with_zero_bias_stays_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Lstm::<f64>::new(&mut rng, 2, 4);
        assert!(l.infer(&Array3::zeros((3, 5, 2))).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = Lstm::<f64>::new(&mut rng, 2, 3);
        let x = Array3::from_shape_fn((2, 4, 2), |(b, t, i)| ((b * 7 + t * 3 + i) % 5) as f64 * 0.2 - 0.4);
        let both = l.infer(&x);
        let first = l.infer(&x.slice(s![0..1, .., ..]).to_owned());
        for k in 0..3 {
            assert!((both[[0, k]] - first[[0, k]]).abs() < 1e-12);
        }
    }
}
