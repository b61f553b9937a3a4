use ndarray::{s, Array1, Array2, Array4, Array5, ArrayView4, Axis, Ix1, Ix2};
use rand_chacha::ChaCha8Rng;

use super::lstm::{lstm_cell, lstm_cell_backward};
use super::{fan_in_uniform, join, Module, Param, Real, Visitor};

/// Unfolds `B×H×W×C` into `(B·H·W) × (kh·kw·C)` patches with same padding.
/// Column order is `((dy · kw) + dx) · C + c`.
pub fn im2col<T: Real>(x: ArrayView4<'_, T>, kh: usize, kw: usize) -> Array2<T> {
    let (b, h, w, c) = x.dim();
    let (py, px) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Array2::zeros((b * h * w, kh * kw * c));
    for n in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = (n * h + y) * w + xx;
                for dy in 0..kh {
                    let sy = y as isize + dy as isize - py as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let sx = xx as isize + dx as isize - px as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let col = (dy * kw + dx) * c;
                        out.slice_mut(s![row, col..col + c])
                            .assign(&x.slice(s![n, sy as usize, sx as usize, ..]));
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto `B×H×W×C`.
pub fn col2im<T: Real>(cols: &Array2<T>, dims: (usize, usize, usize, usize), kh: usize, kw: usize) -> Array4<T> {
    let (b, h, w, c) = dims;
    let (py, px) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Array4::zeros(dims);
    for n in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = (n * h + y) * w + xx;
                for dy in 0..kh {
                    let sy = y as isize + dy as isize - py as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for dx in 0..kw {
                        let sx = xx as isize + dx as isize - px as isize;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let col = (dy * kw + dx) * c;
                        let mut dst = out.slice_mut(s![n, sy as usize, sx as usize, ..]);
                        dst += &cols.slice(s![row, col..col + c]);
                    }
                }
            }
        }
    }
    out
}

/// Convolutional LSTM over `batch × time × H × W × C` frame sequences.
///
/// Gates are `conv(x_t, Wx) + conv(h_{t-1}, Wh) + b` with same padding; the
/// descriptor is the spatial mean of the last hidden state, one value per
/// filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstm<T: Real> {
    pub filters: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub wx: Param<T, Ix2>,
    pub wh: Param<T, Ix2>,
    pub b: Param<T, Ix1>,
}

#[derive(Debug, Clone)]
pub struct ConvLstmCache<T> {
    dims: (usize, usize, usize, usize, usize),
    steps: Vec<ConvStep<T>>,
}

#[derive(Debug, Clone)]
struct ConvStep<T> {
    x_cols: Array2<T>,
    h_cols: Array2<T>,
    c_prev: Array2<T>,
    gates: Array2<T>,
    tanh_c: Array2<T>,
}

impl<T: Real> ConvLstm<T> {
    pub fn new(rng: &mut ChaCha8Rng, in_channels: usize, filters: usize, kernel: (usize, usize)) -> Self {
        let (kh, kw) = kernel;
        let fan_x = kh * kw * in_channels;
        let fan_h = kh * kw * filters;
        Self {
            filters,
            in_channels,
            kernel,
            wx: Param::new(fan_in_uniform(rng, (fan_x, 4 * filters), fan_x, 3.0)),
            wh: Param::new(fan_in_uniform(rng, (fan_h, 4 * filters), fan_h, 3.0)),
            b: Param::new(Array1::zeros(4 * filters)),
        }
    }

    pub fn forward(&self, x: &Array5<T>) -> (Array2<T>, ConvLstmCache<T>) {
        let (batch, time, h, w, c) = x.dim();
        let (kh, kw) = self.kernel;
        let u = self.filters;
        let rows = batch * h * w;
        let mut hid = Array2::zeros((rows, u));
        let mut cell = Array2::zeros((rows, u));
        let mut steps = Vec::with_capacity(time);
        for t in 0..time {
            let x_cols = im2col(x.slice(s![.., t, .., .., ..]), kh, kw);
            let h_img = hid
                .view()
                .into_shape_with_order((batch, h, w, u))
                .expect("hidden state is contiguous");
            let h_cols = im2col(h_img, kh, kw);
            let mut z = x_cols.dot(&self.wx.value) + h_cols.dot(&self.wh.value) + &self.b.value;
            let (c_new, h_new, tanh_c) = lstm_cell(&mut z, cell.view(), u);
            steps.push(ConvStep {
                x_cols,
                h_cols,
                c_prev: std::mem::replace(&mut cell, c_new),
                gates: z,
                tanh_c,
            });
            hid = h_new;
        }
        let pooled = hid
            .into_shape_with_order((batch, h * w, u))
            .expect("hidden state is contiguous")
            .mean_axis(Axis(1))
            .expect("spatial extent is non-empty");
        (
            pooled,
            ConvLstmCache {
                dims: (batch, time, h, w, c),
                steps,
            },
        )
    }

    pub fn infer(&self, x: &Array5<T>) -> Array2<T> {
        self.forward(x).0
    }

    /// Takes the gradient of the pooled descriptor; returns `d x`.
    pub fn backward(&mut self, cache: ConvLstmCache<T>, d_pooled: Array2<T>) -> Array5<T> {
        let (batch, time, h, w, c) = cache.dims;
        let (kh, kw) = self.kernel;
        let u = self.filters;
        let area = T::lit((h * w) as f64);
        let mut dh = Array2::zeros((batch * h * w, u));
        for n in 0..batch {
            for p in 0..h * w {
                for k in 0..u {
                    dh[[n * h * w + p, k]] = d_pooled[[n, k]] / area;
                }
            }
        }
        let mut dc = Array2::zeros((batch * h * w, u));
        let mut dx = Array5::zeros((batch, time, h, w, c));
        for (t, step) in cache.steps.into_iter().enumerate().rev() {
            let (dz, dc_prev) = lstm_cell_backward(&step.gates, &step.tanh_c, &step.c_prev, &dh, &dc, u);
            self.wx.grad += &step.x_cols.t().dot(&dz);
            self.wh.grad += &step.h_cols.t().dot(&dz);
            self.b.grad += &dz.sum_axis(Axis(0));
            let dx_t = col2im(&dz.dot(&self.wx.value.t()), (batch, h, w, c), kh, kw);
            dx.slice_mut(s![.., t, .., .., ..]).assign(&dx_t);
            dh = col2im(&dz.dot(&self.wh.value.t()), (batch, h, w, u), kh, kw)
                .into_shape_with_order((batch * h * w, u))
                .expect("contiguous gradient");
            dc = dc_prev;
        }
        dx
    }
}

impl<T: Real> Module<T> for ConvLstm<T> {
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
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        let x = Array4::from_shape_fn((2, 4, 3, 2), |(a, b, c, d)| ((a * 13 + b * 7 + c * 3 + d) % 11) as f64 - 5.0);
        let y = Array2::from_shape_fn((2 * 4 * 3, 9 * 2), |(i, j)| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let lhs: f64 = (&im2col(x.view(), 3, 3) * &y).sum();
        let rhs: f64 = (&x * &col2im(&y, (2, 4, 3, 2), 3, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn center_tap_of_identity_patch() {
        let x = Array4::from_shape_fn((1, 3, 3, 1), |(_, y, x, _)| (y * 3 + x) as f64);
        let cols = im2col(x.view(), 3, 3);
        // Centre pixel sees the whole image; corner sees zero padding.
        assert_eq!(cols.row(4).to_vec(), (0..9).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(cols[[0, 0]], 0.0);
        assert_eq!(cols[[0, 4]], 0.0);
    }

    #[test]
    fn descriptor_has_one_value_per_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = ConvLstm::<f64>::new(&mut rng, 3, 6, (3, 3));
        let x = Array5::from_shape_fn((2, 3, 5, 4, 3), |(a, b, c, d, e)| ((a + b + c * d + e) % 4) as f64 * 0.25);
        assert_eq!(l.infer(&x).dim(), (2, 6));
    }
}
