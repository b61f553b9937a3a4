//! Frame conversion and bilinear resizing.

use ndarray::{Array3, ArrayView3};

/// RGB24 bytes (row-major) to an `H×W×3` array scaled to [0, 1].
pub fn rgb24_to_unit(bytes: &[u8], width: usize, height: usize) -> Array3<f32> {
    debug_assert_eq!(bytes.len(), width * height * 3);
    Array3::from_shape_vec(
        (height, width, 3),
        bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    )
    .expect("rgb24 buffer matches its declared size")
}

/// Bilinear resize with half-pixel centers (edge samples clamp).
pub fn resize_bilinear(src: ArrayView3<'_, f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (in_h, in_w, ch) = src.dim();
    if in_h == out_h && in_w == out_w {
        return src.to_owned();
    }
    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f32 / out_len as f32;
        (0..out_len)
            .map(|o| {
                let pos = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(in_len - 1);
                let hi = (lo + 1).min(in_len - 1);
                (lo, hi, pos - lo as f32)
            })
            .collect()
    };
    let rows = axis(out_h, in_h);
    let cols = axis(out_w, in_w);
    let mut out = Array3::<f32>::zeros((out_h, out_w, ch));
    for (y, &(y0, y1, fy)) in rows.iter().enumerate() {
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for c in 0..ch {
                let top = src[[y0, x0, c]] * (1.0 - fx) + src[[y0, x1, c]] * fx;
                let bot = src[[y1, x0, c]] * (1.0 - fx) + src[[y1, x1, c]] * fx;
                out[[y, x, c]] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}
