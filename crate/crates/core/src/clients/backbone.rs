use ndarray::{Array2, ArrayView3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::resize_bilinear;
use crate::store::stable_seed;

/// Native input edge length of the pretrained backbones (VGG16-style).
pub const BACKBONE_INPUT_SIZE: usize = 224;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Taxonomy {
    /// ImageNet object categories.
    Object1000,
    /// Places365 scene categories.
    Place365,
}

impl Taxonomy {
    pub fn output_dim(self) -> usize {
        match self {
            Taxonomy::Object1000 => 1000,
            Taxonomy::Place365 => 365,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Taxonomy::Object1000 => "object-1000",
            Taxonomy::Place365 => "place-365",
        }
    }
}

pub trait ImageBackboneClient: Send + Sync {
    fn taxonomy(&self) -> Taxonomy;

    fn output_dim(&self) -> usize {
        self.taxonomy().output_dim()
    }

    /// Softmax class probabilities for one `H×W×3` frame in [0, 1].
    fn classify_frame(&self, frame: ArrayView3<'_, f32>) -> Result<Vec<f32>>;
}

const GRID: usize = 4;
const POOLED: usize = GRID * GRID * 3;

/// Offline stand-in for a pretrained classifier.
///
/// The frame is resized to the native input size, average-pooled into a 4×4
/// grid of mean colours, and mapped through a fixed seeded linear layer and a
/// softmax. Similar frames therefore get similar probability vectors, which a
/// hash of the pixel bytes would not give.
#[derive(Debug, Clone)]
pub struct StubBackbone {
    taxonomy: Taxonomy,
    /// `output_dim × (POOLED + 1)`; the last column is a bias.
    weights: Array2<f64>,
    gain: f64,
}

impl StubBackbone {
    pub fn new(taxonomy: Taxonomy, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
            b"stub-backbone",
            taxonomy.name().as_bytes(),
            &seed.to_le_bytes(),
        ]));
        let limit = 3f64.sqrt();
        let weights = Array2::from_shape_simple_fn((taxonomy.output_dim(), POOLED + 1), || {
            rng.random_range(-limit..limit)
        });
        Self {
            taxonomy,
            weights,
            gain: 2.0,
        }
    }

    fn pooled(frame: ArrayView3<'_, f32>) -> [f64; POOLED] {
        let (h, w, _) = frame.dim();
        let mut sums = [0f64; POOLED];
        let mut counts = [0usize; GRID * GRID];
        for y in 0..h {
            let gy = y * GRID / h;
            for x in 0..w {
                let cell = gy * GRID + x * GRID / w;
                counts[cell] += 1;
                for c in 0..3 {
                    sums[cell * 3 + c] += frame[[y, x, c]] as f64;
                }
            }
        }
        for (i, s) in sums.iter_mut().enumerate() {
            *s /= counts[i / 3].max(1) as f64;
        }
        sums
    }
}

impl ImageBackboneClient for StubBackbone {
    fn taxonomy(&self) -> Taxonomy {
        self.taxonomy
    }

    fn classify_frame(&self, frame: ArrayView3<'_, f32>) -> Result<Vec<f32>> {
        let (h, w, c) = frame.dim();
        if c != 3 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!(
                "backbone expects an H×W×3 frame, got {h}×{w}×{c}"
            )));
        }
        let resized = resize_bilinear(frame, BACKBONE_INPUT_SIZE, BACKBONE_INPUT_SIZE);
        let pooled = Self::pooled(resized.view());
        let logits: Vec<f64> = self
            .weights
            .rows()
            .into_iter()
            .map(|row| {
                let dot: f64 = pooled.iter().zip(row.iter()).map(|(p, w)| (p - 0.5) * w).sum();
                self.gain * (dot + 0.1 * row[POOLED])
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ok(exps.iter().map(|e| (e / z) as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;

    fn assert_simplex(p: &[f32]) {
        assert!(p.iter().all(|&v| v >= 0.0));
        let s: f64 = p.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() <= 1e-5, "sum {s}");
    }

    #[test]
    fn object_taxonomy_has_1000_outputs() {
        let b = StubBackbone::new(Taxonomy::Object1000, 0);
        let p = b.classify_frame(Array3::from_elem((64, 64, 3), 0.3).view()).unwrap();
        assert_eq!(p.len(), 1000);
        assert_simplex(&p);
    }

    #[test]
    fn place_taxonomy_has_365_outputs() {
        let b = StubBackbone::new(Taxonomy::Place365, 0);
        let p = b.classify_frame(Array3::from_elem((64, 64, 3), 0.7).view()).unwrap();
        assert_eq!(p.len(), 365);
        assert_simplex(&p);
    }

    #[test]
    fn deterministic_and_content_sensitive() {
        let b = StubBackbone::new(Taxonomy::Object1000, 4);
        let f = Array3::from_shape_fn((64, 64, 3), |(y, x, c)| ((y + 2 * x + c) % 7) as f32 / 7.0);
        assert_eq!(b.classify_frame(f.view()).unwrap(), b.classify_frame(f.view()).unwrap());
        let g = Array3::from_elem((64, 64, 3), 0.9f32);
        assert_ne!(b.classify_frame(f.view()).unwrap(), b.classify_frame(g.view()).unwrap());
    }

    #[test]
    fn rejects_non_rgb() {
        let b = StubBackbone::new(Taxonomy::Place365, 0);
        assert!(b.classify_frame(Array3::zeros((8, 8, 1)).view()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn output_is_on_the_simplex(pixels in proptest::collection::vec(0f32..=1.0, 16 * 16 * 3)) {
            let frame = Array3::from_shape_vec((16, 16, 3), pixels).unwrap();
            let b = StubBackbone::new(Taxonomy::Object1000, 1);
            let p = b.classify_frame(frame.view()).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            let s: f64 = p.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-5);
        }
    }
}
