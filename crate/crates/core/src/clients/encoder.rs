use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::store::stable_seed;

pub const SENTENCE_DIM: usize = 768;

pub trait SentenceEncoderClient: Send + Sync {
    fn output_dim(&self) -> usize {
        SENTENCE_DIM
    }

    /// Fixed-length document embedding; empty text maps to the zero vector.
    fn encode(&self, text: &str) -> Result<Vec<f32>>;
}

pub fn encode_sentence(client: &dyn SentenceEncoderClient, text: &str) -> Result<Vec<f32>> {
    client.encode(text)
}

/// Hashing encoder: every lowercase word maps to a seeded pseudo-random
/// vector, and a document is the L2-normalised sum of its word vectors.
/// Documents sharing words share direction, a crude stand-in for semantic
/// similarity.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubSentenceEncoder {
    seed: u64,
}

impl StubSentenceEncoder {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn word_vector(&self, word: &str, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
            b"stub-sentence",
            &self.seed.to_le_bytes(),
            word.as_bytes(),
        ]));
        for v in out.iter_mut() {
            *v += rng.random_range(-1.0..1.0);
        }
    }
}

impl SentenceEncoderClient for StubSentenceEncoder {
    fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let lower = text.to_lowercase();
        let mut acc = vec![0f64; SENTENCE_DIM];
        for word in lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
            self.word_vector(word, &mut acc);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(vec![0.0; SENTENCE_DIM]);
        }
        Ok(acc.iter().map(|v| (v / norm) as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero_vector() {
        let e = StubSentenceEncoder::new(0);
        let v = encode_sentence(&e, "").unwrap();
        assert_eq!(v.len(), 768);
        assert!(v.iter().all(|&x| x == 0.0));
        assert!(e.encode(" ,.! ").unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fixed_dimension_and_deterministic() {
        let e = StubSentenceEncoder::new(3);
        let a = e.encode("the latte art here is amazing").unwrap();
        assert_eq!(a.len(), SENTENCE_DIM);
        assert_eq!(a, e.encode("the latte art here is amazing").unwrap());
        assert_ne!(a, e.encode("the stadium crowd").unwrap());
        let norm: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
}
