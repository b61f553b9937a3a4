use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::store::{self, stable_seed};

pub const EMBEDDING_DIM: usize = 100;

/// Token → vector table. Unknown tokens look up as the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    zero: Vec<f32>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            zero: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "embedding of length {} in a {}-dimensional table",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn lookup(&self, token: &str) -> &[f32] {
        self.vectors.get(token).map_or(&self.zero, Vec::as_slice)
    }

    /// Parses the text format: one token per line followed by `dim`
    /// space-separated decimal floats.
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut table = Self::new(dim);
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let vector = parts
                .map(|p| {
                    p.parse::<f32>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad float '{p}': {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if vector.len() != dim {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("token '{token}' has {} values, expected {dim}", vector.len()),
                });
            }
            table.vectors.insert(token.to_string(), vector);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = store::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            line: 0,
            message: format!("embedding file is not UTF-8: {e}"),
        })?;
        Self::parse(&text, EMBEDDING_DIM)
    }

    /// Serialises in the text format with tokens sorted, so output is stable.
    pub fn to_text(&self) -> String {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = String::new();
        for t in tokens {
            out.push_str(t);
            for v in &self.vectors[t] {
                write!(out, " {v}").expect("writing to a String cannot fail");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        store::atomic_write(path, self.to_text().as_bytes())
    }

    /// Offline table assigning each token a seeded pseudo-random vector.
    pub fn hashed<'a>(tokens: impl IntoIterator<Item = &'a str>, dim: usize, seed: u64) -> Self {
        let mut table = Self::new(dim);
        for t in tokens {
            if table.vectors.contains_key(t) {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(&[
                b"hashed-embedding",
                &seed.to_le_bytes(),
                t.as_bytes(),
            ]));
            let v = (0..dim).map(|_| rng.random_range(-0.5f32..0.5)).collect();
            table.vectors.insert(t.to_string(), v);
        }
        table
    }
}

pub fn lookup<'a>(table: &'a WordEmbeddingTable, token: &str) -> &'a [f32] {
    table.lookup(token)
}
