//! Transcript normalisation and the four text representations.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clients::{SentenceEncoderClient, WordEmbeddingTable, EMBEDDING_DIM, SENTENCE_DIM};
use crate::error::{Error, Result};
use crate::ingest::Transcript;
use crate::store;

/// Tokens kept per document by the sequence representations.
pub const MAX_TOKENS: usize = 100;
pub const VOCAB_CAP: usize = 20_000;

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn none() -> Self {
        Self(HashSet::new())
    }

    /// One word per line; blank lines ignored.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = store::read_file(path)?;
        Ok(Self::parse(&String::from_utf8_lossy(&bytes)))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub video_id: String,
    pub tokens: Vec<String>,
}

/// Lowercases, replaces every non-alphanumeric character with a space,
/// splits on whitespace and drops stopwords. Token order is preserved.
pub fn normalize_and_tokenize(raw: &str, stopwords: &Stopwords) -> Vec<String> {
    let cleaned: String = raw
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !stopwords.contains(t))
        .map(str::to_string)
        .collect()
}

pub fn tokenize_transcript(t: &Transcript, stopwords: &Stopwords) -> TokenizedDoc {
    TokenizedDoc {
        video_id: t.video_id.clone(),
        tokens: normalize_and_tokenize(&t.raw_text, stopwords),
    }
}

/// Frequency-ranked vocabulary. Index 0 is reserved for padding and OOV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVocab {
    /// Tokens in index order; token `tokens[i]` has index `i + 1`.
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl CountVocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32 + 1))
            .collect();
        Self { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn index_of(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        store::write_json(path, &self.tokens)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_tokens(store::read_json(path)?))
    }
}

/// Ranks tokens by corpus frequency (ties lexicographic) and keeps `cap`.
pub fn build_count_vocab(training_docs: &[TokenizedDoc], cap: usize) -> Result<CountVocab> {
    if training_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for d in training_docs {
        for t in &d.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(cap);
    Ok(CountVocab::from_tokens(
        ranked.into_iter().map(|(t, _)| t.to_string()).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextKind {
    CountVect,
    W2vPad,
    W2vSum,
    SentBert,
}

impl TextKind {
    pub const ALL: [TextKind; 4] = [
        TextKind::CountVect,
        TextKind::W2vPad,
        TextKind::W2vSum,
        TextKind::SentBert,
    ];

    pub fn shape(self) -> Vec<usize> {
        match self {
            TextKind::CountVect => vec![MAX_TOKENS],
            TextKind::W2vPad => vec![MAX_TOKENS, EMBEDDING_DIM],
            TextKind::W2vSum => vec![EMBEDDING_DIM],
            TextKind::SentBert => vec![SENTENCE_DIM],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TextKind::CountVect => "count_vect",
            TextKind::W2vPad => "w2v_pad",
            TextKind::W2vSum => "w2v_sum",
            TextKind::SentBert => "sent_bert",
        }
    }

    /// Sequence-shaped kinds go through a recurrent encoder.
    pub fn is_sequence(self) -> bool {
        matches!(self, TextKind::CountVect | TextKind::W2vPad)
    }
}

impl fmt::Display for TextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TextKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TextKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown text feature kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature {
    pub kind: TextKind,
    pub video_id: String,
    /// Row-major values of `kind.shape()`; count_vect holds integer indices.
    pub data: Vec<f32>,
    /// Vocabulary size behind a count_vect feature.
    pub vocab_size: Option<usize>,
}

impl TextFeature {
    pub fn new(kind: TextKind, video_id: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = kind.shape().iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{kind} feature needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            kind,
            video_id: video_id.into(),
            data,
            vocab_size: None,
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.kind.shape()
    }
}

/// Vocabulary indices of the first 100 tokens, zero-padded.
pub fn vectorize_count(doc: &TokenizedDoc, vocab: &CountVocab) -> TextFeature {
    let mut data = vec![0f32; MAX_TOKENS];
    for (slot, tok) in data.iter_mut().zip(&doc.tokens) {
        *slot = vocab.index_of(tok) as f32;
    }
    TextFeature {
        kind: TextKind::CountVect,
        video_id: doc.video_id.clone(),
        data,
        vocab_size: Some(vocab.size()),
    }
}

fn check_table(table: &WordEmbeddingTable) -> Result<()> {
    if table.dim() != EMBEDDING_DIM {
        return Err(Error::ShapeMismatch(format!(
            "word embeddings must be {EMBEDDING_DIM}-dimensional, table has {}",
            table.dim()
        )));
    }
    Ok(())
}

/// `100×100`: row i is the embedding of token i; rows past the document are zero.
pub fn embed_w2v_pad(doc: &TokenizedDoc, table: &WordEmbeddingTable) -> Result<TextFeature> {
    check_table(table)?;
    let mut data = vec![0f32; MAX_TOKENS * EMBEDDING_DIM];
    for (row, tok) in data.chunks_exact_mut(EMBEDDING_DIM).zip(&doc.tokens) {
        row.copy_from_slice(table.lookup(tok));
    }
    TextFeature::new(TextKind::W2vPad, doc.video_id.clone(), data)
}

/// Element-wise sum of the embeddings of every token (no truncation).
pub fn embed_w2v_sum(doc: &TokenizedDoc, table: &WordEmbeddingTable) -> Result<TextFeature> {
    check_table(table)?;
    let mut data = vec![0f32; EMBEDDING_DIM];
    for tok in &doc.tokens {
        for (acc, v) in data.iter_mut().zip(table.lookup(tok)) {
            *acc += v;
        }
    }
    TextFeature::new(TextKind::W2vSum, doc.video_id.clone(), data)
}

pub fn encode_sentbert(transcript: &Transcript, client: &dyn SentenceEncoderClient) -> Result<TextFeature> {
    let data = if transcript.raw_text.trim().is_empty() {
        vec![0f32; SENTENCE_DIM]
    } else {
        client.encode(&transcript.raw_text)?
    };
    TextFeature::new(TextKind::SentBert, transcript.video_id.clone(), data)
}
