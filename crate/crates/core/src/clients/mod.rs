//! Adapters for the external learned resources the pipeline depends on.
//!
//! Every adapter is a trait with a deterministic offline stub, so the whole
//! pipeline can run hermetically. Stubs are pure functions of their inputs.

mod backbone;
mod embeddings;
mod encoder;
mod speech;

pub use backbone::{ImageBackboneClient, StubBackbone, Taxonomy, BACKBONE_INPUT_SIZE};
pub use embeddings::{lookup, WordEmbeddingTable, EMBEDDING_DIM};
pub use encoder::{encode_sentence, SentenceEncoderClient, StubSentenceEncoder, SENTENCE_DIM};
pub use speech::{
    transcribe, LiveSpeechClient, LiveSpeechConfig, SpeechToTextClient, StubSpeechClient,
    DEFAULT_LANGUAGE,
};
