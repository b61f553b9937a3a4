//! Multi-modal video scene classification.
//!
//! Videos contribute two modalities: frames sampled at one per second and a
//! speech transcript. Each modality is turned into one of seven feature
//! representations, and the two are combined by early, joint or late fusion.
//! The crate covers the whole path from a corpus manifest to cross-validated
//! metric reports.

pub mod cli;
pub mod clients;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod imageops;
pub mod ingest;
pub mod media;
pub mod nn;
pub mod pipeline;
pub mod store;
pub mod synth;
pub mod textfeat;
pub mod train;
pub mod visfeat;

pub use error::{Error, Result};
