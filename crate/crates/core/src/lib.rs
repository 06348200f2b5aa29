//! Deterministic, model-free building blocks for handwritten text recognition
//! pipelines on Devanagari material.
//!
//! The crate covers the data side of an HTR system end to end:
//!
//! - [`textnorm`]: rule-driven transcription cleaning and zero-width stripping.
//! - [`metrics`]: edit alignment, CER, length-weighted CER, exact-match accuracy.
//! - [`tokenizer`]: character- and byte-level BPE training and encoding.
//! - [`imaging`]: grayscale raster primitives and Otsu binarization.
//! - [`augment`]: the 20-operator augmentation suite, the synthetic noise
//!   pipeline and dataset multiplicity expansion.
//! - [`synthgen`]: line rendering from glyph atlases and synthetic corpus creation.
//! - [`decode`]: greedy, beam, contrastive and sampling decoders over a pluggable [`decode::Scorer`].
//! - [`analysis`]: confusion matrices, error shares, CER histograms and token uncertainty.
//! - [`pipeline`]: manifests, seeded splits, run configuration and the end-to-end run.

pub mod analysis;
pub mod augment;
pub mod decode;
mod error;
pub mod imaging;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synthgen;
pub mod textnorm;
pub mod tokenizer;

pub use error::{Error, Result};
