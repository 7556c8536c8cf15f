//! Interpretable bag-of-objects image representations, a small conditioned
//! LSTM caption generator trained from scratch, caption evaluation metrics
//! (BLEU, ROUGE-L, CIDEr) and the analysis suite built on top of them
//! (k-NN matching, masking sweeps, category ablation, rank correlations).
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation over
//! owned data. File formats, the CLI and anything touching the OS live in
//! the companion `boocap-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod captioner;
pub mod corpus;
pub mod fmath;
pub mod metrics;
pub mod repr;
pub mod rng;

pub use corpus::{CaptionSet, CategoryTable, Corpus, ObjectInstance, Scene, Splits, Vocabulary};
pub use repr::{ReprSchema, ReprVector};

/// COCO-style integer image identifier.
pub type ImageId = i64;
/// COCO-style integer category identifier.
pub type CategoryId = i64;
