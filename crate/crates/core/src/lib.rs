//! Snore-based user recognition.
//!
//! An MFCC front-end ([`dsp`]) feeds three recognizers: per-subject Gaussian
//! mixtures ([`gmm`]), mixtures MAP-adapted from a universal background
//! model ([`ubm`]), and embeddings from a frame-level neural classifier
//! ([`embedder`]). [`recognizer`] handles enrollment registries,
//! identification, verification and the evaluation metrics; [`pipeline`]
//! runs the whole enroll/test protocol over a corpus manifest ([`dataset`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod dsp;
pub mod embedder;
pub mod error;
pub mod gmm;
pub mod pipeline;
pub mod recognizer;
pub mod ubm;
pub mod wav;

pub use error::{Error, Result};
