//! Few-shot glyph generation: network blocks, cross-attention style
//! aggregation, procedural training data, GAN training and evaluation.

pub mod checkpoint;
pub mod error;
pub mod evalviz;
pub mod fontnet;
pub mod glyphsynth;
pub mod nnblocks;
pub mod params;
pub mod sam;
pub mod trainer;

pub use error::{CoreError, Result};
