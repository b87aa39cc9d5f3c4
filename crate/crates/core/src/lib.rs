//! Dual-signal training of a small decoder-only language model.
//!
//! The crate turns heterogeneous labeled NLP datasets into a single
//! proposition-judgment format, then trains one transformer with two
//! interleaved objectives: ordinary next-token prediction on raw text and a
//! binary judgment of whether a stated proposition about an instance is true.
//! Everything runs on CPU with a hand-rolled tape-based autodiff so the whole
//! pipeline stays deterministic and dependency-light.

pub mod error;
pub mod eval;
pub mod seeds;
pub mod model;
pub mod synth;
pub mod tokenizer;
pub mod trainer;
pub mod unify;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
