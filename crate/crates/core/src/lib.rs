//! Knowledge-grounded pre-training for data-to-text generation.
//!
//! The crate is `no_std` (with `alloc`): everything here is pure computation
//! over in-memory values. File formats, the command-line workflow and thread
//! pools live in the companion `kgpt` crate.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod record;
pub mod synth;
pub mod tokenizer;
pub mod training;
