//! Error detection for procedural activities.
//!
//! Executed action segments are mapped onto a task graph to find every valid
//! next action; a small causal network reconstructs a normal feature for each
//! candidate from the preceding frames, and the ongoing action is flagged when
//! it sits farther than a per-class calibrated threshold from all of them.
//!
//! The crate is `no_std` (with `alloc`); file formats and the command line live
//! in the companion `amnar` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod detector;
mod error;
pub mod eval;
pub mod graph;
mod math;
pub mod papb;
pub mod rrb;
pub mod synth;

pub use error::{Error, Result};

/// Action-class identifier. Classes are numbered `0..num_classes`.
pub type ClassId = u32;
