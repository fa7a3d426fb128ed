//! File formats, dataset directories and the command-line pipeline around
//! [`amnar_core`].

pub mod cli;
pub mod error;
pub mod features;
pub mod files;
pub mod records;
pub mod store;
pub mod timeline;

pub use error::{Error, Result};
