//! Probing and spectral analysis of numeric representations in transformer
//! language models.

pub mod error;
pub mod fixtures;
pub mod actstore;
pub mod contexts;
pub mod numcore;
pub mod probes;
pub mod spectra;
pub mod toylm;
pub mod trace;

pub use error::{Error, Result};
