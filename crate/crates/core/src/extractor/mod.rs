//! Pulse extractors.

pub mod classical;
pub mod network;

pub use classical::{classical_extract, ClassicalMethod};
pub use network::{Extractor, ExtractorConfig};
