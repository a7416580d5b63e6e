//! Synthetic rPPG benchmark, physiological video editing, pulse extraction
//! and causal-probing training.

pub mod clip;
pub mod color;
pub mod editor;
pub mod eval;
mod error;
pub mod extractor;
pub mod signal;
pub mod synth;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use rppg_autodiff as autodiff;
