//! Attention-enhanced CNN-BiLSTM severity classifier for finger-tapping
//! features, with the landmark-to-feature pipeline and evaluation tools.

pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod recurrent;

pub use error::{Error, Result};
