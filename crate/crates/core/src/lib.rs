pub mod cli;
pub mod config;
pub mod confound;
pub mod density;
pub mod detector;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod record;
pub mod synth;
pub mod validators;

pub use error::{Error, Result};
