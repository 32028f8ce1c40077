pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod model;
pub mod nn;
pub mod objective;
pub mod seed;
pub mod synth;
pub mod training;
pub mod verify;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
