pub mod cli;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod eval;
pub mod error;
pub mod lstm;
pub mod model;
pub mod numeric;
pub mod policy;
pub mod predictor;
pub mod rollout;
pub mod segmentation;
pub mod trainer;

pub use config::Config;
pub use error::{Error, ErrorKind, Result};
