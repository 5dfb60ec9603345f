pub mod error;
pub mod tensor;

pub use error::{Error, Result};
pub mod attention;
pub mod cli;
pub mod data;
pub mod embedding;
pub mod encoder;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod task;
pub mod train;
