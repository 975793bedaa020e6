pub mod checkpoint;
pub mod error;
pub mod flops;
pub mod pipeline;
pub mod primitives;
pub mod report;
pub mod rng;
pub mod scaling;
pub mod state;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
