pub mod config;
pub mod container;
pub mod corpus;
pub mod crossval;
pub mod error;
pub mod features;
pub mod io;
pub mod labels;
pub mod matrix;
pub mod metrics;
pub mod neural;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod shallow;

pub use error::{Error, Result};
