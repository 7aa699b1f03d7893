pub mod blossom;
pub mod config;
pub mod decoder;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod ground_truth;
pub mod io;
pub mod lattice;
pub mod noise;
pub mod par;
pub mod qwp;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{QecError, Result};
