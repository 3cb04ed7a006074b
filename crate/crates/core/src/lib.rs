pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod kv;
pub mod manifest;
pub mod map;
pub mod nn;
pub mod priors;
pub mod rng;
pub mod sampling;
pub mod scm;
pub mod selftest;
pub mod synth;

pub use error::{CkmError, Result};
