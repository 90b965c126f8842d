//! Graph-to-MLP knowledge distillation: a GCN teacher distilled into an
//! AdaBoost-weighted ensemble of MLP students.

pub mod boost;
pub mod error;
pub mod graph;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod objectives;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
