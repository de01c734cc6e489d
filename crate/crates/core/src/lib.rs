//! Post-hoc analysis of multi-label classifiers trained with imbalance-aware
//! losses: loss weights and gradients, class activation maps, box alignment,
//! concept dissection and ranking metrics.

pub mod alignment;
pub mod cam;
pub mod cli;
pub mod dissection;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod selftest;
pub mod synthetic;
pub mod tensor_io;

pub use error::{Error, Result};
