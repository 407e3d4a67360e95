//! Sparse recovery with sup-norm guarantees under oblivious, adaptive and
//! partially adaptive measurement models.

pub mod adversarial;
pub mod error;
pub mod harness;
pub mod io;
pub mod linops;
pub mod metrics;
pub mod model;
pub mod padaptive;
pub mod recovery;
pub mod ripcert;
pub mod seed;

pub use error::{Error, Result};
