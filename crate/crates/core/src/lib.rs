//! Joint constellation design, evaluation and simulation for the noncoherent
//! MIMO multiple-access channel.

pub mod cli;
pub mod constructions;
pub mod error;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optimizer;
pub mod pep;
pub mod power;
pub mod rng;
pub mod simulator;

pub use error::{Error, Result};
