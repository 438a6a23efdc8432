//! Instance-optimal identity testing for discrete distributions.

pub mod adversary;
pub mod error;
pub mod harness;
pub mod hypothesis;
pub mod io;
pub mod numerics;
mod optim;
pub mod optimizer;
pub mod oracle;
pub mod testers;

pub use error::{Error, Result};
