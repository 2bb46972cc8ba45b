pub mod error;
pub mod mcmc;
pub mod pgw;
pub mod prior;
pub mod ropetest;
pub mod seed;
pub mod simgen;
pub mod tune;

pub use error::{Error, Result};
