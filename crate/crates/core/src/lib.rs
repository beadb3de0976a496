//! Distributionally robust learning under repeated retention dynamics.
//!
//! A population is a mixture of latent groups. Each round a model is fit on
//! the current mixture, each group incurs a risk, and group sizes evolve
//! according to how well they are served. Empirical risk minimization can
//! amplify an initial imbalance until a minority disappears; minimizing the
//! worst case over a chi-square ball keeps every group's risk controlled.

pub mod cli;
pub mod dro;
pub mod dynamics;
pub mod error;
pub mod models;
pub mod population;
pub mod stability;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
