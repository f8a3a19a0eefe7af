//! Bayesian inference for epidemic models whose effective contact rate is
//! driven by a diffusion, using adaptive particle-marginal
//! Metropolis-Hastings with EKF-informed proposals, plus EKF,
//! reparametrised particle-Gibbs and iterated-filtering baselines.

pub mod config;
pub mod dynamics;
pub mod ekf;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod mcmc;
pub mod model;
pub mod observation;
pub mod pfilter;
pub mod rng;
pub mod studies;
pub mod surrogate;
pub mod util;

pub use error::{Error, Result};
