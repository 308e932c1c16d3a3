//! Bayesian regression for over- and under-dispersed counts with the
//! mean-parametrized Conway-Maxwell-Poisson (`CMP_mu`) GLM.

pub mod cmp;
pub mod diagnostics;
pub mod error;

pub use error::{Error, Result};
pub mod glm;
mod optim;
pub mod mcmc;
pub mod posterior;
pub mod predictive;
pub mod priors;
pub mod sims;
