//! Unnormalized log-posterior: family log-likelihood plus log-prior.

use nalgebra::DVector;

use crate::cmp::SeriesControl;
use crate::glm::{log_likelihood, Dataset, Family};
use crate::priors::{log_prior, PriorSpec};

/// Everything the sampler needs to evaluate the posterior kernel.
///
/// The CMP_mu likelihood factor uses `(y_i!)^(-nu)`, as in the pmf definition.
#[derive(Debug, Clone)]
pub struct PosteriorContext {
    pub data: Dataset,
    pub family: Family,
    pub priors: PriorSpec,
    pub series: SeriesControl,
}

impl PosteriorContext {
    pub fn new(data: Dataset, family: Family, priors: PriorSpec) -> Self {
        Self {
            data,
            family,
            priors,
            series: SeriesControl::default(),
        }
    }

    pub fn log_kernel(&self, beta: &DVector<f64>, disp: f64) -> f64 {
        log_posterior_kernel(beta, disp, self)
    }
}

/// `log p(y | beta, disp) + log p(beta) + log p(disp)`, or `-inf` for any
/// state outside the support or where the likelihood cannot be evaluated.
///
/// For the Poisson family `disp` is ignored and no dispersion prior is applied.
pub fn log_posterior_kernel(beta: &DVector<f64>, disp: f64, ctx: &PosteriorContext) -> f64 {
    let has_disp = ctx.family.has_dispersion();
    if has_disp && !(disp > 0.0 && disp.is_finite()) {
        return f64::NEG_INFINITY;
    }
    if beta.len() != ctx.data.p() || beta.iter().any(|b| !b.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let prior = if has_disp {
        log_prior(beta, disp, &ctx.priors)
    } else {
        ctx.priors.beta.log_density(beta)
    };
    if !prior.is_finite() {
        return f64::NEG_INFINITY;
    }
    if ctx.data.n() == 0 {
        return prior;
    }
    match log_likelihood(beta, disp, &ctx.data, ctx.family, &ctx.series) {
        Ok(ll) if ll.is_finite() => ll + prior,
        _ => f64::NEG_INFINITY,
    }
}
