//! Alternating Metropolis-Hastings sampler.
//!
//! Each cycle proposes the whole coefficient block from `N(beta_0, S_beta)`
//! and then the dispersion from an exponential with mean equal to its
//! current value. The exponential proposal is asymmetric; its Hastings
//! factor is `q(d0 | d1) / q(d1 | d0) = (d0 / d1) exp(d1 / d0 - d0 / d1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{Family, MleFit};
use crate::posterior::{log_posterior_kernel, PosteriorContext};

/// Orientation of the Hastings factor for the dispersion update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HastingsFactor {
    /// `(d0 / d1) exp(d1 / d0 - d0 / d1)`, the ratio that satisfies detailed balance.
    #[default]
    DetailedBalance,
    /// `(d1 / d0) exp(d1 / d0 - d0 / d1)`. Does not leave the posterior
    /// invariant; only useful to demonstrate that it is wrong.
    Inverted,
}

impl HastingsFactor {
    #[inline]
    pub fn log_factor(&self, d0: f64, d1: f64) -> f64 {
        let ratio = d1 / d0;
        let exponent = ratio - 1.0 / ratio;
        match self {
            HastingsFactor::DetailedBalance => -ratio.ln() + exponent,
            HastingsFactor::Inverted => ratio.ln() + exponent,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Number of stored draws.
    pub n_samples: usize,
    /// Store every `thin`-th cycle.
    pub thin: usize,
    /// Cycles discarded before storing starts. Zero when started at the MLE.
    pub burn_in: usize,
    /// Proposal covariance `S_beta`.
    pub proposal_cov: DMatrix<f64>,
    pub init_beta: DVector<f64>,
    /// Initial dispersion; ignored for the Poisson family.
    pub init_disp: f64,
    pub seed: u64,
    pub hastings: HastingsFactor,
}

impl SamplerConfig {
    /// 1000 draws, thinning 10, started at the MLE with `S_beta` = its covariance.
    pub fn from_mle(fit: &MleFit, seed: u64) -> Self {
        Self {
            n_samples: 1000,
            thin: 10,
            burn_in: 0,
            proposal_cov: fit.cov_hat.clone(),
            init_beta: fit.beta_hat.clone(),
            init_disp: fit.disp_hat.unwrap_or(1.0),
            seed,
            hastings: HastingsFactor::DetailedBalance,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.n_samples == 0 || self.thin == 0 {
            return Err(Error::InvalidParameter("n_samples and thin must be >= 1".into()));
        }
        if self.init_beta.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: self.init_beta.len(),
            });
        }
        if self.proposal_cov.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: self.proposal_cov.nrows(),
            });
        }
        Ok(())
    }
}

/// Settings echoed into the serialized chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub family: Family,
    pub n_samples: usize,
    pub thin: usize,
    pub burn_in: usize,
    pub init_beta: Vec<f64>,
    pub init_disp: Option<f64>,
    pub proposal_cov: Vec<Vec<f64>>,
    pub hastings: HastingsFactor,
}

/// Stored draws, one row per kept state: coefficients, then the dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub draws: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub family: Family,
    pub accepted_beta: usize,
    pub proposed_beta: usize,
    pub accepted_disp: usize,
    pub proposed_disp: usize,
    pub seed: u64,
    pub config: Option<ConfigEcho>,
}

impl Chain {
    /// A chain assembled from stored draws (e.g. read back from disk).
    pub fn from_draws(draws: DMatrix<f64>, column_names: Vec<String>, family: Family, seed: u64) -> Result<Self> {
        let p = column_names.len() - usize::from(family.has_dispersion());
        if draws.ncols() != column_names.len() || column_names.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: column_names.len(),
                found: draws.ncols(),
            });
        }
        if family.has_dispersion() && draws.column(p).iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidParameter("stored dispersion must be positive".into()));
        }
        Ok(Self {
            draws,
            column_names,
            family,
            accepted_beta: 0,
            proposed_beta: 0,
            accepted_disp: 0,
            proposed_disp: 0,
            seed,
            config: None,
        })
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    /// Number of regression coefficients.
    pub fn p(&self) -> usize {
        self.draws.ncols() - usize::from(self.family.has_dispersion())
    }

    pub fn beta(&self, row: usize) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.draws.row(row).iter().take(self.p()).copied())
    }

    /// Dispersion of a stored draw; `1.0` for the Poisson family.
    pub fn disp(&self, row: usize) -> f64 {
        if self.family.has_dispersion() {
            self.draws[(row, self.p())]
        } else {
            1.0
        }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.column(j).iter().copied().collect()
    }

    pub fn accept_rate_beta(&self) -> f64 {
        rate(self.accepted_beta, self.proposed_beta)
    }

    pub fn accept_rate_disp(&self) -> Option<f64> {
        self.family
            .has_dispersion()
            .then(|| rate(self.accepted_disp, self.proposed_disp))
    }

    /// One row per draw, header = coefficient names then the dispersion name.
    pub fn to_csv(&self) -> String {
        let mut out = self.column_names.join(",");
        out.push('\n');
        for row in self.draws.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// JSON envelope with seed, acceptance rates and the configuration echo.
    pub fn to_json(&self) -> String {
        let envelope = ChainEnvelope {
            family: self.family,
            column_names: self.column_names.clone(),
            n_draws: self.len(),
            seed: self.seed,
            accept_rate_beta: self.accept_rate_beta(),
            accept_rate_disp: self.accept_rate_disp(),
            accepted_beta: self.accepted_beta,
            proposed_beta: self.proposed_beta,
            accepted_disp: self.accepted_disp,
            proposed_disp: self.proposed_disp,
            config: self.config.clone(),
        };
        serde_json::to_string_pretty(&envelope).expect("chain envelope serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainEnvelope {
    pub family: Family,
    pub column_names: Vec<String>,
    pub n_draws: usize,
    pub seed: u64,
    pub accept_rate_beta: f64,
    pub accept_rate_disp: Option<f64>,
    pub accepted_beta: usize,
    pub proposed_beta: usize,
    pub accepted_disp: usize,
    pub proposed_disp: usize,
    pub config: Option<ConfigEcho>,
}

fn rate(accepted: usize, proposed: usize) -> f64 {
    if proposed == 0 {
        0.0
    } else {
        accepted as f64 / proposed as f64
    }
}

fn ratio_from_logs(new: f64, old: f64, log_correction: f64) -> f64 {
    if new == f64::NEG_INFINITY {
        0.0
    } else if old == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        (new - old + log_correction).exp()
    }
}

/// Kernel ratio for a symmetric coefficient proposal.
pub fn accept_ratio_beta(beta0: &DVector<f64>, beta1: &DVector<f64>, nu0: f64, ctx: &PosteriorContext) -> f64 {
    if beta0 == beta1 {
        return 1.0;
    }
    let old = log_posterior_kernel(beta0, nu0, ctx);
    let new = log_posterior_kernel(beta1, nu0, ctx);
    ratio_from_logs(new, old, 0.0)
}

/// Kernel ratio times the Hastings factor of the exponential dispersion proposal.
pub fn accept_ratio_nu(beta0: &DVector<f64>, nu0: f64, nu1: f64, ctx: &PosteriorContext, factor: HastingsFactor) -> f64 {
    if nu0 == nu1 {
        return 1.0;
    }
    if !(nu1 > 0.0) {
        return 0.0;
    }
    let old = log_posterior_kernel(beta0, nu0, ctx);
    let new = log_posterior_kernel(beta0, nu1, ctx);
    ratio_from_logs(new, old, factor.log_factor(nu0, nu1))
}

/// Run the alternating sampler. Deterministic given `cfg.seed`.
pub fn run_chain(ctx: &PosteriorContext, cfg: &SamplerConfig) -> Result<Chain> {
    let p = ctx.data.p();
    cfg.validate(p)?;
    let chol = cfg
        .proposal_cov
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let lower = chol.l();
    let has_disp = ctx.family.has_dispersion();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut beta = cfg.init_beta.clone();
    let mut disp = if has_disp { cfg.init_disp } else { 1.0 };
    let mut current = log_posterior_kernel(&beta, disp, ctx);
    if !current.is_finite() {
        return Err(Error::InfeasibleInit);
    }

    let width = p + usize::from(has_disp);
    let mut draws = DMatrix::zeros(cfg.n_samples, width);
    let (mut accepted_beta, mut accepted_disp) = (0, 0);
    let total = cfg.burn_in + cfg.n_samples * cfg.thin;
    let mut stored = 0;

    for cycle in 1..=total {
        let z = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
        let proposal = &beta + &lower * z;
        let candidate = log_posterior_kernel(&proposal, disp, ctx);
        let u: f64 = rng.random();
        if u.ln() < candidate - current {
            beta = proposal;
            current = candidate;
            accepted_beta += 1;
        }

        if has_disp {
            let e: f64 = rng.sample(Exp1);
            let proposal = disp * e;
            let candidate = log_posterior_kernel(&beta, proposal, ctx);
            let u: f64 = rng.random();
            if proposal > 0.0 && u.ln() < candidate - current + cfg.hastings.log_factor(disp, proposal) {
                disp = proposal;
                current = candidate;
                accepted_disp += 1;
            }
        }

        if cycle > cfg.burn_in && (cycle - cfg.burn_in) % cfg.thin == 0 {
            let mut row = draws.row_mut(stored);
            for j in 0..p {
                row[j] = beta[j];
            }
            if has_disp {
                row[p] = disp;
            }
            stored += 1;
        }
    }

    let mut column_names = ctx.data.column_names().to_vec();
    if let Some(name) = ctx.family.dispersion_name() {
        column_names.push(name.to_string());
    }
    let config = ConfigEcho {
        family: ctx.family,
        n_samples: cfg.n_samples,
        thin: cfg.thin,
        burn_in: cfg.burn_in,
        init_beta: cfg.init_beta.iter().copied().collect(),
        init_disp: has_disp.then_some(cfg.init_disp),
        proposal_cov: cfg.proposal_cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        hastings: cfg.hastings,
    };
    Ok(Chain {
        draws,
        column_names,
        family: ctx.family,
        accepted_beta,
        proposed_beta: total,
        accepted_disp,
        proposed_disp: if has_disp { total } else { 0 },
        seed: cfg.seed,
        config: Some(config),
    })
}
