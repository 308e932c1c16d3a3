//! Posterior-predictive pmf at a new covariate vector, averaged over chain draws.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::cmp::{CmpParams, SeriesControl};
use crate::error::{Error, Result};
use crate::glm::{negbin_log_pmf, poisson_log_pmf, Family, ETA_CAP};
use crate::mcmc::Chain;

/// Tail mass below which the automatic support stops.
pub const AUTO_TAIL_MASS: f64 = 1e-8;

/// Upper end of the predictive support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YMax {
    Fixed(u64),
    /// Smallest `y` whose averaged tail mass is below [`AUTO_TAIL_MASS`],
    /// capped at `10 (max_observed + 10)`.
    Auto { max_observed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveResult {
    pub x_new: Vec<f64>,
    pub y_max: u64,
    /// `pmf[y]` for `y = 0..=y_max`.
    pub pmf: Vec<f64>,
    pub pred_mean: f64,
    pub n_draws: usize,
}

impl PredictiveResult {
    /// Probability mass covered by the support.
    pub fn mass(&self) -> f64 {
        self.pmf.iter().sum()
    }

    /// `y,pmf` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("y,pmf\n");
        for (y, p) in self.pmf.iter().enumerate() {
            out.push_str(&format!("{y},{p}\n"));
        }
        out
    }

    /// Scalar block: covariates, support end, covered mass, mean, draw count.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Block<'a> {
            x_new: &'a [f64],
            y_max: u64,
            mass: f64,
            pred_mean: f64,
            n_draws: usize,
        }
        serde_json::to_string_pretty(&Block {
            x_new: &self.x_new,
            y_max: self.y_max,
            mass: self.mass(),
            pred_mean: self.pred_mean,
            n_draws: self.n_draws,
        })
        .expect("predictive block serializes")
    }
}

/// pmf of one draw on `0..=y_max`.
pub fn draw_pmf(family: Family, mu: f64, disp: f64, y_max: u64, ctl: &SeriesControl) -> Result<Vec<f64>> {
    let support = 0..=y_max;
    Ok(match family {
        Family::Poisson => support.map(|y| poisson_log_pmf(y, mu).exp()).collect(),
        Family::NegBin => support.map(|y| negbin_log_pmf(y, mu, disp).exp()).collect(),
        Family::CmpMu => {
            let params = CmpParams::new(mu, disp, ctl)?;
            support.map(|y| params.log_pmf(y).exp()).collect()
        }
    })
}

/// `pmf(y) = (1/M) sum_m p(y | exp(x' beta_m), disp_m)`.
///
/// Draws are evaluated in parallel and summed in draw order, so the result
/// does not depend on the thread count. A draw whose pmf cannot be evaluated
/// fails the whole call.
pub fn posterior_predictive(chain: &Chain, x_new: &DVector<f64>, y_max: YMax, ctl: &SeriesControl) -> Result<PredictiveResult> {
    if chain.is_empty() {
        return Err(Error::EmptySeries);
    }
    if x_new.len() != chain.p() {
        return Err(Error::DimensionMismatch {
            expected: chain.p(),
            found: x_new.len(),
        });
    }
    let limit = match y_max {
        YMax::Fixed(m) => m,
        YMax::Auto { max_observed } => 10 * (max_observed + 10),
    };
    let per_draw: Vec<Vec<f64>> = (0..chain.len())
        .into_par_iter()
        .map(|m| {
            let eta = chain.beta(m).dot(x_new);
            if !(eta <= ETA_CAP) {
                return Err(Error::LinearPredictorOverflow { eta, cap: ETA_CAP });
            }
            draw_pmf(chain.family, eta.exp(), chain.disp(m), limit, ctl)
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / chain.len() as f64;
    let mut pmf = vec![0.0; limit as usize + 1];
    for draw in &per_draw {
        for (acc, p) in pmf.iter_mut().zip(draw) {
            *acc += p;
        }
    }
    pmf.iter_mut().for_each(|p| *p *= scale);

    if let YMax::Auto { .. } = y_max {
        let mut cumulative = 0.0;
        if let Some(end) = pmf.iter().position(|p| {
            cumulative += p;
            1.0 - cumulative < AUTO_TAIL_MASS
        }) {
            pmf.truncate(end + 1);
        }
    }
    let pred_mean = pmf.iter().enumerate().map(|(y, p)| y as f64 * p).sum();
    Ok(PredictiveResult {
        x_new: x_new.iter().copied().collect(),
        y_max: (pmf.len() - 1) as u64,
        pmf,
        pred_mean,
        n_draws: chain.len(),
    })
}
