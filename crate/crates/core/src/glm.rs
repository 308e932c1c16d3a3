//! Log-linear count regression: design data, family log-likelihoods and
//! maximum-likelihood fits used to initialize and tune the sampler.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmp::{ln_factorial, series_pass, solve_rate_full, SeriesControl, RATE_TOL};
use crate::error::{Error, Result};
use crate::optim;

/// Linear predictors above this are treated as a coding error, not clamped.
pub const ETA_CAP: f64 = 30.0;

/// Response counts with their design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u64>,
    x: DMatrix<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    /// Validates shapes, finiteness, `n >= p` and full column rank.
    pub fn new(y: Vec<u64>, x: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: x.nrows(),
            });
        }
        if column_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                found: column_names.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("design matrix has non-finite entries".into()));
        }
        let (n, p) = x.shape();
        if n < p {
            return Err(Error::RankDeficient { rank: n, p });
        }
        let rank = column_rank(&x);
        if rank < p {
            return Err(Error::RankDeficient { rank, p });
        }
        Ok(Self { y, x, column_names })
    }

    /// A dataset with no observations, for prior-only evaluation.
    pub fn empty(column_names: Vec<String>) -> Self {
        let p = column_names.len();
        Self {
            y: Vec::new(),
            x: DMatrix::zeros(0, p),
            column_names,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Rows in the given order (indices may repeat).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows.iter());
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Self::new(y, x, self.column_names.clone())
    }

    /// Stack `other` below `self`; the column names must agree.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.column_names != other.column_names {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                found: other.p(),
            });
        }
        let (n1, n2, p) = (self.n(), other.n(), self.p());
        let mut x = DMatrix::zeros(n1 + n2, p);
        x.rows_mut(0, n1).copy_from(&self.x);
        x.rows_mut(n1, n2).copy_from(&other.x);
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Self::new(y, x, self.column_names.clone())
    }
}

fn column_rank(x: &DMatrix<f64>) -> usize {
    if x.ncols() == 0 {
        return 0;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * 1e-10;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Only the log link is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Log,
}

/// Count family of the regression.
///
/// `CmpMu` carries the dispersion `nu`; `NegBin` carries `phi` with variance
/// `mu + mu^2 / phi`; `Poisson` has no dispersion parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    CmpMu,
    Poisson,
    NegBin,
}

impl Family {
    pub fn dispersion_name(&self) -> Option<&'static str> {
        match self {
            Family::CmpMu => Some("nu"),
            Family::Poisson => None,
            Family::NegBin => Some("phi"),
        }
    }

    pub fn has_dispersion(&self) -> bool {
        self.dispersion_name().is_some()
    }

    pub fn label(&self) -> &'static str {
        match self {
            Family::CmpMu => "CMP_mu",
            Family::Poisson => "Poisson",
            Family::NegBin => "NegBin",
        }
    }

    /// Variance at mean `mu`; for `CmpMu` this needs a series evaluation.
    pub fn variance(&self, mu: f64, disp: f64, ctl: &SeriesControl) -> Result<f64> {
        match self {
            Family::Poisson => Ok(mu),
            Family::NegBin => Ok(mu + mu * mu / disp),
            Family::CmpMu => {
                let p = crate::cmp::CmpParams::new(mu, disp, ctl)?;
                crate::cmp::mean_variance(&p, ctl).map(|(_, v)| v)
            }
        }
    }
}

/// Linear predictor `X beta`, checked against [`ETA_CAP`].
pub fn linear_predictor(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: beta.len(),
        });
    }
    let eta = x * beta;
    if let Some(&bad) = eta.iter().find(|e| !(**e <= ETA_CAP)) {
        return Err(Error::LinearPredictorOverflow { eta: bad, cap: ETA_CAP });
    }
    Ok(eta)
}

/// Per-observation means `exp(X_i' beta)`.
pub fn mean_vector(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
    linear_predictor(x, beta).map(|eta| eta.map(f64::exp))
}

#[inline]
pub fn poisson_log_pmf(y: u64, mu: f64) -> f64 {
    y as f64 * mu.ln() - mu - ln_factorial(y)
}

/// NB2 log-pmf with mean `mu` and shape `phi`, stable as `phi -> inf`.
#[inline]
pub fn negbin_log_pmf(y: u64, mu: f64, phi: f64) -> f64 {
    // log Gamma(y + phi) - log Gamma(phi) - y log(phi + mu), written as a sum of log1p terms.
    let denom = phi + mu;
    let mut acc = 0.0;
    for k in 0..y {
        acc += ((k as f64 - mu) / denom).ln_1p();
    }
    acc + y as f64 * mu.ln() - ln_factorial(y) - phi * (mu / phi).ln_1p()
}

fn check_disp(family: Family, disp: f64) -> Result<()> {
    match family {
        Family::Poisson => Ok(()),
        Family::CmpMu if disp.is_finite() && disp >= 0.0 => Ok(()),
        Family::NegBin if disp.is_finite() && disp > 0.0 => Ok(()),
        _ => Err(Error::InvalidParameter(format!(
            "dispersion {disp} invalid for {}",
            family.label()
        ))),
    }
}

/// `(log lambda, log Z)` per distinct mean within one sweep at fixed `nu`.
#[derive(Debug, Default)]
pub struct RateCache {
    nu_bits: u64,
    solved: HashMap<u64, (f64, f64)>,
}

impl RateCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&mut self, mu: f64, nu: f64, ctl: &SeriesControl) -> Result<(f64, f64)> {
        if nu.to_bits() != self.nu_bits {
            self.solved.clear();
            self.nu_bits = nu.to_bits();
        }
        if let Some(v) = self.solved.get(&mu.to_bits()) {
            return Ok(*v);
        }
        let sol = solve_rate_full(mu, nu, ctl, RATE_TOL)?;
        let v = (sol.log_lambda, sol.log_z);
        self.solved.insert(mu.to_bits(), v);
        Ok(v)
    }
}

/// Log-likelihood with linear predictors already computed.
pub fn log_likelihood_eta(
    eta: &DVector<f64>,
    y: &[u64],
    disp: f64,
    family: Family,
    ctl: &SeriesControl,
) -> Result<f64> {
    check_disp(family, disp)?;
    match family {
        Family::Poisson => Ok(eta
            .iter()
            .zip(y)
            .map(|(&e, &yi)| yi as f64 * e - e.exp() - ln_factorial(yi))
            .sum()),
        Family::NegBin => Ok(eta
            .iter()
            .zip(y)
            .map(|(&e, &yi)| negbin_log_pmf(yi, e.exp(), disp))
            .sum()),
        Family::CmpMu => {
            let mut cache = RateCache::new();
            let mut total = 0.0;
            for (&e, &yi) in eta.iter().zip(y) {
                let (log_lambda, log_z) = cache.get(e.exp(), disp, ctl)?;
                total += yi as f64 * log_lambda - disp * ln_factorial(yi) - log_z;
            }
            Ok(total)
        }
    }
}

/// Sum of family log-pmfs at `mu_i = exp(X_i' beta)`. `disp` is ignored for Poisson.
pub fn log_likelihood(
    beta: &DVector<f64>,
    disp: f64,
    data: &Dataset,
    family: Family,
    ctl: &SeriesControl,
) -> Result<f64> {
    let eta = linear_predictor(data.x(), beta)?;
    log_likelihood_eta(&eta, data.y(), disp, family, ctl)
}

/// Log-likelihood and its gradient in `theta = (beta, log disp)` (just `beta` for Poisson).
pub fn log_likelihood_score(
    theta: &DVector<f64>,
    data: &Dataset,
    family: Family,
    ctl: &SeriesControl,
) -> Result<(f64, DVector<f64>)> {
    let p = data.p();
    let expected = p + usize::from(family.has_dispersion());
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: theta.len(),
        });
    }
    let beta = theta.rows(0, p).into_owned();
    let eta = linear_predictor(data.x(), &beta)?;
    let disp = if family.has_dispersion() { theta[p].exp() } else { 1.0 };
    check_disp(family, disp)?;

    // d loglik / d eta_i, and d loglik / d disp.
    let mut d_eta = DVector::zeros(data.n());
    let mut d_disp = 0.0;
    let mut total = 0.0;
    for (i, (&e, &yi)) in eta.iter().zip(data.y()).enumerate() {
        let mu = e.exp();
        let yf = yi as f64;
        match family {
            Family::Poisson => {
                total += yf * e - mu - ln_factorial(yi);
                d_eta[i] = yf - mu;
            }
            Family::NegBin => {
                let phi = disp;
                total += negbin_log_pmf(yi, mu, phi);
                d_eta[i] = (yf - mu) * phi / (phi + mu);
                let digamma_diff: f64 = (0..yi).map(|k| 1.0 / (phi + k as f64)).sum();
                d_disp += digamma_diff - (mu / phi).ln_1p() + (mu - yf) / (phi + mu);
            }
            Family::CmpMu => {
                let nu = disp;
                let sol = solve_rate_full(mu, nu, ctl, RATE_TOL)?;
                let lf_y = ln_factorial(yi);
                total += yf * sol.log_lambda - nu * lf_y - sol.log_z;
                let pass = series_pass(sol.log_lambda, nu, ctl, |k| {
                    let kf = k as f64;
                    let lf = ln_factorial(k);
                    [kf, kf * kf, lf, kf * lf]
                })?;
                let mean = pass.expect(0);
                let var = pass.expect(1) - mean * mean;
                let e_lf = pass.expect(2);
                let cov_y_lf = pass.expect(3) - mean * e_lf;
                d_eta[i] = (yf - mu) * mu / var;
                d_disp += (yf - mu) * cov_y_lf / var - lf_y + e_lf;
            }
        }
    }
    let mut grad = DVector::zeros(expected);
    grad.rows_mut(0, p).copy_from(&(data.x().transpose() * &d_eta));
    if family.has_dispersion() {
        grad[p] = d_disp * disp;
    }
    Ok((total, grad))
}

/// Maximum-likelihood estimate with its observed-information covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub family: Family,
    pub beta_hat: DVector<f64>,
    /// `nu` for CMP_mu, `phi` for NegBin, absent for Poisson.
    pub disp_hat: Option<f64>,
    /// Covariance of `beta_hat`.
    pub cov_hat: DMatrix<f64>,
    /// Standard error of `log disp_hat` from the full observed information,
    /// when that is positive definite.
    pub log_disp_se: Option<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the full observed information was not positive definite.
    pub covariance_fallback: bool,
}

/// Poisson GLM by iteratively reweighted least squares.
pub fn irls_poisson(data: &Dataset, max_iter: usize, tol: f64) -> Result<(DVector<f64>, bool)> {
    let (n, p) = (data.n(), data.p());
    let x = data.x();
    let ybar = data.y().iter().sum::<u64>() as f64 / n.max(1) as f64;
    let mut mu: DVector<f64> = DVector::from_iterator(n, data.y().iter().map(|&y| y as f64 + 0.1 * ybar.max(0.1)));
    let mut beta = DVector::zeros(p);
    for _ in 0..max_iter {
        let eta = mu.map(f64::ln);
        let z = DVector::from_iterator(
            n,
            (0..n).map(|i| eta[i] + (data.y()[i] as f64 - mu[i]) / mu[i]),
        );
        let mut xtw = x.transpose();
        for i in 0..n {
            xtw.column_mut(i).scale_mut(mu[i]);
        }
        let lhs = &xtw * x;
        let rhs = &xtw * z;
        let chol = lhs.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let next = chol.solve(&rhs);
        let change = (&next - &beta).amax();
        beta = next;
        mu = mean_vector(x, &beta)?;
        if change < tol {
            return Ok((beta, true));
        }
    }
    Ok((beta, false))
}

const MLE_GTOL: f64 = 1e-6;
const MLE_MAX_ITER: usize = 500;
/// Bound on `|log disp|` during the search.
const LOG_DISP_BOUND: f64 = 25.0;

/// Quasi-Newton maximization over `(beta, log disp)` from the IRLS Poisson fit and `log disp = 0`.
pub fn fit_mle(data: &Dataset, family: Family, ctl: &SeriesControl) -> Result<MleFit> {
    let p = data.p();
    let (beta0, _) = irls_poisson(data, 100, 1e-10)?;
    let mut theta0 = DVector::zeros(p + usize::from(family.has_dispersion()));
    theta0.rows_mut(0, p).copy_from(&beta0);

    let objective = |theta: &DVector<f64>| {
        if family.has_dispersion() && theta[p].abs() > LOG_DISP_BOUND {
            return None;
        }
        log_likelihood_score(theta, data, family, ctl)
            .ok()
            .filter(|(v, g)| v.is_finite() && g.iter().all(|x| x.is_finite()))
    };
    let res = optim::maximize(objective, theta0, MLE_GTOL, MLE_MAX_ITER)
        .ok_or_else(|| Error::InvalidParameter("log-likelihood not finite at the Poisson start".into()))?;

    let mut objective = objective;
    let (cov_hat, log_disp_se, covariance_fallback) = match optim::numerical_hessian(&mut objective, &res.x) {
        Some(h) => beta_covariance(&(-h), p, data.n()),
        None => (DMatrix::identity(p, p) / data.n().max(1) as f64, None, true),
    };

    let beta_hat = res.x.rows(0, p).into_owned();
    let disp_hat = family.has_dispersion().then(|| res.x[p].exp());
    Ok(MleFit {
        family,
        beta_hat,
        disp_hat,
        cov_hat,
        log_disp_se,
        loglik: res.value,
        converged: res.converged,
        iterations: res.iterations,
        covariance_fallback,
    })
}

/// `beta` block of the inverse information (and the log-dispersion standard
/// error); falls back to the inverse of the `beta` block alone, then to a
/// scaled identity.
fn beta_covariance(info: &DMatrix<f64>, p: usize, n: usize) -> (DMatrix<f64>, Option<f64>, bool) {
    if let Some(chol) = info.clone().cholesky() {
        let inv = chol.inverse();
        let block = inv.view((0, 0), (p, p));
        let se = (inv.nrows() > p).then(|| inv[(p, p)].sqrt());
        return (0.5 * (&block + block.transpose()), se, false);
    }
    let beta_info = info.view((0, 0), (p, p)).into_owned();
    if let Some(chol) = beta_info.cholesky() {
        log::warn!("observed information not positive definite; using the beta block alone");
        let inv = chol.inverse();
        return (0.5 * (&inv + inv.transpose()), None, true);
    }
    log::warn!("observed information not positive definite; using a scaled identity covariance");
    (DMatrix::identity(p, p) / n.max(1) as f64, None, true)
}
