//! The mean-parametrized Conway-Maxwell-Poisson distribution.
//!
//! `CMP_mu(mu, nu)` has pmf `lambda^y / (y!)^nu / Z(lambda, nu)` where the rate
//! `lambda` is the unique solution of `sum_y (y - mu) lambda^y / (y!)^nu = 0`.
//! Every series here is accumulated in log space with a running log-sum-exp,
//! so `lambda^y` never has to be represented directly.
//!
//! Truncation: terms are added from `y = 0` upward. Once the term ratio
//! `lambda / (y + 1)^nu` drops below one (we are past the mode and the ratios
//! keep shrinking) the remaining tail is bounded by a geometric series, and the
//! sum stops as soon as that bound is below `rel_tol` times the running sum.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Relative tolerance on `|mean - mu| / mu` used by [`CmpParams::new`].
pub const RATE_TOL: f64 = 1e-10;

/// Largest rate admitted when `nu = 0`.
pub const GEOMETRIC_RATE_LIMIT: f64 = 1.0 - 1e-12;

const MAX_SOLVER_ITERATIONS: usize = 200;
const MAX_BRACKET_EXPANSIONS: usize = 64;
const TABLE_LEN: usize = 20_001;

struct Tables {
    ln: Vec<f64>,
    ln_fact: Vec<f64>,
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let ln = (0..TABLE_LEN).map(|k| (k as f64).ln()).collect();
        let ln_fact = (0..TABLE_LEN)
            .map(|k| if k < 2 { 0.0 } else { ln_gamma(k as f64 + 1.0) })
            .collect();
        Tables { ln, ln_fact }
    })
}

/// `log(y!)`.
#[inline]
pub fn ln_factorial(y: u64) -> f64 {
    match tables().ln_fact.get(y as usize) {
        Some(v) => *v,
        None => ln_gamma(y as f64 + 1.0),
    }
}

#[inline]
fn ln_int(y: u64) -> f64 {
    match tables().ln.get(y as usize) {
        Some(v) => *v,
        None => (y as f64).ln(),
    }
}

/// Truncation policy for the infinite sums over the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesControl {
    /// Stop once the bound on the remaining tail falls below this fraction of the running sum.
    pub rel_tol: f64,
    /// Hard bound on the number of terms.
    pub max_terms: usize,
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            max_terms: 10_000,
        }
    }
}

impl SeriesControl {
    pub fn new(rel_tol: f64, max_terms: usize) -> Result<Self> {
        let ctl = Self { rel_tol, max_terms };
        ctl.validate()?;
        Ok(ctl)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_terms < 1 {
            return Err(Error::InvalidParameter("max_terms must be >= 1".into()));
        }
        Ok(())
    }
}

/// A value computed from a truncated series, with the truncation status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Number of terms summed (the truncation point is `terms - 1`).
    pub terms: usize,
    /// Set when `max_terms` was reached before the tolerance was met.
    pub truncated: bool,
}

/// Scaled sums `sum_y w_y` and `sum_y w_y f_k(y)` with `w_y = exp(l_y - log_scale)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SeriesPass<const K: usize> {
    pub log_scale: f64,
    pub s0: f64,
    pub sums: [f64; K],
    pub terms: usize,
    pub truncated: bool,
}

impl<const K: usize> SeriesPass<K> {
    #[inline]
    pub fn log_sum(&self) -> f64 {
        self.log_scale + self.s0.ln()
    }

    /// Expectation of `f_k(Y)` under the normalized weights.
    #[inline]
    pub fn expect(&self, k: usize) -> f64 {
        self.sums[k] / self.s0
    }
}

/// Single pass over `w_y = lambda^y / (y!)^nu`, accumulating the weighted sums of `f(y)`.
#[inline]
pub(crate) fn series_pass<const K: usize, F>(
    log_lambda: f64,
    nu: f64,
    ctl: &SeriesControl,
    f: F,
) -> Result<SeriesPass<K>>
where
    F: Fn(u64) -> [f64; K],
{
    if !log_lambda.is_finite() || !nu.is_finite() || nu < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "series needs finite log_lambda and nu >= 0, got ({log_lambda}, {nu})"
        )));
    }
    if nu == 0.0 && log_lambda >= 0.0 {
        return Err(Error::DivergentSeries { log_lambda, nu });
    }

    // y = 0 has log-weight 0.
    let mut log_scale = 0.0;
    let mut s0 = 1.0;
    let mut sums = f(0);
    for y in 1..ctl.max_terms as u64 {
        let l = y as f64 * log_lambda - nu * ln_factorial(y);
        let w = if l > log_scale {
            let factor = (log_scale - l).exp();
            s0 *= factor;
            sums.iter_mut().for_each(|s| *s *= factor);
            log_scale = l;
            1.0
        } else {
            (l - log_scale).exp()
        };
        s0 += w;
        let fy = f(y);
        for (s, v) in sums.iter_mut().zip(fy) {
            *s += w * v;
        }

        let log_ratio = log_lambda - nu * ln_int(y + 1);
        if log_ratio < 0.0 {
            let r = log_ratio.exp();
            let tail = w * r / (1.0 - r);
            if tail < ctl.rel_tol * s0 {
                return Ok(SeriesPass {
                    log_scale,
                    s0,
                    sums,
                    terms: y as usize + 1,
                    truncated: false,
                });
            }
        }
    }
    Ok(SeriesPass {
        log_scale,
        s0,
        sums,
        terms: ctl.max_terms,
        truncated: ctl.max_terms > 1,
    })
}

/// `log Z(lambda, nu) = log sum_y lambda^y / (y!)^nu`.
pub fn log_z(log_lambda: f64, nu: f64, ctl: &SeriesControl) -> Result<SeriesValue> {
    let pass = series_pass(log_lambda, nu, ctl, |_| [])?;
    Ok(SeriesValue {
        value: pass.log_sum(),
        terms: pass.terms,
        truncated: pass.truncated,
    })
}

/// Mean of the weight sequence at the given rate, i.e. `E[Y]` for the standard CMP.
pub fn rate_mean(log_lambda: f64, nu: f64, ctl: &SeriesControl) -> Result<SeriesValue> {
    let pass = series_pass(log_lambda, nu, ctl, |y| [y as f64])?;
    Ok(SeriesValue {
        value: pass.expect(0),
        terms: pass.terms,
        truncated: pass.truncated,
    })
}

/// Solved rate together with the normalizing constant evaluated at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSolution {
    pub log_lambda: f64,
    pub log_z: f64,
    pub iterations: usize,
}

fn check_mu_nu(mu: f64, nu: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be finite and > 0, got {mu}")));
    }
    if !(nu.is_finite() && nu >= 0.0) {
        return Err(Error::InvalidParameter(format!("nu must be finite and >= 0, got {nu}")));
    }
    Ok(())
}

fn initial_log_rate(mu: f64, nu: f64) -> f64 {
    if nu < 1.0 {
        // Interpolates between the exact geometric (nu = 0) and Poisson (nu = 1) rates.
        nu * mu.ln() + (1.0 - nu) * (mu / (1.0 + mu)).ln()
    } else {
        nu * (mu + (nu - 1.0) / (2.0 * nu)).ln()
    }
}

/// Solve the rate equation for `log lambda(mu, nu)`.
///
/// The series mean is strictly increasing in `log lambda`, so the root is
/// unique. Newton steps on `log mean` (slope `var / mean`) are taken while they
/// stay inside the current bracket; otherwise the bracket is bisected, or
/// expanded geometrically while one side is still open.
pub fn solve_rate_full(mu: f64, nu: f64, ctl: &SeriesControl, tol: f64) -> Result<RateSolution> {
    check_mu_nu(mu, nu)?;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    if nu == 0.0 {
        hi = GEOMETRIC_RATE_LIMIT.ln();
        let limit_mean = GEOMETRIC_RATE_LIMIT / (1.0 - GEOMETRIC_RATE_LIMIT);
        if mu >= limit_mean {
            return Err(Error::DivergentSeries {
                log_lambda: (mu / (1.0 + mu)).ln(),
                nu,
            });
        }
    }

    let ln_mu = mu.ln();
    let mut t = initial_log_rate(mu, nu).min(hi);
    if t >= hi {
        t = hi - 1.0;
    }
    let mut step = 1.0;
    let mut expansions = 0;

    for iteration in 1..=MAX_SOLVER_ITERATIONS {
        let pass = series_pass(t, nu, ctl, |y| {
            let y = y as f64;
            [y, y * y]
        });
        let (above, newton) = match pass {
            Ok(p) if !p.truncated => {
                let mean = p.expect(0);
                if (mean - mu).abs() <= tol * mu {
                    return Ok(RateSolution {
                        log_lambda: t,
                        log_z: p.log_sum(),
                        iterations: iteration,
                    });
                }
                let var = p.expect(1) - mean * mean;
                let newton = if var > 0.0 && mean > 0.0 {
                    Some(t - (mean.ln() - ln_mu) * mean / var)
                } else {
                    None
                };
                (mean > mu, newton)
            }
            // An unconverged series means the mass sits beyond max_terms: far too large.
            Ok(_) | Err(Error::DivergentSeries { .. }) => (true, None),
            Err(e) => return Err(e),
        };
        if above {
            hi = hi.min(t);
        } else {
            lo = lo.max(t);
        }

        t = match newton {
            Some(n) if n > lo && n < hi && n.is_finite() => n,
            _ => {
                if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    expansions += 1;
                    if expansions > MAX_BRACKET_EXPANSIONS {
                        return Err(Error::RateBracket { mu, nu });
                    }
                    step *= 2.0;
                    if hi.is_finite() {
                        hi - step
                    } else {
                        lo + step
                    }
                }
            }
        };
        if hi - lo <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            break;
        }
    }
    Err(Error::RateBracket { mu, nu })
}

/// `log lambda(mu, nu)` solved to relative mean error `tol`.
pub fn solve_rate(mu: f64, nu: f64, ctl: &SeriesControl, tol: f64) -> Result<f64> {
    solve_rate_full(mu, nu, ctl, tol).map(|s| s.log_lambda)
}

/// A `(mu, nu)` pair with the solved rate and normalizing constant cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmpParams {
    mu: f64,
    nu: f64,
    log_lambda: f64,
    log_z: f64,
}

impl CmpParams {
    pub fn new(mu: f64, nu: f64, ctl: &SeriesControl) -> Result<Self> {
        let sol = solve_rate_full(mu, nu, ctl, RATE_TOL)?;
        Ok(Self {
            mu,
            nu,
            log_lambda: sol.log_lambda,
            log_z: sol.log_z,
        })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn log_lambda(&self) -> f64 {
        self.log_lambda
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    #[inline]
    pub fn log_pmf(&self, y: u64) -> f64 {
        log_pmf(y, self)
    }
}

#[inline]
pub fn log_pmf(y: u64, params: &CmpParams) -> f64 {
    y as f64 * params.log_lambda - params.nu * ln_factorial(y) - params.log_z
}

/// `(mean, variance)` by direct summation, the variance centred at the summed mean.
pub fn mean_variance(params: &CmpParams, ctl: &SeriesControl) -> Result<(f64, f64)> {
    let first = series_pass(params.log_lambda, params.nu, ctl, |y| [y as f64])?;
    let mean = first.expect(0);
    let second = series_pass(params.log_lambda, params.nu, ctl, |y| {
        let d = y as f64 - mean;
        [d * d]
    })?;
    if first.truncated || second.truncated {
        return Err(Error::Truncated {
            max_terms: ctl.max_terms,
        });
    }
    Ok((mean, second.expect(0)))
}

/// Inverse-CDF draw: accumulate the pmf from zero until it reaches a uniform variate.
pub fn sample<R: Rng + ?Sized>(params: &CmpParams, ctl: &SeriesControl, rng: &mut R) -> Result<u64> {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for y in 0..ctl.max_terms as u64 {
        let p = log_pmf(y, params).exp();
        cumulative += p;
        if cumulative >= u {
            return Ok(y);
        }
        // Rounding can leave the total a few ulps short of u; stop once past the
        // mode and the remaining mass is negligible.
        let past_mode = params.log_lambda - params.nu * ln_int(y + 1) < 0.0;
        if past_mode && p < f64::EPSILON * 1e-3 {
            return Ok(y);
        }
    }
    Err(Error::Truncated {
        max_terms: ctl.max_terms,
    })
}

/// Dispersion relative to a Poisson of the same mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dispersion {
    Over,
    Equi,
    Under,
}

/// `nu < 1` is overdispersed, `nu > 1` underdispersed. `nu` must be non-negative.
pub fn dispersion_class(nu: f64) -> Dispersion {
    debug_assert!(nu >= 0.0, "nu must be non-negative");
    if nu < 1.0 {
        Dispersion::Over
    } else if nu > 1.0 {
        Dispersion::Under
    } else {
        Dispersion::Equi
    }
}
