//! Prior log-densities for the regression coefficients and the dispersion.
//!
//! Normalizing constants are dropped throughout: every consumer works with
//! differences of log-densities.

use nalgebra::{DMatrix, DVector};

use crate::cmp::{ln_factorial, solve_rate_full, SeriesControl, RATE_TOL};
use crate::error::{Error, Result};

/// Prior on `beta`.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaPrior {
    Flat,
    Normal {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        precision: DMatrix<f64>,
    },
}

impl BetaPrior {
    /// Multivariate normal; `cov` must be symmetric positive definite.
    pub fn normal(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: cov.nrows(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite);
        }
        let precision = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?.inverse();
        Ok(BetaPrior::Normal { mean, cov, precision })
    }

    /// `N(0, variance * I)`.
    pub fn isotropic(p: usize, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidParameter(format!("prior variance must be positive, got {variance}")));
        }
        Self::normal(DVector::zeros(p), DMatrix::identity(p, p) * variance)
    }

    pub fn log_density(&self, beta: &DVector<f64>) -> f64 {
        match self {
            BetaPrior::Flat => 0.0,
            BetaPrior::Normal { mean, precision, .. } => {
                let d = beta - mean;
                -0.5 * d.dot(&(precision * &d))
            }
        }
    }
}

/// Prior on the dispersion (`nu`, or `phi` for the negative binomial).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DispersionPrior {
    Flat,
    /// `log disp ~ N(location, scale2)`.
    LogNormal { location: f64, scale2: f64 },
}

impl DispersionPrior {
    pub fn log_normal(location: f64, scale2: f64) -> Result<Self> {
        if !(scale2 > 0.0 && scale2.is_finite() && location.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "log-normal prior needs finite location and positive scale^2, got ({location}, {scale2})"
            )));
        }
        Ok(DispersionPrior::LogNormal { location, scale2 })
    }

    /// Returns `-inf` outside the support of the log-normal.
    pub fn log_density(&self, disp: f64) -> f64 {
        match *self {
            DispersionPrior::Flat => 0.0,
            DispersionPrior::LogNormal { location, scale2 } => {
                if !(disp > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let l = disp.ln();
                -l - (l - location).powi(2) / (2.0 * scale2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub beta: BetaPrior,
    pub dispersion: DispersionPrior,
}

impl PriorSpec {
    pub fn flat() -> Self {
        Self {
            beta: BetaPrior::Flat,
            dispersion: DispersionPrior::Flat,
        }
    }

    /// `beta ~ N(0, 1e5 I)`, `disp ~ Log-Normal(0, 1e5)`.
    pub fn vague(p: usize) -> Self {
        Self {
            beta: BetaPrior::isotropic(p, 1e5).expect("positive variance"),
            dispersion: DispersionPrior::LogNormal {
                location: 0.0,
                scale2: 1e5,
            },
        }
    }

    pub fn p(&self) -> Option<usize> {
        match &self.beta {
            BetaPrior::Flat => None,
            BetaPrior::Normal { mean, .. } => Some(mean.len()),
        }
    }
}

/// `log p(beta) + log p(disp)` up to constants.
pub fn log_prior(beta: &DVector<f64>, disp: f64, spec: &PriorSpec) -> f64 {
    spec.beta.log_density(beta) + spec.dispersion.log_density(disp)
}

/// Hyperparameters of the intercept-only conjugate prior
/// `lambda^(a-1) exp(-b nu) Z^(-c)`. Admissibility is not checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateHyper {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Unnormalized log-density of the conjugate prior at `(mu, nu)`.
pub fn conjugate_log_kernel(mu: f64, nu: f64, h: &ConjugateHyper, ctl: &SeriesControl) -> Result<f64> {
    let sol = solve_rate_full(mu, nu, ctl, RATE_TOL)?;
    Ok((h.a - 1.0) * sol.log_lambda - h.b * nu - h.c * sol.log_z)
}

/// `a += sum y`, `b += sum log y!`, `c += n`, folded one observation at a time.
pub fn conjugate_update(h: &ConjugateHyper, y: &[u64]) -> ConjugateHyper {
    y.iter().fold(*h, |acc, &yi| ConjugateHyper {
        a: acc.a + yi as f64,
        b: acc.b + ln_factorial(yi),
        c: acc.c + 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_is_zero() {
        let beta = DVector::from_vec(vec![3.0, -7.0]);
        assert_eq!(log_prior(&beta, 0.3, &PriorSpec::flat()), 0.0);
    }

    #[test]
    fn vague_prior_vanishes_at_mode() {
        let spec = PriorSpec::vague(2);
        assert_eq!(log_prior(&DVector::zeros(2), 1.0, &spec), 0.0);
    }

    #[test]
    fn standard_normal_kernel() {
        let spec = PriorSpec {
            beta: BetaPrior::isotropic(2, 1.0).unwrap(),
            dispersion: DispersionPrior::Flat,
        };
        let v = log_prior(&DVector::from_vec(vec![3.0, 4.0]), 2.0, &spec);
        assert!((v + 12.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_spd_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(BetaPrior::normal(DVector::zeros(2), cov), Err(Error::NotPositiveDefinite));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(BetaPrior::normal(DVector::zeros(2), asym).is_err());
    }

    #[test]
    fn log_normal_kernel_includes_jacobian() {
        let prior = DispersionPrior::log_normal(0.5, 2.0).unwrap();
        let nu: f64 = 1.7;
        let expected = -nu.ln() - (nu.ln() - 0.5).powi(2) / 4.0;
        assert!((prior.log_density(nu) - expected).abs() < 1e-14);
        assert_eq!(prior.log_density(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn conjugate_kernel_examples() {
        let ctl = SeriesControl::default();
        let zero = ConjugateHyper { a: 1.0, b: 0.0, c: 0.0 };
        assert!(conjugate_log_kernel(3.3, 0.7, &zero, &ctl).unwrap().abs() < 1e-15);
        let h = ConjugateHyper { a: 2.0, b: 0.0, c: 1.0 };
        let v = conjugate_log_kernel(2.0, 1.0, &h, &ctl).unwrap();
        assert!((v - (2.0f64.ln() - 2.0)).abs() < 1e-10);
    }

    #[test]
    fn conjugate_update_examples() {
        let h = ConjugateHyper { a: 0.3, b: -1.0, c: 2.0 };
        assert_eq!(conjugate_update(&h, &[]), h);
        let z = ConjugateHyper { a: 0.0, b: 0.0, c: 0.0 };
        assert_eq!(conjugate_update(&z, &[0, 0]), ConjugateHyper { a: 0.0, b: 0.0, c: 2.0 });
        let one = ConjugateHyper { a: 1.0, b: 1.0, c: 1.0 };
        let u = conjugate_update(&one, &[1, 2, 3]);
        // log 1! + log 2! + log 3! = log 12
        assert_eq!(u.a, 7.0);
        assert!((u.b - (1.0 + 12.0f64.ln())).abs() < 1e-14);
        assert!((12.0f64.ln() - 2.484_906_649_788_000_3).abs() < 1e-15);
        assert_eq!(u.c, 4.0);
    }

    #[test]
    fn vanishing_prior_differences_as_variance_grows() {
        let b1 = DVector::from_vec(vec![0.3, -1.2]);
        let b2 = DVector::from_vec(vec![2.0, 0.7]);
        let mut last = f64::INFINITY;
        for v in [1.0, 1e2, 1e4, 1e6, 1e8] {
            let spec = PriorSpec {
                beta: BetaPrior::isotropic(2, v).unwrap(),
                dispersion: DispersionPrior::log_normal(0.0, v).unwrap(),
            };
            let diff = (log_prior(&b1, 1.0, &spec) - log_prior(&b2, 1.0, &spec)).abs();
            assert!(diff < last);
            last = diff;
        }
        assert!(last < 1e-7);
    }

    proptest! {
        #[test]
        fn conjugate_update_is_associative(
            a in -5.0f64..5.0, b in -5.0f64..5.0, c in 0.0f64..5.0,
            y1 in proptest::collection::vec(0u64..200, 0..20),
            y2 in proptest::collection::vec(0u64..200, 0..20),
        ) {
            let h = ConjugateHyper { a, b, c };
            let joined: Vec<u64> = y1.iter().chain(&y2).copied().collect();
            prop_assert_eq!(conjugate_update(&conjugate_update(&h, &y1), &y2), conjugate_update(&h, &joined));
        }
    }
}
