//! Distributional invariants of the CMP_mu implementation.

use cmpglm::cmp::{log_pmf, log_z, mean_variance, sample, solve_rate, CmpParams, SeriesControl, RATE_TOL};
use cmpglm::glm::{log_likelihood, poisson_log_pmf, Dataset, Family};
use cmpglm::posterior::{log_posterior_kernel, PosteriorContext};
use cmpglm::priors::PriorSpec;
use cmpglm_testkit::BruteCmp;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn ctl() -> SeriesControl {
    SeriesControl::default()
}

#[test]
fn poisson_reduction() {
    for mu in [0.5, 1.0, 5.0, 10.0] {
        let p = CmpParams::new(mu, 1.0, &ctl()).unwrap();
        for y in 0..=50u64 {
            assert!((log_pmf(y, &p) - poisson_log_pmf(y, mu)).abs() < 1e-10, "mu {mu}, y {y}");
            assert!((log_pmf(y, &p).exp() - poisson_log_pmf(y, mu).exp()).abs() < 1e-10);
        }
    }
}

#[test]
fn geometric_reduction() {
    for mu in [0.1, 1.0, 10.0] {
        let v = solve_rate(mu, 0.0, &ctl(), RATE_TOL).unwrap();
        assert!((v - (mu / (1.0 + mu)).ln()).abs() < 1e-10, "mu {mu}");
    }
}

#[test]
fn log_space_safety() {
    let p = CmpParams::new(50.0, 0.1, &ctl()).unwrap();
    assert!(p.log_z().is_finite() && p.log_lambda().is_finite());
    assert!(log_z(p.log_lambda(), 0.1, &ctl()).unwrap().value.is_finite());
}

#[test]
fn monotone_dispersion() {
    for mu in [0.3, 1.0, 2.0, 7.5, 25.0] {
        let vars: Vec<f64> = [0.0, 0.5, 1.0, 1.62, 3.0]
            .iter()
            .map(|&nu| mean_variance(&CmpParams::new(mu, nu, &ctl()).unwrap(), &ctl()).unwrap().1)
            .collect();
        assert!(vars.windows(2).all(|w| w[1] < w[0]), "mu {mu}: {vars:?}");
    }
}

#[test]
fn pmf_matches_brute_force_table() {
    let brute = BruteCmp::new();
    for (mu, nu) in [(2.5, 1.5), (0.7, 0.3), (12.0, 2.2), (4.0, 0.0)] {
        let p = CmpParams::new(mu, nu, &ctl()).unwrap();
        let table = brute.pmf(mu, nu);
        for y in 0..40 {
            let got = log_pmf(y as u64, &p).exp();
            assert!((got - table[y]).abs() < 1e-9 * table[y].max(1e-3), "({mu}, {nu}) y {y}");
        }
    }
}

#[test]
fn sampler_passes_chi_square() {
    let (mu, nu, n) = (2.5, 1.62, 100_000usize);
    let p = CmpParams::new(mu, nu, &ctl()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    let mut counts = vec![0usize; 64];
    for _ in 0..n {
        counts[sample(&p, &ctl(), &mut rng).unwrap() as usize] += 1;
    }
    // Bins 0..k-1 individually, the tail pooled into bin k; expected >= 5 throughout.
    let probs: Vec<f64> = (0..64).map(|y| log_pmf(y, &p).exp()).collect();
    let k = probs.iter().position(|q| q * (n as f64) < 5.0).unwrap();
    let mut stat = 0.0;
    for y in 0..k {
        let e = probs[y] * n as f64;
        stat += (counts[y] as f64 - e).powi(2) / e;
    }
    let tail_e = (1.0 - probs[..k].iter().sum::<f64>()) * n as f64;
    let tail_o: usize = counts[k..].iter().sum();
    stat += (tail_o as f64 - tail_e).powi(2) / tail_e;
    let critical = ChiSquared::new(k as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi2 {stat} >= {critical} with {k} df");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pmf_is_normalized(mu in 0.1f64..50.0, nu in 0.0f64..5.0) {
        let c = ctl();
        let p = CmpParams::new(mu, nu, &c).unwrap();
        let terms = log_z(p.log_lambda(), nu, &c).unwrap().terms;
        let total: f64 = (0..terms as u64).map(|y| log_pmf(y, &p).exp()).sum();
        prop_assert!(total >= 1.0 - 10.0 * c.rel_tol && total <= 1.0 + 1e-13, "{}", total);
    }

    #[test]
    fn mean_is_consistent(mu in 0.1f64..50.0, nu in 0.0f64..5.0) {
        let p = CmpParams::new(mu, nu, &ctl()).unwrap();
        let (mean, var) = mean_variance(&p, &ctl()).unwrap();
        prop_assert!((mean / mu - 1.0).abs() < 1e-8, "{} vs {}", mean, mu);
        prop_assert!(var > 0.0);
    }

    #[test]
    fn variance_decreases_in_nu(mu in 0.1f64..50.0, nu in 0.0f64..4.5, step in 0.05f64..0.5) {
        let v = |nu: f64| mean_variance(&CmpParams::new(mu, nu, &ctl()).unwrap(), &ctl()).unwrap().1;
        prop_assert!(v(nu + step) < v(nu));
    }

    #[test]
    fn cached_rate_is_consistent(mu in 0.1f64..50.0, nu in 0.0f64..5.0) {
        let p = CmpParams::new(mu, nu, &ctl()).unwrap();
        let again = CmpParams::new(mu, nu, &ctl()).unwrap();
        prop_assert_eq!(p, again);
        let lz = log_z(p.log_lambda(), nu, &ctl()).unwrap().value;
        prop_assert!((lz - p.log_z()).abs() < 1e-12 * lz.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Kernel against independently summed likelihoods (n = 5, p = 1, flat priors).
    #[test]
    fn kernel_matches_brute_force_likelihood(b in -0.5f64..2.0, nu in 0.05f64..3.0) {
        let y = vec![1u64, 4, 2, 0, 3];
        let data = Dataset::new(y.clone(), DMatrix::from_element(5, 1, 1.0), vec!["(Intercept)".into()]).unwrap();
        let ctx = PosteriorContext::new(data.clone(), Family::CmpMu, PriorSpec::flat());
        let beta = DVector::from_vec(vec![b]);
        let brute = BruteCmp::new().intercept_loglik(&y, b, nu);
        let kernel = log_posterior_kernel(&beta, nu, &ctx);
        prop_assert!((kernel - brute).abs() < 1e-8, "{} vs {}", kernel, brute);
        prop_assert_eq!(kernel, log_likelihood(&beta, nu, &data, Family::CmpMu, &ctl()).unwrap());
    }
}
