//! The sampler against brute-force grid posteriors of intercept-only models.

use std::sync::OnceLock;

use cmpglm::cmp::{sample, CmpParams, SeriesControl};
use cmpglm::diagnostics::summarize;
use cmpglm::glm::{fit_mle, Dataset, Family};
use cmpglm::mcmc::{run_chain, Chain, HastingsFactor, SamplerConfig};
use cmpglm::posterior::PosteriorContext;
use cmpglm::predictive::{posterior_predictive, YMax};
use cmpglm::priors::{BetaPrior, DispersionPrior, PriorSpec};
use cmpglm_testkit::{grid_cdf, ks_distance, total_variation, InterceptGrid};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const KEPT: usize = 200_000;

fn synthetic_counts(n: usize, mu: f64, nu: f64, seed: u64) -> Vec<u64> {
    let ctl = SeriesControl::default();
    let params = CmpParams::new(mu, nu, &ctl).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample(&params, &ctl, &mut rng).unwrap()).collect()
}

fn intercept_only(y: &[u64]) -> Dataset {
    Dataset::new(y.to_vec(), DMatrix::from_element(y.len(), 1, 1.0), vec!["(Intercept)".into()]).unwrap()
}

fn chain_for(y: &[u64], priors: PriorSpec, hastings: HastingsFactor, seed: u64) -> Chain {
    let data = intercept_only(y);
    let fit = fit_mle(&data, Family::CmpMu, &SeriesControl::default()).unwrap();
    let mut cfg = SamplerConfig::from_mle(&fit, seed);
    cfg.n_samples = KEPT;
    cfg.thin = 5;
    cfg.hastings = hastings;
    run_chain(&PosteriorContext::new(data, Family::CmpMu, priors), &cfg).unwrap()
}

fn marginal_ks(grid: &InterceptGrid, chain: &Chain) -> (f64, f64) {
    let g = &grid.posterior;
    let (bm, nm) = (g.beta_marginal(), g.nu_marginal());
    let ks_beta = ks_distance(&chain.column(0), |x| grid_cdf(&g.beta, g.beta_step, &bm, x));
    let ks_nu = ks_distance(&chain.column(1), |x| grid_cdf(&g.nu, g.nu_step, &nm, x));
    (ks_beta, ks_nu)
}

struct Flat10 {
    y: Vec<u64>,
    grid: InterceptGrid,
    chain: Chain,
}

fn flat10() -> &'static Flat10 {
    static CELL: OnceLock<Flat10> = OnceLock::new();
    CELL.get_or_init(|| {
        let y = synthetic_counts(10, 3.0, 1.0, 17);
        // Counts on two adjacent values leave the flat-prior posterior
        // improper in nu (the likelihood tends to a constant as nu grows).
        assert!(y.iter().max().unwrap() - y.iter().min().unwrap() >= 2, "{y:?}");
        let grid = InterceptGrid::new(&y, |_, _| 0.0, 200);
        let chain = chain_for(&y, PriorSpec::flat(), HastingsFactor::DetailedBalance, 99);
        Flat10 { y, grid, chain }
    })
}

#[test]
fn grid_box_holds_the_posterior() {
    let f = flat10();
    assert!(f.grid.posterior.edge_mass() < 1e-6, "{}", f.grid.posterior.edge_mass());
}

#[test]
fn flat_prior_marginals_match_grid() {
    let f = flat10();
    let (kb, kn) = marginal_ks(&f.grid, &f.chain);
    println!("y = {:?}; KS beta0 = {kb:.4}, KS nu = {kn:.4}", f.y);
    assert!(kb < 0.02 && kn < 0.02, "KS beta0 {kb}, nu {kn}");
}

#[test]
fn inverted_hastings_factor_fails_the_oracle() {
    let f = flat10();
    let chain = chain_for(&f.y, PriorSpec::flat(), HastingsFactor::Inverted, 99);
    let (kb, kn) = marginal_ks(&f.grid, &chain);
    println!("inverted factor: KS beta0 = {kb:.4}, KS nu = {kn:.4}");
    assert!(kn.max(kb) > 0.02);
}

#[test]
fn summary_means_match_grid_means() {
    let f = flat10();
    let s = summarize(&f.chain, &[0.95]).unwrap();
    let g = &f.grid.posterior;
    assert!((s[0].post_mean - g.beta_mean()).abs() < 0.02, "{} vs {}", s[0].post_mean, g.beta_mean());
    assert!((s[1].post_mean - g.nu_mean()).abs() < 0.02 * g.nu_mean().max(1.0), "{} vs {}", s[1].post_mean, g.nu_mean());
}

#[test]
fn predictive_matches_grid_predictive() {
    let f = flat10();
    let y_max = 40;
    let mc = posterior_predictive(&f.chain, &DVector::from_vec(vec![1.0]), YMax::Fixed(y_max), &SeriesControl::default()).unwrap();
    let exact = f.grid.predictive(y_max as usize);
    let tv = total_variation(&mc.pmf, &exact);
    println!("predictive TV = {tv:.5}");
    assert!(tv < 0.01);
    assert!(mc.mass() > 0.999);
}

#[test]
fn informative_priors_on_five_counts() {
    // beta0 ~ N(1, 0.5), nu ~ LogNormal(0, 1).
    let y = synthetic_counts(5, 2.5, 1.5, 3);
    let priors = PriorSpec {
        beta: BetaPrior::normal(DVector::from_vec(vec![1.0]), DMatrix::from_element(1, 1, 0.5)).unwrap(),
        dispersion: DispersionPrior::log_normal(0.0, 1.0).unwrap(),
    };
    let grid = InterceptGrid::new(
        &y,
        |b, v| -(b - 1.0).powi(2) / (2.0 * 0.5) - v.ln() - v.ln().powi(2) / 2.0,
        200,
    );
    assert!(grid.posterior.edge_mass() < 1e-6);
    let chain = chain_for(&y, priors, HastingsFactor::DetailedBalance, 5);
    let (kb, kn) = marginal_ks(&grid, &chain);
    println!("y = {y:?}; KS beta0 = {kb:.4}, KS nu = {kn:.4}");
    assert!(kb < 0.02 && kn < 0.02);
}
