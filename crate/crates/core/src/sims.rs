//! Frequentist coverage of credible intervals on synthetic data.
//!
//! Responses are simulated on a fixed design from a known coefficient
//! vector under one of three generators, each candidate model is fitted by
//! MLE followed by the MH sampler, and we count how often the equal-tailed
//! intervals contain the generating values.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmp::{sample as cmp_sample, CmpParams, SeriesControl};
use crate::diagnostics::credible_interval;
use crate::error::{Error, Result};
use crate::glm::{fit_mle, mean_vector, Dataset, Family};
use crate::mcmc::{run_chain, SamplerConfig};
use crate::posterior::PosteriorContext;
use crate::priors::PriorSpec;

/// Posterior-mean coefficients of the takeover-bids fit, in design order:
/// intercept, leglrest, rearest, finrest, whtknght, bidprem, insthold,
/// size, size^2, regulatn.
pub const TAKEOVER_TRUE_BETA: [f64; 10] = [0.975, 0.271, -0.183, 0.041, 0.496, -0.695, -0.389, 0.183, -0.008, -0.038];

/// Dispersion of the underdispersed CMP generator.
pub const TAKEOVER_TRUE_NU: f64 = 1.62;

/// Shape of the overdispersed negative binomial generator.
pub const NEGBIN_PHI: f64 = 2.0;

/// Default credible levels.
pub const LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

/// Data-generating distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Poisson,
    /// Gamma-Poisson mixture with mean `mu` and variance `mu + mu^2 / phi`.
    NegBin { phi: f64 },
    CmpMu { nu: f64 },
}

impl Generator {
    pub fn label(&self) -> String {
        match self {
            Generator::Poisson => "Poisson".into(),
            Generator::NegBin { phi } => format!("NegBin(phi={phi})"),
            Generator::CmpMu { nu } => format!("CMP_mu(nu={nu})"),
        }
    }

    /// The value of the CMP dispersion under which this generator is a CMP_mu model.
    pub fn true_nu(&self) -> Option<f64> {
        match *self {
            Generator::Poisson => Some(1.0),
            Generator::CmpMu { nu } => Some(nu),
            Generator::NegBin { .. } => None,
        }
    }

    /// Whether `model` is fitted to data from this generator. The negative
    /// binomial cannot represent underdispersion, so it is skipped for CMP data.
    pub fn fits(&self, model: Family) -> bool {
        !(matches!(self, Generator::CmpMu { .. }) && model == Family::NegBin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSetting {
    pub generator: Generator,
    pub true_beta: DVector<f64>,
    /// Held fixed across replicates.
    pub design: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub n_reps: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl SimSetting {
    pub fn validate(&self) -> Result<()> {
        if self.design.ncols() != self.true_beta.len() || self.column_names.len() != self.true_beta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.design.ncols(),
                found: self.true_beta.len(),
            });
        }
        if self.n_reps == 0 {
            return Err(Error::InvalidParameter("n_reps must be >= 1".into()));
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::InvalidParameter("levels must lie in (0, 1)".into()));
        }
        match self.generator {
            Generator::NegBin { phi } if !(phi > 0.0 && phi.is_finite()) => {
                Err(Error::InvalidParameter(format!("phi must be positive, got {phi}")))
            }
            Generator::CmpMu { nu } if !(nu >= 0.0 && nu.is_finite()) => {
                Err(Error::InvalidParameter(format!("nu must be non-negative, got {nu}")))
            }
            _ => Ok(()),
        }
    }
}

/// Sampler and model settings shared by every replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub models: Vec<Family>,
    /// Coefficient indices whose coverage is tabulated.
    pub tracked: Vec<usize>,
    pub n_samples: usize,
    pub thin: usize,
    pub priors: PriorSpec,
    pub series: SeriesControl,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl StudyConfig {
    /// All three models, coefficients 1-4, 1000 draws thinned by 10, vague priors.
    pub fn paper(p: usize) -> Self {
        Self {
            models: vec![Family::Poisson, Family::NegBin, Family::CmpMu],
            tracked: vec![1, 2, 3, 4],
            n_samples: 1000,
            thin: 10,
            priors: PriorSpec::vague(p),
            series: SeriesControl::default(),
            threads: None,
        }
    }
}

/// Independent stream for replicate `rep` (ChaCha stream id = `rep`).
fn replicate_rng(seed: u64, rep: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(rep as u64);
    rng
}

const DATA_SALT: u64 = 0;
const CHAIN_SALT: u64 = 0x5bd1_e995_9e37_79b9;

/// Simulate responses on the fixed design. Deterministic in `(seed, rep)`.
pub fn generate_dataset(setting: &SimSetting, rep: usize) -> Result<Dataset> {
    setting.validate()?;
    let mu = mean_vector(&setting.design, &setting.true_beta)?;
    let mut rng = replicate_rng(setting.seed, rep, DATA_SALT);
    let ctl = SeriesControl::default();
    let y = mu
        .iter()
        .map(|&m| draw(setting.generator, m, &ctl, &mut rng))
        .collect::<Result<Vec<u64>>>()?;
    Dataset::new(y, setting.design.clone(), setting.column_names.clone())
}

fn draw<R: Rng>(generator: Generator, mu: f64, ctl: &SeriesControl, rng: &mut R) -> Result<u64> {
    let poisson = |rate: f64, rng: &mut R| -> Result<u64> {
        if rate <= 0.0 {
            return Ok(0);
        }
        let d = Poisson::new(rate).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(d.sample(rng) as u64)
    };
    match generator {
        Generator::Poisson => poisson(mu, rng),
        Generator::NegBin { phi } => {
            let g = Gamma::new(phi, mu / phi).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let rate = g.sample(rng);
            poisson(rate, rng)
        }
        Generator::CmpMu { nu } => cmp_sample(&CmpParams::new(mu, nu, ctl)?, ctl, rng),
    }
}

/// Interval containment for one fitted model on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFit {
    pub model: Family,
    /// `covered[level][k]` for the tracked coefficients.
    pub covered: Vec<Vec<bool>>,
    /// Containment of the generating `nu` (CMP model, when the generator has one).
    pub nu_covered: Option<Vec<bool>>,
    /// Whether the `nu` interval excludes 1 (CMP model only).
    pub nu_excludes_one: Option<Vec<bool>>,
    pub accept_rate_beta: f64,
}

/// Fit one model to one replicate.
pub fn fit_replicate(setting: &SimSetting, cfg: &StudyConfig, data: Dataset, model: Family, chain_seed: u64) -> Result<ReplicateFit> {
    let fit = fit_mle(&data, model, &cfg.series)?;
    let mut sampler = SamplerConfig::from_mle(&fit, chain_seed);
    sampler.n_samples = cfg.n_samples;
    sampler.thin = cfg.thin;
    let mut ctx = PosteriorContext::new(data, model, cfg.priors.clone());
    ctx.series = cfg.series;
    let chain = run_chain(&ctx, &sampler)?;

    let mut covered = Vec::with_capacity(setting.levels.len());
    for &level in &setting.levels {
        let row = cfg
            .tracked
            .iter()
            .map(|&k| {
                let (lo, hi) = credible_interval(&chain.column(k), level)?;
                Ok(lo <= setting.true_beta[k] && setting.true_beta[k] <= hi)
            })
            .collect::<Result<Vec<bool>>>()?;
        covered.push(row);
    }
    let (mut nu_covered, mut nu_excludes_one) = (None, None);
    if model == Family::CmpMu {
        let nu = chain.column(chain.p());
        let intervals = setting
            .levels
            .iter()
            .map(|&l| credible_interval(&nu, l))
            .collect::<Result<Vec<_>>>()?;
        nu_excludes_one = Some(intervals.iter().map(|&(lo, hi)| !(lo <= 1.0 && 1.0 <= hi)).collect());
        nu_covered = setting
            .generator
            .true_nu()
            .map(|t| intervals.iter().map(|&(lo, hi)| lo <= t && t <= hi).collect());
    }
    Ok(ReplicateFit {
        model,
        covered,
        nu_covered,
        nu_excludes_one,
        accept_rate_beta: chain.accept_rate_beta(),
    })
}

/// One `(model, level, parameter)` cell of the coverage table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCell {
    pub model: Family,
    pub level: f64,
    pub parameter: String,
    /// `coverage` for interval containment, `power` for exclusion of `nu = 1`.
    pub metric: &'static str,
    pub hits: usize,
    pub total: usize,
}

impl CoverageCell {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    pub model: Family,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageTable {
    pub generator: Generator,
    pub n_reps: usize,
    pub cells: Vec<CoverageCell>,
    pub failures: Vec<ReplicateFailure>,
}

impl CoverageTable {
    pub fn cell(&self, model: Family, level: f64, parameter: &str, metric: &str) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| {
            c.model == model && (c.level - level).abs() < 1e-12 && c.parameter == parameter && c.metric == metric
        })
    }

    pub fn coverage(&self, model: Family, level: f64, parameter: &str) -> Option<f64> {
        self.cell(model, level, parameter, "coverage").map(CoverageCell::rate)
    }

    pub fn power(&self, level: f64) -> Option<f64> {
        self.cell(Family::CmpMu, level, "nu", "power").map(CoverageCell::rate)
    }

    /// `generator,model,level,parameter,metric,hits,total,rate`, one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("generator,model,level,parameter,metric,hits,total,rate\n");
        let generator = self.generator.label();
        for c in &self.cells {
            out.push_str(&format!(
                "{generator},{},{},{},{},{},{},{:.4}\n",
                c.model.label(),
                c.level,
                c.parameter,
                c.metric,
                c.hits,
                c.total,
                c.rate()
            ));
        }
        out
    }
}

/// Seeds for each model's chain on replicate `rep`, in `cfg.models` order.
fn chain_seeds(seed: u64, rep: usize, n: usize) -> Vec<u64> {
    let mut rng = replicate_rng(seed, rep, CHAIN_SALT);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Run every replicate and tabulate. Replicates run in parallel, each on its
/// own random streams, so the table does not depend on the thread count.
/// Failed fits are recorded and excluded from the denominators.
pub fn coverage_study(setting: &SimSetting, cfg: &StudyConfig) -> Result<CoverageTable> {
    coverage_study_with_progress(setting, cfg, |_| {})
}

pub fn coverage_study_with_progress<P>(setting: &SimSetting, cfg: &StudyConfig, progress: P) -> Result<CoverageTable>
where
    P: Fn(usize) + Sync,
{
    setting.validate()?;
    if let Some(&k) = cfg.tracked.iter().find(|&&k| k >= setting.true_beta.len()) {
        return Err(Error::DimensionMismatch {
            expected: setting.true_beta.len(),
            found: k + 1,
        });
    }
    let models: Vec<Family> = cfg.models.iter().copied().filter(|m| setting.generator.fits(*m)).collect();
    let run = || -> Vec<(usize, Vec<std::result::Result<ReplicateFit, ReplicateFailure>>)> {
        (0..setting.n_reps)
            .into_par_iter()
            .map(|rep| {
                let seeds = chain_seeds(setting.seed, rep, cfg.models.len());
                let results = match generate_dataset(setting, rep) {
                    Err(e) => models
                        .iter()
                        .map(|&model| {
                            Err(ReplicateFailure {
                                rep,
                                model,
                                message: format!("data generation: {e}"),
                            })
                        })
                        .collect(),
                    Ok(data) => models
                        .iter()
                        .map(|&model| {
                            let idx = cfg.models.iter().position(|m| *m == model).expect("model listed");
                            fit_replicate(setting, cfg, data.clone(), model, seeds[idx]).map_err(|e| ReplicateFailure {
                                rep,
                                model,
                                message: e.to_string(),
                            })
                        })
                        .collect(),
                };
                progress(rep);
                (rep, results)
            })
            .collect()
    };
    let outcomes = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(run),
        None => run(),
    };

    let names: Vec<String> = cfg.tracked.iter().map(|&k| setting.column_names[k].clone()).collect();
    let mut counts: BTreeMap<(usize, usize, usize, &'static str), (usize, usize)> = BTreeMap::new();
    let mut failures = Vec::new();
    for (_, results) in &outcomes {
        for result in results {
            let fit = match result {
                Ok(f) => f,
                Err(f) => {
                    failures.push(f.clone());
                    continue;
                }
            };
            let mi = models.iter().position(|m| *m == fit.model).expect("model listed");
            for (li, row) in fit.covered.iter().enumerate() {
                for (k, &hit) in row.iter().enumerate() {
                    let e = counts.entry((mi, li, k, "coverage")).or_default();
                    e.0 += usize::from(hit);
                    e.1 += 1;
                }
            }
            let nu_index = names.len();
            for (values, metric) in [(&fit.nu_covered, "coverage"), (&fit.nu_excludes_one, "power")] {
                if let Some(values) = values {
                    for (li, &hit) in values.iter().enumerate() {
                        let e = counts.entry((mi, li, nu_index, metric)).or_default();
                        e.0 += usize::from(hit);
                        e.1 += 1;
                    }
                }
            }
        }
    }
    failures.sort_by_key(|f| (f.rep, f.model.label()));

    let cells = counts
        .into_iter()
        .map(|((mi, li, k, metric), (hits, total))| CoverageCell {
            model: models[mi],
            level: setting.levels[li],
            parameter: names.get(k).cloned().unwrap_or_else(|| "nu".into()),
            metric,
            hits,
            total,
        })
        .collect();
    Ok(CoverageTable {
        generator: setting.generator,
        n_reps: setting.n_reps,
        cells,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_setting(generator: Generator, n_reps: usize) -> SimSetting {
        let n = 60;
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i % 3) as f64 - 1.0 });
        SimSetting {
            generator,
            true_beta: DVector::from_vec(vec![1.0, 0.4]),
            design,
            column_names: vec!["(Intercept)".into(), "x".into()],
            n_reps,
            levels: LEVELS.to_vec(),
            seed: 2024,
        }
    }

    #[test]
    fn generation_is_deterministic_per_replicate() {
        let s = small_setting(Generator::CmpMu { nu: 1.62 }, 3);
        assert_eq!(generate_dataset(&s, 1).unwrap(), generate_dataset(&s, 1).unwrap());
        assert_ne!(generate_dataset(&s, 1).unwrap().y(), generate_dataset(&s, 2).unwrap().y());
    }

    #[test]
    fn poisson_generator_mean() {
        let s = small_setting(Generator::Poisson, 1);
        let mu = mean_vector(&s.design, &s.true_beta).unwrap();
        let target = mu.mean();
        let reps = 1000;
        let total: f64 = (0..reps)
            .map(|r| generate_dataset(&s, r).unwrap().y().iter().sum::<u64>() as f64)
            .sum();
        let avg = total / (reps * s.design.nrows()) as f64;
        // Var of the grand mean is mean(mu) / (reps * n).
        let se = (target / (reps * s.design.nrows()) as f64).sqrt();
        assert!((avg - target).abs() < 4.0 * se, "{avg} vs {target}");
    }

    fn group_moments(s: &SimSetting, reps: usize) -> Vec<(f64, f64, f64)> {
        let mu = mean_vector(&s.design, &s.true_beta).unwrap();
        (0..3)
            .map(|g| {
                let mut vals = Vec::new();
                for r in 0..reps {
                    let d = generate_dataset(s, r).unwrap();
                    vals.extend((0..d.n()).filter(|i| i % 3 == g).map(|i| d.y()[i] as f64));
                }
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
                (mu[g], m, v)
            })
            .collect()
    }

    #[test]
    fn negbin_generator_variance_function() {
        let s = small_setting(Generator::NegBin { phi: 2.0 }, 1);
        for (mu, m, v) in group_moments(&s, 400) {
            let target = mu + mu * mu / 2.0;
            assert!((m / mu - 1.0).abs() < 0.05, "{m} vs {mu}");
            assert!((v / target - 1.0).abs() < 0.12, "{v} vs {target}");
        }
    }

    #[test]
    fn cmp_generator_is_underdispersed() {
        let s = small_setting(Generator::CmpMu { nu: 1.62 }, 1);
        for (mu, m, v) in group_moments(&s, 300) {
            assert!((m / mu - 1.0).abs() < 0.05);
            assert!(v < m, "variance {v} not below mean {m}");
        }
    }

    fn quick_cfg(models: Vec<Family>) -> StudyConfig {
        StudyConfig {
            models,
            tracked: vec![1],
            n_samples: 200,
            thin: 2,
            priors: PriorSpec::vague(2),
            series: SeriesControl::default(),
            threads: Some(1),
        }
    }

    #[test]
    fn study_is_deterministic_and_monotone() {
        let s = small_setting(Generator::Poisson, 6);
        let cfg = quick_cfg(vec![Family::Poisson, Family::CmpMu]);
        let a = coverage_study(&s, &cfg).unwrap();
        let b = coverage_study(&s, &StudyConfig { threads: Some(2), ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert!(a.failures.is_empty());
        for model in [Family::Poisson, Family::CmpMu] {
            let r: Vec<f64> = LEVELS.iter().map(|&l| a.coverage(model, l, "x").unwrap()).collect();
            assert!(r[0] <= r[1] && r[1] <= r[2]);
        }
        assert!(a.coverage(Family::CmpMu, 0.95, "nu").is_some());
        assert!(a.coverage(Family::Poisson, 0.95, "nu").is_none());
        assert!(a.to_csv().starts_with("generator,model,level,parameter,metric,hits,total,rate\nPoisson,"));
    }

    #[test]
    fn negbin_model_skipped_for_cmp_data() {
        let s = small_setting(Generator::CmpMu { nu: 1.62 }, 1);
        let t = coverage_study(&s, &quick_cfg(vec![Family::NegBin, Family::Poisson])).unwrap();
        assert!(t.cells.iter().all(|c| c.model == Family::Poisson));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let mut s = small_setting(Generator::NegBin { phi: -1.0 }, 1);
        assert!(generate_dataset(&s, 0).is_err());
        s.generator = Generator::Poisson;
        s.n_reps = 0;
        assert!(s.validate().is_err());
        let s = small_setting(Generator::Poisson, 1);
        let mut cfg = quick_cfg(vec![Family::Poisson]);
        cfg.tracked = vec![5];
        assert!(coverage_study(&s, &cfg).is_err());
    }
}
