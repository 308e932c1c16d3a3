//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [data]
//! path = "takeover_bids.csv"        # relative to this file
//! response = "numbids"
//! terms = ["leglrest", "size", "size^2", "prog==2"]
//! intercept = true                  # default
//!
//! [model]
//! family = "cmp_mu"                 # cmp_mu | poisson | neg_bin
//! compare_poisson = false           # also fit the Poisson model (fit only)
//!
//! [prior]
//! beta = "normal"                   # normal | flat
//! beta_mean = 0.0
//! beta_variance = 1e5
//! dispersion = "log_normal"         # log_normal | flat
//! dispersion_location = 0.0
//! dispersion_scale2 = 1e5
//!
//! [sampler]
//! n_samples = 1000
//! thin = 10
//! burn_in = 0
//! seed = 1                          # required here or via --seed
//!
//! [output]
//! dir = "out"
//! levels = [0.95]
//!
//! [predict]                         # predict only
//! values = { leglrest = 1.0, size = 0.5 }
//! y_max = 30                        # optional
//!
//! [study]                           # coverage only
//! generators = ["poisson", "neg_bin", "cmp_mu"]
//! cmp_nu = 1.62
//! negbin_phi = 2.0
//! true_beta = [...]                 # defaults to the takeover-bids values when p = 10
//! n_reps = 200
//! models = ["poisson", "neg_bin", "cmp_mu"]
//! tracked = ["leglrest", "rearest", "finrest", "whtknght"]
//! levels = [0.90, 0.95, 0.99]
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cmpglm::glm::Family;
use cmpglm::mcmc::HastingsFactor;
use cmpglm::priors::{BetaPrior, DispersionPrior, PriorSpec};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub prior: PriorSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub output: OutputSection,
    pub predict: Option<PredictSection>,
    pub study: Option<StudySection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub path: PathBuf,
    pub response: String,
    /// Covariate terms: `name`, `name^2` (square) or `name==value` (indicator).
    pub terms: Vec<String>,
    #[serde(default = "yes")]
    pub intercept: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_family")]
    pub family: Family,
    #[serde(default)]
    pub compare_poisson: bool,
}

fn default_family() -> Family {
    Family::CmpMu
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: default_family(),
            compare_poisson: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPriorKind {
    Normal,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionPriorKind {
    LogNormal,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub beta: BetaPriorKind,
    pub beta_mean: f64,
    pub beta_variance: f64,
    pub dispersion: DispersionPriorKind,
    pub dispersion_location: f64,
    pub dispersion_scale2: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            beta: BetaPriorKind::Normal,
            beta_mean: 0.0,
            beta_variance: 1e5,
            dispersion: DispersionPriorKind::LogNormal,
            dispersion_location: 0.0,
            dispersion_scale2: 1e5,
        }
    }
}

impl PriorSection {
    pub fn spec(&self, p: usize) -> Result<PriorSpec> {
        let beta = match self.beta {
            BetaPriorKind::Flat => BetaPrior::Flat,
            BetaPriorKind::Normal => {
                if !(self.beta_variance > 0.0 && self.beta_variance.is_finite()) {
                    return Err(CliError::Config(format!("prior.beta_variance must be positive, got {}", self.beta_variance)));
                }
                BetaPrior::normal(DVector::from_element(p, self.beta_mean), DMatrix::identity(p, p) * self.beta_variance)?
            }
        };
        let dispersion = match self.dispersion {
            DispersionPriorKind::Flat => DispersionPrior::Flat,
            DispersionPriorKind::LogNormal => {
                DispersionPrior::log_normal(self.dispersion_location, self.dispersion_scale2)?
            }
        };
        Ok(PriorSpec { beta, dispersion })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub n_samples: usize,
    pub thin: usize,
    pub burn_in: usize,
    pub seed: Option<u64>,
    pub hastings: HastingsFactor,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            thin: 10,
            burn_in: 0,
            seed: None,
            hastings: HastingsFactor::DetailedBalance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub levels: Vec<f64>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            levels: vec![0.95],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// Raw covariate values by column name; derived terms are computed from them.
    pub values: BTreeMap<String, f64>,
    pub y_max: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Poisson,
    NegBin,
    CmpMu,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "all_generators")]
    pub generators: Vec<GeneratorKind>,
    #[serde(default = "default_nu")]
    pub cmp_nu: f64,
    #[serde(default = "default_phi")]
    pub negbin_phi: f64,
    pub true_beta: Option<Vec<f64>>,
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    #[serde(default = "all_models")]
    pub models: Vec<Family>,
    pub tracked: Vec<String>,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

fn all_generators() -> Vec<GeneratorKind> {
    vec![GeneratorKind::Poisson, GeneratorKind::NegBin, GeneratorKind::CmpMu]
}

fn default_nu() -> f64 {
    cmpglm::sims::TAKEOVER_TRUE_NU
}

fn default_phi() -> f64 {
    cmpglm::sims::NEGBIN_PHI
}

fn default_reps() -> usize {
    200
}

fn all_models() -> Vec<Family> {
    vec![Family::Poisson, Family::NegBin, Family::CmpMu]
}

fn default_levels() -> Vec<f64> {
    cmpglm::sims::LEVELS.to_vec()
}

impl RunConfig {
    /// Parse TOML text; relative data paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.data.path.is_relative() {
            cfg.data.path = base.join(&cfg.data.path);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    fn validate(&self) -> Result<()> {
        let check_levels = |levels: &[f64]| {
            if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                Err(CliError::Config("levels must be non-empty and lie in (0, 1)".into()))
            } else {
                Ok(())
            }
        };
        check_levels(&self.output.levels)?;
        if let Some(study) = &self.study {
            check_levels(&study.levels)?;
            if study.n_reps == 0 {
                return Err(CliError::Config("study.n_reps must be >= 1".into()));
            }
        }
        if self.sampler.n_samples == 0 || self.sampler.thin == 0 {
            return Err(CliError::Config("sampler.n_samples and sampler.thin must be >= 1".into()));
        }
        Ok(())
    }

    /// The sampler seed; there is no clock-based fallback.
    pub fn seed(&self) -> Result<u64> {
        self.sampler
            .seed
            .ok_or_else(|| CliError::Config("sampler.seed is required (or pass --seed)".into()))
    }
}
