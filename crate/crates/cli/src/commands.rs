//! The four subcommands. Each has a `run_*` half that computes everything in
//! memory and a `cmd_*` half that commits the artifacts to disk.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use cmpglm::cmp::SeriesControl;
use cmpglm::diagnostics::{self, ParamSummary};
use cmpglm::glm::{fit_mle, Dataset, Family, MleFit};
use cmpglm::mcmc::{run_chain, Chain, ChainEnvelope, SamplerConfig};
use cmpglm::posterior::PosteriorContext;
use cmpglm::predictive::{posterior_predictive, PredictiveResult, YMax};
use cmpglm::sims::{coverage_study_with_progress, CoverageTable, Generator, SimSetting, StudyConfig, TAKEOVER_TRUE_BETA};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{GeneratorKind, RunConfig};
use crate::data::{design_names, design_row, load_csv};
use crate::error::{CliError, Result};
use crate::output::{sanitize, Artifacts};

/// Fit one model to `data` with the configured priors and sampler.
pub fn sample_posterior(cfg: &RunConfig, data: &Dataset, family: Family) -> Result<(MleFit, Chain)> {
    let ctl = SeriesControl::default();
    let fit = fit_mle(data, family, &ctl)?;
    let mut sampler = SamplerConfig::from_mle(&fit, cfg.seed()?);
    sampler.n_samples = cfg.sampler.n_samples;
    sampler.thin = cfg.sampler.thin;
    sampler.burn_in = cfg.sampler.burn_in;
    sampler.hastings = cfg.sampler.hastings;
    let ctx = PosteriorContext::new(data.clone(), family, cfg.prior.spec(data.p())?);
    let chain = run_chain(&ctx, &sampler)?;
    Ok((fit, chain))
}

#[derive(Serialize)]
struct MleReport<'a> {
    family: Family,
    column_names: &'a [String],
    beta_hat: Vec<f64>,
    std_error: Vec<f64>,
    dispersion: Option<f64>,
    log_dispersion_se: Option<f64>,
    loglik: f64,
    converged: bool,
    iterations: usize,
    covariance_fallback: bool,
}

pub fn mle_json(fit: &MleFit, names: &[String]) -> String {
    let report = MleReport {
        family: fit.family,
        column_names: names,
        beta_hat: fit.beta_hat.iter().copied().collect(),
        std_error: fit.cov_hat.diagonal().iter().map(|v| v.sqrt()).collect(),
        dispersion: fit.disp_hat,
        log_dispersion_se: fit.log_disp_se,
        loglik: fit.loglik,
        converged: fit.converged,
        iterations: fit.iterations,
        covariance_fallback: fit.covariance_fallback,
    };
    serde_json::to_string_pretty(&report).expect("mle report serializes")
}

/// Plot-data files for a chain: trace, autocorrelations, and per-parameter
/// lag-1 pairs and density estimates.
pub fn plot_artifacts(chain: &Chain, summaries: &[ParamSummary], out: &mut Artifacts) -> Result<()> {
    out.add("plots/trace.csv", diagnostics::trace_csv(chain));
    out.add("plots/acf.csv", diagnostics::acf_csv(summaries));
    for (j, name) in chain.column_names.iter().enumerate() {
        let series = chain.column(j);
        let stem = format!("{j:02}_{}", sanitize(name));
        out.add(format!("plots/lag1_{stem}.csv"), diagnostics::lag1_csv(&series));
        out.add(format!("plots/kde_{stem}.csv"), diagnostics::kde_csv(&diagnostics::kde(&series)?));
    }
    Ok(())
}

pub struct FitOutcome {
    pub data: Dataset,
    pub mle: MleFit,
    pub chain: Chain,
    pub summaries: Vec<ParamSummary>,
    /// Same pipeline under the Poisson model, when `compare_poisson` is set.
    pub poisson: Option<(Chain, Vec<ParamSummary>)>,
    pub artifacts: Artifacts,
}

pub fn run_fit(cfg: &RunConfig) -> Result<FitOutcome> {
    let data = load_csv(&cfg.data)?;
    let family = cfg.model.family;
    let (mle, chain) = sample_posterior(cfg, &data, family)?;
    let levels = &cfg.output.levels;
    let summaries = diagnostics::summarize(&chain, levels)?;

    let mut out = Artifacts::new();
    out.add("mle.json", mle_json(&mle, data.column_names()));
    out.add("chain.csv", chain.to_csv());
    out.add("chain.json", chain.to_json());
    out.add("summary.csv", diagnostics::summary_csv(&summaries));
    plot_artifacts(&chain, &summaries, &mut out)?;

    let poisson = if cfg.model.compare_poisson && family != Family::Poisson {
        let (_, pchain) = sample_posterior(cfg, &data, Family::Poisson)?;
        let psum = diagnostics::summarize(&pchain, levels)?;
        out.add("summary_poisson.csv", diagnostics::summary_csv(&psum));
        Some((pchain, psum))
    } else {
        None
    };
    Ok(FitOutcome {
        data,
        mle,
        chain,
        summaries,
        poisson,
        artifacts: out,
    })
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    run_fit(cfg)?.artifacts.commit(&cfg.output.dir)
}

/// Column names a chain for this config must carry.
pub fn expected_chain_columns(cfg: &RunConfig) -> Result<Vec<String>> {
    let mut names = design_names(&cfg.data)?;
    names.extend(cfg.model.family.dispersion_name().map(String::from));
    Ok(names)
}

/// Parse a chain CSV as written by `fit`.
pub fn read_chain_csv(path: &Path, family: Option<Family>) -> Result<Chain> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| schema(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(schema("missing header row".into()));
    }
    let family = family.unwrap_or_else(|| match header.last().map(String::as_str) {
        Some("nu") => Family::CmpMu,
        Some("phi") => Family::NegBin,
        _ => Family::Poisson,
    });
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| schema(e.to_string()))?;
        for (j, cell) in record.iter().enumerate() {
            let v = cell.trim().parse::<f64>().ok().filter(|v| v.is_finite());
            values.push(v.ok_or_else(|| CliError::NonNumeric {
                path: path.to_path_buf(),
                row: i + 1,
                column: header[j].clone(),
                value: cell.to_string(),
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(schema("chain has no draws".into()));
    }
    let draws = DMatrix::from_row_slice(rows, header.len(), &values);
    Ok(Chain::from_draws(draws, header, family, 0)?)
}

pub fn run_predict(cfg: &RunConfig, chain_path: &Path) -> Result<PredictiveResult> {
    let section = cfg
        .predict
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [predict] section".into()))?;
    let chain = read_chain_csv(chain_path, Some(cfg.model.family))?;
    let expected = expected_chain_columns(cfg)?;
    if chain.column_names.len() != expected.len() {
        return Err(CliError::Model(cmpglm::Error::DimensionMismatch {
            expected: expected.len(),
            found: chain.column_names.len(),
        }));
    }
    if chain.column_names != expected {
        return Err(CliError::Config(format!(
            "chain columns [{}] do not match the configured model [{}]",
            chain.column_names.join(", "),
            expected.join(", ")
        )));
    }
    let x_new: DVector<f64> = design_row(&cfg.data, &section.values)?;
    let y_max = match section.y_max {
        Some(m) => YMax::Fixed(m),
        None => {
            let data = load_csv(&cfg.data)?;
            YMax::Auto {
                max_observed: data.y().iter().copied().max().unwrap_or(0),
            }
        }
    };
    Ok(posterior_predictive(&chain, &x_new, y_max, &SeriesControl::default())?)
}

pub fn cmd_predict(cfg: &RunConfig, chain_path: &Path) -> Result<Vec<PathBuf>> {
    let result = run_predict(cfg, chain_path)?;
    let mut out = Artifacts::new();
    out.add("predictive.csv", result.to_csv());
    out.add("predictive.json", result.to_json());
    out.commit(&cfg.output.dir)
}

/// Replicates with a failed fit, one line each.
fn failures_csv(tables: &[CoverageTable]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["generator", "rep", "model", "message"]).expect("in-memory write");
    for t in tables {
        for f in &t.failures {
            w.write_record([t.generator.label(), f.rep.to_string(), f.model.label().to_string(), f.message.clone()])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

/// Coverage tables for every configured generator. `progress` is called
/// with `(generator label, completed, total)` after each replicate.
pub fn run_coverage<P>(cfg: &RunConfig, threads: Option<usize>, progress: P) -> Result<Vec<CoverageTable>>
where
    P: Fn(&str, usize, usize) + Sync,
{
    let study = cfg
        .study
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [study] section".into()))?;
    if threads == Some(0) {
        return Err(CliError::Config("--threads must be >= 1".into()));
    }
    let data = load_csv(&cfg.data)?;
    let p = data.p();
    let true_beta = match &study.true_beta {
        Some(b) => b.clone(),
        None if p == TAKEOVER_TRUE_BETA.len() => TAKEOVER_TRUE_BETA.to_vec(),
        None => return Err(CliError::Config(format!("study.true_beta is required for a design with {p} columns"))),
    };
    if true_beta.len() != p {
        return Err(CliError::Config(format!("study.true_beta has {} entries, design has {p}", true_beta.len())));
    }
    let tracked = study
        .tracked
        .iter()
        .map(|name| {
            data.column_names()
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| CliError::Config(format!("tracked coefficient `{name}` is not a design column")))
        })
        .collect::<Result<Vec<_>>>()?;
    let study_cfg = StudyConfig {
        models: study.models.clone(),
        tracked,
        n_samples: cfg.sampler.n_samples,
        thin: cfg.sampler.thin,
        priors: cfg.prior.spec(p)?,
        series: SeriesControl::default(),
        threads,
    };
    let seed = cfg.seed()?;
    let mut tables = Vec::with_capacity(study.generators.len());
    for kind in &study.generators {
        let generator = match kind {
            GeneratorKind::Poisson => Generator::Poisson,
            GeneratorKind::NegBin => Generator::NegBin { phi: study.negbin_phi },
            GeneratorKind::CmpMu => Generator::CmpMu { nu: study.cmp_nu },
        };
        let setting = SimSetting {
            generator,
            true_beta: DVector::from_vec(true_beta.clone()),
            design: data.x().clone(),
            column_names: data.column_names().to_vec(),
            n_reps: study.n_reps,
            levels: study.levels.clone(),
            seed,
        };
        let label = generator.label();
        let done = AtomicUsize::new(0);
        let table = coverage_study_with_progress(&setting, &study_cfg, |_| {
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            progress(&label, k, study.n_reps);
        })?;
        tables.push(table);
    }
    Ok(tables)
}

/// All tables stacked under one header.
pub fn coverage_csv(tables: &[CoverageTable]) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        let csv = t.to_csv();
        let body = if i == 0 { csv.as_str() } else { csv.split_once('\n').map_or("", |(_, rest)| rest) };
        out.push_str(body);
    }
    out
}

pub fn cmd_coverage(cfg: &RunConfig, threads: Option<usize>) -> Result<Vec<PathBuf>> {
    let tables = run_coverage(cfg, threads, |label, k, n| {
        eprintln!("[coverage] {label}: replicate {k}/{n}");
    })?;
    let mut out = Artifacts::new();
    out.add("coverage.csv", coverage_csv(&tables));
    out.add("coverage_failures.csv", failures_csv(&tables));
    out.commit(&cfg.output.dir)
}

fn read_envelope(path: &Path) -> Result<Option<ChainEnvelope>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map(Some).map_err(|e| CliError::Schema {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Summaries and plot data for an existing chain file.
///
/// A `chain.json` envelope next to the CSV, when present and consistent,
/// supplies the family, seed, acceptance counts and thinning.
pub fn run_diagnose(chain_path: &Path, levels: &[f64]) -> Result<Artifacts> {
    let mut chain = read_chain_csv(chain_path, None)?;
    if let Some(envelope) = read_envelope(&chain_path.with_extension("json"))? {
        if envelope.column_names == chain.column_names && envelope.n_draws == chain.len() {
            chain = Chain::from_draws(chain.draws, chain.column_names, envelope.family, envelope.seed)?;
            chain.accepted_beta = envelope.accepted_beta;
            chain.proposed_beta = envelope.proposed_beta;
            chain.accepted_disp = envelope.accepted_disp;
            chain.proposed_disp = envelope.proposed_disp;
            chain.config = envelope.config;
        }
    }
    let summaries = diagnostics::summarize(&chain, levels)?;
    let mut out = Artifacts::new();
    out.add("summary.csv", diagnostics::summary_csv(&summaries));
    plot_artifacts(&chain, &summaries, &mut out)?;
    Ok(out)
}

pub fn cmd_diagnose(chain_path: &Path, levels: &[f64], dir: &Path) -> Result<Vec<PathBuf>> {
    run_diagnose(chain_path, levels)?.commit(dir)
}
