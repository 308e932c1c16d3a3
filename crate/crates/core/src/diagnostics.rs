//! Single-chain summaries: autocorrelation, effective sample size, kernel
//! density estimates, posterior means and equal-tailed credible intervals.
//!
//! Quantiles use linear interpolation between order statistics: the `q`
//! quantile of sorted `x[0..n]` is `x[k] + (h - k) (x[k+1] - x[k])` with
//! `h = (n - 1) q` and `k = floor(h)`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mcmc::Chain;

/// Number of grid points in a density estimate.
pub const KDE_POINTS: usize = 512;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Centered series and its sum of squares; errors on zero variance.
fn centered(series: &[f64]) -> Result<(Vec<f64>, f64)> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let m = mean(series);
    let c: Vec<f64> = series.iter().map(|v| v - m).collect();
    let ss: f64 = c.iter().map(|v| v * v).sum();
    if !(ss > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((c, ss))
}

fn autocorrelation(c: &[f64], ss: f64, lag: usize) -> f64 {
    c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / ss
}

/// Sample autocorrelation at lags `1..=max_lag` (biased, `1/n` normalization).
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if max_lag == 0 || series.len() <= max_lag {
        return Err(Error::TooShort {
            needed: max_lag + 1,
            found: series.len(),
        });
    }
    let (c, ss) = centered(series)?;
    Ok((1..=max_lag).map(|k| autocorrelation(&c, ss, k)).collect())
}

/// Effective sample size `n / (1 + 2 sum rho_k)` with Geyer's initial
/// positive sequence: autocorrelations are summed in adjacent pairs
/// `rho_{2m} + rho_{2m+1}` for as long as the pair sums stay positive.
/// The result is capped at `n log10 n` for strongly antithetic series.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::TooShort { needed: 10, found: n });
    }
    let (c, ss) = centered(series)?;
    // tau = -1 + 2 * sum_{m >= 0} (rho_{2m} + rho_{2m+1}), with rho_0 = 1.
    let mut pair_sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = if m == 0 { 1.0 } else { autocorrelation(&c, ss, 2 * m) } + autocorrelation(&c, ss, 2 * m + 1);
        if !(pair > 0.0) {
            break;
        }
        pair_sum += pair;
        m += 1;
    }
    let nf = n as f64;
    let tau = (2.0 * pair_sum - 1.0).max(1.0 / nf.log10());
    Ok(nf / tau)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let k = h.floor() as usize;
    if k + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[k] + (h - k as f64) * (sorted[k + 1] - sorted[k])
}

fn sorted_copy(series: &[f64]) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    if series.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("series contains NaN".into()));
    }
    let mut s = series.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Empirical quantile under the interpolation rule in the module docs.
pub fn quantile(series: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("quantile must lie in [0, 1], got {q}")));
    }
    Ok(quantile_sorted(&sorted_copy(series)?, q))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("credible level must lie in (0, 1), got {level}")))
    }
}

/// Equal-tailed interval between the `(1 - level)/2` and `(1 + level)/2` quantiles.
pub fn credible_interval(series: &[f64], level: f64) -> Result<(f64, f64)> {
    check_level(level)?;
    let s = sorted_copy(series)?;
    let tail = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail)))
}

/// Silverman's rule, `0.9 min(sd, IQR / 1.34) n^(-1/5)`; falls back to the
/// standard deviation when the interquartile range is zero.
pub fn silverman_bandwidth(series: &[f64]) -> Result<f64> {
    let s = sorted_copy(series)?;
    let n = s.len() as f64;
    let m = mean(&s);
    let sd = (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) || s.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian kernel density estimate on a 512-point grid spanning the data
/// range widened by three bandwidths on each side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kde {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

pub fn kde(series: &[f64]) -> Result<Kde> {
    let h = silverman_bandwidth(series)?;
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (start, end) = (lo - 3.0 * h, hi + 3.0 * h);
    let step = (end - start) / (KDE_POINTS - 1) as f64;
    let norm = 1.0 / (series.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..KDE_POINTS).map(|i| start + i as f64 * step).collect();
    let density = grid
        .iter()
        .map(|&g| {
            norm * series
                .iter()
                .map(|&v| {
                    let z = (g - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(Kde {
        grid,
        density,
        bandwidth: h,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Interval {
    pub level: f64,
    pub low: f64,
    pub high: f64,
}

/// Per-parameter numerical summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub post_mean: f64,
    pub post_sd: f64,
    pub intervals: Vec<Interval>,
    pub ess: f64,
    /// Autocorrelations at lags `1..=L`.
    pub acf: Vec<f64>,
}

impl ParamSummary {
    pub fn interval(&self, level: f64) -> Option<(f64, f64)> {
        self.intervals
            .iter()
            .find(|i| (i.level - level).abs() < 1e-12)
            .map(|i| (i.low, i.high))
    }
}

/// Default number of autocorrelation lags in summaries.
pub const SUMMARY_LAGS: usize = 30;

pub fn summarize_series(name: &str, series: &[f64], levels: &[f64], max_draws: f64) -> Result<ParamSummary> {
    let (c, ss) = centered(series)?;
    let n = series.len();
    let lags = SUMMARY_LAGS.min(n.saturating_sub(1));
    let sorted = sorted_copy(series)?;
    let mut intervals = Vec::with_capacity(levels.len());
    for &level in levels {
        check_level(level)?;
        let tail = 0.5 * (1.0 - level);
        intervals.push(Interval {
            level,
            low: quantile_sorted(&sorted, tail),
            high: quantile_sorted(&sorted, 1.0 - tail),
        });
    }
    let ess = if n >= 10 { ess(series)?.min(max_draws) } else { n as f64 };
    Ok(ParamSummary {
        name: name.to_string(),
        post_mean: mean(series),
        post_sd: (ss / (n as f64 - 1.0).max(1.0)).sqrt(),
        intervals,
        ess,
        acf: (1..=lags).map(|k| autocorrelation(&c, ss, k)).collect(),
    })
}

/// Summaries for every chain column. ESS is capped at the number of
/// sampler cycles that produced the draws.
pub fn summarize(chain: &Chain, levels: &[f64]) -> Result<Vec<ParamSummary>> {
    if chain.is_empty() {
        return Err(Error::EmptySeries);
    }
    let thin = chain.config.as_ref().map_or(1, |c| c.thin);
    let cap = (chain.len() * thin) as f64;
    chain
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| summarize_series(name, &chain.column(j), levels, cap))
        .collect()
}

fn level_tag(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// `parameter,mean,sd,ess,lower_<L>,upper_<L>,...` with one row per parameter.
pub fn summary_csv(summaries: &[ParamSummary]) -> String {
    let mut out = String::from("parameter,mean,sd,ess");
    if let Some(first) = summaries.first() {
        for i in &first.intervals {
            let tag = level_tag(i.level);
            let _ = write!(out, ",lower_{tag},upper_{tag}");
        }
    }
    out.push('\n');
    for s in summaries {
        let _ = write!(out, "{},{},{},{}", s.name, s.post_mean, s.post_sd, s.ess);
        for i in &s.intervals {
            let _ = write!(out, ",{},{}", i.low, i.high);
        }
        out.push('\n');
    }
    out
}

/// `iteration,<columns...>`, one row per stored draw (iteration counts from 1).
pub fn trace_csv(chain: &Chain) -> String {
    let mut out = String::from("iteration");
    for name in &chain.column_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, row) in chain.draws.row_iter().enumerate() {
        let _ = write!(out, "{}", i + 1);
        for v in row.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// `current,next` pairs `(x_t, x_{t+1})` for a lag-1 scatter plot.
pub fn lag1_csv(series: &[f64]) -> String {
    let mut out = String::from("current,next\n");
    for w in series.windows(2) {
        let _ = writeln!(out, "{},{}", w[0], w[1]);
    }
    out
}

/// `lag,<parameters...>` for lags `1..=L`.
pub fn acf_csv(summaries: &[ParamSummary]) -> String {
    let mut out = String::from("lag");
    for s in summaries {
        out.push(',');
        out.push_str(&s.name);
    }
    out.push('\n');
    let lags = summaries.iter().map(|s| s.acf.len()).min().unwrap_or(0);
    for k in 0..lags {
        let _ = write!(out, "{}", k + 1);
        for s in summaries {
            let _ = write!(out, ",{}", s.acf[k]);
        }
        out.push('\n');
    }
    out
}

/// `x,density` rows of a density estimate.
pub fn kde_csv(k: &Kde) -> String {
    let mut out = String::from("x,density\n");
    for (x, d) in k.grid.iter().zip(&k.density) {
        let _ = writeln!(out, "{x},{d}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let e = normals(n + 1000, seed);
        let mut x = 0.0;
        let mut out = Vec::with_capacity(n);
        for (t, z) in e.into_iter().enumerate() {
            x = phi * x + z;
            if t >= 1000 {
                out.push(x);
            }
        }
        out
    }

    #[test]
    fn acf_rejects_constant_and_short_series() {
        assert_eq!(acf(&[2.0; 50], 5), Err(Error::ZeroVariance));
        assert!(matches!(acf(&[1.0, 2.0, 3.0], 3), Err(Error::TooShort { .. })));
    }

    #[test]
    fn acf_of_white_noise_stays_in_band() {
        let x = normals(10_000, 11);
        let band = 4.0 / (x.len() as f64).sqrt();
        assert!(acf(&x, 20).unwrap().iter().all(|r| r.abs() < band));
    }

    #[test]
    fn acf_of_ar1() {
        let r = acf(&ar1(20_000, 0.5, 5), 3).unwrap();
        assert!((r[0] - 0.5).abs() < 0.05, "{r:?}");
    }

    #[test]
    fn acf_matches_direct_formula() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let m = 27.0 / 6.0;
        let den: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
        let num: f64 = (0..4).map(|i| (x[i] - m) * (x[i + 2] - m)).sum();
        assert!((acf(&x, 2).unwrap()[1] - num / den).abs() < 1e-15);
    }

    #[test]
    fn ess_of_iid_and_ar1() {
        let n = 20_000;
        let iid = ess(&normals(n, 3)).unwrap();
        assert!((iid / n as f64 - 1.0).abs() < 0.10, "{iid}");
        // tau = (1 + phi) / (1 - phi) = 3.
        let e = ess(&ar1(n, 0.5, 9)).unwrap();
        assert!((e / (n as f64 / 3.0) - 1.0).abs() < 0.15, "{e}");
        assert_eq!(ess(&[1.0; 40]), Err(Error::ZeroVariance));
        assert!(ess(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn interval_of_one_to_hundred() {
        // h = 99 * 0.05 = 4.95 -> 5 + 0.95; h = 99 * 0.95 = 94.05 -> 95 + 0.05.
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        let (lo, hi) = credible_interval(&x, 0.90).unwrap();
        assert!((lo - 5.95).abs() < 1e-12 && (hi - 95.05).abs() < 1e-12, "{lo} {hi}");
    }

    #[test]
    fn interval_edge_cases() {
        assert_eq!(credible_interval(&[3.5; 7], 0.95).unwrap(), (3.5, 3.5));
        assert_eq!(credible_interval(&[], 0.95), Err(Error::EmptySeries));
        assert!(credible_interval(&[1.0, 2.0], 1.0).is_err());
        assert_eq!(credible_interval(&[4.0], 0.5).unwrap(), (4.0, 4.0));
    }

    #[test]
    fn interval_of_standard_normal() {
        let (lo, hi) = credible_interval(&normals(1_000_000, 21), 0.95).unwrap();
        assert!((lo + 1.959964).abs() < 0.01 && (hi - 1.959964).abs() < 0.01);
    }

    fn trapezoid(k: &Kde) -> f64 {
        k.grid
            .windows(2)
            .zip(k.density.windows(2))
            .map(|(g, d)| 0.5 * (g[1] - g[0]) * (d[0] + d[1]))
            .sum()
    }

    #[test]
    fn kde_normalization_and_shape() {
        let two = kde(&[0.0, 1.0]).unwrap();
        assert_eq!(two.grid.len(), KDE_POINTS);
        // Each kernel loses the mass beyond the grid ends: 3h on one side,
        // 1/h + 3 bandwidths on the other.
        let h = two.bandwidth;
        let phi = |z: f64| 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
        let covered = phi(3.0 + 1.0 / h) - phi(-3.0);
        assert!((trapezoid(&two) - covered).abs() < 1e-4, "{} vs {covered}", trapezoid(&two));
        assert!((trapezoid(&two) - 1.0).abs() < 2e-3);
        for i in 0..KDE_POINTS {
            assert!((two.density[i] - two.density[KDE_POINTS - 1 - i]).abs() < 1e-12);
        }
        let k = kde(&normals(10_000, 8)).unwrap();
        assert!((trapezoid(&k) - 1.0).abs() < 1e-3);
        let at_zero = k
            .grid
            .iter()
            .zip(&k.density)
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
            .unwrap()
            .1;
        assert!((at_zero / 0.398_942_280_4 - 1.0).abs() < 0.15);
    }

    #[test]
    fn kde_is_translation_equivariant() {
        let x = normals(500, 4);
        let shifted: Vec<f64> = x.iter().map(|v| v + 3.25).collect();
        let (a, b) = (kde(&x).unwrap(), kde(&shifted).unwrap());
        assert!((a.bandwidth - b.bandwidth).abs() < 1e-12);
        for i in 0..KDE_POINTS {
            assert!((b.grid[i] - a.grid[i] - 3.25).abs() < 1e-9);
            assert!((b.density[i] - a.density[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn kde_rejects_degenerate_series() {
        assert!(kde(&[2.0, 2.0, 2.0]).is_err());
        assert!(kde(&[2.0]).is_err());
    }

    fn toy_chain(cols: Vec<Vec<f64>>, names: &[&str]) -> Chain {
        let n = cols[0].len();
        let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        Chain::from_draws(m, names.iter().map(|s| s.to_string()).collect(), crate::glm::Family::Poisson, 0).unwrap()
    }

    #[test]
    fn summarize_columns_and_errors() {
        let a = normals(400, 1);
        let b: Vec<f64> = normals(400, 2).iter().map(|v| 1.5 + 0.1 * v).collect();
        let chain = toy_chain(vec![a.clone(), b.clone()], &["(Intercept)", "nu"]);
        let s = summarize(&chain, &[0.9, 0.95]).unwrap();
        assert_eq!(s[1].name, "nu");
        assert!((s[1].post_mean - mean(&b)).abs() < 1e-14);
        let (lo90, hi90) = s[1].interval(0.9).unwrap();
        let (lo95, hi95) = s[1].interval(0.95).unwrap();
        assert!(lo95 <= lo90 && hi90 <= hi95);
        assert!(s.iter().all(|p| p.ess > 0.0 && p.ess <= 400.0));
        // Swapping columns swaps summaries.
        let swapped = toy_chain(vec![b, a], &["nu", "(Intercept)"]);
        let t = summarize(&swapped, &[0.9, 0.95]).unwrap();
        assert_eq!(t[0], s[1]);
        assert_eq!(t[1], s[0]);

        let constant = toy_chain(vec![vec![0.3; 50], vec![1.0; 50]], &["b", "nu"]);
        assert_eq!(summarize(&constant, &[0.95]), Err(Error::ZeroVariance));
    }

    #[test]
    fn csv_headers() {
        let chain = toy_chain(vec![normals(30, 1), normals(30, 2).iter().map(|v| 2.0 + 0.1 * v).collect()], &["b0", "nu"]);
        let s = summarize(&chain, &[0.9, 0.95, 0.99]).unwrap();
        let table = summary_csv(&s);
        assert!(table.starts_with("parameter,mean,sd,ess,lower_90,upper_90,lower_95,upper_95,lower_99,upper_99\n"));
        assert_eq!(table.lines().count(), 3);
        assert!(trace_csv(&chain).starts_with("iteration,b0,nu\n1,"));
        assert_eq!(lag1_csv(&[1.0, 2.0, 3.0]), "current,next\n1,2\n2,3\n");
        assert!(acf_csv(&s).starts_with("lag,b0,nu\n1,"));
    }

    proptest! {
        #[test]
        fn interval_is_monotone_in_level(
            x in proptest::collection::vec(-100.0f64..100.0, 1..200),
            l1 in 0.01f64..0.98, dl in 0.001f64..0.5,
        ) {
            let l2 = (l1 + dl).min(0.999);
            let (a1, b1) = credible_interval(&x, l1).unwrap();
            let (a2, b2) = credible_interval(&x, l2).unwrap();
            prop_assert!(a2 <= a1 && b1 <= b2 && a1 <= b1);
        }
    }
}
