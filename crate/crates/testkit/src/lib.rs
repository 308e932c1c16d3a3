//! Brute-force reference computations for tests.
//!
//! Nothing here shares code with `cmpglm`: weights are summed directly over a
//! fixed support, rates are found by plain bisection, and posteriors are
//! normalized on explicit grids.

/// Terms used by every direct sum. Large enough for the small means the
/// oracles are evaluated at.
pub const SUPPORT: usize = 400;

/// `ln k!` for `k < len`, accumulated as `sum ln j`.
pub fn ln_factorials(len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for k in 2..len {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Direct CMP sums over `0..SUPPORT`.
pub struct BruteCmp {
    lf: Vec<f64>,
}

impl Default for BruteCmp {
    fn default() -> Self {
        Self::new()
    }
}

impl BruteCmp {
    pub fn new() -> Self {
        Self { lf: ln_factorials(SUPPORT) }
    }

    pub fn ln_factorial(&self, y: usize) -> f64 {
        self.lf[y]
    }

    fn log_weights(&self, log_lambda: f64, nu: f64) -> Vec<f64> {
        (0..SUPPORT).map(|y| y as f64 * log_lambda - nu * self.lf[y]).collect()
    }

    pub fn log_z(&self, log_lambda: f64, nu: f64) -> f64 {
        log_sum_exp(&self.log_weights(log_lambda, nu))
    }

    pub fn mean_at_rate(&self, log_lambda: f64, nu: f64) -> f64 {
        let lw = self.log_weights(log_lambda, nu);
        let lz = log_sum_exp(&lw);
        lw.iter().enumerate().map(|(y, w)| y as f64 * (w - lz).exp()).sum()
    }

    /// Bisection for `log lambda` on `[-30, 30]` (`[-30, 0)` when `nu = 0`)
    /// until the bracket is narrower than `1e-13`.
    pub fn solve_rate(&self, mu: f64, nu: f64) -> f64 {
        let (mut lo, mut hi) = (-30.0, if nu == 0.0 { -1e-12 } else { 30.0 });
        while hi - lo > 1e-13 {
            let mid = 0.5 * (lo + hi);
            if self.mean_at_rate(mid, nu) < mu {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Normalized pmf over the whole support at mean `mu`.
    pub fn pmf(&self, mu: f64, nu: f64) -> Vec<f64> {
        let lw = self.log_weights(self.solve_rate(mu, nu), nu);
        let lz = log_sum_exp(&lw);
        lw.iter().map(|w| (w - lz).exp()).collect()
    }

    /// Intercept-only log-likelihood `S log lambda - nu sum ln y! - n log Z`.
    pub fn intercept_loglik(&self, y: &[u64], beta0: f64, nu: f64) -> f64 {
        let log_lambda = self.solve_rate(beta0.exp(), nu);
        let s: f64 = y.iter().map(|&v| v as f64).sum();
        let l: f64 = y.iter().map(|&v| self.lf[v as usize]).sum();
        s * log_lambda - nu * l - y.len() as f64 * self.log_z(log_lambda, nu)
    }
}

/// Posterior of an intercept-only CMP model normalized on a midpoint grid.
pub struct GridPosterior {
    pub beta: Vec<f64>,
    pub nu: Vec<f64>,
    pub beta_step: f64,
    pub nu_step: f64,
    /// `mass[i][j]` for cell `(beta[i], nu[j])`; sums to one.
    pub mass: Vec<Vec<f64>>,
}

impl GridPosterior {
    /// Evaluate `log_post(beta0, nu)` at the midpoints of a `k x k` grid on
    /// `[b_lo, b_hi] x [nu_lo, nu_hi]`.
    pub fn new<F: Fn(f64, f64) -> f64>(log_post: F, (b_lo, b_hi): (f64, f64), (nu_lo, nu_hi): (f64, f64), k: usize) -> Self {
        let (beta, beta_step) = midpoints(b_lo, b_hi, k);
        let (nu, nu_step) = midpoints(nu_lo, nu_hi, k);
        let lp: Vec<Vec<f64>> = beta.iter().map(|&b| nu.iter().map(|&v| log_post(b, v)).collect()).collect();
        Self::from_log_post(beta, nu, beta_step, nu_step, &lp)
    }

    fn from_log_post(beta: Vec<f64>, nu: Vec<f64>, beta_step: f64, nu_step: f64, lp: &[Vec<f64>]) -> Self {
        let max = lp.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mass: Vec<Vec<f64>> = lp.iter().map(|row| row.iter().map(|v| (v - max).exp()).collect()).collect();
        let total: f64 = mass.iter().flatten().sum();
        mass.iter_mut().flatten().for_each(|m| *m /= total);
        Self {
            beta,
            nu,
            beta_step,
            nu_step,
            mass,
        }
    }

    pub fn beta_marginal(&self) -> Vec<f64> {
        self.mass.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn nu_marginal(&self) -> Vec<f64> {
        (0..self.nu.len()).map(|j| self.mass.iter().map(|row| row[j]).sum()).collect()
    }

    pub fn beta_mean(&self) -> f64 {
        self.beta.iter().zip(self.beta_marginal()).map(|(b, m)| b * m).sum()
    }

    pub fn nu_mean(&self) -> f64 {
        self.nu.iter().zip(self.nu_marginal()).map(|(v, m)| v * m).sum()
    }

    /// Marginal mass in the outermost cells (excluding `nu`'s lower edge,
    /// which may sit on the boundary `nu = 0`); small when the box holds the posterior.
    pub fn edge_mass(&self) -> f64 {
        let k = self.beta.len();
        let (b, v) = (self.beta_marginal(), self.nu_marginal());
        b[0] + b[k - 1] + v[k - 1]
    }
}

fn midpoints(lo: f64, hi: f64, k: usize) -> (Vec<f64>, f64) {
    let step = (hi - lo) / k as f64;
    ((0..k).map(|i| lo + (i as f64 + 0.5) * step).collect(), step)
}

/// Grid posterior of an intercept-only CMP model, `beta0 = log mu`, with the
/// solved rates kept for predictive computations.
pub struct InterceptGrid {
    pub posterior: GridPosterior,
    /// `log_lambda[i][j]` at `(beta[i], nu[j])`.
    pub log_lambda: Vec<Vec<f64>>,
    brute: BruteCmp,
}

impl InterceptGrid {
    /// `k x k` grid for `y` under the log-prior `log_prior(beta0, nu)`.
    ///
    /// The box is found by a coarse scan: `nu` runs from 0 to where the
    /// log-posterior at `beta0 = log(mean y)` has dropped 30 below its
    /// maximum, `beta0` over the range of coarse cells within 30 of the maximum.
    pub fn new<P: Fn(f64, f64) -> f64>(y: &[u64], log_prior: P, k: usize) -> Self {
        let brute = BruteCmp::new();
        let lp = |b: f64, v: f64| brute.intercept_loglik(y, b, v) + log_prior(b, v);
        let centre = (y.iter().sum::<u64>() as f64 / y.len() as f64).ln();

        let mut nu_hi = 0.25;
        let mut best = f64::NEG_INFINITY;
        loop {
            let v = lp(centre, nu_hi);
            best = best.max(v);
            if v < best - 30.0 {
                break;
            }
            nu_hi += 0.25;
        }
        let coarse = 40;
        let (cb, cstep) = midpoints(centre - 2.5, centre + 2.5, coarse);
        let (cn, _) = midpoints(0.0, nu_hi, coarse);
        let scan: Vec<Vec<f64>> = cb.iter().map(|&b| cn.iter().map(|&v| lp(b, v)).collect()).collect();
        let top = scan.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rows: Vec<usize> = (0..coarse).filter(|&i| scan[i].iter().any(|&v| v > top - 30.0)).collect();
        let b_lo = cb[rows[0]] - 1.5 * cstep;
        let b_hi = cb[*rows.last().unwrap()] + 1.5 * cstep;

        let (beta, beta_step) = midpoints(b_lo, b_hi, k);
        let (nu, nu_step) = midpoints(0.0, nu_hi, k);
        let s: f64 = y.iter().map(|&v| v as f64).sum();
        let l: f64 = y.iter().map(|&v| brute.ln_factorial(v as usize)).sum();
        let n = y.len() as f64;
        let mut log_lambda = vec![vec![0.0; k]; k];
        let mut post = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                let ll = brute.solve_rate(beta[i].exp(), nu[j]);
                log_lambda[i][j] = ll;
                post[i][j] = s * ll - nu[j] * l - n * brute.log_z(ll, nu[j]) + log_prior(beta[i], nu[j]);
            }
        }
        Self {
            posterior: GridPosterior::from_log_post(beta, nu, beta_step, nu_step, &post),
            log_lambda,
            brute,
        }
    }

    /// Posterior predictive pmf on `0..=y_max`, integrated over the grid.
    pub fn predictive(&self, y_max: usize) -> Vec<f64> {
        let g = &self.posterior;
        let mut out = vec![0.0; y_max + 1];
        for i in 0..g.beta.len() {
            for j in 0..g.nu.len() {
                let m = g.mass[i][j];
                if m < 1e-14 {
                    continue;
                }
                let (ll, v) = (self.log_lambda[i][j], g.nu[j]);
                let lz = self.brute.log_z(ll, v);
                for (y, acc) in out.iter_mut().enumerate() {
                    *acc += m * (y as f64 * ll - v * self.brute.ln_factorial(y) - lz).exp();
                }
            }
        }
        out
    }
}

/// Piecewise-linear CDF of a histogram with cells `[centre - step/2, centre + step/2]`.
pub fn grid_cdf(centres: &[f64], step: f64, masses: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (c, m) in centres.iter().zip(masses) {
        let (lo, hi) = (c - 0.5 * step, c + 0.5 * step);
        if x >= hi {
            acc += m;
        } else {
            if x > lo {
                acc += m * (x - lo) / step;
            }
            break;
        }
    }
    acc
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Total-variation distance between two pmfs on a common support prefix;
/// the longer vector's excess counts in full.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_and_geometric_reductions() {
        let b = BruteCmp::new();
        assert!((b.solve_rate(3.0, 1.0) - 3.0f64.ln()).abs() < 1e-10);
        assert!((b.solve_rate(2.0, 0.0) - (2.0f64 / 3.0).ln()).abs() < 1e-10);
        let p = b.pmf(2.0, 1.0);
        assert!((p[2] - 2.0 * (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let sample: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!(ks_distance(&sample, |x| x.clamp(0.0, 1.0)) <= 0.0005 + 1e-12);
    }

    #[test]
    fn grid_cdf_interpolates() {
        let c = [0.5, 1.5];
        assert_eq!(grid_cdf(&c, 1.0, &[0.25, 0.75], 1.0), 0.25);
        assert!((grid_cdf(&c, 1.0, &[0.25, 0.75], 1.5) - 0.625).abs() < 1e-15);
        assert_eq!(grid_cdf(&c, 1.0, &[0.25, 0.75], 3.0), 1.0);
    }
}
