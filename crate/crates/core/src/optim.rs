//! Small dense optimizers used by the maximum-likelihood fits.

use nalgebra::{DMatrix, DVector};

/// Objective returning `(value, gradient)`, or `None` outside the feasible region.
pub(crate) type Eval = Option<(f64, DVector<f64>)>;

#[derive(Debug, Clone)]
pub(crate) struct OptimResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// BFGS ascent with Armijo backtracking, followed by Newton polishing on a
/// numerical Hessian of the gradient (BFGS line searches stall once function
/// differences reach rounding level, Newton steps only need the gradient).
pub(crate) fn maximize<F>(mut f: F, x0: DVector<f64>, gtol: f64, max_iter: usize) -> Option<OptimResult>
where
    F: FnMut(&DVector<f64>) -> Eval,
{
    let n = x0.len();
    let (mut fx, mut gx) = f(&x0)?;
    let mut x = x0;
    // Work with the minimization of -f.
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = 0;

    while iterations < max_iter && max_abs(&gx) >= gtol {
        iterations += 1;
        let g_min = -&gx;
        let mut d = -(&h * &g_min);
        let mut slope = d.dot(&g_min);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            d = -g_min.clone();
            slope = d.dot(&g_min);
        }
        let mut alpha = if first { (1.0 / max_abs(&d)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + alpha * &d;
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && -ft <= -fx + 1e-4 * alpha * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break;
        };
        let s = &x_new - &x;
        let yv = -(&g_new - &gx);
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
                first = false;
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * yv.transpose();
            let right = &eye - rho * &yv * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
        }
        x = x_new;
        fx = f_new;
        gx = g_new;
    }

    for _ in 0..10 {
        if max_abs(&gx) < gtol {
            break;
        }
        let Some(hess) = numerical_hessian(&mut f, &x) else {
            break;
        };
        let info = -hess;
        let Some(chol) = info.cholesky() else {
            break;
        };
        let trial = &x + chol.solve(&gx);
        match f(&trial) {
            Some((ft, gt)) if ft.is_finite() && max_abs(&gt) < max_abs(&gx) => {
                x = trial;
                fx = ft;
                gx = gt;
                iterations += 1;
            }
            _ => break,
        }
    }

    let converged = max_abs(&gx) < gtol;
    Some(OptimResult {
        x,
        value: fx,
        iterations,
        converged,
    })
}

/// Central differences of the gradient with step `1e-4 * (1 + |x_k|)`, symmetrized.
pub(crate) fn numerical_hessian<F>(f: &mut F, x: &DVector<f64>) -> Option<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Eval,
{
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    for k in 0..n {
        let step = 1e-4 * (1.0 + x[k].abs());
        let mut up = x.clone();
        up[k] += step;
        let mut down = x.clone();
        down[k] -= step;
        let (_, g_up) = f(&up)?;
        let (_, g_down) = f(&down)?;
        let col = (g_up - g_down) / (2.0 * step);
        hess.set_column(k, &col);
    }
    Some(0.5 * (&hess + hess.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_concave_quadratic() {
        let target = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let f = |x: &DVector<f64>| {
            let d = x - &target;
            let ad = &a * &d;
            Some((-0.5 * d.dot(&ad), -ad))
        };
        let res = maximize(f, DVector::zeros(3), 1e-10, 200).unwrap();
        assert!(res.converged);
        assert!((res.x - target).amax() < 1e-8);
    }

    #[test]
    fn maximizes_rosenbrock() {
        let f = |x: &DVector<f64>| {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let ga = 2.0 * (1.0 - a) + 400.0 * a * (b - a * a);
            let gb = -200.0 * (b - a * a);
            Some((v, DVector::from_vec(vec![ga, gb])))
        };
        let res = maximize(f, DVector::from_vec(vec![-1.2, 1.0]), 1e-8, 1000).unwrap();
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-6 && (res.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_of_quadratic() {
        let mut f = |x: &DVector<f64>| Some((0.0, DVector::from_vec(vec![-2.0 * x[0] + x[1], x[0] - 6.0 * x[1]])));
        let h = numerical_hessian(&mut f, &DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -6.0]);
        assert!((h - expected).amax() < 1e-9);
    }
}
