//! Independent oracles shared by the integration and acceptance suites.
//! Everything here is written against the mathematical definitions only and
//! never calls into the code paths it is used to check.

#![allow(dead_code)]

use ndarray::{Array1, Array2};

/// Kalman filter + RTS smoother for the scalar linear-Gaussian model
/// `z_1 ~ N(m0, p0)`, `z_{k+1} = a z_k + N(0, q)`, `y_k = z_k + N(0, r)`.
/// Returns per-step smoothed means, smoothed variances, and the exact
/// marginal log-likelihood.
pub struct RtsResult {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub loglik: f64,
}

pub fn rts_smoother(y: &[f64], a: f64, q: f64, r: f64, m0: f64, p0: f64) -> RtsResult {
    let n = y.len();
    let mut m_filt = vec![0.0; n];
    let mut p_filt = vec![0.0; n];
    let mut m_pred = vec![0.0; n];
    let mut p_pred = vec![0.0; n];
    let mut loglik = 0.0;

    for k in 0..n {
        let (mp, pp) = if k == 0 {
            (m0, p0)
        } else {
            (a * m_filt[k - 1], a * a * p_filt[k - 1] + q)
        };
        m_pred[k] = mp;
        p_pred[k] = pp;
        let s = pp + r;
        let gain = pp / s;
        m_filt[k] = mp + gain * (y[k] - mp);
        p_filt[k] = (1.0 - gain) * pp;
        let d = y[k] - mp;
        loglik += -0.5 * (d * d / s + (2.0 * std::f64::consts::PI * s).ln());
    }

    let mut means = vec![0.0; n];
    let mut vars = vec![0.0; n];
    means[n - 1] = m_filt[n - 1];
    vars[n - 1] = p_filt[n - 1];
    for k in (0..n - 1).rev() {
        let c = p_filt[k] * a / p_pred[k + 1];
        means[k] = m_filt[k] + c * (means[k + 1] - m_pred[k + 1]);
        vars[k] = p_filt[k] + c * c * (vars[k + 1] - p_pred[k + 1]);
    }
    RtsResult {
        means,
        vars,
        loglik,
    }
}

/// Cyclic coordinate-descent solver for the quadratic Lasso objective
/// `1/2 theta' B theta - a' theta + lam * sum |theta_j|`, iterated to a tight
/// fixed point.
pub fn cd_lasso(b: &Array2<f64>, a: &Array1<f64>, lam: f64, sweeps: usize) -> Array1<f64> {
    let p = a.len();
    let mut theta = Array1::<f64>::zeros(p);
    for _ in 0..sweeps {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            let mut cross = 0.0;
            for l in 0..p {
                if l != j {
                    cross += b[(j, l)] * theta[l];
                }
            }
            let target = a[j] - cross;
            let new = if target.abs() <= lam {
                0.0
            } else {
                (target - target.signum() * lam) / b[(j, j)]
            };
            max_change = max_change.max((new - theta[j]).abs());
            theta[j] = new;
        }
        if max_change < 1e-13 {
            break;
        }
    }
    theta
}

/// Grid argmin of `f(t) = (t - z)^2 / 2 + lam |t|^q` at resolution `fine`.
///
/// The minimizer lies in `[0, |z|] * sign(z)`: for t outside that segment both
/// the quadratic and the penalty exceed their value at the nearer endpoint. A
/// coarse sweep locates the interior valley, a fine sweep refines it, and 0 is
/// always kept as an explicit candidate, which reproduces the full fine-grid
/// argmin (the objective has at most one interior local minimum).
pub fn grid_prox_argmin(z: f64, lam: f64, q: f64, coarse: f64, fine: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let az = z.abs();
    let f = |t: f64| 0.5 * (t - az) * (t - az) + lam * t.powf(q);

    let coarse_count = (az / coarse).floor() as usize + 1;
    let mut best_t = 0.0;
    let mut best_f = f(0.0);
    for i in 1..=coarse_count {
        let t = (i as f64 * coarse).min(az);
        let v = f(t);
        if v < best_f {
            best_f = v;
            best_t = t;
        }
    }

    let lo = (best_t - 2.0 * coarse).max(0.0);
    let hi = (best_t + 2.0 * coarse).min(az);
    let fine_count = ((hi - lo) / fine).floor() as usize + 1;
    let mut refined_t = best_t;
    let mut refined_f = best_f;
    for i in 0..=fine_count {
        let t = (lo + i as f64 * fine).min(hi);
        let v = f(t);
        if v < refined_f {
            refined_f = v;
            refined_t = t;
        }
    }
    if f(0.0) <= refined_f {
        refined_t = 0.0;
    }
    z.signum() * refined_t
}

/// Log density of `N(x; mean, var)`, local to the oracles.
pub fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln())
}
