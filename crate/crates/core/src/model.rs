//! Domain types and the observation model.
//!
//! The model ties a known input sequence, an unknown sparse parameter vector
//! and a scalar hidden AR(1) state to the responses:
//!
//! ```text
//! z_{k+1} = a z_k + xi_k
//! y_k     = sin(omega k / n + z_k) u_k' theta + eta_k,   k = 0..n-1
//! ```
//!
//! where `u_k` is the k-th input window. Row k of the regressor matrix depends
//! on the hidden state only through `z_k`.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Scalar AR(1) dynamics of the hidden state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDynamics {
    /// AR(1) coefficient `a`, |a| < 1.
    pub ar_coeff: f64,
    /// State noise variance, > 0.
    pub noise_var_state: f64,
    /// Mean of the initial state distribution.
    pub init_mean: f64,
    /// Variance of the initial state distribution, > 0.
    pub init_var: f64,
}

impl LatentDynamics {
    /// Dynamics with the chain started from its stationary distribution
    /// `N(0, noise_var_state / (1 - a^2))`.
    pub fn stationary(ar_coeff: f64, noise_var_state: f64) -> Result<Self> {
        let dyn_ = LatentDynamics {
            ar_coeff,
            noise_var_state,
            init_mean: 0.0,
            init_var: noise_var_state / (1.0 - ar_coeff * ar_coeff),
        };
        dyn_.validate()?;
        Ok(dyn_)
    }

    /// Variance of the stationary distribution of the chain.
    pub fn stationary_var(&self) -> f64 {
        self.noise_var_state / (1.0 - self.ar_coeff * self.ar_coeff)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ar_coeff.abs() < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "ar_coeff must satisfy |a| < 1, got {}",
                self.ar_coeff
            )));
        }
        if !(self.noise_var_state > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_var_state must be > 0, got {}",
                self.noise_var_state
            )));
        }
        if !(self.init_var > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "init_var must be > 0, got {}",
                self.init_var
            )));
        }
        if !self.init_mean.is_finite() {
            return Err(Error::NonFinite("init_mean"));
        }
        Ok(())
    }
}

/// The observation model: inputs, noise levels, latent dynamics, dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    /// Number of measurements.
    pub n: usize,
    /// Parameter dimension.
    pub p: usize,
    /// n x p matrix of input windows; row k is `u_{k:k+p-1}`.
    pub inputs: Array2<f64>,
    /// Observation noise variance, > 0.
    pub noise_var_obs: f64,
    /// Hidden-state dynamics.
    pub latent: LatentDynamics,
    /// Modulation constant inside the sine.
    pub omega: f64,
    /// Length-n response vector; present after simulation or data load.
    pub responses: Option<Array1<f64>>,
}

impl ProblemSpec {
    pub fn new(
        inputs: Array2<f64>,
        noise_var_obs: f64,
        latent: LatentDynamics,
        omega: f64,
    ) -> Result<Self> {
        let (n, p) = inputs.dim();
        if n < 1 || p < 1 {
            return Err(Error::InvalidParameter(format!(
                "need n >= 1 and p >= 1, got n = {n}, p = {p}"
            )));
        }
        if !(noise_var_obs > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise_var_obs must be > 0, got {noise_var_obs}"
            )));
        }
        latent.validate()?;
        if !omega.is_finite() {
            return Err(Error::NonFinite("omega"));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inputs"));
        }
        Ok(ProblemSpec {
            n,
            p,
            inputs,
            noise_var_obs,
            latent,
            omega,
            responses: None,
        })
    }

    pub fn with_responses(mut self, responses: Array1<f64>) -> Result<Self> {
        if responses.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "responses has length {}, expected n = {}",
                responses.len(),
                self.n
            )));
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("responses"));
        }
        self.responses = Some(responses);
        Ok(self)
    }

    /// Responses, or an error when the spec has none attached yet.
    pub fn responses(&self) -> Result<&Array1<f64>> {
        self.responses.as_ref().ok_or(Error::MissingResponses)
    }

    /// Phase of the modulation at measurement index `k` (0-based).
    #[inline]
    pub fn phase(&self, k: usize) -> f64 {
        self.omega * k as f64 / self.n as f64
    }

    fn check_theta(&self, theta: ArrayView1<f64>) -> Result<()> {
        if theta.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {}, expected p = {}",
                theta.len(),
                self.p
            )));
        }
        Ok(())
    }
}

/// Parameter iterate with an explicit set of coordinates held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterEstimate {
    theta: Array1<f64>,
    locked_zeros: BTreeSet<usize>,
}

impl ParameterEstimate {
    /// Estimate with no locked coordinates.
    pub fn new(theta: Array1<f64>) -> Self {
        ParameterEstimate {
            theta,
            locked_zeros: BTreeSet::new(),
        }
    }

    /// Estimate with the given locked set; every locked coordinate must be
    /// exactly zero.
    pub fn with_locks(theta: Array1<f64>, locked_zeros: BTreeSet<usize>) -> Result<Self> {
        for &j in &locked_zeros {
            if j >= theta.len() {
                return Err(Error::DimensionMismatch(format!(
                    "locked index {j} out of range for p = {}",
                    theta.len()
                )));
            }
            if theta[j] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "locked coordinate {j} must be exactly 0, got {}",
                    theta[j]
                )));
            }
        }
        Ok(ParameterEstimate {
            theta,
            locked_zeros,
        })
    }

    pub fn theta(&self) -> &Array1<f64> {
        &self.theta
    }

    pub fn locked_zeros(&self) -> &BTreeSet<usize> {
        &self.locked_zeros
    }

    pub fn is_locked(&self, j: usize) -> bool {
        self.locked_zeros.contains(&j)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Indices not held at zero, in increasing order.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.theta.len())
            .filter(|j| !self.locked_zeros.contains(j))
            .collect()
    }

    /// Bitstring mask, one char per coordinate, '1' where locked.
    pub fn locked_mask_string(&self) -> String {
        (0..self.theta.len())
            .map(|j| if self.is_locked(j) { '1' } else { '0' })
            .collect()
    }
}

/// Log density of `N(x; mean, var)`.
#[inline]
pub fn gaussian_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// Row k (0-based) of the regressor matrix as a function of the hidden state:
/// `sin(omega k / n + z) * u_window`.
pub fn design_row(
    u_window: ArrayView1<f64>,
    z: f64,
    k: usize,
    omega: f64,
    n: usize,
) -> Array1<f64> {
    let s = (omega * k as f64 / n as f64 + z).sin();
    u_window.mapv(|u| s * u)
}

/// Joint log density of the hidden path and the responses, all constants kept:
/// emission terms, transition terms, and the initial-state term.
pub fn complete_loglik(
    theta: ArrayView1<f64>,
    z_path: ArrayView1<f64>,
    spec: &ProblemSpec,
) -> Result<f64> {
    spec.check_theta(theta)?;
    let y = spec.responses()?;
    if z_path.len() != spec.n {
        return Err(Error::DimensionMismatch(format!(
            "z_path has length {}, expected n = {}",
            z_path.len(),
            spec.n
        )));
    }

    let mut total = gaussian_logpdf(z_path[0], spec.latent.init_mean, spec.latent.init_var);
    for k in 0..spec.n.saturating_sub(1) {
        total += gaussian_logpdf(
            z_path[k + 1],
            spec.latent.ar_coeff * z_path[k],
            spec.latent.noise_var_state,
        );
    }
    for k in 0..spec.n {
        let row = design_row(spec.inputs.row(k), z_path[k], k, spec.omega, spec.n);
        total += gaussian_logpdf(y[k], row.dot(&theta), spec.noise_var_obs);
    }
    Ok(total)
}

/// Mean squared error averaged over coordinates.
pub fn estimate_mse(theta_hat: ArrayView1<f64>, theta_true: ArrayView1<f64>) -> Result<f64> {
    if theta_hat.len() != theta_true.len() {
        return Err(Error::DimensionMismatch(format!(
            "length {} vs {}",
            theta_hat.len(),
            theta_true.len()
        )));
    }
    let p = theta_hat.len();
    let sum: f64 = theta_hat
        .iter()
        .zip(theta_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / p as f64)
}
