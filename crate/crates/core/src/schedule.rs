//! Diffusion variance schedule and the closed-form forward/posterior
//! algebra that both training and the likelihood surrogate rely on.
//!
//! Time steps are 1-based: t runs over 1..=T, with the convention
//! alpha_bar(0) = 1 (so the step-1 posterior collapses onto x0).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl VarianceSchedule {
    /// Linear schedule from `beta_start` at t=1 to `beta_end` at t=T.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max < 2 {
            return Err(Error::InvalidArgument("schedule needs T >= 2".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let mut beta = Vec::with_capacity(t_max);
        for t in 0..t_max {
            beta.push(beta_start + (beta_end - beta_start) * t as f64 / (t_max - 1) as f64);
        }
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        // beta_tilde(t) = (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta(t);
        // the t=1 entry is 0 under the alpha_bar(0) = 1 convention.
        let mut beta_tilde = Vec::with_capacity(beta.len());
        for t in 0..beta.len() {
            let prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
            beta_tilde.push((1.0 - prev) / (1.0 - alpha_bar[t]) * beta[t]);
        }
        VarianceSchedule { beta, alpha, alpha_bar, beta_tilde }
    }

    pub fn t_max(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_max() {
            return Err(Error::InvalidArgument(format!(
                "time step {t} outside 1..={}",
                self.t_max()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// alpha_bar(t-1), honoring alpha_bar(0) = 1.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// Posterior variance of x_{t-1} given (x_t, x_0); zero at t=1.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    /// Reverse-step sampling variance: beta_tilde(t) for t >= 2, beta(1)
    /// at the final step (beta_tilde(1) is identically zero).
    pub fn reverse_sigma_sq(&self, t: usize) -> f64 {
        if t == 1 {
            self.beta[0]
        } else {
            self.beta_tilde[t - 1]
        }
    }
}

/// Closed-form forward jump: x_t = sqrt(alpha_bar_t) x0 +
/// sqrt(1 - alpha_bar_t) eps.
pub fn diffuse_forward(
    schedule: &VarianceSchedule,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    x0.zip_map(eps, |x, e| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
}

/// True posterior mean of x_{t-1} given (x_t, x0), coefficient form.
/// At t=1 the posterior is a point mass at x0.
pub fn posterior_mean(
    schedule: &VarianceSchedule,
    x0: &Tensor,
    x_t: &Tensor,
    t: usize,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    if x0.shape() != x_t.shape() {
        return Err(Error::InvalidArgument(format!(
            "x0 shape {:?} vs x_t shape {:?}",
            x0.shape(),
            x_t.shape()
        )));
    }
    if t == 1 {
        return Ok(x0.clone());
    }
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar_prev(t);
    let coef_x0 = ab_prev.sqrt() * schedule.beta(t) / (1.0 - ab);
    let coef_xt = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    x0.zip_map(x_t, |x0v, xtv| coef_x0 * x0v + coef_xt * xtv)
}

/// Same posterior mean written through the noise that produced x_t:
/// mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t).
/// Also how a denoiser's eps prediction is turned into a reverse mean.
pub fn posterior_mean_from_eps(
    schedule: &VarianceSchedule,
    x_t: &Tensor,
    t: usize,
    eps: &Tensor,
) -> Result<Tensor> {
    schedule.check_t(t)?;
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    x_t.zip_map(eps, |x, e| inv_sqrt_alpha * (x - coef * e))
}
