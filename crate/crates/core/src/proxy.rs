//! Surrogate generation-probability estimates obtained through gray-box
//! queries: per-step posterior-matching losses for diffusion models and a
//! reconstruction-plus-KL score for VAEs, with optional calibration
//! against a reference model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GrayBoxHandle, ModelFamily};
use crate::rng::SeededRng;
use crate::schedule::{diffuse_forward, posterior_mean_from_eps};
use crate::tensor::Tensor;

/// Query budget and estimator knobs for the probability proxy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    /// Diffusion steps whose losses enter the estimate. Step 1 has a
    /// degenerate posterior, so grids start at 2.
    pub timesteps: Vec<usize>,
    /// Reverse-step samples averaged into the transition-mean estimate.
    pub n_mc: usize,
    /// Independent forward-noise draws averaged per step.
    pub n_outer: usize,
    /// Encode/decode round trips for the VAE proxy.
    pub vae_queries: usize,
    /// Debug mode for oracle tests: read the model's transition mean
    /// directly instead of estimating it from sampled reverse steps.
    pub exact_mean: bool,
    /// Subtract a reference model's proxy value from the target's.
    pub calibrate: bool,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            timesteps: (1..=10).map(|k| 5 * k).collect(),
            n_mc: 5,
            n_outer: 1,
            vae_queries: 4,
            exact_mean: false,
            calibrate: false,
        }
    }
}

impl ProxyConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.timesteps.is_empty() {
            return Err(Error::InvalidArgument("proxy wants at least one time step".into()));
        }
        if let Some(&t) = self.timesteps.iter().find(|&&t| t < 2 || t > t_max) {
            return Err(Error::InvalidArgument(format!(
                "proxy time step {t} outside [2, {t_max}]"
            )));
        }
        if self.n_mc == 0 || self.n_outer == 0 || self.vae_queries == 0 {
            return Err(Error::InvalidArgument("proxy sample counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// A surrogate log-likelihood value with its per-step (diffusion) or
/// per-query (VAE) breakdown. `value` is the mean of `components`,
/// computed relative to the first component so duplicated queries
/// reproduce the single-query value bitwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxProbability {
    pub value: f64,
    pub components: Vec<f64>,
}

impl ApproxProbability {
    pub fn from_components(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("probability proxy needs components".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite proxy component".into()));
        }
        let base = components[0];
        let shift: f64 = components.iter().map(|c| c - base).sum();
        let value = base + shift / components.len() as f64;
        Ok(ApproxProbability { value, components })
    }
}

/// Posterior-matching loss at one diffusion step: draw forward noise,
/// compare the true posterior mean against the model's transition mean
/// (sampled `n_mc` times, or read exactly in debug mode), and scale by
/// the reverse variance. The first rng draw is always the forward noise;
/// oracle tests rely on that order.
pub fn ddpm_loss_term(
    handle: &GrayBoxHandle,
    x0: &Tensor,
    t: usize,
    cfg: &ProxyConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    let schedule = handle.schedule()?;
    if t < 2 || t > schedule.t_max() {
        return Err(Error::InvalidArgument(format!(
            "loss term wants 2 <= t <= {}, got {t}",
            schedule.t_max()
        )));
    }
    if x0.shape() != handle.data_shape() {
        return Err(Error::InvalidArgument(format!(
            "record shape {:?} does not match model shape {:?}",
            x0.shape(),
            handle.data_shape()
        )));
    }
    let sigma_sq = schedule.reverse_sigma_sq(t);
    let mut total = 0.0;
    for _ in 0..cfg.n_outer {
        let eps = rng.normal_tensor(x0.shape());
        let x_t = diffuse_forward(schedule, x0, t, &eps)?;
        let mu_tilde = posterior_mean_from_eps(schedule, &x_t, t, &eps)?;
        let mu_hat = if cfg.exact_mean {
            handle.ddpm_reverse_mean(&x_t, t)?
        } else {
            let mut sum = Tensor::zeros(x0.shape());
            for _ in 0..cfg.n_mc {
                sum = sum.add(&handle.ddpm_reverse_step(&x_t, t, rng)?)?;
            }
            sum.scale(1.0 / cfg.n_mc as f64)
        };
        total += mu_tilde.sq_dist(&mu_hat)? / (2.0 * sigma_sq);
    }
    Ok(total / cfg.n_outer as f64)
}

/// Diffusion surrogate probability: negated mean of the per-step losses
/// over the configured step grid. Components hold the negated losses, so
/// the value is their mean.
pub fn ddpm_prob(
    handle: &GrayBoxHandle,
    x0: &Tensor,
    cfg: &ProxyConfig,
    rng: &mut SeededRng,
) -> Result<ApproxProbability> {
    cfg.validate(handle.schedule()?.t_max())?;
    let mut components = Vec::with_capacity(cfg.timesteps.len());
    for &t in &cfg.timesteps {
        components.push(-ddpm_loss_term(handle, x0, t, cfg, rng)?);
    }
    ApproxProbability::from_components(components)
}

/// KL divergence from N(mu, diag sigma^2) to the standard normal.
pub fn vae_kl(mu: &Tensor, sigma: &Tensor) -> Result<f64> {
    if mu.shape() != sigma.shape() {
        return Err(Error::InvalidArgument("mu and sigma shapes differ".into()));
    }
    if sigma.data().iter().any(|&s| s <= 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let mut kl = 0.0;
    for (m, s) in mu.data().iter().zip(sigma.data()) {
        kl += 0.5 * (m * m + s * s - 1.0 - (s * s).ln());
    }
    Ok(kl)
}

/// VAE surrogate probability: each query encodes the record, decodes one
/// reparameterized latent draw, and contributes the negated squared
/// reconstruction error minus the posterior KL. The encoder is
/// deterministic, so the KL is computed once.
pub fn vae_prob(
    handle: &GrayBoxHandle,
    x: &Tensor,
    cfg: &ProxyConfig,
    rng: &mut SeededRng,
) -> Result<ApproxProbability> {
    if cfg.vae_queries == 0 {
        return Err(Error::InvalidArgument("proxy sample counts must be >= 1".into()));
    }
    let mut components = Vec::with_capacity(cfg.vae_queries);
    let mut kl = None;
    for _ in 0..cfg.vae_queries {
        let (mu, sigma, z) = handle.vae_encode(x, rng)?;
        let recon = handle.vae_decode(&z)?;
        let kl_value = match kl {
            Some(v) => v,
            None => {
                let v = vae_kl(&mu, &sigma)?;
                kl = Some(v);
                v
            }
        };
        components.push(-x.sq_dist(&recon)? - kl_value);
    }
    ApproxProbability::from_components(components)
}

/// Family dispatch for the two proxies.
pub fn approx_prob(
    handle: &GrayBoxHandle,
    x: &Tensor,
    cfg: &ProxyConfig,
    rng: &mut SeededRng,
) -> Result<ApproxProbability> {
    match handle.family() {
        ModelFamily::Ddpm => ddpm_prob(handle, x, cfg, rng),
        ModelFamily::Vae => vae_prob(handle, x, cfg, rng),
    }
}

fn check_comparable(target: &ApproxProbability, reference: &ApproxProbability) -> Result<()> {
    if target.components.len() != reference.components.len() {
        return Err(Error::InvalidArgument(format!(
            "calibration wants matching query protocols, got {} vs {} components",
            target.components.len(),
            reference.components.len()
        )));
    }
    Ok(())
}

/// Difficulty calibration: the target model's proxy value relative to a
/// reference model evaluated under the same config and rng protocol.
pub fn calibrate(target: &ApproxProbability, reference: &ApproxProbability) -> Result<f64> {
    check_comparable(target, reference)?;
    Ok(target.value - reference.value)
}

/// Componentwise calibration, for fluctuation matrices built from
/// calibrated scores.
pub fn calibrate_components(
    target: &ApproxProbability,
    reference: &ApproxProbability,
) -> Result<ApproxProbability> {
    check_comparable(target, reference)?;
    let diff: Vec<f64> = target
        .components
        .iter()
        .zip(&reference.components)
        .map(|(t, r)| t - r)
        .collect();
    ApproxProbability::from_components(diff)
}
