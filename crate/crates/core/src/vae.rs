//! Toy variational autoencoder with Gaussian encoder and unit-variance
//! Gaussian decoder.
//!
//! The encoder MLP emits latent means and pre-softplus scales in one
//! vector; softplus keeps every predicted standard deviation positive. The
//! decoder emits the reconstruction mean directly. Training minimizes
//! 0.5 * ||x - x_hat||^2 + KL(q(z|x) || N(0, I)) with reparameterized
//! latent draws, backpropagated by hand through both networks.

use serde::{Deserialize, Serialize};

use crate::dataset::DataRecord;
use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpGradients, MlpParams};
use crate::model::{CheckpointSeries, GenModel, ModelConfig, ModelFamily, SeriesBuilder};
use crate::optim::{AdamWConfig, OptimizerState};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyVae {
    /// Maps a flattened record to [mu_1..mu_L, s_1..s_L]; sigma = softplus(s).
    pub encoder: MlpParams,
    /// Maps a latent vector to the reconstruction mean.
    pub decoder: MlpParams,
    pub latent_dim: usize,
    pub data_shape: Vec<usize>,
}

impl ToyVae {
    pub fn data_dim(&self) -> usize {
        self.data_shape.iter().product()
    }

    /// Deterministic encoder pass: latent means and standard deviations.
    pub fn encode_params(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if x.shape() != self.data_shape.as_slice() {
            return Err(Error::InvalidArgument(format!(
                "input shape {:?} does not match model shape {:?}",
                x.shape(),
                self.data_shape
            )));
        }
        let flat = self.encoder.apply(&Tensor::from_vec(x.data().to_vec()))?;
        let l = self.latent_dim;
        let mu = Tensor::from_vec(flat.data()[..l].to_vec());
        let sigma =
            Tensor::from_vec(flat.data()[l..].iter().map(|&s| Activation::Softplus.apply(s)).collect());
        debug_assert!(sigma.data().iter().all(|&v| v > 0.0));
        Ok((mu, sigma))
    }

    /// Decoder mean for a latent vector, shaped like the data.
    pub fn decode_mean(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape() != [self.latent_dim] {
            return Err(Error::InvalidArgument(format!(
                "latent shape {:?}, model wants [{}]",
                z.shape(),
                self.latent_dim
            )));
        }
        let flat = self.decoder.apply(z)?;
        flat.reshaped(&self.data_shape)
    }

    /// Reparameterized posterior draw z = mu + sigma .* eps.
    pub fn sample_latent(&self, x: &Tensor, rng: &mut SeededRng) -> Result<(Tensor, Tensor, Tensor)> {
        let (mu, sigma) = self.encode_params(x)?;
        let eps = rng.normal_tensor(&[self.latent_dim]);
        let z = Tensor::from_vec(
            mu.data()
                .iter()
                .zip(sigma.data())
                .zip(eps.data())
                .map(|((m, s), e)| m + s * e)
                .collect(),
        );
        Ok((mu, sigma, z))
    }
}

/// ELBO training on the member split, mirroring the diffusion trainer's
/// checkpoint/early-stop protocol (see `train_ddpm`).
pub fn train_vae(
    members: &[DataRecord],
    eval: &[DataRecord],
    cfg: &ModelConfig,
    rng: &SeededRng,
) -> Result<CheckpointSeries> {
    if members.is_empty() || eval.is_empty() {
        return Err(Error::InvalidArgument("training needs member and eval records".into()));
    }
    let data_shape = members[0].values.shape().to_vec();
    let d: usize = data_shape.iter().product();
    let l = cfg.latent_dim;
    if l == 0 {
        return Err(Error::InvalidArgument("latent_dim must be positive".into()));
    }

    let mut enc_sizes = vec![d];
    enc_sizes.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
    enc_sizes.push(2 * l);
    let mut dec_sizes = vec![l];
    dec_sizes.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
    dec_sizes.push(d);

    let mut init_rng = rng.labeled_stream("vae-init");
    let mut model = ToyVae {
        encoder: MlpParams::init_tanh(&enc_sizes, Activation::Identity, &mut init_rng)?,
        decoder: MlpParams::init_tanh(&dec_sizes, Activation::Identity, &mut init_rng)?,
        latent_dim: l,
        data_shape: data_shape.clone(),
    };

    let adamw = AdamWConfig {
        learning_rate: cfg.learning_rate,
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let mut enc_opt = OptimizerState::new(&model.encoder, adamw);
    let mut dec_opt = OptimizerState::new(&model.decoder, adamw);

    let mut train_rng = rng.labeled_stream("vae-train");
    let eval_rng = rng.labeled_stream("vae-eval");
    let eval_loss_of = |model: &ToyVae| -> Result<f64> {
        vae_epoch_loss(model, eval, cfg.eval_draws, &mut eval_rng.clone())
    };

    let mut builder = SeriesBuilder::new(ModelFamily::Vae, cfg);
    let init_train = vae_epoch_loss(&model, members, cfg.eval_draws, &mut eval_rng.stream(1))?;
    builder.push(0, init_train, eval_loss_of(&model)?, || GenModel::Vae(model.clone()));

    let mut order: Vec<usize> = (0..members.len()).collect();
    for epoch in 1..=cfg.epochs {
        train_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (batch_loss, enc_grads, dec_grads) =
                vae_batch(&model, members, chunk, &mut train_rng)?;
            loss_sum += batch_loss * chunk.len() as f64;
            enc_opt.step(&mut model.encoder, &enc_grads)?;
            dec_opt.step(&mut model.decoder, &dec_grads)?;
        }
        let train_loss = loss_sum / members.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
        }
        let eval_loss = eval_loss_of(&model)?;
        builder.push(epoch, train_loss, eval_loss, || GenModel::Vae(model.clone()));
    }

    Ok(builder.finish())
}

/// Per-sample negative ELBO (up to the Gaussian constant):
/// 0.5 * ||x - dec(z)||^2 + KL(N(mu, sigma^2) || N(0, 1)).
fn sample_loss(x: &Tensor, recon: &Tensor, mu: &Tensor, sigma: &Tensor) -> f64 {
    let mut kl = 0.0;
    for (m, s) in mu.data().iter().zip(sigma.data()) {
        kl += 0.5 * (m * m + s * s - 1.0 - (s * s).ln());
    }
    0.5 * x.sq_dist(recon).expect("shapes match") + kl
}

fn vae_batch(
    model: &ToyVae,
    records: &[DataRecord],
    idxs: &[usize],
    rng: &mut SeededRng,
) -> Result<(f64, MlpGradients, MlpGradients)> {
    let n = idxs.len();
    let d = model.data_dim();
    let l = model.latent_dim;
    let inv_n = 1.0 / n as f64;

    let mut enc_inputs = Vec::with_capacity(n * d);
    let mut zs = Vec::with_capacity(n * l);
    let mut mus = Vec::with_capacity(n * l);
    let mut sigmas = Vec::with_capacity(n * l);
    let mut eps_draws = Vec::with_capacity(n * l);
    for &i in idxs {
        let x = &records[i].values;
        let (mu, sigma) = model.encode_params(x)?;
        let eps = rng.normal_vec(l);
        for k in 0..l {
            zs.push(mu.data()[k] + sigma.data()[k] * eps[k]);
        }
        enc_inputs.extend_from_slice(x.data());
        mus.extend_from_slice(mu.data());
        sigmas.extend_from_slice(sigma.data());
        eps_draws.extend(eps);
    }

    let z_batch = Tensor::new(vec![n, l], zs)?;
    let recon = model.decoder.apply(&z_batch)?;

    // loss = (1/n) sum_i [ 0.5 ||x_i - recon_i||^2 + KL_i ]
    let mut loss = 0.0;
    let mut dec_upstream = Vec::with_capacity(n * d);
    for (r, x) in recon.data().iter().zip(&enc_inputs) {
        let diff = r - x;
        loss += 0.5 * diff * diff;
        dec_upstream.push(diff * inv_n);
    }
    for (m, s) in mus.iter().zip(&sigmas) {
        loss += 0.5 * (m * m + s * s - 1.0 - (s * s).ln());
    }
    loss *= inv_n;

    let (dec_grads, dz) = model.decoder.grad(&z_batch, &Tensor::new(vec![n, d], dec_upstream)?)?;

    // Chain into the encoder head: z = mu + sigma .* eps with
    // sigma = softplus(raw), so d sigma / d raw = 1 - exp(-sigma).
    let mut enc_upstream = Vec::with_capacity(n * 2 * l);
    for i in 0..n {
        for k in 0..l {
            let j = i * l + k;
            enc_upstream.push(dz.data()[j] + mus[j] * inv_n);
        }
        for k in 0..l {
            let j = i * l + k;
            let dsigma = dz.data()[j] * eps_draws[j] + (sigmas[j] - 1.0 / sigmas[j]) * inv_n;
            enc_upstream.push(dsigma * (1.0 - (-sigmas[j]).exp()));
        }
    }
    let x_batch = Tensor::new(vec![n, d], enc_inputs)?;
    let (enc_grads, _) = model.encoder.grad(&x_batch, &Tensor::new(vec![n, 2 * l], enc_upstream)?)?;
    Ok((loss, enc_grads, dec_grads))
}

/// Loss estimator shared by train and eval curves: `draws` latent samples
/// per record, averaged.
fn vae_epoch_loss(
    model: &ToyVae,
    records: &[DataRecord],
    draws: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut sum = 0.0;
    for rec in records {
        for _ in 0..draws.max(1) {
            let (mu, sigma, z) = model.sample_latent(&rec.values, rng)?;
            let recon = model.decode_mean(&z)?;
            sum += sample_loss(&rec.values, &recon, &mu, &sigma);
        }
    }
    Ok(sum / (records.len() * draws.max(1)) as f64)
}
