//! Trained-model containers: per-epoch checkpoint series, digested
//! serialization, and the gray-box query handle the attack side is
//! restricted to.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ddpm::ToyDdpm;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::schedule::VarianceSchedule;
use crate::tensor::Tensor;
use crate::vae::ToyVae;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Ddpm,
    Vae,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelFamily::Ddpm => write!(f, "ddpm"),
            ModelFamily::Vae => write!(f, "vae"),
        }
    }
}

impl ModelFamily {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "ddpm" => Ok(ModelFamily::Ddpm),
            "vae" => Ok(ModelFamily::Vae),
            other => Err(Error::InvalidArgument(format!("unknown model family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenModel {
    Ddpm(ToyDdpm),
    Vae(ToyVae),
}

impl GenModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            GenModel::Ddpm(_) => ModelFamily::Ddpm,
            GenModel::Vae(_) => ModelFamily::Vae,
        }
    }

    pub fn data_shape(&self) -> &[usize] {
        match self {
            GenModel::Ddpm(m) => &m.data_shape,
            GenModel::Vae(m) => &m.data_shape,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.data_shape().iter().product()
    }
}

/// Shared training knobs for both model families. Fields that only one
/// family reads (latent size, schedule shape) are ignored by the other.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub family: ModelFamily,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub latent_dim: usize,
    pub time_embed_features: usize,
    pub t_max: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Epochs the early-stop rule tolerates without improvement before it
    /// declares the overfitting onset.
    pub patience: usize,
    /// Moving-average window for the eval-loss curve.
    pub eval_smooth_window: usize,
    /// (t, noise) draws per record when estimating epoch losses.
    pub eval_draws: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: ModelFamily::Ddpm,
            hidden_width: 64,
            hidden_layers: 2,
            latent_dim: 8,
            time_embed_features: 8,
            t_max: 100,
            beta_start: 1e-3,
            beta_end: 0.2,
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            patience: 5,
            eval_smooth_window: 3,
            eval_draws: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub model: GenModel,
}

/// Loss curves for every epoch plus model snapshots at the retained
/// epochs: the sweep grid, the early-stop marker, and the final epoch.
/// Entry 0 of each curve is the untrained initialization. Retaining a
/// snapshot per epoch would make long runs gigabytes on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSeries {
    pub family: ModelFamily,
    pub early_stop_epoch: usize,
    pub train_curve: Vec<f64>,
    pub eval_curve: Vec<f64>,
    /// Snapshots sorted by epoch. Always includes epoch 0, the early-stop
    /// epoch, and the final epoch.
    pub checkpoints: Vec<Checkpoint>,
}

impl CheckpointSeries {
    /// SHA-256 of the canonical JSON serialization, hex-encoded. Stable
    /// across save/load cycles because JSON floats round-trip exactly.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("series serializes");
        hex(&Sha256::digest(&bytes))
    }

    pub fn retained(&self) -> Vec<usize> {
        self.checkpoints.iter().map(|c| c.epoch).collect()
    }

    pub fn at_epoch(&self, epoch: usize) -> Result<&Checkpoint> {
        self.checkpoints
            .binary_search_by_key(&epoch, |c| c.epoch)
            .map(|i| &self.checkpoints[i])
            .map_err(|_| {
                Error::InvalidArgument(format!(
                    "no snapshot retained for epoch {epoch}; retained epochs are {:?}",
                    self.retained()
                ))
            })
    }

    pub fn early_stop_checkpoint(&self) -> &Checkpoint {
        self.at_epoch(self.early_stop_epoch).expect("early-stop epoch is always retained")
    }

    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("series is never empty")
    }

    pub fn train_curve(&self) -> &[f64] {
        &self.train_curve
    }

    pub fn eval_curve(&self) -> &[f64] {
        &self.eval_curve
    }
}

/// Epochs whose snapshots a training run keeps: a coarse grid of at most
/// nine points covering 0..=epochs, plus the early-stop and final epochs.
/// The epoch sweep scores exactly these, so attack stages never ask for an
/// epoch that was thinned away.
pub fn retained_epochs(epochs: usize, early_stop: usize) -> Vec<usize> {
    let stride = (epochs / 8).max(1);
    let mut grid: Vec<usize> = (0..=epochs).step_by(stride).collect();
    grid.push(early_stop);
    grid.push(epochs);
    grid.sort_unstable();
    grid.dedup();
    grid
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Where a patience-based early stopper would have halted: the epoch whose
/// smoothed eval loss was best when `patience` straight epochs failed to
/// improve on it, or the best epoch overall if patience never runs out.
/// Later improvements do not move a marker that has already fired;
/// a real stopper would not have seen them.
pub(crate) fn early_stop_marker(eval: &[f64], window: usize, patience: usize) -> usize {
    let w = window.max(1);
    let smoothed: Vec<f64> = (0..eval.len())
        .map(|e| {
            let lo = e.saturating_sub(w - 1);
            let slice = &eval[lo..=e];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect();

    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut bad = 0;
    for (e, &s) in smoothed.iter().enumerate() {
        if s < best {
            best = s;
            best_epoch = e;
            bad = 0;
        } else {
            bad += 1;
            if bad >= patience.max(1) {
                return best_epoch;
            }
        }
    }
    best_epoch
}

/// Incremental series assembly for the training loops. Feed it every
/// epoch's losses and the live model; it clones the model only at grid
/// epochs and whenever the smoothed eval loss improves, so memory stays
/// bounded by the retained set instead of the epoch count.
pub(crate) struct SeriesBuilder {
    family: ModelFamily,
    grid: Vec<usize>,
    window: usize,
    patience: usize,
    train_curve: Vec<f64>,
    eval_curve: Vec<f64>,
    grid_checkpoints: Vec<Checkpoint>,
    best_smoothed: f64,
    best: Option<Checkpoint>,
    bad: usize,
    fired: Option<Checkpoint>,
}

impl SeriesBuilder {
    pub(crate) fn new(family: ModelFamily, cfg: &ModelConfig) -> Self {
        SeriesBuilder {
            family,
            grid: retained_epochs(cfg.epochs, 0),
            window: cfg.eval_smooth_window.max(1),
            patience: cfg.patience.max(1),
            train_curve: Vec::with_capacity(cfg.epochs + 1),
            eval_curve: Vec::with_capacity(cfg.epochs + 1),
            grid_checkpoints: Vec::new(),
            best_smoothed: f64::INFINITY,
            best: None,
            bad: 0,
            fired: None,
        }
    }

    /// Record epoch `epoch`'s losses and model state. Epochs must arrive in
    /// order starting from 0. `model` is only called when the epoch is
    /// retained, so a caller can defer the deep clone it implies.
    pub(crate) fn push(
        &mut self,
        epoch: usize,
        train_loss: f64,
        eval_loss: f64,
        model: impl Fn() -> GenModel,
    ) {
        debug_assert_eq!(epoch, self.eval_curve.len());
        self.train_curve.push(train_loss);
        self.eval_curve.push(eval_loss);

        let snapshot = || Checkpoint { epoch, train_loss, eval_loss, model: model() };
        if self.grid.binary_search(&epoch).is_ok() {
            self.grid_checkpoints.push(snapshot());
        }

        if self.fired.is_some() {
            return;
        }
        let lo = self.eval_curve.len().saturating_sub(self.window);
        let tail = &self.eval_curve[lo..];
        let smoothed = tail.iter().sum::<f64>() / tail.len() as f64;
        if smoothed < self.best_smoothed {
            self.best_smoothed = smoothed;
            self.best = Some(snapshot());
            self.bad = 0;
        } else {
            self.bad += 1;
            if self.bad >= self.patience {
                self.fired = self.best.take();
            }
        }
    }

    pub(crate) fn finish(self) -> CheckpointSeries {
        let early = self.fired.or(self.best).expect("at least one epoch was pushed");
        let early_stop_epoch = early.epoch;
        debug_assert_eq!(
            early_stop_epoch,
            early_stop_marker(&self.eval_curve, self.window, self.patience),
            "online tracker must agree with the curve-based marker"
        );

        let mut checkpoints = self.grid_checkpoints;
        if checkpoints.binary_search_by_key(&early_stop_epoch, |c| c.epoch).is_err() {
            checkpoints.push(early);
            checkpoints.sort_by_key(|c| c.epoch);
        }
        CheckpointSeries {
            family: self.family,
            early_stop_epoch,
            train_curve: self.train_curve,
            eval_curve: self.eval_curve,
            checkpoints,
        }
    }
}

/// On-disk wrapper for a checkpoint series. Every artifact this crate
/// writes embeds the experiment config digest and the global seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeriesArtifact {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub role: String,
    pub digest: String,
    pub series: CheckpointSeries,
}

pub const SERIES_FORMAT_VERSION: u32 = 1;

#[derive(Deserialize)]
struct ArtifactHead {
    config_digest: String,
}

/// Refuse to overwrite `path` if it holds an artifact from a different
/// config digest; deleting stale outputs is the caller's explicit choice.
pub(crate) fn guard_overwrite(path: &Path, config_digest: &str) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let found = if let Ok(head) = serde_json::from_str::<ArtifactHead>(&text) {
        head.config_digest
    } else if let Some(line) = text.lines().next().filter(|l| l.starts_with('#')) {
        // CSV artifacts carry the digest in their metadata comment.
        line.split_whitespace()
            .find_map(|tok| tok.strip_prefix("config_digest="))
            .unwrap_or("")
            .to_string()
    } else {
        return Ok(());
    };
    if !found.is_empty() && found != config_digest {
        return Err(Error::DigestMismatch {
            path: path.display().to_string(),
            expected: config_digest.to_string(),
            found,
        });
    }
    Ok(())
}

pub fn save_series(
    path: &Path,
    series: &CheckpointSeries,
    config_digest: &str,
    seed: u64,
    role: &str,
) -> Result<()> {
    guard_overwrite(path, config_digest)?;
    let artifact = SeriesArtifact {
        format_version: SERIES_FORMAT_VERSION,
        config_digest: config_digest.to_string(),
        seed,
        role: role.to_string(),
        digest: series.digest(),
        series: series.clone(),
    };
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer(file, &artifact)?;
    Ok(())
}

pub fn load_series(path: &Path) -> Result<SeriesArtifact> {
    let file = File::open(path)
        .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    let artifact: SeriesArtifact = serde_json::from_reader(BufReader::new(file))?;
    if artifact.format_version != SERIES_FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "{}: format version {} unsupported",
            path.display(),
            artifact.format_version
        )));
    }
    let recomputed = artifact.series.digest();
    if recomputed != artifact.digest {
        return Err(Error::Artifact(format!(
            "{}: stored digest {} does not match content digest {recomputed}",
            path.display(),
            artifact.digest
        )));
    }
    Ok(artifact)
}

/// Query-only access to a trained model.
///
/// This is the adversary's entire view: intermediate generative outputs
/// (reverse diffusion steps, encoder posteriors, decoder means) plus public
/// metadata like the variance schedule. Model parameters are unreachable
/// through it; the field is private and no accessor returns it:
///
/// ```compile_fail
/// fn peek(handle: &fluctlab::model::GrayBoxHandle) {
///     let _ = &handle.model;
/// }
/// ```
///
/// Handles are cheap to clone and safe to share across threads; clones
/// share one monotone query counter.
#[derive(Clone, Debug)]
pub struct GrayBoxHandle {
    model: Arc<GenModel>,
    queries: Arc<AtomicU64>,
}

impl GrayBoxHandle {
    pub fn new(model: GenModel) -> Self {
        GrayBoxHandle { model: Arc::new(model), queries: Arc::new(AtomicU64::new(0)) }
    }

    pub fn family(&self) -> ModelFamily {
        self.model.family()
    }

    pub fn data_shape(&self) -> &[usize] {
        self.model.data_shape()
    }

    pub fn data_dim(&self) -> usize {
        self.model.data_dim()
    }

    /// Queries answered so far, across all clones of this handle.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn bump(&self) {
        self.queries.fetch_add(1, Ordering::Relaxed);
    }

    /// The diffusion variance schedule (public knowledge under this threat
    /// model; it carries no trained weights).
    pub fn schedule(&self) -> Result<&VarianceSchedule> {
        match self.model.as_ref() {
            GenModel::Ddpm(m) => Ok(&m.schedule),
            GenModel::Vae(_) => Err(Error::InvalidArgument("not a diffusion model".into())),
        }
    }

    pub fn latent_dim(&self) -> Result<usize> {
        match self.model.as_ref() {
            GenModel::Vae(m) => Ok(m.latent_dim),
            GenModel::Ddpm(_) => Err(Error::InvalidArgument("not a vae".into())),
        }
    }

    fn ddpm(&self) -> Result<&ToyDdpm> {
        match self.model.as_ref() {
            GenModel::Ddpm(m) => Ok(m),
            GenModel::Vae(_) => Err(Error::InvalidArgument("not a diffusion model".into())),
        }
    }

    fn vae(&self) -> Result<&ToyVae> {
        match self.model.as_ref() {
            GenModel::Vae(m) => Ok(m),
            GenModel::Ddpm(_) => Err(Error::InvalidArgument("not a vae".into())),
        }
    }

    /// One stochastic reverse diffusion step x_t -> x_{t-1}.
    pub fn ddpm_reverse_step(&self, x_t: &Tensor, t: usize, rng: &mut SeededRng) -> Result<Tensor> {
        self.bump();
        self.ddpm()?.reverse_step(x_t, t, rng)
    }

    /// Reverse step with the sampling variance forced to zero, returning
    /// the model's transition mean exactly. Debug aid for oracle tests;
    /// real attack configurations estimate the mean from sampled steps.
    pub fn ddpm_reverse_mean(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.bump();
        self.ddpm()?.reverse_mean(x_t, t)
    }

    /// Posterior parameters and a reparameterized latent draw.
    pub fn vae_encode(&self, x: &Tensor, rng: &mut SeededRng) -> Result<(Tensor, Tensor, Tensor)> {
        self.bump();
        self.vae()?.sample_latent(x, rng)
    }

    pub fn vae_decode(&self, z: &Tensor) -> Result<Tensor> {
        self.bump();
        self.vae()?.decode_mean(z)
    }

    /// Draw `n` fresh synthetic records. For diffusion this runs the full
    /// reverse chain (each step counts as a query); for the VAE it decodes
    /// standard-normal latents.
    pub fn synthesize(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(n);
        match self.model.as_ref() {
            GenModel::Ddpm(m) => {
                for _ in 0..n {
                    let mut x = rng.normal_tensor(&m.data_shape);
                    for t in (1..=m.schedule.t_max()).rev() {
                        x = self.ddpm_reverse_step(&x, t, rng)?;
                    }
                    out.push(x);
                }
            }
            GenModel::Vae(m) => {
                for _ in 0..n {
                    let z = rng.normal_tensor(&[m.latent_dim]);
                    out.push(self.vae_decode(&z)?);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_blob_images;
    use crate::ddpm::train_ddpm;

    fn tiny_series(seed: u64) -> CheckpointSeries {
        let mut rng = SeededRng::new(seed);
        let members = generate_blob_images(8, 5, 0.0, &mut rng).unwrap();
        let eval = generate_blob_images(8, 5, 0.0, &mut rng).unwrap();
        let cfg = ModelConfig {
            epochs: 2,
            batch_size: 4,
            t_max: 6,
            hidden_width: 8,
            hidden_layers: 1,
            ..ModelConfig::default()
        };
        train_ddpm(&members, &eval, &cfg, &SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn series_round_trips_with_stable_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.json");
        let series = tiny_series(1);
        save_series(&path, &series, "cfg123", 7, "target").unwrap();
        let loaded = load_series(&path).unwrap();
        assert_eq!(loaded.series, series);
        assert_eq!(loaded.digest, series.digest());
        assert_eq!(loaded.config_digest, "cfg123");
        assert_eq!(loaded.seed, 7);
        // saving again under the same digest is idempotent
        save_series(&path, &series, "cfg123", 7, "target").unwrap();
    }

    #[test]
    fn mismatched_config_digest_refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.json");
        let series = tiny_series(2);
        save_series(&path, &series, "cfg-a", 7, "target").unwrap();
        match save_series(&path, &series, "cfg-b", 7, "target") {
            Err(Error::DigestMismatch { .. }) => {}
            other => panic!("expected digest mismatch, got {other:?}"),
        }
    }

    #[test]
    fn tampered_series_fails_integrity_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.json");
        let series = tiny_series(3);
        save_series(&path, &series, "cfg", 7, "target").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"early_stop_epoch\":0", "\"early_stop_epoch\":1", 1);
        if tampered != text {
            std::fs::write(&path, tampered).unwrap();
            assert!(load_series(&path).is_err());
        }
    }

    #[test]
    fn epoch_lookup_and_named_checkpoints() {
        let series = tiny_series(4);
        assert_eq!(series.at_epoch(0).unwrap().epoch, 0);
        assert_eq!(series.final_checkpoint().epoch, 2);
        assert!(series.at_epoch(99).is_err());
        assert!(series.early_stop_epoch <= 2);
    }

    #[test]
    fn handle_counts_queries_across_clones() {
        let series = tiny_series(5);
        let handle = GrayBoxHandle::new(series.final_checkpoint().model.clone());
        let clone = handle.clone();
        let mut rng = SeededRng::new(6);
        let x = rng.normal_tensor(handle.data_shape());
        let _ = handle.ddpm_reverse_step(&x, 3, &mut rng).unwrap();
        let _ = clone.ddpm_reverse_mean(&x, 3).unwrap();
        assert_eq!(handle.query_count(), 2);
        assert_eq!(clone.query_count(), 2);
    }

    #[test]
    fn family_mismatched_queries_are_rejected() {
        let series = tiny_series(7);
        let handle = GrayBoxHandle::new(series.final_checkpoint().model.clone());
        let mut rng = SeededRng::new(8);
        assert!(handle.vae_encode(&Tensor::zeros(&[5, 5]), &mut rng).is_err());
        assert!(handle.latent_dim().is_err());
        assert!(handle.schedule().is_ok());
    }

    #[test]
    fn early_stop_marker_handles_plateaus_and_valleys() {
        // strictly improving: marker is the last epoch
        assert_eq!(early_stop_marker(&[5.0, 4.0, 3.0, 2.0, 1.0], 3, 2), 4);
        // clean valley: marker at the basin
        assert_eq!(early_stop_marker(&[5.0, 3.0, 1.0, 2.0, 3.0, 4.0, 5.0], 1, 2), 2);
        // flat curve: epoch 0 is already the best
        assert_eq!(early_stop_marker(&[1.0, 1.0, 1.0, 1.0], 3, 2), 0);
        // once patience fires the marker is frozen; the later dip is unseen
        let noisy = [10.0, 0.5, 10.0, 10.0, 10.0, 10.0, 0.1, 0.1, 0.1, 0.1];
        assert_eq!(early_stop_marker(&noisy, 3, 2), 1);
    }

    #[test]
    fn retained_epochs_thin_long_runs() {
        let grid = retained_epochs(1200, 517);
        assert!(grid.len() <= 11);
        assert!(grid.contains(&0) && grid.contains(&517) && grid.contains(&1200));
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
        // short runs keep everything
        assert_eq!(retained_epochs(3, 2), vec![0, 1, 2, 3]);
    }
}
