//! One JSON document describing an entire experiment. Every artifact a
//! run writes embeds this config's digest, so stale outputs from a
//! different configuration are detected instead of silently mixed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{ClassifierConfig, Method};
use crate::dataset::{DatasetConfig, RecordKind};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::perturb::{MechanismKind, StrengthSchedule};
use crate::proxy::ProxyConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    pub mechanism: MechanismKind,
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub count: usize,
    /// Single-neighbor strength for the mean-based fluctuation score.
    pub met_lambda: f64,
    pub rotation_max_degrees: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            mechanism: MechanismKind::Crop,
            lambda_start: 0.98,
            lambda_end: 0.7,
            count: 10,
            met_lambda: 0.9,
            rotation_max_degrees: 30.0,
        }
    }
}

impl PerturbationConfig {
    pub fn schedule(&self) -> Result<StrengthSchedule> {
        StrengthSchedule::new(self.lambda_start, self.lambda_end, self.count)
    }

    pub fn met_schedule(&self) -> Result<StrengthSchedule> {
        StrengthSchedule::new(self.met_lambda, self.met_lambda, 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub methods: Vec<Method>,
    pub classifier: ClassifierConfig,
    /// Shadow matrices (across both classes) the classifier trains on.
    pub shadow_budget: usize,
    /// Synthetic samples drawn for the distance baselines.
    pub synthetic_samples: usize,
    /// Hit radius for the synthetic-fraction baseline.
    pub mc_radius: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            methods: Method::ALL.to_vec(),
            classifier: ClassifierConfig::default(),
            shadow_budget: 400,
            synthetic_samples: 2048,
            mc_radius: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub fpr_cap: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { fpr_cap: 0.01 }
    }
}

/// Top-level experiment description. The seed is mandatory; every other
/// section falls back to the desk defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Where pipeline stages read and write artifacts. Not part of the
    /// config digest: moving an experiment does not change its identity.
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub proxy: ProxyConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            out_dir: None,
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            proxy: ProxyConfig::default(),
            perturbation: PerturbationConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    /// SHA-256 of the canonical JSON serialization, hex-encoded. The
    /// output directory is blanked first.
    pub fn digest(&self) -> String {
        let mut keyed = self.clone();
        keyed.out_dir = None;
        let bytes = serde_json::to_vec(&keyed).expect("config serializes");
        crate::model::hex(&Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.proxy.validate(self.model.t_max)?;
        self.perturbation.schedule()?;
        self.perturbation.met_schedule()?;
        if self.perturbation.mechanism == MechanismKind::Rotation
            && self.perturbation.rotation_max_degrees <= 0.0
        {
            return Err(Error::Config("rotation wants a positive angle budget".into()));
        }

        let image_data = matches!(self.dataset.kind, RecordKind::BlobImage);
        if self.perturbation.mechanism.is_image() != image_data {
            return Err(Error::Config(format!(
                "mechanism {} does not apply to {} records",
                self.perturbation.mechanism, self.dataset.kind
            )));
        }

        if self.attack.methods.is_empty() {
            return Err(Error::Config("attack section lists no methods".into()));
        }
        let needs_synth = self
            .attack
            .methods
            .iter()
            .any(|m| matches!(m, Method::MinDistance | Method::McFraction));
        if needs_synth && self.attack.synthetic_samples == 0 {
            return Err(Error::Config("distance baselines need synthetic_samples >= 1".into()));
        }
        if self.attack.methods.contains(&Method::McFraction)
            && !(self.attack.mc_radius > 0.0 && self.attack.mc_radius.is_finite())
        {
            return Err(Error::Config("mc_fraction needs a positive radius".into()));
        }
        if self.attack.methods.contains(&Method::PfamiNns) {
            if self.attack.shadow_budget < 2 {
                return Err(Error::Config("classifier training needs shadow_budget >= 2".into()));
            }
            let c = &self.attack.classifier;
            if c.hidden_width == 0 || c.batch_size == 0 {
                return Err(Error::Config("classifier wants nonzero width and batch size".into()));
            }
        }

        if !(self.eval.fpr_cap > 0.0 && self.eval.fpr_cap <= 1.0) {
            return Err(Error::Config(format!(
                "fpr_cap {} outside (0, 1]",
                self.eval.fpr_cap
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
