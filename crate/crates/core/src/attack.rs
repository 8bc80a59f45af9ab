//! Membership attacks. The fluctuation attacks compare a record's
//! surrogate probability against perturbed neighbors, either averaged
//! directly or fed as a matrix to a small classifier trained on shadow
//! model outputs. Distance and raw-probability baselines sit alongside.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DataRecord;
use crate::error::{Error, Result};
use crate::mlp::{Activation, MlpParams};
use crate::model::GrayBoxHandle;
use crate::optim::{AdamWConfig, OptimizerState};
use crate::perturb::{neighbor_set, PerturbationMechanism, StrengthSchedule};
use crate::proxy::{approx_prob, calibrate_components, ApproxProbability, ProxyConfig};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Attack method tags as they appear in configs, CSV output, and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PfamiMet,
    PfamiNns,
    ProbThreshold,
    MinDistance,
    McFraction,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::PfamiMet,
        Method::PfamiNns,
        Method::ProbThreshold,
        Method::MinDistance,
        Method::McFraction,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::PfamiMet => "pfami_met",
            Method::PfamiNns => "pfami_nns",
            Method::ProbThreshold => "prob_threshold",
            Method::MinDistance => "min_distance",
            Method::McFraction => "mc_fraction",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attack method {name:?}")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Guard against division by a vanishing surrogate probability.
pub const FLUCTUATION_FLOOR: f64 = 1e-8;

/// Relative probability drop from a record to one neighbor. The absolute
/// value in the denominator keeps the sign convention "positive means the
/// record is more probable than its neighbor"; the surrogate itself is
/// negative, so dividing by it raw would flip that.
pub fn fluctuation(p_x: f64, p_neighbor: f64) -> f64 {
    (p_x - p_neighbor) / p_x.abs().max(FLUCTUATION_FLOOR)
}

/// M neighbors by N proxy components of relative fluctuations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationMatrix {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<f64>,
}

impl FluctuationMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || entries.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "matrix wants {rows}x{cols} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("non-finite fluctuation entry".into()));
        }
        Ok(FluctuationMatrix { rows, cols, entries })
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn flat(&self) -> &[f64] {
        &self.entries
    }
}

/// Target-model surrogate probability for one record, calibrated against
/// a reference model when one is supplied. Both models see clones of the
/// same rng stream so their noise draws cancel in the difference.
pub fn record_prob(
    handle: &GrayBoxHandle,
    reference: Option<&GrayBoxHandle>,
    x: &Tensor,
    cfg: &ProxyConfig,
    rng: &SeededRng,
) -> Result<ApproxProbability> {
    let p = approx_prob(handle, x, cfg, &mut rng.clone())?;
    match reference {
        Some(r) => {
            let p_ref = approx_prob(r, x, cfg, &mut rng.clone())?;
            calibrate_components(&p, &p_ref)
        }
        None => Ok(p),
    }
}

/// Fluctuation matrix for one record: entry (j, k) compares the k-th proxy
/// component of the record against its j-th neighbor. Every proxy
/// evaluation replays a clone of the same rng stream (common random
/// numbers), so an identity neighbor produces an exactly zero row.
pub fn fluctuation_matrix(
    handle: &GrayBoxHandle,
    reference: Option<&GrayBoxHandle>,
    rec: &DataRecord,
    mech: &PerturbationMechanism,
    schedule: &StrengthSchedule,
    cfg: &ProxyConfig,
    rng: &SeededRng,
) -> Result<FluctuationMatrix> {
    let neighbors = neighbor_set(rec, mech, schedule)?;
    let p_x = record_prob(handle, reference, &rec.values, cfg, rng)?;
    let n = p_x.components.len();
    let mut entries = Vec::with_capacity(neighbors.len() * n);
    for nbr in &neighbors {
        let p_n = record_prob(handle, reference, &nbr.values, cfg, rng)?;
        if p_n.components.len() != n {
            return Err(Error::InvalidArgument("neighbor proxy arity changed".into()));
        }
        for k in 0..n {
            entries.push(fluctuation(p_x.components[k], p_n.components[k]));
        }
    }
    FluctuationMatrix::new(neighbors.len(), n, entries)
}

/// Grand mean of the fluctuation matrix; higher means the record sits on
/// a sharper probability peak.
pub fn pfami_met_score(matrix: &FluctuationMatrix) -> Result<f64> {
    let flat = matrix.flat();
    if flat.is_empty() {
        return Err(Error::InvalidArgument("empty fluctuation matrix".into()));
    }
    Ok(flat.iter().sum::<f64>() / flat.len() as f64)
}

/// One record's attack output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub record_id: u64,
    pub method: Method,
    /// Higher means more member-like.
    pub score: f64,
    /// Decision threshold fitted on shadow data, when one was requested.
    pub threshold: Option<f64>,
}

impl AttackScore {
    pub fn decision(&self) -> Option<bool> {
        self.threshold.map(|t| self.score >= t)
    }
}

/// Training knobs for the attack classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden_width: 64,
            epochs: 150,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
        }
    }
}

/// Binary classifier over flattened fluctuation matrices. Inputs are
/// standardized with statistics frozen from the shadow training set; the
/// net emits a logit and scores pass through a sigmoid into [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackClassifier {
    pub params: MlpParams,
    pub rows: usize,
    pub cols: usize,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub shadow_samples: usize,
    pub epochs: usize,
}

impl AttackClassifier {
    fn standardize(&self, matrix: &FluctuationMatrix) -> Result<Tensor> {
        if matrix.rows != self.rows || matrix.cols != self.cols {
            return Err(Error::InvalidArgument(format!(
                "classifier wants a {}x{} matrix, got {}x{}",
                self.rows, self.cols, matrix.rows, matrix.cols
            )));
        }
        let data: Vec<f64> = matrix
            .flat()
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        Ok(Tensor::from_vec(data))
    }

    /// Membership probability for one matrix.
    pub fn score(&self, matrix: &FluctuationMatrix) -> Result<f64> {
        let logits = self.params.apply(&self.standardize(matrix)?)?;
        Ok(Activation::Sigmoid.apply(logits.data()[0]))
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("classifier serializes");
        crate::model::hex(&Sha256::digest(&bytes))
    }
}

/// Labeled fluctuation matrices from a shadow model, one per record, in
/// members-then-nonmembers order. Parallel over records; each record's
/// stream is derived from its id, so the output is order-independent.
pub fn shadow_training_set(
    handle: &GrayBoxHandle,
    reference: Option<&GrayBoxHandle>,
    members: &[DataRecord],
    nonmembers: &[DataRecord],
    mech: &PerturbationMechanism,
    schedule: &StrengthSchedule,
    cfg: &ProxyConfig,
    rng: &SeededRng,
) -> Result<Vec<(FluctuationMatrix, bool)>> {
    let score_all = |records: &[DataRecord], label: bool| -> Result<Vec<(FluctuationMatrix, bool)>> {
        records
            .par_iter()
            .map(|rec| {
                let m = fluctuation_matrix(
                    handle,
                    reference,
                    rec,
                    mech,
                    schedule,
                    cfg,
                    &rng.stream(rec.id),
                )?;
                Ok((m, label))
            })
            .collect()
    };
    let mut out = score_all(members, true)?;
    out.extend(score_all(nonmembers, false)?);
    Ok(out)
}

/// Train the attack classifier on labeled shadow matrices with binary
/// cross entropy on the logit head.
pub fn train_attack_classifier(
    samples: &[(FluctuationMatrix, bool)],
    cfg: &ClassifierConfig,
    rng: &SeededRng,
) -> Result<AttackClassifier> {
    let positives = samples.iter().filter(|(_, l)| *l).count();
    if positives == 0 || positives == samples.len() {
        return Err(Error::Training("shadow labels are single-class".into()));
    }
    let (rows, cols) = (samples[0].0.rows, samples[0].0.cols);
    if samples.iter().any(|(m, _)| m.rows != rows || m.cols != cols) {
        return Err(Error::InvalidArgument("inconsistent matrix shapes".into()));
    }
    let dim = rows * cols;

    // feature standardization frozen from the shadow set
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for (m, _) in samples {
        for (acc, v) in mean.iter_mut().zip(m.flat()) {
            *acc += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for (m, _) in samples {
        for ((acc, v), mu) in std.iter_mut().zip(m.flat()).zip(&mean) {
            *acc += (v - mu) * (v - mu) / n;
        }
    }
    for s in std.iter_mut() {
        *s = s.sqrt().max(1e-8);
    }

    let features: Vec<Vec<f64>> = samples
        .iter()
        .map(|(m, _)| {
            m.flat()
                .iter()
                .zip(mean.iter().zip(&std))
                .map(|(v, (mu, s))| (v - mu) / s)
                .collect()
        })
        .collect();
    let labels: Vec<f64> = samples.iter().map(|(_, l)| if *l { 1.0 } else { 0.0 }).collect();

    let sizes = [dim, cfg.hidden_width, cfg.hidden_width, 1];
    let mut init_rng = rng.labeled_stream("attack-init");
    let mut params = MlpParams::init_tanh(&sizes, Activation::Identity, &mut init_rng)?;
    let mut opt = OptimizerState::new(
        &params,
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );

    let mut train_rng = rng.labeled_stream("attack-train");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..cfg.epochs {
        train_rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut batch = Vec::with_capacity(chunk.len() * dim);
            for &i in chunk {
                batch.extend_from_slice(&features[i]);
            }
            let batch = Tensor::new(vec![chunk.len(), dim], batch)?;
            let logits = params.apply(&batch)?;
            // d(BCE)/d(logit) = sigmoid(logit) - label
            let upstream: Vec<f64> = logits
                .data()
                .iter()
                .zip(chunk.iter().map(|&i| labels[i]))
                .map(|(z, y)| (Activation::Sigmoid.apply(*z) - y) / chunk.len() as f64)
                .collect();
            let (grads, _) = params.grad(&batch, &Tensor::new(vec![chunk.len(), 1], upstream)?)?;
            opt.step(&mut params, &grads)?;
        }
    }

    Ok(AttackClassifier {
        params,
        rows,
        cols,
        feature_mean: mean,
        feature_std: std,
        shadow_samples: samples.len(),
        epochs: cfg.epochs,
    })
}

/// Classifier probability for one record's matrix.
pub fn pfami_nns_score(classifier: &AttackClassifier, matrix: &FluctuationMatrix) -> Result<f64> {
    classifier.score(matrix)
}

/// Decision threshold maximizing accuracy on labeled (shadow) scores.
/// Deterministic: the highest-accuracy threshold encountered while
/// sweeping scores in descending order wins ties.
pub fn best_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidArgument("threshold fit wants matched nonempty inputs".into()));
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    candidates.dedup();
    let accuracy = |tau: f64| {
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(s, l)| (**s >= tau) == **l)
            .count();
        correct as f64 / scores.len() as f64
    };
    let mut best_tau = f64::INFINITY; // everything negative: accuracy = share of non-members
    let mut best_acc = accuracy(best_tau);
    for tau in candidates {
        let acc = accuracy(tau);
        if acc > best_acc {
            best_acc = acc;
            best_tau = tau;
        }
    }
    Ok(best_tau)
}

/// Raw surrogate probability as a membership score.
pub fn baseline_prob_threshold(p_hat: &ApproxProbability) -> f64 {
    p_hat.value
}

/// Negated distance to the nearest synthetic sample; 0 is maximal.
pub fn baseline_min_distance(x: &Tensor, synthetic: &[Tensor]) -> Result<f64> {
    if synthetic.is_empty() {
        return Err(Error::InvalidArgument("distance baseline wants synthetic samples".into()));
    }
    let mut min = f64::INFINITY;
    for s in synthetic {
        min = min.min(x.dist(s)?);
    }
    Ok(-min)
}

/// Fraction of synthetic samples within `eps_radius` of the record.
pub fn baseline_mc_fraction(x: &Tensor, synthetic: &[Tensor], eps_radius: f64) -> Result<f64> {
    if synthetic.is_empty() {
        return Err(Error::InvalidArgument("distance baseline wants synthetic samples".into()));
    }
    if !eps_radius.is_finite() || eps_radius < 0.0 {
        return Err(Error::InvalidArgument(format!("bad radius {eps_radius}")));
    }
    let mut hits = 0usize;
    for s in synthetic {
        if x.dist(s)? <= eps_radius {
            hits += 1;
        }
    }
    Ok(hits as f64 / synthetic.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddpm::{Denoiser, ToyDdpm};
    use crate::metrics::auc;
    use crate::model::GenModel;
    use crate::schedule::VarianceSchedule;

    #[test]
    fn fluctuation_sign_and_arithmetic() {
        assert_eq!(fluctuation(-3.0, -3.0), 0.0);
        assert!((fluctuation(-10.0, -11.0) - 0.1).abs() < 1e-15);
        assert!(fluctuation(-11.0, -10.0) < 0.0);

        // exact standard normal density at 0 vs 0.1: drop is 1 - e^{-0.005}
        let p0 = 0.3989422804014327;
        let p1 = p0 * (-0.005f64).exp();
        let f = fluctuation(p0, p1);
        assert!((f - (1.0 - (-0.005f64).exp())).abs() < 1e-15);
        assert!(f > 0.0);

        // floor guards a vanishing denominator
        let guarded = fluctuation(0.0, -0.5);
        assert_eq!(guarded, 0.5 / FLUCTUATION_FLOOR);
    }

    fn oracle_handle(dim: usize) -> GrayBoxHandle {
        let schedule = VarianceSchedule::linear(10, 0.05, 0.2).unwrap();
        let eps = SeededRng::new(50).normal_tensor(&[dim]);
        let model =
            ToyDdpm { schedule, denoiser: Denoiser::Oracle { eps, mean_offset: 0.3 }, data_shape: vec![dim] };
        GrayBoxHandle::new(GenModel::Ddpm(model))
    }

    fn vector_record(id: u64, dim: usize) -> DataRecord {
        DataRecord { id, values: SeededRng::new(id).normal_tensor(&[dim]) }
    }

    #[test]
    fn identity_neighbor_rows_are_exactly_zero() {
        let handle = oracle_handle(3);
        let rec = vector_record(7, 3);
        let mech = PerturbationMechanism::AdditiveDirection {
            direction: Tensor::filled(&[3], 1.0 / 3f64.sqrt()),
        };
        let schedule = StrengthSchedule::new(1.0, 1.0, 1).unwrap();
        for exact_mean in [true, false] {
            let cfg = ProxyConfig {
                timesteps: vec![2, 5],
                n_mc: 2,
                exact_mean,
                ..ProxyConfig::default()
            };
            let m = fluctuation_matrix(
                &handle,
                None,
                &rec,
                &mech,
                &schedule,
                &cfg,
                &SeededRng::new(9),
            )
            .unwrap();
            assert_eq!((m.rows, m.cols), (1, 2));
            assert!(m.flat().iter().all(|&e| e == 0.0), "exact_mean={exact_mean}: {m:?}");
        }
    }

    #[test]
    fn matrix_shape_follows_schedule_and_step_grid() {
        let handle = oracle_handle(4);
        let rec = vector_record(11, 4);
        let mech = PerturbationMechanism::ShrinkToCentroid { centroid: Tensor::zeros(&[4]) };
        let schedule = StrengthSchedule::new(0.98, 0.7, 10).unwrap();
        let cfg = ProxyConfig {
            timesteps: (1..=10).map(|k| k.max(2)).collect(),
            n_mc: 1,
            ..ProxyConfig::default()
        };
        let m = fluctuation_matrix(&handle, None, &rec, &mech, &schedule, &cfg, &SeededRng::new(1))
            .unwrap();
        assert_eq!((m.rows, m.cols), (10, 10));
        assert!(m.flat().iter().all(|e| e.is_finite()));
        let first_row: Vec<f64> = (0..10).map(|k| m.at(0, k)).collect();
        let last_row: Vec<f64> = (0..10).map(|k| m.at(9, k)).collect();
        assert_ne!(first_row, last_row);
    }

    #[test]
    fn matrices_are_deterministic_per_record_stream() {
        let handle = oracle_handle(3);
        let rec = vector_record(21, 3);
        let mech = PerturbationMechanism::ShrinkToCentroid { centroid: Tensor::zeros(&[3]) };
        let schedule = StrengthSchedule::new(0.9, 0.7, 3).unwrap();
        let cfg = ProxyConfig { timesteps: vec![2, 4], n_mc: 2, ..ProxyConfig::default() };
        let base = SeededRng::new(33);
        let a = fluctuation_matrix(&handle, None, &rec, &mech, &schedule, &cfg, &base.stream(rec.id))
            .unwrap();
        let b = fluctuation_matrix(&handle, None, &rec, &mech, &schedule, &cfg, &base.stream(rec.id))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn met_score_is_the_grand_mean() {
        let m = FluctuationMatrix::new(1, 2, vec![0.02, 0.04]).unwrap();
        assert!((pfami_met_score(&m).unwrap() - 0.03).abs() < 1e-15);

        let z = FluctuationMatrix::new(3, 3, vec![0.0; 9]).unwrap();
        assert_eq!(pfami_met_score(&z).unwrap(), 0.0);

        let scaled = FluctuationMatrix::new(1, 2, vec![0.06, 0.12]).unwrap();
        assert!(
            (pfami_met_score(&scaled).unwrap() - 3.0 * pfami_met_score(&m).unwrap()).abs() < 1e-15
        );

        assert!(FluctuationMatrix::new(0, 2, vec![]).is_err());
        assert!(FluctuationMatrix::new(1, 2, vec![f64::NAN, 0.0]).is_err());
    }

    fn zero_classifier(rows: usize, cols: usize) -> AttackClassifier {
        let dim = rows * cols;
        AttackClassifier {
            params: MlpParams {
                layers: vec![crate::mlp::LayerParams {
                    weights: Tensor::zeros(&[1, dim]),
                    bias: Tensor::zeros(&[1]),
                    activation: Activation::Identity,
                }],
            },
            rows,
            cols,
            feature_mean: vec![0.0; dim],
            feature_std: vec![1.0; dim],
            shadow_samples: 0,
            epochs: 0,
        }
    }

    #[test]
    fn zero_classifier_scores_one_half() {
        let clf = zero_classifier(2, 3);
        let m = FluctuationMatrix::new(2, 3, vec![0.5, -0.1, 0.2, 0.0, 0.3, -0.4]).unwrap();
        assert_eq!(clf.score(&m).unwrap(), 0.5);
        let wrong = FluctuationMatrix::new(3, 2, vec![0.0; 6]).unwrap();
        assert!(clf.score(&wrong).is_err());
    }

    fn separable_samples(n_per_class: usize, seed: u64) -> Vec<(FluctuationMatrix, bool)> {
        let mut rng = SeededRng::new(seed);
        let mut out = Vec::new();
        for label in [true, false] {
            let shift = if label { 0.1 } else { -0.1 };
            for _ in 0..n_per_class {
                let entries: Vec<f64> =
                    (0..6).map(|_| shift + 0.05 * rng.standard_normal()).collect();
                out.push((FluctuationMatrix::new(2, 3, entries).unwrap(), label));
            }
        }
        out
    }

    #[test]
    fn classifier_learns_a_separable_shadow_set() {
        let samples = separable_samples(40, 60);
        let cfg = ClassifierConfig { epochs: 60, ..ClassifierConfig::default() };
        let clf = train_attack_classifier(&samples, &cfg, &SeededRng::new(61)).unwrap();
        let scores: Vec<f64> = samples.iter().map(|(m, _)| clf.score(m).unwrap()).collect();
        let labels: Vec<bool> = samples.iter().map(|(_, l)| *l).collect();
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
        let a = auc(&scores, &labels).unwrap();
        assert!(a > 0.9, "shadow auc {a}");
    }

    #[test]
    fn classifier_training_is_seed_deterministic() {
        let samples = separable_samples(20, 70);
        let cfg = ClassifierConfig { epochs: 10, ..ClassifierConfig::default() };
        let a = train_attack_classifier(&samples, &cfg, &SeededRng::new(71)).unwrap();
        let b = train_attack_classifier(&samples, &cfg, &SeededRng::new(71)).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = train_attack_classifier(&samples, &cfg, &SeededRng::new(72)).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn single_class_shadow_sets_are_rejected() {
        let mut samples = separable_samples(5, 80);
        samples.retain(|(_, l)| *l);
        let cfg = ClassifierConfig::default();
        match train_attack_classifier(&samples, &cfg, &SeededRng::new(81)) {
            Err(Error::Training(_)) => {}
            other => panic!("expected training error, got {other:?}"),
        }
    }

    #[test]
    fn threshold_fit_separates_perfectly_separable_scores() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        let tau = best_threshold(&scores, &labels).unwrap();
        for (s, l) in scores.iter().zip(&labels) {
            assert_eq!(*s >= tau, *l);
        }
        // degenerate all-low scores: threshold above everything is fine
        let tau = best_threshold(&[0.1, 0.2], &[false, false]).unwrap();
        assert!(0.1 < tau && 0.2 < tau);
    }

    #[test]
    fn distance_baselines_follow_their_definitions() {
        let x = Tensor::from_vec(vec![1.0, 0.0]);
        let synth = vec![
            Tensor::from_vec(vec![0.0, 0.0]),
            Tensor::from_vec(vec![1.0, 0.0]),
            Tensor::from_vec(vec![3.0, 4.0]),
        ];
        assert_eq!(baseline_min_distance(&x, &synth).unwrap(), 0.0);
        let far = Tensor::from_vec(vec![10.0, 0.0]);
        assert!(baseline_min_distance(&far, &synth).unwrap() < -8.0);

        assert_eq!(baseline_mc_fraction(&x, &synth, 100.0).unwrap(), 1.0);
        let f_small = baseline_mc_fraction(&x, &synth, 0.5).unwrap();
        let f_big = baseline_mc_fraction(&x, &synth, 2.0).unwrap();
        assert!(f_small <= f_big);
        assert!((f_small - 1.0 / 3.0).abs() < 1e-15);

        assert!(baseline_min_distance(&x, &[]).is_err());
        assert!(baseline_mc_fraction(&x, &synth, -1.0).is_err());
        assert_eq!(
            baseline_prob_threshold(&ApproxProbability::from_components(vec![-2.0]).unwrap()),
            -2.0
        );
    }

    #[test]
    fn shadow_set_orders_members_first_and_parallelism_is_stable() {
        let handle = oracle_handle(3);
        let members: Vec<DataRecord> = (0..4).map(|i| vector_record(i, 3)).collect();
        let non: Vec<DataRecord> = (100..104).map(|i| vector_record(i, 3)).collect();
        let mech = PerturbationMechanism::ShrinkToCentroid { centroid: Tensor::zeros(&[3]) };
        let sched = StrengthSchedule::new(0.9, 0.7, 2).unwrap();
        let cfg = ProxyConfig { timesteps: vec![2, 3], n_mc: 1, ..ProxyConfig::default() };
        let rng = SeededRng::new(90);
        let a = shadow_training_set(&handle, None, &members, &non, &mech, &sched, &cfg, &rng)
            .unwrap();
        let b = shadow_training_set(&handle, None, &members, &non, &mech, &sched, &cfg, &rng)
            .unwrap();
        assert_eq!(a.len(), 8);
        assert!(a[..4].iter().all(|(_, l)| *l));
        assert!(a[4..].iter().all(|(_, l)| !*l));
        assert_eq!(a, b);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::from_name(m.name()).unwrap(), m);
        }
        assert!(Method::from_name("psychic").is_err());
        let s = AttackScore {
            record_id: 3,
            method: Method::PfamiMet,
            score: 0.4,
            threshold: Some(0.2),
        };
        assert_eq!(s.decision(), Some(true));
        assert_eq!(
            AttackScore { threshold: None, ..s.clone() }.decision(),
            None
        );
    }
}
