//! Pipeline stages over one output directory: data generation, per-role
//! model training, attack scoring, metric evaluation, and sweeps.
//!
//! Every artifact embeds the config digest and the global seed. A stage
//! refuses to overwrite a file produced under a different digest and
//! refuses to consume one, so a directory always holds artifacts of a
//! single experiment. Stages are resumable: each one reads what earlier
//! stages persisted and trains missing models on demand.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{
    baseline_mc_fraction, baseline_min_distance, best_threshold, fluctuation,
    fluctuation_matrix, pfami_met_score, pfami_nns_score, record_prob, shadow_training_set,
    train_attack_classifier, AttackClassifier, FluctuationMatrix, Method,
};
use crate::config::ExperimentConfig;
use crate::dataset::{
    generate_records, read_records_csv, split_records, write_records_csv, DataRecord,
    LabeledSplit, RecordKind, SplitRole,
};
use crate::ddpm::train_ddpm;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::model::{
    guard_overwrite, load_series, save_series, CheckpointSeries, GrayBoxHandle, ModelFamily,
};
use crate::perturb::{MechanismKind, PerturbationMechanism, StrengthSchedule};
use crate::proxy::ProxyConfig;
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::vae::train_vae;

const SPLIT_FORMAT_VERSION: u32 = 1;
const METRICS_FORMAT_VERSION: u32 = 1;
const SWEEP_FORMAT_VERSION: u32 = 1;

/// Which of the three trained models a stage refers to. Each role trains
/// on its own member split and monitors eval loss on its nonmember split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Target,
    Shadow,
    Reference,
}

pub const ALL_MODEL_ROLES: [ModelRole; 3] =
    [ModelRole::Target, ModelRole::Shadow, ModelRole::Reference];

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::Target => "target",
            ModelRole::Shadow => "shadow",
            ModelRole::Reference => "reference",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_MODEL_ROLES
            .iter()
            .copied()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model role {name:?}")))
    }

    pub fn member_split(self) -> SplitRole {
        match self {
            ModelRole::Target => SplitRole::TargetMember,
            ModelRole::Shadow => SplitRole::ShadowMember,
            ModelRole::Reference => SplitRole::ReferenceMember,
        }
    }

    pub fn nonmember_split(self) -> SplitRole {
        match self {
            ModelRole::Target => SplitRole::TargetNonmember,
            ModelRole::Shadow => SplitRole::ShadowNonmember,
            ModelRole::Reference => SplitRole::ReferenceNonmember,
        }
    }
}

/// Which checkpoint of a series an attack runs against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointRef {
    EarlyStop,
    Final,
    Epoch(usize),
}

impl CheckpointRef {
    /// Short tag used in artifact file names.
    pub fn tag(self) -> String {
        match self {
            CheckpointRef::EarlyStop => "early".into(),
            CheckpointRef::Final => "final".into(),
            CheckpointRef::Epoch(e) => format!("epoch{e}"),
        }
    }

    /// Accepts "early", "final", "epoch<N>", or a bare epoch number.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "early" => return Ok(CheckpointRef::EarlyStop),
            "final" => return Ok(CheckpointRef::Final),
            _ => {}
        }
        let digits = name.strip_prefix("epoch").unwrap_or(name);
        digits
            .parse::<usize>()
            .map(CheckpointRef::Epoch)
            .map_err(|_| Error::InvalidArgument(format!("unknown checkpoint ref {name:?}")))
    }

    pub fn pick(self, series: &CheckpointSeries) -> Result<&crate::model::Checkpoint> {
        match self {
            CheckpointRef::EarlyStop => Ok(series.early_stop_checkpoint()),
            CheckpointRef::Final => Ok(series.final_checkpoint()),
            CheckpointRef::Epoch(e) => series.at_epoch(e),
        }
    }
}

/// Sweep axes: attack quality as a function of training epoch, neighbor
/// count M, proxy component count N, perturbation mechanism, or the
/// ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epoch,
    NeighborCount,
    ComponentCount,
    Mechanism,
    Ablation,
}

pub const ALL_SWEEP_AXES: [SweepAxis; 5] = [
    SweepAxis::Epoch,
    SweepAxis::NeighborCount,
    SweepAxis::ComponentCount,
    SweepAxis::Mechanism,
    SweepAxis::Ablation,
];

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Epoch => "epoch",
            SweepAxis::NeighborCount => "m",
            SweepAxis::ComponentCount => "n",
            SweepAxis::Mechanism => "mechanism",
            SweepAxis::Ablation => "ablation",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_SWEEP_AXES
            .iter()
            .copied()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown sweep axis {name:?}")))
    }
}

pub fn records_path(out: &Path) -> PathBuf {
    out.join("records.csv")
}

pub fn split_path(out: &Path) -> PathBuf {
    out.join("split.json")
}

pub fn series_path(out: &Path, role: ModelRole) -> PathBuf {
    out.join(format!("model_{}.json", role.name()))
}

pub fn scores_path(out: &Path, tag: &str) -> PathBuf {
    out.join(format!("scores_{tag}.csv"))
}

pub fn metrics_path(out: &Path, tag: &str) -> PathBuf {
    out.join(format!("metrics_{tag}.json"))
}

pub fn roc_path(out: &Path, tag: &str, method: Method) -> PathBuf {
    out.join(format!("roc_{tag}_{}.csv", method.name()))
}

pub fn sweep_path(out: &Path, axis: SweepAxis) -> PathBuf {
    out.join(format!("sweep_{}.json", axis.name()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SplitArtifact {
    format_version: u32,
    config_digest: String,
    seed: u64,
    split: LabeledSplit,
}

/// Generates the record pool and the six-role split, persisting both.
pub fn run_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<DataRecord>, LabeledSplit)> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let digest = cfg.digest();
    let root = SeededRng::new(cfg.seed);
    let records = generate_records(&cfg.dataset, &mut root.labeled_stream("data"))?;
    let split = split_records(&records, &cfg.dataset.counts, &mut root.labeled_stream("split"))?;

    let rec_path = records_path(out);
    guard_overwrite(&rec_path, &digest)?;
    write_records_csv(
        &rec_path,
        &records,
        &format!("config_digest={digest} seed={}", cfg.seed),
    )?;

    let sp_path = split_path(out);
    guard_overwrite(&sp_path, &digest)?;
    let artifact = SplitArtifact {
        format_version: SPLIT_FORMAT_VERSION,
        config_digest: digest,
        seed: cfg.seed,
        split: split.clone(),
    };
    let file = BufWriter::new(File::create(&sp_path)?);
    serde_json::to_writer(file, &artifact)?;
    Ok((records, split))
}

/// Loads the persisted record pool and split, verifying both carry the
/// current config digest and that the split only names existing records.
pub fn load_inputs(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<DataRecord>, LabeledSplit)> {
    let digest = cfg.digest();
    let rec_path = records_path(out);
    if !rec_path.exists() {
        return Err(Error::Artifact(format!(
            "{} not found; run gen-data first",
            rec_path.display()
        )));
    }
    let (records, meta) = read_records_csv(&rec_path)?;
    let found = meta
        .iter()
        .find(|(k, _)| k == "config_digest")
        .map(|(_, v)| v.clone())
        .unwrap_or_default();
    if found != digest {
        return Err(Error::DigestMismatch {
            path: rec_path.display().to_string(),
            expected: digest,
            found,
        });
    }

    let sp_path = split_path(out);
    if !sp_path.exists() {
        return Err(Error::Artifact(format!(
            "{} not found; run gen-data first",
            sp_path.display()
        )));
    }
    let artifact: SplitArtifact = serde_json::from_reader(BufReader::new(File::open(&sp_path)?))?;
    if artifact.format_version != SPLIT_FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "{}: format version {} unsupported",
            sp_path.display(),
            artifact.format_version
        )));
    }
    if artifact.config_digest != digest {
        return Err(Error::DigestMismatch {
            path: sp_path.display().to_string(),
            expected: digest,
            found: artifact.config_digest,
        });
    }
    if !artifact.split.is_disjoint() {
        return Err(Error::Artifact(format!("{}: split roles overlap", sp_path.display())));
    }
    let by_id: HashMap<u64, ()> = records.iter().map(|r| (r.id, ())).collect();
    for role in crate::dataset::ALL_ROLES {
        for id in artifact.split.role(role) {
            if !by_id.contains_key(id) {
                return Err(Error::Artifact(format!(
                    "{}: split names unknown record {id}",
                    sp_path.display()
                )));
            }
        }
    }
    Ok((records, artifact.split))
}

fn collect_role(records: &[DataRecord], split: &LabeledSplit, role: SplitRole) -> Vec<DataRecord> {
    let by_id: HashMap<u64, &DataRecord> = records.iter().map(|r| (r.id, r)).collect();
    split.role(role).iter().map(|id| by_id[id].clone()).collect()
}

/// Trains one role's model on its member split, monitoring eval loss on
/// the same role's nonmember split, and persists the checkpoint series.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, role: ModelRole) -> Result<CheckpointSeries> {
    cfg.validate()?;
    let (records, split) = load_inputs(cfg, out)?;
    let members = collect_role(&records, &split, role.member_split());
    let eval = collect_role(&records, &split, role.nonmember_split());
    let rng = SeededRng::new(cfg.seed).labeled_stream(role.name());
    let series = match cfg.model.family {
        ModelFamily::Ddpm => train_ddpm(&members, &eval, &cfg.model, &rng)?,
        ModelFamily::Vae => train_vae(&members, &eval, &cfg.model, &rng)?,
    };
    save_series(&series_path(out, role), &series, &cfg.digest(), cfg.seed, role.name())?;
    Ok(series)
}

/// Loads a role's persisted series or trains it if absent.
pub fn ensure_series(cfg: &ExperimentConfig, out: &Path, role: ModelRole) -> Result<CheckpointSeries> {
    let path = series_path(out, role);
    if !path.exists() {
        return run_train(cfg, out, role);
    }
    let artifact = load_series(&path)?;
    let digest = cfg.digest();
    if artifact.config_digest != digest {
        return Err(Error::DigestMismatch {
            path: path.display().to_string(),
            expected: digest,
            found: artifact.config_digest,
        });
    }
    if artifact.role != role.name() {
        return Err(Error::Artifact(format!(
            "{}: holds a {} model, expected {}",
            path.display(),
            artifact.role,
            role.name()
        )));
    }
    if artifact.series.family != cfg.model.family {
        return Err(Error::Artifact(format!(
            "{}: family {} does not match config",
            path.display(),
            artifact.series.family
        )));
    }
    Ok(artifact.series)
}

/// One scored record under one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub record_id: u64,
    pub member: bool,
    pub method: Method,
    pub score: f64,
    /// Shadow-fitted decision threshold, present only when the shadow
    /// pipeline ran (pfami methods with pfami_nns requested).
    pub threshold: Option<f64>,
}

/// Parsed scores file: header metadata plus rows in written order.
#[derive(Clone, Debug)]
pub struct ScoresFile {
    pub config_digest: String,
    pub seed: u64,
    pub checkpoint: String,
    pub epoch: usize,
    pub rows: Vec<ScoreRow>,
}

/// Everything needed to score audited records against one checkpoint.
struct ScoringContext<'a> {
    handle: &'a GrayBoxHandle,
    reference: Option<&'a GrayBoxHandle>,
    mech: &'a PerturbationMechanism,
    met_schedule: &'a StrengthSchedule,
    full_schedule: &'a StrengthSchedule,
    proxy: &'a ProxyConfig,
    classifier: Option<&'a AttackClassifier>,
    synthetic: Option<&'a [Tensor]>,
    mc_radius: f64,
    rng: &'a SeededRng,
}

fn threshold_for(thresholds: &[(Method, f64)], method: Method) -> Option<f64> {
    thresholds.iter().find(|(m, _)| *m == method).map(|(_, t)| *t)
}

/// Scores every record under every requested method. Rows come out
/// method-major in `Method::ALL` order, records in input order. Each
/// record draws from its own id-keyed stream, so scores are independent
/// of record order and of which other methods run alongside.
fn score_records(
    ctx: &ScoringContext<'_>,
    records: &[(DataRecord, bool)],
    methods: &[Method],
    thresholds: &[(Method, f64)],
) -> Result<Vec<ScoreRow>> {
    let methods = ordered_methods(methods)?;
    let per_record: Vec<Vec<(Method, f64)>> = records
        .par_iter()
        .map(|(rec, _)| {
            let rec_rng = ctx.rng.stream(rec.id);
            let mut scores = Vec::with_capacity(methods.len());
            for &method in &methods {
                let score = match method {
                    Method::PfamiMet => {
                        let m = fluctuation_matrix(
                            ctx.handle,
                            ctx.reference,
                            rec,
                            ctx.mech,
                            ctx.met_schedule,
                            ctx.proxy,
                            &rec_rng,
                        )?;
                        pfami_met_score(&m)?
                    }
                    Method::PfamiNns => {
                        let classifier = ctx.classifier.ok_or_else(|| {
                            Error::InvalidArgument("pfami_nns needs a trained classifier".into())
                        })?;
                        let m = fluctuation_matrix(
                            ctx.handle,
                            ctx.reference,
                            rec,
                            ctx.mech,
                            ctx.full_schedule,
                            ctx.proxy,
                            &rec_rng,
                        )?;
                        pfami_nns_score(classifier, &m)?
                    }
                    Method::ProbThreshold => {
                        record_prob(ctx.handle, ctx.reference, &rec.values, ctx.proxy, &rec_rng)?
                            .value
                    }
                    Method::MinDistance => {
                        let synth = ctx.synthetic.ok_or_else(|| {
                            Error::InvalidArgument("min_distance needs synthetic samples".into())
                        })?;
                        baseline_min_distance(&rec.values, synth)?
                    }
                    Method::McFraction => {
                        let synth = ctx.synthetic.ok_or_else(|| {
                            Error::InvalidArgument("mc_fraction needs synthetic samples".into())
                        })?;
                        baseline_mc_fraction(&rec.values, synth, ctx.mc_radius)?
                    }
                };
                if !score.is_finite() {
                    return Err(Error::Training(format!(
                        "{} produced a non-finite score on record {}",
                        method.name(),
                        rec.id
                    )));
                }
                scores.push((method, score));
            }
            Ok(scores)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(methods.len() * records.len());
    for &method in &methods {
        for ((rec, member), scores) in records.iter().zip(&per_record) {
            let score = scores.iter().find(|(m, _)| *m == method).expect("scored above").1;
            rows.push(ScoreRow {
                record_id: rec.id,
                member: *member,
                method,
                score,
                threshold: threshold_for(thresholds, method),
            });
        }
    }
    Ok(rows)
}

/// Requested methods deduplicated into `Method::ALL` order.
pub fn ordered_methods(requested: &[Method]) -> Result<Vec<Method>> {
    if requested.is_empty() {
        return Err(Error::InvalidArgument("no attack methods requested".into()));
    }
    Ok(Method::ALL.iter().copied().filter(|m| requested.contains(m)).collect())
}

/// Draws synthetic samples in parallel, one id-keyed stream per sample.
pub fn synthesize_parallel(handle: &GrayBoxHandle, n: usize, rng: &SeededRng) -> Result<Vec<Tensor>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.stream(i as u64);
            Ok(handle.synthesize(1, &mut r)?.pop().expect("one sample"))
        })
        .collect()
}

/// Output of one attack stage: scored rows plus the resolved epoch.
#[derive(Clone, Debug)]
pub struct AttackOutput {
    pub rows: Vec<ScoreRow>,
    pub epoch: usize,
    pub early_stop_epoch: usize,
}

/// Prepared models and attack inputs shared by run_attack and the sweeps.
struct PreparedAttack {
    target: CheckpointSeries,
    reference: Option<CheckpointSeries>,
    audited: Vec<(DataRecord, bool)>,
    mech: PerturbationMechanism,
}

fn prepare_attack(cfg: &ExperimentConfig, out: &Path) -> Result<PreparedAttack> {
    let (records, split) = load_inputs(cfg, out)?;
    let target = ensure_series(cfg, out, ModelRole::Target)?;
    let reference = if cfg.proxy.calibrate {
        Some(ensure_series(cfg, out, ModelRole::Reference)?)
    } else {
        None
    };
    let members = collect_role(&records, &split, SplitRole::TargetMember);
    let nonmembers = collect_role(&records, &split, SplitRole::TargetNonmember);
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidArgument("attack needs member and nonmember records".into()));
    }
    let mut audited: Vec<(DataRecord, bool)> = members.into_iter().map(|r| (r, true)).collect();
    audited.extend(nonmembers.into_iter().map(|r| (r, false)));
    let anchor: Vec<DataRecord> = audited.iter().map(|(r, _)| r.clone()).collect();
    let mech = PerturbationMechanism::resolve(
        cfg.perturbation.mechanism,
        cfg.perturbation.rotation_max_degrees,
        &anchor,
    )?;
    Ok(PreparedAttack { target, reference, audited, mech })
}

/// Trains the attack classifier on shadow-model fluctuation matrices and
/// fits shadow thresholds for both pfami scores. The shadow model is read
/// at the same checkpoint ref as the target.
fn shadow_classifier(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: CheckpointRef,
    reference: Option<&GrayBoxHandle>,
    mech: &PerturbationMechanism,
) -> Result<(AttackClassifier, Vec<(Method, f64)>)> {
    let (records, split) = load_inputs(cfg, out)?;
    let series = ensure_series(cfg, out, ModelRole::Shadow)?;
    let ckpt = checkpoint.pick(&series)?;
    let handle = GrayBoxHandle::new(ckpt.model.clone());

    let per_class = (cfg.attack.shadow_budget / 2).max(1);
    let members = collect_role(&records, &split, SplitRole::ShadowMember);
    let nonmembers = collect_role(&records, &split, SplitRole::ShadowNonmember);
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InvalidArgument("shadow split has an empty class".into()));
    }
    let members = &members[..per_class.min(members.len())];
    let nonmembers = &nonmembers[..per_class.min(nonmembers.len())];

    let full_schedule = cfg.perturbation.schedule()?;
    let met_schedule = cfg.perturbation.met_schedule()?;
    let shadow_rng = SeededRng::new(cfg.seed).labeled_stream("shadow-attack");
    let samples = shadow_training_set(
        &handle,
        reference,
        members,
        nonmembers,
        mech,
        &full_schedule,
        &cfg.proxy,
        &shadow_rng,
    )?;
    let classifier = train_attack_classifier(
        &samples,
        &cfg.attack.classifier,
        &SeededRng::new(cfg.seed).labeled_stream("classifier"),
    )?;

    let labels: Vec<bool> = samples.iter().map(|(_, l)| *l).collect();
    let nns_scores: Vec<f64> = samples
        .iter()
        .map(|(m, _)| classifier.score(m))
        .collect::<Result<_>>()?;

    let met_samples = shadow_training_set(
        &handle,
        reference,
        members,
        nonmembers,
        mech,
        &met_schedule,
        &cfg.proxy,
        &shadow_rng,
    )?;
    let met_scores: Vec<f64> = met_samples
        .iter()
        .map(|(m, _)| pfami_met_score(m))
        .collect::<Result<_>>()?;

    let thresholds = vec![
        (Method::PfamiMet, best_threshold(&met_scores, &labels)?),
        (Method::PfamiNns, best_threshold(&nns_scores, &labels)?),
    ];
    Ok((classifier, thresholds))
}

/// Scores the target's member and nonmember records under the requested
/// methods at one checkpoint and writes the scores CSV.
pub fn run_attack(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: CheckpointRef,
    methods: &[Method],
) -> Result<AttackOutput> {
    cfg.validate()?;
    let methods = ordered_methods(methods)?;
    let prep = prepare_attack(cfg, out)?;
    let ckpt = checkpoint.pick(&prep.target)?;
    let handle = GrayBoxHandle::new(ckpt.model.clone());
    let reference = match &prep.reference {
        Some(series) => Some(GrayBoxHandle::new(checkpoint.pick(series)?.model.clone())),
        None => None,
    };

    let (classifier, thresholds) = if methods.contains(&Method::PfamiNns) {
        let (c, t) = shadow_classifier(cfg, out, checkpoint, reference.as_ref(), &prep.mech)?;
        (Some(c), t)
    } else {
        (None, Vec::new())
    };

    let synthetic = if methods.iter().any(|m| matches!(m, Method::MinDistance | Method::McFraction))
    {
        Some(synthesize_parallel(
            &handle,
            cfg.attack.synthetic_samples,
            &SeededRng::new(cfg.seed).labeled_stream("synthesis"),
        )?)
    } else {
        None
    };

    let attack_rng = SeededRng::new(cfg.seed).labeled_stream("attack");
    let ctx = ScoringContext {
        handle: &handle,
        reference: reference.as_ref(),
        mech: &prep.mech,
        met_schedule: &cfg.perturbation.met_schedule()?,
        full_schedule: &cfg.perturbation.schedule()?,
        proxy: &cfg.proxy,
        classifier: classifier.as_ref(),
        synthetic: synthetic.as_deref(),
        mc_radius: cfg.attack.mc_radius,
        rng: &attack_rng,
    };
    let rows = score_records(&ctx, &prep.audited, &methods, &thresholds)?;

    let output = AttackOutput {
        rows,
        epoch: ckpt.epoch,
        early_stop_epoch: prep.target.early_stop_epoch,
    };
    write_scores_csv(
        &scores_path(out, &checkpoint.tag()),
        cfg,
        &checkpoint.tag(),
        output.epoch,
        &output.rows,
    )?;
    Ok(output)
}

fn fmt_float(x: f64) -> String {
    serde_json::to_string(&x).expect("finite float")
}

pub fn write_scores_csv(
    path: &Path,
    cfg: &ExperimentConfig,
    tag: &str,
    epoch: usize,
    rows: &[ScoreRow],
) -> Result<()> {
    let digest = cfg.digest();
    guard_overwrite(path, &digest)?;
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(
        file,
        "# fluctlab-scores v1 config_digest={digest} seed={} checkpoint={tag} epoch={epoch}",
        cfg.seed
    )?;
    writeln!(file, "record_id,member,method,score,threshold")?;
    for row in rows {
        let threshold = row.threshold.map(fmt_float).unwrap_or_default();
        writeln!(
            file,
            "{},{},{},{},{}",
            row.record_id,
            row.member as u8,
            row.method.name(),
            fmt_float(row.score),
            threshold
        )?;
    }
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<ScoresFile> {
    let file = File::open(path)
        .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Artifact(format!("{}: empty file", path.display())))??;
    let bad = |msg: &str| Error::Artifact(format!("{}: {msg}", path.display()));
    let mut tokens = header.trim_start_matches('#').split_whitespace();
    if tokens.next() != Some("fluctlab-scores") || tokens.next() != Some("v1") {
        return Err(bad("not a fluctlab-scores v1 file"));
    }
    let mut meta: HashMap<String, String> = HashMap::new();
    for t in tokens {
        if let Some((k, v)) = t.split_once('=') {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let config_digest = meta.get("config_digest").cloned().ok_or_else(|| bad("missing config_digest"))?;
    let seed: u64 = meta
        .get("seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("missing seed"))?;
    let checkpoint = meta.get("checkpoint").cloned().ok_or_else(|| bad("missing checkpoint"))?;
    let epoch: usize = meta
        .get("epoch")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("missing epoch"))?;

    let columns = lines.next().ok_or_else(|| bad("missing column header"))??;
    if columns.trim() != "record_id,member,method,score,threshold" {
        return Err(bad("unexpected column header"));
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(&format!("bad row {line:?}")));
        }
        let record_id: u64 = fields[0].parse().map_err(|_| bad("bad record id"))?;
        let member = match fields[1] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("bad member flag")),
        };
        let method = Method::from_name(fields[2])?;
        let score: f64 = fields[3].parse().map_err(|_| bad("bad score"))?;
        let threshold = if fields[4].is_empty() {
            None
        } else {
            Some(fields[4].parse().map_err(|_| bad("bad threshold"))?)
        };
        rows.push(ScoreRow { record_id, member, method, score, threshold });
    }
    Ok(ScoresFile { config_digest, seed, checkpoint, epoch, rows })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub checkpoint: String,
    pub epoch: usize,
    pub reports: Vec<MetricReport>,
}

/// Per-method metric reports from rows, in `Method::ALL` order.
pub fn reports_from_rows(rows: &[ScoreRow], fpr_cap: f64) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::new();
    for method in Method::ALL {
        let scores: Vec<f64> =
            rows.iter().filter(|r| r.method == method).map(|r| r.score).collect();
        if scores.is_empty() {
            continue;
        }
        let labels: Vec<bool> =
            rows.iter().filter(|r| r.method == method).map(|r| r.member).collect();
        reports.push(MetricReport::from_scores(method.name(), &scores, &labels, fpr_cap)?);
    }
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no score rows to evaluate".into()));
    }
    Ok(reports)
}

/// Evaluates a scores CSV into per-method metric reports, persisting the
/// metrics JSON and one ROC CSV per method.
pub fn run_eval(cfg: &ExperimentConfig, out: &Path, scores: &Path) -> Result<Vec<MetricReport>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let digest = cfg.digest();
    let file = read_scores_csv(scores)?;
    if file.config_digest != digest {
        return Err(Error::DigestMismatch {
            path: scores.display().to_string(),
            expected: digest,
            found: file.config_digest,
        });
    }
    let reports = reports_from_rows(&file.rows, cfg.eval.fpr_cap)?;

    let artifact = MetricsArtifact {
        format_version: METRICS_FORMAT_VERSION,
        config_digest: digest.clone(),
        seed: cfg.seed,
        checkpoint: file.checkpoint.clone(),
        epoch: file.epoch,
        reports: reports.clone(),
    };
    let m_path = metrics_path(out, &file.checkpoint);
    guard_overwrite(&m_path, &digest)?;
    serde_json::to_writer(BufWriter::new(File::create(&m_path)?), &artifact)?;

    for report in &reports {
        let method = Method::from_name(&report.method)?;
        let r_path = roc_path(out, &file.checkpoint, method);
        guard_overwrite(&r_path, &digest)?;
        let mut f = BufWriter::new(File::create(&r_path)?);
        writeln!(
            f,
            "# fluctlab-roc v1 config_digest={digest} seed={} checkpoint={} method={}",
            cfg.seed, file.checkpoint, report.method
        )?;
        writeln!(f, "fpr,tpr")?;
        for (fpr, tpr) in &report.roc {
            writeln!(f, "{},{}", fmt_float(*fpr), fmt_float(*tpr))?;
        }
    }
    Ok(reports)
}

/// One sweep point: a labeled attack configuration and its reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPoint {
    pub label: String,
    /// Numeric position on the axis when one exists (epoch, M, N).
    pub value: Option<f64>,
    pub reports: Vec<MetricReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub axis: SweepAxis,
    /// Target model's early-stop marker, for reading the epoch axis.
    pub early_stop_epoch: Option<usize>,
    pub points: Vec<SweepPoint>,
}

/// Fluctuation matrix whose proxy values are noise: every probability
/// evaluation is replaced by a standard normal draw. Keeps the
/// fluctuation arithmetic and matrix shape of the real pipeline.
fn random_proxy_score(rec: &DataRecord, rows: usize, cols: usize, rng: &SeededRng) -> Result<f64> {
    let mut r = rng.stream(rec.id).labeled_stream("random-proxy");
    let p_x = r.normal_vec(cols);
    let mut entries = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        for k in 0..cols {
            let p_n = r.standard_normal();
            entries.push(fluctuation(p_x[k], p_n));
        }
    }
    pfami_met_score(&FluctuationMatrix::new(rows, cols, entries)?)
}

fn proxy_arity(cfg: &ExperimentConfig) -> usize {
    match cfg.model.family {
        ModelFamily::Ddpm => cfg.proxy.timesteps.len(),
        ModelFamily::Vae => cfg.proxy.vae_queries,
    }
}

/// Runs one sweep axis and persists the sweep artifact. All points are
/// computed in memory against the base config digest; only the epoch
/// axis also leaves per-epoch score CSVs behind.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, axis: SweepAxis) -> Result<SweepArtifact> {
    cfg.validate()?;
    let prep = prepare_attack(cfg, out)?;
    let fpr_cap = cfg.eval.fpr_cap;
    let early_stop = prep.target.early_stop_epoch;
    let attack_rng = SeededRng::new(cfg.seed).labeled_stream("attack");

    let reference_at = |ckpt: CheckpointRef| -> Result<Option<GrayBoxHandle>> {
        match &prep.reference {
            Some(series) => Ok(Some(GrayBoxHandle::new(ckpt.pick(series)?.model.clone()))),
            None => Ok(None),
        }
    };

    // Scores one point with overridable schedules and proxy settings.
    let point_rows = |ckpt: CheckpointRef,
                      methods: &[Method],
                      mech: &PerturbationMechanism,
                      met_schedule: &StrengthSchedule,
                      proxy: &ProxyConfig,
                      classifier: Option<&AttackClassifier>|
     -> Result<Vec<ScoreRow>> {
        let handle = GrayBoxHandle::new(ckpt.pick(&prep.target)?.model.clone());
        let reference = reference_at(ckpt)?;
        let ctx = ScoringContext {
            handle: &handle,
            reference: reference.as_ref(),
            mech,
            met_schedule,
            full_schedule: &cfg.perturbation.schedule()?,
            proxy,
            classifier,
            synthetic: None,
            mc_radius: cfg.attack.mc_radius,
            rng: &attack_rng,
        };
        score_records(&ctx, &prep.audited, methods, &[])
    };

    let met_schedule = cfg.perturbation.met_schedule()?;
    let mut points = Vec::new();
    match axis {
        SweepAxis::Epoch => {
            for epoch in prep.target.retained() {
                let output = run_attack(
                    cfg,
                    out,
                    CheckpointRef::Epoch(epoch),
                    &[Method::PfamiMet, Method::ProbThreshold],
                )?;
                points.push(SweepPoint {
                    label: format!("epoch {epoch}"),
                    value: Some(epoch as f64),
                    reports: reports_from_rows(&output.rows, fpr_cap)?,
                });
            }
        }
        SweepAxis::NeighborCount => {
            for m in [1usize, 2, 4, 7, 10] {
                let schedule = StrengthSchedule::new(
                    cfg.perturbation.lambda_start,
                    cfg.perturbation.lambda_end,
                    m,
                )?;
                let rows = point_rows(
                    CheckpointRef::EarlyStop,
                    &[Method::PfamiMet],
                    &prep.mech,
                    &schedule,
                    &cfg.proxy,
                    None,
                )?;
                points.push(SweepPoint {
                    label: format!("m {m}"),
                    value: Some(m as f64),
                    reports: reports_from_rows(&rows, fpr_cap)?,
                });
            }
        }
        SweepAxis::ComponentCount => {
            let full = proxy_arity(cfg);
            let mut grid: Vec<usize> =
                [1usize, 2, 4, 7].iter().copied().filter(|&n| n < full).collect();
            grid.push(full);
            for n in grid {
                let mut proxy = cfg.proxy.clone();
                match cfg.model.family {
                    ModelFamily::Ddpm => proxy.timesteps.truncate(n),
                    ModelFamily::Vae => proxy.vae_queries = n,
                }
                let rows = point_rows(
                    CheckpointRef::EarlyStop,
                    &[Method::PfamiMet],
                    &prep.mech,
                    &met_schedule,
                    &proxy,
                    None,
                )?;
                points.push(SweepPoint {
                    label: format!("n {n}"),
                    value: Some(n as f64),
                    reports: reports_from_rows(&rows, fpr_cap)?,
                });
            }
        }
        SweepAxis::Mechanism => {
            let anchor: Vec<DataRecord> = prep.audited.iter().map(|(r, _)| r.clone()).collect();
            let image_data = cfg.dataset.kind == RecordKind::BlobImage;
            for kind in MechanismKind::ALL {
                if kind.is_image() != image_data {
                    continue;
                }
                let mech = PerturbationMechanism::resolve(
                    kind,
                    cfg.perturbation.rotation_max_degrees,
                    &anchor,
                )?;
                let rows = point_rows(
                    CheckpointRef::EarlyStop,
                    &[Method::PfamiMet],
                    &mech,
                    &met_schedule,
                    &cfg.proxy,
                    None,
                )?;
                points.push(SweepPoint {
                    label: kind.name().to_string(),
                    value: None,
                    reports: reports_from_rows(&rows, fpr_cap)?,
                });
            }
        }
        SweepAxis::Ablation => {
            let ckpt = CheckpointRef::EarlyStop;
            let reference = reference_at(ckpt)?;
            let (classifier, _) =
                shadow_classifier(cfg, out, ckpt, reference.as_ref(), &prep.mech)?;

            let met_rows = point_rows(
                ckpt,
                &[Method::PfamiMet],
                &prep.mech,
                &met_schedule,
                &cfg.proxy,
                None,
            )?;
            points.push(SweepPoint {
                label: "pfami_met".into(),
                value: None,
                reports: reports_from_rows(&met_rows, fpr_cap)?,
            });

            let nns_rows = point_rows(
                ckpt,
                &[Method::PfamiNns],
                &prep.mech,
                &met_schedule,
                &cfg.proxy,
                Some(&classifier),
            )?;
            points.push(SweepPoint {
                label: "pfami_nns".into(),
                value: None,
                reports: reports_from_rows(&nns_rows, fpr_cap)?,
            });

            // Proxy replaced by noise; everything else as in pfami_met.
            let arity = proxy_arity(cfg);
            let met_neighbors = met_schedule.values().len();
            let random_rows: Vec<ScoreRow> = prep
                .audited
                .iter()
                .map(|(rec, member)| {
                    Ok(ScoreRow {
                        record_id: rec.id,
                        member: *member,
                        method: Method::PfamiMet,
                        score: random_proxy_score(rec, met_neighbors, arity, &attack_rng)?,
                        threshold: None,
                    })
                })
                .collect::<Result<_>>()?;
            points.push(SweepPoint {
                label: "random_proxy".into(),
                value: None,
                reports: reports_from_rows(&random_rows, fpr_cap)?,
            });

            // Neighbor set degenerates to the record itself.
            let identity = StrengthSchedule::new(1.0, 1.0, 1)?;
            let zero_rows = point_rows(
                ckpt,
                &[Method::PfamiMet],
                &prep.mech,
                &identity,
                &cfg.proxy,
                None,
            )?;
            points.push(SweepPoint {
                label: "zero_perturbation".into(),
                value: None,
                reports: reports_from_rows(&zero_rows, fpr_cap)?,
            });

            // Classifier replaced by the grand mean over the same
            // full-schedule matrix it would have seen.
            let mean_rows = point_rows(
                ckpt,
                &[Method::PfamiMet],
                &prep.mech,
                &cfg.perturbation.schedule()?,
                &cfg.proxy,
                None,
            )?;
            points.push(SweepPoint {
                label: "mean_instead_of_classifier".into(),
                value: None,
                reports: reports_from_rows(&mean_rows, fpr_cap)?,
            });
        }
    }

    let artifact = SweepArtifact {
        format_version: SWEEP_FORMAT_VERSION,
        config_digest: cfg.digest(),
        seed: cfg.seed,
        axis,
        early_stop_epoch: Some(early_stop),
        points,
    };
    let path = sweep_path(out, axis);
    guard_overwrite(&path, &artifact.config_digest)?;
    serde_json::to_writer(BufWriter::new(File::create(&path)?), &artifact)?;
    Ok(artifact)
}

/// Convenience wrapper: data, training on demand, attack, eval.
pub fn run_full_pipeline(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: CheckpointRef,
    methods: &[Method],
) -> Result<(AttackOutput, Vec<MetricReport>)> {
    if !records_path(out).exists() {
        run_gen_data(cfg, out)?;
    }
    let output = run_attack(cfg, out, checkpoint, methods)?;
    let reports = run_eval(cfg, out, &scores_path(out, &checkpoint.tag()))?;
    Ok((output, reports))
}
