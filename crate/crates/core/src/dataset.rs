//! Synthetic datasets and the six-way membership split.
//!
//! Two record families: 2-D ring points (unit circle plus isotropic noise)
//! and small grayscale blob images. Records carry stable integer ids; the
//! split assigns ids to six pairwise-disjoint roles (target / shadow /
//! reference, each with members and non-members) so that every model in an
//! experiment trains and evaluates on its own slice of the pool.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Ring2d,
    BlobImage,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordKind::Ring2d => write!(f, "ring2d"),
            RecordKind::BlobImage => write!(f, "blob-image"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord {
    pub id: u64,
    pub values: Tensor,
}

/// How many records each role receives. Member and non-member counts
/// default to the same value so threshold-style attacks start from a
/// balanced 0.5 accuracy baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub target_member: usize,
    pub target_nonmember: usize,
    pub shadow_member: usize,
    pub shadow_nonmember: usize,
    pub reference_member: usize,
    pub reference_nonmember: usize,
}

impl SplitCounts {
    pub fn uniform(per_role: usize) -> Self {
        SplitCounts {
            target_member: per_role,
            target_nonmember: per_role,
            shadow_member: per_role,
            shadow_nonmember: per_role,
            reference_member: per_role,
            reference_nonmember: per_role,
        }
    }

    pub fn total(&self) -> usize {
        self.target_member
            + self.target_nonmember
            + self.shadow_member
            + self.shadow_nonmember
            + self.reference_member
            + self.reference_nonmember
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub kind: RecordKind,
    /// Side length of blob images; ignored for ring data.
    pub image_side: usize,
    /// Scale of the per-record Gaussian noise: isotropic offsets for ring
    /// points, per-pixel noise for blob images. This is the record-specific
    /// detail a model can only fit by memorizing, the desk stand-in for the
    /// texture real images carry.
    pub noise_scale: f64,
    /// Pool size. Must cover the split counts; any surplus stays unassigned.
    pub total_records: usize,
    pub counts: SplitCounts,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: RecordKind::BlobImage,
            image_side: 12,
            noise_scale: 0.05,
            total_records: SplitCounts::uniform(256).total(),
            counts: SplitCounts::uniform(256),
        }
    }
}

impl DatasetConfig {
    pub fn record_shape(&self) -> Vec<usize> {
        match self.kind {
            RecordKind::Ring2d => vec![2],
            RecordKind::BlobImage => vec![self.image_side, self.image_side],
        }
    }

    pub fn record_dim(&self) -> usize {
        self.record_shape().iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == RecordKind::BlobImage && self.image_side < 4 {
            return Err(Error::InvalidArgument("blob images need side >= 4".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::InvalidArgument("negative noise scale".into()));
        }
        if self.counts.total() > self.total_records {
            return Err(Error::InvalidArgument(format!(
                "split wants {} records but the pool has {}",
                self.counts.total(),
                self.total_records
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    TargetMember,
    TargetNonmember,
    ShadowMember,
    ShadowNonmember,
    ReferenceMember,
    ReferenceNonmember,
}

pub const ALL_ROLES: [SplitRole; 6] = [
    SplitRole::TargetMember,
    SplitRole::TargetNonmember,
    SplitRole::ShadowMember,
    SplitRole::ShadowNonmember,
    SplitRole::ReferenceMember,
    SplitRole::ReferenceNonmember,
];

impl SplitRole {
    pub fn name(self) -> &'static str {
        match self {
            SplitRole::TargetMember => "target_member",
            SplitRole::TargetNonmember => "target_nonmember",
            SplitRole::ShadowMember => "shadow_member",
            SplitRole::ShadowNonmember => "shadow_nonmember",
            SplitRole::ReferenceMember => "reference_member",
            SplitRole::ReferenceNonmember => "reference_nonmember",
        }
    }

    pub fn is_member(self) -> bool {
        matches!(
            self,
            SplitRole::TargetMember | SplitRole::ShadowMember | SplitRole::ReferenceMember
        )
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_ROLES
            .iter()
            .copied()
            .find(|r| r.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split role {name:?}")))
    }
}

/// Record ids per role. Roles are pairwise disjoint by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub target_member: Vec<u64>,
    pub target_nonmember: Vec<u64>,
    pub shadow_member: Vec<u64>,
    pub shadow_nonmember: Vec<u64>,
    pub reference_member: Vec<u64>,
    pub reference_nonmember: Vec<u64>,
}

impl LabeledSplit {
    pub fn role(&self, role: SplitRole) -> &[u64] {
        match role {
            SplitRole::TargetMember => &self.target_member,
            SplitRole::TargetNonmember => &self.target_nonmember,
            SplitRole::ShadowMember => &self.shadow_member,
            SplitRole::ShadowNonmember => &self.shadow_nonmember,
            SplitRole::ReferenceMember => &self.reference_member,
            SplitRole::ReferenceNonmember => &self.reference_nonmember,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        for role in ALL_ROLES {
            for id in self.role(role) {
                if !seen.insert(*id) {
                    return false;
                }
            }
        }
        true
    }
}

/// Points on the unit circle plus isotropic Gaussian noise of scale
/// `noise`. With `noise == 0` every point has norm exactly 1 (up to float).
pub fn generate_ring2d(n: usize, noise: f64, rng: &mut SeededRng) -> Result<Vec<DataRecord>> {
    if noise < 0.0 {
        return Err(Error::InvalidArgument("negative noise scale".into()));
    }
    let mut out = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        let x = theta.cos() + noise * rng.standard_normal();
        let y = theta.sin() + noise * rng.standard_normal();
        out.push(DataRecord { id, values: Tensor::from_vec(vec![x, y]) });
    }
    Ok(out)
}

/// One Gaussian bump inside a blob image.
#[derive(Clone, Copy, Debug)]
pub struct Blob {
    pub amplitude: f64,
    /// Center in pixel coordinates (col, row); may be fractional.
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
}

/// Render a sum of Gaussian bumps into a [side, side] image clamped to
/// [0, 1]. Pixel (r, c) samples the field at coordinates (c, r).
pub fn render_blobs(side: usize, blobs: &[Blob]) -> Tensor {
    let mut img = Tensor::zeros(&[side, side]);
    for r in 0..side {
        for c in 0..side {
            let mut v = 0.0;
            for b in blobs {
                let dx = c as f64 - b.cx;
                let dy = r as f64 - b.cy;
                v += b.amplitude * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
            }
            img.set2(r, c, v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Images of one to three random Gaussian bumps plus per-pixel noise,
/// clamped back to [0, 1]. Centers stay away from the border so
/// perturbations keep most of the mass in frame.
pub fn generate_blob_images(
    n: usize,
    side: usize,
    noise: f64,
    rng: &mut SeededRng,
) -> Result<Vec<DataRecord>> {
    if side < 4 {
        return Err(Error::InvalidArgument("blob images need side >= 4".into()));
    }
    if noise < 0.0 {
        return Err(Error::InvalidArgument("negative noise scale".into()));
    }
    let lo = 1.5;
    let hi = side as f64 - 2.5;
    let mut out = Vec::with_capacity(n);
    for id in 0..n as u64 {
        let count = 1 + rng.below(3);
        let blobs: Vec<Blob> = (0..count)
            .map(|_| Blob {
                amplitude: rng.uniform(0.4, 1.0),
                cx: rng.uniform(lo, hi),
                cy: rng.uniform(lo, hi),
                sigma: rng.uniform(1.0, 2.2),
            })
            .collect();
        let mut img = render_blobs(side, &blobs);
        if noise > 0.0 {
            img = img.map(|v| (v + noise * rng.standard_normal()).clamp(0.0, 1.0));
        }
        out.push(DataRecord { id, values: img });
    }
    Ok(out)
}

pub fn generate_records(cfg: &DatasetConfig, rng: &mut SeededRng) -> Result<Vec<DataRecord>> {
    cfg.validate()?;
    match cfg.kind {
        RecordKind::Ring2d => generate_ring2d(cfg.total_records, cfg.noise_scale, rng),
        RecordKind::BlobImage => {
            generate_blob_images(cfg.total_records, cfg.image_side, cfg.noise_scale, rng)
        }
    }
}

/// Uniformly random disjoint assignment of record ids to the six roles.
/// Records beyond the requested counts are left out of every role.
pub fn split_records(
    records: &[DataRecord],
    counts: &SplitCounts,
    rng: &mut SeededRng,
) -> Result<LabeledSplit> {
    if counts.total() > records.len() {
        return Err(Error::InvalidArgument(format!(
            "split wants {} records but only {} exist",
            counts.total(),
            records.len()
        )));
    }
    let mut ids: Vec<u64> = records.iter().map(|r| r.id).collect();
    rng.shuffle(&mut ids);
    let take = |n: usize, ids: &mut std::vec::IntoIter<u64>| -> Vec<u64> {
        let mut v: Vec<u64> = ids.by_ref().take(n).collect();
        v.sort_unstable();
        v
    };
    let mut it = ids.into_iter();
    Ok(LabeledSplit {
        target_member: take(counts.target_member, &mut it),
        target_nonmember: take(counts.target_nonmember, &mut it),
        shadow_member: take(counts.shadow_member, &mut it),
        shadow_nonmember: take(counts.shadow_nonmember, &mut it),
        reference_member: take(counts.reference_member, &mut it),
        reference_nonmember: take(counts.reference_nonmember, &mut it),
    })
}

/// Records as CSV: a `#`-prefixed metadata comment, then `id,v0,...` rows
/// with values flattened row-major. `meta` is a space-separated `key=value`
/// list; `shape` is added automatically.
pub fn write_records_csv(path: &Path, records: &[DataRecord], meta: &str) -> Result<()> {
    let shape = match records.first() {
        Some(r) => r.values.shape().to_vec(),
        None => vec![0],
    };
    for r in records {
        if r.values.shape() != shape.as_slice() {
            return Err(Error::InvalidArgument("records have mixed shapes".into()));
        }
    }
    let shape_str =
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# fluctlab-records v1 shape={shape_str} {meta}")?;
    let dim: usize = shape.iter().product();
    let header: Vec<String> =
        std::iter::once("id".to_string()).chain((0..dim).map(|i| format!("v{i}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for r in records {
        let mut row = r.id.to_string();
        for v in r.values.data() {
            row.push(',');
            row.push_str(&format!("{v}"));
        }
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_records_csv`]. Returns the records and the metadata
/// comment's `key=value` pairs (including `shape`).
pub fn read_records_csv(path: &Path) -> Result<(Vec<DataRecord>, Vec<(String, String)>)> {
    let file = File::open(path)
        .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(BufReader::new(file));

    // The csv reader skips comments, so pull the metadata line separately.
    let head = std::fs::read_to_string(path)?;
    let meta_line = head
        .lines()
        .find(|l| l.starts_with('#'))
        .ok_or_else(|| Error::Artifact(format!("{}: missing metadata comment", path.display())))?;
    let meta: Vec<(String, String)> = meta_line
        .trim_start_matches('#')
        .split_whitespace()
        .filter_map(|tok| tok.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let shape: Vec<usize> = meta
        .iter()
        .find(|(k, _)| k == "shape")
        .ok_or_else(|| Error::Artifact("records file lacks shape metadata".into()))?
        .1
        .split('x')
        .map(|d| d.parse::<usize>().map_err(|_| Error::Artifact("bad shape metadata".into())))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let id: u64 = row
            .get(0)
            .ok_or_else(|| Error::Artifact("empty csv row".into()))?
            .parse()
            .map_err(|_| Error::Artifact("bad record id".into()))?;
        let values: Vec<f64> = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|_| Error::Artifact("bad record value".into())))
            .collect::<Result<_>>()?;
        records.push(DataRecord { id, values: Tensor::new(shape.clone(), values)? });
    }
    Ok((records, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_ring_points_sit_on_the_unit_circle() {
        let mut rng = SeededRng::new(2);
        let recs = generate_ring2d(50, 0.0, &mut rng).unwrap();
        for r in recs {
            let norm = (r.values.data()[0].powi(2) + r.values.data()[1].powi(2)).sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "norm {norm}");
        }
    }

    #[test]
    fn noisy_ring_radius_concentrates_near_one() {
        let mut rng = SeededRng::new(3);
        let recs = generate_ring2d(4000, 0.05, &mut rng).unwrap();
        let mean_r: f64 = recs
            .iter()
            .map(|r| (r.values.data()[0].powi(2) + r.values.data()[1].powi(2)).sqrt())
            .sum::<f64>()
            / 4000.0;
        assert!((mean_r - 1.0).abs() < 0.01, "mean radius {mean_r}");
    }

    #[test]
    fn narrow_blob_peaks_at_its_center_pixel() {
        let img = render_blobs(12, &[Blob { amplitude: 1.0, cx: 6.0, cy: 6.0, sigma: 0.2 }]);
        let mut best = (0, 0);
        let mut best_v = -1.0;
        for r in 0..12 {
            for c in 0..12 {
                if img.at2(r, c) > best_v {
                    best_v = img.at2(r, c);
                    best = (r, c);
                }
            }
        }
        assert_eq!(best, (6, 6));
    }

    #[test]
    fn zero_amplitude_blob_renders_black() {
        let img = render_blobs(8, &[Blob { amplitude: 0.0, cx: 4.0, cy: 4.0, sigma: 1.0 }]);
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blob_pixels_stay_in_unit_range() {
        let mut rng = SeededRng::new(11);
        let recs = generate_blob_images(64, 12, 0.08, &mut rng).unwrap();
        for r in &recs {
            assert!(r.values.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!(r.values.shape(), &[12, 12]);
        }
    }

    #[test]
    fn split_roles_have_requested_sizes_and_are_disjoint() {
        let mut rng = SeededRng::new(17);
        let cfg = DatasetConfig {
            kind: RecordKind::Ring2d,
            noise_scale: 0.05,
            total_records: 100,
            counts: SplitCounts {
                target_member: 10,
                target_nonmember: 10,
                shadow_member: 20,
                shadow_nonmember: 20,
                reference_member: 15,
                reference_nonmember: 15,
            },
            ..DatasetConfig::default()
        };
        let recs = generate_records(&cfg, &mut rng).unwrap();
        let split = split_records(&recs, &cfg.counts, &mut rng).unwrap();
        for role in ALL_ROLES {
            assert_eq!(split.role(role).len(), match role {
                SplitRole::TargetMember | SplitRole::TargetNonmember => 10,
                SplitRole::ShadowMember | SplitRole::ShadowNonmember => 20,
                _ => 15,
            });
        }
        assert!(split.is_disjoint());
        // 90 of 100 ids assigned, all drawn from the pool.
        let all: Vec<u64> = ALL_ROLES.iter().flat_map(|r| split.role(*r).to_vec()).collect();
        assert_eq!(all.len(), 90);
        assert!(all.iter().all(|id| *id < 100));
    }

    #[test]
    fn split_disjointness_holds_across_seeds() {
        let cfg = DatasetConfig {
            kind: RecordKind::Ring2d,
            total_records: 80,
            counts: SplitCounts::uniform(13),
            ..DatasetConfig::default()
        };
        for seed in 0..100 {
            let mut rng = SeededRng::new(seed);
            let recs = generate_records(&cfg, &mut rng).unwrap();
            let split = split_records(&recs, &cfg.counts, &mut rng).unwrap();
            assert!(split.is_disjoint(), "seed {seed}");
        }
    }

    #[test]
    fn oversubscribed_split_is_rejected() {
        let mut rng = SeededRng::new(23);
        let recs = generate_ring2d(10, 0.0, &mut rng).unwrap();
        let counts = SplitCounts::uniform(2); // wants 12 > 10
        assert!(split_records(&recs, &counts, &mut rng).is_err());
    }

    #[test]
    fn same_seed_reproduces_the_split() {
        let cfg = DatasetConfig::default();
        let build = || {
            let mut rng = SeededRng::new(99);
            let recs = generate_records(&cfg, &mut rng).unwrap();
            split_records(&recs, &cfg.counts, &mut rng).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn records_csv_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        let mut rng = SeededRng::new(31);
        let recs = generate_blob_images(7, 6, 0.05, &mut rng).unwrap();
        write_records_csv(&path, &recs, "config_digest=abc seed=31").unwrap();
        let (back, meta) = read_records_csv(&path).unwrap();
        assert_eq!(back, recs);
        assert!(meta.iter().any(|(k, v)| k == "config_digest" && v == "abc"));
        assert!(meta.iter().any(|(k, v)| k == "seed" && v == "31"));
    }
}
