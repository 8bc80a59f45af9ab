//! Neighbor-record generation: semantic perturbations applied at a
//! sequence of strengths. Strength 1 is the identity for every mechanism,
//! and weaker lambdas move the record further from the original.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::DataRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mechanism names as they appear in configs and CLI flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    Crop,
    Rotation,
    Downsample,
    Brightness,
    Contrast,
    ShrinkToCentroid,
    AdditiveDirection,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 7] = [
        MechanismKind::Crop,
        MechanismKind::Rotation,
        MechanismKind::Downsample,
        MechanismKind::Brightness,
        MechanismKind::Contrast,
        MechanismKind::ShrinkToCentroid,
        MechanismKind::AdditiveDirection,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MechanismKind::Crop => "crop",
            MechanismKind::Rotation => "rotation",
            MechanismKind::Downsample => "downsample",
            MechanismKind::Brightness => "brightness",
            MechanismKind::Contrast => "contrast",
            MechanismKind::ShrinkToCentroid => "shrink-to-centroid",
            MechanismKind::AdditiveDirection => "additive-direction",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown perturbation {name:?}")))
    }

    pub fn is_image(&self) -> bool {
        !matches!(self, MechanismKind::ShrinkToCentroid | MechanismKind::AdditiveDirection)
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A concrete perturbation. Image mechanisms expect 2-D records; the
/// vector mechanisms expect 1-D records and carry their fixed anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PerturbationMechanism {
    /// Zoom into the central lambda-fraction and rescale back.
    Crop,
    /// Rotate by (1 - lambda) * max_degrees about the image center.
    Rotation { max_degrees: f64 },
    /// Downscale to a lambda-fraction side length, then upscale.
    Downsample,
    /// Scale pixel values by lambda, clamped to [0, 1].
    Brightness,
    /// Blend pixel values toward the image mean with weight lambda.
    Contrast,
    /// Move the vector toward a fixed centroid: c + lambda * (x - c).
    ShrinkToCentroid { centroid: Tensor },
    /// Shift along a fixed unit direction: x + (1 - lambda) * u.
    AdditiveDirection { direction: Tensor },
}

impl PerturbationMechanism {
    pub fn kind(&self) -> MechanismKind {
        match self {
            PerturbationMechanism::Crop => MechanismKind::Crop,
            PerturbationMechanism::Rotation { .. } => MechanismKind::Rotation,
            PerturbationMechanism::Downsample => MechanismKind::Downsample,
            PerturbationMechanism::Brightness => MechanismKind::Brightness,
            PerturbationMechanism::Contrast => MechanismKind::Contrast,
            PerturbationMechanism::ShrinkToCentroid { .. } => MechanismKind::ShrinkToCentroid,
            PerturbationMechanism::AdditiveDirection { .. } => MechanismKind::AdditiveDirection,
        }
    }

    /// Build a mechanism from its config-level name. The centroid for
    /// shrink-to-centroid is the mean of the audited records; the additive
    /// direction is the normalized all-ones vector.
    pub fn resolve(kind: MechanismKind, max_degrees: f64, records: &[DataRecord]) -> Result<Self> {
        Ok(match kind {
            MechanismKind::Crop => PerturbationMechanism::Crop,
            MechanismKind::Rotation => {
                if max_degrees <= 0.0 || !max_degrees.is_finite() {
                    return Err(Error::InvalidArgument("rotation wants a positive angle".into()));
                }
                PerturbationMechanism::Rotation { max_degrees }
            }
            MechanismKind::Downsample => PerturbationMechanism::Downsample,
            MechanismKind::Brightness => PerturbationMechanism::Brightness,
            MechanismKind::Contrast => PerturbationMechanism::Contrast,
            MechanismKind::ShrinkToCentroid => {
                let first = records
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("centroid needs records".into()))?;
                let mut c = Tensor::zeros(first.values.shape());
                for rec in records {
                    c = c.add(&rec.values)?;
                }
                PerturbationMechanism::ShrinkToCentroid {
                    centroid: c.scale(1.0 / records.len() as f64),
                }
            }
            MechanismKind::AdditiveDirection => {
                let first = records
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("direction needs records".into()))?;
                let d = first.values.len() as f64;
                PerturbationMechanism::AdditiveDirection {
                    direction: Tensor::filled(first.values.shape(), 1.0 / d.sqrt()),
                }
            }
        })
    }
}

/// Equally spaced strengths from `lambda_start` to `lambda_end` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrengthSchedule {
    pub lambda_start: f64,
    pub lambda_end: f64,
    pub count: usize,
}

impl StrengthSchedule {
    pub fn new(lambda_start: f64, lambda_end: f64, count: usize) -> Result<Self> {
        let s = StrengthSchedule { lambda_start, lambda_end, count };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("strength schedule wants count >= 1".into()));
        }
        if self.count > 1 && self.lambda_start == self.lambda_end {
            return Err(Error::InvalidArgument(
                "multi-point schedule wants distinct endpoints".into(),
            ));
        }
        for l in [self.lambda_start, self.lambda_end] {
            if !(l > 0.0 && l <= 1.0) {
                return Err(Error::InvalidArgument(format!("strength {l} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lambda_start];
        }
        let step = (self.lambda_end - self.lambda_start) / (self.count - 1) as f64;
        (0..self.count).map(|j| self.lambda_start + step * j as f64).collect()
    }
}

fn check_strength(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::InvalidArgument(format!("strength {lambda} outside (0, 1]")));
    }
    Ok(())
}

fn image_dims(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::InvalidArgument(format!(
            "image perturbation wants a 2-D record, got shape {other:?}"
        ))),
    }
}

fn vector_len(x: &Tensor) -> Result<usize> {
    match x.shape() {
        [n] => Ok(*n),
        other => Err(Error::InvalidArgument(format!(
            "vector perturbation wants a 1-D record, got shape {other:?}"
        ))),
    }
}

/// Bilinear tap at fractional coordinates. Out-of-range taps either clamp
/// to the border or contribute zero.
fn bilinear(x: &Tensor, rows: usize, cols: usize, sr: f64, sc: f64, zero_fill: bool) -> f64 {
    let r0 = sr.floor();
    let c0 = sc.floor();
    let fr = sr - r0;
    let fc = sc - c0;
    let mut acc = 0.0;
    for (dr, wr) in [(0i64, 1.0 - fr), (1, fr)] {
        for (dc, wc) in [(0i64, 1.0 - fc), (1, fc)] {
            let w = wr * wc;
            if w == 0.0 {
                continue;
            }
            let (ri, ci) = (r0 as i64 + dr, c0 as i64 + dc);
            let inside = ri >= 0 && ci >= 0 && (ri as usize) < rows && (ci as usize) < cols;
            let v = if inside {
                x.at2(ri as usize, ci as usize)
            } else if zero_fill {
                0.0
            } else {
                let rc = (ri.clamp(0, rows as i64 - 1)) as usize;
                let cc = (ci.clamp(0, cols as i64 - 1)) as usize;
                x.at2(rc, cc)
            };
            acc += w * v;
        }
    }
    acc
}

fn resample(
    x: &Tensor,
    out_rows: usize,
    out_cols: usize,
    zero_fill: bool,
    map: impl Fn(f64, f64) -> (f64, f64),
) -> Result<Tensor> {
    let (rows, cols) = image_dims(x)?;
    let mut out = Tensor::zeros(&[out_rows, out_cols]);
    for r in 0..out_rows {
        for c in 0..out_cols {
            let (sr, sc) = map(r as f64, c as f64);
            out.set2(r, c, bilinear(x, rows, cols, sr, sc, zero_fill));
        }
    }
    Ok(out)
}

/// Resize with pixel-center alignment; identity when sizes match.
fn resize(x: &Tensor, out_rows: usize, out_cols: usize) -> Result<Tensor> {
    let (rows, cols) = image_dims(x)?;
    let (sr, sc) = (rows as f64 / out_rows as f64, cols as f64 / out_cols as f64);
    resample(x, out_rows, out_cols, false, |r, c| {
        ((r + 0.5) * sr - 0.5, (c + 0.5) * sc - 0.5)
    })
}

pub fn perturb_tensor(x: &Tensor, mech: &PerturbationMechanism, lambda: f64) -> Result<Tensor> {
    check_strength(lambda)?;
    if lambda == 1.0 {
        // The identity strength is exact for every mechanism, not merely
        // identity up to rounding; zero-perturbation pipelines depend on it.
        match mech {
            PerturbationMechanism::ShrinkToCentroid { .. }
            | PerturbationMechanism::AdditiveDirection { .. } => {
                vector_len(x)?;
            }
            _ => {
                image_dims(x)?;
            }
        }
        return Ok(x.clone());
    }
    match mech {
        PerturbationMechanism::Crop => {
            let (rows, cols) = image_dims(x)?;
            let (mr, mc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
            resample(x, rows, cols, false, |r, c| {
                (mr + lambda * (r - mr), mc + lambda * (c - mc))
            })
        }
        PerturbationMechanism::Rotation { max_degrees } => {
            let (rows, cols) = image_dims(x)?;
            let theta = (1.0 - lambda) * max_degrees.to_radians();
            let (sin, cos) = theta.sin_cos();
            let (mr, mc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
            resample(x, rows, cols, true, |r, c| {
                let (dr, dc) = (r - mr, c - mc);
                (mr + cos * dr + sin * dc, mc - sin * dr + cos * dc)
            })
        }
        PerturbationMechanism::Downsample => {
            let (rows, cols) = image_dims(x)?;
            let small_r = ((rows as f64 * lambda).round() as usize).max(1);
            let small_c = ((cols as f64 * lambda).round() as usize).max(1);
            if small_r == rows && small_c == cols {
                return Ok(x.clone());
            }
            resize(&resize(x, small_r, small_c)?, rows, cols)
        }
        PerturbationMechanism::Brightness => {
            image_dims(x)?;
            Ok(x.map(|v| (v * lambda).clamp(0.0, 1.0)))
        }
        PerturbationMechanism::Contrast => {
            image_dims(x)?;
            let mean = x.mean();
            Ok(x.map(|v| mean + lambda * (v - mean)))
        }
        PerturbationMechanism::ShrinkToCentroid { centroid } => {
            vector_len(x)?;
            if centroid.shape() != x.shape() {
                return Err(Error::InvalidArgument("centroid shape mismatch".into()));
            }
            x.zip_map(centroid, |v, c| c + lambda * (v - c))
        }
        PerturbationMechanism::AdditiveDirection { direction } => {
            vector_len(x)?;
            if direction.shape() != x.shape() {
                return Err(Error::InvalidArgument("direction shape mismatch".into()));
            }
            x.zip_map(direction, |v, u| v + (1.0 - lambda) * u)
        }
    }
}

pub fn perturb_record(
    rec: &DataRecord,
    mech: &PerturbationMechanism,
    lambda: f64,
) -> Result<DataRecord> {
    Ok(DataRecord { id: rec.id, values: perturb_tensor(&rec.values, mech, lambda)? })
}

/// All neighbors of a record, one per schedule strength, in schedule order.
pub fn neighbor_set(
    rec: &DataRecord,
    mech: &PerturbationMechanism,
    schedule: &StrengthSchedule,
) -> Result<Vec<DataRecord>> {
    schedule.validate()?;
    schedule.values().iter().map(|&l| perturb_record(rec, mech, l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn image(side: usize, seed: u64) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::zeros(&[side, side]).map(|_| rng.uniform(0.0, 1.0))
    }

    fn all_mechanisms(dim: usize) -> Vec<PerturbationMechanism> {
        vec![
            PerturbationMechanism::Crop,
            PerturbationMechanism::Rotation { max_degrees: 30.0 },
            PerturbationMechanism::Downsample,
            PerturbationMechanism::Brightness,
            PerturbationMechanism::Contrast,
            PerturbationMechanism::ShrinkToCentroid { centroid: Tensor::zeros(&[dim]) },
            PerturbationMechanism::AdditiveDirection {
                direction: Tensor::filled(&[dim], 1.0 / (dim as f64).sqrt()),
            },
        ]
    }

    #[test]
    fn schedule_grid_endpoints_and_spacing() {
        let s = StrengthSchedule::new(0.98, 0.7, 10).unwrap();
        let vals = s.values();
        assert_eq!(vals.len(), 10);
        assert!((vals[0] - 0.98).abs() < 1e-15);
        assert!((vals[9] - 0.7).abs() < 1e-15);
        let step = vals[1] - vals[0];
        assert!((step + 0.28 / 9.0).abs() < 1e-12);
        for w in vals.windows(2) {
            assert!(w[1] < w[0]);
        }

        assert_eq!(StrengthSchedule::new(0.9, 0.9, 1).unwrap().values(), vec![0.9]);
        assert!(StrengthSchedule::new(0.9, 0.9, 2).is_err());
        assert!(StrengthSchedule::new(0.9, 0.7, 0).is_err());
        assert!(StrengthSchedule::new(1.2, 0.7, 3).is_err());
        assert!(StrengthSchedule::new(0.9, 0.0, 3).is_err());
    }

    #[test]
    fn full_strength_is_the_identity_everywhere() {
        let img = image(7, 1);
        let vec = SeededRng::new(2).normal_tensor(&[5]);
        for mech in all_mechanisms(5) {
            let x = if mech.kind().is_image() { &img } else { &vec };
            let out = perturb_tensor(x, &mech, 1.0).unwrap();
            for (a, b) in out.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-12, "{} not identity at strength 1", mech.kind());
            }
        }
    }

    #[test]
    fn brightness_scales_and_clamps() {
        let x = Tensor::filled(&[3, 3], 0.5);
        let out = perturb_tensor(&x, &PerturbationMechanism::Brightness, 0.9).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.45).abs() < 1e-15));
    }

    #[test]
    fn contrast_blends_toward_the_image_mean() {
        let x = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let out = perturb_tensor(&x, &PerturbationMechanism::Contrast, 0.5).unwrap();
        assert_eq!(out.data(), &[0.25, 0.75, 0.25, 0.75]);
        // The sample mean of a flat image is only equal to the fill value
        // up to summation rounding, so a flat image is a fixed point to
        // rounding error, not bitwise.
        let flat = Tensor::filled(&[3, 3], 0.4);
        let same = perturb_tensor(&flat, &PerturbationMechanism::Contrast, 0.3).unwrap();
        for (a, b) in same.data().iter().zip(flat.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn crop_keeps_central_mass_centered() {
        let mut x = Tensor::zeros(&[12, 12]);
        x.set2(5, 5, 1.0);
        x.set2(5, 6, 1.0);
        x.set2(6, 5, 1.0);
        x.set2(6, 6, 1.0);
        let out = perturb_tensor(&x, &PerturbationMechanism::Crop, 0.5).unwrap();
        assert_eq!(out.at2(0, 0), 0.0);
        assert_eq!(out.at2(11, 11), 0.0);
        let (mut best, mut best_rc) = (f64::MIN, (0, 0));
        for r in 0..12 {
            for c in 0..12 {
                if out.at2(r, c) > best {
                    best = out.at2(r, c);
                    best_rc = (r, c);
                }
            }
        }
        assert!(best > 0.5);
        assert!((5..=6).contains(&best_rc.0) && (5..=6).contains(&best_rc.1), "{best_rc:?}");
    }

    #[test]
    fn rotation_moves_an_off_center_pixel_predictably() {
        let mut x = Tensor::zeros(&[11, 11]);
        x.set2(5, 8, 1.0);
        // strength 0.5 of a 180 degree budget is a quarter turn
        let mech = PerturbationMechanism::Rotation { max_degrees: 180.0 };
        let out = perturb_tensor(&x, &mech, 0.5).unwrap();
        let (mut best, mut best_rc) = (f64::MIN, (0, 0));
        for r in 0..11 {
            for c in 0..11 {
                if out.at2(r, c) > best {
                    best = out.at2(r, c);
                    best_rc = (r, c);
                }
            }
        }
        assert_eq!(best_rc, (2, 5));
        assert!(best > 0.99);
    }

    #[test]
    fn downsampling_blurs_a_delta() {
        let mut x = Tensor::zeros(&[8, 8]);
        x.set2(4, 4, 1.0);
        let out = perturb_tensor(&x, &PerturbationMechanism::Downsample, 0.5).unwrap();
        let peak = out.data().iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak < 1.0, "peak {peak}");
        assert!(out.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(out.data().iter().sum::<f64>() > 0.1);
    }

    #[test]
    fn vector_mechanisms_follow_their_closed_forms() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let c = Tensor::from_vec(vec![0.5, 0.5]);
        let shrink = PerturbationMechanism::ShrinkToCentroid { centroid: c };
        let out = perturb_tensor(&x, &shrink, 0.9).unwrap();
        assert!((out.data()[0] - (0.5 + 0.9 * 0.5)).abs() < 1e-15);
        assert!((out.data()[1] - (0.5 + 0.9 * 1.5)).abs() < 1e-15);

        let u = Tensor::from_vec(vec![1.0, 0.0]);
        let add = PerturbationMechanism::AdditiveDirection { direction: u };
        let out = perturb_tensor(&x, &add, 0.7).unwrap();
        assert!((out.data()[0] - 1.3).abs() < 1e-15);
        assert_eq!(out.data()[1], 2.0);
    }

    #[test]
    fn incompatible_shapes_and_strengths_are_rejected() {
        let img = image(5, 3);
        let vec = Tensor::from_vec(vec![1.0, 2.0]);
        assert!(perturb_tensor(&vec, &PerturbationMechanism::Crop, 0.9).is_err());
        let shrink = PerturbationMechanism::ShrinkToCentroid { centroid: Tensor::zeros(&[2]) };
        assert!(perturb_tensor(&img, &shrink, 0.9).is_err());
        assert!(perturb_tensor(&img, &PerturbationMechanism::Crop, 0.0).is_err());
        assert!(perturb_tensor(&img, &PerturbationMechanism::Crop, 1.2).is_err());
    }

    #[test]
    fn neighbor_sets_preserve_order_and_grow_in_distance() {
        let rec = DataRecord { id: 42, values: image(6, 4) };
        let sched = StrengthSchedule::new(0.98, 0.7, 10).unwrap();
        let nbrs =
            neighbor_set(&rec, &PerturbationMechanism::Brightness, &sched).unwrap();
        assert_eq!(nbrs.len(), 10);
        assert!(nbrs.iter().all(|n| n.id == 42));
        let d_first = rec.values.dist(&nbrs[0].values).unwrap();
        let d_last = rec.values.dist(&nbrs[9].values).unwrap();
        assert!(d_first < d_last);
    }

    #[test]
    fn resolve_builds_anchors_from_records() {
        let recs = vec![
            DataRecord { id: 0, values: Tensor::from_vec(vec![1.0, 0.0]) },
            DataRecord { id: 1, values: Tensor::from_vec(vec![0.0, 1.0]) },
        ];
        let mech =
            PerturbationMechanism::resolve(MechanismKind::ShrinkToCentroid, 30.0, &recs).unwrap();
        match &mech {
            PerturbationMechanism::ShrinkToCentroid { centroid } => {
                assert_eq!(centroid.data(), &[0.5, 0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let dir =
            PerturbationMechanism::resolve(MechanismKind::AdditiveDirection, 30.0, &recs).unwrap();
        match &dir {
            PerturbationMechanism::AdditiveDirection { direction } => {
                let norm: f64 = direction.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(PerturbationMechanism::resolve(MechanismKind::Rotation, 0.0, &recs).is_err());
        assert_eq!(MechanismKind::from_name("crop").unwrap(), MechanismKind::Crop);
        assert!(MechanismKind::from_name("blur").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn image_outputs_stay_in_range_and_shape(
                seed in 0u64..1000,
                lambda in 0.05f64..=1.0,
                mech_idx in 0usize..5,
                side in 4usize..9,
            ) {
                let x = image(side, seed);
                let mech = all_mechanisms(3)[mech_idx].clone();
                let out = perturb_tensor(&x, &mech, lambda).unwrap();
                prop_assert_eq!(out.shape(), x.shape());
                for &v in out.data() {
                    prop_assert!(v.is_finite());
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "value {} out of range", v);
                }
            }

            #[test]
            fn weaker_strengths_never_land_closer_for_linear_mechanisms(
                seed in 0u64..1000,
                l_hi in 0.75f64..0.95,
                l_lo in 0.3f64..0.6,
            ) {
                let x = image(6, seed);
                for mech in [PerturbationMechanism::Brightness, PerturbationMechanism::Contrast] {
                    let near = perturb_tensor(&x, &mech, l_hi).unwrap();
                    let far = perturb_tensor(&x, &mech, l_lo).unwrap();
                    let d_near = x.dist(&near).unwrap();
                    let d_far = x.dist(&far).unwrap();
                    prop_assert!(d_near <= d_far + 1e-12);
                }
            }
        }
    }
}
