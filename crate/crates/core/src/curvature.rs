//! Analytic sanity check for the fluctuation attack: on densities with
//! known curvature, the mean probability drop around a point estimates the
//! directional second derivative, negative at density peaks and positive
//! in convex regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

const INV_SQRT_TAU: f64 = 0.3989422804014327;

fn phi(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    INV_SQRT_TAU / std * (-0.5 * z * z).exp()
}

fn phi_second(x: f64, mean: f64, std: f64) -> f64 {
    let s2 = std * std;
    let d = x - mean;
    phi(x, mean, std) * (d * d / (s2 * s2) - 1.0 / s2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

/// Closed-form test densities: everything exposes an exact pdf, an exact
/// Laplacian, and an exact Gaussian-smoothed pdf.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AnalyticDensity {
    Gaussian1d { mean: f64, std: f64 },
    Mixture1d { components: Vec<MixtureComponent> },
    Isotropic2d { mean: [f64; 2], std: f64 },
}

impl AnalyticDensity {
    pub fn standard_normal() -> Self {
        AnalyticDensity::Gaussian1d { mean: 0.0, std: 1.0 }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticDensity::Gaussian1d { .. } | AnalyticDensity::Mixture1d { .. } => 1,
            AnalyticDensity::Isotropic2d { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AnalyticDensity::Gaussian1d { std, .. } | AnalyticDensity::Isotropic2d { std, .. } => {
                if *std <= 0.0 {
                    return Err(Error::InvalidArgument("density std must be positive".into()));
                }
            }
            AnalyticDensity::Mixture1d { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidArgument("mixture needs components".into()));
                }
                let mut total = 0.0;
                for c in components {
                    if c.std <= 0.0 || c.weight <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "mixture weights and stds must be positive".into(),
                        ));
                    }
                    total += c.weight;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "mixture weights sum to {total}, want 1"
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point dim {} does not match density dim {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(match self {
            AnalyticDensity::Gaussian1d { mean, std } => phi(x[0], *mean, *std),
            AnalyticDensity::Mixture1d { components } => {
                components.iter().map(|c| c.weight * phi(x[0], c.mean, c.std)).sum()
            }
            AnalyticDensity::Isotropic2d { mean, std } => {
                phi(x[0], mean[0], *std) * phi(x[1], mean[1], *std)
            }
        })
    }

    /// Sum of unmixed second partials (the trace of the Hessian).
    pub fn laplacian(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(match self {
            AnalyticDensity::Gaussian1d { mean, std } => phi_second(x[0], *mean, *std),
            AnalyticDensity::Mixture1d { components } => {
                components.iter().map(|c| c.weight * phi_second(x[0], c.mean, c.std)).sum()
            }
            AnalyticDensity::Isotropic2d { mean, std } => {
                let p = phi(x[0], mean[0], *std) * phi(x[1], mean[1], *std);
                let s2 = std * std;
                let r2 = (x[0] - mean[0]).powi(2) + (x[1] - mean[1]).powi(2);
                p * (r2 / (s2 * s2) - 2.0 / s2)
            }
        })
    }

    /// Exact E[p(x + z)] for z ~ N(0, sigma_z^2 I): convolving a Gaussian
    /// with a Gaussian adds variances.
    pub fn convolved_pdf(&self, x: &[f64], sigma_z: f64) -> Result<f64> {
        self.check_point(x)?;
        let widen = |s: f64| (s * s + sigma_z * sigma_z).sqrt();
        Ok(match self {
            AnalyticDensity::Gaussian1d { mean, std } => phi(x[0], *mean, widen(*std)),
            AnalyticDensity::Mixture1d { components } => {
                components.iter().map(|c| c.weight * phi(x[0], c.mean, widen(c.std))).sum()
            }
            AnalyticDensity::Isotropic2d { mean, std } => {
                phi(x[0], mean[0], widen(*std)) * phi(x[1], mean[1], widen(*std))
            }
        })
    }
}

/// Monte-Carlo estimate of E[p(x+z)] - p(x) against its small-scale
/// analytic limit (1/2) sigma_z^2 Laplacian(p)(x).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalCurvatureProbe {
    pub density: AnalyticDensity,
    pub x: Vec<f64>,
    pub sigma_z: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub mc_estimate: f64,
    pub analytic: f64,
}

impl DirectionalCurvatureProbe {
    pub fn validate(&self) -> Result<()> {
        self.density.validate()?;
        self.density.check_point(&self.x)?;
        if self.sigma_z <= 0.0 {
            return Err(Error::InvalidArgument("probe scale must be positive".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("probe wants at least one sample".into()));
        }
        Ok(())
    }

    /// Exact value of the probed gap, for oracle comparisons.
    pub fn exact_gap(&self) -> Result<f64> {
        Ok(self.density.convolved_pdf(&self.x, self.sigma_z)? - self.density.pdf(&self.x)?)
    }

    pub fn run(&self, rng: &mut SeededRng) -> Result<ProbeOutcome> {
        self.validate()?;
        let p0 = self.density.pdf(&self.x)?;
        let mut sum = 0.0;
        let mut shifted = vec![0.0; self.x.len()];
        for _ in 0..self.samples {
            for (s, &xi) in shifted.iter_mut().zip(&self.x) {
                *s = xi + self.sigma_z * rng.standard_normal();
            }
            sum += self.density.pdf(&shifted)? - p0;
        }
        Ok(ProbeOutcome {
            mc_estimate: sum / self.samples as f64,
            analytic: 0.5 * self.sigma_z * self.sigma_z * self.density.laplacian(&self.x)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn densities() -> Vec<AnalyticDensity> {
        vec![
            AnalyticDensity::standard_normal(),
            AnalyticDensity::Gaussian1d { mean: 0.3, std: 0.8 },
            AnalyticDensity::Mixture1d {
                components: vec![
                    MixtureComponent { weight: 0.4, mean: -1.0, std: 0.5 },
                    MixtureComponent { weight: 0.6, mean: 1.5, std: 1.2 },
                ],
            },
            AnalyticDensity::Isotropic2d { mean: [0.2, -0.4], std: 0.9 },
        ]
    }

    #[test]
    fn pdfs_integrate_to_one() {
        for d in densities() {
            d.validate().unwrap();
            let mass = match d.dim() {
                1 => {
                    let (lo, hi, n) = (-20.0, 20.0, 200_000);
                    let h = (hi - lo) / n as f64;
                    (0..=n)
                        .map(|i| {
                            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                            w * d.pdf(&[lo + i as f64 * h]).unwrap() * h
                        })
                        .sum::<f64>()
                }
                _ => {
                    let (lo, hi, n) = (-8.0, 8.0, 400);
                    let h = (hi - lo) / n as f64;
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            let x = lo + (i as f64 + 0.5) * h;
                            let y = lo + (j as f64 + 0.5) * h;
                            acc += d.pdf(&[x, y]).unwrap() * h * h;
                        }
                    }
                    acc
                }
            };
            assert!((mass - 1.0).abs() < 1e-4, "mass {mass} for {d:?}");
        }
    }

    #[test]
    fn laplacian_matches_finite_differences() {
        let h = 1e-4;
        for d in densities() {
            let points: Vec<Vec<f64>> = match d.dim() {
                1 => vec![vec![0.0], vec![0.7], vec![-1.3]],
                _ => vec![vec![0.0, 0.0], vec![0.5, -0.2]],
            };
            for x in points {
                let mut fd = 0.0;
                for axis in 0..x.len() {
                    let mut hi = x.clone();
                    let mut lo = x.clone();
                    hi[axis] += h;
                    lo[axis] -= h;
                    fd += (d.pdf(&hi).unwrap() - 2.0 * d.pdf(&x).unwrap() + d.pdf(&lo).unwrap())
                        / (h * h);
                }
                let exact = d.laplacian(&x).unwrap();
                assert!(
                    (fd - exact).abs() < 1e-5 * exact.abs().max(1.0),
                    "fd {fd} vs exact {exact} at {x:?} for {d:?}"
                );
            }
        }
    }

    #[test]
    fn convolution_matches_quadrature() {
        let sigma_z = 0.3;
        for d in densities().into_iter().filter(|d| d.dim() == 1) {
            for x in [0.0, 0.9] {
                let closed = d.convolved_pdf(&[x], sigma_z).unwrap();
                let (lo, hi, n) = (-10.0, 10.0, 100_000);
                let h = (hi - lo) / n as f64;
                let quad: f64 = (0..=n)
                    .map(|i| {
                        let z = lo + i as f64 * h;
                        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                        w * d.pdf(&[x + z]).unwrap() * phi(z, 0.0, sigma_z) * h
                    })
                    .sum();
                assert!((closed - quad).abs() < 1e-8, "closed {closed} vs quad {quad}");
            }
        }
    }

    #[test]
    fn standard_normal_peak_numbers() {
        let probe = DirectionalCurvatureProbe {
            density: AnalyticDensity::standard_normal(),
            x: vec![0.0],
            sigma_z: 0.1,
            samples: 200_000,
        };
        let exact = probe.exact_gap().unwrap();
        let want = INV_SQRT_TAU / 1.01f64.sqrt() - INV_SQRT_TAU;
        assert!((exact - want).abs() < 1e-15);
        assert!((exact + 0.001975).abs() < 1e-5, "exact {exact}");

        let out = probe.run(&mut SeededRng::new(1)).unwrap();
        assert!((out.analytic + 0.0019947).abs() < 1e-6, "analytic {}", out.analytic);
        assert!((out.mc_estimate - exact).abs() < 2e-5, "mc {}", out.mc_estimate);
        assert!(((out.mc_estimate - out.analytic) / out.analytic).abs() < 0.01);
    }

    #[test]
    fn convex_tail_region_probes_positive() {
        let probe = DirectionalCurvatureProbe {
            density: AnalyticDensity::standard_normal(),
            x: vec![2.0],
            sigma_z: 0.1,
            samples: 100_000,
        };
        let out = probe.run(&mut SeededRng::new(2)).unwrap();
        assert!(out.mc_estimate > 0.0);
        assert!(out.analytic > 0.0);
        assert!(probe.exact_gap().unwrap() > 0.0);
    }

    #[test]
    fn nearly_flat_density_probes_nearly_zero() {
        let probe = DirectionalCurvatureProbe {
            density: AnalyticDensity::Gaussian1d { mean: 0.0, std: 1000.0 },
            x: vec![0.0],
            sigma_z: 0.1,
            samples: 10_000,
        };
        let out = probe.run(&mut SeededRng::new(3)).unwrap();
        assert!(out.mc_estimate.abs() < 1e-9);
        assert!(out.analytic.abs() < 1e-9);
    }

    #[test]
    fn negated_probe_sign_matches_the_fluctuation_score() {
        // symmetric neighbors isolate curvature exactly like the probe
        let density = AnalyticDensity::standard_normal();
        let delta = 0.1;
        for (x, expect_positive_curvature) in [(0.0, false), (2.0, true)] {
            let p0 = density.pdf(&[x]).unwrap();
            let mut entries = Vec::new();
            for nbr in [x + delta, x - delta] {
                let pn = density.pdf(&[nbr]).unwrap();
                entries.push(crate::attack::fluctuation(p0, pn));
            }
            let matrix = crate::attack::FluctuationMatrix::new(2, 1, entries).unwrap();
            let met = crate::attack::pfami_met_score(&matrix).unwrap();

            let probe = DirectionalCurvatureProbe {
                density: density.clone(),
                x: vec![x],
                sigma_z: delta,
                samples: 50_000,
            };
            let out = probe.run(&mut SeededRng::new(4)).unwrap();
            assert_eq!(out.mc_estimate > 0.0, expect_positive_curvature);
            assert_eq!(
                met.signum(),
                (-out.mc_estimate).signum(),
                "fluctuation score and negated probe disagree at x={x}"
            );
        }
    }

    #[test]
    fn invalid_probes_are_rejected() {
        let good = DirectionalCurvatureProbe {
            density: AnalyticDensity::standard_normal(),
            x: vec![0.0],
            sigma_z: 0.1,
            samples: 10,
        };
        assert!(good.validate().is_ok());
        assert!(DirectionalCurvatureProbe { sigma_z: 0.0, ..good.clone() }.validate().is_err());
        assert!(DirectionalCurvatureProbe { samples: 0, ..good.clone() }.validate().is_err());
        assert!(DirectionalCurvatureProbe { x: vec![0.0, 1.0], ..good.clone() }
            .validate()
            .is_err());
        let bad_mix = AnalyticDensity::Mixture1d {
            components: vec![MixtureComponent { weight: 0.5, mean: 0.0, std: 1.0 }],
        };
        assert!(bad_mix.validate().is_err());
    }
}
