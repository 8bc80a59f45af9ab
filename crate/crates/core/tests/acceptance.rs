//! Acceptance gate. Every check here either has an answer computed by an
//! independent route (finite differences, quadrature, closed forms, ROC
//! enumeration) or states an ordering the desk-scale experiments must
//! reproduce, and each carries a wall-clock budget. One test per claim;
//! a green run of this file is the bar for calling the laboratory done.

use std::time::{Duration, Instant};

use fluctlab::attack::{fluctuation, pfami_met_score, FluctuationMatrix};
use fluctlab::curvature::{AnalyticDensity, DirectionalCurvatureProbe};
use fluctlab::ddpm::{Denoiser, ToyDdpm};
use fluctlab::metrics::{asr, auc, roc_curve, tpr_at_fpr};
use fluctlab::mlp::{Activation, MlpParams};
use fluctlab::model::{GenModel, GrayBoxHandle};
use fluctlab::proxy::{ddpm_loss_term, vae_kl, ProxyConfig};
use fluctlab::rng::SeededRng;
use fluctlab::schedule::{
    diffuse_forward, posterior_mean, posterior_mean_from_eps, VarianceSchedule,
};
use fluctlab::tensor::Tensor;

fn budget(name: &str, started: Instant, cap: Duration) {
    let spent = started.elapsed();
    assert!(spent <= cap, "{name} took {spent:?}, budget {cap:?}");
    println!("[PASS] {name} ({:.1}s of {:.0}s budget)", spent.as_secs_f64(), cap.as_secs_f64());
}

/// Central finite difference of `f` in one coordinate of an MLP's
/// parameter vector. Step 1e-5 keeps truncation and roundoff both below
/// the 1e-4 gate for the weight scales `init` produces.
fn fd_param(
    net: &MlpParams,
    layer: usize,
    weight: bool,
    idx: usize,
    f: &dyn Fn(&MlpParams) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut plus = net.clone();
    let mut minus = net.clone();
    {
        let t = if weight { &mut plus.layers[layer].weights } else { &mut plus.layers[layer].bias };
        t.data_mut()[idx] += h;
    }
    {
        let t =
            if weight { &mut minus.layers[layer].weights } else { &mut minus.layers[layer].bias };
        t.data_mut()[idx] -= h;
    }
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[test]
fn backprop_matches_central_finite_differences_on_random_nets() {
    let started = Instant::now();
    let rng = SeededRng::new(0x9a1);
    let hidden_acts = [Activation::Tanh, Activation::Softplus, Activation::Sigmoid];
    let heads = [Activation::Identity, Activation::Tanh];
    let mut worst = 0.0f64;

    for k in 0..20 {
        let mut r = rng.stream(k);
        let depth = 1 + r.below(3);
        let mut sizes = vec![2 + r.below(5)];
        for _ in 0..depth {
            sizes.push(2 + r.below(7));
        }
        sizes.push(1 + r.below(4));
        let mut acts = Vec::new();
        for _ in 0..depth {
            acts.push(hidden_acts[r.below(hidden_acts.len())]);
        }
        acts.push(heads[r.below(heads.len())]);

        let net = MlpParams::init(&sizes, &acts, &mut r).unwrap();
        let input = r.normal_tensor(&[sizes[0]]);
        let upstream = r.normal_tensor(&[*sizes.last().unwrap()]);
        let scalar = |p: &MlpParams| -> f64 {
            let out = p.apply(&input).unwrap();
            out.data().iter().zip(upstream.data()).map(|(o, u)| o * u).sum()
        };

        let (grads, _) = net.grad(&input, &upstream).unwrap();
        for (l, (gw, gb)) in grads.layers.iter().enumerate() {
            for (i, &g) in gw.data().iter().enumerate() {
                let fd = fd_param(&net, l, true, i, &scalar);
                worst = worst.max((fd - g).abs() / (fd.abs() + g.abs()).max(1e-6));
            }
            for (i, &g) in gb.data().iter().enumerate() {
                let fd = fd_param(&net, l, false, i, &scalar);
                worst = worst.max((fd - g).abs() / (fd.abs() + g.abs()).max(1e-6));
            }
        }
    }

    assert!(worst < 1e-4, "worst relative gradient error {worst:.3e}");
    budget("gradient oracle", started, Duration::from_secs(10));
}

#[test]
fn posterior_mean_forms_agree_and_forward_variance_tracks_the_schedule() {
    let started = Instant::now();
    let schedules = [
        VarianceSchedule::linear(100, 1e-3, 0.2).unwrap(),
        VarianceSchedule::linear(50, 1e-3, 0.25).unwrap(),
        VarianceSchedule::linear(3, 0.1, 0.1).unwrap(),
    ];

    // The coefficient form mixes (x0, x_t); the eps form reconstructs the
    // same mean from the noise that produced x_t. Algebraically equal, so
    // any gap is implementation error.
    let mut rng = SeededRng::new(0x9a2);
    let mut worst = 0.0f64;
    for schedule in &schedules {
        for _ in 0..70 {
            let t = 2 + rng.below(schedule.t_max() - 1);
            let x0 = rng.normal_tensor(&[6]);
            let eps = rng.normal_tensor(&[6]);
            let x_t = diffuse_forward(schedule, &x0, t, &eps).unwrap();
            let coef = posterior_mean(schedule, &x0, &x_t, t).unwrap();
            let from_eps = posterior_mean_from_eps(schedule, &x_t, t, &eps).unwrap();
            for (a, b) in coef.data().iter().zip(from_eps.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst <= 1e-10, "posterior mean forms disagree by {worst:.3e}");

    // Forward-jump marginal: Var(x_t) = 1 - alpha_bar_t around the scaled
    // clean record, pooled over dims and draws.
    let schedule = &schedules[0];
    let x0 = SeededRng::new(0x9a3).normal_tensor(&[4]);
    for &t in &[1usize, 50, 100] {
        let expected = 1.0 - schedule.alpha_bar(t);
        let mean = x0.scale(schedule.alpha_bar(t).sqrt());
        let mut acc = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let eps = rng.normal_tensor(&[4]);
            let x_t = diffuse_forward(schedule, &x0, t, &eps).unwrap();
            acc += x_t.sq_dist(&mean).unwrap();
        }
        let observed = acc / (draws * 4) as f64;
        assert!(
            (observed - expected).abs() / expected < 0.05,
            "t={t}: sample variance {observed:.5} vs 1-alpha_bar {expected:.5}"
        );
    }
    budget("diffusion algebra", started, Duration::from_secs(10));
}

#[test]
fn step_loss_hits_its_closed_forms_and_vae_kl_matches_quadrature() {
    let started = Instant::now();
    let schedule = VarianceSchedule::linear(3, 0.1, 0.1).unwrap();
    let exact = ProxyConfig { timesteps: vec![2], exact_mean: true, ..ProxyConfig::default() };

    // A denoiser holding the exact noise the loss term is about to draw
    // makes both means coincide.
    let rng = SeededRng::new(0x9a4);
    let eps = rng.clone().normal_tensor(&[1]);
    let oracle = |offset: f64| {
        GrayBoxHandle::new(GenModel::Ddpm(ToyDdpm {
            schedule: schedule.clone(),
            denoiser: Denoiser::Oracle { eps: eps.clone(), mean_offset: offset },
            data_shape: vec![1],
        }))
    };
    let x0 = SeededRng::new(0x9a5).normal_tensor(&[1]);
    let zero = ddpm_loss_term(&oracle(0.0), &x0, 2, &exact, &mut rng.clone()).unwrap();
    assert!(zero.abs() <= 1e-12, "perfect denoiser loss {zero:.3e}");

    // Mean off by delta in one dim: loss = delta^2 / (2 beta_tilde_2)
    // = 0.01 / (2 * 0.1 * 0.1 / 0.19) = 0.095, independent of the draw.
    let offset = ddpm_loss_term(&oracle(0.1), &x0, 2, &exact, &mut rng.clone()).unwrap();
    assert!((offset - 0.095).abs() <= 1e-12, "offset loss {offset:.12}");

    // Same quantity through sampled transition means. Averaging n_mc
    // reverse draws leaves dim/(2 n_mc) of estimator variance on top of
    // the closed form; the replicated mean must sit inside a 4 sigma band
    // around that.
    let n_mc = 40;
    let sampled_cfg = ProxyConfig { timesteps: vec![2], n_mc, ..ProxyConfig::default() };
    let reps = 2_000;
    let mut vals = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut r = rng.stream(rep as u64);
        let rep_eps = r.clone().normal_tensor(&[1]);
        let handle = GrayBoxHandle::new(GenModel::Ddpm(ToyDdpm {
            schedule: schedule.clone(),
            denoiser: Denoiser::Oracle { eps: rep_eps, mean_offset: 0.1 },
            data_shape: vec![1],
        }));
        vals.push(ddpm_loss_term(&handle, &x0, 2, &sampled_cfg, &mut r).unwrap());
    }
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64;
    let expected = 0.095 + 1.0 / (2.0 * n_mc as f64);
    let band = 4.0 * (var / reps as f64).sqrt();
    assert!(
        (mean - expected).abs() <= band,
        "sampled mean {mean:.5} vs {expected:.5} +- {band:.5}"
    );

    // KL(N(1,1) || N(0,1)) by Simpson quadrature over [-12, 14]; the
    // closed form in vae_kl must match it to 1e-6.
    let kl = vae_kl(&Tensor::from_vec(vec![1.0]), &Tensor::from_vec(vec![1.0])).unwrap();
    let log_pdf = |z: f64, mu: f64| -0.5 * (z - mu) * (z - mu) - 0.5 * (std::f64::consts::TAU).ln();
    let integrand = |z: f64| (log_pdf(z, 1.0)).exp() * (log_pdf(z, 1.0) - log_pdf(z, 0.0));
    let (lo, hi, n) = (-12.0f64, 14.0f64, 40_000usize);
    let h = (hi - lo) / n as f64;
    let mut quad = integrand(lo) + integrand(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        quad += w * integrand(lo + i as f64 * h);
    }
    quad *= h / 3.0;
    assert!((kl - 0.5).abs() <= 1e-12, "closed-form kl {kl:.12}");
    assert!((kl - quad).abs() <= 1e-6, "kl {kl:.9} vs quadrature {quad:.9}");

    budget("proxy oracles", started, Duration::from_secs(30));
}

#[test]
fn curvature_probe_matches_the_analytic_limit_and_signs_the_met_score() {
    let started = Instant::now();
    let mut rng = SeededRng::new(0x9a6);

    // Standard normal at the mode: (1/2) sigma^2 p''(0) = -0.0019947.
    let probe = DirectionalCurvatureProbe {
        density: AnalyticDensity::standard_normal(),
        x: vec![0.0],
        sigma_z: 0.1,
        samples: 1_000_000,
    };
    let peak = probe.run(&mut rng).unwrap();
    assert!(
        (peak.mc_estimate - (-0.0019947)).abs() / 0.0019947 < 0.05,
        "peak estimate {:.7} vs analytic -0.0019947",
        peak.mc_estimate
    );
    assert!(peak.mc_estimate < 0.0, "density peak must probe negative");
    assert!(peak.analytic < 0.0);

    // Two sigma out the Gaussian is convex, so the same probe turns
    // positive.
    let tail_probe = DirectionalCurvatureProbe { x: vec![2.0], ..probe.clone() };
    let tail = tail_probe.run(&mut rng).unwrap();
    assert!(tail.mc_estimate > 0.0, "convex region probed {:.7}", tail.mc_estimate);
    assert!(tail.analytic > 0.0);

    // The attack statistic is the mean relative probability drop around
    // the record, so on the same density its sign must mirror the
    // negated probe estimate.
    for (probe, outcome) in [(&tail_probe, &tail), (&DirectionalCurvatureProbe { x: vec![0.0], ..tail_probe.clone() }, &peak)]
    {
        let p0 = probe.density.pdf(&probe.x).unwrap();
        let neighbors = 400;
        let mut entries = Vec::with_capacity(neighbors);
        for _ in 0..neighbors {
            let shifted = [probe.x[0] + probe.sigma_z * rng.standard_normal()];
            entries.push(fluctuation(p0, probe.density.pdf(&shifted).unwrap()));
        }
        let matrix = FluctuationMatrix::new(1, neighbors, entries).unwrap();
        let met = pfami_met_score(&matrix).unwrap();
        assert_eq!(
            met.signum(),
            -outcome.mc_estimate.signum(),
            "met score {met:.5} vs probe {:.7} at x={}",
            outcome.mc_estimate,
            probe.x[0]
        );
    }

    budget("curvature probe", started, Duration::from_secs(60));
}

#[test]
fn metric_examples_enumerate_exactly_and_survive_monotone_transforms() {
    let started = Instant::now();

    // Hand-enumerable score sets. Scores and labels are (member score,
    // non-member score) pairs around a threshold sweep.
    let perfect = (vec![0.9, 0.8, 0.1, 0.2], vec![true, true, false, false]);
    assert_eq!(auc(&perfect.0, &perfect.1).unwrap(), 1.0);
    assert_eq!(asr(&perfect.0, &perfect.1).unwrap(), 1.0);
    assert_eq!(tpr_at_fpr(&perfect.0, &perfect.1, 0.01).unwrap(), 1.0);

    let mixed = (vec![0.9, 0.3, 0.5, 0.1], vec![true, true, false, false]);
    assert_eq!(auc(&mixed.0, &mixed.1).unwrap(), 0.75, "3 of 4 pairs ordered");
    assert_eq!(asr(&mixed.0, &mixed.1).unwrap(), 0.75);

    let flat = (vec![0.4; 6], vec![true, true, true, false, false, false]);
    assert_eq!(auc(&flat.0, &flat.1).unwrap(), 0.5, "ties count half");
    assert_eq!(asr(&flat.0, &flat.1).unwrap(), 0.5, "prior accuracy");
    assert_eq!(tpr_at_fpr(&flat.0, &flat.1, 0.01).unwrap(), 0.0);

    // Staircase enumeration: non-member 0.95 outscores every member, so
    // the first admitted positive rate is 1/3, and a cap just below it
    // admits nothing.
    let stair =
        (vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.95], vec![true, true, true, false, false, false]);
    assert_eq!(tpr_at_fpr(&stair.0, &stair.1, 0.34).unwrap(), 1.0);
    assert_eq!(tpr_at_fpr(&stair.0, &stair.1, 0.33).unwrap(), 0.0);

    // Shuffled labels on a large set sit inside the 3 sigma Mann-Whitney
    // band around one half.
    let mut rng = SeededRng::new(0x9a7);
    let n = 400;
    let scores: Vec<f64> = (0..2 * n).map(|_| rng.uniform(0.0, 1.0)).collect();
    let mut labels = vec![false; 2 * n];
    for slot in labels.iter_mut().take(n) {
        *slot = true;
    }
    rng.shuffle(&mut labels);
    let null_auc = auc(&scores, &labels).unwrap();
    let sigma = fluctlab::metrics::mann_whitney_null_sigma(n, n);
    assert!(
        (null_auc - 0.5).abs() <= 3.0 * sigma,
        "label permutation gave auc {null_auc:.4}, band {:.4}",
        3.0 * sigma
    );

    // Rank metrics cannot move under strictly increasing transforms.
    let transforms: [(&str, fn(f64) -> f64); 4] = [
        ("affine", |x| 2.5 * x + 1.0),
        ("cube", |x| x * x * x),
        ("atan", f64::atan),
        ("exp", f64::exp),
    ];
    for set in 0..100 {
        let mut r = rng.stream(set as u64);
        let members = 3 + r.below(30);
        let non_members = 3 + r.below(30);
        let mut scores = Vec::with_capacity(members + non_members);
        let mut labels = Vec::with_capacity(members + non_members);
        for i in 0..members + non_members {
            // Coarse grid so transformed values stay distinct in f64
            // exactly when the originals are.
            scores.push((r.uniform(-2.0, 2.0) * 500.0).round() / 500.0);
            labels.push(i < members);
        }
        let base =
            (auc(&scores, &labels).unwrap(), asr(&scores, &labels).unwrap(), tpr_at_fpr(&scores, &labels, 0.01).unwrap());
        let base_roc = roc_curve(&scores, &labels).unwrap();
        for (name, f) in &transforms {
            let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
            assert_eq!(auc(&mapped, &labels).unwrap(), base.0, "{name} moved auc on set {set}");
            assert_eq!(asr(&mapped, &labels).unwrap(), base.1, "{name} moved asr on set {set}");
            assert_eq!(
                tpr_at_fpr(&mapped, &labels, 0.01).unwrap(),
                base.2,
                "{name} moved tpr on set {set}"
            );
            assert_eq!(roc_curve(&mapped, &labels).unwrap(), base_roc, "{name} moved the roc");
        }
    }

    budget("metric suite", started, Duration::from_secs(10));
}
