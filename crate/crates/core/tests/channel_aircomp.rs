//! Sampling checks for the channel model and over-the-air aggregation.
//! Every Monte-Carlo comparison allows 4 standard errors.

use airfl_core::aircomp::{
    aggregate, aggregate_with, compensation_lambda, effective_xi, preprocessing_beta,
    received_signal, scaling_zeta, transmit_power, CoefficientMode, PowerConfig,
};
use airfl_core::analysis::{divergence_exact, divergence_with_skips, skip_probability, xi_variance};
use airfl_core::channel::{draw_channel, EstimationModel, RngStream};
use airfl_core::fltrain::ideal_aggregate;
use num_complex::Complex64;
use proptest::prelude::*;

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn xi_samples(rho: f64, gamma: f64, n: usize, seed: u64) -> Vec<f64> {
    let model = EstimationModel::new(rho, 2.2).unwrap();
    let lambda = compensation_lambda(gamma, rho).unwrap();
    let mut rng = RngStream::new(seed, 0);
    (0..n)
        .map(|_| effective_xi(&draw_channel(&model, 1.0, &mut rng).unwrap(), gamma, lambda).unwrap())
        .collect()
}

#[test]
fn xi_is_unbiased_with_closed_form_variance() {
    for &(rho, gamma) in &[(0.8, 0.5), (1.0, 1.0), (0.5, 0.1)] {
        let xs = xi_samples(rho, gamma, 200_000, 11);
        let (m, se) = mean_se(&xs);
        assert!((m - 1.0).abs() < 4.0 * se, "rho {rho} gamma {gamma}: mean {m} se {se}");
        let sq: Vec<f64> = xs.iter().map(|x| (x - 1.0) * (x - 1.0)).collect();
        let (v, se_v) = mean_se(&sq);
        let want = xi_variance(gamma, rho).unwrap();
        assert!((v - want).abs() < 4.0 * se_v, "rho {rho} gamma {gamma}: var {v} ± {se_v} vs {want}");
    }
}

#[test]
fn channel_second_moments() {
    let rho = 0.7;
    let model = EstimationModel::new(rho, 2.0).unwrap();
    let mut rng = RngStream::new(5, 0);
    let draws: Vec<_> = (0..100_000).map(|_| draw_channel(&model, 10.0, &mut rng).unwrap()).collect();
    let gain: Vec<f64> = draws.iter().map(|d| d.h.norm_sqr()).collect();
    let corr: Vec<f64> = draws.iter().map(|d| (d.h * d.h_hat.conj()).re).collect();
    let active: Vec<f64> = draws.iter().map(|d| f64::from(u8::from(d.estimated_gain() >= 0.5))).collect();
    let (g, se) = mean_se(&gain);
    assert!((g - 1.0).abs() < 4.0 * se);
    let (c, se) = mean_se(&corr);
    assert!((c - rho).abs() < 4.0 * se);
    let (a, se) = mean_se(&active);
    assert!((a - (-0.5f64).exp()).abs() < 4.0 * se);
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let model = EstimationModel::new(0.9, 2.2).unwrap();
    let run = |seed, stream| {
        let mut rng = RngStream::new(seed, stream);
        (0..5).map(|_| draw_channel(&model, 3.0, &mut rng).unwrap().h).collect::<Vec<_>>()
    };
    assert_eq!(run(1, 0), run(1, 0));
    assert_ne!(run(1, 0), run(1, 1));
    assert_ne!(run(1, 0), run(2, 0));
}

fn frozen_setup(k: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = RngStream::new(seed, 99);
    let grads = (0..k).map(|_| (0..dim).map(|_| 0.3 * rng.normal()).collect()).collect();
    let dists = (0..k).map(|_| 500.0 * (1.0 - rng.uniform())).collect();
    (grads, dists)
}

#[test]
fn frozen_gradient_divergence_matches_exact_value() {
    let (k, dim, rho, gamma, alpha) = (10, 10, 0.8, 0.4, 2.2);
    let (grads, dists) = frozen_setup(k, dim, 3);
    let g_bound = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
    let d_max_alpha = dists.iter().map(|d: &f64| d.powf(alpha)).fold(0.0, f64::max);
    let cfg = PowerConfig::new(0.1, 1e-7, g_bound, d_max_alpha).unwrap();
    let model = EstimationModel::new(rho, alpha).unwrap();
    let ideal = ideal_aggregate(&grads).unwrap();
    let errs: Vec<f64> = (0..20_000u64)
        .map(|t| {
            let mut rng = RngStream::new(8, t);
            let draws: Vec<_> = dists.iter().map(|&d| draw_channel(&model, d, &mut rng).unwrap()).collect();
            let out = aggregate(&grads, &draws, gamma, rho, &cfg, &mut rng).unwrap();
            out.g_hat.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum()
        })
        .collect();
    let (m, se) = mean_se(&errs);
    let grad_sq: Vec<f64> = grads.iter().map(|g| g.iter().map(|x| x * x).sum()).collect();
    let want = divergence_exact(&grad_sq, k, gamma, rho, &cfg, dim).unwrap();
    assert!((m - want).abs() < 4.0 * se, "MC {m} ± {se}, exact {want}");
}

#[test]
fn skipped_rounds_carry_no_noise() {
    // K = 4 at γ = 1.5: about 35% of rounds have no active device
    let (k, dim, rho, gamma, alpha) = (4, 10, 0.8, 1.5, 2.2);
    let (grads, dists) = frozen_setup(k, dim, 5);
    let d_max_alpha = dists.iter().map(|d: &f64| d.powf(alpha)).fold(0.0, f64::max);
    let cfg = PowerConfig::new(0.1, 1e-6, 2.0, d_max_alpha).unwrap();
    let model = EstimationModel::new(rho, alpha).unwrap();
    let ideal = ideal_aggregate(&grads).unwrap();
    let mut skipped = 0usize;
    let n = 40_000u64;
    let errs: Vec<f64> = (0..n)
        .map(|t| {
            let mut rng = RngStream::new(9, t);
            let draws: Vec<_> = dists.iter().map(|&d| draw_channel(&model, d, &mut rng).unwrap()).collect();
            let out = aggregate(&grads, &draws, gamma, rho, &cfg, &mut rng).unwrap();
            skipped += out.skipped as usize;
            out.g_hat.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum()
        })
        .collect();
    let p = skip_probability(k, gamma).unwrap();
    let p_se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((skipped as f64 / n as f64 - p).abs() < 4.0 * p_se);
    let (m, se) = mean_se(&errs);
    let grad_sq: Vec<f64> = grads.iter().map(|g| g.iter().map(|x| x * x).sum()).collect();
    let want = divergence_with_skips(&grad_sq, k, gamma, rho, &cfg, dim).unwrap();
    assert!((m - want).abs() < 4.0 * se, "MC {m} ± {se}, skip-aware {want}");
    let full = divergence_exact(&grad_sq, k, gamma, rho, &cfg, dim).unwrap();
    assert!(full - m > 4.0 * se, "MC {m} ± {se} should fall below {full}");
}

#[test]
fn unit_coefficients_without_noise_reproduce_the_mean() {
    let (grads, dists) = frozen_setup(6, 7, 4);
    let cfg = PowerConfig::new(0.1, 0.0, 5.0, 1e6).unwrap();
    let model = EstimationModel::new(1.0, 2.2).unwrap();
    let mut rng = RngStream::new(1, 1);
    let draws: Vec<_> = dists.iter().map(|&d| draw_channel(&model, d, &mut rng).unwrap()).collect();
    let out = aggregate_with(&grads, &draws, 0.3, 1.0, &cfg, &mut rng, CoefficientMode::ForceUnit).unwrap();
    assert_eq!(out.g_hat, ideal_aggregate(&grads).unwrap());
}

#[test]
fn physical_signal_matches_aggregate() {
    let (grads, dists) = frozen_setup(8, 5, 6);
    let (alpha, rho, gamma) = (2.2, 0.85, 0.3);
    let d_max_alpha = dists.iter().map(|d: &f64| d.powf(alpha)).fold(0.0, f64::max);
    let cfg = PowerConfig::new(0.1, 1e-7, 2.0, d_max_alpha).unwrap();
    let model = EstimationModel::new(rho, alpha).unwrap();
    let mut rng = RngStream::new(2, 2);
    let draws: Vec<_> = dists.iter().map(|&d| draw_channel(&model, d, &mut rng).unwrap()).collect();
    let mut replay = rng.clone();
    let out = aggregate(&grads, &draws, gamma, rho, &cfg, &mut rng).unwrap();
    assert!(!out.skipped);
    let sigma = cfg.sigma2.sqrt();
    let noise: Vec<Complex64> = (0..5).map(|_| replay.complex_normal() * sigma).collect();
    let y = received_signal(&grads, &draws, alpha, gamma, rho, &cfg, &noise).unwrap();
    for (yi, gi) in y.iter().zip(&out.g_hat) {
        let via_signal = yi.re / out.zeta;
        assert!((via_signal - gi).abs() <= 1e-12 * gi.abs().max(1e-3), "{via_signal} vs {gi}");
    }
}

#[test]
fn all_truncated_round_is_skipped() {
    let (grads, dists) = frozen_setup(3, 4, 7);
    let cfg = PowerConfig::new(0.1, 1e-7, 2.0, 1e6).unwrap();
    let model = EstimationModel::new(0.9, 2.2).unwrap();
    let mut rng = RngStream::new(3, 3);
    let draws: Vec<_> = dists.iter().map(|&d| draw_channel(&model, d, &mut rng).unwrap()).collect();
    let out = aggregate(&grads, &draws, 60.0, 0.9, &cfg, &mut rng).unwrap();
    assert!(out.skipped && out.active_set.is_empty());
    assert_eq!(out.g_hat, vec![0.0; 4]);
}

proptest! {
    #[test]
    fn transmit_power_within_budget(
        seed in any::<u64>(),
        rho in 0.3f64..=1.0,
        gamma in 0.01f64..3.0,
        k in 1usize..20,
        d in 1.0f64..500.0,
        scale in 0.0f64..=1.0,
    ) {
        let alpha = 2.2;
        let cfg = PowerConfig::new(0.1, 1e-7, 1.5, 500f64.powf(alpha)).unwrap();
        let model = EstimationModel::new(rho, alpha).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let draw = draw_channel(&model, d, &mut rng).unwrap();
        prop_assume!(draw.estimated_gain() >= gamma);
        let zeta = scaling_zeta(k, rho, &cfg, gamma).unwrap();
        let lambda = compensation_lambda(gamma, rho).unwrap();
        let beta = preprocessing_beta(&draw, alpha, zeta, lambda, k).unwrap();
        let g = vec![scale * cfg.g_bound / 2.0; 4];
        prop_assert!(transmit_power(beta, &g) <= cfg.p_max * (1.0 + 1e-12));
    }

    #[test]
    fn xi_zero_iff_truncated(seed in any::<u64>(), rho in 0.2f64..=1.0, gamma in 0.01f64..4.0) {
        let model = EstimationModel::new(rho, 2.0).unwrap();
        let mut rng = RngStream::new(seed, 1);
        let draw = draw_channel(&model, 1.0, &mut rng).unwrap();
        let xi = effective_xi(&draw, gamma, compensation_lambda(gamma, rho).unwrap()).unwrap();
        if draw.estimated_gain() < gamma {
            prop_assert_eq!(xi, 0.0);
        }
        if rho == 1.0 && draw.estimated_gain() >= gamma {
            prop_assert!((xi - gamma.exp()).abs() < 1e-12 * gamma.exp());
        }
    }
}
