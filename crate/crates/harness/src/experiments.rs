//! Monte-Carlo verification experiments and threshold sweeps.

use airfl_core::aircomp::{aggregate, compensation_lambda, effective_xi, scaling_zeta, PowerConfig};
use airfl_core::analysis::{
    conditional_second_moment, divergence_bound, divergence_exact, divergence_with_skips, joint_box_mass,
    joint_cdf_xy, joint_pdf_box_integral, joint_pdf_total_mass, joint_pdf_xy, noise_energy, offset_c,
    skip_probability, xi_variance,
};
use airfl_core::channel::{draw_channel, EstimationModel, RngStream};
use airfl_core::config::{DistanceSpec, GammaSetting, SystemConfig};
use airfl_core::fltrain::{evaluate, ideal_aggregate, train, Federation};
use airfl_core::optimizer::{optimal_threshold, ThresholdMode, DEFAULT_DERIVATIVE_TOL};
use rayon::prelude::*;

use crate::report::SweepResult;
use crate::stats::{log_log_slope, map_chunks, sample_chunked, Moments};
use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

fn require(ok: bool, msg: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::Precondition(msg.into()))
    }
}

/// Moments of `ξ` from `n` independent channel draws.
pub fn mc_xi_moments(rho: f64, gamma_th: f64, n: usize, seed: u64) -> Result<Moments> {
    require(n >= 10_000, format!("need at least 10^4 samples, got {n}"))?;
    let model = EstimationModel::new(rho, 2.2)?;
    let lambda = compensation_lambda(gamma_th, rho)?;
    let xs = sample_chunked(n, seed, |rng| {
        let d = draw_channel(&model, 1.0, rng).expect("unit distance is valid");
        effective_xi(&d, gamma_th, lambda).expect("validated threshold")
    });
    Ok(Moments::of(&xs))
}

/// `E[(x - c)² | |ĥ|² ≥ γth]` by sampling, with `c` from `offset_c` (0 at ρ = 1).
pub fn mc_conditional_moment(rho: f64, gamma_th: f64, n: usize, seed: u64) -> Result<(Moments, f64)> {
    require(n >= 10_000, format!("need at least 10^4 samples, got {n}"))?;
    let c = if rho == 1.0 { 0.0 } else { offset_c(gamma_th, rho)? };
    let vals: Vec<f64> = sample_chunked(n, seed, |rng| {
        let h = rng.complex_normal();
        let v = rng.complex_normal();
        let r = h.norm_sqr();
        (r >= gamma_th).then(|| {
            let x = (v.conj() * h).re / r - c;
            x * x
        })
    })
    .into_iter()
    .flatten()
    .collect();
    require(vals.len() >= 4, "too few active samples")?;
    Ok((Moments::of(&vals), c))
}

/// Mean, variance and conditional second moment over a `(ρ, γth)` grid.
///
/// Cell `i` uses seed `seed + i`.
pub fn xi_grid(rhos: &[f64], gammas: &[f64], n: usize, seed: u64) -> Result<SweepResult> {
    let mut table = SweepResult::new(
        "xi_moments",
        &[
            "rho",
            "gamma_th",
            "mean_mc",
            "mean_se",
            "variance_mc",
            "variance_se",
            "variance_closed",
            "cond_moment_mc",
            "cond_moment_se",
            "cond_moment_closed",
            "offset_c",
        ],
    );
    let cells: Vec<(f64, f64)> = rhos.iter().flat_map(|&r| gammas.iter().map(move |&g| (r, g))).collect();
    for (i, &(rho, gamma)) in cells.iter().enumerate() {
        let s = seed.wrapping_add(i as u64);
        let m = mc_xi_moments(rho, gamma, n, s)?;
        let (cm, c) = mc_conditional_moment(rho, gamma, n, s)?;
        table.push(
            "",
            vec![
                rho,
                gamma,
                m.mean,
                m.se_mean,
                m.variance,
                m.se_variance,
                xi_variance(gamma, rho)?,
                cm.mean,
                cm.se_mean,
                conditional_second_moment(gamma, c)?,
                c,
            ],
        );
    }
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct JointCheck {
    /// One row per histogram bin.
    pub bins: SweepResult,
    /// Tail probability, conditional moment, window mass, total variation,
    /// normalization and CDF finite-difference error.
    pub summary: SweepResult,
    pub total_variation: f64,
}

struct ChunkTally {
    counts: Vec<u64>,
    tail: u64,
    cond_sum: f64,
    cond_sq: f64,
    cond_n: u64,
}

/// Histogram of `(x, y) = (Re{v*ĥ}/|ĥ|², -|ĥ|²)` against the analytic density.
///
/// The tail and conditional-moment rows use `γth = 1`, `c = 0`.
pub fn mc_joint_distribution_check(
    t_range: (f64, f64),
    gamma_range: (f64, f64),
    bins: usize,
    n: usize,
    seed: u64,
) -> Result<JointCheck> {
    require(n >= 1_000_000, format!("need at least 10^6 samples, got {n}"))?;
    require(bins >= 1, "need at least one bin")?;
    require(t_range.0 < t_range.1 && gamma_range.0 < gamma_range.1 && gamma_range.1 <= 0.0, "bad window")?;
    let (t0, t1) = t_range;
    let (g0, g1) = gamma_range;
    let wt = (t1 - t0) / bins as f64;
    let wg = (g1 - g0) / bins as f64;

    let tallies = map_chunks(n, seed, |rng, len| {
        let mut t = ChunkTally {
            counts: vec![0; bins * bins],
            tail: 0,
            cond_sum: 0.0,
            cond_sq: 0.0,
            cond_n: 0,
        };
        for _ in 0..len {
            let h = rng.complex_normal();
            let v = rng.complex_normal();
            let r = h.norm_sqr();
            let x = (v.conj() * h).re / r;
            let y = -r;
            if r >= 1.0 {
                t.tail += 1;
                t.cond_sum += x * x;
                t.cond_sq += x * x * x * x;
                t.cond_n += 1;
            }
            if x >= t0 && x < t1 && y >= g0 && y < g1 {
                let i = (((x - t0) / wt) as usize).min(bins - 1);
                let j = (((y - g0) / wg) as usize).min(bins - 1);
                t.counts[i * bins + j] += 1;
            }
        }
        t
    });
    let mut counts = vec![0u64; bins * bins];
    let (mut tail, mut cond_sum, mut cond_sq, mut cond_n) = (0u64, 0.0, 0.0, 0u64);
    for t in &tallies {
        counts.iter_mut().zip(&t.counts).for_each(|(a, b)| *a += b);
        tail += t.tail;
        cond_sum += t.cond_sum;
        cond_sq += t.cond_sq;
        cond_n += t.cond_n;
    }

    let nf = n as f64;
    let mut table = SweepResult::new(
        "joint_pdf_bins",
        &["t_lo", "t_hi", "gamma_lo", "gamma_hi", "mass_mc", "mass_se", "mass_analytic"],
    );
    let cells: Vec<(usize, usize)> = (0..bins).flat_map(|i| (0..bins).map(move |j| (i, j))).collect();
    let analytic = cells
        .par_iter()
        .map(|&(i, j)| {
            let t = (t0 + i as f64 * wt, t0 + (i + 1) as f64 * wt);
            let g = (g0 + j as f64 * wg, g0 + (j + 1) as f64 * wg);
            joint_pdf_box_integral(t, g, 16).map(|m| (t, g, m))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut tv = 0.0;
    let mut window_mass = 0.0;
    for (&(i, j), &(t, g, p)) in cells.iter().zip(&analytic) {
        let q = counts[i * bins + j] as f64 / nf;
        tv += (q - p).abs();
        window_mass += p;
        table.push("", vec![t.0, t.1, g.0, g.1, q, (q * (1.0 - q) / nf).sqrt(), p]);
    }
    tv *= 0.5;

    let mut summary = SweepResult::new("joint_pdf_summary", &["estimate_mc", "estimate_se", "reference"]);
    let p_tail = tail as f64 / nf;
    summary.push("tail_prob_gamma1", vec![p_tail, (p_tail * (1.0 - p_tail) / nf).sqrt(), (-1f64).exp()]);
    let cm = cond_sum / cond_n as f64;
    let cm_var = (cond_sq / cond_n as f64 - cm * cm) * cond_n as f64 / (cond_n as f64 - 1.0);
    summary.push(
        "cond_moment_gamma1_c0",
        vec![cm, (cm_var / cond_n as f64).sqrt(), conditional_second_moment(1.0, 0.0)?],
    );
    let in_window = counts.iter().sum::<u64>() as f64 / nf;
    summary.push(
        "window_mass",
        vec![in_window, (in_window * (1.0 - in_window) / nf).sqrt(), joint_box_mass(t_range, gamma_range)?],
    );
    summary.push("window_mass_quadrature", vec![window_mass, 0.0, joint_box_mass(t_range, gamma_range)?]);
    summary.push("total_variation", vec![tv, 0.0, 0.0]);
    summary.push("pdf_total_mass", vec![joint_pdf_total_mass(1e-11)?, 0.0, 1.0]);
    summary.push("cdf_fd_max_abs_error", vec![cdf_fd_max_error(t_range, gamma_range, 13)?, 0.0, 0.0]);
    Ok(JointCheck {
        bins: table,
        summary,
        total_variation: tv,
    })
}

/// Largest `|∂²F/∂t∂γ - pdf|` over an `m × m` grid, central differences with
/// step `1e-3`.
pub fn cdf_fd_max_error(t_range: (f64, f64), gamma_range: (f64, f64), m: usize) -> Result<f64> {
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let t = t_range.0 + (t_range.1 - t_range.0) * i as f64 / (m - 1) as f64;
            let g = gamma_range.0 + (gamma_range.1 - gamma_range.0) * j as f64 / (m - 1) as f64;
            let f = |a, b| joint_cdf_xy(a, b);
            let fd = (f(t + h, g + h)? - f(t - h, g + h)? - f(t + h, g - h)? + f(t - h, g - h)?) / (4.0 * h * h);
            worst = worst.max((fd - joint_pdf_xy(t, g)?).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergencePoint {
    pub k_devices: usize,
    pub gamma_th: f64,
    pub mc: f64,
    pub se: f64,
    pub exact: f64,
    /// Expectation with skipped rounds (no noise when nobody transmits).
    pub skip_aware: f64,
    pub skip_probability: f64,
    pub noise_term: f64,
    /// Printed closed-form bound, for reference.
    pub bound: f64,
    pub d_model: usize,
}

fn divergence_trials(
    grads: &[Vec<f64>],
    distances: &[f64],
    model: &EstimationModel,
    gamma: f64,
    power: &PowerConfig,
    n_trials: usize,
    seed: u64,
) -> Result<DivergencePoint> {
    let k = grads.len();
    let ideal = ideal_aggregate(grads)?;
    let errs = sample_chunked(n_trials, seed, |rng: &mut RngStream| {
        let draws: Vec<_> = distances
            .iter()
            .map(|&d| draw_channel(model, d, rng).expect("validated distance"))
            .collect();
        let out = aggregate(grads, &draws, gamma, model.rho(), power, rng).expect("validated inputs");
        out.g_hat.iter().zip(&ideal).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    });
    let m = Moments::of(&errs);
    let grad_sq: Vec<f64> = grads.iter().map(|g| g.iter().map(|x| x * x).sum()).collect();
    let zeta = scaling_zeta(k, model.rho(), power, gamma)?;
    Ok(DivergencePoint {
        k_devices: k,
        gamma_th: gamma,
        mc: m.mean,
        se: m.se_mean,
        exact: divergence_exact(&grad_sq, k, gamma, model.rho(), power, ideal.len())?,
        skip_aware: divergence_with_skips(&grad_sq, k, gamma, model.rho(), power, ideal.len())?,
        skip_probability: skip_probability(k, gamma)?,
        noise_term: noise_energy(power.sigma2, zeta, ideal.len()),
        bound: divergence_bound(k, gamma, model.rho(), power)?,
        d_model: ideal.len(),
    })
}

/// Aggregation error with the gradients frozen at the first round of `cfg`.
pub fn mc_weight_divergence(cfg: &SystemConfig, n_trials: usize) -> Result<DivergencePoint> {
    require(n_trials >= 1_000, format!("need at least 10^3 trials, got {n_trials}"))?;
    let fed = Federation::build(cfg)?;
    let mut state = fed.initial_state()?;
    let grads = fed.round_gradients(&mut state)?;
    let sys = &fed.system;
    divergence_trials(&grads, &sys.distances, &sys.estimation, sys.gamma_th, &fed.power, n_trials, cfg.seed)
}

/// The default configuration, five perturbations of it, and a high-threshold
/// case labelled `high_skip` where rounds with no active device are common.
/// The σ² × 100 variant keeps the base threshold so that only the noise term
/// moves.
pub fn perturbed_configs(base: &SystemConfig) -> Result<Vec<(String, SystemConfig)>> {
    let mut out = vec![("base".to_string(), base.clone())];
    let mut c = base.clone();
    c.sigma2_dbm += 20.0;
    c.gamma_th = GammaSetting::Fixed(base.resolve()?.gamma_th);
    out.push(("sigma2_x100".into(), c));
    let mut c = base.clone();
    c.rho = 0.5;
    out.push(("rho_0.5".into(), c));
    let mut c = base.clone();
    c.gamma_th = GammaSetting::Fixed(0.6);
    out.push(("gamma_0.6".into(), c));
    let mut c = base.clone();
    c.k_devices = 20;
    c.distances = DistanceSpec::Uniform { d_max: 500.0 };
    out.push(("k_20".into(), c));
    let mut c = base.clone();
    c.alpha = 3.0;
    c.p_max = 1.0;
    out.push(("alpha_3_pmax_1".into(), c));
    let mut c = base.clone();
    c.gamma_th = GammaSetting::Fixed(1.5);
    out.push(("gamma_1.5_high_skip".into(), c));
    Ok(out)
}

pub fn divergence_table(configs: &[(String, SystemConfig)], n_trials: usize) -> Result<SweepResult> {
    let mut table = SweepResult::new(
        "weight_divergence",
        &[
            "k_devices",
            "gamma_th",
            "divergence_mc",
            "divergence_se",
            "divergence_exact",
            "divergence_skip_aware",
            "skip_probability",
            "noise_term",
            "printed_bound",
            "d_model",
            "noise_per_dim",
        ],
    );
    for (label, cfg) in configs {
        let p = mc_weight_divergence(cfg, n_trials)?;
        table.push(
            label.clone(),
            vec![
                p.k_devices as f64,
                p.gamma_th,
                p.mc,
                p.se,
                p.exact,
                p.skip_aware,
                p.skip_probability,
                p.noise_term,
                p.bound,
                p.d_model as f64,
                p.noise_term / p.d_model as f64,
            ],
        );
    }
    Ok(table)
}

/// Divergence against `K` with unit-norm gradients, all devices at 250 m,
/// `G = 1` and the threshold of `base`. Returns the table and the fitted
/// log-log slope of the sampled divergence.
pub fn k_scaling(base: &SystemConfig, ks: &[usize], n_trials: usize) -> Result<(SweepResult, f64)> {
    require(ks.len() >= 2, "need at least two K values")?;
    require(n_trials >= 1_000, format!("need at least 10^3 trials, got {n_trials}"))?;
    let resolved = base.resolve()?;
    let gamma = resolved.gamma_th;
    let model = resolved.estimation;
    let d: f64 = 250.0;
    let power = PowerConfig::new(resolved.p_max, resolved.sigma2, 1.0, d.powf(model.alpha()))?;
    let dim = base.train.n_features;
    let mut table = SweepResult::new(
        "divergence_vs_k",
        &["k_devices", "divergence_mc", "divergence_se", "divergence_exact", "noise_term", "printed_bound"],
    );
    let mut mc = Vec::new();
    for &k in ks {
        let mut rng = RngStream::new(base.seed, 7);
        let grads: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let g: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                g.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let p = divergence_trials(&grads, &vec![d; k], &model, gamma, &power, n_trials, base.seed)?;
        table.push("", vec![k as f64, p.mc, p.se, p.exact, p.noise_term, p.bound]);
        mc.push(p.mc);
    }
    let ks_f: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    Ok((table, log_log_slope(&ks_f, &mc)))
}

/// Label of a sweep point.
pub fn point_label(setting: GammaSetting) -> String {
    match setting {
        GammaSetting::Fixed(_) => "fixed".into(),
        GammaSetting::Optimize(m) => m.name().into(),
    }
}

/// Final accuracy and mean measured divergence per threshold, averaged over
/// `repetitions` seeds (repetition `r` shifts both seeds by `r`).
pub fn sweep_threshold(
    base: &SystemConfig,
    gammas: &[f64],
    modes: &[ThresholdMode],
    repetitions: usize,
) -> Result<SweepResult> {
    require(gammas.len() >= 8, format!("need at least 8 thresholds, got {}", gammas.len()))?;
    require(repetitions >= 3, format!("need at least 3 repetitions, got {repetitions}"))?;
    let mut points: Vec<GammaSetting> = gammas.iter().map(|&g| GammaSetting::Fixed(g)).collect();
    points.extend(modes.iter().map(|&m| GammaSetting::from(m)));
    let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| (0..repetitions as u64).map(move |r| (p, r))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(p, r)| {
            let mut cfg = base.clone();
            cfg.gamma_th = points[p];
            cfg.seed = base.seed.wrapping_add(r);
            cfg.train.seed = base.train.seed.wrapping_add(r);
            train(&cfg)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let mut table = SweepResult::new(
        "threshold_sweep",
        &[
            "gamma_th",
            "accuracy_mc",
            "accuracy_se",
            "divergence_mc",
            "divergence_se",
            "predicted_divergence",
            "skipped_fraction",
        ],
    );
    for (p, setting) in points.iter().enumerate() {
        let traces: Vec<_> = runs[p * repetitions..(p + 1) * repetitions].iter().collect();
        let acc: Vec<f64> = traces.iter().map(|t| t.final_accuracy()).collect();
        let div: Vec<f64> = traces.iter().map(|t| t.mean_divergence()).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let se = |v: &[f64]| {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0) / v.len() as f64).sqrt()
        };
        let predicted: Vec<f64> = traces
            .iter()
            .map(|t| t.records.iter().map(|r| r.predicted_divergence).sum::<f64>() / t.records.len() as f64)
            .collect();
        let skipped: Vec<f64> = traces
            .iter()
            .map(|t| t.records.iter().filter(|r| r.skipped).count() as f64 / t.records.len() as f64)
            .collect();
        let gamma = match setting {
            GammaSetting::Fixed(g) => *g,
            GammaSetting::Optimize(_) => mean(&traces.iter().map(|t| t.gamma_th).collect::<Vec<_>>()),
        };
        table.push(
            point_label(*setting),
            vec![gamma, mean(&acc), se(&acc), mean(&div), se(&div), mean(&predicted), mean(&skipped)],
        );
    }
    Ok(table)
}

/// `γ*` and `h(γ*)` under every threshold rule for the resolved system.
pub fn threshold_table(cfg: &SystemConfig) -> Result<SweepResult> {
    let resolved = cfg.resolve()?;
    let coef = resolved.coefficients.ok_or_else(|| {
        HarnessError::Precondition("threshold optimization needs sigma2 > 0".into())
    })?;
    let mut table = SweepResult::new("optimal_threshold", &["gamma_star", "h_value", "derivative_residual", "k1", "k2"]);
    for mode in [ThresholdMode::Joint, ThresholdMode::CommunicationOriented, ThresholdMode::ComputationOriented] {
        match optimal_threshold(&coef, DEFAULT_DERIVATIVE_TOL, mode) {
            Ok(s) => table.push(mode.name(), vec![s.gamma_star, s.h_value, s.derivative_residual, coef.k1(), coef.k2()]),
            Err(airfl_core::Error::Degenerate(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(table)
}

/// Per-round records of one training run.
pub fn training_table(cfg: &SystemConfig) -> Result<SweepResult> {
    let fed = Federation::build(cfg)?;
    let init = fed.initial_state()?.params;
    let (test_loss, test_accuracy) = evaluate(&fed.model, &init, &fed.test)?;
    let t = fed.run(cfg.train.aggregation)?;
    let mut table = SweepResult::new(
        "training_trace",
        &[
            "round",
            "train_loss",
            "test_loss",
            "test_accuracy",
            "divergence",
            "predicted_divergence",
            "active_devices",
            "skipped",
            "power_violations",
            "max_grad_norm",
        ],
    );
    table.push("initial", vec![0.0, t.initial_train_loss, test_loss, test_accuracy, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    for r in &t.records {
        table.push(
            "",
            vec![
                r.round as f64,
                r.train_loss,
                r.test_loss,
                r.test_accuracy,
                r.divergence,
                r.predicted_divergence,
                r.active_devices as f64,
                f64::from(u8::from(r.skipped)),
                r.power_violations as f64,
                r.max_grad_norm,
            ],
        );
    }
    Ok(table)
}
