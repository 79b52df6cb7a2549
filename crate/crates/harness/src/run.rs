//! Experiment descriptions, pass/fail checks, run manifests and replay.
//!
//! A run directory holds one CSV per table and `manifest.toml`, which records
//! the configuration as given, the experiment parameters, the resolved
//! system (σ² in watts, distances, threshold) and the git blob hash of each
//! CSV. Replaying a manifest re-executes the experiment and compares hashes.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use airfl_core::config::SystemConfig;
use airfl_core::optimizer::ThresholdMode;
use serde::{Deserialize, Serialize};

use crate::experiments::{
    divergence_table, k_scaling, mc_joint_distribution_check, perturbed_configs, sweep_threshold,
    threshold_table, training_table, xi_grid,
};
use crate::report::{git_blob_hash, SweepResult};
use crate::stats::{within_se, SE_MULTIPLIER};
use crate::HarnessError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Experiment {
    VerifyXi {
        rhos: Vec<f64>,
        gammas: Vec<f64>,
        samples: usize,
    },
    VerifyPdf {
        samples: usize,
        bins: usize,
        t_range: [f64; 2],
        gamma_range: [f64; 2],
    },
    VerifyDivergence {
        trials: usize,
        k_sweep: Vec<usize>,
    },
    OptimizeThreshold,
    SweepThreshold {
        gammas: Vec<f64>,
        repetitions: usize,
    },
    Train,
}

impl Experiment {
    pub fn verify_xi() -> Self {
        Experiment::VerifyXi {
            rhos: vec![0.5, 0.8, 0.95, 1.0],
            gammas: vec![0.1, 0.5, 1.0, 2.0],
            samples: 1_000_000,
        }
    }

    pub fn verify_pdf() -> Self {
        Experiment::VerifyPdf {
            samples: 10_000_000,
            bins: 40,
            t_range: [-3.0, 3.0],
            gamma_range: [-4.0, -0.1],
        }
    }

    pub fn verify_divergence(trials: usize) -> Self {
        Experiment::VerifyDivergence {
            trials,
            k_sweep: vec![5, 10, 20, 40],
        }
    }

    pub fn sweep_threshold() -> Self {
        Experiment::SweepThreshold {
            gammas: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
            repetitions: 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VerifyXi { .. } => "verify-xi",
            Experiment::VerifyPdf { .. } => "verify-pdf",
            Experiment::VerifyDivergence { .. } => "verify-divergence",
            Experiment::OptimizeThreshold => "optimize-threshold",
            Experiment::SweepThreshold { .. } => "sweep-threshold",
            Experiment::Train => "train",
        }
    }

    /// Override the sample or trial count, where the experiment has one.
    pub fn with_count(mut self, n: usize) -> Self {
        match &mut self {
            Experiment::VerifyXi { samples, .. } | Experiment::VerifyPdf { samples, .. } => *samples = n,
            Experiment::VerifyDivergence { trials, .. } => *trials = n,
            _ => {}
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub tables: Vec<SweepResult>,
    pub checks: Vec<Check>,
    /// Informational lines that are not pass/fail.
    pub notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    fn se_check(&mut self, name: impl Into<String>, est: f64, se: f64, target: f64) {
        let detail = format!("{est:.6e} ± {se:.2e} vs {target:.6e} ({SE_MULTIPLIER} SE)");
        self.check(name, within_se(est, se, target), detail);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Run `exp` on `cfg`.
pub fn execute(cfg: &SystemConfig, exp: &Experiment) -> Result<Outcome, HarnessError> {
    let mut out = Outcome::default();
    match exp {
        Experiment::VerifyXi { rhos, gammas, samples } => verify_xi(&mut out, cfg, rhos, gammas, *samples)?,
        Experiment::VerifyPdf {
            samples,
            bins,
            t_range,
            gamma_range,
        } => {
            let t = (t_range[0], t_range[1]);
            let g = (gamma_range[0], gamma_range[1]);
            let jc = mc_joint_distribution_check(t, g, *bins, *samples, cfg.seed)?;
            let s = &jc.summary;
            let row = |label: &str| s.rows.iter().find(|r| r.label == label).expect("summary row").values.clone();
            out.check("pdf total variation", jc.total_variation < 0.02, format!("{:.5} < 0.02", jc.total_variation));
            let mass = row("pdf_total_mass")[0];
            out.check("pdf normalization", (mass - 1.0).abs() < 1e-6, format!("|{mass:.12} - 1| < 1e-6"));
            let fd = row("cdf_fd_max_abs_error")[0];
            out.check("cdf finite difference", fd < 1e-4, format!("max |∂²F - f| = {fd:.2e} < 1e-4"));
            for label in ["tail_prob_gamma1", "cond_moment_gamma1_c0", "window_mass"] {
                let v = row(label);
                out.se_check(label, v[0], v[1], v[2]);
            }
            out.tables.push(jc.summary);
            out.tables.push(jc.bins);
        }
        Experiment::VerifyDivergence { trials, k_sweep } => {
            let configs = perturbed_configs(cfg)?;
            let table = divergence_table(&configs, *trials)?;
            for r in &table.rows {
                let v = &r.values;
                if !r.label.ends_with("high_skip") {
                    out.se_check(format!("divergence {} vs exact", r.label), v[2], v[3], v[4]);
                }
                out.se_check(format!("divergence {} vs skip-aware", r.label), v[2], v[3], v[5]);
                out.notes.push(format!(
                    "{}: exact {:.4e}, skip probability {:.2e}, printed bound {:.4e}{}",
                    r.label,
                    v[4],
                    v[6],
                    v[8],
                    if v[4] > v[8] { " (exact exceeds bound)" } else { "" }
                ));
            }
            let noise = table.values("noise_term");
            let ratio = noise[1] / noise[0];
            out.check("noise term scales with sigma2", (ratio / 100.0 - 1.0).abs() < 1e-9, format!("ratio {ratio:.9}"));
            out.tables.push(table);
            if !k_sweep.is_empty() {
                let (kt, slope) = k_scaling(cfg, k_sweep, *trials)?;
                let mc = kt.values("divergence_mc");
                let se = kt.values("divergence_se");
                let decreasing = mc.windows(2).zip(se.windows(2)).all(|(m, s)| m[1] < m[0] + SE_MULTIPLIER * s[0].hypot(s[1]));
                out.check("divergence decreases with K", decreasing, mc.iter().map(|m| format!("{m:.4e}")).collect::<Vec<_>>().join(" > "));
                let closer = if (slope + 1.0).abs() < (slope + 2.0).abs() { "1/K" } else { "1/K^2" };
                out.notes.push(format!("log-log slope of divergence vs K: {slope:.3} (closer to {closer})"));
                out.tables.push(kt);
            }
        }
        Experiment::OptimizeThreshold => {
            let t = threshold_table(cfg)?;
            for r in &t.rows {
                out.notes.push(format!(
                    "{}: gamma* = {:.10}, h(gamma*) = {:.10}, k1 = {:.6e}, k2 = {:.6e}",
                    r.label, r.values[0], r.values[1], r.values[3], r.values[4]
                ));
            }
            out.tables.push(t);
        }
        Experiment::SweepThreshold { gammas, repetitions } => {
            let modes = [ThresholdMode::Joint, ThresholdMode::CommunicationOriented, ThresholdMode::ComputationOriented];
            let modes: Vec<ThresholdMode> = if cfg.rho == 1.0 { modes[..2].to_vec() } else { modes.to_vec() };
            let t = sweep_threshold(cfg, gammas, &modes, *repetitions)?;
            sweep_checks(&mut out, &t, gammas);
            out.tables.push(t);
        }
        Experiment::Train => out.tables.push(training_table(cfg)?),
    }
    Ok(out)
}

fn verify_xi(out: &mut Outcome, cfg: &SystemConfig, rhos: &[f64], gammas: &[f64], n: usize) -> Result<(), HarnessError> {
    let t = xi_grid(rhos, gammas, n, cfg.seed)?;
    for r in &t.rows {
        let v = &r.values;
        let cell = format!("(rho {}, gamma {})", v[0], v[1]);
        out.se_check(format!("xi mean {cell}"), v[2], v[3], 1.0);
        out.se_check(format!("xi variance {cell}"), v[4], v[5], v[6]);
        if v[6] > 0.1 {
            let rel = (v[4] - v[6]).abs() / v[6];
            out.check(format!("xi variance 2% {cell}"), rel < 0.02, format!("relative error {rel:.4}"));
        }
        out.se_check(format!("conditional moment {cell}"), v[7], v[8], v[9]);
    }
    // variance falls as CSI improves, for every threshold
    for &g in gammas {
        let mut cells: Vec<&Vec<f64>> = t.rows.iter().map(|r| &r.values).filter(|v| v[1] == g).collect();
        cells.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let closed = cells.windows(2).all(|w| w[1][6] < w[0][6]);
        let sampled = cells
            .windows(2)
            .all(|w| w[1][4] < w[0][4] + SE_MULTIPLIER * w[0][5].hypot(w[1][5]));
        out.check(
            format!("variance decreasing in rho (gamma {g})"),
            closed && sampled,
            format!("closed form {closed}, sampled {sampled}"),
        );
    }
    out.tables.push(t);
    Ok(())
}

fn sweep_checks(out: &mut Outcome, t: &SweepResult, gammas: &[f64]) {
    let row = |label: &str, gamma: Option<f64>| {
        t.rows
            .iter()
            .find(|r| r.label == label && gamma.is_none_or(|g| r.values[0] == g))
            .map(|r| r.values.clone())
    };
    let lo = gammas.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gammas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if let (Some(j), Some(a), Some(b)) = (row("joint", None), row("fixed", Some(lo)), row("fixed", Some(hi))) {
        out.check(
            "accuracy at optimized threshold",
            j[1] >= a[1] && j[1] >= b[1],
            format!("{:.4} vs {:.4} (gamma {lo}) and {:.4} (gamma {hi})", j[1], a[1], b[1]),
        );
        out.check(
            "divergence at optimized threshold",
            j[3] <= a[3] && j[3] <= b[3],
            format!("{:.4e} vs {:.4e} (gamma {lo}) and {:.4e} (gamma {hi})", j[3], a[3], b[3]),
        );
    }
    if let Some(c) = row("communication_oriented", None) {
        out.check("communication-oriented threshold", c[0] == 0.5, format!("gamma {}", c[0]));
    }
}

/// The resolved system, recorded for the reader; replay re-derives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRecord {
    pub sigma2_watts: f64,
    pub d_max_alpha: f64,
    pub gamma_th: f64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub experiment: Experiment,
    pub config: SystemConfig,
    pub resolved: Option<ResolvedRecord>,
    /// CSV file name → git blob hash.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn load_config(path: &Path) -> Result<SystemConfig, HarnessError> {
    let cfg: SystemConfig = toml::from_str(&fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Write every table and the manifest into `dir`. Nothing is written when
/// the outcome has no tables or a table is invalid.
pub fn write_run(dir: &Path, cfg: &SystemConfig, exp: &Experiment, outcome: &Outcome) -> Result<Manifest, HarnessError> {
    if outcome.tables.is_empty() {
        return Err(HarnessError::Empty(exp.name().into()));
    }
    let texts = outcome
        .tables
        .iter()
        .map(|t| Ok((format!("{}.csv", t.name), t.to_csv()?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let resolved = cfg.resolve().ok().map(|r| ResolvedRecord {
        sigma2_watts: r.sigma2,
        d_max_alpha: r.d_max_alpha,
        gamma_th: r.gamma_th,
        distances: r.distances,
    });
    let manifest = Manifest {
        tool: format!("airfl {}", env!("CARGO_PKG_VERSION")),
        experiment: exp.clone(),
        config: cfg.clone(),
        resolved,
        outputs: texts.iter().map(|(f, t)| (f.clone(), git_blob_hash(t.as_bytes()))).collect(),
    };
    let manifest_text = toml::to_string(&manifest)?;
    fs::create_dir_all(dir)?;
    for (file, text) in &texts {
        fs::write(dir.join(file), text)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest_text)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub manifest: Manifest,
    pub outcome: Outcome,
    /// Files whose hash differs from the manifest, or that are missing.
    pub mismatches: Vec<String>,
}

/// Re-run the experiment recorded in `manifest_path`, writing into `out_dir`.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport, HarnessError> {
    let manifest = Manifest::load(manifest_path)?;
    let outcome = execute(&manifest.config, &manifest.experiment)?;
    let fresh = write_run(out_dir, &manifest.config, &manifest.experiment, &outcome)?;
    let mut mismatches: Vec<String> = manifest
        .outputs
        .iter()
        .filter(|(f, h)| fresh.outputs.get(*f) != Some(h))
        .map(|(f, _)| f.clone())
        .collect();
    mismatches.extend(fresh.outputs.keys().filter(|f| !manifest.outputs.contains_key(*f)).cloned());
    Ok(ReplayReport {
        manifest,
        outcome,
        mismatches,
    })
}
