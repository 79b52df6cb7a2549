//! Experiment configuration and its resolution into concrete parameters.
//!
//! Config files are TOML. `gamma_th` is either a number or one of
//! `"optimize"` (alias `"joint"`), `"communication_oriented"`,
//! `"computation_oriented"`. `distances` is either an explicit list in meters
//! or `"uniform(0,500]"`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aircomp::{dbm_to_watts, PowerConfig};
use crate::channel::{uniform_distances, EstimationModel, RngStream};
use crate::error::{Error, Result};
use crate::fltrain::TrainConfig;
use crate::optimizer::{
    coefficients_from_system, optimal_threshold, ObjectiveCoefficients, ThresholdMode,
    ThresholdSolution, DEFAULT_DERIVATIVE_TOL,
};

/// Stream ids carved out of a seed. Monte-Carlo trials use
/// `TRIAL_BASE + trial index`.
pub mod streams {
    pub const DISTANCES: u64 = 1;
    pub const DATA: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const INIT: u64 = 4;
    pub const BATCHES: u64 = 5;
    pub const CHANNEL: u64 = 6;
    pub const TRIAL_BASE: u64 = 1 << 32;
}

/// Truncation threshold: a constant or a rule for choosing one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaRepr", into = "GammaRepr")]
pub enum GammaSetting {
    Fixed(f64),
    Optimize(ThresholdMode),
}

impl GammaSetting {
    pub fn mode(&self) -> ThresholdMode {
        match *self {
            GammaSetting::Fixed(g) => ThresholdMode::Fixed(g),
            GammaSetting::Optimize(m) => m,
        }
    }
}

impl From<ThresholdMode> for GammaSetting {
    fn from(m: ThresholdMode) -> Self {
        match m {
            ThresholdMode::Fixed(g) => GammaSetting::Fixed(g),
            other => GammaSetting::Optimize(other),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GammaRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<GammaRepr> for GammaSetting {
    type Error = String;

    fn try_from(r: GammaRepr) -> std::result::Result<Self, String> {
        match r {
            GammaRepr::Value(v) if v > 0.0 && v.is_finite() => Ok(GammaSetting::Fixed(v)),
            GammaRepr::Value(v) => Err(format!("gamma_th must be positive, got {v}")),
            GammaRepr::Name(s) => match s.as_str() {
                "optimize" | "joint" => Ok(GammaSetting::Optimize(ThresholdMode::Joint)),
                "communication_oriented" => {
                    Ok(GammaSetting::Optimize(ThresholdMode::CommunicationOriented))
                }
                "computation_oriented" => {
                    Ok(GammaSetting::Optimize(ThresholdMode::ComputationOriented))
                }
                other => Err(format!("unknown gamma_th rule {other:?}")),
            },
        }
    }
}

impl From<GammaSetting> for GammaRepr {
    fn from(g: GammaSetting) -> Self {
        match g {
            GammaSetting::Fixed(v) => GammaRepr::Value(v),
            GammaSetting::Optimize(ThresholdMode::Joint) => GammaRepr::Name("optimize".into()),
            GammaSetting::Optimize(m) => GammaRepr::Name(m.name().into()),
        }
    }
}

/// Device distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistanceRepr", into = "DistanceRepr")]
pub enum DistanceSpec {
    Explicit(Vec<f64>),
    /// Uniform on `(0, d_max]`, drawn once per experiment.
    Uniform { d_max: f64 },
}

impl fmt::Display for DistanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceSpec::Explicit(v) => write!(f, "{v:?}"),
            DistanceSpec::Uniform { d_max } => write!(f, "uniform(0,{d_max}]"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DistanceRepr {
    List(Vec<f64>),
    Text(String),
}

impl TryFrom<DistanceRepr> for DistanceSpec {
    type Error = String;

    fn try_from(r: DistanceRepr) -> std::result::Result<Self, String> {
        match r {
            DistanceRepr::List(v) => {
                if v.iter().all(|d| *d > 0.0 && d.is_finite()) {
                    Ok(DistanceSpec::Explicit(v))
                } else {
                    Err("distances must be positive".into())
                }
            }
            DistanceRepr::Text(s) => {
                let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
                let inner = compact
                    .strip_prefix("uniform(0,")
                    .and_then(|r| r.strip_suffix(']').or_else(|| r.strip_suffix(')')))
                    .ok_or_else(|| format!("expected \"uniform(0,R]\", got {s:?}"))?;
                let d_max: f64 = inner.parse().map_err(|e| format!("bad d_max {inner:?}: {e}"))?;
                if d_max > 0.0 && d_max.is_finite() {
                    Ok(DistanceSpec::Uniform { d_max })
                } else {
                    Err(format!("d_max must be positive, got {d_max}"))
                }
            }
        }
    }
}

impl From<DistanceSpec> for DistanceRepr {
    fn from(d: DistanceSpec) -> Self {
        match d {
            DistanceSpec::Explicit(v) => DistanceRepr::List(v),
            d @ DistanceSpec::Uniform { .. } => DistanceRepr::Text(d.to_string()),
        }
    }
}

/// Physical and learning parameters of one experiment.
///
/// Defaults: K = 10, α = 2.2, P_max = 0.1 W, σ² = -40 dBm, η = 0.005,
/// distances uniform on (0, 500] m. ρ defaults to 0.8.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub k_devices: usize,
    pub rho: f64,
    pub gamma_th: GammaSetting,
    pub alpha: f64,
    /// Watts.
    pub p_max: f64,
    /// Receiver noise power in dBm; converted to watts in [`SystemConfig::resolve`].
    pub sigma2_dbm: f64,
    pub distances: DistanceSpec,
    /// Gradient-norm bound for power control. Calibrated by a warm-up pass
    /// when absent.
    pub g_bound: Option<f64>,
    pub seed: u64,
    pub trials: usize,
    pub train: TrainConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            k_devices: 10,
            rho: 0.8,
            gamma_th: GammaSetting::Optimize(ThresholdMode::Joint),
            alpha: 2.2,
            p_max: 0.1,
            sigma2_dbm: -40.0,
            distances: DistanceSpec::Uniform { d_max: 500.0 },
            g_bound: None,
            seed: 2024,
            trials: 10_000,
            train: TrainConfig::default(),
        }
    }
}

/// Concrete parameters derived from a [`SystemConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSystem {
    pub k_devices: usize,
    pub estimation: EstimationModel,
    pub distances: Vec<f64>,
    /// Watts.
    pub sigma2: f64,
    pub p_max: f64,
    pub d_max_alpha: f64,
    pub gamma_th: f64,
    pub coefficients: Option<ObjectiveCoefficients>,
    pub threshold: ThresholdSolution,
}

impl ResolvedSystem {
    pub fn rho(&self) -> f64 {
        self.estimation.rho()
    }

    pub fn alpha(&self) -> f64 {
        self.estimation.alpha()
    }

    pub fn power(&self, g_bound: f64) -> Result<PowerConfig> {
        PowerConfig::new(self.p_max, self.sigma2, g_bound, self.d_max_alpha)
    }

    /// Same system with a different threshold rule.
    pub fn with_gamma(&self, setting: GammaSetting) -> Result<Self> {
        let (gamma_th, threshold) = choose_threshold(self.coefficients.as_ref(), setting)?;
        Ok(Self {
            gamma_th,
            threshold,
            ..self.clone()
        })
    }
}

fn choose_threshold(
    coefficients: Option<&ObjectiveCoefficients>,
    setting: GammaSetting,
) -> Result<(f64, ThresholdSolution)> {
    let mode = setting.mode();
    let solution = match (coefficients, mode) {
        (Some(c), m) => optimal_threshold(c, DEFAULT_DERIVATIVE_TOL, m)?,
        (None, ThresholdMode::Fixed(g)) => ThresholdSolution {
            gamma_star: g,
            h_value: f64::NAN,
            derivative_residual: f64::NAN,
            iterations: 0,
            mode,
        },
        (None, ThresholdMode::CommunicationOriented) => ThresholdSolution {
            gamma_star: 0.5,
            h_value: f64::NAN,
            derivative_residual: 0.0,
            iterations: 0,
            mode,
        },
        (None, m) => {
            return Err(Error::Degenerate(format!(
                "threshold rule {} needs sigma2 > 0 and rho < 1 or sigma2 > 0",
                m.name()
            )))
        }
    };
    Ok((solution.gamma_star, solution))
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_devices == 0 {
            return Err(Error::Usage("k_devices must be at least 1".into()));
        }
        if !(self.p_max > 0.0) || !self.sigma2_dbm.is_finite() {
            return Err(Error::Usage("p_max must be positive and sigma2_dbm finite".into()));
        }
        if let Some(g) = self.g_bound {
            if !(g > 0.0) {
                return Err(Error::Usage(format!("g_bound must be positive, got {g}")));
            }
        }
        if let DistanceSpec::Explicit(d) = &self.distances {
            if d.len() != self.k_devices {
                return Err(Error::Usage(format!(
                    "{} distances for {} devices",
                    d.len(),
                    self.k_devices
                )));
            }
        }
        EstimationModel::new(self.rho, self.alpha)?;
        self.train.validate()
    }

    /// Draw distances, convert σ² to watts and settle the threshold.
    pub fn resolve(&self) -> Result<ResolvedSystem> {
        self.validate()?;
        let estimation = EstimationModel::new(self.rho, self.alpha)?;
        let distances = match &self.distances {
            DistanceSpec::Explicit(d) => d.clone(),
            DistanceSpec::Uniform { d_max } => {
                let mut rng = RngStream::new(self.seed, streams::DISTANCES);
                uniform_distances(self.k_devices, *d_max, &mut rng)?
            }
        };
        let d_max_alpha = distances
            .iter()
            .map(|d| d.powf(self.alpha))
            .fold(0.0, f64::max);
        let sigma2 = dbm_to_watts(self.sigma2_dbm);
        // k1 and k2 do not involve G; any positive placeholder works here.
        let probe = PowerConfig::new(self.p_max, sigma2, 1.0, d_max_alpha)?;
        let coefficients = coefficients_from_system(self.rho, &probe).ok();
        let (gamma_th, threshold) = choose_threshold(coefficients.as_ref(), self.gamma_th)?;
        Ok(ResolvedSystem {
            k_devices: self.k_devices,
            estimation,
            distances,
            sigma2,
            p_max: self.p_max,
            d_max_alpha,
            gamma_th,
            coefficients,
            threshold,
        })
    }
}
