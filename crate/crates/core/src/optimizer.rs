//! Truncation-threshold selection.
//!
//! The objective is
//! `h(x) = e^x - k1·Ei(-x)·e^{2x} + k2·e^{2x}/x`, strictly convex on
//! `x > 0`, so its minimizer is the unique root of `h'` and plain bisection
//! finds it.

use serde::{Deserialize, Serialize};

use crate::aircomp::PowerConfig;
use crate::analysis::csi_penalty;
use crate::error::{domain, Error, Result};
use crate::specfun::exp_integral_ei;

/// Lower bracket end; `h'` is singular at 0.
pub const BRACKET_LO: f64 = 1e-8;
/// Default stopping tolerance on `|h'|`.
pub const DEFAULT_DERIVATIVE_TOL: f64 = 1e-10;
/// Bisection also stops once the bracket is narrower than this.
pub const BRACKET_WIDTH_TOL: f64 = 1e-12;

const BRACKET_HI_LIMIT: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// `k1 = (1-ρ²)/(2ρ²)` weighs CSI error, `k2 = σ²·max d^α/(2·P_max·ρ²)` weighs
/// receiver noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCoefficients {
    k1: f64,
    k2: f64,
}

impl ObjectiveCoefficients {
    /// Both coefficients must be finite and nonnegative and at least one must
    /// be positive, otherwise `h` is monotone and has no interior minimum.
    pub fn new(k1: f64, k2: f64) -> Result<Self> {
        if !(k1 >= 0.0) || !(k2 >= 0.0) || !k1.is_finite() || !k2.is_finite() {
            return Err(domain(
                "ObjectiveCoefficients",
                format!("coefficients must be finite and nonnegative, got ({k1}, {k2})"),
            ));
        }
        if k1 == 0.0 && k2 == 0.0 {
            return Err(Error::Degenerate(
                "k1 = k2 = 0: objective is increasing, no interior optimum".into(),
            ));
        }
        Ok(Self { k1, k2 })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }
}

/// How the threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum ThresholdMode {
    /// Minimize the full objective.
    Joint,
    /// Minimize only the noise term `k2·e^{2x}/x`.
    CommunicationOriented,
    /// Minimize only the coefficient-variance term.
    ComputationOriented,
    /// Use the given constant.
    Fixed(f64),
}

impl ThresholdMode {
    pub fn name(&self) -> &'static str {
        match self {
            ThresholdMode::Joint => "joint",
            ThresholdMode::CommunicationOriented => "communication_oriented",
            ThresholdMode::ComputationOriented => "computation_oriented",
            ThresholdMode::Fixed(_) => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub gamma_star: f64,
    /// Full objective `h(γ*)`.
    pub h_value: f64,
    /// Derivative of the objective the mode minimizes, at `γ*`.
    pub derivative_residual: f64,
    pub iterations: usize,
    pub mode: ThresholdMode,
}

/// Coefficients from the physical configuration. Noise-free systems are
/// rejected: `k2 = 0` removes the noise/participation trade-off entirely.
pub fn coefficients_from_system(rho: f64, cfg: &PowerConfig) -> Result<ObjectiveCoefficients> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(domain("coefficients_from_system", format!("rho must lie in (0, 1], got {rho}")));
    }
    cfg.validate()?;
    if cfg.sigma2 == 0.0 {
        return Err(Error::Degenerate("sigma2 = 0 gives k2 = 0".into()));
    }
    let k1 = csi_penalty(rho);
    let k2 = cfg.sigma2 * cfg.d_max_alpha / (2.0 * cfg.p_max * rho * rho);
    ObjectiveCoefficients::new(k1, k2)
}

fn check_x(func: &'static str, x: f64) -> Result<()> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain(func, format!("requires finite x > 0, got {x}")));
    }
    Ok(())
}

/// `h(x)`.
pub fn objective_h(x: f64, coef: &ObjectiveCoefficients) -> Result<f64> {
    check_x("objective_h", x)?;
    let e1 = x.exp();
    let e2 = (2.0 * x).exp();
    Ok(e1 - coef.k1 * exp_integral_ei(-x)? * e2 + coef.k2 * e2 / x)
}

/// `h'(x) = e^x - k1·e^x/x - 2k1·Ei(-x)·e^{2x} + k2·e^{2x}·(2x-1)/x²`.
pub fn derivative_h(x: f64, coef: &ObjectiveCoefficients) -> Result<f64> {
    check_x("derivative_h", x)?;
    Ok(computation_derivative(x, coef.k1)? + coef.k2 * (2.0 * x).exp() * (2.0 * x - 1.0) / (x * x))
}

/// `h''(x) = e^x + (k1·e^x/x²)·(-4x²·e^x·Ei(-x) - 3x + 1)
///          + 2k2·e^{2x}·(2x² - 2x + 1)/x³`.
///
/// The noise term carries `e^{2x}`: it is the derivative of
/// `k2·e^{2x}·(2x-1)/x²`.
pub fn second_derivative_h(x: f64, coef: &ObjectiveCoefficients) -> Result<f64> {
    check_x("second_derivative_h", x)?;
    let ex = x.exp();
    let csi = if coef.k1 == 0.0 {
        0.0
    } else {
        coef.k1 * ex / (x * x) * (-4.0 * x * x * ex * exp_integral_ei(-x)? - 3.0 * x + 1.0)
    };
    let noise = 2.0 * coef.k2 * (2.0 * x).exp() * (2.0 * x * x - 2.0 * x + 1.0) / (x * x * x);
    Ok(ex + csi + noise)
}

// derivative of e^x - k1·Ei(-x)·e^{2x}
fn computation_derivative(x: f64, k1: f64) -> Result<f64> {
    let ex = x.exp();
    if k1 == 0.0 {
        return Ok(ex);
    }
    Ok(ex - k1 * ex / x - 2.0 * k1 * exp_integral_ei(-x)? * ex * ex)
}

/// Choose the truncation threshold according to `mode`.
pub fn optimal_threshold(
    coef: &ObjectiveCoefficients,
    tol: f64,
    mode: ThresholdMode,
) -> Result<ThresholdSolution> {
    if !(tol > 0.0) {
        return Err(domain("optimal_threshold", format!("tolerance must be positive, got {tol}")));
    }
    let (gamma_star, residual, iterations) = match mode {
        ThresholdMode::Joint => bisect_root(|x| derivative_h(x, coef), tol)?,
        // d/dx e^{2x}/x = e^{2x}(2x-1)/x² vanishes at exactly 1/2
        ThresholdMode::CommunicationOriented => (0.5, 0.0, 0),
        ThresholdMode::ComputationOriented => {
            if coef.k1 == 0.0 {
                return Err(Error::Degenerate(
                    "perfect CSI: coefficient variance e^x - 1 has no interior minimum".into(),
                ));
            }
            bisect_root(|x| computation_derivative(x, coef.k1), tol)?
        }
        ThresholdMode::Fixed(g) => {
            check_x("optimal_threshold", g)?;
            (g, derivative_h(g, coef)?, 0)
        }
    };
    Ok(ThresholdSolution {
        gamma_star,
        h_value: objective_h(gamma_star, coef)?,
        derivative_residual: residual,
        iterations,
        mode,
    })
}

/// Bisection for the sign change of an increasing function on
/// `[BRACKET_LO, hi]`, with `hi` doubled from 1 until `f(hi) > 0`.
/// Returns `(root, f(root), iterations)`.
pub fn bisect_root<F>(f: F, tol: f64) -> Result<(f64, f64, usize)>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut lo = BRACKET_LO;
    let f_lo = f(lo)?;
    if f_lo >= 0.0 {
        return Err(Error::NoRoot(format!("derivative is nonnegative at {lo}: {f_lo}")));
    }
    let mut hi = 1.0;
    loop {
        let v = f(hi)?;
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::NoRoot(format!("derivative diverged at {hi}")));
        }
        if v > 0.0 {
            break;
        }
        if v == 0.0 {
            return Ok((hi, 0.0, 0));
        }
        lo = hi;
        hi *= 2.0;
        if hi > BRACKET_HI_LIMIT {
            return Err(Error::NoRoot("bracket expansion exceeded 2^64".into()));
        }
    }
    let mut iterations = 0;
    loop {
        let mid = 0.5 * (lo + hi);
        let v = f(mid)?;
        iterations += 1;
        if v.abs() <= tol || hi - lo <= BRACKET_WIDTH_TOL || mid == lo || mid == hi {
            return Ok((mid, v, iterations));
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}
