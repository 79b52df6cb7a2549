//! Real-valued special functions used by the closed-form statistics.
//!
//! Everything here is pure and deterministic. Accuracy targets are part of
//! the test contract rather than runtime checks:
//!
//! | function | range         | relative error |
//! |----------|---------------|----------------|
//! | `Ei`     | 1e-6 ≤ |x| ≤ 50 | 1e-12 (away from the zero of Ei near 0.3725) |
//! | `erf`    | |x| ≤ 6        | 1e-12          |
//! | `erfc`   | x ≤ 10         | 1e-10          |
//!
//! Regimes:
//! - `Ei(x)`, x < 0: convergent series for |x| ≤ 1, Lentz continued fraction
//!   for E1(|x|) beyond. The series cancels badly for large negative x
//!   (Ei(-8) ≈ -3.8e-5 against partial sums near 50), so the seam sits at 1.
//! - `Ei(x)`, x > 0: series (all terms positive) up to 40, asymptotic
//!   expansion above.
//! - `erf`: positive-term series `e^{-x²} Σ 2ⁿx^{2n+1}/(2n+1)!!` for |x| < 3,
//!   `1 - erfc` above.
//! - `erfc`: `1 - erf` for x < 2, continued fraction for x ≥ 2.

use crate::error::{domain, Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const EPS: f64 = 1e-17;
const MAX_TERMS: usize = 5000;
const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Relative/absolute tolerance pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Accuracy {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0) || !(abs_tol > 0.0) {
            return Err(Error::Usage(format!(
                "tolerances must be positive, got rel={rel_tol}, abs={abs_tol}"
            )));
        }
        Ok(Self { rel_tol, abs_tol })
    }

    /// `|actual - expected| ≤ abs_tol + rel_tol·|expected|`.
    pub fn accepts(&self, actual: f64, expected: f64) -> bool {
        (actual - expected).abs() <= self.abs_tol + self.rel_tol * expected.abs()
    }
}

/// Exponential integral `Ei(x) = -PV ∫_{-x}^{∞} e^{-t}/t dt`.
///
/// `x = 0` is the logarithmic singularity and is rejected.
pub fn exp_integral_ei(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain("exp_integral_ei", format!("non-finite argument {x}")));
    }
    if x == 0.0 {
        return Err(domain("exp_integral_ei", "Ei is singular at 0"));
    }
    if x < 0.0 {
        let a = -x;
        if a <= 1.0 {
            Ok(ei_series(x))
        } else {
            Ok(-e1_continued_fraction(a))
        }
    } else if x <= 40.0 {
        Ok(ei_series(x))
    } else {
        Ok(ei_asymptotic(x))
    }
}

/// `E1(x) = -Ei(-x)` for `x > 0`.
pub fn exp_integral_e1(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(domain("exp_integral_e1", format!("requires finite x > 0, got {x}")));
    }
    exp_integral_ei(-x).map(|v| -v)
}

fn ei_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= x / kf;
        let add = term / kf;
        sum += add;
        if add.abs() <= EPS * sum.abs() {
            break;
        }
    }
    EULER_GAMMA + x.abs().ln() + sum
}

// Modified Lentz evaluation of
// E1(x) = e^{-x} / (x + 1 - 1²/(x + 3 - 2²/(x + 5 - ...))).
fn e1_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let an = -((i * i) as f64);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = c * d;
        h *= del;
        if (del - 1.0).abs() <= 1e-16 {
            break;
        }
    }
    h * (-x).exp()
}

fn ei_asymptotic(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..MAX_TERMS {
        let next = term * k as f64 / x;
        if next.abs() > term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= EPS * sum {
            break;
        }
    }
    x.exp() / x * sum
}

/// Error function.
pub fn erf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain("erf", format!("non-finite argument {x}")));
    }
    Ok(erf_unchecked(x))
}

/// Complementary error function, accurate in the far right tail.
pub fn erfc(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(domain("erfc", format!("non-finite argument {x}")));
    }
    Ok(erfc_unchecked(x))
}

fn erf_unchecked(x: f64) -> f64 {
    let a = x.abs();
    let v = if a < 3.0 {
        erf_series(a)
    } else {
        1.0 - erfc_continued_fraction(a)
    };
    v.copysign(x)
}

fn erfc_unchecked(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc_unchecked(-x)
    } else if x < 2.0 {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

fn erf_series(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..MAX_TERMS {
        term *= 2.0 * x2 / (2 * n + 1) as f64;
        sum += term;
        if term <= EPS * sum {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), x ≥ 2.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..MAX_TERMS {
        let an = n as f64 * 0.5;
        d = x + an * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() <= 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
}

/// Unit step with `heaviside(0) = 0`.
///
/// The joint density only ever evaluates the step on the open half-line, so
/// the value at the origin is a convention.
pub fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}
