//! Closed-form statistics of the effective coefficients and the aggregation
//! error.
//!
//! Notation: `x = Re{v*·ĥ}/|ĥ|²` and `y = -|ĥ|²`. Given `|ĥ|² = r`, `x` is
//! `N(0, 1/(2r))`, which drives every expression here.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::aircomp::{compensation_lambda, scaling_zeta, PowerConfig};
use crate::error::{domain, Error, Result};
use crate::quadrature::{adaptive_simpson, simpson_2d};
use crate::specfun::{erfc, exp_integral_ei, heaviside};

/// Constants needed by the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningConstants {
    pub lipschitz_l: f64,
    pub eta: f64,
    /// Gradient-variance bound δ².
    pub delta2: f64,
    /// G².
    pub g_bound2: f64,
    pub rounds_m: usize,
    /// `F(w₀) - E[F(w_M)]`.
    pub f0_minus_fm: f64,
}

impl LearningConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz_l > 0.0) {
            return Err(Error::Precondition(format!(
                "Lipschitz constant must be positive, got {}",
                self.lipschitz_l
            )));
        }
        if !(self.eta > 0.0) || self.eta >= 2.0 / self.lipschitz_l {
            return Err(Error::Precondition(format!(
                "learning rate {} must lie in (0, 2/L = {})",
                self.eta,
                2.0 / self.lipschitz_l
            )));
        }
        if self.rounds_m == 0 {
            return Err(Error::Precondition("need at least one round".into()));
        }
        Ok(())
    }
}

/// Closed-form values for one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    pub lambda: f64,
    pub xi_variance: f64,
    /// Printed weight-divergence bound with the `G²/K²` prefactor.
    pub divergence_bound: f64,
    /// Exact `(1/K²)·Σ Var[ξ]·E‖g_k‖² + d·σ²/(2ζ²)`.
    pub divergence_exact: f64,
    pub convergence_bound: Option<f64>,
    /// `divergence_exact > divergence_bound`.
    pub bound_violated: bool,
}

fn check_gamma_rho(func: &'static str, gamma_th: f64, rho: f64) -> Result<()> {
    if !(gamma_th > 0.0) || !gamma_th.is_finite() {
        return Err(domain(func, format!("gamma_th must be positive, got {gamma_th}")));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(domain(func, format!("rho must lie in (0, 1], got {rho}")));
    }
    Ok(())
}

/// `(1-ρ²)/(2ρ²)`, exactly zero at ρ = 1.
pub(crate) fn csi_penalty(rho: f64) -> f64 {
    if rho == 1.0 {
        0.0
    } else {
        (1.0 - rho * rho) / (2.0 * rho * rho)
    }
}

/// `E[(ξ-1)²] = e^{γ} - ((1-ρ²)/(2ρ²))·Ei(-γ)·e^{2γ} - 1`.
pub fn xi_variance(gamma_th: f64, rho: f64) -> Result<f64> {
    check_gamma_rho("xi_variance", gamma_th, rho)?;
    let k1 = csi_penalty(rho);
    let ei_term = if k1 == 0.0 {
        0.0
    } else {
        k1 * exp_integral_ei(-gamma_th)? * (2.0 * gamma_th).exp()
    };
    // exp_m1 keeps the ρ = 1, γ → 0 limit accurate.
    Ok((gamma_th.exp_m1() - ei_term).max(0.0))
}

/// Weight-divergence bound exactly as printed, with `G²/K²` on both terms.
pub fn divergence_bound(k_devices: usize, gamma_th: f64, rho: f64, cfg: &PowerConfig) -> Result<f64> {
    if k_devices == 0 {
        return Err(domain("divergence_bound", "need at least one device"));
    }
    cfg.validate()?;
    let var = xi_variance(gamma_th, rho)?;
    let noise = cfg.sigma2 * cfg.d_max_alpha * (2.0 * gamma_th).exp()
        / (2.0 * cfg.p_max * rho * rho * gamma_th);
    let k = k_devices as f64;
    Ok(cfg.g_bound * cfg.g_bound / (k * k) * (var + noise))
}

/// Exact aggregation MSE `(1/K²)·Σ_k Var[ξ]·E‖g_k‖² + d_model·σ²/(2ζ²)`.
pub fn divergence_exact(
    per_device_grad_sq: &[f64],
    k_devices: usize,
    gamma_th: f64,
    rho: f64,
    cfg: &PowerConfig,
    d_model: usize,
) -> Result<f64> {
    if per_device_grad_sq.len() != k_devices || k_devices == 0 {
        return Err(Error::Usage(format!(
            "expected {k_devices} gradient energies, got {}",
            per_device_grad_sq.len()
        )));
    }
    if per_device_grad_sq.iter().any(|g| !(*g >= 0.0)) {
        return Err(Error::Usage("gradient energies must be nonnegative".into()));
    }
    let var = xi_variance(gamma_th, rho)?;
    let zeta = scaling_zeta(k_devices, rho, cfg, gamma_th)?;
    let k = k_devices as f64;
    let coeff: f64 = per_device_grad_sq.iter().sum::<f64>() * var / (k * k);
    Ok(coeff + noise_energy(cfg.sigma2, zeta, d_model))
}

/// Probability that no device clears the threshold, `(1 - e^{-γth})^K`.
pub fn skip_probability(k_devices: usize, gamma_th: f64) -> Result<f64> {
    if !(gamma_th > 0.0) || !gamma_th.is_finite() {
        return Err(domain("skip_probability", format!("gamma_th must be positive, got {gamma_th}")));
    }
    Ok((-(-gamma_th).exp_m1()).powi(k_devices as i32))
}

/// Expected `‖ĝ - g‖²` of the aggregator as implemented: a round with no
/// active device yields `ĝ = 0` without receiver noise, so the noise term of
/// [`divergence_exact`] is weighted by the probability of transmitting.
pub fn divergence_with_skips(
    per_device_grad_sq: &[f64],
    k_devices: usize,
    gamma_th: f64,
    rho: f64,
    cfg: &PowerConfig,
    d_model: usize,
) -> Result<f64> {
    let exact = divergence_exact(per_device_grad_sq, k_devices, gamma_th, rho, cfg, d_model)?;
    let zeta = scaling_zeta(k_devices, rho, cfg, gamma_th)?;
    let noise = noise_energy(cfg.sigma2, zeta, d_model);
    Ok(exact - skip_probability(k_devices, gamma_th)? * noise)
}

/// `E‖z̄‖² = d_model·σ²/(2ζ²)`.
pub fn noise_energy(sigma2: f64, zeta: f64, d_model: usize) -> f64 {
    d_model as f64 * sigma2 / (2.0 * zeta * zeta)
}

/// Average-gradient-norm bound
/// `(1/M)·(F₀ - F_M)/(η - Lη²/2) + L·η·(Δ² + δ²)/(2 - Lη)`.
pub fn convergence_bound(lc: &LearningConstants, delta2_total: f64) -> Result<f64> {
    lc.validate()?;
    if !(delta2_total >= 0.0) {
        return Err(Error::Precondition(format!(
            "Δ² + δ² must be nonnegative, got {delta2_total}"
        )));
    }
    let (l, eta) = (lc.lipschitz_l, lc.eta);
    Ok(lc.f0_minus_fm / (lc.rounds_m as f64 * (eta - l * eta * eta / 2.0))
        + l * eta * delta2_total / (2.0 - l * eta))
}

/// Joint CDF `Pr{x < t, y < γ}`.
///
/// For γ < 0 this is
/// `t/(2√(1+t²))·(1 - erf(√(-γ(1+t²)))) + (e^γ/2)·erfc(-√(-γ)·t)`.
/// For γ ≥ 0 the event on `y` is certain and the value is the marginal
/// `1/2 + t/(2√(1+t²))`; the `½·(1 - U(-γ))` term below supplies that
/// constant, which the bare closed form omits.
pub fn joint_cdf_xy(t: f64, gamma: f64) -> Result<f64> {
    if !t.is_finite() || !gamma.is_finite() {
        return Err(domain("joint_cdf_xy", format!("non-finite input ({t}, {gamma})")));
    }
    let s = (1.0 + t * t).sqrt();
    if heaviside(-gamma) == 0.0 {
        return Ok(0.5 + t / (2.0 * s));
    }
    // 1 - erf(a) is taken as erfc(a) to keep the far tail accurate
    let a = (-gamma * (1.0 + t * t)).sqrt();
    Ok(t / (2.0 * s) * erfc(a)? + gamma.exp() / 2.0 * erfc(-(-gamma).sqrt() * t)?)
}

/// Joint density `√(-γ/π)·e^{γ(1+t²)}·U(-γ)`.
pub fn joint_pdf_xy(t: f64, gamma: f64) -> Result<f64> {
    if !t.is_finite() || !gamma.is_finite() {
        return Err(domain("joint_pdf_xy", format!("non-finite input ({t}, {gamma})")));
    }
    if heaviside(-gamma) == 0.0 {
        return Ok(0.0);
    }
    Ok((-gamma / PI).sqrt() * (gamma * (1.0 + t * t)).exp())
}

/// Probability of the box `[t0, t1] × [g0, g1]` from the CDF.
pub fn joint_box_mass((t0, t1): (f64, f64), (g0, g1): (f64, f64)) -> Result<f64> {
    Ok(joint_cdf_xy(t1, g1)? - joint_cdf_xy(t0, g1)? - joint_cdf_xy(t1, g0)? + joint_cdf_xy(t0, g0)?)
}

/// Integral of the density over the box, composite Simpson on an `n × n` grid.
pub fn joint_pdf_box_integral(t: (f64, f64), gamma: (f64, f64), n: usize) -> Result<f64> {
    joint_pdf_xy(t.0, gamma.0)?;
    joint_pdf_xy(t.1, gamma.1)?;
    Ok(simpson_2d(&|a, b| joint_pdf_xy(a, b).unwrap_or(f64::NAN), t, gamma, n, n))
}

/// Integral of the density over the whole plane.
///
/// Substituting `t = tan θ`, `γ = -u²` maps the plane onto
/// `(-π/2, π/2) × (0, ∞)` with the smooth integrand
/// `(2/√π)·u²·sec²θ·e^{-u²·sec²θ}`. For each θ the `u` range is cut at
/// `12·cos θ`, past which the integrand is below `e^{-144}`.
pub fn joint_pdf_total_mass(tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(domain("joint_pdf_total_mass", format!("tolerance must be positive, got {tol}")));
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let f = |theta: f64, u: f64| {
        let c = theta.cos();
        if c <= 0.0 {
            return 0.0;
        }
        let sec2 = 1.0 / (c * c);
        2.0 / PI.sqrt() * u * u * sec2 * (-u * u * sec2).exp()
    };
    let inner = |theta: f64| adaptive_simpson(&|u| f(theta, u), 0.0, 12.0 * theta.cos().max(0.0), tol / PI);
    Ok(adaptive_simpson(&inner, -half_pi, half_pi, tol))
}

/// `E[(x - c)² | y ≤ -γth] = c² - ½·Ei(-γth)·e^{γth}`.
pub fn conditional_second_moment(gamma_th: f64, c: f64) -> Result<f64> {
    if !(gamma_th > 0.0) || !gamma_th.is_finite() {
        return Err(domain(
            "conditional_second_moment",
            format!("gamma_th must be positive, got {gamma_th}"),
        ));
    }
    Ok(c * c - 0.5 * exp_integral_ei(-gamma_th)? * gamma_th.exp())
}

/// Offset `c = ρ(1 - e^{γ})/(e^{γ}·√(1-ρ²))` relating `(ξ - 1)` to `(x - c)`.
/// Undefined at ρ = 1.
pub fn offset_c(gamma_th: f64, rho: f64) -> Result<f64> {
    check_gamma_rho("offset_c", gamma_th, rho)?;
    if rho == 1.0 {
        return Err(domain("offset_c", "undefined for perfect CSI"));
    }
    Ok(rho * (-gamma_th.exp_m1()) / (gamma_th.exp() * (1.0 - rho * rho).sqrt()))
}

/// Assemble the closed-form report for one operating point.
pub fn closed_form_report(
    per_device_grad_sq: &[f64],
    gamma_th: f64,
    rho: f64,
    cfg: &PowerConfig,
    d_model: usize,
    learning: Option<(&LearningConstants, f64)>,
) -> Result<ClosedFormReport> {
    let k = per_device_grad_sq.len();
    let lambda = compensation_lambda(gamma_th, rho)?;
    let xi_var = xi_variance(gamma_th, rho)?;
    let bound = divergence_bound(k, gamma_th, rho, cfg)?;
    let exact = divergence_exact(per_device_grad_sq, k, gamma_th, rho, cfg, d_model)?;
    let convergence = match learning {
        Some((lc, delta2)) => Some(convergence_bound(lc, exact + delta2)?),
        None => None,
    };
    Ok(ClosedFormReport {
        lambda,
        xi_variance: xi_var,
        divergence_bound: bound,
        divergence_exact: exact,
        convergence_bound: convergence,
        bound_violated: exact > bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_examples() {
        let v = xi_variance(0.5, 1.0).unwrap();
        assert!((v - 0.648_721_270_700_128_1).abs() < 1e-14);
        assert!(xi_variance(1e-12, 1.0).unwrap() < 1e-11);
        // e^{0.5} - 0.28125·Ei(-0.5)·e - 1 with Ei(-0.5) = -0.55977359477616081
        let expected = 0.5f64.exp() + 0.28125 * 0.559_773_594_776_160_8 * std::f64::consts::E - 1.0;
        assert!((xi_variance(0.5, 0.8).unwrap() - expected).abs() < 1e-13);
        assert!((expected - 1.0767).abs() < 1e-4);
        assert!(xi_variance(0.0, 0.8).is_err());
        assert!(xi_variance(-1.0, 0.8).is_err());
    }

    #[test]
    fn bound_example_and_scaling() {
        let cfg = PowerConfig::new(0.1, 0.0, 1.0, 1.0).unwrap();
        let b = divergence_bound(10, 0.5, 1.0, &cfg).unwrap();
        assert!((b - 6.487_212_707_001_281e-3).abs() < 1e-15);
        let b_big = divergence_bound(1_000_000, 0.5, 1.0, &cfg).unwrap();
        assert!((b_big / b - 1e-10).abs() < 1e-20);
    }

    #[test]
    fn bound_floor_under_more_power() {
        let mut cfg = PowerConfig::new(0.1, 1e-7, 1.0, 500f64.powf(2.2)).unwrap();
        let floor = xi_variance(0.5, 0.8).unwrap() / 100.0;
        let mut prev = divergence_bound(10, 0.5, 0.8, &cfg).unwrap();
        for _ in 0..20 {
            cfg.p_max *= 2.0;
            let next = divergence_bound(10, 0.5, 0.8, &cfg).unwrap();
            assert!(next < prev && next > floor);
            prev = next;
        }
        assert!((prev - floor) / floor < 1e-3);
    }

    #[test]
    fn exact_divergence_specializations() {
        let cfg = PowerConfig::new(0.1, 1e-7, 2.0, 500f64.powf(2.2)).unwrap();
        let var = xi_variance(0.7, 0.9).unwrap();
        let zeta = scaling_zeta(10, 0.9, &cfg, 0.7).unwrap();
        let v = divergence_exact(&[4.0; 10], 10, 0.7, 0.9, &cfg, 1).unwrap();
        let expected = var * 4.0 / 10.0 + 1e-7 / (2.0 * zeta * zeta);
        assert!(((v - expected) / expected).abs() < 1e-13);

        let quiet = PowerConfig { sigma2: 0.0, ..cfg };
        let one = divergence_exact(&[3.0], 1, 0.7, 0.9, &quiet, 5).unwrap();
        assert!((one - var * 3.0).abs() < 1e-14);
        assert!(divergence_exact(&[1.0; 3], 4, 0.7, 0.9, &cfg, 1).is_err());
    }

    #[test]
    fn convergence_examples() {
        let lc = LearningConstants {
            lipschitz_l: 1.0,
            eta: 0.1,
            delta2: 0.0,
            g_bound2: 1.0,
            rounds_m: 10,
            f0_minus_fm: 1.0,
        };
        let v = convergence_bound(&lc, 0.5).unwrap();
        assert!((v - (1.0 / 0.95 + 0.05 / 1.9)).abs() < 1e-14);
        assert!((v - 1.078_947_368_421_052_7).abs() < 1e-12);
        let zero = LearningConstants { f0_minus_fm: 0.0, ..lc };
        assert_eq!(convergence_bound(&zero, 0.0).unwrap(), 0.0);
        let many = LearningConstants {
            rounds_m: 1_000_000_000_000,
            ..lc
        };
        assert!((convergence_bound(&many, 0.5).unwrap() - 0.05 / 1.9).abs() < 1e-8);
        let bad = LearningConstants { eta: 2.0, ..lc };
        assert!(matches!(convergence_bound(&bad, 0.5), Err(Error::Precondition(_))));
    }

    #[test]
    fn pdf_examples() {
        let v = joint_pdf_xy(0.0, -1.0).unwrap();
        assert!((v - (1.0 / std::f64::consts::PI).sqrt() * (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.207_553_748_710_297_7).abs() < 1e-12);
        assert_eq!(joint_pdf_xy(0.3, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn cdf_limits() {
        assert!((joint_cdf_xy(0.0, 10.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((joint_cdf_xy(1e5, 50.0).unwrap() - 1.0).abs() < 1e-9);
        // t → ∞ with γ < 0 recovers Pr{y < γ} = e^{γ}
        assert!((joint_cdf_xy(1e6, -1.0).unwrap() - (-1f64).exp()).abs() < 1e-9);
        assert!(joint_cdf_xy(-1e6, -1.0).unwrap().abs() < 1e-9);
        // symmetry in t at fixed γ
        assert!((joint_cdf_xy(0.0, -0.7).unwrap() - 0.5 * (-0.7f64).exp()).abs() < 1e-15);
        // continuous across γ = 0
        let a = joint_cdf_xy(0.8, -1e-14).unwrap();
        let b = joint_cdf_xy(0.8, 0.0).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn conditional_moment_examples() {
        let v = conditional_second_moment(1.0, 0.0).unwrap();
        assert!((v - 0.5 * 0.219_383_934_395_520_27 * std::f64::consts::E).abs() < 1e-14);
        // -½·Ei(-1)·e = 0.29817368116159704 (30-digit evaluation)
        assert!((v - 0.298_173_681_161_597).abs() < 1e-12);
        for c in [-2.0, 0.3, 5.0] {
            let d = conditional_second_moment(1.0, c).unwrap() - v;
            assert!((d - c * c).abs() < 1e-12);
        }
        assert!(conditional_second_moment(0.0, 0.0).is_err());
    }

    #[test]
    fn variance_assembles_from_conditional_moment() {
        for &gamma in &[0.05, 0.1, 0.5, 1.0, 2.0, 4.0] {
            for &rho in &[0.3, 0.5, 0.8, 0.95, 0.999] {
                let c = offset_c(gamma, rho).unwrap();
                let assembled = gamma.exp() * (1.0 - rho * rho) / (rho * rho)
                    * conditional_second_moment(gamma, c).unwrap()
                    + 1.0
                    - (-gamma).exp();
                let direct = xi_variance(gamma, rho).unwrap();
                assert!(
                    ((assembled - direct) / direct).abs() < 1e-12,
                    "γ={gamma} ρ={rho}: {assembled} vs {direct}"
                );
            }
        }
        assert!(offset_c(0.5, 1.0).is_err());
    }

    #[test]
    fn report_flags_bound_violation() {
        // all devices at the bound G: exact variance term is K× the printed one
        let cfg = PowerConfig::new(0.1, 1e-7, 1.0, 500f64.powf(2.2)).unwrap();
        let r = closed_form_report(&[1.0; 10], 0.5, 0.8, &cfg, 1, None).unwrap();
        assert!(r.bound_violated);
        assert!(r.convergence_bound.is_none());
        assert!(r.lambda > 0.0 && r.xi_variance > 0.0);
    }
}
