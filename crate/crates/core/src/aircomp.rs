//! Truncated channel inversion and over-the-air gradient aggregation.
//!
//! Active device `k` pre-scales its gradient by
//! `β_k = ζ·λ·d_k^{α/2}·ĥ_k* / (K·|ĥ_k|²)`. The server receives
//! `y = Σ_{k∈S} d_k^{-α/2}·h_k·β_k·g_k + z`, scales by `1/ζ` and keeps the real
//! part, which yields `ĝ = (1/K)·Σ_k ξ_k·g_k + Re{z}/ζ` with
//! `ξ_k = λ·Re{h_k*·ĥ_k}/|ĥ_k|²` on the active set and 0 elsewhere.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{is_active, ChannelDraw, RngStream};
use crate::error::{domain, Error, Result};

/// Transmit budget and receiver noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    /// Per-device transmit power budget, watts.
    pub p_max: f64,
    /// Receiver noise power, watts.
    pub sigma2: f64,
    /// Gradient norm bound `G`.
    pub g_bound: f64,
    /// `max_k d_k^α`.
    pub d_max_alpha: f64,
}

impl PowerConfig {
    pub fn new(p_max: f64, sigma2: f64, g_bound: f64, d_max_alpha: f64) -> Result<Self> {
        let cfg = Self {
            p_max,
            sigma2,
            g_bound,
            d_max_alpha,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.p_max > 0.0
            && self.sigma2 >= 0.0
            && self.g_bound > 0.0
            && self.d_max_alpha > 0.0
            && [self.p_max, self.sigma2, self.g_bound, self.d_max_alpha]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(domain("PowerConfig", format!("invalid power configuration {self:?}")))
        }
    }

    pub fn with_g_bound(mut self, g_bound: f64) -> Result<Self> {
        self.g_bound = g_bound;
        self.validate()?;
        Ok(self)
    }
}

/// `10^{(dBm - 30)/10}` watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Result of one over-the-air aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome {
    pub g_hat: Vec<f64>,
    pub active_set: Vec<usize>,
    pub xi: Vec<f64>,
    /// Scaled receiver noise `Re{z}/ζ`; all zeros when skipped.
    pub noise_realization: Vec<f64>,
    pub zeta: f64,
    pub lambda: f64,
    /// No device cleared the threshold; `g_hat` is zero and the round should
    /// not update the model.
    pub skipped: bool,
}

impl AggregationOutcome {
    /// `(1/K)·Σ ξ_k·g_k + z̄` recomputed from the stored fields.
    pub fn reconstruct(&self, gradients: &[Vec<f64>]) -> Vec<f64> {
        let k = gradients.len() as f64;
        let mut out = self.noise_realization.clone();
        for (j, o) in out.iter_mut().enumerate() {
            let s: f64 = gradients.iter().zip(&self.xi).map(|(g, x)| x * g[j]).sum();
            *o += s / k;
        }
        out
    }
}

/// How the per-device coefficients are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientMode {
    /// `ξ_k` from the channel draw.
    #[default]
    Channel,
    /// Every device contributes with `ξ_k = 1`. Test hook for comparing against
    /// ideal averaging.
    ForceUnit,
}

/// Compensation constant `λ = e^{γth}/ρ` that makes `E[ξ_k] = 1`.
pub fn compensation_lambda(gamma_th: f64, rho: f64) -> Result<f64> {
    check_gamma_rho("compensation_lambda", gamma_th, rho)?;
    Ok(gamma_th.exp() / rho)
}

/// Effective aggregation coefficient of one device.
pub fn effective_xi(draw: &ChannelDraw, gamma_th: f64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(domain("effective_xi", format!("lambda must be positive, got {lambda}")));
    }
    if !is_active(draw.h_hat, gamma_th)? {
        return Ok(0.0);
    }
    let gain = draw.h_hat.norm_sqr();
    if gain == 0.0 {
        return Err(Error::Internal("active device with zero channel estimate".into()));
    }
    Ok(lambda * (draw.h.conj() * draw.h_hat).re / gain)
}

/// Power-normalization factor `ζ = K·ρ·√(P_max·γth) / (G·max_k d_k^{α/2}·e^{γth})`.
pub fn scaling_zeta(k_devices: usize, rho: f64, cfg: &PowerConfig, gamma_th: f64) -> Result<f64> {
    if k_devices == 0 {
        return Err(domain("scaling_zeta", "need at least one device"));
    }
    check_gamma_rho("scaling_zeta", gamma_th, rho)?;
    cfg.validate()?;
    Ok(k_devices as f64 * rho * (cfg.p_max * gamma_th).sqrt()
        / (cfg.g_bound * cfg.d_max_alpha.sqrt() * gamma_th.exp()))
}

/// Transmit pre-processing factor `β_k = ζ·λ·d^{α/2}·ĥ*/(K·|ĥ|²)`.
///
/// The caller is responsible for only calling this for active devices.
pub fn preprocessing_beta(
    draw: &ChannelDraw,
    alpha: f64,
    zeta: f64,
    lambda: f64,
    k_devices: usize,
) -> Result<Complex64> {
    let gain = draw.h_hat.norm_sqr();
    if gain == 0.0 {
        return Err(domain("preprocessing_beta", "channel estimate is zero"));
    }
    if k_devices == 0 {
        return Err(domain("preprocessing_beta", "need at least one device"));
    }
    let scale = zeta * lambda * draw.d.powf(alpha / 2.0) / (k_devices as f64 * gain);
    Ok(draw.h_hat.conj() * scale)
}

/// Instantaneous transmit power `|β|²·‖g‖²`.
pub fn transmit_power(beta: Complex64, gradient: &[f64]) -> f64 {
    beta.norm_sqr() * gradient.iter().map(|x| x * x).sum::<f64>()
}

/// Over-the-air aggregation of one round.
pub fn aggregate(
    gradients: &[Vec<f64>],
    draws: &[ChannelDraw],
    gamma_th: f64,
    rho: f64,
    cfg: &PowerConfig,
    rng: &mut RngStream,
) -> Result<AggregationOutcome> {
    aggregate_with(gradients, draws, gamma_th, rho, cfg, rng, CoefficientMode::Channel)
}

/// [`aggregate`] with an explicit coefficient mode.
pub fn aggregate_with(
    gradients: &[Vec<f64>],
    draws: &[ChannelDraw],
    gamma_th: f64,
    rho: f64,
    cfg: &PowerConfig,
    rng: &mut RngStream,
    mode: CoefficientMode,
) -> Result<AggregationOutcome> {
    let dim = check_gradients(gradients)?;
    if draws.len() != gradients.len() {
        return Err(Error::Usage(format!(
            "{} gradients but {} channel draws",
            gradients.len(),
            draws.len()
        )));
    }
    let k = gradients.len();
    let lambda = compensation_lambda(gamma_th, rho)?;
    let zeta = scaling_zeta(k, rho, cfg, gamma_th)?;

    let (xi, active_set) = match mode {
        CoefficientMode::Channel => {
            let xi = draws
                .iter()
                .map(|d| effective_xi(d, gamma_th, lambda))
                .collect::<Result<Vec<_>>>()?;
            let active = draws
                .iter()
                .enumerate()
                .filter(|(_, d)| d.h_hat.norm_sqr() >= gamma_th)
                .map(|(i, _)| i)
                .collect::<Vec<_>>();
            (xi, active)
        }
        CoefficientMode::ForceUnit => (vec![1.0; k], (0..k).collect()),
    };

    if active_set.is_empty() {
        return Ok(AggregationOutcome {
            g_hat: vec![0.0; dim],
            active_set,
            xi,
            noise_realization: vec![0.0; dim],
            zeta,
            lambda,
            skipped: true,
        });
    }

    let sigma = cfg.sigma2.sqrt();
    let noise_realization: Vec<f64> =
        (0..dim).map(|_| (rng.complex_normal() * sigma).re / zeta).collect();

    let mut g_hat = vec![0.0; dim];
    for (g, x) in gradients.iter().zip(&xi) {
        for (acc, v) in g_hat.iter_mut().zip(g) {
            *acc += x * v;
        }
    }
    for (acc, z) in g_hat.iter_mut().zip(&noise_realization) {
        *acc = *acc / k as f64 + z;
    }

    Ok(AggregationOutcome {
        g_hat,
        active_set,
        xi,
        noise_realization,
        zeta,
        lambda,
        skipped: false,
    })
}

/// Superimposed signal at the server, `Σ_{k∈S} d_k^{-α/2}·h_k·β_k·g_k + z`.
///
/// Physical-layer counterpart of [`aggregate`]; `Re{y}/ζ` equals its `g_hat`
/// up to rounding when fed the same noise.
pub fn received_signal(
    gradients: &[Vec<f64>],
    draws: &[ChannelDraw],
    alpha: f64,
    gamma_th: f64,
    rho: f64,
    cfg: &PowerConfig,
    noise: &[Complex64],
) -> Result<Vec<Complex64>> {
    let dim = check_gradients(gradients)?;
    if noise.len() != dim || draws.len() != gradients.len() {
        return Err(Error::Usage("noise or draw length mismatch".into()));
    }
    let k = gradients.len();
    let lambda = compensation_lambda(gamma_th, rho)?;
    let zeta = scaling_zeta(k, rho, cfg, gamma_th)?;
    let mut y = noise.to_vec();
    for (g, draw) in gradients.iter().zip(draws) {
        if !is_active(draw.h_hat, gamma_th)? {
            continue;
        }
        let beta = preprocessing_beta(draw, alpha, zeta, lambda, k)?;
        let gain = draw.h * draw.d.powf(-alpha / 2.0) * beta;
        for (acc, v) in y.iter_mut().zip(g) {
            *acc += gain * *v;
        }
    }
    Ok(y)
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

pub(crate) fn check_gradients(gradients: &[Vec<f64>]) -> Result<usize> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::Usage("need at least one gradient".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(Error::Usage("gradient dimension must be at least 1".into()));
    }
    if let Some(bad) = gradients.iter().position(|g| g.len() != dim) {
        return Err(Error::Usage(format!(
            "gradient {bad} has dimension {} (expected {dim})",
            gradients[bad].len()
        )));
    }
    Ok(dim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channel, EstimationModel};

    fn cfg(sigma2: f64) -> PowerConfig {
        PowerConfig::new(0.1, sigma2, 1.0, 1.0).unwrap()
    }

    #[test]
    fn lambda_examples() {
        assert!((compensation_lambda(1e-12, 1.0).unwrap() - 1.0).abs() < 1e-11);
        // e^{0.5}/0.8 = 2.0609015883751602 (40-digit evaluation)
        assert!((compensation_lambda(0.5, 0.8).unwrap() - 2.060_901_588_375_16).abs() < 1e-15);
        assert!((compensation_lambda(1.0, 1.0).unwrap() - std::f64::consts::E).abs() < 1e-15);
        assert!(compensation_lambda(0.0, 1.0).is_err());
        assert!(compensation_lambda(0.5, 0.0).is_err());
        assert!(compensation_lambda(0.5, 1.5).is_err());
    }

    #[test]
    fn zeta_examples() {
        // 10·√0.1/e = 1.1633369384516796
        let z = scaling_zeta(10, 1.0, &cfg(0.0), 1.0).unwrap();
        assert!((z - 1.163_336_938_451_679_6).abs() < 1e-14, "{z}");
        let z2 = scaling_zeta(20, 1.0, &cfg(0.0), 1.0).unwrap();
        assert!((z2 - 2.0 * z).abs() < 1e-14);
        let zh = scaling_zeta(10, 0.5, &cfg(0.0), 1.0).unwrap();
        assert!((zh - 0.5 * z).abs() < 1e-14);
        assert!(scaling_zeta(0, 1.0, &cfg(0.0), 1.0).is_err());
    }

    #[test]
    fn xi_perfect_csi_equals_lambda() {
        let model = EstimationModel::new(1.0, 2.2).unwrap();
        let mut rng = RngStream::new(11, 0);
        let lambda = 0.5f64.exp();
        let mut seen = 0;
        for _ in 0..200 {
            let d = draw_channel(&model, 1.0, &mut rng).unwrap();
            let xi = effective_xi(&d, 0.5, lambda).unwrap();
            if d.h_hat.norm_sqr() >= 0.5 {
                assert!((xi - 1.648_721_270_700_128_1).abs() < 1e-12);
                seen += 1;
            } else {
                assert_eq!(xi, 0.0);
            }
        }
        assert!(seen > 50);
    }

    #[test]
    fn beta_for_real_positive_estimate() {
        let draw = ChannelDraw {
            h: Complex64::new(2.0, 0.0),
            h_hat: Complex64::new(2.0, 0.0),
            v: Complex64::new(0.0, 0.0),
            d: 1.0,
        };
        let b = preprocessing_beta(&draw, 2.2, 3.0, 1.5, 10).unwrap();
        assert_eq!(b.im, 0.0);
        assert!((b.re - 3.0 * 1.5 / (10.0 * 2.0)).abs() < 1e-15);
        let zero = ChannelDraw {
            h_hat: Complex64::new(0.0, 0.0),
            ..draw
        };
        assert!(preprocessing_beta(&zero, 2.2, 3.0, 1.5, 10).is_err());
    }

    #[test]
    fn single_truncated_device_is_skipped() {
        let draw = ChannelDraw {
            h: Complex64::new(0.01, 0.0),
            h_hat: Complex64::new(0.01, 0.0),
            v: Complex64::new(0.0, 0.0),
            d: 10.0,
        };
        let mut rng = RngStream::new(0, 0);
        let out = aggregate(&[vec![1.0, 2.0]], &[draw], 0.5, 1.0, &cfg(0.0), &mut rng).unwrap();
        assert!(out.skipped);
        assert_eq!(out.g_hat, vec![0.0, 0.0]);
        assert!(out.active_set.is_empty());
    }

    #[test]
    fn noise_free_composition() {
        let model = EstimationModel::new(1.0, 2.2).unwrap();
        let mut rng = RngStream::new(5, 0);
        let draws: Vec<_> = (0..6).map(|_| draw_channel(&model, 50.0, &mut rng).unwrap()).collect();
        let grads: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0 - i as f64, 0.5]).collect();
        let out = aggregate(&grads, &draws, 0.3, 1.0, &cfg(0.0), &mut rng).unwrap();
        let lambda = 0.3f64.exp();
        for (k, d) in draws.iter().enumerate() {
            if d.h_hat.norm_sqr() >= 0.3 {
                assert!((out.xi[k] - lambda).abs() < 1e-12);
                assert!(out.active_set.contains(&k));
            } else {
                assert_eq!(out.xi[k], 0.0);
                assert!(!out.active_set.contains(&k));
            }
        }
        assert!(out.noise_realization.iter().all(|&z| z == 0.0));
        let rebuilt = out.reconstruct(&grads);
        for (a, b) in rebuilt.iter().zip(&out.g_hat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_usage_error() {
        let mut rng = RngStream::new(0, 0);
        let draw = ChannelDraw {
            h: Complex64::new(1.0, 0.0),
            h_hat: Complex64::new(1.0, 0.0),
            v: Complex64::new(0.0, 0.0),
            d: 1.0,
        };
        let err = aggregate(&[vec![1.0], vec![1.0, 2.0]], &[draw, draw], 0.5, 1.0, &cfg(0.0), &mut rng);
        assert!(matches!(err, Err(Error::Usage(_))));
        let err = aggregate(&[vec![1.0]], &[draw, draw], 0.5, 1.0, &cfg(0.0), &mut rng);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn dbm_conversion() {
        assert!((dbm_to_watts(-40.0) - 1e-7).abs() < 1e-21);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
    }
}
