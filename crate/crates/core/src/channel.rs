//! Rayleigh block fading with imperfect channel estimates.
//!
//! The estimation model is `h = ρ·ĥ + √(1-ρ²)·v` with `ĥ, v ~ CN(0, 1)`
//! independent, so `h` is itself `CN(0, 1)` and `E[h·ĥ*] = ρ`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// One device's channel realization for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    /// True small-scale fading.
    pub h: Complex64,
    /// Estimate available at the transmitter.
    pub h_hat: Complex64,
    /// Estimation error, independent of `h_hat`.
    pub v: Complex64,
    /// Device to server distance in meters.
    pub d: f64,
}

impl ChannelDraw {
    /// Estimated gain `|ĥ|²`.
    pub fn estimated_gain(&self) -> f64 {
        self.h_hat.norm_sqr()
    }
}

/// CSI quality and large-scale attenuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationModel {
    rho: f64,
    alpha: f64,
}

impl EstimationModel {
    pub fn new(rho: f64, alpha: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(domain("EstimationModel", format!("rho must lie in (0, 1], got {rho}")));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(domain("EstimationModel", format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { rho, alpha })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Seeded random stream. Identical `(seed, stream_id)` pairs replay the
/// identical sequence.
///
/// Backed by ChaCha12 with the stream id mapped onto ChaCha's 64-bit stream
/// word. Normals come from `rand_distr::StandardNormal` (ziggurat); both
/// crates are pinned to their 0.3/0.4 lines so recorded seeds stay valid.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Sample from `N(0, 1)`.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Sample from `CN(0, 1)`: independent real and imaginary parts with
    /// variance 1/2 each.
    pub fn complex_normal(&mut self) -> Complex64 {
        let re: f64 = self.normal();
        let im: f64 = self.normal();
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

/// Draw one device's true channel and estimate.
///
/// Always consumes two complex normals (ĥ then v), so the stream position
/// does not depend on `rho`.
pub fn draw_channel(model: &EstimationModel, d: f64, rng: &mut RngStream) -> Result<ChannelDraw> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(domain("draw_channel", format!("distance must be positive, got {d}")));
    }
    let h_hat = rng.complex_normal();
    let v = rng.complex_normal();
    let h = if model.rho == 1.0 {
        h_hat
    } else {
        h_hat * model.rho + v * (1.0 - model.rho * model.rho).sqrt()
    };
    Ok(ChannelDraw { h, h_hat, v, d })
}

/// Truncation rule: a device transmits iff `|ĥ|² ≥ γth`.
pub fn is_active(h_hat: Complex64, gamma_th: f64) -> Result<bool> {
    if !(gamma_th > 0.0) || !gamma_th.is_finite() {
        return Err(domain(
            "is_active",
            format!("truncation threshold must be positive, got {gamma_th}"),
        ));
    }
    Ok(h_hat.norm_sqr() >= gamma_th)
}

/// Large-scale amplitude attenuation `d^{-α/2}`.
pub fn pathloss_amplitude(d: f64, alpha: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(domain("pathloss_amplitude", format!("distance must be positive, got {d}")));
    }
    if !(alpha > 0.0) {
        return Err(domain("pathloss_amplitude", format!("alpha must be positive, got {alpha}")));
    }
    Ok(d.powf(-alpha / 2.0))
}

/// `k` distances uniform on `(0, d_max]`, drawn once per experiment.
pub fn uniform_distances(k: usize, d_max: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(d_max > 0.0) || !d_max.is_finite() {
        return Err(domain("uniform_distances", format!("d_max must be positive, got {d_max}")));
    }
    // 1 - U maps [0, 1) onto (0, 1], which excludes d = 0.
    Ok((0..k).map(|_| d_max * (1.0 - rng.uniform())).collect())
}
