//! Refinement schedules: the scalar noise ladder, the blurring schedule and
//! every per-mode quantity derived from them.
//!
//! Step `k = 0` is the pure-noise end (`alpha = 0`, `sigma = 1`) and step `K`
//! the cleanest (`sigma = sigma_min`). Schedule time is `t = k / K` and
//! `sigma(t) = sigma_min^t`, so the ladder is geometric and `sigma(0) = 1`.
//! The angle `phi = atan(sigma / alpha)` runs from `pi/2` down towards 0.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::FrequencyScaling;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurDirection {
    /// `d = 1`: plain variance-preserving diffusion.
    None,
    /// `d = (1 - d_min) exp(-lambda tau) + d_min`.
    Down,
    /// `d = exp(+lambda tau)`.
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurExponent {
    /// `tau = sigma_B^2 / 2 * sin^4(pi t / 2)`
    Sin4,
    /// `tau = sigma_B^2 / 2 * sin^2(pi t / 2)`
    Sin2,
    /// `tau = sigma_B^2 / 2 * cos^2(pi t / 2)`
    Cos2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Number of refinement steps after the initial prediction.
    pub steps: usize,
    pub sigma_min: f64,
    /// Maximum blur `sigma_B`.
    pub sigma_blur: f64,
    pub direction: BlurDirection,
    pub d_min: f64,
    pub blur_exponent: BlurExponent,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 3,
            sigma_min: 1e-3,
            sigma_blur: 2.0,
            direction: BlurDirection::Down,
            d_min: 1e-3,
            blur_exponent: BlurExponent::Sin4,
        }
    }
}

impl ScheduleConfig {
    /// Scalar-only refinement (no blur) with the given number of steps.
    pub fn ddpm(steps: usize) -> Self {
        Self {
            steps,
            direction: BlurDirection::None,
            ..Self::default()
        }
    }
}

/// Everything the refinement algebra needs at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    pub k: usize,
    pub t: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub tau: f64,
    pub phi: f64,
    /// Per-mode blur `d`.
    pub d: Vec<f64>,
    /// Per-mode signal coefficient `alpha * d`.
    pub alpha_vec: Vec<f64>,
    /// Per-mode radius `sqrt(alpha^2 d^2 + sigma^2)`.
    pub r: Vec<f64>,
    pub dr2_dphi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementSchedule {
    config: ScheduleConfig,
    sigmas: Vec<f64>,
    alphas: Vec<f64>,
}

impl RefinementSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let c = &config;
        if !(c.sigma_min > 0.0 && c.sigma_min < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "sigma_min must lie in (0, 1), got {}",
                c.sigma_min
            )));
        }
        if !(c.sigma_blur.is_finite() && c.sigma_blur >= 0.0) {
            return Err(Error::InvalidSchedule(format!(
                "sigma_blur must be finite and >= 0, got {}",
                c.sigma_blur
            )));
        }
        if !(c.d_min >= 0.0 && c.d_min < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "d_min must lie in [0, 1), got {}",
                c.d_min
            )));
        }
        let sigmas: Vec<f64> = (0..=c.steps)
            .map(|k| sigma_of_time(c.sigma_min, step_time(k, c.steps)))
            .collect();
        let alphas: Vec<f64> = sigmas.iter().map(|s| alpha_of_sigma(*s)).collect();
        if sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule("sigma is not strictly decreasing".into()));
        }
        Ok(Self {
            config,
            sigmas,
            alphas,
        })
    }

    pub fn config(&self) -> &ScheduleConfig {
        &self.config
    }

    /// `K`, the index of the last refinement step.
    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn direction(&self) -> BlurDirection {
        self.config.direction
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    fn check(&self, k: usize) -> Result<()> {
        if k > self.steps() {
            Err(Error::StepOutOfRange {
                step: k,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        step_time(k, self.steps())
    }

    pub fn sigma(&self, k: usize) -> f64 {
        self.sigmas[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k]
    }

    pub fn phi(&self, k: usize) -> f64 {
        self.sigmas[k].atan2(self.alphas[k])
    }

    pub fn tau(&self, k: usize) -> Result<f64> {
        self.check(k)?;
        Ok(self.tau_at_time(self.t(k)))
    }

    /// Blurring schedule at continuous time `t` in `[0, 1]`.
    pub fn tau_at_time(&self, t: f64) -> f64 {
        let (s, c) = (FRAC_PI_2 * t).sin_cos();
        let half_b2 = 0.5 * self.config.sigma_blur * self.config.sigma_blur;
        half_b2
            * match self.config.blur_exponent {
                BlurExponent::Sin4 => s.powi(4),
                BlurExponent::Sin2 => s * s,
                BlurExponent::Cos2 => c * c,
            }
    }

    /// `d tau / d t`.
    pub fn tau_rate_at_time(&self, t: f64) -> f64 {
        let (s, c) = (FRAC_PI_2 * t).sin_cos();
        let half_b2 = 0.5 * self.config.sigma_blur * self.config.sigma_blur;
        half_b2
            * FRAC_PI_2
            * match self.config.blur_exponent {
                BlurExponent::Sin4 => 4.0 * s.powi(3) * c,
                BlurExponent::Sin2 => 2.0 * s * c,
                BlurExponent::Cos2 => -2.0 * c * s,
            }
    }

    /// Blur of a single mode with scaling `lambda` at time `t`, returned as
    /// `(d, d - 1)` so callers can keep precision near `d = 1`.
    fn blur_parts(&self, t: f64, lambda: f64) -> (f64, f64) {
        let x = lambda * self.tau_at_time(t);
        match self.config.direction {
            BlurDirection::None => (1.0, 0.0),
            BlurDirection::Down => {
                let dm1 = (1.0 - self.config.d_min) * (-x).exp_m1();
                (1.0 + dm1, dm1)
            }
            BlurDirection::Up => (x.exp(), x.exp_m1()),
        }
    }

    /// Blur of one mode at continuous time `t`.
    pub fn blur_at_time(&self, t: f64, lambda: f64) -> f64 {
        self.blur_parts(t, lambda).0
    }

    /// `d d / d t` for one mode.
    fn blur_rate_at_time(&self, t: f64, lambda: f64) -> f64 {
        let x = lambda * self.tau_at_time(t);
        let dx = lambda * self.tau_rate_at_time(t);
        match self.config.direction {
            BlurDirection::None => 0.0,
            BlurDirection::Down => -(1.0 - self.config.d_min) * (-x).exp() * dx,
            BlurDirection::Up => x.exp() * dx,
        }
    }

    /// `d r^2 / d phi` for one mode at continuous time `t`, by the chain rule
    /// through `t(phi)`: with `alpha = cos(phi)`, `sigma = sin(phi)` and
    /// `dt/dphi = alpha / (sigma ln sigma_min)`,
    ///
    /// `dr^2/dphi = 2 alpha sigma (1 - d^2) + 2 alpha^3 d d'(t) / (sigma ln sigma_min)`.
    pub fn dr2_dphi_at_time(&self, t: f64, lambda: f64) -> f64 {
        let sigma = sigma_of_time(self.config.sigma_min, t);
        let alpha = alpha_of_sigma(sigma);
        if alpha == 0.0 {
            return 0.0;
        }
        let (d, dm1) = self.blur_parts(t, lambda);
        let rate = self.blur_rate_at_time(t, lambda);
        -2.0 * alpha * sigma * dm1 * (d + 1.0)
            + 2.0 * alpha.powi(3) * d * rate / (sigma * self.config.sigma_min.ln())
    }

    /// `r^2` of one mode as a function of the angle `phi` (the curve whose
    /// derivative `dr2_dphi` is). Inverts `sigma = sin(phi)` for `t`.
    pub fn radius_sq_at_phi(&self, phi: f64, lambda: f64) -> f64 {
        let sigma = phi.sin();
        let alpha = phi.cos();
        let t = sigma.ln() / self.config.sigma_min.ln();
        let d = self.blur_at_time(t, lambda);
        alpha * alpha * d * d + sigma * sigma
    }

    pub fn blur(&self, k: usize, scaling: &FrequencyScaling) -> Result<Vec<f64>> {
        self.check(k)?;
        let t = self.t(k);
        Ok(scaling
            .values()
            .iter()
            .map(|&l| self.blur_at_time(t, l))
            .collect())
    }

    pub fn radius(&self, k: usize, scaling: &FrequencyScaling) -> Result<Vec<f64>> {
        let (a, s) = (self.alpha(k.min(self.steps())), self.sigma(k.min(self.steps())));
        Ok(self
            .blur(k, scaling)?
            .into_iter()
            .map(|d| radius_of(a, s, d))
            .collect())
    }

    pub fn dr2_dphi(&self, k: usize, scaling: &FrequencyScaling) -> Result<Vec<f64>> {
        self.check(k)?;
        let t = self.t(k);
        Ok(scaling
            .values()
            .iter()
            .map(|&l| if k == 0 { 0.0 } else { self.dr2_dphi_at_time(t, l) })
            .collect())
    }

    /// `(d, r, dr2_dphi)` of a single mode with scaling `lambda` at step `k`.
    pub fn mode_profile(&self, k: usize, lambda: f64) -> Result<(f64, f64, f64)> {
        self.check(k)?;
        let t = self.t(k);
        let d = self.blur_at_time(t, lambda);
        let r = radius_of(self.alpha(k), self.sigma(k), d);
        let dr2 = if k == 0 { 0.0 } else { self.dr2_dphi_at_time(t, lambda) };
        Ok((d, r, dr2))
    }

    pub fn coefficients(&self, k: usize, scaling: &FrequencyScaling) -> Result<StepCoefficients> {
        self.check(k)?;
        let (alpha, sigma) = (self.alpha(k), self.sigma(k));
        let d = self.blur(k, scaling)?;
        let alpha_vec = d.iter().map(|&d| alpha * d).collect();
        let r = d.iter().map(|&d| radius_of(alpha, sigma, d)).collect();
        Ok(StepCoefficients {
            k,
            t: self.t(k),
            alpha,
            sigma,
            tau: self.tau(k)?,
            phi: self.phi(k),
            d,
            alpha_vec,
            r,
            dr2_dphi: self.dr2_dphi(k, scaling)?,
        })
    }
}

fn step_time(k: usize, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        k as f64 / steps as f64
    }
}

fn sigma_of_time(sigma_min: f64, t: f64) -> f64 {
    sigma_min.powf(t)
}

fn alpha_of_sigma(sigma: f64) -> f64 {
    (1.0 - sigma * sigma).max(0.0).sqrt()
}

fn radius_of(alpha: f64, sigma: f64, d: f64) -> f64 {
    if d == 1.0 {
        // alpha^2 + sigma^2 = 1 up to rounding; keep the DDPM case exact.
        1.0
    } else {
        (alpha * alpha * d * d + sigma * sigma).sqrt()
    }
}
