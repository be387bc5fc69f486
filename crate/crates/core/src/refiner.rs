//! Blurring-diffusion refinement in spectral space.
//!
//! At refinement step `k` a clean state `x` and unit spectral noise `eps`
//! give the latent
//!
//! ```text
//! z = alpha d * x + sigma * eps
//! ```
//!
//! per mode. The velocity target corrects the plain `alpha eps - sigma x`
//! for the varying radius `r = sqrt(alpha^2 d^2 + sigma^2)`:
//!
//! ```text
//! v = (alpha eps - sigma d x) / r + (dr2_dphi / (2 r^2)) * z
//! ```
//!
//! and [`SpectralRefiner::reconstruct_x`] is its exact inverse given `z`:
//! `x = (alpha z + sigma r g z - r sigma v) / d` with `g = dr2_dphi / (2 r^2)`.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{RealField, SpectralField};
use crate::schedule::{RefinementSchedule, StepCoefficients};
use crate::spectral::{dft_forward, dft_inverse, sample_spectral_noise, FrequencyScaling};
use crate::surrogate::Predictor;
use crate::trajectory::Trajectory;

/// How the latent for step `k >= 1` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Re-noise the current estimate at level `k` with fresh noise.
    #[default]
    Renoise,
    /// Ancestral sampling through the Gaussian posterior `q(z_k | z_{k-1}, x)`.
    Posterior,
}

/// One supervised example for the velocity predictor.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub step: usize,
    pub latent: SpectralField,
    pub cond: Arc<SpectralField>,
    pub target: SpectralField,
    /// Clean next state the latent was built from.
    pub clean: Arc<SpectralField>,
    pub noise: SpectralField,
}

/// Per-mode posterior coefficients: `mean = coef_latent * z_t + coef_clean * x`
/// and `var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub coef_latent: f64,
    pub coef_clean: f64,
    pub var: f64,
}

/// Gaussian posterior of the less noisy latent `s` given the noisier latent
/// `t` and the clean state, for marginals `N(a x, sigma^2)`.
///
/// Uses `sigma_{t|s}^2 = sigma_t^2 - (a_t/a_s)^2 sigma_s^2`, which must be
/// positive (the signal-to-noise ratio has to grow from `t` to `s`).
pub fn posterior_coefficients(
    a_t: f64,
    sigma_t: f64,
    a_s: f64,
    sigma_s: f64,
) -> std::result::Result<PosteriorCoefficients, String> {
    if a_s == 0.0 {
        return Err("signal coefficient of the target step is zero".into());
    }
    let a_ts = a_t / a_s;
    let var_ts = sigma_t * sigma_t - a_ts * a_ts * sigma_s * sigma_s;
    if !(var_ts > 0.0) {
        return Err(format!(
            "transition variance {var_ts:.3e} is not positive (signal-to-noise ratio decreases)"
        ));
    }
    let st2 = sigma_t * sigma_t;
    let ss2 = sigma_s * sigma_s;
    Ok(PosteriorCoefficients {
        coef_latent: a_ts * ss2 / st2,
        coef_clean: a_s * var_ts / st2,
        var: ss2 * var_ts / st2,
    })
}

#[derive(Debug, Clone)]
pub struct SpectralRefiner {
    schedule: RefinementSchedule,
    scaling: FrequencyScaling,
    steps: Vec<StepCoefficients>,
}

impl SpectralRefiner {
    pub fn new(schedule: RefinementSchedule, scaling: FrequencyScaling) -> Result<Self> {
        let steps = (0..=schedule.steps())
            .map(|k| schedule.coefficients(k, &scaling))
            .collect::<Result<_>>()?;
        Ok(Self {
            schedule,
            scaling,
            steps,
        })
    }

    pub fn schedule(&self) -> &RefinementSchedule {
        &self.schedule
    }

    pub fn scaling(&self) -> &FrequencyScaling {
        &self.scaling
    }

    pub fn coefficients(&self, k: usize) -> Result<&StepCoefficients> {
        self.steps.get(k).ok_or(Error::StepOutOfRange {
            step: k,
            max: self.schedule.steps(),
        })
    }

    fn check(&self, field: &SpectralField, what: &str) -> Result<()> {
        if field.grid() != self.scaling.grid() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: field grid {:?} does not match scaling grid {:?}",
                field.grid().points(),
                self.scaling.grid().points()
            )));
        }
        Ok(())
    }

    /// Applies `f(mode, a, b)` coefficientwise over two equally shaped fields.
    fn zip_modes(
        &self,
        a: &SpectralField,
        b: &SpectralField,
        what: &str,
        f: impl Fn(usize, Complex64, Complex64) -> Complex64,
    ) -> Result<SpectralField> {
        self.check(a, what)?;
        a.check_same_shape(b, what)?;
        let m = a.grid().spectral_len();
        let mut out = a.clone();
        for (i, (o, y)) in out.coeffs_mut().iter_mut().zip(b.coeffs()).enumerate() {
            *o = f(i % m, *o, *y);
        }
        Ok(out)
    }

    /// `z = alpha d * x + sigma * noise`.
    pub fn forward_noise(
        &self,
        clean: &SpectralField,
        k: usize,
        noise: &SpectralField,
    ) -> Result<SpectralField> {
        let c = self.coefficients(k)?;
        self.zip_modes(clean, noise, "forward_noise", |m, x, e| {
            x * c.alpha_vec[m] + e * c.sigma
        })
    }

    pub fn v_target(
        &self,
        clean: &SpectralField,
        noise: &SpectralField,
        k: usize,
    ) -> Result<SpectralField> {
        let c = self.coefficients(k)?;
        self.zip_modes(clean, noise, "v_target", |m, x, e| {
            let (d, r) = (c.d[m], c.r[m]);
            let g = c.dr2_dphi[m] / (2.0 * r * r);
            let tangential = (e * c.alpha - x * (c.sigma * d)) / r;
            tangential + (x * (c.alpha * d) + e * c.sigma) * g
        })
    }

    pub fn reconstruct_x(
        &self,
        latent: &SpectralField,
        velocity: &SpectralField,
        k: usize,
    ) -> Result<SpectralField> {
        let c = self.coefficients(k)?;
        if let Some(m) = c.d.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::VanishingBlur(m));
        }
        self.zip_modes(latent, velocity, "reconstruct_x", |m, z, v| {
            let (d, r) = (c.d[m], c.r[m]);
            let g = c.dr2_dphi[m] / (2.0 * r * r);
            (z * c.alpha + z * (c.sigma * r * g) - v * (r * c.sigma)) / d
        })
    }

    /// Per-mode posterior coefficients for the transition `from -> to = from + 1`.
    pub fn posterior_coefficients(
        &self,
        from: usize,
        to: usize,
    ) -> Result<Vec<PosteriorCoefficients>> {
        if to != from + 1 {
            return Err(Error::PosteriorUndefined {
                from,
                to,
                reason: "target step must follow the source step".into(),
            });
        }
        let (t, s) = (self.coefficients(from)?, self.coefficients(to)?);
        t.alpha_vec
            .iter()
            .zip(&s.alpha_vec)
            .map(|(&a_t, &a_s)| {
                posterior_coefficients(a_t, t.sigma, a_s, s.sigma).map_err(|reason| {
                    Error::PosteriorUndefined { from, to, reason }
                })
            })
            .collect()
    }

    /// Draw the step-`to` latent from `q(z_to | z_from, x_hat)`.
    pub fn posterior_step<R: Rng + ?Sized>(
        &self,
        latent: &SpectralField,
        clean_estimate: &SpectralField,
        from: usize,
        to: usize,
        rng: &mut R,
    ) -> Result<SpectralField> {
        let coefs = self.posterior_coefficients(from, to)?;
        let noise = sample_spectral_noise(latent.grid(), latent.channels(), rng);
        let mean = self.zip_modes(latent, clean_estimate, "posterior_step", |m, z, x| {
            z * coefs[m].coef_latent + x * coefs[m].coef_clean
        })?;
        self.zip_modes(&mean, &noise, "posterior_step", |m, mu, e| {
            mu + e * coefs[m].var.sqrt()
        })
    }

    /// Run the refinement loop in spectral space for conditioning state `cond`.
    pub fn refine_spectral<P: Predictor + ?Sized, R: Rng + ?Sized>(
        &self,
        cond: &SpectralField,
        predictor: &P,
        sampler: Sampler,
        rng: &mut R,
    ) -> Result<SpectralField> {
        self.check(cond, "refine")?;
        let predict = |z: &SpectralField, k: usize| -> Result<SpectralField> {
            let v = predictor.predict(z, cond, k)?;
            if !v.is_finite() {
                return Err(Error::NonFinitePrediction(k));
            }
            v.check_same_shape(z, "prediction")?;
            Ok(v)
        };
        let mut latent = sample_spectral_noise(cond.grid(), cond.channels(), rng);
        let mut estimate = self.reconstruct_x(&latent, &predict(&latent, 0)?, 0)?;
        for k in 1..=self.schedule.steps() {
            latent = match sampler {
                Sampler::Renoise => {
                    let noise = sample_spectral_noise(cond.grid(), cond.channels(), rng);
                    self.forward_noise(&estimate, k, &noise)?
                }
                Sampler::Posterior => self.posterior_step(&latent, &estimate, k - 1, k, rng)?,
            };
            estimate = self.reconstruct_x(&latent, &predict(&latent, k)?, k)?;
        }
        Ok(estimate)
    }

    /// Predict the next PDE state from `prev`.
    pub fn refine_step<P: Predictor + ?Sized, R: Rng + ?Sized>(
        &self,
        prev: &RealField,
        predictor: &P,
        sampler: Sampler,
        rng: &mut R,
    ) -> Result<RealField> {
        let cond = dft_forward(prev)?;
        dft_inverse(&self.refine_spectral(&cond, predictor, sampler, rng)?)
    }

    /// Training pairs for every consecutive transition of `traj`, drawing the
    /// refinement step uniformly from `0..=K`.
    pub fn make_training_pairs<R: Rng + ?Sized>(
        &self,
        traj: &Trajectory,
        pairs_per_transition: usize,
        rng: &mut R,
    ) -> Result<Vec<TrainingPair>> {
        if traj.len() < 2 {
            return Err(Error::InvalidParams(
                "training pairs need a trajectory with at least two states".into(),
            ));
        }
        let spectra: Vec<Arc<SpectralField>> = traj
            .states()
            .iter()
            .map(|s| dft_forward(s).map(Arc::new))
            .collect::<Result<_>>()?;
        let mut pairs = Vec::with_capacity((traj.len() - 1) * pairs_per_transition);
        for w in spectra.windows(2) {
            let (cond, clean) = (&w[0], &w[1]);
            for _ in 0..pairs_per_transition {
                let step = rng.random_range(0..=self.schedule.steps());
                let noise = sample_spectral_noise(clean.grid(), clean.channels(), rng);
                let latent = self.forward_noise(clean, step, &noise)?;
                let target = self.v_target(clean, &noise, step)?;
                pairs.push(TrainingPair {
                    step,
                    latent,
                    cond: Arc::clone(cond),
                    target,
                    clean: Arc::clone(clean),
                    noise,
                });
            }
        }
        Ok(pairs)
    }
}

/// Predictor that knows the true next state and returns the exact velocity
/// target for whatever latent it is handed. Looks the next state up by
/// nearest neighbour of the conditioning state along a reference trajectory.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    refiner: SpectralRefiner,
    states: Vec<SpectralField>,
}

impl OraclePredictor {
    pub fn new(refiner: SpectralRefiner, truth: &Trajectory) -> Result<Self> {
        let states = truth
            .states()
            .iter()
            .map(dft_forward)
            .collect::<Result<_>>()?;
        Ok(Self { refiner, states })
    }

    fn next_state(&self, cond: &SpectralField) -> Result<&SpectralField> {
        let n = self.states.len();
        if n < 2 {
            return Err(Error::InvalidParams("oracle needs at least two states".into()));
        }
        let mut best = (f64::INFINITY, 0);
        for (i, s) in self.states[..n - 1].iter().enumerate() {
            let dist: f64 = s
                .coeffs()
                .iter()
                .zip(cond.coeffs())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            if dist < best.0 {
                best = (dist, i);
            }
        }
        Ok(&self.states[best.1 + 1])
    }
}

impl Predictor for OraclePredictor {
    fn predict(
        &self,
        latent: &SpectralField,
        cond: &SpectralField,
        step: usize,
    ) -> Result<SpectralField> {
        let clean = self.next_state(cond)?;
        let c = self.refiner.coefficients(step)?;
        // Recover the noise that produced `latent` from `clean`.
        let noise = self
            .refiner
            .zip_modes(latent, clean, "oracle", |m, z, x| (z - x * c.alpha_vec[m]) / c.sigma)?;
        self.refiner.v_target(clean, &noise, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::schedule::{BlurDirection, BlurExponent, ScheduleConfig};
    use crate::spectral::scaling_vector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn refiner(direction: BlurDirection, exponent: BlurExponent, sigma_blur: f64, steps: usize, grid: &Grid) -> SpectralRefiner {
        let schedule = RefinementSchedule::new(ScheduleConfig {
            steps,
            sigma_min: 1e-3,
            sigma_blur,
            direction,
            d_min: 1e-3,
            blur_exponent: exponent,
        })
        .unwrap();
        SpectralRefiner::new(schedule, scaling_vector(grid)).unwrap()
    }

    fn noise(grid: &Grid, rng: &mut ChaCha8Rng) -> SpectralField {
        sample_spectral_noise(grid, &["u".to_string()], rng)
    }

    fn rel(a: &SpectralField, b: &SpectralField) -> f64 {
        (a.sub(b).unwrap().energy() / b.energy()).sqrt()
    }

    #[test]
    fn forward_noise_endpoints() {
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = noise(&grid, &mut rng);
        let e = noise(&grid, &mut rng);
        let r = refiner(BlurDirection::Down, BlurExponent::Sin4, 4.0, 3, &grid);
        assert_eq!(r.forward_noise(&x, 0, &e).unwrap(), e);
        let none = refiner(BlurDirection::None, BlurExponent::Sin4, 4.0, 3, &grid);
        let zero = SpectralField::zeros(grid.clone(), vec!["u".into()]);
        let z = none.forward_noise(&x, 2, &zero).unwrap();
        assert_eq!(z, x.scaled(none.schedule().alpha(2)));
    }

    #[test]
    fn zero_mode_is_direction_independent() {
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = noise(&grid, &mut rng);
        let e = noise(&grid, &mut rng);
        let outs: Vec<_> = [BlurDirection::None, BlurDirection::Down, BlurDirection::Up]
            .iter()
            .map(|&d| refiner(d, BlurExponent::Sin4, 8.0, 3, &grid).forward_noise(&x, 2, &e).unwrap())
            .collect();
        assert_eq!(outs[0].coeffs()[0], outs[1].coeffs()[0]);
        assert_eq!(outs[0].coeffs()[0], outs[2].coeffs()[0]);
    }

    #[test]
    fn v_target_at_step_zero_is_negated_state() {
        let grid = Grid::new_2d(8, 8, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dir in [BlurDirection::None, BlurDirection::Down, BlurDirection::Up] {
            let r = refiner(dir, BlurExponent::Sin4, 4.0, 3, &grid);
            let x = noise(&grid, &mut rng);
            let e = noise(&grid, &mut rng);
            let v = r.v_target(&x, &e, 0).unwrap();
            assert_eq!(v, x.scaled(-1.0));
            assert_eq!(r.reconstruct_x(&e, &v, 0).unwrap(), x);
        }
    }

    #[test]
    fn cos2_endpoint_predicts_blurred_state() {
        // The cos^2 variant keeps full blur at the noise end, so the step-0
        // target is the blurred negated state.
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let schedule = RefinementSchedule::new(ScheduleConfig {
            steps: 3,
            sigma_min: 1e-3,
            sigma_blur: 2.0,
            direction: BlurDirection::Down,
            d_min: 0.0,
            blur_exponent: BlurExponent::Cos2,
        })
        .unwrap();
        let scaling = scaling_vector(&grid);
        let r = SpectralRefiner::new(schedule.clone(), scaling.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = noise(&grid, &mut rng);
        let e = noise(&grid, &mut rng);
        let v = r.v_target(&x, &e, 0).unwrap();
        let tau = schedule.tau(0).unwrap();
        for (m, (vm, xm)) in v.coeffs().iter().zip(x.coeffs()).enumerate() {
            let expected = -*xm * (-scaling.values()[m] * tau).exp();
            assert!((vm - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn round_trip_all_steps() {
        let grid = Grid::new_2d(16, 16, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dir in [BlurDirection::Down, BlurDirection::Up, BlurDirection::None] {
            for ex in [BlurExponent::Sin4, BlurExponent::Sin2, BlurExponent::Cos2] {
                let r = refiner(dir, ex, 4.0, 3, &grid);
                for k in 0..=3 {
                    let x = noise(&grid, &mut rng);
                    let e = noise(&grid, &mut rng);
                    let z = r.forward_noise(&x, k, &e).unwrap();
                    let v = r.v_target(&x, &e, k).unwrap();
                    let back = r.reconstruct_x(&z, &v, k).unwrap();
                    assert!(rel(&back, &x) < 1e-10, "{dir:?} {ex:?} k={k}: {}", rel(&back, &x));
                }
            }
        }
    }

    #[test]
    fn ddpm_reduction() {
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = refiner(BlurDirection::None, BlurExponent::Sin4, 8.0, 3, &grid);
        for k in 0..=3 {
            let (a, s) = (r.schedule().alpha(k), r.schedule().sigma(k));
            let x = noise(&grid, &mut rng);
            let e = noise(&grid, &mut rng);
            let v = r.v_target(&x, &e, k).unwrap();
            let z = r.forward_noise(&x, k, &e).unwrap();
            let xr = r.reconstruct_x(&z, &v, k).unwrap();
            for m in 0..grid.spectral_len() {
                let vref = e.coeffs()[m] * a - x.coeffs()[m] * s;
                assert!((v.coeffs()[m] - vref).norm() < 1e-12);
                let xref = z.coeffs()[m] * a - v.coeffs()[m] * s;
                assert!((xr.coeffs()[m] - xref).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vanishing_blur_is_rejected() {
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let schedule = RefinementSchedule::new(ScheduleConfig {
            steps: 1,
            sigma_min: 1e-3,
            sigma_blur: 40.0,
            direction: BlurDirection::Down,
            d_min: 0.0,
            blur_exponent: BlurExponent::Sin4,
        })
        .unwrap();
        let r = SpectralRefiner::new(schedule, scaling_vector(&grid)).unwrap();
        let z = SpectralField::zeros(grid.clone(), vec!["u".into()]);
        assert!(matches!(r.reconstruct_x(&z, &z, 1), Err(Error::VanishingBlur(_))));
    }

    #[test]
    fn posterior_degenerate_limit() {
        let c = posterior_coefficients(0.5, 0.8, 0.9, 0.0).unwrap();
        assert_eq!(c.var, 0.0);
        assert_eq!(c.coef_latent, 0.0);
        assert!((c.coef_clean - 0.9).abs() < 1e-15);
        assert!(posterior_coefficients(0.9, 0.1, 0.5, 0.8).is_err());
        assert!(posterior_coefficients(0.5, 0.8, 0.0, 0.1).is_err());
    }

    #[test]
    fn posterior_rejects_decreasing_snr() {
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let r = refiner(BlurDirection::Down, BlurExponent::Sin4, 8.0, 3, &grid);
        assert!(matches!(
            r.posterior_coefficients(1, 2),
            Err(Error::PosteriorUndefined { .. })
        ));
        assert!(r.posterior_coefficients(1, 3).is_err());
        let ok = refiner(BlurDirection::Down, BlurExponent::Sin4, 2.0, 3, &grid);
        assert!(ok.posterior_coefficients(0, 1).is_ok());
    }
}
