//! Surrogate predictors for the refinement loop.
//!
//! [`PerModeLinearPredictor`] is a complex affine map per
//! `(refinement step, channel, mode)`:
//! `v = A * latent + B * cond + c`, fit in closed form by ridge least squares.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Exec};
use crate::field::{Grid, SpectralField};
use crate::refiner::{SpectralRefiner, TrainingPair};
use crate::trajectory::Trajectory;

pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_RIDGE: f64 = 1e-8;
/// Minimum number of pairs per refinement step accepted by the fitter.
pub const MIN_PAIRS_PER_STEP: usize = 3;
/// Eigenvalue ratio under which an unregularized normal matrix counts as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Anything that maps a noisy latent and the conditioning state to a velocity
/// estimate at refinement step `step`.
pub trait Predictor: Send + Sync {
    fn predict(&self, latent: &SpectralField, cond: &SpectralField, step: usize)
        -> Result<SpectralField>;
}

/// Which regressors a fit uses. Nested: each variant adds features to the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Offset,
    CondOffset,
    #[default]
    Full,
}

impl FeatureSet {
    /// Indices into `[latent, cond, offset]`.
    fn active(self) -> &'static [usize] {
        match self {
            FeatureSet::Offset => &[2],
            FeatureSet::CondOffset => &[1, 2],
            FeatureSet::Full => &[0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModeCoefficients {
    pub latent: Complex64,
    pub cond: Complex64,
    pub offset: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerModeLinearPredictor {
    steps: usize,
    grid: Grid,
    channels: Vec<String>,
    ridge: f64,
    features: FeatureSet,
    /// `[(step * channels + channel) * modes + mode]`
    coeffs: Vec<ModeCoefficients>,
}

impl PerModeLinearPredictor {
    pub fn from_coefficients(
        steps: usize,
        grid: Grid,
        channels: Vec<String>,
        ridge: f64,
        features: FeatureSet,
        coeffs: Vec<ModeCoefficients>,
    ) -> Result<Self> {
        let expected = (steps + 1) * channels.len() * grid.spectral_len();
        if coeffs.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "coefficient table has {} entries, expected {expected}",
                coeffs.len()
            )));
        }
        Ok(Self {
            steps,
            grid,
            channels,
            ridge,
            features,
            coeffs,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn features(&self) -> FeatureSet {
        self.features
    }

    fn slot(&self, step: usize, channel: usize, mode: usize) -> usize {
        (step * self.channels.len() + channel) * self.grid.spectral_len() + mode
    }

    pub fn coefficient(&self, step: usize, channel: usize, mode: usize) -> &ModeCoefficients {
        &self.coeffs[self.slot(step, channel, mode)]
    }

    pub fn coefficients(&self) -> &[ModeCoefficients] {
        &self.coeffs
    }

    pub fn to_json(&self) -> Result<String> {
        let m = self.grid.spectral_len();
        let mut tables = Vec::with_capacity((self.steps + 1) * self.channels.len());
        for step in 0..=self.steps {
            for channel in 0..self.channels.len() {
                let s = self.slot(step, channel, 0);
                let block = &self.coeffs[s..s + m];
                let pairs = |f: fn(&ModeCoefficients) -> Complex64| {
                    block.iter().map(|c| { let z = f(c); [z.re, z.im] }).collect()
                };
                tables.push(CoefficientTable {
                    step,
                    channel: self.channels[channel].clone(),
                    latent: pairs(|c| c.latent),
                    cond: pairs(|c| c.cond),
                    offset: pairs(|c| c.offset),
                });
            }
        }
        let file = ModelFile {
            version: MODEL_VERSION,
            steps: self.steps,
            grid: self.grid.clone(),
            channels: self.channels.clone(),
            ridge: self.ridge,
            features: self.features,
            coefficients: tables,
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text)?;
        if probe.version != MODEL_VERSION {
            return Err(Error::ModelVersion {
                found: probe.version,
                expected: MODEL_VERSION,
            });
        }
        let file: ModelFile = serde_json::from_str(text)?;
        let grid = Grid::new(file.grid.points().to_vec(), file.grid.spacing().to_vec())?;
        let m = grid.spectral_len();
        let nc = file.channels.len();
        if file.coefficients.len() != (file.steps + 1) * nc {
            return Err(Error::Format(format!(
                "model has {} coefficient tables, expected {}",
                file.coefficients.len(),
                (file.steps + 1) * nc
            )));
        }
        let mut coeffs = Vec::with_capacity(file.coefficients.len() * m);
        for (i, t) in file.coefficients.iter().enumerate() {
            let (step, channel) = (i / nc, i % nc);
            if t.step != step || t.channel != file.channels[channel] {
                return Err(Error::Format(format!(
                    "coefficient table {i} is for ({}, {}), expected ({step}, {})",
                    t.step, t.channel, file.channels[channel]
                )));
            }
            if t.latent.len() != m || t.cond.len() != m || t.offset.len() != m {
                return Err(Error::Format(format!("coefficient table {i} has wrong length")));
            }
            for mode in 0..m {
                let z = |p: &[f64; 2]| Complex64::new(p[0], p[1]);
                coeffs.push(ModeCoefficients {
                    latent: z(&t.latent[mode]),
                    cond: z(&t.cond[mode]),
                    offset: z(&t.offset[mode]),
                });
            }
        }
        Self::from_coefficients(file.steps, grid, file.channels, file.ridge, file.features, coeffs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predictor for PerModeLinearPredictor {
    fn predict(
        &self,
        latent: &SpectralField,
        cond: &SpectralField,
        step: usize,
    ) -> Result<SpectralField> {
        if step > self.steps {
            return Err(Error::StepOutOfRange {
                step,
                max: self.steps,
            });
        }
        latent.check_same_shape(cond, "predict inputs")?;
        if latent.grid() != &self.grid || latent.num_channels() != self.channels.len() {
            return Err(Error::ShapeMismatch(
                "predict inputs do not match the model grid/channels".into(),
            ));
        }
        let mut out = latent.clone();
        let base = self.slot(step, 0, 0);
        let table = &self.coeffs[base..base + self.channels.len() * self.grid.spectral_len()];
        for (((o, c), z), y) in out
            .coeffs_mut()
            .iter_mut()
            .zip(table)
            .zip(latent.coeffs())
            .zip(cond.coeffs())
        {
            *o = c.latent * z + c.cond * y + c.offset;
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    steps: usize,
    grid: Grid,
    channels: Vec<String>,
    ridge: f64,
    features: FeatureSet,
    coefficients: Vec<CoefficientTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientTable {
    step: usize,
    channel: String,
    latent: Vec<[f64; 2]>,
    cond: Vec<[f64; 2]>,
    offset: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u32,
}

/// Sufficient statistics of one `(step, channel, mode)` regression.
#[derive(Debug, Clone, Copy, Default)]
struct Gram {
    /// `sum conj(f_i) f_j` over features `[latent, cond, 1]`.
    g: [[Complex64; 3]; 3],
    /// `sum conj(f_i) v`.
    h: [Complex64; 3],
    /// `sum |v|^2`.
    vv: f64,
}

impl Gram {
    fn add(&mut self, latent: Complex64, cond: Complex64, target: Complex64) {
        let f = [latent, cond, Complex64::new(1.0, 0.0)];
        for i in 0..3 {
            let fi = f[i].conj();
            for j in 0..3 {
                self.g[i][j] += fi * f[j];
            }
            self.h[i] += fi * target;
        }
        self.vv += target.norm_sqr();
    }

    fn merge(&mut self, other: &Gram) {
        for i in 0..3 {
            for j in 0..3 {
                self.g[i][j] += other.g[i][j];
            }
            self.h[i] += other.h[i];
        }
        self.vv += other.vv;
    }

    /// Ridge solution restricted to `features`, with the residual sum of squares.
    fn solve(&self, features: FeatureSet, ridge: f64) -> Option<(ModeCoefficients, f64)> {
        let idx = features.active();
        let n = idx.len();
        let mut a = DMatrix::<Complex64>::zeros(n, n);
        let mut b = DVector::<Complex64>::zeros(n);
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[(r, c)] = self.g[i][j];
            }
            if i < 2 {
                a[(r, r)] += Complex64::new(ridge, 0.0);
            }
            b[r] = self.h[i];
        }
        if ridge == 0.0 {
            let eig = SymmetricEigen::new(a.clone()).eigenvalues;
            let max = eig.iter().cloned().fold(0.0f64, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(max > 0.0) || min <= SINGULAR_RATIO * max {
                return None;
            }
        }
        let x = a.lu().solve(&b)?;
        let mut beta = [Complex64::default(); 3];
        for (r, &i) in idx.iter().enumerate() {
            beta[i] = x[r];
        }
        // |v - F beta|^2 = vv - 2 Re(beta^H h) + beta^H G beta
        let mut quad = Complex64::default();
        let mut lin = Complex64::default();
        for i in 0..3 {
            lin += beta[i].conj() * self.h[i];
            for j in 0..3 {
                quad += beta[i].conj() * self.g[i][j] * beta[j];
            }
        }
        let rss = (self.vv - 2.0 * lin.re + quad.re).max(0.0);
        Some((
            ModeCoefficients {
                latent: beta[0],
                cond: beta[1],
                offset: beta[2],
            },
            rss,
        ))
    }
}

/// Streaming accumulator for the per-mode normal equations. Pairs can be
/// added in batches (e.g. one trajectory at a time) and accumulators merged.
#[derive(Debug, Clone)]
pub struct LeastSquaresAccumulator {
    steps: usize,
    grid: Grid,
    channels: Vec<String>,
    grams: Vec<Gram>,
    counts: Vec<usize>,
}

/// Per-step summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFitSummary {
    pub step: usize,
    pub pairs: usize,
    /// Mean squared residual per coefficient, `rss / (pairs * channels * modes)`.
    pub loss: f64,
}

impl LeastSquaresAccumulator {
    pub fn new(steps: usize, grid: Grid, channels: Vec<String>) -> Self {
        let slots = (steps + 1) * channels.len() * grid.spectral_len();
        Self {
            steps,
            grid,
            channels,
            grams: vec![Gram::default(); slots],
            counts: vec![0; steps + 1],
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn add_pairs(&mut self, pairs: &[TrainingPair], exec: Exec) -> Result<()> {
        for p in pairs {
            if p.step > self.steps {
                return Err(Error::StepOutOfRange {
                    step: p.step,
                    max: self.steps,
                });
            }
            if p.latent.grid() != &self.grid || p.latent.num_channels() != self.channels.len() {
                return Err(Error::ShapeMismatch("training pair does not match the fit layout".into()));
            }
            p.latent.check_same_shape(&p.cond, "training pair")?;
            p.latent.check_same_shape(&p.target, "training pair")?;
        }
        let per_step = self.channels.len() * self.grid.spectral_len();
        let mut by_step: Vec<Vec<&TrainingPair>> = vec![Vec::new(); self.steps + 1];
        for p in pairs {
            by_step[p.step].push(p);
            self.counts[p.step] += 1;
        }
        let grams = &self.grams;
        let updated = exec.map_range(grams.len(), |slot| {
            let step = slot / per_step;
            let i = slot % per_step;
            let mut g = grams[slot];
            for p in &by_step[step] {
                g.add(p.latent.coeffs()[i], p.cond.coeffs()[i], p.target.coeffs()[i]);
            }
            g
        });
        self.grams = updated;
        Ok(())
    }

    pub fn merge(&mut self, other: &LeastSquaresAccumulator) -> Result<()> {
        if other.grams.len() != self.grams.len() || other.grid != self.grid {
            return Err(Error::ShapeMismatch("accumulators have different layouts".into()));
        }
        for (a, b) in self.grams.iter_mut().zip(&other.grams) {
            a.merge(b);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn solve(
        &self,
        ridge: f64,
        features: FeatureSet,
        exec: Exec,
    ) -> Result<(PerModeLinearPredictor, Vec<StepFitSummary>)> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParams(format!("ridge must be >= 0, got {ridge}")));
        }
        for (step, &n) in self.counts.iter().enumerate() {
            if n < MIN_PAIRS_PER_STEP {
                return Err(Error::InsufficientPairs {
                    step,
                    found: n,
                    required: MIN_PAIRS_PER_STEP,
                });
            }
        }
        let m = self.grid.spectral_len();
        let nc = self.channels.len();
        let solved = exec.try_map_range(self.grams.len(), |slot| {
            self.grams[slot]
                .solve(features, ridge)
                .ok_or(Error::SingularNormalMatrix {
                    step: slot / (nc * m),
                    channel: (slot / m) % nc,
                    mode: slot % m,
                })
        })?;
        let mut summary: Vec<StepFitSummary> = self
            .counts
            .iter()
            .enumerate()
            .map(|(step, &pairs)| StepFitSummary {
                step,
                pairs,
                loss: 0.0,
            })
            .collect();
        let mut coeffs = Vec::with_capacity(solved.len());
        for (slot, (c, rss)) in solved.into_iter().enumerate() {
            summary[slot / (nc * m)].loss += rss;
            coeffs.push(c);
        }
        for s in &mut summary {
            s.loss /= (s.pairs * nc * m) as f64;
        }
        let model = PerModeLinearPredictor::from_coefficients(
            self.steps,
            self.grid.clone(),
            self.channels.clone(),
            ridge,
            features,
            coeffs,
        )?;
        Ok((model, summary))
    }
}

/// Fit a per-mode linear predictor for refinement steps `0..=steps`.
pub fn fit_least_squares(
    pairs: &[TrainingPair],
    steps: usize,
    ridge: f64,
    features: FeatureSet,
    exec: Exec,
) -> Result<(PerModeLinearPredictor, Vec<StepFitSummary>)> {
    let first = pairs.first().ok_or(Error::InsufficientPairs {
        step: 0,
        found: 0,
        required: MIN_PAIRS_PER_STEP,
    })?;
    let mut acc = LeastSquaresAccumulator::new(
        steps,
        first.latent.grid().clone(),
        first.latent.channels().to_vec(),
    );
    acc.add_pairs(pairs, exec)?;
    acc.solve(ridge, features, exec)
}

/// Draws `pairs_per_transition` training pairs from every transition of
/// every trajectory and fits the predictor for `refiner`'s schedule.
/// Trajectory `i` draws from `stream_rng(seed, i)`, so the fit does not
/// depend on the execution policy.
pub fn fit_trajectories(
    refiner: &SpectralRefiner,
    trajectories: &[Trajectory],
    pairs_per_transition: usize,
    ridge: f64,
    features: FeatureSet,
    seed: u64,
    exec: Exec,
) -> Result<(PerModeLinearPredictor, Vec<StepFitSummary>)> {
    let first = trajectories.first().ok_or(Error::InsufficientPairs {
        step: 0,
        found: 0,
        required: MIN_PAIRS_PER_STEP,
    })?;
    let steps = refiner.schedule().steps();
    let partials = exec.try_map_range(trajectories.len(), |i| -> Result<LeastSquaresAccumulator> {
        let t = &trajectories[i];
        if t.grid() != first.grid() || t.channels() != first.channels() {
            return Err(Error::ShapeMismatch(format!("trajectory {i} has a different layout")));
        }
        let mut rng = stream_rng(seed, i as u64);
        let pairs = refiner.make_training_pairs(t, pairs_per_transition, &mut rng)?;
        let mut acc = LeastSquaresAccumulator::new(steps, t.grid().clone(), t.channels().to_vec());
        acc.add_pairs(&pairs, Exec::Sequential)?;
        Ok(acc)
    })?;
    let mut acc = LeastSquaresAccumulator::new(steps, first.grid().clone(), first.channels().to_vec());
    for p in &partials {
        acc.merge(p)?;
    }
    acc.solve(ridge, features, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cz(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    fn field(grid: &Grid, rng: &mut ChaCha8Rng) -> SpectralField {
        let coeffs = (0..grid.spectral_len()).map(|_| cz(rng)).collect();
        SpectralField::new(grid.clone(), vec!["u".into()], coeffs).unwrap()
    }

    fn pair(latent: SpectralField, cond: SpectralField, target: SpectralField, step: usize) -> TrainingPair {
        TrainingPair {
            step,
            noise: latent.clone(),
            latent,
            clean: Arc::new(target.clone()),
            cond: Arc::new(cond),
            target,
        }
    }

    fn planted(
        grid: &Grid,
        truth: &[ModeCoefficients],
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<TrainingPair> {
        (0..n)
            .map(|_| {
                let z = field(grid, rng);
                let y = field(grid, rng);
                let mut v = z.clone();
                for (i, o) in v.coeffs_mut().iter_mut().enumerate() {
                    let c = truth[i];
                    *o = c.latent * z.coeffs()[i] + c.cond * y.coeffs()[i] + c.offset;
                }
                pair(z, y, v, 0)
            })
            .collect()
    }

    #[test]
    fn recovers_planted_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let truth: Vec<ModeCoefficients> = (0..grid.spectral_len())
            .map(|_| ModeCoefficients {
                latent: cz(&mut rng),
                cond: cz(&mut rng),
                offset: cz(&mut rng),
            })
            .collect();
        let pairs = planted(&grid, &truth, 20, &mut rng);
        let (model, summary) = fit_least_squares(&pairs, 0, 0.0, FeatureSet::Full, Exec::default()).unwrap();
        for (m, t) in truth.iter().enumerate() {
            let c = model.coefficient(0, 0, m);
            assert!((c.latent - t.latent).norm() < 1e-10);
            assert!((c.cond - t.cond).norm() < 1e-10);
            assert!((c.offset - t.offset).norm() < 1e-10);
        }
        assert!(summary[0].loss < 1e-12, "loss {}", summary[0].loss);
    }

    #[test]
    fn zero_targets_shrink_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let pairs: Vec<_> = (0..10)
            .map(|_| {
                let z = field(&grid, &mut rng);
                let y = field(&grid, &mut rng);
                pair(z, y, SpectralField::zeros(grid.clone(), vec!["u".into()]), 0)
            })
            .collect();
        let (model, _) = fit_least_squares(&pairs, 0, 1e-3, FeatureSet::Full, Exec::default()).unwrap();
        for c in model.coefficients() {
            assert_eq!(c.latent.norm(), 0.0);
            assert_eq!(c.cond.norm(), 0.0);
            assert_eq!(c.offset.norm(), 0.0);
        }
    }

    #[test]
    fn residuals_orthogonal_to_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let pairs: Vec<_> = (0..30)
            .map(|_| pair(field(&grid, &mut rng), field(&grid, &mut rng), field(&grid, &mut rng), 0))
            .collect();
        let (model, _) = fit_least_squares(&pairs, 0, 0.0, FeatureSet::Full, Exec::default()).unwrap();
        for m in 0..grid.spectral_len() {
            let mut dots = [Complex64::default(); 3];
            for p in &pairs {
                let pred = model.predict(&p.latent, &p.cond, 0).unwrap();
                let r = p.target.coeffs()[m] - pred.coeffs()[m];
                dots[0] += p.latent.coeffs()[m].conj() * r;
                dots[1] += p.cond.coeffs()[m].conj() * r;
                dots[2] += r;
            }
            assert!(dots.iter().all(|d| d.norm() < 1e-8), "{dots:?}");
        }
    }

    #[test]
    fn nested_feature_sets_never_increase_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let pairs: Vec<_> = (0..40)
            .map(|_| {
                let z = field(&grid, &mut rng);
                let y = field(&grid, &mut rng);
                let mut v = field(&grid, &mut rng);
                for (i, o) in v.coeffs_mut().iter_mut().enumerate() {
                    *o = *o * 0.1 + y.coeffs()[i] * 0.7 - z.coeffs()[i] * 0.3;
                }
                pair(z, y, v, 0)
            })
            .collect();
        let loss = |f| fit_least_squares(&pairs, 0, 0.0, f, Exec::default()).unwrap().1[0].loss;
        let (a, b, c) = (loss(FeatureSet::Offset), loss(FeatureSet::CondOffset), loss(FeatureSet::Full));
        assert!(b <= a && c <= b, "{a} {b} {c}");
    }

    #[test]
    fn singular_without_ridge_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let zero = SpectralField::zeros(grid.clone(), vec!["u".into()]);
        let pairs: Vec<_> = (0..5)
            .map(|_| pair(field(&grid, &mut rng), zero.clone(), field(&grid, &mut rng), 0))
            .collect();
        assert!(matches!(
            fit_least_squares(&pairs, 0, 0.0, FeatureSet::Full, Exec::default()),
            Err(Error::SingularNormalMatrix { .. })
        ));
        assert!(fit_least_squares(&pairs, 0, 1e-8, FeatureSet::Full, Exec::default()).is_ok());
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let pairs: Vec<_> = (0..2)
            .map(|_| pair(field(&grid, &mut rng), field(&grid, &mut rng), field(&grid, &mut rng), 0))
            .collect();
        assert!(matches!(
            fit_least_squares(&pairs, 0, 1e-8, FeatureSet::Full, Exec::default()),
            Err(Error::InsufficientPairs { .. })
        ));
        assert!(fit_least_squares(&[], 0, 1e-8, FeatureSet::Full, Exec::default()).is_err());
    }

    #[test]
    fn predict_zero_inputs_gives_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let grid = Grid::new_1d(8, 1.0).unwrap();
        let coeffs: Vec<_> = (0..2 * grid.spectral_len())
            .map(|_| ModeCoefficients {
                latent: cz(&mut rng),
                cond: cz(&mut rng),
                offset: cz(&mut rng),
            })
            .collect();
        let model = PerModeLinearPredictor::from_coefficients(
            1, grid.clone(), vec!["u".into()], 0.0, FeatureSet::Full, coeffs.clone(),
        )
        .unwrap();
        let zero = SpectralField::zeros(grid.clone(), vec!["u".into()]);
        let out = model.predict(&zero, &zero, 1).unwrap();
        for (m, z) in out.coeffs().iter().enumerate() {
            assert_eq!(*z, coeffs[grid.spectral_len() + m].offset);
        }
        assert!(model.predict(&zero, &zero, 2).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let grid = Grid::new_1d(4, 1.0).unwrap();
        let model = PerModeLinearPredictor::from_coefficients(
            0, grid, vec!["u".into()], 0.0, FeatureSet::Full, vec![ModeCoefficients::default(); 3],
        )
        .unwrap();
        let json = model.to_json().unwrap().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            PerModeLinearPredictor::from_json(&json),
            Err(Error::ModelVersion { found: 2, .. })
        ));
    }
}
