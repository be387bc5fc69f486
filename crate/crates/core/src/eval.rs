//! Rollouts and the evaluation metrics: one-step and unrolled MSE, channel
//! group losses, correlation time and spectrum comparison.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{stream_rng, Exec};
use crate::field::RealField;
use crate::refiner::{Sampler, SpectralRefiner};
use crate::schedule::ScheduleConfig;
use crate::spectral::{mean_spectrum, power_spectrum, PowerSpectrum, SpectrumReduction};
use crate::surrogate::Predictor;
use crate::trajectory::Trajectory;

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.8;
/// Floor added to band powers before taking the log-ratio.
pub const LOG_RATIO_FLOOR: f64 = 1e-300;
pub const CSV_HEADER: &str = "metric,channel,step,value,seed,config_hash";

/// How per-trajectory values combine across a batch of trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchReduction {
    #[default]
    Mean,
    Sum,
}

impl BatchReduction {
    pub fn apply(self, values: &[f64]) -> f64 {
        let sum: f64 = values.iter().sum();
        match self {
            BatchReduction::Sum => sum,
            BatchReduction::Mean if values.is_empty() => 0.0,
            BatchReduction::Mean => sum / values.len() as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BatchReduction::Mean => "mean",
            BatchReduction::Sum => "sum",
        }
    }
}

/// How per-step errors of a rollout combine into the unrolled loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepReduction {
    #[default]
    Mean,
    Sum,
}

/// Autoregressive rollout: `n_steps` applications of `refine_step`, each
/// output feeding the next input. The result starts with `init`.
pub fn rollout<P: Predictor + ?Sized, R: Rng + ?Sized>(
    refiner: &SpectralRefiner,
    predictor: &P,
    sampler: Sampler,
    init: &RealField,
    n_steps: usize,
    dt: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(init.clone());
    for _ in 0..n_steps {
        let next = refiner.refine_step(states.last().unwrap(), predictor, sampler, rng)?;
        states.push(next);
    }
    Trajectory::new(0.0, dt, states)
}

/// Mean squared difference over space and channels.
pub fn mse(a: &RealField, b: &RealField) -> Result<f64> {
    check_fields(a, b)?;
    Ok(sq_diff(a.values(), b.values()) / a.values().len() as f64)
}

/// Mean squared difference restricted to the given channel indices.
pub fn channel_mse(a: &RealField, b: &RealField, channels: &[usize]) -> Result<f64> {
    check_fields(a, b)?;
    if channels.is_empty() {
        return Err(Error::InvalidParams("channel group is empty".into()));
    }
    let mut total = 0.0;
    for &c in channels {
        if c >= a.num_channels() {
            return Err(Error::InvalidParams(format!("channel index {c} out of range")));
        }
        total += sq_diff(a.channel(c), b.channel(c));
    }
    Ok(total / (channels.len() * a.grid().len()) as f64)
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_fields(a: &RealField, b: &RealField) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch("fields differ in grid or channels".into()));
    }
    Ok(())
}

fn check_trajectories(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if !pred.same_shape(truth) {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} states, truth has {} (or grids differ)",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// One-step error of every transition: `mse(refine_step(u_t), u_{t+1})`.
pub fn one_step_errors<P: Predictor + ?Sized, R: Rng + ?Sized>(
    refiner: &SpectralRefiner,
    predictor: &P,
    sampler: Sampler,
    truth: &Trajectory,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if truth.len() < 2 {
        return Err(Error::InvalidParams("one-step MSE needs at least two states".into()));
    }
    truth
        .states()
        .windows(2)
        .map(|w| mse(&refiner.refine_step(&w[0], predictor, sampler, rng)?, &w[1]))
        .collect()
}

/// One-step MSE of a trajectory, averaged over transitions.
pub fn one_step_mse<P: Predictor + ?Sized, R: Rng + ?Sized>(
    refiner: &SpectralRefiner,
    predictor: &P,
    sampler: Sampler,
    truth: &Trajectory,
    rng: &mut R,
) -> Result<f64> {
    let e = one_step_errors(refiner, predictor, sampler, truth, rng)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Per-step MSE between two trajectories, including the initial state.
pub fn step_mse(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    check_trajectories(pred, truth)?;
    pred.states().iter().zip(truth.states()).map(|(a, b)| mse(a, b)).collect()
}

/// Unrolled loss over the rollout steps `1..len`; the shared initial state is
/// not counted. A single-state trajectory scores its only state.
pub fn unrolled_mse(pred: &Trajectory, truth: &Trajectory, reduction: StepReduction) -> Result<f64> {
    unrolled_group_mse(pred, truth, None, reduction)
}

fn unrolled_group_mse(
    pred: &Trajectory,
    truth: &Trajectory,
    channels: Option<&[usize]>,
    reduction: StepReduction,
) -> Result<f64> {
    check_trajectories(pred, truth)?;
    let skip = usize::from(pred.len() > 1);
    let errs = pred.states()[skip..]
        .iter()
        .zip(&truth.states()[skip..])
        .map(|(a, b)| match channels {
            Some(c) => channel_mse(a, b, c),
            None => mse(a, b),
        })
        .collect::<Result<Vec<_>>>()?;
    let sum: f64 = errs.iter().sum();
    Ok(match reduction {
        StepReduction::Sum => sum,
        StepReduction::Mean => sum / errs.len() as f64,
    })
}

/// Pearson correlation over space and channels. Two constant fields count as
/// perfectly correlated when equal and uncorrelated otherwise.
pub fn correlation(a: &RealField, b: &RealField) -> Result<f64> {
    check_fields(a, b)?;
    let n = a.values().len() as f64;
    let ma = a.values().iter().sum::<f64>() / n;
    let mb = b.values().iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(if a.values() == b.values() { 1.0 } else { 0.0 });
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

pub fn correlation_series(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    check_trajectories(pred, truth)?;
    pred.states().iter().zip(truth.states()).map(|(a, b)| correlation(a, b)).collect()
}

/// Time of the first state whose correlation with the truth falls below
/// `threshold`, or the trajectory horizon if it never does.
pub fn correlation_time(pred: &Trajectory, truth: &Trajectory, threshold: f64) -> Result<f64> {
    let series = correlation_series(pred, truth)?;
    Ok(crossing_time(&series, threshold, truth.dt(), truth.horizon()))
}

fn crossing_time(series: &[f64], threshold: f64, dt: f64, horizon: f64) -> f64 {
    series
        .iter()
        .position(|&c| c < threshold)
        .map_or(horizon, |i| i as f64 * dt)
}

/// Spectra of prediction and truth averaged over states and trajectories,
/// with the per-band log-ratio `ln(pred / truth)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumComparison {
    pub pred: PowerSpectrum,
    pub truth: PowerSpectrum,
    /// `log_ratio[c][b]` over mean band powers.
    pub log_ratio: Vec<Vec<f64>>,
}

impl SpectrumComparison {
    /// Mean absolute log-ratio over the bands `from..` of every channel.
    pub fn mean_abs_log_ratio(&self, from: usize) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for row in &self.log_ratio {
            for v in &row[from.min(row.len())..] {
                total += v.abs();
                count += 1;
            }
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }
}

pub fn log_ratio(pred: f64, truth: f64) -> f64 {
    ((pred + LOG_RATIO_FLOOR) / (truth + LOG_RATIO_FLOOR)).ln()
}

/// Compares the averaged spectra of two trajectory batches. States after the
/// first are used when a trajectory has more than one, since rollouts share
/// their initial state with the truth.
pub fn spectrum_compare(
    pred: &[Trajectory],
    truth: &[Trajectory],
    bins: usize,
    reduction: SpectrumReduction,
) -> Result<SpectrumComparison> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "need equally many trajectories, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    for (p, t) in pred.iter().zip(truth) {
        check_trajectories(p, t)?;
    }
    let pred = batch_spectrum(pred, bins, reduction)?;
    let truth = batch_spectrum(truth, bins, reduction)?;
    let log_ratio = (0..pred.channels.len())
        .map(|c| {
            (0..pred.bands.len())
                .map(|b| log_ratio(pred.mean_power(c, b), truth.mean_power(c, b)))
                .collect()
        })
        .collect();
    Ok(SpectrumComparison { pred, truth, log_ratio })
}

fn batch_spectrum(batch: &[Trajectory], bins: usize, reduction: SpectrumReduction) -> Result<PowerSpectrum> {
    let mut spectra = Vec::new();
    for t in batch {
        let skip = usize::from(t.len() > 1);
        for s in &t.states()[skip..] {
            spectra.push(power_spectrum(s, bins, reduction)?);
        }
    }
    mean_spectrum(&spectra)
}

/// Which channels make up the scalar and the vector loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMapping {
    pub scalar: Vec<String>,
    pub vector: Vec<String>,
}

impl ChannelMapping {
    /// Velocity components `vx`, `vy` form the vector group and every other
    /// channel (vorticity for Navier–Stokes) the scalar group.
    pub fn infer(channels: &[String]) -> Self {
        let (vector, scalar) = channels
            .iter()
            .cloned()
            .partition(|c| c == "vx" || c == "vy");
        Self { scalar, vector }
    }

    fn indices(names: &[String], channels: &[String]) -> Vec<usize> {
        names
            .iter()
            .filter_map(|n| channels.iter().position(|c| c == n))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub sampler: Sampler,
    pub batch_reduction: BatchReduction,
    pub step_reduction: StepReduction,
    pub correlation_threshold: f64,
    pub spectrum_bins: usize,
    pub spectrum_reduction: SpectrumReduction,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sampler: Sampler::default(),
            batch_reduction: BatchReduction::Mean,
            step_reduction: StepReduction::Mean,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            spectrum_bins: 8,
            spectrum_reduction: SpectrumReduction::Radial,
        }
    }
}

/// Metrics of one ground-truth trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub seed: u64,
    pub one_step_mse: f64,
    pub unrolled_mse: f64,
    pub scalar_loss: Option<f64>,
    pub vector_loss: Option<f64>,
    pub correlation_time: f64,
    /// Per-step rollout error, initial state included.
    pub step_mse: Vec<f64>,
    pub correlation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub schedule: ScheduleConfig,
    pub model_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub trajectory_seeds: Vec<u64>,
    pub channel_mapping: ChannelMapping,
    pub options: EvalOptions,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub channel: String,
    /// Rollout step, or band index for spectrum rows; empty for scalars.
    pub step: Option<usize>,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metadata: ReportMetadata,
    pub trajectories: Vec<TrajectoryMetrics>,
    pub spectrum: SpectrumComparison,
    pub rows: Vec<MetricRow>,
}

/// Rolls the model out from the first state of every truth trajectory and
/// scores it. Trajectory `i` draws from `stream_rng(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<P: Predictor + ?Sized>(
    refiner: &SpectralRefiner,
    predictor: &P,
    truths: &[(u64, Trajectory)],
    options: &EvalOptions,
    seed: u64,
    model_hash: &str,
    config_hash: &str,
    exec: Exec,
) -> Result<MetricsReport> {
    if truths.is_empty() {
        return Err(Error::InvalidParams("evaluation needs at least one trajectory".into()));
    }
    if !(options.correlation_threshold.is_finite()) {
        return Err(Error::InvalidParams("correlation threshold must be finite".into()));
    }
    let channels = truths[0].1.channels().to_vec();
    let mapping = ChannelMapping::infer(&channels);
    let scalar_idx = ChannelMapping::indices(&mapping.scalar, &channels);
    let vector_idx = ChannelMapping::indices(&mapping.vector, &channels);

    let results = exec.try_map_range(truths.len(), |i| -> Result<(TrajectoryMetrics, Trajectory)> {
        let (tseed, truth) = &truths[i];
        let mut rng = stream_rng(seed, i as u64);
        let pred = rollout(
            refiner,
            predictor,
            options.sampler,
            &truth.states()[0],
            truth.len() - 1,
            truth.dt(),
            &mut rng,
        )?;
        let one = if truth.len() > 1 {
            one_step_mse(refiner, predictor, options.sampler, truth, &mut rng)?
        } else {
            0.0
        };
        let group = |idx: &[usize]| -> Result<Option<f64>> {
            if idx.is_empty() {
                Ok(None)
            } else {
                unrolled_group_mse(&pred, truth, Some(idx), options.step_reduction).map(Some)
            }
        };
        let correlation = correlation_series(&pred, truth)?;
        let metrics = TrajectoryMetrics {
            seed: *tseed,
            one_step_mse: one,
            unrolled_mse: unrolled_mse(&pred, truth, options.step_reduction)?,
            scalar_loss: group(&scalar_idx)?,
            vector_loss: group(&vector_idx)?,
            correlation_time: crossing_time(
                &correlation,
                options.correlation_threshold,
                truth.dt(),
                truth.horizon(),
            ),
            step_mse: step_mse(&pred, truth)?,
            correlation,
        };
        Ok((metrics, pred))
    })?;
    let (metrics, preds): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let truth_list: Vec<Trajectory> = truths.iter().map(|(_, t)| t.clone()).collect();
    let spectrum = spectrum_compare(&preds, &truth_list, options.spectrum_bins, options.spectrum_reduction)?;

    let mut rows = Vec::new();
    let mut push = |metric: &str, channel: &str, step: Option<usize>, value: f64, seed: u64| {
        rows.push(MetricRow {
            metric: metric.into(),
            channel: channel.into(),
            step,
            value,
            seed,
            config_hash: config_hash.into(),
        })
    };
    let mut scalars: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in &metrics {
        let mut named = vec![
            ("one_step_mse", "all", m.one_step_mse),
            ("unrolled_mse", "all", m.unrolled_mse),
            ("correlation_time", "all", m.correlation_time),
        ];
        if let Some(v) = m.scalar_loss {
            named.push(("scalar_loss", "scalar", v));
        }
        if let Some(v) = m.vector_loss {
            named.push(("vector_loss", "vector", v));
        }
        for (name, channel, v) in named {
            push(name, channel, None, v, m.seed);
            scalars.entry(name).or_default().push(v);
        }
        for (k, v) in m.step_mse.iter().enumerate() {
            push("step_mse", "all", Some(k), *v, m.seed);
        }
        for (k, v) in m.correlation.iter().enumerate() {
            push("correlation", "all", Some(k), *v, m.seed);
        }
    }
    for (name, values) in &scalars {
        let channel = match *name {
            "scalar_loss" => "scalar",
            "vector_loss" => "vector",
            _ => "all",
        };
        let reduced = if *name == "correlation_time" {
            BatchReduction::Mean.apply(values)
        } else {
            options.batch_reduction.apply(values)
        };
        let suffix = if *name == "correlation_time" { "mean" } else { options.batch_reduction.name() };
        push(&format!("{name}_{suffix}"), channel, None, reduced, seed);
        push(&format!("{name}_stderr"), channel, None, stderr(values), seed);
    }
    for (c, name) in spectrum.pred.channels.iter().enumerate() {
        for b in 0..spectrum.pred.bands.len() {
            push("psd_pred", name, Some(b), spectrum.pred.mean_power(c, b), seed);
            push("psd_true", name, Some(b), spectrum.truth.mean_power(c, b), seed);
            push("psd_log_ratio", name, Some(b), spectrum.log_ratio[c][b], seed);
        }
    }
    for row in &rows {
        if !row.value.is_finite() {
            return Err(Error::NonFinite(format!("metric {} for seed {}", row.metric, row.seed)));
        }
    }

    Ok(MetricsReport {
        metadata: ReportMetadata {
            schedule: refiner.schedule().config().clone(),
            model_hash: model_hash.into(),
            config_hash: config_hash.into(),
            seed,
            trajectory_seeds: truths.iter().map(|(s, _)| *s).collect(),
            channel_mapping: mapping,
            options: options.clone(),
        },
        trajectories: metrics,
        spectrum,
        rows,
    })
}

/// Standard error of the mean; zero for fewer than two values.
pub fn stderr(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Serializes rows under the fixed `metric,channel,step,value,seed,config_hash` header.
pub fn rows_to_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))
        .map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

impl MetricsReport {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        rows_to_csv(&self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        crate::io::write_atomic(csv_path, &self.to_csv()?)?;
        crate::io::write_atomic(json_path, self.to_json()?.as_bytes())
    }
}

/// Spectrum rows in the metrics CSV layout, with the band index as `step`.
pub fn spectrum_rows(spectrum: &PowerSpectrum, metric: &str, seed: u64, config_hash: &str) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (c, name) in spectrum.channels.iter().enumerate() {
        for b in 0..spectrum.bands.len() {
            rows.push(MetricRow {
                metric: metric.into(),
                channel: name.clone(),
                step: Some(b),
                value: spectrum.mean_power(c, b),
                seed,
                config_hash: config_hash.into(),
            });
        }
    }
    rows
}
