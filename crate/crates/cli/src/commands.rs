use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spectral_refiner::eval::{
    correlation_series, rows_to_csv, spectrum_compare, spectrum_rows, step_mse, MetricRow,
};
use spectral_refiner::io::write_atomic;
use spectral_refiner::spectral::mean_spectrum;
use spectral_refiner::{
    dataset_split, evaluate, fit_trajectories, power_spectrum, rollout, scaling_vector,
    simulate_ks, simulate_ns, stream_rng, Exec, PerModeLinearPredictor, RefinementSchedule,
    SpectralRefiner, Trajectory,
};

use crate::config::{Pde, RunConfig};

pub const DATA_MANIFEST: &str = "manifest.json";
const DATA_FORMAT: &str = "spectral-refiner-data";
const ROLLOUT_FORMAT: &str = "spectral-refiner-rollouts";

pub struct RunContext {
    pub config: RunConfig,
    pub config_hash: String,
    pub out: PathBuf,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSeeds {
    pub train: Vec<u64>,
    pub valid: Vec<u64>,
    pub test: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSeeds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_sha256: Option<String>,
}

#[derive(Debug, Serialize)]
struct FitReport<'a> {
    config_hash: &'a str,
    data_manifest_sha256: String,
    model_sha256: String,
    steps: &'a [spectral_refiner::surrogate::StepFitSummary],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

impl RunContext {
    fn data_dir(&self) -> PathBuf {
        self.out.join(&self.config.paths.data_dir)
    }

    fn model_path(&self) -> PathBuf {
        self.out.join(&self.config.paths.model)
    }

    fn refiner(&self, traj: &Trajectory) -> Result<SpectralRefiner> {
        let schedule = RefinementSchedule::new(self.config.schedule.clone())?;
        Ok(SpectralRefiner::new(schedule, scaling_vector(traj.grid()))?)
    }

    fn simulate(&self, seed: u64) -> Result<Trajectory> {
        Ok(match self.config.pde {
            Pde::Ks => simulate_ks(&spectral_refiner::KsParams { seed, ..self.config.ks.clone() })?,
            Pde::Ns => simulate_ns(&spectral_refiner::NsParams { seed, ..self.config.ns.clone() })?,
        })
    }

    fn load_manifest(&self) -> Result<Manifest> {
        let path = self.data_dir().join(DATA_MANIFEST);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading data manifest {} (run `generate` first)", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != DATA_FORMAT {
            bail!("{} is not a data manifest", path.display());
        }
        Ok(manifest)
    }

    /// Loads the trajectories of `seeds`, checking each file against its recorded digest.
    fn load_split(&self, manifest: &Manifest, seeds: &[u64]) -> Result<Vec<(u64, Trajectory)>> {
        if seeds.is_empty() {
            bail!("the requested split is empty");
        }
        let dir = self.data_dir();
        let loaded = self.exec.try_map_range(seeds.len(), |i| -> Result<(u64, Trajectory)> {
            let seed = seeds[i];
            let entry = manifest
                .files
                .iter()
                .find(|f| f.seed == seed)
                .with_context(|| format!("seed {seed} missing from manifest"))?;
            let path = dir.join(&entry.path);
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            if sha256_hex(&bytes) != entry.sha256 {
                bail!("{} does not match its manifest digest", path.display());
            }
            Ok((seed, Trajectory::from_reader(std::io::Cursor::new(bytes))?))
        })?;
        Ok(loaded)
    }

    fn split(&self, manifest: &Manifest) -> Result<SplitSeeds> {
        manifest.split.clone().context("data manifest has no split")
    }

    fn load_model(&self) -> Result<(PerModeLinearPredictor, String)> {
        let path = self.model_path();
        let bytes = std::fs::read(&path)
            .with_context(|| format!("reading model {} (run `fit` first)", path.display()))?;
        let model = PerModeLinearPredictor::from_json(std::str::from_utf8(&bytes)?)?;
        if model.steps() != self.config.schedule.steps {
            bail!(
                "model has {} refinement steps but the schedule has {}",
                model.steps(),
                self.config.schedule.steps
            );
        }
        Ok((model, sha256_hex(&bytes)))
    }

    fn write_rows(&self, name: &str, rows: &[MetricRow]) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, &rows_to_csv(rows)?)?;
        Ok(path)
    }

    fn row(&self, metric: &str, channel: &str, step: Option<usize>, value: f64, seed: u64) -> MetricRow {
        MetricRow {
            metric: metric.into(),
            channel: channel.into(),
            step,
            value,
            seed,
            config_hash: self.config_hash.clone(),
        }
    }
}

pub fn generate(ctx: &RunContext) -> Result<()> {
    let data = &ctx.config.data;
    let n = data.num_trajectories;
    let split = dataset_split(n, data.split, ctx.config.seed)?;
    let dir = ctx.data_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = ctx.exec.try_map_range(n, |i| -> Result<FileEntry> {
        let seed = data.first_seed + i as u64;
        let traj = ctx.simulate(seed)?;
        let bytes = traj.to_bytes()?;
        let name = format!("traj_{seed:06}.bin");
        write_atomic(&dir.join(&name), &bytes)?;
        Ok(FileEntry { seed, path: name, sha256: sha256_hex(&bytes) })
    })?;
    let seeds = |idx: &[usize]| idx.iter().map(|&i| files[i].seed).collect();
    let manifest = Manifest {
        format: DATA_FORMAT.into(),
        config_hash: ctx.config_hash.clone(),
        split: Some(SplitSeeds { train: seeds(&split.train), valid: seeds(&split.valid), test: seeds(&split.test) }),
        files,
        model_sha256: None,
    };
    write_json(&dir.join(DATA_MANIFEST), &manifest)?;
    info!("wrote {n} trajectories to {}", dir.display());
    Ok(())
}

pub fn fit(ctx: &RunContext) -> Result<()> {
    let manifest = ctx.load_manifest()?;
    let split = ctx.split(&manifest)?;
    let train: Vec<Trajectory> = ctx.load_split(&manifest, &split.train)?.into_iter().map(|(_, t)| t).collect();
    let refiner = ctx.refiner(&train[0])?;
    let fc = &ctx.config.fit;
    let (model, summary) = fit_trajectories(
        &refiner,
        &train,
        fc.pairs_per_transition,
        fc.ridge,
        fc.features,
        ctx.config.seed,
        ctx.exec,
    )?;
    let text = model.to_json()?;
    let path = ctx.model_path();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(&path, text.as_bytes())?;
    let rows: Vec<MetricRow> = summary
        .iter()
        .map(|s| ctx.row("train_loss", "all", Some(s.step), s.loss, ctx.config.seed))
        .collect();
    ctx.write_rows("fit_summary.csv", &rows)?;
    let manifest_bytes = std::fs::read(ctx.data_dir().join(DATA_MANIFEST))?;
    write_json(
        &ctx.out.join("fit_summary.json"),
        &FitReport {
            config_hash: &ctx.config_hash,
            data_manifest_sha256: sha256_hex(&manifest_bytes),
            model_sha256: sha256_hex(text.as_bytes()),
            steps: &summary,
        },
    )?;
    for s in &summary {
        info!("step {}: {} pairs, loss {:.3e}", s.step, s.pairs, s.loss);
    }
    Ok(())
}

/// Test trajectories with their seeds, the matching rollouts and the model digest.
type TestRollouts = (Vec<(u64, Trajectory)>, Vec<Trajectory>, String);

/// Rolls the model out from the first state of every test trajectory.
/// Trajectory `i` draws from `stream_rng(seed, i)`, the same stream `eval` uses.
fn test_rollouts(ctx: &RunContext) -> Result<TestRollouts> {
    let manifest = ctx.load_manifest()?;
    let split = ctx.split(&manifest)?;
    let truths = ctx.load_split(&manifest, &split.test)?;
    let (model, model_hash) = ctx.load_model()?;
    let refiner = ctx.refiner(&truths[0].1)?;
    let sampler = ctx.config.eval.sampler;
    let preds = ctx.exec.try_map_range(truths.len(), |i| -> Result<Trajectory> {
        let t = &truths[i].1;
        let mut rng = stream_rng(ctx.config.seed, i as u64);
        Ok(rollout(&refiner, &model, sampler, &t.states()[0], t.len() - 1, t.dt(), &mut rng)?)
    })?;
    Ok((truths, preds, model_hash))
}

pub fn rollout_cmd(ctx: &RunContext) -> Result<()> {
    let (truths, preds, model_hash) = test_rollouts(ctx)?;
    let dir = ctx.out.join(&ctx.config.paths.rollout_dir);
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for ((seed, truth), pred) in truths.iter().zip(&preds) {
        let bytes = pred.to_bytes()?;
        let name = format!("pred_{seed:06}.bin");
        write_atomic(&dir.join(&name), &bytes)?;
        files.push(FileEntry { seed: *seed, path: name, sha256: sha256_hex(&bytes) });
        for (k, v) in step_mse(pred, truth)?.into_iter().enumerate() {
            rows.push(ctx.row("step_mse", "all", Some(k), v, *seed));
        }
        for (k, v) in correlation_series(pred, truth)?.into_iter().enumerate() {
            rows.push(ctx.row("correlation", "all", Some(k), v, *seed));
        }
    }
    ctx.write_rows("rollout.csv", &rows)?;
    write_json(
        &dir.join(DATA_MANIFEST),
        &Manifest {
            format: ROLLOUT_FORMAT.into(),
            config_hash: ctx.config_hash.clone(),
            files,
            split: None,
            model_sha256: Some(model_hash),
        },
    )
}

pub fn eval(ctx: &RunContext) -> Result<()> {
    let manifest = ctx.load_manifest()?;
    let split = ctx.split(&manifest)?;
    let truths = ctx.load_split(&manifest, &split.test)?;
    let (model, model_hash) = ctx.load_model()?;
    let refiner = ctx.refiner(&truths[0].1)?;
    let report = evaluate(
        &refiner,
        &model,
        &truths,
        &ctx.config.eval,
        ctx.config.seed,
        &model_hash,
        &ctx.config_hash,
        ctx.exec,
    )?;
    report.write(&ctx.out.join("metrics.csv"), &ctx.out.join("metrics.json"))?;
    for r in report.rows.iter().filter(|r| r.metric.ends_with("_mean") || r.metric.ends_with("_sum")) {
        info!("{} = {:.4e}", r.metric, r.value);
    }
    Ok(())
}

/// Mean spectrum of the given trajectory files, or of the model's test-set
/// rollouts against the truth when no inputs are given.
pub fn spectrum(ctx: &RunContext, inputs: &[PathBuf]) -> Result<()> {
    let opts = &ctx.config.eval;
    let rows = if inputs.is_empty() {
        let (truths, preds, _) = test_rollouts(ctx)?;
        let truth_list: Vec<Trajectory> = truths.into_iter().map(|(_, t)| t).collect();
        let cmp = spectrum_compare(&preds, &truth_list, opts.spectrum_bins, opts.spectrum_reduction)?;
        let seed = ctx.config.seed;
        let mut rows = spectrum_rows(&cmp.pred, "psd_pred", seed, &ctx.config_hash);
        rows.extend(spectrum_rows(&cmp.truth, "psd_true", seed, &ctx.config_hash));
        for (c, name) in cmp.truth.channels.iter().enumerate() {
            for (b, v) in cmp.log_ratio[c].iter().enumerate() {
                rows.push(ctx.row("psd_log_ratio", name, Some(b), *v, seed));
            }
        }
        rows
    } else {
        let mut spectra = Vec::new();
        for path in inputs {
            let t = Trajectory::read(path).with_context(|| format!("reading {}", path.display()))?;
            for s in t.states() {
                spectra.push(power_spectrum(s, opts.spectrum_bins, opts.spectrum_reduction)?);
            }
        }
        spectrum_rows(&mean_spectrum(&spectra)?, "psd", ctx.config.seed, &ctx.config_hash)
    };
    ctx.write_rows("spectrum.csv", &rows)?;
    Ok(())
}

/// Column names of the schedule dump for the configured representative scalings.
pub fn schedule_header(lambdas: &[f64]) -> Vec<String> {
    let mut cols: Vec<String> = ["k", "t", "alpha", "sigma", "tau"].iter().map(|s| s.to_string()).collect();
    for l in lambdas {
        for q in ["d", "r", "dr2_dphi"] {
            cols.push(format!("{q}_{l}"));
        }
    }
    cols
}

pub fn schedule(ctx: &RunContext) -> Result<()> {
    let s = RefinementSchedule::new(ctx.config.schedule.clone())?;
    let lambdas = &ctx.config.schedule_dump.lambdas;
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        bail!("representative scaling {l} is outside [0, 1]");
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(schedule_header(lambdas))?;
    for k in 0..=s.steps() {
        let mut rec = vec![k.to_string(), s.t(k).to_string(), s.alpha(k).to_string(), s.sigma(k).to_string(), s.tau(k)?.to_string()];
        for &l in lambdas {
            let (d, r, dr2) = s.mode_profile(k, l)?;
            rec.extend([d.to_string(), r.to_string(), dr2.to_string()]);
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    std::fs::create_dir_all(&ctx.out)?;
    write_atomic(&ctx.out.join("schedule.csv"), &bytes)?;
    Ok(())
}
