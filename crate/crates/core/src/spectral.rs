//! Orthonormal real-input DFTs, spectral noise, the frequency scaling vector
//! and power-spectrum analysis.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Grid, RealField, SpectralField};

/// Tolerance on `|X[m] - conj(X[partner])|`, relative to `max(1, max|X|)`.
pub const HERMITIAN_TOL: f64 = 1e-8;
/// Tolerance on the discarded imaginary part after the inverse transform.
pub const IMAG_RESIDUE_TOL: f64 = 1e-10;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Forward transform of one channel: `values` is `[y][x]`, output `[ky][kx_half]`,
/// unnormalized.
fn forward_channel(grid: &Grid, values: &[f64], out: &mut [Complex64]) {
    let (ny, nx, h) = (grid.ny(), grid.nx(), grid.half_nx());
    let row_fft = plan(nx, false);
    let mut buf = vec![Complex64::default(); nx];
    for j in 0..ny {
        for (b, &v) in buf.iter_mut().zip(&values[j * nx..(j + 1) * nx]) {
            *b = Complex64::new(v, 0.0);
        }
        row_fft.process(&mut buf);
        out[j * h..(j + 1) * h].copy_from_slice(&buf[..h]);
    }
    if ny > 1 {
        let col_fft = plan(ny, false);
        let mut col = vec![Complex64::default(); ny];
        for i in 0..h {
            for j in 0..ny {
                col[j] = out[j * h + i];
            }
            col_fft.process(&mut col);
            for j in 0..ny {
                out[j * h + i] = col[j];
            }
        }
    }
}

/// Inverse transform of one Hermitian-consistent channel, unnormalized.
/// Returns the largest discarded imaginary part.
fn inverse_channel(grid: &Grid, coeffs: &[Complex64], out: &mut [f64]) -> f64 {
    let (ny, nx, h) = (grid.ny(), grid.nx(), grid.half_nx());
    let mut work = coeffs.to_vec();
    if ny > 1 {
        let col_ifft = plan(ny, true);
        let mut col = vec![Complex64::default(); ny];
        for i in 0..h {
            for j in 0..ny {
                col[j] = work[j * h + i];
            }
            col_ifft.process(&mut col);
            for j in 0..ny {
                work[j * h + i] = col[j];
            }
        }
    }
    let row_ifft = plan(nx, true);
    let mut buf = vec![Complex64::default(); nx];
    let mut residue = 0.0f64;
    for j in 0..ny {
        let row = &work[j * h..(j + 1) * h];
        buf[..h].copy_from_slice(row);
        for i in 1..nx / 2 {
            buf[nx - i] = row[i].conj();
        }
        row_ifft.process(&mut buf);
        for (o, b) in out[j * nx..(j + 1) * nx].iter_mut().zip(&buf) {
            *o = b.re;
            residue = residue.max(b.im.abs());
        }
    }
    residue
}

/// Orthonormal forward transform of every channel.
pub fn dft_forward(field: &RealField) -> Result<SpectralField> {
    if !field.is_finite() {
        return Err(Error::NonFinite("dft_forward input".into()));
    }
    let grid = field.grid().clone();
    let m = grid.spectral_len();
    let norm = 1.0 / (grid.len() as f64).sqrt();
    let mut coeffs = vec![Complex64::default(); m * field.num_channels()];
    for c in 0..field.num_channels() {
        let out = &mut coeffs[c * m..(c + 1) * m];
        forward_channel(&grid, field.channel(c), out);
        for z in out.iter_mut() {
            *z *= norm;
        }
    }
    SpectralField::new(grid, field.channels().to_vec(), coeffs)
}

/// Largest Hermitian mismatch over the self-conjugate columns, with the mode
/// where it occurs.
pub fn hermitian_mismatch(spec: &SpectralField) -> (f64, usize) {
    let grid = spec.grid();
    let m = grid.spectral_len();
    let mut worst = (0.0, 0);
    for c in 0..spec.num_channels() {
        let ch = spec.channel(c);
        for mode in 0..m {
            if let Some(p) = grid.conjugate_partner(mode) {
                let d = (ch[mode] - ch[p].conj()).norm();
                if d > worst.0 {
                    worst = (d, c * m + mode);
                }
            }
        }
    }
    worst
}

/// Orthonormal inverse transform. Fails if the half spectrum is not the
/// transform of a real field (to [`HERMITIAN_TOL`]).
pub fn dft_inverse(spec: &SpectralField) -> Result<RealField> {
    if !spec.is_finite() {
        return Err(Error::NonFinite("dft_inverse input".into()));
    }
    let grid = spec.grid().clone();
    let m = grid.spectral_len();
    let scale = spec
        .coeffs()
        .iter()
        .fold(1.0f64, |acc, z| acc.max(z.norm()));
    let (mismatch, at) = hermitian_mismatch(spec);
    if mismatch > HERMITIAN_TOL * scale {
        let (ky, kx) = grid.wavenumbers(at % m);
        return Err(Error::HermitianViolation {
            mode: format!("channel {} (ky={ky}, kx={kx})", at / m),
            mismatch,
        });
    }
    let n = grid.len();
    let norm = 1.0 / (n as f64).sqrt();
    let mut values = vec![0.0; n * spec.num_channels()];
    let mut residue = 0.0f64;
    for c in 0..spec.num_channels() {
        let mut ch = spec.channel(c).to_vec();
        // Project the self-conjugate columns onto exact symmetry.
        for mode in 0..m {
            if let Some(p) = grid.conjugate_partner(mode) {
                if p >= mode {
                    let avg = (ch[mode] + ch[p].conj()) * 0.5;
                    ch[mode] = avg;
                    ch[p] = avg.conj();
                }
            }
        }
        let out = &mut values[c * n..(c + 1) * n];
        residue = residue.max(inverse_channel(&grid, &ch, out) * norm);
        for v in out.iter_mut() {
            *v *= norm;
        }
    }
    if residue > IMAG_RESIDUE_TOL * scale {
        return Err(Error::ImaginaryResidue(residue));
    }
    RealField::new(grid, spec.channels().to_vec(), values)
}

/// Draws spectral noise distributed exactly like `dft_forward` of i.i.d.
/// standard-normal real noise: circular `CN(0, 1)` on paired modes, real
/// `N(0, 1)` on self-conjugate modes, conjugate partners mirrored.
pub fn sample_spectral_noise<R: Rng + ?Sized>(
    grid: &Grid,
    channels: &[String],
    rng: &mut R,
) -> SpectralField {
    let m = grid.spectral_len();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let mut coeffs = vec![Complex64::default(); m * channels.len()];
    for c in 0..channels.len() {
        let ch = &mut coeffs[c * m..(c + 1) * m];
        for mode in 0..m {
            match grid.conjugate_partner(mode) {
                Some(p) if p == mode => {
                    let re: f64 = StandardNormal.sample(rng);
                    ch[mode] = Complex64::new(re, 0.0);
                }
                // The partner with the smaller index owns the draw.
                Some(p) if p < mode => ch[mode] = ch[p].conj(),
                _ => {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    ch[mode] = Complex64::new(re * half, im * half);
                }
            }
        }
    }
    SpectralField::new(grid.clone(), channels.to_vec(), coeffs)
        .expect("noise layout matches grid")
}

/// Per-mode frequency scaling: squared integer wavenumber magnitude divided
/// by its largest value on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyScaling {
    grid: Grid,
    lambda: Vec<f64>,
}

impl FrequencyScaling {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    /// A scaling vector with arbitrary values, for probing schedule algebra on
    /// hand-picked frequencies.
    pub fn from_values(grid: Grid, lambda: Vec<f64>) -> Result<Self> {
        if lambda.len() != grid.spectral_len() {
            return Err(Error::ShapeMismatch(format!(
                "scaling has {} entries, grid has {} modes",
                lambda.len(),
                grid.spectral_len()
            )));
        }
        Ok(Self { grid, lambda })
    }
}

pub fn scaling_vector(grid: &Grid) -> FrequencyScaling {
    let k2 = |mode: usize| {
        let (ky, kx) = grid.wavenumbers(mode);
        (ky * ky + kx * kx) as f64
    };
    let kmax2 = grid
        .points()
        .iter()
        .map(|&n| ((n / 2) * (n / 2)) as f64)
        .sum::<f64>();
    let lambda = (0..grid.spectral_len()).map(|m| k2(m) / kmax2).collect();
    FrequencyScaling {
        grid: grid.clone(),
        lambda,
    }
}

/// How a field is reduced to a one-dimensional spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumReduction {
    /// Bin modes by radial integer wavenumber `|k|`.
    #[default]
    Radial,
    /// Transform each row along `x` and average the row spectra over `y`.
    AlongX,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBand {
    pub k_lo: f64,
    pub k_hi: f64,
    /// Full-spectrum modes falling in the band (per row for `AlongX`).
    pub modes: usize,
}

/// Band powers per channel. `power[c][b]` is the sum of `|X|^2` over the
/// full-spectrum modes of band `b` (summed over rows for `AlongX`), so the
/// bands of one channel add up to the channel's `sum(u^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub channels: Vec<String>,
    pub reduction: SpectrumReduction,
    pub rows: usize,
    pub bands: Vec<SpectrumBand>,
    pub power: Vec<Vec<f64>>,
}

impl PowerSpectrum {
    /// Mean squared amplitude per mode: band power over modes (and rows).
    pub fn mean_power(&self, channel: usize, band: usize) -> f64 {
        let b = &self.bands[band];
        if b.modes == 0 {
            0.0
        } else {
            self.power[channel][band] / (b.modes * self.rows) as f64
        }
    }

    pub fn total(&self, channel: usize) -> f64 {
        self.power[channel].iter().sum()
    }

    /// Channel-averaged mean power per band.
    pub fn channel_mean(&self) -> Vec<f64> {
        let nc = self.channels.len() as f64;
        (0..self.bands.len())
            .map(|b| {
                (0..self.channels.len())
                    .map(|c| self.mean_power(c, b))
                    .sum::<f64>()
                    / nc
            })
            .collect()
    }
}

struct Binning {
    width: f64,
    bins: usize,
}

impl Binning {
    fn new(kmax: f64, bins: usize) -> Self {
        Self {
            width: (kmax + 1.0) / bins as f64,
            bins,
        }
    }

    fn index(&self, k: f64) -> usize {
        ((k / self.width) as usize).min(self.bins - 1)
    }

    fn bands(&self) -> Vec<SpectrumBand> {
        (0..self.bins)
            .map(|b| SpectrumBand {
                k_lo: b as f64 * self.width,
                k_hi: (b + 1) as f64 * self.width,
                modes: 0,
            })
            .collect()
    }
}

/// Largest `|k|` reachable by the reduction; `bins = kmax + 1` gives one band
/// per integer wavenumber in 1D.
pub fn spectrum_kmax(grid: &Grid, reduction: SpectrumReduction) -> f64 {
    match (grid.dims(), reduction) {
        (2, SpectrumReduction::Radial) => {
            let (a, b) = ((grid.ny() / 2) as f64, (grid.nx() / 2) as f64);
            (a * a + b * b).sqrt()
        }
        _ => (grid.nx() / 2) as f64,
    }
}

/// Binned power spectrum of a spectral field.
pub fn power_spectrum_of(
    spec: &SpectralField,
    bins: usize,
    reduction: SpectrumReduction,
) -> Result<PowerSpectrum> {
    if bins == 0 {
        return Err(Error::InvalidParams("spectrum needs at least one bin".into()));
    }
    if reduction == SpectrumReduction::AlongX && spec.grid().dims() == 2 {
        let field = dft_inverse(spec)?;
        return power_spectrum(&field, bins, reduction);
    }
    let grid = spec.grid();
    let binning = Binning::new(spectrum_kmax(grid, SpectrumReduction::Radial), bins);
    let mut bands = binning.bands();
    let m = grid.spectral_len();
    let mut index = Vec::with_capacity(m);
    for mode in 0..m {
        let (ky, kx) = grid.wavenumbers(mode);
        let k = ((ky * ky + kx * kx) as f64).sqrt();
        let b = binning.index(k);
        bands[b].modes += grid.multiplicity(mode) as usize;
        index.push(b);
    }
    let power = (0..spec.num_channels())
        .map(|c| {
            let mut p = vec![0.0; bins];
            for (mode, z) in spec.channel(c).iter().enumerate() {
                p[index[mode]] += grid.multiplicity(mode) as f64 * z.norm_sqr();
            }
            p
        })
        .collect();
    Ok(PowerSpectrum {
        channels: spec.channels().to_vec(),
        reduction: SpectrumReduction::Radial,
        rows: 1,
        bands,
        power,
    })
}

/// Binned power spectrum of a real field. 1D fields and `Radial` reduction go
/// through the full transform; `AlongX` on a 2D field transforms rows only.
pub fn power_spectrum(
    field: &RealField,
    bins: usize,
    reduction: SpectrumReduction,
) -> Result<PowerSpectrum> {
    if bins == 0 {
        return Err(Error::InvalidParams("spectrum needs at least one bin".into()));
    }
    let grid = field.grid();
    if grid.dims() == 1 || reduction == SpectrumReduction::Radial {
        return power_spectrum_of(&dft_forward(field)?, bins, SpectrumReduction::Radial);
    }
    if !field.is_finite() {
        return Err(Error::NonFinite("power_spectrum input".into()));
    }
    let (ny, nx) = (grid.ny(), grid.nx());
    let row_grid = Grid::new_1d(nx, grid.dx())?;
    let binning = Binning::new((nx / 2) as f64, bins);
    let mut bands = binning.bands();
    for mode in 0..row_grid.spectral_len() {
        bands[binning.index(mode as f64)].modes += row_grid.multiplicity(mode) as usize;
    }
    let norm = 1.0 / nx as f64;
    let mut power = Vec::with_capacity(field.num_channels());
    let mut out = vec![Complex64::default(); row_grid.spectral_len()];
    for c in 0..field.num_channels() {
        let mut p = vec![0.0; bins];
        let ch = field.channel(c);
        for j in 0..ny {
            forward_channel(&row_grid, &ch[j * nx..(j + 1) * nx], &mut out);
            for (mode, z) in out.iter().enumerate() {
                p[binning.index(mode as f64)] +=
                    row_grid.multiplicity(mode) as f64 * z.norm_sqr() * norm;
            }
        }
        power.push(p);
    }
    Ok(PowerSpectrum {
        channels: field.channels().to_vec(),
        reduction,
        rows: ny,
        bands,
        power,
    })
}

/// Average the band powers of several spectra of identical layout.
pub fn mean_spectrum(spectra: &[PowerSpectrum]) -> Result<PowerSpectrum> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::InvalidParams("no spectra to average".into()))?;
    let mut out = first.clone();
    for s in &spectra[1..] {
        if s.bands.len() != first.bands.len() || s.power.len() != first.power.len() {
            return Err(Error::ShapeMismatch("spectra have different layouts".into()));
        }
        for (acc, p) in out.power.iter_mut().zip(&s.power) {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
    }
    let n = spectra.len() as f64;
    for p in &mut out.power {
        for v in p.iter_mut() {
            *v /= n;
        }
    }
    Ok(out)
}
