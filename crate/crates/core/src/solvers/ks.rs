//! 1D Kuramoto–Sivashinsky `u_t = -u u_x - u_xx - u_xxxx`, integrated with
//! fourth-order exponential time differencing on the stiff linear part.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{band_limited_field, check_blow_up, signed_index, state, substeps, Fourier};
use crate::error::{Error, Result};
use crate::field::Grid;
use crate::trajectory::Trajectory;

/// Contour points used to evaluate the ETDRK4 coefficient functions.
const CONTOUR_POINTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsParams {
    /// Domain length `L`.
    pub length: f64,
    /// Grid points `N` (even).
    pub points: usize,
    /// Internal step. Must satisfy `dt <= dx / 2`.
    pub dt: f64,
    /// Spacing of the stored states; an integer multiple of `dt`.
    pub output_dt: f64,
    /// Number of stored states, the initial one included.
    pub num_output_steps: usize,
    /// Time integrated before the first stored state.
    pub warmup: f64,
    /// Root-mean-square amplitude of the initial field.
    pub ic_amplitude: f64,
    /// Highest integer wavenumber carrying initial energy.
    pub ic_max_mode: usize,
    /// The solver runs on `points * oversample` points and stored states are
    /// spectrally truncated to `points`, so they carry content up to Nyquist.
    pub oversample: usize,
    pub seed: u64,
}

impl Default for KsParams {
    fn default() -> Self {
        Self {
            length: 64.0,
            points: 64,
            dt: 0.05,
            output_dt: 1.0,
            num_output_steps: 14,
            warmup: 40.0,
            ic_amplitude: 1.0,
            ic_max_mode: 8,
            oversample: 2,
            seed: 0,
        }
    }
}

impl KsParams {
    pub fn grid(&self) -> Result<Grid> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::InvalidParams(format!("KS length must be > 0, got {}", self.length)));
        }
        Grid::new_1d(self.points, self.length / self.points as f64)
    }

    pub fn validate(&self) -> Result<Grid> {
        let grid = self.grid()?;
        substeps(self.dt, self.output_dt)?;
        if self.dt > 0.5 * grid.dx() {
            return Err(Error::InvalidParams(format!(
                "KS dt={} exceeds the stability bound dx/2={}",
                self.dt,
                0.5 * grid.dx()
            )));
        }
        if self.num_output_steps == 0 {
            return Err(Error::InvalidParams("num_output_steps must be >= 1".into()));
        }
        if self.oversample == 0 {
            return Err(Error::InvalidParams("oversample must be >= 1".into()));
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return Err(Error::InvalidParams(format!("warmup must be >= 0, got {}", self.warmup)));
        }
        Ok(grid)
    }
}

/// Simulates from a seeded band-limited zero-mean initial condition.
pub fn simulate_ks(params: &KsParams) -> Result<Trajectory> {
    let grid = params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let u0 = band_limited_field(&grid, params.ic_max_mode, params.ic_amplitude, &mut rng)?;
    simulate_ks_from(params, &u0)
}

/// Simulates from an explicit initial condition `u0` of length `N`.
pub fn simulate_ks_from(params: &KsParams, u0: &[f64]) -> Result<Trajectory> {
    let grid = params.validate()?;
    let n = grid.nx();
    if u0.len() != n {
        return Err(Error::ShapeMismatch(format!("initial condition has {} points, expected {n}", u0.len())));
    }
    let fine = n * params.oversample;
    let mut solver = Etdrk4::new(params.length, fine, params.dt);
    let mut coarse = Fourier::new(1, n);
    let mut v0: Vec<Complex64> = u0.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    coarse.forward(&mut v0);
    let mut v = resample(&v0, fine);

    let warmup_steps = (params.warmup / params.dt).round() as usize;
    for _ in 0..warmup_steps {
        solver.step(&mut v, 0)?;
    }
    let per_output = substeps(params.dt, params.output_dt)?;
    let mut states = Vec::with_capacity(params.num_output_steps);
    for out in 0..params.num_output_steps {
        if out > 0 {
            for _ in 0..per_output {
                solver.step(&mut v, out)?;
            }
        }
        let mut c = resample(&v, n);
        coarse.inverse(&mut c);
        let u: Vec<f64> = c.iter().map(|z| z.re).collect();
        check_blow_up(&u, out)?;
        states.push(state(&grid, &["u"], u)?);
    }
    Trajectory::new(0.0, params.output_dt, states)
}

struct Etdrk4 {
    fft: Fourier,
    /// `-i q / 2` for the conservative form `-(u^2)_x / 2`, zero where dealiased.
    nonlinear: Vec<Complex64>,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    scratch: Vec<Complex64>,
}

impl Etdrk4 {
    fn new(length: f64, n: usize, h: f64) -> Self {
        let cutoff = n as i64 / 3;
        let mut s = Self {
            fft: Fourier::new(1, n),
            nonlinear: Vec::with_capacity(n),
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
            scratch: vec![Complex64::default(); n],
        };
        for j in 0..n {
            let k = signed_index(j, n);
            let wave = 2.0 * PI * k as f64 / length;
            let keep = k.abs() <= cutoff && 2 * k.unsigned_abs() as usize != n;
            s.nonlinear.push(if keep { Complex64::new(0.0, -0.5 * wave) } else { Complex64::default() });
            let lin = wave * wave - wave.powi(4);
            s.e.push((h * lin).exp());
            s.e2.push((0.5 * h * lin).exp());
            let (q, f1, f2, f3) = contour_coefficients(h * lin);
            s.q.push(h * q);
            s.f1.push(h * f1);
            s.f2.push(h * f2);
            s.f3.push(h * f3);
        }
        s
    }

    fn rhs(&mut self, v: &[Complex64], out: &mut [Complex64]) {
        self.scratch.copy_from_slice(v);
        self.fft.inverse(&mut self.scratch);
        for c in self.scratch.iter_mut() {
            *c = Complex64::new(c.re * c.re, 0.0);
        }
        self.fft.forward(&mut self.scratch);
        for ((o, s), g) in out.iter_mut().zip(&self.scratch).zip(&self.nonlinear) {
            *o = g * s;
        }
    }

    fn step(&mut self, v: &mut [Complex64], out_step: usize) -> Result<()> {
        let n = v.len();
        let zero = Complex64::default();
        let (mut nv, mut na, mut nb, mut nc) = (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
        let mut a = vec![zero; n];
        let mut b = vec![zero; n];
        let mut c = vec![zero; n];
        self.rhs(v, &mut nv);
        for j in 0..n {
            a[j] = self.e2[j] * v[j] + self.q[j] * nv[j];
        }
        self.rhs(&a, &mut na);
        for j in 0..n {
            b[j] = self.e2[j] * v[j] + self.q[j] * na[j];
        }
        self.rhs(&b, &mut nb);
        for j in 0..n {
            c[j] = self.e2[j] * a[j] + self.q[j] * (2.0 * nb[j] - nv[j]);
        }
        self.rhs(&c, &mut nc);
        for j in 0..n {
            v[j] = self.e[j] * v[j]
                + self.f1[j] * nv[j]
                + 2.0 * self.f2[j] * (na[j] + nb[j])
                + self.f3[j] * nc[j];
        }
        if v.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) {
            return Err(Error::BlowUp { step: out_step, max_abs: f64::INFINITY });
        }
        Ok(())
    }
}

/// Moves unnormalized FFT coefficients to a grid with `m` points, keeping
/// the physical amplitudes. When shrinking, modes beyond the target band are
/// dropped and the target Nyquist bin receives both source bins at `+-m/2`,
/// as point sampling would. When growing, the source Nyquist bin is split
/// evenly between `+-n/2`.
fn resample(v: &[Complex64], m: usize) -> Vec<Complex64> {
    let n = v.len();
    let scale = m as f64 / n as f64;
    let mut out = vec![Complex64::default(); m];
    let half = (m / 2) as i64;
    let wrap = |k: i64| k.rem_euclid(m as i64) as usize;
    for (j, c) in v.iter().enumerate() {
        let k = signed_index(j, n);
        if m > n && 2 * j == n {
            out[wrap(k)] += c * (0.5 * scale);
            out[wrap(-k)] += c * (0.5 * scale);
        } else if k.abs() < half {
            out[wrap(k)] += c * scale;
        } else if k.abs() == half {
            out[m / 2] += c * scale;
        }
    }
    out
}

/// ETDRK4 coefficient functions of `z = h L`, divided by `h`, averaged over a
/// circle of radius 1 around `z` to avoid cancellation near zero.
fn contour_coefficients(z: f64) -> (f64, f64, f64, f64) {
    let (mut q, mut f1, mut f2, mut f3) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..CONTOUR_POINTS {
        let theta = PI * (j as f64 + 0.5) / CONTOUR_POINTS as f64;
        let lr = Complex64::new(z, 0.0) + Complex64::from_polar(1.0, theta);
        let ex = lr.exp();
        let lr3 = lr * lr * lr;
        q += (((lr * 0.5).exp() - 1.0) / lr).re;
        f1 += ((-4.0 - lr + ex * (4.0 - 3.0 * lr + lr * lr)) / lr3).re;
        f2 += ((2.0 + lr + ex * (lr - 2.0)) / lr3).re;
        f3 += ((-4.0 - 3.0 * lr - lr * lr + ex * (4.0 - lr)) / lr3).re;
    }
    let m = CONTOUR_POINTS as f64;
    (q / m, f1 / m, f2 / m, f3 / m)
}
