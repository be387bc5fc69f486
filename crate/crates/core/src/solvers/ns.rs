//! 2D incompressible Navier–Stokes in vorticity–streamfunction form,
//! `w_t + v . grad w = mu lap w + curl f`, integrated with RK4 under an
//! integrating factor for the viscous term.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{band_limited_field, check_blow_up, signed_index, state, substeps, Fourier};
use crate::error::{Error, Result};
use crate::field::Grid;
use crate::trajectory::Trajectory;

pub const NS_CHANNELS: [&str; 3] = ["vx", "vy", "vorticity"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NsForcing {
    None,
    /// Body force `f = (amplitude sin(2 pi wavenumber y / L), 0)`.
    Kolmogorov { amplitude: f64, wavenumber: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsParams {
    /// Grid points per side (even).
    pub points: usize,
    /// Grid spacing, identical in x and y.
    pub dx: f64,
    /// Kinematic viscosity `mu`.
    pub viscosity: f64,
    pub forcing: NsForcing,
    /// Internal step. Must satisfy `dt <= dx / 2`.
    pub dt: f64,
    /// Spacing of the stored states; an integer multiple of `dt`.
    pub output_dt: f64,
    /// Number of stored states, the initial one included.
    pub num_output_steps: usize,
    /// Time integrated before the first stored state.
    pub warmup: f64,
    /// Root-mean-square amplitude of the initial vorticity.
    pub ic_amplitude: f64,
    /// Highest integer wavenumber magnitude carrying initial energy.
    pub ic_max_mode: usize,
    pub seed: u64,
}

impl Default for NsParams {
    fn default() -> Self {
        Self {
            points: 64,
            dx: 0.25,
            viscosity: 0.01,
            forcing: NsForcing::None,
            dt: 0.05,
            output_dt: 1.5,
            num_output_steps: 14,
            warmup: 0.0,
            ic_amplitude: 1.0,
            ic_max_mode: 8,
            seed: 0,
        }
    }
}

impl NsParams {
    pub fn length(&self) -> f64 {
        self.points as f64 * self.dx
    }

    pub fn validate(&self) -> Result<Grid> {
        let grid = Grid::new_2d(self.points, self.points, self.dx, self.dx)?;
        if !(self.viscosity.is_finite() && self.viscosity > 0.0) {
            return Err(Error::InvalidParams(format!("viscosity must be > 0, got {}", self.viscosity)));
        }
        substeps(self.dt, self.output_dt)?;
        if self.dt > 0.5 * self.dx {
            return Err(Error::InvalidParams(format!(
                "NS dt={} exceeds the stability bound dx/2={}",
                self.dt,
                0.5 * self.dx
            )));
        }
        if self.num_output_steps == 0 {
            return Err(Error::InvalidParams("num_output_steps must be >= 1".into()));
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0) {
            return Err(Error::InvalidParams(format!("warmup must be >= 0, got {}", self.warmup)));
        }
        if let NsForcing::Kolmogorov { amplitude, wavenumber } = self.forcing {
            if !amplitude.is_finite() || wavenumber == 0 || 3 * wavenumber > self.points {
                return Err(Error::InvalidParams(format!(
                    "Kolmogorov forcing needs finite amplitude and 0 < wavenumber <= N/3, got {amplitude}, {wavenumber}"
                )));
            }
        }
        Ok(grid)
    }
}

/// Simulates from a seeded band-limited zero-mean initial vorticity.
pub fn simulate_ns(params: &NsParams) -> Result<Trajectory> {
    let grid = params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let w0 = band_limited_field(&grid, params.ic_max_mode, params.ic_amplitude, &mut rng)?;
    simulate_ns_from(params, &w0)
}

/// Simulates from an explicit initial vorticity `[y][x]`. Velocity is
/// recovered through the streamfunction, so it is divergence-free by
/// construction.
pub fn simulate_ns_from(params: &NsParams, vorticity: &[f64]) -> Result<Trajectory> {
    let grid = params.validate()?;
    if vorticity.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "initial vorticity has {} points, expected {}",
            vorticity.len(),
            grid.len()
        )));
    }
    let mut solver = VorticitySolver::new(params);
    let mut w: Vec<Complex64> = vorticity.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    solver.fft.forward(&mut w);
    // Keep the state inside the dealiased band so the Nyquist modes stay empty.
    for (c, m) in w.iter_mut().zip(&solver.mask) {
        *c *= m;
    }

    let warmup_steps = (params.warmup / params.dt).round() as usize;
    for _ in 0..warmup_steps {
        solver.step(&mut w, 0)?;
    }
    let per_output = substeps(params.dt, params.output_dt)?;
    let mut states = Vec::with_capacity(params.num_output_steps);
    for out in 0..params.num_output_steps {
        if out > 0 {
            for _ in 0..per_output {
                solver.step(&mut w, out)?;
            }
        }
        let values = solver.observables(&w);
        check_blow_up(&values, out)?;
        states.push(state(&grid, &NS_CHANNELS, values)?);
    }
    Trajectory::new(0.0, params.output_dt, states)
}

/// Spectral divergence norm `sqrt(sum |i kx vx + i ky vy|^2) / (N^2)` of a
/// velocity pair given on a square periodic grid of side `length`.
pub fn spectral_divergence(n: usize, length: f64, vx: &[f64], vy: &[f64]) -> f64 {
    let mut fft = Fourier::new(n, n);
    let mut a: Vec<Complex64> = vx.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut b: Vec<Complex64> = vy.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut a);
    fft.forward(&mut b);
    let mut total = 0.0;
    for y in 0..n {
        for x in 0..n {
            let (ky, kx) = (derivative_wave(y, n, length), derivative_wave(x, n, length));
            let i = y * n + x;
            let d = Complex64::new(0.0, kx) * a[i] + Complex64::new(0.0, ky) * b[i];
            total += d.norm_sqr();
        }
    }
    total.sqrt() / (n * n) as f64
}

/// Physical wavenumber for a first derivative; zero on the Nyquist bin.
fn derivative_wave(j: usize, n: usize, length: f64) -> f64 {
    if 2 * j == n {
        0.0
    } else {
        2.0 * PI * signed_index(j, n) as f64 / length
    }
}

struct VorticitySolver {
    n: usize,
    fft: Fourier,
    kx: Vec<f64>,
    ky: Vec<f64>,
    inv_k2: Vec<f64>,
    mask: Vec<f64>,
    e: Vec<f64>,
    e2: Vec<f64>,
    forcing: Vec<Complex64>,
    h: f64,
    bufs: [Vec<Complex64>; 4],
}

impl VorticitySolver {
    fn new(p: &NsParams) -> Self {
        let n = p.points;
        let length = p.length();
        let cutoff = n as i64 / 3;
        let size = n * n;
        let mut s = Self {
            n,
            fft: Fourier::new(n, n),
            kx: Vec::with_capacity(size),
            ky: Vec::with_capacity(size),
            inv_k2: Vec::with_capacity(size),
            mask: Vec::with_capacity(size),
            e: Vec::with_capacity(size),
            e2: Vec::with_capacity(size),
            forcing: vec![Complex64::default(); size],
            h: p.dt,
            bufs: std::array::from_fn(|_| vec![Complex64::default(); size]),
        };
        for y in 0..n {
            for x in 0..n {
                let (iy, ix) = (signed_index(y, n), signed_index(x, n));
                let (ky, kx) = (derivative_wave(y, n, length), derivative_wave(x, n, length));
                s.ky.push(ky);
                s.kx.push(kx);
                let qy = 2.0 * PI * iy as f64 / length;
                let qx = 2.0 * PI * ix as f64 / length;
                let k2 = qx * qx + qy * qy;
                s.inv_k2.push(if k2 > 0.0 { 1.0 / k2 } else { 0.0 });
                s.mask.push(if iy.abs() <= cutoff && ix.abs() <= cutoff && 2 * y != n && 2 * x != n { 1.0 } else { 0.0 });
                s.e.push((-p.viscosity * k2 * p.dt).exp());
                s.e2.push((-p.viscosity * k2 * p.dt * 0.5).exp());
            }
        }
        if let NsForcing::Kolmogorov { amplitude, wavenumber } = p.forcing {
            // curl of (A sin(q y), 0) is -A q cos(q y): two real modes at (+-k, 0)
            let q = 2.0 * PI * wavenumber as f64 / length;
            let coef = Complex64::new(-0.5 * amplitude * q * size as f64, 0.0);
            s.forcing[wavenumber * n] = coef;
            s.forcing[(n - wavenumber) * n] = coef;
        }
        s
    }

    /// Velocity and vorticity in physical space, channel-major.
    fn observables(&mut self, w: &[Complex64]) -> Vec<f64> {
        let size = self.n * self.n;
        let mut out = Vec::with_capacity(3 * size);
        let mut buf = vec![Complex64::default(); size];
        for channel in 0..3 {
            for i in 0..size {
                let psi = w[i] * self.inv_k2[i];
                buf[i] = match channel {
                    0 => Complex64::new(0.0, self.ky[i]) * psi,
                    1 => Complex64::new(0.0, -self.kx[i]) * psi,
                    _ => w[i],
                };
            }
            self.fft.inverse(&mut buf);
            out.extend(buf.iter().map(|c| c.re));
        }
        out
    }

    /// Dealiased `-(v . grad w) + curl f` in spectral space.
    fn rhs(&mut self, w: &[Complex64], out: &mut [Complex64]) {
        let size = self.n * self.n;
        let [vx, vy, wx, wy] = &mut self.bufs;
        for i in 0..size {
            let psi = w[i] * self.inv_k2[i];
            vx[i] = Complex64::new(0.0, self.ky[i]) * psi;
            vy[i] = Complex64::new(0.0, -self.kx[i]) * psi;
            wx[i] = Complex64::new(0.0, self.kx[i]) * w[i];
            wy[i] = Complex64::new(0.0, self.ky[i]) * w[i];
        }
        for b in [&mut *vx, &mut *vy, &mut *wx, &mut *wy] {
            self.fft.inverse(b);
        }
        for i in 0..size {
            vx[i] = Complex64::new(-(vx[i].re * wx[i].re + vy[i].re * wy[i].re), 0.0);
        }
        self.fft.forward(vx);
        for i in 0..size {
            out[i] = vx[i] * self.mask[i] + self.forcing[i];
        }
    }

    fn step(&mut self, w: &mut [Complex64], out_step: usize) -> Result<()> {
        let size = w.len();
        let h = self.h;
        let zero = Complex64::default();
        let (mut k1, mut k2, mut k3, mut k4) = (vec![zero; size], vec![zero; size], vec![zero; size], vec![zero; size]);
        let mut tmp = vec![zero; size];
        self.rhs(w, &mut k1);
        for i in 0..size {
            tmp[i] = self.e2[i] * (w[i] + 0.5 * h * k1[i]);
        }
        self.rhs(&tmp, &mut k2);
        for i in 0..size {
            tmp[i] = self.e2[i] * w[i] + 0.5 * h * k2[i];
        }
        self.rhs(&tmp, &mut k3);
        for i in 0..size {
            tmp[i] = self.e[i] * w[i] + h * self.e2[i] * k3[i];
        }
        self.rhs(&tmp, &mut k4);
        for i in 0..size {
            w[i] = self.e[i] * w[i]
                + h / 6.0 * (self.e[i] * k1[i] + 2.0 * self.e2[i] * (k2[i] + k3[i]) + k4[i]);
        }
        if w.iter().any(|x| !(x.re.is_finite() && x.im.is_finite())) {
            return Err(Error::BlowUp { step: out_step, max_abs: f64::INFINITY });
        }
        Ok(())
    }
}
