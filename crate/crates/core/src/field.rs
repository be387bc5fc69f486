//! Periodic grids and the real/spectral field containers.
//!
//! Real fields are stored `[channel][y][x]` (1D grids have no `y` axis).
//! Spectral fields use the real-input half layout: `n/2 + 1` modes in 1D,
//! `ny` full rows by `nx/2 + 1` columns in 2D, again channel-major.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A periodic grid. `points` and `spacing` are ordered slowest axis first,
/// i.e. `[nx]` in 1D and `[ny, nx]` in 2D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<usize>, spacing: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "expected 1 or 2 dimensions, got {}",
                points.len()
            )));
        }
        if points.len() != spacing.len() {
            return Err(Error::InvalidGrid(
                "points and spacing have different lengths".into(),
            ));
        }
        for &n in &points {
            if n < 2 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "points per dimension must be even and >= 2, got {n}"
                )));
            }
        }
        for &h in &spacing {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidGrid(format!("spacing must be > 0, got {h}")));
            }
        }
        Ok(Self { points, spacing })
    }

    pub fn new_1d(n: usize, dx: f64) -> Result<Self> {
        Self::new(vec![n], vec![dx])
    }

    pub fn new_2d(ny: usize, nx: usize, dy: f64, dx: f64) -> Result<Self> {
        Self::new(vec![ny, nx], vec![dy, dx])
    }

    pub fn dims(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn nx(&self) -> usize {
        *self.points.last().unwrap()
    }

    /// Rows of the real layout (1 for 1D grids).
    pub fn ny(&self) -> usize {
        if self.dims() == 2 {
            self.points[0]
        } else {
            1
        }
    }

    pub fn dx(&self) -> f64 {
        *self.spacing.last().unwrap()
    }

    pub fn dy(&self) -> f64 {
        if self.dims() == 2 {
            self.spacing[0]
        } else {
            1.0
        }
    }

    /// Physical domain length per axis, same ordering as `points`.
    pub fn lengths(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.spacing)
            .map(|(&n, &h)| n as f64 * h)
            .collect()
    }

    /// Number of real grid points per channel.
    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Columns of the half-spectrum layout.
    pub fn half_nx(&self) -> usize {
        self.nx() / 2 + 1
    }

    /// Number of stored spectral coefficients per channel.
    pub fn spectral_len(&self) -> usize {
        self.ny() * self.half_nx()
    }

    /// Integer wavenumbers `(ky, kx)` of a stored mode. `ky` is signed;
    /// `kx` is always non-negative. The Nyquist row carries `+ny/2`.
    pub fn wavenumbers(&self, mode: usize) -> (i64, i64) {
        let h = self.half_nx();
        let (row, col) = (mode / h, mode % h);
        let ny = self.ny();
        let ky = if self.dims() == 1 {
            0
        } else if row <= ny / 2 {
            row as i64
        } else {
            row as i64 - ny as i64
        };
        (ky, col as i64)
    }

    /// How many full-spectrum modes a stored coefficient stands for (1 or 2).
    pub fn multiplicity(&self, mode: usize) -> u32 {
        let col = mode % self.half_nx();
        if col == 0 || col == self.nx() / 2 {
            1
        } else {
            2
        }
    }

    /// Stored index of the Hermitian partner of a mode in the self-conjugate
    /// columns (`kx = 0` or `kx = nx/2`); `None` for the other columns whose
    /// partner is implicit.
    pub fn conjugate_partner(&self, mode: usize) -> Option<usize> {
        let h = self.half_nx();
        let (row, col) = (mode / h, mode % h);
        if col != 0 && col != self.nx() / 2 {
            return None;
        }
        let ny = self.ny();
        let prow = (ny - row) % ny;
        Some(prow * h + col)
    }

    /// Whether the stored mode equals its own conjugate partner (DC and
    /// Nyquist-type modes), i.e. must be real.
    pub fn is_self_conjugate(&self, mode: usize) -> bool {
        self.conjugate_partner(mode) == Some(mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `1/sqrt(N)` on both the forward and the inverse transform.
    Orthonormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    channels: Vec<String>,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: Grid, channels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::ShapeMismatch("field needs at least one channel".into()));
        }
        let expected = grid.len() * channels.len();
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            grid,
            channels,
            values,
        })
    }

    pub fn zeros(grid: Grid, channels: Vec<String>) -> Self {
        let n = grid.len() * channels.len();
        Self {
            grid,
            channels,
            values: vec![0.0; n],
        }
    }

    /// Build a single- or multi-channel field by evaluating `f(channel, y, x)`
    /// at the grid points (coordinates in length units, origin at index 0).
    pub fn from_fn(
        grid: Grid,
        channels: Vec<String>,
        f: impl Fn(usize, f64, f64) -> f64,
    ) -> Self {
        let (ny, nx) = (grid.ny(), grid.nx());
        let (dy, dx) = (grid.dy(), grid.dx());
        let mut values = Vec::with_capacity(grid.len() * channels.len());
        for c in 0..channels.len() {
            for j in 0..ny {
                for i in 0..nx {
                    values.push(f(c, j as f64 * dy, i as f64 * dx));
                }
            }
        }
        Self {
            grid,
            channels,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_channel(&self, c: usize) -> f64 {
        self.channel(c).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn same_shape(&self, other: &RealField) -> bool {
        self.grid == other.grid && self.channels.len() == other.channels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    channels: Vec<String>,
    normalization: Normalization,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn new(grid: Grid, channels: Vec<String>, coeffs: Vec<Complex64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::ShapeMismatch("field needs at least one channel".into()));
        }
        let expected = grid.spectral_len() * channels.len();
        if coeffs.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} coefficients, got {}",
                coeffs.len()
            )));
        }
        Ok(Self {
            grid,
            channels,
            normalization: Normalization::Orthonormal,
            coeffs,
        })
    }

    pub fn zeros(grid: Grid, channels: Vec<String>) -> Self {
        let n = grid.spectral_len() * channels.len();
        Self {
            grid,
            channels,
            normalization: Normalization::Orthonormal,
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.grid.spectral_len();
        &self.coeffs[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.spectral_len();
        &mut self.coeffs[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn same_shape(&self, other: &SpectralField) -> bool {
        self.grid == other.grid && self.channels.len() == other.channels.len()
    }

    pub fn check_same_shape(&self, other: &SpectralField, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{what}: grids {:?} vs {:?}, channels {} vs {}",
                self.grid.points(),
                other.grid.points(),
                self.channels.len(),
                other.channels.len()
            )))
        }
    }

    /// Squared Euclidean norm of the equivalent real field (Parseval weights).
    pub fn energy(&self) -> f64 {
        let n = self.grid.spectral_len();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, z)| self.grid.multiplicity(i % n) as f64 * z.norm_sqr())
            .sum()
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_same_shape(other, "sub")?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a -= b;
        }
        Ok(out)
    }

    /// Returns a copy with every coefficient scaled by `s`.
    pub fn scaled(&self, s: f64) -> SpectralField {
        let mut out = self.clone();
        for z in &mut out.coeffs {
            *z *= s;
        }
        out
    }
}
