//! Pseudo-spectral ground-truth generators on periodic domains.

pub mod ks;
pub mod ns;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{Grid, RealField};
use crate::spectral::{dft_inverse, plan, sample_spectral_noise};

pub use ks::{simulate_ks, simulate_ks_from, KsParams};
pub use ns::{simulate_ns, simulate_ns_from, NsForcing, NsParams};

/// Signed integer wavenumber of FFT bin `j` on `n` points. The Nyquist bin
/// maps to `-n/2`.
pub(crate) fn signed_index(j: usize, n: usize) -> i64 {
    if j < n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Full complex 2D FFT over a row-major `ny x nx` buffer. The forward pass is
/// unnormalized and the inverse divides by `ny * nx`.
pub(crate) struct Fourier {
    ny: usize,
    nx: usize,
    column: Vec<Complex64>,
}

impl Fourier {
    pub(crate) fn new(ny: usize, nx: usize) -> Self {
        Self {
            ny,
            nx,
            column: vec![Complex64::default(); ny],
        }
    }

    fn transform(&mut self, buf: &mut [Complex64], inverse: bool) {
        let (ny, nx) = (self.ny, self.nx);
        let rows = plan(nx, inverse);
        rows.process(buf);
        if ny > 1 {
            let cols = plan(ny, inverse);
            for x in 0..nx {
                for y in 0..ny {
                    self.column[y] = buf[y * nx + x];
                }
                cols.process(&mut self.column);
                for y in 0..ny {
                    buf[y * nx + x] = self.column[y];
                }
            }
        }
        if inverse {
            let s = 1.0 / (ny * nx) as f64;
            buf.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub(crate) fn forward(&mut self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    pub(crate) fn inverse(&mut self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }
}

/// Number of internal steps per output interval, requiring an integer ratio.
pub(crate) fn substeps(dt: f64, output_dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0 && output_dt.is_finite() && output_dt > dt) {
        return Err(Error::InvalidParams(format!(
            "need 0 < dt < output_dt, got dt={dt}, output_dt={output_dt}"
        )));
    }
    let ratio = output_dt / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio {
        return Err(Error::InvalidParams(format!(
            "output_dt / dt must be an integer, got {ratio}"
        )));
    }
    Ok(n as usize)
}

/// Zero-mean Gaussian random field whose energy lives on integer wavenumbers
/// `0 < |k| <= max_mode`, rescaled to root-mean-square `amplitude`.
pub(crate) fn band_limited_field<R: Rng + ?Sized>(
    grid: &Grid,
    max_mode: usize,
    amplitude: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let channel = vec!["u".to_string()];
    let mut spec = sample_spectral_noise(grid, &channel, rng);
    let limit = (max_mode * max_mode) as i64;
    for (mode, c) in spec.coeffs_mut().iter_mut().enumerate() {
        let (ky, kx) = grid.wavenumbers(mode);
        let k2 = ky * ky + kx * kx;
        if k2 == 0 || k2 > limit {
            *c = Complex64::default();
        }
    }
    let mut values = dft_inverse(&spec)?.into_values();
    let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt();
    if rms > 0.0 {
        values.iter_mut().for_each(|v| *v *= amplitude / rms);
    }
    Ok(values)
}

pub(crate) fn check_blow_up(values: &[f64], step: usize) -> Result<()> {
    let max_abs = values.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
    if !(max_abs <= BLOW_UP_LIMIT) {
        return Err(Error::BlowUp { step, max_abs });
    }
    Ok(())
}

/// Any state with `|u|` above this value is reported as a blow-up.
pub const BLOW_UP_LIMIT: f64 = 1e6;

pub(crate) fn state(grid: &Grid, channels: &[&str], values: Vec<f64>) -> Result<RealField> {
    RealField::new(grid.clone(), channels.iter().map(|c| c.to_string()).collect(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fourier_round_trip_and_single_mode() {
        let (ny, nx) = (4, 8);
        let mut f = Fourier::new(ny, nx);
        let mut buf: Vec<Complex64> = (0..ny * nx)
            .map(|i| {
                let (y, x) = ((i / nx) as f64, (i % nx) as f64);
                Complex64::new((2.0 * std::f64::consts::PI * (x / 8.0 + y / 4.0)).cos(), 0.0)
            })
            .collect();
        let orig = buf.clone();
        f.forward(&mut buf);
        // cos splits between (ky, kx) = (1, 1) and (-1, -1)
        assert!((buf[nx + 1].re - 16.0).abs() < 1e-12);
        assert!((buf[3 * nx + 7].re - 16.0).abs() < 1e-12);
        f.inverse(&mut buf);
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn substep_ratio_must_be_integral() {
        assert_eq!(substeps(0.01, 1.5).unwrap(), 150);
        assert!(substeps(0.4, 1.0).is_err());
        assert!(substeps(1.0, 0.5).is_err());
    }

    #[test]
    fn band_limited_field_is_zero_mean_and_band_limited() {
        let grid = Grid::new_2d(32, 32, 0.25, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = band_limited_field(&grid, 4, 2.0, &mut rng).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!(mean.abs() < 1e-14);
        assert!((rms - 2.0).abs() < 1e-12);
        let field = state(&grid, &["u"], v).unwrap();
        let spec = crate::spectral::dft_forward(&field).unwrap();
        for (m, c) in spec.coeffs().iter().enumerate() {
            let (ky, kx) = grid.wavenumbers(m);
            if ky * ky + kx * kx > 16 {
                assert!(c.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn blow_up_detection() {
        assert!(check_blow_up(&[1.0, -2.0], 0).is_ok());
        assert!(matches!(check_blow_up(&[1.0, -2e6], 4), Err(Error::BlowUp { step: 4, .. })));
        assert!(check_blow_up(&[f64::NAN], 1).is_err());
    }
}
