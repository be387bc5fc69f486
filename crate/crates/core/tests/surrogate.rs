use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spectral_refiner::refiner::TrainingPair;
use spectral_refiner::schedule::{RefinementSchedule, ScheduleConfig};
use spectral_refiner::spectral::scaling_vector;
use spectral_refiner::surrogate::DEFAULT_RIDGE;
use spectral_refiner::{
    fit_least_squares, fit_trajectories, simulate_ks, Exec, FeatureSet, Grid, KsParams,
    PerModeLinearPredictor, Predictor, SpectralField, SpectralRefiner, Trajectory,
};

fn cz(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn field(grid: &Grid, rng: &mut ChaCha8Rng) -> SpectralField {
    let coeffs = (0..grid.spectral_len()).map(|_| cz(rng)).collect();
    SpectralField::new(grid.clone(), vec!["u".into()], coeffs).unwrap()
}

fn pair(step: usize, latent: SpectralField, cond: SpectralField, target: SpectralField) -> TrainingPair {
    TrainingPair {
        step,
        noise: latent.clone(),
        latent,
        cond: Arc::new(cond),
        clean: Arc::new(target.clone()),
        target,
    }
}

/// Solves `a x = b` for a small dense complex system by Gaussian elimination
/// with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<Complex64>>, mut b: Vec<Complex64>) -> Vec<Complex64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                let v = a[col][c];
                a[row][c] -= f * v;
            }
            let v = b[col];
            b[row] -= f * v;
        }
    }
    let mut x = vec![Complex64::default(); n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for c in row + 1..n {
            s -= a[row][c] * x[c];
        }
        x[row] = s / a[row][row];
    }
    x
}

/// Per-mode ridge regression built directly from the design rows.
fn brute_force(pairs: &[TrainingPair], step: usize, mode: usize, ridge: f64) -> [Complex64; 3] {
    let rows: Vec<([Complex64; 3], Complex64)> = pairs
        .iter()
        .filter(|p| p.step == step)
        .map(|p| {
            (
                [p.latent.coeffs()[mode], p.cond.coeffs()[mode], Complex64::new(1.0, 0.0)],
                p.target.coeffs()[mode],
            )
        })
        .collect();
    let mut a = vec![vec![Complex64::default(); 3]; 3];
    let mut b = vec![Complex64::default(); 3];
    for (f, y) in &rows {
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += f[i].conj() * f[j];
            }
            b[i] += f[i].conj() * y;
        }
    }
    a[0][0] += ridge;
    a[1][1] += ridge;
    let x = gauss_solve(a, b);
    [x[0], x[1], x[2]]
}

fn noisy_pairs(grid: &Grid, steps: usize, n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<TrainingPair> {
    let truth: Vec<[Complex64; 3]> = (0..(steps + 1) * grid.spectral_len())
        .map(|i| [Complex64::new(0.5, -0.25 * i as f64 / 10.0), Complex64::new(-1.0, 0.1), Complex64::new(0.05, 0.0)])
        .collect();
    let mut out = Vec::new();
    for step in 0..=steps {
        for _ in 0..n {
            let z = field(grid, rng);
            let y = field(grid, rng);
            let mut v = z.clone();
            for (m, o) in v.coeffs_mut().iter_mut().enumerate() {
                let c = truth[step * grid.spectral_len() + m];
                *o = c[0] * z.coeffs()[m] + c[1] * y.coeffs()[m] + c[2] + cz(rng) * noise;
            }
            out.push(pair(step, z, y, v));
        }
    }
    out
}

#[test]
fn normal_equations_match_brute_force_regression() {
    let grid = Grid::new_2d(4, 6, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs = noisy_pairs(&grid, 2, 40, 0.3, &mut rng);
    for ridge in [0.0, 1e-3, 0.5] {
        let (model, _) = fit_least_squares(&pairs, 2, ridge, FeatureSet::Full, Exec::default()).unwrap();
        for step in 0..=2 {
            for mode in 0..grid.spectral_len() {
                let want = brute_force(&pairs, step, mode, ridge);
                let got = model.coefficient(step, 0, mode);
                for (g, w) in [got.latent, got.cond, got.offset].iter().zip(want) {
                    assert!((g - w).norm() <= 1e-12 * w.norm().max(1.0), "ridge {ridge} step {step} mode {mode}");
                }
            }
        }
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let grid = Grid::new_1d(16, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs = noisy_pairs(&grid, 3, 20, 0.1, &mut rng);
    let (model, _) = fit_least_squares(&pairs, 3, DEFAULT_RIDGE, FeatureSet::Full, Exec::default()).unwrap();
    let dir = std::env::temp_dir().join(format!("spectral-refiner-surrogate-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    model.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let loaded = PerModeLinearPredictor::load(&path).unwrap();
    loaded.save(&path).unwrap();
    let second = std::fs::read(&path).unwrap();
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(first, second);
    assert_eq!(loaded, model);

    let z = field(&grid, &mut rng);
    let y = field(&grid, &mut rng);
    for step in 0..=3 {
        assert_eq!(model.predict(&z, &y, step).unwrap(), loaded.predict(&z, &y, step).unwrap());
    }
}

#[test]
fn prediction_is_affine_in_its_inputs() {
    let grid = Grid::new_1d(12, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs = noisy_pairs(&grid, 1, 20, 0.1, &mut rng);
    let (model, _) = fit_least_squares(&pairs, 1, DEFAULT_RIDGE, FeatureSet::Full, Exec::default()).unwrap();
    let zero = SpectralField::zeros(grid.clone(), vec!["u".into()]);
    let (z1, y1, z2, y2) = (field(&grid, &mut rng), field(&grid, &mut rng), field(&grid, &mut rng), field(&grid, &mut rng));
    let add = |a: &SpectralField, b: &SpectralField| {
        let mut o = a.clone();
        o.coeffs_mut().iter_mut().zip(b.coeffs()).for_each(|(x, y)| *x += y);
        o
    };
    let p = |z: &SpectralField, y: &SpectralField| model.predict(z, y, 1).unwrap();
    let lhs = add(&p(&add(&z1, &z2), &add(&y1, &y2)), &p(&zero, &zero));
    let rhs = add(&p(&z1, &y1), &p(&z2, &y2));
    assert!(lhs.sub(&rhs).unwrap().energy().sqrt() <= 1e-12 * rhs.energy().sqrt());
}

fn coefficient_error(model: &PerModeLinearPredictor, grid: &Grid) -> f64 {
    let mut worst = 0.0f64;
    for m in 0..grid.spectral_len() {
        let c = model.coefficient(0, 0, m);
        let want = Complex64::new(-1.0, 0.1);
        worst = worst.max((c.cond - want).norm());
    }
    worst
}

#[test]
fn estimates_converge_with_sample_size() {
    let grid = Grid::new_1d(8, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let small = noisy_pairs(&grid, 0, 100, 0.5, &mut rng);
    let large = noisy_pairs(&grid, 0, 10_000, 0.5, &mut rng);
    let fit = |p: &[TrainingPair]| fit_least_squares(p, 0, 0.0, FeatureSet::Full, Exec::default()).unwrap().0;
    let e_small = coefficient_error(&fit(&small), &grid);
    let e_large = coefficient_error(&fit(&large), &grid);
    assert!(e_large < 0.02, "large-sample error {e_large}");
    assert!(e_large * 3.0 < e_small, "{e_large} vs {e_small}");
}

fn ks_set(seeds: std::ops::Range<u64>, amplitude: f64) -> Vec<Trajectory> {
    seeds
        .map(|seed| {
            simulate_ks(&KsParams {
                seed,
                ic_amplitude: amplitude,
                warmup: 0.0,
                ..KsParams::default()
            })
            .unwrap()
        })
        .collect()
}

#[test]
fn trajectory_fit_does_not_depend_on_execution_policy() {
    let data = ks_set(0..4, 1.0);
    let r = SpectralRefiner::new(RefinementSchedule::new(ScheduleConfig::default()).unwrap(), scaling_vector(data[0].grid())).unwrap();
    let a = fit_trajectories(&r, &data, 4, DEFAULT_RIDGE, FeatureSet::Full, 9, Exec::Sequential).unwrap();
    let b = fit_trajectories(&r, &data, 4, DEFAULT_RIDGE, FeatureSet::Full, 9, Exec::Parallel).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn small_amplitude_ks_fit_recovers_linear_propagator() {
    let data = ks_set(0..20, 1e-3);
    let grid = data[0].grid().clone();
    let cfg = ScheduleConfig { steps: 0, ..ScheduleConfig::default() };
    let r = SpectralRefiner::new(RefinementSchedule::new(cfg).unwrap(), scaling_vector(&grid)).unwrap();
    let (model, _) = fit_trajectories(&r, &data, 2, 1e-14, FeatureSet::Full, 5, Exec::default()).unwrap();
    let p = KsParams::default();
    for j in 1..=8 {
        let q = 2.0 * std::f64::consts::PI * j as f64 / p.length;
        let expected = -((q * q - q.powi(4)) * p.output_dt).exp();
        let got = model.coefficient(0, 0, j).cond;
        assert!(
            (got - expected).norm() <= 0.05 * expected.abs(),
            "mode {j}: {got} vs {expected}"
        );
    }
}
