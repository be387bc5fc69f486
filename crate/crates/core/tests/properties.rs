use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectral_refiner::dataset_split;
use spectral_refiner::eval::log_ratio;
use spectral_refiner::schedule::{BlurDirection, BlurExponent, RefinementSchedule, ScheduleConfig};
use spectral_refiner::spectral::{dft_forward, dft_inverse, sample_spectral_noise, scaling_vector};
use spectral_refiner::{Grid, RealField, SpectralRefiner};

fn grid_strategy() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (1usize..20).prop_map(|n| Grid::new_1d(2 * n, 0.5).unwrap()),
        (1usize..6, 1usize..6).prop_map(|(ny, nx)| Grid::new_2d(2 * ny, 2 * nx, 1.0, 0.5).unwrap()),
    ]
}

fn field_strategy() -> impl Strategy<Value = RealField> {
    grid_strategy().prop_flat_map(|g| {
        let n = g.len();
        prop::collection::vec(-10.0f64..10.0, n)
            .prop_map(move |v| RealField::new(g.clone(), vec!["u".into()], v).unwrap())
    })
}

fn direction() -> impl Strategy<Value = BlurDirection> {
    prop_oneof![Just(BlurDirection::None), Just(BlurDirection::Down), Just(BlurDirection::Up)]
}

fn exponent() -> impl Strategy<Value = BlurExponent> {
    prop_oneof![Just(BlurExponent::Sin4), Just(BlurExponent::Sin2), Just(BlurExponent::Cos2)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_round_trip_and_parseval(f in field_strategy()) {
        let spec = dft_forward(&f).unwrap();
        let back = dft_inverse(&spec).unwrap();
        let norm: f64 = f.values().iter().map(|v| v * v).sum();
        for (a, b) in back.values().iter().zip(f.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + norm.sqrt()));
        }
        prop_assert!((spec.energy() - norm).abs() <= 1e-11 * norm.max(1.0));
    }

    #[test]
    fn refiner_round_trip_for_moderate_blur(
        f in field_strategy(),
        dir in direction(),
        ex in exponent(),
        sigma_blur in 0.5f64..4.0,
        steps in 1usize..5,
        seed in any::<u64>(),
    ) {
        let cfg = ScheduleConfig { steps, direction: dir, sigma_blur, blur_exponent: ex, ..ScheduleConfig::default() };
        let r = SpectralRefiner::new(RefinementSchedule::new(cfg).unwrap(), scaling_vector(f.grid())).unwrap();
        let x = dft_forward(&f).unwrap();
        let e = sample_spectral_noise(f.grid(), f.channels(), &mut ChaCha8Rng::seed_from_u64(seed));
        for k in 0..=steps {
            let z = r.forward_noise(&x, k, &e).unwrap();
            let v = r.v_target(&x, &e, k).unwrap();
            let back = r.reconstruct_x(&z, &v, k).unwrap();
            let err = back.sub(&x).unwrap().energy().sqrt();
            prop_assert!(err <= 1e-9 * x.energy().sqrt().max(1e-300), "k={} err={}", k, err);
        }
    }

    #[test]
    fn spectral_noise_is_hermitian_consistent(g in grid_strategy(), seed in any::<u64>()) {
        let e = sample_spectral_noise(&g, &["u".to_string()], &mut ChaCha8Rng::seed_from_u64(seed));
        let back = dft_forward(&dft_inverse(&e).unwrap()).unwrap();
        prop_assert!(back.sub(&e).unwrap().energy() <= 1e-20 * e.energy().max(1.0));
    }

    #[test]
    fn log_ratio_is_antisymmetric(a in 1e-12f64..1e6, b in 1e-12f64..1e6) {
        prop_assert!((log_ratio(a, b) + log_ratio(b, a)).abs() <= 1e-12);
        prop_assert_eq!(log_ratio(a, a), 0.0);
    }

    #[test]
    fn dataset_split_partitions_indices(n in 3usize..200, seed in any::<u64>()) {
        let s = dataset_split(n, [0.8, 0.1, 0.1], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!s.valid.is_empty() && !s.test.is_empty() && !s.train.is_empty());
    }

    #[test]
    fn schedule_noise_decreases_and_radius_stays_positive(
        dir in direction(), ex in exponent(), sigma_blur in 0.5f64..8.0, steps in 1usize..6,
    ) {
        let cfg = ScheduleConfig { steps, direction: dir, sigma_blur, blur_exponent: ex, ..ScheduleConfig::default() };
        let s = RefinementSchedule::new(cfg).unwrap();
        let grid = Grid::new_1d(16, 1.0).unwrap();
        let scaling = scaling_vector(&grid);
        for k in 0..=steps {
            if k > 0 {
                prop_assert!(s.sigma(k) < s.sigma(k - 1));
            }
            prop_assert!(s.radius(k, &scaling).unwrap().iter().all(|&r| r > 0.0 && r.is_finite()));
        }
    }
}
