use proptest::prelude::*;
use triad_core::bath::sample_uniform_sphere;
use triad_core::integrate::{fmt_f64, StateColumns};
use triad_core::model::fast_energy;
use triad_core::stats::{correlation_function, empirical_density, lagged_kurtosis};
use triad_core::{
    builtin_paper_model, integrate_trajectory, run_fast_subsystem, EFloorPolicy, FastRunOptions, MProvenance,
    ReducedModel, ReducedParams, RngStream, StepperConfig, TimeSeries,
};

fn noisy_series(seed: u64, len: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = RngStream::new(seed, 0).rng();
    let mut z = 0.0;
    (0..len)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            z = 0.9 * z + g;
            z
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bath_conserves_energy_from_any_start(seed in 0u64..10_000, e in 0.5f64..40.0) {
        let c = builtin_paper_model().projected();
        let mut rng = RngStream::new(seed, 0).rng();
        let init = sample_uniform_sphere(c.n, e, &mut rng).unwrap();
        prop_assert!((fast_energy(&init) - e).abs() <= 1e-12 * e);
        // The bath is quadratic: shell E runs sqrt(E/n) times faster than shell n.
        let speed = (e / c.n as f64).sqrt();
        let opts = FastRunOptions {
            dt: 1e-3 / speed,
            t_final: 2.0 / speed,
            record_stride: 100,
            renormalize: false,
            drift_tolerance: f64::INFINITY,
        };
        let run = run_fast_subsystem(&c.yyy, c.n, &init, &opts).unwrap();
        prop_assert!(run.max_rel_drift <= 1e-9, "drift {}", run.max_rel_drift);
    }

    #[test]
    fn reduced_energy_never_negative(seed in 0u64..10_000, x0 in -4.0f64..4.0, e0 in 0.0f64..2.0) {
        let p = ReducedParams::new(1.0, 2.236, 10, 1.2759, MProvenance::UserSupplied).unwrap();
        let model = ReducedModel::new(p, EFloorPolicy::Clamp).unwrap();
        let cfg = StepperConfig::rk5(1e-3, 1).unwrap();
        let obs = StateColumns(vec!["x".into(), "E".into()]);
        let mut rng = RngStream::new(seed, 1).rng();
        let tr = integrate_trajectory(&model, &[x0, e0], 0.0, &cfg, 2.0, &obs, &mut rng, None).unwrap();
        for row in tr.series.rows() {
            prop_assert!(row[1] >= 0.0);
        }
    }

    #[test]
    fn cf_is_affine_invariant(seed in 0u64..10_000, a in 0.1f64..10.0, b in -50.0f64..50.0, flip in any::<bool>()) {
        let z = noisy_series(seed, 4000);
        let s = if flip { -a } else { a };
        let w: Vec<f64> = z.iter().map(|v| s * v + b).collect();
        let cz = correlation_function(&z, 0.1, 5.0).unwrap();
        let cw = correlation_function(&w, 0.1, 5.0).unwrap();
        prop_assert_eq!(cz.values[0], 1.0);
        for (u, v) in cz.values.iter().zip(&cw.values) {
            prop_assert!((u - v).abs() < 1e-9);
            prop_assert!(u.abs() <= 1.0 + 1e-12);
        }
        let kz = lagged_kurtosis(&z, 0.1, 2.0).unwrap();
        let kw = lagged_kurtosis(&w, 0.1, 2.0).unwrap();
        for (u, v) in kz.values.iter().zip(&kw.values) {
            prop_assert!((u - v).abs() < 1e-9 * u.abs().max(1.0));
        }
    }

    #[test]
    fn cf_of_reversed_series_matches(seed in 0u64..10_000) {
        let z = noisy_series(seed, 3000);
        let r: Vec<f64> = z.iter().rev().copied().collect();
        let a = correlation_function(&z, 1.0, 20.0).unwrap();
        let b = correlation_function(&r, 1.0, 20.0).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn density_mass_is_one_inside_range(
        values in proptest::collection::vec(-100.0f64..100.0, 1..500),
        bins in 2usize..80,
    ) {
        let d = empirical_density(&values, bins, None).unwrap();
        let mass: f64 = d.density.iter().zip(d.bin_edges.windows(2)).map(|(p, w)| p * (w[1] - w[0])).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert_eq!(d.count + d.outside, values.len());
        prop_assert!(d.density.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn csv_round_trip_is_exact(rows in proptest::collection::vec(proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..40)) {
        let mut s = TimeSeries::new(vec!["a".into(), "b".into(), "c".into()], 0.0, 0.25, None);
        for r in &rows {
            s.push(r);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        s.write_csv_file(&path).unwrap();
        let back = TimeSeries::read_csv_file(&path).unwrap();
        prop_assert_eq!(back.names.clone(), s.names.clone());
        for (u, v) in back.rows().zip(s.rows()) {
            prop_assert_eq!(u, v);
        }
    }

    #[test]
    fn float_format_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}
