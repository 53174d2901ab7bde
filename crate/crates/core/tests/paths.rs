use bsde_timechange::paths::{
    first_exit_time, first_exit_time_monitored, make_grid, quadratic_variation, sample_ensemble, AdaptedProcess,
    PathEnsemble, StoppingTimeField, TimeGrid,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_points_are_uniform(horizon in 0.01f64..50.0, steps in 1usize..2000) {
        let g = make_grid(horizon, steps).unwrap();
        prop_assert_eq!(g.len(), steps + 1);
        prop_assert_eq!(g.time(0), 0.0);
        prop_assert_eq!(g.time(steps), horizon);
        for i in [0, steps / 3, steps / 2, steps] {
            prop_assert!((g.time(i) - i as f64 * g.dt()).abs() <= 1e-12 * horizon);
            prop_assert_eq!(g.index_of(g.time(i)), Some(i));
        }
    }

    #[test]
    fn paths_do_not_depend_on_ensemble_size(seed in any::<u64>(), small in 1usize..20, extra in 1usize..20) {
        let g = make_grid(1.0, 16).unwrap();
        let a = sample_ensemble(&g, small, seed).unwrap();
        let b = sample_ensemble(&g, small + extra, seed).unwrap();
        for m in 0..small {
            prop_assert_eq!(a.path_levels(m), b.path_levels(m));
        }
    }

    #[test]
    fn binary_round_trip(seed in any::<u64>(), paths in 1usize..30, steps in 1usize..40) {
        let g = make_grid(2.5, steps).unwrap();
        let e = sample_ensemble(&g, paths, seed).unwrap();
        let mut buf = Vec::new();
        e.write_binary(&mut buf).unwrap();
        let back = PathEnsemble::read_binary(buf.as_slice()).unwrap();
        prop_assert_eq!(back.paths(), paths);
        prop_assert_eq!(back.seed(), seed);
        prop_assert_eq!(back.grid(), e.grid());
        prop_assert_eq!(back.levels(), e.levels());
    }

    #[test]
    fn coarsening_subsamples_levels(seed in any::<u64>(), coarse in 1usize..16, factor in 1usize..6) {
        let g = make_grid(1.0, coarse * factor).unwrap();
        let e = sample_ensemble(&g, 5, seed).unwrap();
        let c = e.coarsen(factor).unwrap();
        prop_assert_eq!(c.grid().steps(), coarse);
        for m in 0..5 {
            for i in 0..=coarse {
                prop_assert_eq!(c.level(m, i), e.level(m, i * factor));
            }
        }
    }

    #[test]
    fn exit_times_are_monotone_in_the_barrier(seed in any::<u64>(), a in 0.1f64..2.0, b in 0.1f64..2.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let g = make_grid(1.0, 64).unwrap();
        let e = sample_ensemble(&g, 50, seed).unwrap();
        let t_lo = first_exit_time(&e, lo).unwrap();
        let t_hi = first_exit_time(&e, hi).unwrap();
        for m in 0..50 {
            prop_assert!(t_lo.index(m) <= t_hi.index(m));
            let k = t_lo.index(m);
            prop_assert!(e.level(m, k).abs() >= lo || k == 64);
            prop_assert!(e.path_levels(m)[..k].iter().all(|w| w.abs() < lo));
        }
    }

    #[test]
    fn monitored_exit_lands_on_monitoring_dates(seed in any::<u64>(), every in 1usize..9) {
        let g = make_grid(1.0, 72).unwrap();
        let e = sample_ensemble(&g, 40, seed).unwrap();
        let tau = first_exit_time_monitored(&e, 0.7, every).unwrap();
        let fine = first_exit_time(&e, 0.7).unwrap();
        for m in 0..40 {
            let k = tau.index(m);
            prop_assert!(k % every == 0 || k == 72);
            prop_assert!(k >= fine.index(m));
        }
    }
}

#[test]
fn exit_time_ignores_the_future() {
    let g = make_grid(1.0, 128).unwrap();
    let e = sample_ensemble(&g, 500, 3).unwrap();
    let tau = first_exit_time(&e, 0.6).unwrap();
    let resampled = e.with_resampled_tail(tau.indices(), 99).unwrap();
    let again = first_exit_time(&resampled, 0.6).unwrap();
    assert_eq!(tau.indices(), again.indices());
}

#[test]
fn brownian_quadratic_variation_is_time() {
    let g = make_grid(1.0, 256).unwrap();
    let e = sample_ensemble(&g, 4000, 11).unwrap();
    let qv = quadratic_variation(&AdaptedProcess::brownian(&e));
    let mean = (0..4000).map(|m| qv.value(m, 256)).sum::<f64>() / 4000.0;
    assert!((mean - 1.0).abs() < 0.01, "{mean}");
}

#[test]
fn stopping_field_rejects_indices_past_the_grid() {
    let g = TimeGrid::new(1.0, 4).unwrap();
    assert!(StoppingTimeField::new(g, vec![0, 5]).is_err());
    let f = StoppingTimeField::constant(g, 3, 2).unwrap();
    assert_eq!(f.times(), vec![0.5; 3]);
}

#[test]
fn bad_grids_are_rejected() {
    assert!(make_grid(0.0, 10).is_err());
    assert!(make_grid(-1.0, 10).is_err());
    assert!(make_grid(f64::NAN, 10).is_err());
    assert!(make_grid(1.0, 0).is_err());
}
