use ada_core::controller::{
    heuristic_rt, simulate, ControllerState, Heuristic, LinearRtModel, OverfitStats, UpdateOutcome,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn outputs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![-1e3..1e3f64, Just(0.0)], 1..40)
}

proptest! {
    #[test]
    fn p_stays_in_unit_interval(
        batches in prop::collection::vec((outputs(), 1usize..512), 1..200),
        target in 0.05..0.95f64,
        window in 1usize..6,
        ramp in 10.0..1e5f64,
    ) {
        let mut c = ControllerState::with_ramp(Heuristic::Rt, target, window, ramp).unwrap();
        for (d, n) in &batches {
            c.update(&OverfitStats::train_only(d.clone()), *n).unwrap();
            let p = c.p().get();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn rt_ignores_positive_rescaling(d in outputs(), scale in 1e-6..1e6f64) {
        let scaled: Vec<f64> = d.iter().map(|v| v * scale).collect();
        prop_assert_eq!(
            heuristic_rt(&OverfitStats::train_only(d)).unwrap(),
            heuristic_rt(&OverfitStats::train_only(scaled)).unwrap()
        );
    }

    #[test]
    fn one_adjustment_per_window(sizes in prop::collection::vec(1usize..300, 1..60), window in 1usize..7) {
        let mut c = ControllerState::new(Heuristic::Rt, 0.6, window, 1e-4).unwrap();
        let mut adjustments = 0;
        for (i, n) in sizes.iter().enumerate() {
            let out = c.update(&OverfitStats::train_only(vec![1.0]), *n).unwrap();
            let closes = (i + 1) % window == 0;
            prop_assert_eq!(matches!(out, UpdateOutcome::Adjusted { .. }), closes);
            adjustments += usize::from(closes);
        }
        prop_assert_eq!(adjustments, sizes.len() / window);
    }

    #[test]
    fn monotone_response(sizes in prop::collection::vec(1usize..128, 4..80), above in any::<bool>()) {
        let mut c = ControllerState::new(Heuristic::Rt, 0.6, 2, 1e-3).unwrap();
        c.set_p(0.5).unwrap();
        let d = if above { vec![1.0; 8] } else { vec![1.0, -1.0] };
        let mut last = c.p().get();
        for n in sizes {
            c.update(&OverfitStats::train_only(d.clone()), n).unwrap();
            let p = c.p().get();
            let ok = if above { p >= last } else { p <= last };
            prop_assert!(ok, "p moved from {} to {}", last, p);
            last = p;
        }
    }
}

#[test]
fn delta_per_adjustment_at_batch_64() {
    let mut c = ControllerState::default();
    let stats = OverfitStats::train_only(vec![0.5; 64]);
    for _ in 0..4 {
        c.update(&stats, 64).unwrap();
    }
    assert_eq!(c.p().get(), 256.0 / 500_000.0);
    assert_eq!(c.p().get(), 0.000512);
}

#[test]
fn pinned_heuristic_ramps_in_1954_adjustments() {
    let mut c = ControllerState::default();
    let stats = OverfitStats::train_only(vec![1.0; 64]);
    let mut adjustments = 0;
    while c.p().get() < 1.0 {
        for _ in 0..4 {
            c.update(&stats, 64).unwrap();
        }
        adjustments += 1;
        assert!(adjustments <= 1954);
    }
    assert_eq!(adjustments, 1954);

    let mut low = ControllerState::default();
    for _ in 0..400 {
        low.update(&OverfitStats::train_only(vec![-1.0; 64]), 64).unwrap();
        assert_eq!(low.p().get(), 0.0);
    }
}

#[test]
fn closed_loop_settles_at_fixed_point() {
    let model = LinearRtModel { intercept: 0.9, slope: 1.0 };
    let p_star = model.fixed_point(0.6).unwrap();
    assert!((p_star - 0.3).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let traj = simulate(&ControllerState::default(), &model, 16_000, 64, &mut rng).unwrap();
    let tail = &traj[traj.len() * 3 / 4..];
    assert!(tail.iter().all(|t| (t.p - p_star).abs() <= 0.05));
}
