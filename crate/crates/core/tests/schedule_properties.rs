use proptest::prelude::*;
use rand::{rngs::StdRng, SeedableRng};
use storage_arb::arbitrage::{
    brute_force_oracle, build_model, random_schedule, solve, validate_schedule, DegradationMode,
    ModelInstance, SolveOptions,
};
use storage_arb::bess::{BatterySpec, ConverterSpec, LastOp};

fn instance() -> impl Strategy<Value = ModelInstance> {
    (
        prop::collection::vec(-50.0..150.0f64, 2..=9),
        0.5..6.0f64,
        0.0..0.15f64,
        0.0..2.5f64,
        3.0..10.0f64,
        0.0..1.0f64,
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(prices, psi, loss, fade, cap, fill, charged, per_cycle)| {
            let battery = BatterySpec::new(10.0, fade, loss, 0.2, 1e5, 0.01).unwrap();
            let mut st = battery.fresh_state();
            st.capacity = cap;
            st.level = fill * cap;
            st.last_op = if charged {
                LastOp::Charge
            } else {
                LastOp::Discharge
            };
            let mode = if per_cycle {
                DegradationMode::PerCycle
            } else {
                DegradationMode::PerChargePeriod
            };
            build_model(
                &prices,
                st,
                battery,
                ConverterSpec::new(psi, 1.0).unwrap(),
                mode,
            )
            .unwrap()
        })
}

fn exact() -> SolveOptions {
    SolveOptions {
        mip_gap: 0.0,
        ..SolveOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_matches_exhaustive_search(m in instance()) {
        let (s, r) = solve(&m, &exact()).unwrap();
        let oracle = brute_force_oracle(&m).unwrap();
        prop_assert!((r.objective - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "{} vs {}", r.objective, oracle);
        prop_assert!(validate_schedule(&m, &s).unwrap().is_empty());
        prop_assert!(r.objective >= -1e-9);
    }

    #[test]
    fn random_schedules_are_feasible_and_dominated(m in instance(), seed in any::<u64>()) {
        let s = random_schedule(&m, &mut StdRng::seed_from_u64(seed));
        prop_assert_eq!(validate_schedule(&m, &s).unwrap(), vec![]);
        let (_, r) = solve(&m, &exact()).unwrap();
        prop_assert!(s.objective() <= r.objective + 1e-6);
    }

    #[test]
    fn more_power_never_hurts(m in instance(), extra in 0.0..3.0f64) {
        let (_, a) = solve(&m, &exact()).unwrap();
        let (_, b) = solve(&m.with_converter_power(m.converter().power + extra), &exact()).unwrap();
        prop_assert!(b.objective >= a.objective - 1e-6);
    }
}
