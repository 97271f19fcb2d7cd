use rand::{rngs::StdRng, SeedableRng};
use rand_distr::{Distribution, Normal};
use storage_arb::lmm::sim::{simulate, SimDesign};
use storage_arb::lmm::{
    fit_ml, lr_test, predict, Dataset, FitOptions, LmmSpec, ModelLevel, PredictMode,
};

/// Country-like groups where the effect of a cost dummy varies by group.
fn random_slope_data(slope_sd: f64, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for g in 0..30 {
        let u = n.sample(&mut rng);
        let b = slope_sd * n.sample(&mut rng);
        for i in 0..24 {
            let d = (i % 2) as f64;
            let x = n.sample(&mut rng);
            let y = 1.0 + 0.5 * x + (2.0 + b) * d + u + 0.3 * n.sample(&mut rng);
            rows.push(vec![y, x, d]);
            groups.push(format!("c{g:02}"));
        }
    }
    Dataset {
        columns: vec!["y".into(), "x".into(), "d".into()],
        groups,
        rows,
    }
}

fn fit(data: &Dataset, level: ModelLevel) -> storage_arb::lmm::LmmFit {
    let fixed = vec!["x".to_string(), "d".to_string()];
    let spec = LmmSpec::model(level, "y", &fixed, &["d".to_string()], &[], true);
    fit_ml(data, &spec, &FitOptions::default()).unwrap()
}

#[test]
fn random_slope_is_detected_by_lr_test() {
    let data = random_slope_data(1.5, 11);
    let one = fit(&data, ModelLevel::I);
    let two = fit(&data, ModelLevel::II);
    let t = lr_test(&one, &two).unwrap();
    assert_eq!(t.dof, 1);
    assert!(t.statistic > 20.0, "statistic {}", t.statistic);
    assert!(t.p_value < 1e-3);
    let sd = two.random_sd("battery_cost").unwrap();
    assert!((sd - 1.5).abs() < 0.6, "slope sd {sd}");
}

#[test]
fn absent_random_slope_gives_small_statistic() {
    let data = random_slope_data(0.0, 12);
    let t = lr_test(&fit(&data, ModelLevel::I), &fit(&data, ModelLevel::II)).unwrap();
    assert!(
        t.statistic >= -1e-6 && t.statistic < 6.63,
        "statistic {}",
        t.statistic
    );
}

#[test]
fn full_prediction_beats_fixed_in_sample() {
    let design = SimDesign::default();
    let data = simulate(&design, 5);
    let f = fit_ml(
        &data,
        &LmmSpec::random_intercept("y", &design.fixed_names()),
        &FitOptions::default(),
    )
    .unwrap();
    let mse = |mode| {
        let p = predict(&f, &data, mode).unwrap();
        data.rows
            .iter()
            .zip(&p.values)
            .map(|(r, v)| (r[0] - v).powi(2))
            .sum::<f64>()
            / data.rows.len() as f64
    };
    let (fixed, full) = (mse(PredictMode::Fixed), mse(PredictMode::Full));
    assert!(full < 0.5 * fixed, "full {full} fixed {fixed}");
    assert!((full.sqrt() - design.sigma_e).abs() < 0.1);
}
