use criterion::{black_box, criterion_group, criterion_main, Criterion};
use storage_arb::arbitrage::{run_horizon, HorizonOptions, Strategy};
use storage_arb::bess::{BatterySpec, ConverterSpec};
use storage_arb::par;

/// Two weeks of a daily price shape with a country-specific amplitude.
fn prices(amplitude: f64) -> Vec<f64> {
    (0..336)
        .map(|h| {
            let hour = (h % 24) as f64;
            50.0 + amplitude * (std::f64::consts::TAU * (hour - 8.0) / 24.0).sin()
                + ((h * 37) % 11) as f64
        })
        .collect()
}

fn bench(c: &mut Criterion) {
    let battery = BatterySpec::new(10.0, 0.0004, 0.04, 0.8, 100_000.0, 0.01).unwrap();
    let countries: Vec<Vec<f64>> = [10.0, 20.0, 35.0].iter().map(|&a| prices(a)).collect();
    let jobs: Vec<(usize, u32)> = (0..countries.len())
        .flat_map(|c| (1..=10).map(move |mw| (c, mw)))
        .collect();
    let opts = HorizonOptions {
        strategy: Strategy::Rolling {
            window: 168,
            overlap: 0,
        },
        max_years: 2,
        ..HorizonOptions::default()
    };
    let job = |&(c, mw): &(usize, u32)| {
        let conv = ConverterSpec::new(mw as f64, 30_000.0).unwrap();
        run_horizon(&countries[c], &battery, &conv, &opts)
            .unwrap()
            .years
            .len()
    };

    let mut g = c.benchmark_group("grid_physical_runs");
    g.sample_size(10);
    g.bench_function("sequential", |b| {
        b.iter(|| black_box(par::map_sequential(&jobs, job)))
    });
    g.bench_function("parallel", |b| b.iter(|| black_box(par::map(&jobs, job))));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
