//! Synthetic two-level data with known parameters.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    pub groups: usize,
    pub per_group: usize,
    /// Intercept first, then one coefficient per regressor.
    pub beta: Vec<f64>,
    pub sigma_u: f64,
    pub sigma_e: f64,
    /// Subtract the group mean from the residual errors, so the data carry
    /// no between-group variance at all.
    pub center_within_groups: bool,
}

impl Default for SimDesign {
    fn default() -> Self {
        Self {
            groups: 24,
            per_group: 40,
            beta: vec![2.0, 1.5, -0.8],
            sigma_u: 1.0,
            sigma_e: 0.5,
            center_within_groups: false,
        }
    }
}

impl SimDesign {
    pub fn fixed_names(&self) -> Vec<String> {
        (1..self.beta.len()).map(|j| format!("x{j}")).collect()
    }
}

/// Columns `y, x1, x2, ...`; groups `g00, g01, ...`.
pub fn simulate(design: &SimDesign, seed: u64) -> Dataset {
    let mut rng = StdRng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let p = design.beta.len();
    let mut columns = vec!["y".to_string()];
    columns.extend(design.fixed_names());
    let mut groups = Vec::new();
    let mut rows = Vec::new();
    for g in 0..design.groups {
        let u = design.sigma_u * std.sample(&mut rng);
        let mut e: Vec<f64> = (0..design.per_group)
            .map(|_| design.sigma_e * std.sample(&mut rng))
            .collect();
        if design.center_within_groups {
            let m = e.iter().sum::<f64>() / e.len() as f64;
            e.iter_mut().for_each(|v| *v -= m);
        }
        for e in e {
            let x: Vec<f64> = (1..p).map(|_| std.sample(&mut rng)).collect();
            let y = design.beta[0]
                + x.iter()
                    .zip(&design.beta[1..])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                + u
                + e;
            let mut row = vec![y];
            row.extend(x);
            rows.push(row);
            groups.push(format!("g{g:02}"));
        }
    }
    Dataset {
        columns,
        groups,
        rows,
    }
}

/// Replicates of a simulate-and-fit loop: share of runs whose nominal 95%
/// interval covers each true fixed coefficient.
pub fn coverage(design: &SimDesign, seeds: std::ops::Range<u64>) -> Vec<f64> {
    let spec = super::LmmSpec::random_intercept("y", &design.fixed_names());
    let n = seeds.end.saturating_sub(seeds.start) as f64;
    let mut hits = vec![0.0; design.beta.len()];
    for seed in seeds {
        let data = simulate(design, seed);
        if let Ok(fit) = super::fit_ml(&data, &spec, &super::FitOptions::default()) {
            for (h, (c, t)) in hits.iter_mut().zip(fit.fixed.iter().zip(&design.beta)) {
                if (c.estimate - t).abs() <= 1.96 * c.std_error {
                    *h += 1.0;
                }
            }
        }
    }
    hits.into_iter().map(|h| h / n).collect()
}
