//! Pipeline stages. Every stage reads its inputs from disk and writes its
//! outputs under the output directory, so any stage can be rerun alone.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use storage_arb::arbitrage::{run_horizon, solve_year, HorizonError, YearlyResults};
use storage_arb::config::Config;
use storage_arb::finance::{
    assemble_cash_flows, capital_cost, irr, npv, read_countries, reference_discount_rate, Capex,
    CountryFinance, LedgerOptions,
};
use storage_arb::lmm::{
    self, aliased_columns, fit_ml, lr_test, predict, Dataset, FitOptions, LmmFit, LmmSpec,
    ModelLevel, PredictMode,
};
use storage_arb::par;
use storage_arb::pricefeed::{
    daily_gap_stats, hourly_stats, parse_price_csv_with, DayBoundary, GapPolicy, PriceSeries,
};
use storage_arb::sweep::{
    best_configuration, country_stats, emit_regression_dataset, read_grid_csv, run_grid,
    write_grid_csv, GridCell, Indicator, SweepError,
};

use crate::error::{CliError, Context, Kind, Result};

pub const STATS: &str = "stats.csv";
pub const CAPITAL: &str = "capital_costs.csv";
pub const FINANCE: &str = "finance.csv";
pub const GRID: &str = "grid.csv";
pub const REGRESSION: &str = "regression.csv";
pub const SELFCHECK: &str = "lmm_selfcheck.csv";

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
}

impl Ctx {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub fn create(path: &Path, stage: &'static str) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).data(stage)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

pub fn open(path: &Path, stage: &'static str) -> Result<File> {
    File::open(path).map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

fn num(v: f64) -> String {
    lmm::fmt_num(v)
}

fn opt_num(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(num).unwrap_or_default()
}

pub fn load_countries(path: &Path, stage: &'static str) -> Result<Vec<CountryFinance>> {
    read_countries(open(path, stage)?)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

pub fn price_file(dir: &Path, country: &str) -> PathBuf {
    dir.join(format!("{country}.csv"))
}

pub fn load_series(
    path: &Path,
    zone: &str,
    policy: GapPolicy,
    stage: &'static str,
) -> Result<PriceSeries> {
    parse_price_csv_with(open(path, stage)?, zone, policy)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

pub fn load_prices(
    ctx: &Ctx,
    countries: &[CountryFinance],
    stage: &'static str,
) -> Result<BTreeMap<String, PriceSeries>> {
    let dir = ctx
        .cfg
        .prices_dir()
        .map_err(|e| CliError::config(stage, e))?;
    let policy = ctx
        .cfg
        .gap_policy()
        .map_err(|e| CliError::config(stage, e))?;
    countries
        .iter()
        .map(|c| {
            Ok((
                c.country.clone(),
                load_series(&price_file(&dir, &c.country), &c.country, policy, stage)?,
            ))
        })
        .collect()
}

fn cfg<T>(
    r: std::result::Result<T, storage_arb::config::ConfigError>,
    stage: &'static str,
) -> Result<T> {
    r.map_err(|e| CliError::config(stage, e))
}

pub const STATS_HEADER: [&str; 9] = [
    "country",
    "mean_price",
    "sd_price",
    "min_price",
    "max_price",
    "mean_gap",
    "sd_gap",
    "min_gap",
    "max_gap",
];

pub fn stats_row(
    series: &PriceSeries,
    days: DayBoundary,
    stage: &'static str,
) -> Result<Vec<String>> {
    let p = hourly_stats(series).data(stage)?;
    let g = daily_gap_stats(series, days)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", series.zone())))?;
    Ok(std::iter::once(series.zone().to_string())
        .chain(
            [
                p.mean, p.std_dev, p.min, p.max, g.mean_gap, g.std_dev, g.min, g.max,
            ]
            .map(num),
        )
        .collect())
}

pub fn write_stats<W: Write>(w: W, rows: &[Vec<String>], stage: &'static str) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(STATS_HEADER).data(stage)?;
    for r in rows {
        wr.write_record(r).data(stage)?;
    }
    wr.flush().data(stage)
}

/// Hourly and daily-gap statistics per country.
pub fn stats(ctx: &Ctx) -> Result<()> {
    const S: &str = "stats";
    let countries = load_countries(&cfg(ctx.cfg.countries_file(), S)?, S)?;
    let prices = load_prices(ctx, &countries, S)?;
    let days = cfg(ctx.cfg.day_boundary(), S)?;
    let rows: Vec<Vec<String>> = countries
        .iter()
        .map(|c| stats_row(&prices[&c.country], days, S))
        .collect::<Result<_>>()?;
    write_stats(create(&ctx.path(STATS), S)?, &rows, S)
}

/// Cost of equity, WACC and discount rate per country.
pub fn capital(ctx: &Ctx, countries: &[CountryFinance], stage: &'static str) -> Result<()> {
    let constants = cfg(ctx.cfg.market(), stage)?;
    let variant = cfg(ctx.cfg.rate_variant(), stage)?;
    let mut wr = csv::Writer::from_writer(create(&ctx.path(CAPITAL), stage)?);
    wr.write_record([
        "country",
        "tax_pct",
        "rrf_pct",
        "cost_of_equity_pct",
        "wacc_pct",
        "discount_rate_pct",
        "rate_variant",
        "published_discount_rate_pct",
    ])
    .data(stage)?;
    for c in countries {
        let k = capital_cost(&constants, c, variant);
        wr.write_record([
            c.country.clone(),
            num(c.tax_pct()),
            num(c.risk_free_pct),
            num(k.cost_of_equity_pct),
            num(k.wacc_pct),
            num(k.discount_rate_pct),
            variant.to_string(),
            opt_num(reference_discount_rate(&c.country)),
        ])
        .data(stage)?;
    }
    wr.flush().data(stage)
}

fn horizon_error(stage: &'static str, zone: &str, e: HorizonError) -> CliError {
    let kind = match e {
        HorizonError::Solve(_) => Kind::Solver,
        _ => Kind::Data,
    };
    CliError::new(stage, kind, format!("{zone}: {e}"))
}

/// Round-off allowed on top of the requested gap.
const GAP_SLACK: f64 = 1e-9;

fn gap_check(stage: &'static str, what: &str, gap: f64, mip_gap: f64) -> Result<()> {
    if gap > mip_gap + GAP_SLACK {
        return Err(CliError::new(
            stage,
            Kind::Solver,
            format!("{what}: optimality gap {gap:.3e} above {mip_gap:.3e}"),
        ));
    }
    Ok(())
}

/// Yearly results together with the sizing they were produced with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizedRun {
    pub converter_mw: f64,
    pub converter_cost: f64,
    pub battery_cost: f64,
    pub results: YearlyResults,
}

/// First-year schedule and multi-year physical run for one price series at
/// the configured converter size.
pub fn optimize_series(
    ctx: &Ctx,
    series: &PriceSeries,
    dir: &Path,
    stage: &'static str,
) -> Result<OptimizedRun> {
    let battery = cfg(ctx.cfg.battery(), stage)?;
    let converter = cfg(ctx.cfg.converter(), stage)?;
    let mut opts = cfg(ctx.cfg.horizon(), stage)?;
    opts.om_floor = battery.om_rate * (battery.capex() + converter.capex());
    let zone = series.zone();
    let year = solve_year(
        series.prices(),
        battery.fresh_state(),
        &battery,
        &converter,
        opts.strategy,
        opts.degradation,
        &opts.solve,
    )
    .map_err(|e| horizon_error(stage, zone, e))?;
    gap_check(stage, zone, year.worst_gap(), opts.solve.mip_gap)?;
    let mut w = create(&dir.join("schedules").join(format!("{zone}.csv")), stage)?;
    year.schedule.write_csv(&mut w, 1).data(stage)?;
    w.flush().data(stage)?;
    let results = run_horizon(series.prices(), &battery, &converter, &opts)
        .map_err(|e| horizon_error(stage, zone, e))?;
    let run = OptimizedRun {
        converter_mw: converter.power,
        converter_cost: converter.unit_cost,
        battery_cost: battery.unit_cost,
        results,
    };
    let json = serde_json::to_string_pretty(&run).data(stage)?;
    fs::create_dir_all(dir.join("yearly")).data(stage)?;
    fs::write(dir.join("yearly").join(format!("{zone}.json")), json + "\n").data(stage)?;
    Ok(run)
}

pub fn optimize(ctx: &Ctx) -> Result<()> {
    const S: &str = "optimize";
    let countries = load_countries(&cfg(ctx.cfg.countries_file(), S)?, S)?;
    let prices = load_prices(ctx, &countries, S)?;
    let jobs: Vec<&PriceSeries> = countries.iter().map(|c| &prices[&c.country]).collect();
    par::map(&jobs, |s| optimize_series(ctx, s, &ctx.out, S))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

pub fn read_yearly(path: &Path, stage: &'static str) -> Result<OptimizedRun> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

pub const FINANCE_HEADER: [&str; 11] = [
    "country",
    "ledger",
    "converter_mw",
    "battery_cost",
    "discount_rate_pct",
    "npv",
    "irr",
    "irr_multiple_roots",
    "duration_years",
    "termination",
    "residual",
];

/// Values optimized runs. Each entry is (country, name, run); an empty
/// country values the run for every country.
pub fn value_ledgers(
    ctx: &Ctx,
    runs: &[(String, String, OptimizedRun)],
    countries: &[CountryFinance],
    stage: &'static str,
) -> Result<()> {
    let battery = cfg(ctx.cfg.battery(), stage)?;
    let constants = cfg(ctx.cfg.market(), stage)?;
    let variant = cfg(ctx.cfg.rate_variant(), stage)?;
    let base = cfg(ctx.cfg.ledger(), stage)?;
    let mut wr = csv::Writer::from_writer(create(&ctx.path(FINANCE), stage)?);
    wr.write_record(FINANCE_HEADER).data(stage)?;
    for (country_filter, name, optimized) in runs {
        let capex = Capex {
            battery: battery.with_unit_cost(optimized.battery_cost).capex(),
            converter: optimized.converter_mw * optimized.converter_cost,
        };
        let results = &optimized.results;
        for c in countries
            .iter()
            .filter(|c| country_filter.is_empty() || &c.country == country_filter)
        {
            let opts = LedgerOptions {
                profit_tax: c.profit_tax,
                ..base
            };
            let run = results.truncated(opts.om_rate * capex.total());
            let ledger = assemble_cash_flows(&run, &capex, &opts);
            let rate = capital_cost(&constants, c, variant).discount_rate_pct;
            let r = irr(&ledger.flows).ok();
            wr.write_record([
                c.country.clone(),
                name.clone(),
                num(optimized.converter_mw),
                num(optimized.battery_cost),
                num(rate),
                num(npv(&ledger.flows, rate / 100.0)),
                opt_num(r.map(|r| r.rate)),
                r.map_or(String::new(), |r| (r.multiple_roots as u8).to_string()),
                run.operating_years().to_string(),
                run.termination.to_string(),
                num(ledger.residual),
            ])
            .data(stage)?;
            let mut lw = csv::Writer::from_writer(create(
                &ctx.out
                    .join("ledgers")
                    .join(format!("{}__{}.csv", c.country, name)),
                stage,
            )?);
            lw.write_record(["year", "flow"]).data(stage)?;
            for (y, f) in ledger.flows.iter().enumerate() {
                lw.write_record([y.to_string(), num(*f)]).data(stage)?;
            }
            lw.flush().data(stage)?;
        }
    }
    wr.flush().data(stage)
}

/// Capital costs plus the valuation of each country's reference run.
pub fn finance(ctx: &Ctx) -> Result<()> {
    const S: &str = "finance";
    let countries = load_countries(&cfg(ctx.cfg.countries_file(), S)?, S)?;
    capital(ctx, &countries, S)?;
    let runs = countries
        .iter()
        .map(|c| {
            let r = read_yearly(
                &ctx.out.join("yearly").join(format!("{}.json", c.country)),
                S,
            )?;
            Ok((c.country.clone(), c.country.clone(), r))
        })
        .collect::<Result<Vec<_>>>()?;
    value_ledgers(ctx, &runs, &countries, S)
}

fn sweep_error(e: SweepError) -> CliError {
    let kind = match &e {
        SweepError::Horizon {
            source: HorizonError::Solve(_),
            ..
        } => Kind::Solver,
        _ => Kind::Data,
    };
    CliError::new("sweep", kind, e)
}

pub fn sweep_with(
    ctx: &Ctx,
    countries: &[CountryFinance],
    prices: &BTreeMap<String, PriceSeries>,
) -> Result<()> {
    const S: &str = "sweep";
    let spec = cfg(ctx.cfg.grid(), S)?;
    let days = cfg(ctx.cfg.day_boundary(), S)?;
    let cells = run_grid(prices, countries, &spec).map_err(sweep_error)?;
    let mut w = create(&ctx.path(GRID), S)?;
    write_grid_csv(&cells, &mut w).map_err(sweep_error)?;
    w.flush().data(S)?;
    if let Some(c) = cells
        .iter()
        .find(|c| c.worst_gap > spec.horizon.solve.mip_gap + GAP_SLACK)
    {
        gap_check(
            S,
            &format!("{} {} MW", c.country, c.converter_mw),
            c.worst_gap,
            spec.horizon.solve.mip_gap,
        )?;
    }
    let stats = prices
        .iter()
        .map(|(k, s)| Ok((k.clone(), country_stats(s, days).data(S)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let table = emit_regression_dataset(&cells, &stats, countries).map_err(sweep_error)?;
    let mut w = create(&ctx.path(REGRESSION), S)?;
    table.write_csv(&mut w).data(S)?;
    w.flush().data(S)
}

pub fn sweep(ctx: &Ctx) -> Result<()> {
    const S: &str = "sweep";
    let countries = load_countries(&cfg(ctx.cfg.countries_file(), S)?, S)?;
    let prices = load_prices(ctx, &countries, S)?;
    sweep_with(ctx, &countries, &prices)
}

pub fn read_dataset(path: &Path, stage: &'static str) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))?;
    Dataset::read_csv(text.as_bytes())
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

/// Fixed regressors of the regression dataset, in column order.
pub fn regressors(data: &Dataset) -> (Vec<String>, Vec<String>, Vec<String>) {
    let is_mw = |c: &str| {
        c.strip_prefix("mw")
            .is_some_and(|r| r.parse::<u32>().is_ok())
    };
    let is_cost = |c: &str| c.starts_with("cost") && c.ends_with('k');
    let mws: Vec<String> = data.columns.iter().filter(|c| is_mw(c)).cloned().collect();
    let costs: Vec<String> = data
        .columns
        .iter()
        .filter(|c| is_cost(c))
        .cloned()
        .collect();
    let mut fixed = mws.clone();
    fixed.extend(costs.iter().cloned());
    fixed.extend(
        [
            "tax_pct",
            "mean_price",
            "sd_price",
            "mean_gap",
            "sd_gap",
            "dur",
            "dur2",
            "dur3",
        ]
        .iter()
        .filter(|c| data.column(c).is_some())
        .map(|c| c.to_string()),
    );
    (fixed, costs, mws)
}

pub struct RegressOutcome {
    pub fits: Vec<(ModelLevel, LmmFit)>,
    pub dropped: Vec<String>,
}

/// Fits the requested models for one response.
pub fn fit_models(
    data: &Dataset,
    response: Indicator,
    models: &[ModelLevel],
    pooled: bool,
    stage: &'static str,
) -> Result<RegressOutcome> {
    let (fixed, costs, mws) = regressors(data);
    let resp = response.to_string();
    let mut probe = data.clone();
    // aliasing is judged on the rows the response actually uses
    if let Some(rc) = probe.column(&resp) {
        let keep: Vec<bool> = probe.rows.iter().map(|r| r[rc].is_finite()).collect();
        let mut it = keep.iter();
        probe.rows.retain(|_| *it.next().expect("same length"));
        let mut it = keep.iter();
        probe.groups.retain(|_| *it.next().expect("same length"));
    }
    let dropped = aliased_columns(&probe, &LmmSpec::random_intercept(&resp, &fixed)).data(stage)?;
    let fixed: Vec<String> = fixed.into_iter().filter(|c| !dropped.contains(c)).collect();
    let costs: Vec<String> = costs.into_iter().filter(|c| !dropped.contains(c)).collect();
    let mws: Vec<String> = mws.into_iter().filter(|c| !dropped.contains(c)).collect();
    let specs: Vec<(ModelLevel, LmmSpec)> = models
        .iter()
        .map(|&m| (m, LmmSpec::model(m, &resp, &fixed, &costs, &mws, pooled)))
        .collect();
    let fits = par::map(&specs, |(m, spec)| {
        fit_ml(&probe, spec, &FitOptions::default()).map(|f| (*m, f))
    });
    let fits = fits
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::data(stage, format!("{resp}: {e}")))?;
    Ok(RegressOutcome { fits, dropped })
}

fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Coefficient table with one column group per model.
pub fn write_coefficients<W: Write>(w: W, out: &RegressOutcome, stage: &'static str) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["term".to_string()];
    for (m, _) in &out.fits {
        header.extend([
            format!("{m}"),
            format!("{m}_se"),
            format!("{m}_p"),
            format!("{m}_sig"),
        ]);
    }
    wr.write_record(&header).data(stage)?;
    let mut terms: Vec<String> = Vec::new();
    for (_, f) in &out.fits {
        for c in &f.fixed {
            if !terms.contains(&c.name) {
                terms.push(c.name.clone());
            }
        }
    }
    for t in &terms {
        let mut rec = vec![t.clone()];
        for (_, f) in &out.fits {
            match f.coefficient(t) {
                Some(c) => rec.extend([
                    num(c.estimate),
                    num(c.std_error),
                    num(c.p_value),
                    stars(c.p_value).into(),
                ]),
                None => rec.extend([String::new(), String::new(), String::new(), String::new()]),
            }
        }
        wr.write_record(&rec).data(stage)?;
    }
    let mut blocks: Vec<String> = Vec::new();
    for (_, f) in &out.fits {
        for v in &f.random {
            if !blocks.contains(&v.name) {
                blocks.push(v.name.clone());
            }
        }
    }
    for b in blocks.iter().map(String::as_str).chain(["residual"]) {
        let mut rec = vec![format!("sd({b})")];
        for (_, f) in &out.fits {
            let v = if b == "residual" {
                Some(&f.residual)
            } else {
                f.random.iter().find(|v| v.name == b)
            };
            match v {
                Some(v) => rec.extend([
                    num(v.sd),
                    opt_num(Some(v.std_error)),
                    String::new(),
                    String::new(),
                ]),
                None => rec.extend([String::new(), String::new(), String::new(), String::new()]),
            }
        }
        wr.write_record(&rec).data(stage)?;
    }
    type Row = (&'static str, fn(&LmmFit) -> String);
    let summary: [Row; 6] = [
        ("log_likelihood", |f| num(f.log_likelihood)),
        ("aic", |f| num(f.aic)),
        ("bic", |f| num(f.bic)),
        ("n_obs", |f| f.n_obs.to_string()),
        ("n_groups", |f| f.n_groups.to_string()),
        ("converged", |f| (f.converged as u8).to_string()),
    ];
    for (name, get) in summary {
        let mut rec = vec![name.to_string()];
        for (_, f) in &out.fits {
            rec.extend([get(f), String::new(), String::new(), String::new()]);
        }
        wr.write_record(&rec).data(stage)?;
    }
    wr.flush().data(stage)
}

/// Observed, fixed and full predictions of the richest fitted model.
pub fn write_predictions<W: Write>(
    w: W,
    data: &Dataset,
    response: Indicator,
    fit: &LmmFit,
    stage: &'static str,
) -> Result<()> {
    let fixed = predict(fit, data, PredictMode::Fixed).data(stage)?;
    let full = predict(fit, data, PredictMode::Full).data(stage)?;
    let col = |n: &str| {
        data.column(n)
            .ok_or_else(|| CliError::data(stage, format!("column `{n}` missing")))
    };
    let (mw, cost, y) = (
        col("converter_mw")?,
        col("battery_cost")?,
        col(&response.to_string())?,
    );
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "country",
        "converter_mw",
        "battery_cost",
        "observed",
        "fixed",
        "full",
        "unseen_group",
    ])
    .data(stage)?;
    for (i, row) in data.rows.iter().enumerate() {
        if !row[y].is_finite() {
            continue;
        }
        wr.write_record([
            data.groups[i].clone(),
            num(row[mw]),
            num(row[cost]),
            num(row[y]),
            opt_num(Some(fixed.values[i])),
            opt_num(Some(full.values[i])),
            (full.fell_back[i] as u8).to_string(),
        ])
        .data(stage)?;
    }
    wr.flush().data(stage)
}

pub fn write_lr_tests<W: Write>(w: W, out: &RegressOutcome, stage: &'static str) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "restricted",
        "general",
        "statistic",
        "dof",
        "boundary",
        "p_value",
        "note",
    ])
    .data(stage)?;
    for pair in out.fits.windows(2) {
        let ((mr, r), (mg, g)) = (&pair[0], &pair[1]);
        let rec = match lr_test(r, g) {
            Ok(t) => [
                mr.to_string(),
                mg.to_string(),
                num(t.statistic),
                t.dof.to_string(),
                (t.boundary as u8).to_string(),
                num(t.p_value),
                if t.boundary {
                    "variance tested at zero; chi-square reference is conservative".into()
                } else {
                    String::new()
                },
            ],
            Err(e) => [
                mr.to_string(),
                mg.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ],
        };
        wr.write_record(&rec).data(stage)?;
    }
    wr.flush().data(stage)
}

/// Simulate-and-recover check of the estimator at the run seed.
pub fn selfcheck(ctx: &Ctx, stage: &'static str) -> Result<()> {
    let seed = cfg(ctx.cfg.seed(), stage)?;
    let design = lmm::sim::SimDesign::default();
    let data = lmm::sim::simulate(&design, seed);
    let fit = fit_ml(
        &data,
        &LmmSpec::random_intercept("y", &design.fixed_names()),
        &FitOptions::default(),
    )
    .map_err(|e| CliError::new(stage, Kind::Estimator, format!("self-check: {e}")))?;
    let mut wr = csv::Writer::from_writer(create(&ctx.path(SELFCHECK), stage)?);
    wr.write_record(["parameter", "true", "estimate", "std_error", "within_3se"])
        .data(stage)?;
    let mut rows: Vec<(String, f64, f64, f64)> = fit
        .fixed
        .iter()
        .zip(&design.beta)
        .map(|(c, t)| (c.name.clone(), *t, c.estimate, c.std_error))
        .collect();
    rows.push((
        "sd(intercept)".into(),
        design.sigma_u,
        fit.random[0].sd,
        fit.random[0].std_error,
    ));
    rows.push((
        "sd(residual)".into(),
        design.sigma_e,
        fit.residual.sd,
        fit.residual.std_error,
    ));
    for (name, t, e, se) in rows {
        let ok = (e - t).abs() <= 3.0 * se;
        wr.write_record([name, num(t), num(e), num(se), (ok as u8).to_string()])
            .data(stage)?;
    }
    wr.flush().data(stage)
}

pub fn coefficient_file(r: Indicator) -> String {
    format!("coefficients_{r}.csv")
}

pub fn prediction_file(r: Indicator) -> String {
    format!("predictions_{r}.csv")
}

pub fn lr_file(r: Indicator) -> String {
    format!("lr_tests_{r}.csv")
}

/// Fits, writes tables, and reports non-convergence after all outputs exist.
pub fn regress_data(
    ctx: &Ctx,
    data: &Dataset,
    responses: &[Indicator],
    models: &[ModelLevel],
    stage: &'static str,
) -> Result<()> {
    let pooled = cfg(ctx.cfg.pooled(), stage)?;
    let mut unconverged = Vec::new();
    for &r in responses {
        let out = fit_models(data, r, models, pooled, stage)?;
        write_coefficients(create(&ctx.path(&coefficient_file(r)), stage)?, &out, stage)?;
        write_lr_tests(create(&ctx.path(&lr_file(r)), stage)?, &out, stage)?;
        if let Some((_, richest)) = out.fits.last() {
            write_predictions(
                create(&ctx.path(&prediction_file(r)), stage)?,
                data,
                r,
                richest,
                stage,
            )?;
        }
        if !out.dropped.is_empty() {
            eprintln!(
                "{stage}: {r}: dropped aliased regressors: {}",
                out.dropped.join(", ")
            );
        }
        unconverged.extend(
            out.fits
                .iter()
                .filter(|(_, f)| !f.converged)
                .map(|(m, _)| format!("{r} model {m}")),
        );
    }
    selfcheck(ctx, stage)?;
    if !unconverged.is_empty() {
        return Err(CliError::new(
            stage,
            Kind::Estimator,
            unconverged.join(", "),
        ));
    }
    Ok(())
}

pub fn regress(ctx: &Ctx) -> Result<()> {
    const S: &str = "regress";
    let data = read_dataset(&ctx.path(REGRESSION), S)?;
    let responses = cfg(ctx.cfg.responses(), S)?;
    let models = cfg(ctx.cfg.models(), S)?;
    regress_data(ctx, &data, &responses, &models, S)
}

pub fn read_grid(path: &Path, stage: &'static str) -> Result<Vec<GridCell>> {
    read_grid_csv(open(path, stage)?)
        .map_err(|e| CliError::data(stage, format!("{}: {e}", path.display())))
}

fn read_table(
    path: &Path,
    stage: &'static str,
) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut rd = csv::Reader::from_reader(open(path, stage)?);
    let header = rd.headers().data(stage)?.clone();
    let rows = rd
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .data(stage)?;
    Ok((header, rows))
}

/// Copies the named columns of a CSV table.
fn project(src: &Path, dst: &Path, columns: &[&str], stage: &'static str) -> Result<()> {
    let (header, rows) = read_table(src, stage)?;
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| CliError::data(stage, format!("{}: no column `{c}`", src.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut wr = csv::Writer::from_writer(create(dst, stage)?);
    wr.write_record(columns).data(stage)?;
    for r in &rows {
        wr.write_record(idx.iter().map(|&i| &r[i])).data(stage)?;
    }
    wr.flush().data(stage)
}

pub const REPORT_FILES: [&str; 4] = [
    "price_summary.csv",
    "capital_summary.csv",
    "activity.csv",
    "best_converter.csv",
];

/// Summary tables derived from earlier outputs.
pub fn report(ctx: &Ctx) -> Result<()> {
    const S: &str = "report";
    project(
        &ctx.path(STATS),
        &ctx.path(REPORT_FILES[0]),
        &["country", "mean_price", "sd_price", "mean_gap", "sd_gap"],
        S,
    )?;
    project(
        &ctx.path(CAPITAL),
        &ctx.path(REPORT_FILES[1]),
        &[
            "country",
            "tax_pct",
            "rrf_pct",
            "cost_of_equity_pct",
            "wacc_pct",
            "discount_rate_pct",
        ],
        S,
    )?;
    let cells = read_grid(&ctx.path(GRID), S)?;
    let mut wr = csv::Writer::from_writer(create(&ctx.path(REPORT_FILES[2]), S)?);
    wr.write_record([
        "country",
        "converter_mw",
        "buy_hours",
        "sell_hours",
        "idle_hours",
    ])
    .data(S)?;
    let mut seen = std::collections::BTreeSet::new();
    for c in &cells {
        if seen.insert((c.country.clone(), c.converter_mw)) {
            let a = c.activity;
            wr.write_record([
                c.country.clone(),
                c.converter_mw.to_string(),
                a.buy_hours.to_string(),
                a.sell_hours.to_string(),
                a.idle_hours.to_string(),
            ])
            .data(S)?;
        }
    }
    wr.flush().data(S)?;
    let cost = cfg(ctx.cfg.report_battery_cost(), S)?;
    let at_cost: Vec<GridCell> = cells
        .into_iter()
        .filter(|c| c.battery_cost == cost)
        .collect();
    if at_cost.is_empty() {
        return Err(CliError::new(
            S,
            Kind::Config,
            format!("no grid cells at report.battery_cost = {cost}"),
        ));
    }
    let best_npv =
        best_configuration(&at_cost, Indicator::Npv).map_err(|e| CliError::data(S, e))?;
    let best_irr = best_configuration(&at_cost, Indicator::Irr);
    let mut wr = csv::Writer::from_writer(create(&ctx.path(REPORT_FILES[3]), S)?);
    wr.write_record([
        "country",
        "battery_cost",
        "npv_converter_mw",
        "npv",
        "irr_converter_mw",
        "irr_pct",
    ])
    .data(S)?;
    for b in &best_npv {
        let irr = best_irr
            .as_ref()
            .ok()
            .and_then(|v| v.iter().find(|i| i.country == b.country));
        wr.write_record([
            b.country.clone(),
            num(cost),
            b.converter_mw.to_string(),
            num(b.value),
            irr.map_or(String::new(), |i| i.converter_mw.to_string()),
            irr.map_or(String::new(), |i| num(100.0 * i.value)),
        ])
        .data(S)?;
    }
    wr.flush().data(S)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regressors_keep_table_order() {
        let data = Dataset {
            columns: [
                "converter_mw",
                "battery_cost",
                "npv",
                "irr",
                "mw1",
                "mw10",
                "cost50k",
                "tax_pct",
                "dur",
            ]
            .map(String::from)
            .to_vec(),
            groups: vec![],
            rows: vec![],
        };
        let (fixed, costs, mws) = regressors(&data);
        assert_eq!(fixed, ["mw1", "mw10", "cost50k", "tax_pct", "dur"]);
        assert_eq!(costs, ["cost50k"]);
        assert_eq!(mws, ["mw1", "mw10"]);
    }

    #[test]
    fn significance_marks() {
        assert_eq!([0.001, 0.03, 0.07, 0.5].map(stars), ["***", "**", "*", ""]);
    }
}
