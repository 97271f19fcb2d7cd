//! Country × converter × battery-cost experiment grid, best configurations
//! and the regression dataset.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbitrage::{run_horizon, Activity, HorizonError, HorizonOptions, Termination};
use crate::bess::{BatterySpec, ConverterSpec};
use crate::finance::{
    assemble_cash_flows, capital_cost, irr, npv, Capex, CountryFinance, LedgerOptions,
    MarketConstants, RateVariant,
};
use crate::lmm::{fmt_num, Dataset};
use crate::par;
use crate::pricefeed::{daily_gap_stats, hourly_stats, DayBoundary, PriceError, PriceSeries};

/// Regression design produced by the sweep.
pub type RegressionTable = Dataset;

pub const REFERENCE_CONVERTER_MW: u32 = 4;
pub const REFERENCE_BATTERY_COST: f64 = 200_000.0;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no price data for country `{0}`")]
    MissingPrices(String),
    #[error("{country}, {converter_mw} MW: {source}")]
    Horizon {
        country: String,
        converter_mw: u32,
        source: HorizonError,
    },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("`{0}` has no cell with a defined IRR")]
    AllIrrUndefined(String),
    #[error("price statistics for `{country}`: {source}")]
    Stats { country: String, source: PriceError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grid axes plus everything held fixed across cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub converters_mw: Vec<u32>,
    /// €/MWh of battery capacity.
    pub battery_costs: Vec<f64>,
    pub converter_unit_cost: f64,
    /// Physical battery; its `unit_cost` is replaced per cell.
    pub battery: BatterySpec,
    pub horizon: HorizonOptions,
    pub ledger: LedgerOptions,
    pub constants: MarketConstants,
    pub rate_variant: RateVariant,
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.converters_mw.is_empty() || self.battery_costs.is_empty() {
            return Err(SweepError::Grid(
                "converter and battery-cost lists must be non-empty".into(),
            ));
        }
        if self.converters_mw.contains(&0) {
            return Err(SweepError::Grid("converter sizes must be positive".into()));
        }
        if self
            .battery_costs
            .iter()
            .any(|c| !c.is_finite() || *c < 0.0)
        {
            return Err(SweepError::Grid(
                "battery costs must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub country: String,
    pub converter_mw: u32,
    pub battery_cost: f64,
    pub npv: f64,
    /// `None` when the ledger never changes sign.
    pub irr: Option<f64>,
    pub irr_multiple_roots: bool,
    /// Operating years.
    pub duration: usize,
    pub termination: Termination,
    pub discount_rate_pct: f64,
    pub capex: f64,
    pub residual: f64,
    pub first_year_margin: f64,
    /// Trading hours of the first year.
    pub activity: Activity,
    /// Largest relative optimality gap over the solved years.
    pub worst_gap: f64,
}

/// Runs every cell. One physical run per (country, converter) serves all
/// battery costs, since trading ignores investment cost.
pub fn run_grid(
    prices: &BTreeMap<String, PriceSeries>,
    countries: &[CountryFinance],
    spec: &GridSpec,
) -> Result<Vec<GridCell>, SweepError> {
    spec.validate()?;
    for c in countries {
        if prices.get(&c.country).is_none_or(|p| p.is_empty()) {
            return Err(SweepError::MissingPrices(c.country.clone()));
        }
    }
    let jobs: Vec<(&CountryFinance, u32)> = countries
        .iter()
        .flat_map(|c| spec.converters_mw.iter().map(move |&mw| (c, mw)))
        .collect();
    let results = par::map(&jobs, |&(country, mw)| {
        run_cells(&prices[&country.country], country, mw, spec)
    });
    let mut cells = Vec::with_capacity(jobs.len() * spec.battery_costs.len());
    for r in results {
        cells.extend(r?);
    }
    Ok(cells)
}

fn run_cells(
    series: &PriceSeries,
    country: &CountryFinance,
    mw: u32,
    spec: &GridSpec,
) -> Result<Vec<GridCell>, SweepError> {
    let converter = ConverterSpec::new(mw as f64, spec.converter_unit_cost)
        .map_err(|e| SweepError::Grid(e.to_string()))?;
    let capex_at = |cost: f64| Capex {
        battery: spec.battery.with_unit_cost(cost).capex(),
        converter: converter.capex(),
    };
    let cheapest = spec
        .battery_costs
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let horizon = HorizonOptions {
        om_floor: spec.ledger.om_rate * capex_at(cheapest).total(),
        ..spec.horizon.clone()
    };
    let physical =
        run_horizon(series.prices(), &spec.battery, &converter, &horizon).map_err(|source| {
            SweepError::Horizon {
                country: country.country.clone(),
                converter_mw: mw,
                source,
            }
        })?;
    let rate = capital_cost(&spec.constants, country, spec.rate_variant).discount_rate_pct;
    let worst_gap = physical
        .years
        .iter()
        .map(|y| y.worst_gap)
        .fold(0.0, f64::max);
    let ledger_opts = LedgerOptions {
        profit_tax: country.profit_tax,
        ..spec.ledger
    };
    Ok(spec
        .battery_costs
        .iter()
        .map(|&cost| {
            let capex = capex_at(cost);
            let run = physical.truncated(spec.ledger.om_rate * capex.total());
            let ledger = assemble_cash_flows(&run, &capex, &ledger_opts);
            let (irr_v, multiple) = match irr(&ledger.flows) {
                Ok(r) => (Some(r.rate), r.multiple_roots),
                Err(_) => (None, false),
            };
            GridCell {
                country: country.country.clone(),
                converter_mw: mw,
                battery_cost: cost,
                npv: npv(&ledger.flows, rate / 100.0),
                irr: irr_v,
                irr_multiple_roots: multiple,
                duration: run.operating_years(),
                termination: run.termination,
                discount_rate_pct: rate,
                capex: capex.total(),
                residual: ledger.residual,
                first_year_margin: physical.years.first().map_or(0.0, |y| y.cash_flow),
                activity: physical.first_activity.unwrap_or_default(),
                worst_gap,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Indicator {
    Npv,
    Irr,
}

impl FromStr for Indicator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "npv" => Ok(Self::Npv),
            "irr" => Ok(Self::Irr),
            other => Err(format!("unknown indicator `{other}` (npv|irr)")),
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Npv => "npv",
            Self::Irr => "irr",
        })
    }
}

impl Indicator {
    pub fn of(&self, cell: &GridCell) -> Option<f64> {
        match self {
            Indicator::Npv => Some(cell.npv),
            Indicator::Irr => cell.irr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub country: String,
    pub converter_mw: u32,
    pub value: f64,
}

/// Best converter per country (in order of first appearance). Ties go to the
/// smaller converter.
pub fn best_configuration(
    cells: &[GridCell],
    indicator: Indicator,
) -> Result<Vec<Best>, SweepError> {
    let mut order: Vec<&str> = Vec::new();
    let mut best: BTreeMap<&str, Option<Best>> = BTreeMap::new();
    for c in cells {
        if !best.contains_key(c.country.as_str()) {
            order.push(&c.country);
            best.insert(&c.country, None);
        }
        let Some(v) = indicator.of(c) else { continue };
        let slot = best.get_mut(c.country.as_str()).expect("inserted");
        let better = match slot {
            None => true,
            Some(b) => v > b.value || (v == b.value && c.converter_mw < b.converter_mw),
        };
        if better {
            *slot = Some(Best {
                country: c.country.clone(),
                converter_mw: c.converter_mw,
                value: v,
            });
        }
    }
    order
        .into_iter()
        .map(|c| {
            best.remove(c)
                .flatten()
                .ok_or_else(|| SweepError::AllIrrUndefined(c.to_string()))
        })
        .collect()
}

/// Country-level price descriptors used as regressors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountryStats {
    pub mean_price: f64,
    pub sd_price: f64,
    pub mean_gap: f64,
    pub sd_gap: f64,
}

pub fn country_stats(series: &PriceSeries, days: DayBoundary) -> Result<CountryStats, PriceError> {
    let p = hourly_stats(series)?;
    let g = daily_gap_stats(series, days)?;
    Ok(CountryStats {
        mean_price: p.mean,
        sd_price: p.std_dev,
        mean_gap: g.mean_gap,
        sd_gap: g.std_dev,
    })
}

fn csv_io(e: csv::Error) -> SweepError {
    SweepError::Io(std::io::Error::other(e.to_string()))
}

pub fn converter_dummy(mw: u32) -> String {
    format!("mw{mw}")
}

pub fn cost_dummy(cost: f64) -> String {
    format!("cost{}k", (cost / 1000.0).round() as i64)
}

/// Builds the design table (IRR in percent). Dummies are created for every converter size and
/// battery cost present except the reference ones.
pub fn emit_regression_dataset(
    cells: &[GridCell],
    stats: &BTreeMap<String, CountryStats>,
    countries: &[CountryFinance],
) -> Result<RegressionTable, SweepError> {
    let mut mws: Vec<u32> = cells
        .iter()
        .map(|c| c.converter_mw)
        .filter(|&m| m != REFERENCE_CONVERTER_MW)
        .collect();
    mws.sort_unstable();
    mws.dedup();
    let mut costs: Vec<f64> = cells
        .iter()
        .map(|c| c.battery_cost)
        .filter(|&c| c != REFERENCE_BATTERY_COST)
        .collect();
    costs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    costs.dedup();

    let mut columns: Vec<String> = ["converter_mw", "battery_cost", "npv", "irr"]
        .map(String::from)
        .to_vec();
    columns.extend(mws.iter().map(|&m| converter_dummy(m)));
    columns.extend(costs.iter().map(|&c| cost_dummy(c)));
    columns.extend(
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
        .map(String::from),
    );

    let tax: BTreeMap<&str, f64> = countries
        .iter()
        .map(|c| (c.country.as_str(), c.tax_pct()))
        .collect();
    let mut groups = Vec::with_capacity(cells.len());
    let mut rows = Vec::with_capacity(cells.len());
    for c in cells {
        let s = stats
            .get(&c.country)
            .ok_or_else(|| SweepError::MissingPrices(c.country.clone()))?;
        let t = *tax
            .get(c.country.as_str())
            .ok_or_else(|| SweepError::MissingPrices(c.country.clone()))?;
        let d = c.duration as f64;
        let mut row = vec![
            c.converter_mw as f64,
            c.battery_cost,
            c.npv,
            c.irr.map_or(f64::NAN, |r| 100.0 * r),
        ];
        row.extend(mws.iter().map(|&m| (c.converter_mw == m) as u8 as f64));
        row.extend(costs.iter().map(|&k| (c.battery_cost == k) as u8 as f64));
        row.extend([
            t,
            s.mean_price,
            s.sd_price,
            s.mean_gap,
            s.sd_gap,
            d,
            d * d,
            d * d * d,
        ]);
        groups.push(c.country.clone());
        rows.push(row);
    }
    Ok(RegressionTable {
        columns,
        groups,
        rows,
    })
}

/// Writes `grid.csv`.
pub fn write_grid_csv<W: Write>(cells: &[GridCell], w: W) -> Result<(), SweepError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "country",
        "converter_mw",
        "battery_cost",
        "npv",
        "irr",
        "irr_multiple_roots",
        "duration_years",
        "termination",
        "discount_rate_pct",
        "capex",
        "residual",
        "first_year_margin",
        "buy_hours",
        "sell_hours",
        "idle_hours",
        "worst_gap",
    ])
    .map_err(csv_io)?;
    for c in cells {
        wr.write_record([
            c.country.clone(),
            c.converter_mw.to_string(),
            fmt_num(c.battery_cost),
            fmt_num(c.npv),
            c.irr.map(fmt_num).unwrap_or_default(),
            (c.irr_multiple_roots as u8).to_string(),
            c.duration.to_string(),
            c.termination.to_string(),
            fmt_num(c.discount_rate_pct),
            fmt_num(c.capex),
            fmt_num(c.residual),
            fmt_num(c.first_year_margin),
            c.activity.buy_hours.to_string(),
            c.activity.sell_hours.to_string(),
            c.activity.idle_hours.to_string(),
            fmt_num(c.worst_gap),
        ])
        .map_err(csv_io)?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `grid.csv` back.
pub fn read_grid_csv<R: std::io::Read>(r: R) -> Result<Vec<GridCell>, String> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = i + 2;
        let f = |j: usize| {
            rec[j]
                .parse::<f64>()
                .map_err(|_| format!("grid row {line}: bad number `{}`", &rec[j]))
        };
        let u = |j: usize| {
            rec[j]
                .parse::<usize>()
                .map_err(|_| format!("grid row {line}: bad count `{}`", &rec[j]))
        };
        let termination = match &rec[7] {
            "end-of-life" => Termination::EndOfLife,
            "negative-cash-flow" => Termination::NegativeCashFlow,
            "max-years" => Termination::MaxYears,
            other => return Err(format!("grid row {line}: unknown termination `{other}`")),
        };
        out.push(GridCell {
            country: rec[0].to_string(),
            converter_mw: u(1)? as u32,
            battery_cost: f(2)?,
            npv: f(3)?,
            irr: if rec[4].is_empty() { None } else { Some(f(4)?) },
            irr_multiple_roots: &rec[5] == "1",
            duration: u(6)?,
            termination,
            discount_rate_pct: f(8)?,
            capex: f(9)?,
            residual: f(10)?,
            first_year_margin: f(11)?,
            activity: Activity {
                buy_hours: u(12)?,
                sell_hours: u(13)?,
                idle_hours: u(14)?,
            },
            worst_gap: f(15)?,
        });
    }
    Ok(out)
}
