//! Flat `key = value` run configuration.
//!
//! Lines are `section.key = value`; `#` starts a comment. Unknown keys,
//! duplicates and malformed values are errors. Relative paths resolve against
//! the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

use crate::arbitrage::{DegradationMode, HorizonOptions, SolveOptions, Strategy};
use crate::bess::{BatterySpec, ConverterSpec, EfficiencyMode};
use crate::finance::{
    DepreciationPolicy, LedgerOptions, MarketConstants, RateVariant, ResidualPolicy,
};
use crate::lmm::ModelLevel;
use crate::pricefeed::{DayBoundary, GapPolicy};
use crate::sweep::{GridSpec, Indicator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { key: String, line: usize },
    #[error("missing config key `{0}`")]
    Missing(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Every accepted key with its default; `None` marks a required key.
const KEYS: &[(&str, Option<&str>)] = &[
    ("battery.capacity_mwh", Some("10")),
    ("battery.cycles", Some("5000")),
    ("battery.fade", Some("0.2")),
    ("battery.round_trip", Some("0.92")),
    ("battery.efficiency_split", Some("symmetric")),
    ("battery.cost_eur_per_mwh", Some("100000")),
    ("battery.om_rate", Some("0.01")),
    ("battery.eol_fraction", Some("0.8")),
    ("converter.power_mw", Some("4")),
    ("converter.cost_eur_per_mw", Some("30000")),
    ("market.equity_fraction", Some("0.45")),
    ("market.debt_fraction", Some("0.55")),
    ("market.beta", Some("0.77")),
    ("market.risk_premium_pct", Some("4.75")),
    ("market.cost_of_debt_pct", Some("4.49")),
    ("market.spread_pct", Some("0.5")),
    ("optimizer.strategy", Some("rolling:168:0")),
    ("optimizer.degradation", Some("cycle")),
    ("optimizer.mip_gap", Some("1e-6")),
    ("optimizer.node_budget", Some("50000000")),
    ("optimizer.time_budget_s", Some("3600")),
    ("optimizer.max_years", Some("50")),
    ("prices.dir", None),
    ("prices.gap_policy", Some("reject")),
    ("prices.day_boundary", Some("utc")),
    ("finance.countries", None),
    ("finance.rate_variant", Some("pretax")),
    ("finance.depreciation", Some("straight-line")),
    ("finance.residual", Some("proportional")),
    ("sweep.converters_mw", Some("1,2,3,4,5,6,7,8,9,10")),
    ("sweep.battery_costs", Some("50000,100000,150000,200000")),
    ("regress.responses", Some("npv,irr")),
    ("regress.models", Some("I,II,III")),
    ("regress.pooled", Some("true")),
    ("report.battery_cost", Some("100000")),
    ("output.dir", Some("out")),
    ("run.threads", Some("0")),
    ("run.seed", Some("20190101")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Effective values of every key, defaults included.
    values: BTreeMap<String, String>,
    base: PathBuf,
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>().map_err(|e| ConfigError::Invalid {
                key: key.into(),
                reason: format!("`{s}`: {e}"),
            })
        })
        .collect()
}

impl FromStr for Config {
    type Err = ConfigError;
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(ConfigError::UnknownKey {
                    key: k.into(),
                    line: i + 1,
                });
            }
            if values.insert(k.into(), v.into()).is_some() {
                return Err(ConfigError::Duplicate {
                    key: k.into(),
                    line: i + 1,
                });
            }
        }
        for (k, d) in KEYS {
            if let Some(d) = d {
                values.entry((*k).into()).or_insert_with(|| (*d).into());
            }
        }
        let cfg = Config {
            values,
            base: PathBuf::from("."),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg: Config = text.parse()?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _)| *k)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn req(&self, key: &str) -> Result<&str, ConfigError> {
        self.get(key)
            .ok_or_else(|| ConfigError::Missing(key.into()))
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.req(key)?;
        v.parse().map_err(|e: T::Err| ConfigError::Invalid {
            key: key.into(),
            reason: format!("`{v}`: {e}"),
        })
    }

    fn invalid(key: &str, reason: impl std::fmt::Display) -> ConfigError {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.to_string(),
        }
    }

    /// Checks every present value; required keys may still be absent.
    fn validate(&self) -> Result<(), ConfigError> {
        self.battery()?;
        self.converter()?;
        self.market()?;
        self.horizon()?;
        self.gap_policy()?;
        self.day_boundary()?;
        self.ledger()?;
        self.rate_variant()?;
        self.converters_mw()?;
        self.battery_costs()?;
        self.responses()?;
        self.models()?;
        self.pooled()?;
        self.threads()?;
        self.seed()?;
        self.report_battery_cost()?;
        Ok(())
    }

    /// Sorted `key = value` lines of the effective configuration.
    pub fn snapshot(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn with(mut self, key: &str, value: &str) -> Result<Self, ConfigError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::UnknownKey {
                key: key.into(),
                line: 0,
            });
        }
        self.values.insert(key.into(), value.into());
        self.validate()?;
        Ok(self)
    }

    fn path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        Ok(self.base.join(self.req(key)?))
    }

    pub fn prices_dir(&self) -> Result<PathBuf, ConfigError> {
        self.path("prices.dir")
    }

    pub fn countries_file(&self) -> Result<PathBuf, ConfigError> {
        self.path("finance.countries")
    }

    pub fn output_dir(&self) -> Result<PathBuf, ConfigError> {
        self.path("output.dir")
    }

    pub fn battery(&self) -> Result<BatterySpec, ConfigError> {
        let mode = match self.req("battery.efficiency_split")? {
            "symmetric" => EfficiencyMode::SplitSymmetric,
            "literal" => EfficiencyMode::Literal,
            other => {
                return Err(Self::invalid(
                    "battery.efficiency_split",
                    format!("`{other}` (symmetric|literal)"),
                ))
            }
        };
        BatterySpec::from_datasheet(
            self.parsed("battery.capacity_mwh")?,
            self.parsed("battery.cycles")?,
            self.parsed("battery.fade")?,
            self.parsed("battery.round_trip")?,
            mode,
            self.parsed("battery.eol_fraction")?,
            self.parsed("battery.cost_eur_per_mwh")?,
            self.parsed("battery.om_rate")?,
        )
        .map_err(|e| Self::invalid("battery", e))
    }

    pub fn converter(&self) -> Result<ConverterSpec, ConfigError> {
        ConverterSpec::new(
            self.parsed("converter.power_mw")?,
            self.parsed("converter.cost_eur_per_mw")?,
        )
        .map_err(|e| Self::invalid("converter", e))
    }

    pub fn market(&self) -> Result<MarketConstants, ConfigError> {
        let c = MarketConstants {
            equity_fraction: self.parsed("market.equity_fraction")?,
            debt_fraction: self.parsed("market.debt_fraction")?,
            beta: self.parsed("market.beta")?,
            market_risk_premium_pct: self.parsed("market.risk_premium_pct")?,
            cost_of_debt_pct: self.parsed("market.cost_of_debt_pct")?,
            spread_pct: self.parsed("market.spread_pct")?,
        };
        c.validate().map_err(|e| Self::invalid("market", e))?;
        Ok(c)
    }

    pub fn horizon(&self) -> Result<HorizonOptions, ConfigError> {
        let strategy: Strategy = self.parsed("optimizer.strategy")?;
        let degradation: DegradationMode = self.parsed("optimizer.degradation")?;
        let mip_gap: f64 = self.parsed("optimizer.mip_gap")?;
        if !(mip_gap >= 0.0 && mip_gap.is_finite()) {
            return Err(Self::invalid(
                "optimizer.mip_gap",
                "must be a non-negative number",
            ));
        }
        let secs: f64 = self.parsed("optimizer.time_budget_s")?;
        if !(secs > 0.0 && secs.is_finite()) {
            return Err(Self::invalid("optimizer.time_budget_s", "must be positive"));
        }
        let max_years: usize = self.parsed("optimizer.max_years")?;
        if max_years == 0 {
            return Err(Self::invalid("optimizer.max_years", "must be at least 1"));
        }
        Ok(HorizonOptions {
            strategy,
            degradation,
            solve: SolveOptions {
                mip_gap,
                node_budget: self.parsed("optimizer.node_budget")?,
                time_budget: Duration::from_secs_f64(secs),
            },
            max_years,
            ..HorizonOptions::default()
        })
    }

    pub fn gap_policy(&self) -> Result<GapPolicy, ConfigError> {
        self.parsed("prices.gap_policy")
    }

    pub fn day_boundary(&self) -> Result<DayBoundary, ConfigError> {
        self.parsed("prices.day_boundary")
    }

    pub fn rate_variant(&self) -> Result<RateVariant, ConfigError> {
        self.parsed("finance.rate_variant")
    }

    /// Ledger options without a country tax; the sweep fills it per country.
    pub fn ledger(&self) -> Result<LedgerOptions, ConfigError> {
        let key = "finance.depreciation";
        let depreciation = match self.req(key)? {
            "straight-line" => DepreciationPolicy::StraightLine,
            "none" => DepreciationPolicy::None,
            v => match v.strip_prefix("straight-line:").map(str::parse::<usize>) {
                Some(Ok(n)) if n > 0 => DepreciationPolicy::StraightLineOver(n),
                _ => {
                    return Err(Self::invalid(
                        key,
                        format!("`{v}` (straight-line | straight-line:<years> | none)"),
                    ))
                }
            },
        };
        let residual = match self.req("finance.residual")? {
            "proportional" => ResidualPolicy::Proportional,
            "zero" => ResidualPolicy::Zero,
            v => {
                return Err(Self::invalid(
                    "finance.residual",
                    format!("`{v}` (proportional|zero)"),
                ))
            }
        };
        Ok(LedgerOptions {
            om_rate: self.parsed("battery.om_rate")?,
            profit_tax: 0.0,
            depreciation,
            residual,
        })
    }

    pub fn converters_mw(&self) -> Result<Vec<u32>, ConfigError> {
        let v: Vec<u32> = parse_list("sweep.converters_mw", self.req("sweep.converters_mw")?)?;
        if v.is_empty() || v.contains(&0) {
            return Err(Self::invalid(
                "sweep.converters_mw",
                "need one or more positive sizes",
            ));
        }
        Ok(v)
    }

    pub fn battery_costs(&self) -> Result<Vec<f64>, ConfigError> {
        let v: Vec<f64> = parse_list("sweep.battery_costs", self.req("sweep.battery_costs")?)?;
        if v.is_empty() || v.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Self::invalid(
                "sweep.battery_costs",
                "need one or more non-negative costs",
            ));
        }
        Ok(v)
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        Ok(GridSpec {
            converters_mw: self.converters_mw()?,
            battery_costs: self.battery_costs()?,
            converter_unit_cost: self.converter()?.unit_cost,
            battery: self.battery()?,
            horizon: self.horizon()?,
            ledger: self.ledger()?,
            constants: self.market()?,
            rate_variant: self.rate_variant()?,
        })
    }

    pub fn responses(&self) -> Result<Vec<Indicator>, ConfigError> {
        parse_list("regress.responses", self.req("regress.responses")?)
    }

    pub fn models(&self) -> Result<Vec<ModelLevel>, ConfigError> {
        parse_list("regress.models", self.req("regress.models")?)
    }

    pub fn pooled(&self) -> Result<bool, ConfigError> {
        self.parsed("regress.pooled")
    }

    /// Battery cost whose cells feed the per-country summary tables.
    pub fn report_battery_cost(&self) -> Result<f64, ConfigError> {
        self.parsed("report.battery_cost")
    }

    /// Worker threads; 0 lets the runtime decide.
    pub fn threads(&self) -> Result<usize, ConfigError> {
        self.parsed("run.threads")
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.parsed("run.seed")
    }
}
