//! Year-level scheduling and multi-year operation until retirement.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{
    build_model, Activity, DegradationMode, ModelError, SolveOptions, SolveReport, TradeSchedule,
};
use super::solver::{solve, SolveError};
use crate::bess::{BatterySpec, BatteryState, ConverterSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Monolithic,
    /// Solve `window + overlap` hours, keep the first `window`.
    Rolling {
        window: usize,
        overlap: usize,
    },
}

impl Default for Strategy {
    fn default() -> Self {
        Strategy::Rolling {
            window: 168,
            overlap: 0,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Monolithic => f.write_str("monolithic"),
            Strategy::Rolling { window, overlap } => write!(f, "rolling:{window}:{overlap}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid strategy `{s}` (monolithic | rolling:<window>:<overlap>)");
        if s == "monolithic" {
            return Ok(Strategy::Monolithic);
        }
        let mut parts = s.split(':');
        if parts.next() != Some("rolling") {
            return Err(bad());
        }
        let window: usize = parts.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let overlap: usize = match parts.next() {
            Some(v) => v.parse().map_err(|_| bad())?,
            None => 0,
        };
        if window == 0 || parts.next().is_some() {
            return Err(bad());
        }
        Ok(Strategy::Rolling { window, overlap })
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum HorizonError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("max_years must be at least 1")]
    NoYears,
}

/// One solved year.
#[derive(Debug, Clone, PartialEq)]
pub struct YearSolution {
    pub schedule: TradeSchedule,
    pub carry_out: BatteryState,
    /// Market cash flow of the year, €.
    pub cash_flow: f64,
    pub reports: Vec<SolveReport>,
}

impl YearSolution {
    /// Largest relative gap over the year's solves.
    pub fn worst_gap(&self) -> f64 {
        self.reports.iter().map(|r| r.gap).fold(0.0, f64::max)
    }
}

/// Schedules one price year from `carry_in`.
pub fn solve_year(
    prices: &[f64],
    carry_in: BatteryState,
    battery: &BatterySpec,
    converter: &ConverterSpec,
    strategy: Strategy,
    degradation: DegradationMode,
    opts: &SolveOptions,
) -> Result<YearSolution, HorizonError> {
    let (window, overlap) = match strategy {
        Strategy::Monolithic => (prices.len(), 0),
        Strategy::Rolling { window, overlap } => (window, overlap),
    };
    let mut state = carry_in;
    let mut periods = Vec::with_capacity(prices.len());
    let mut warnings = Vec::new();
    let mut reports = Vec::new();
    let mut start = 0;
    while start < prices.len() {
        let keep = window.min(prices.len() - start);
        let end = (start + keep + overlap).min(prices.len());
        let inst = build_model(
            &prices[start..end],
            state,
            *battery,
            *converter,
            degradation,
        )?;
        let (sched, report) = solve(&inst, opts)?;
        reports.push(report);
        let mut kept = TradeSchedule {
            periods: sched.periods[..keep].to_vec(),
            warnings: sched.warnings,
        };
        state = kept.terminal_state(&inst);
        periods.extend(kept.periods);
        warnings.extend(kept.warnings);
        start += keep;
    }
    let schedule = TradeSchedule { periods, warnings };
    let cash_flow = schedule.objective();
    Ok(YearSolution {
        schedule,
        carry_out: state,
        cash_flow,
        reports,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Capacity at the start of a year was below the retirement threshold.
    EndOfLife,
    /// The next year's cash flow would not cover O&M.
    NegativeCashFlow,
    MaxYears,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::EndOfLife => "end-of-life",
            Termination::NegativeCashFlow => "negative-cash-flow",
            Termination::MaxYears => "max-years",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonOptions {
    pub strategy: Strategy,
    pub degradation: DegradationMode,
    pub solve: SolveOptions,
    pub max_years: usize,
    /// Annual fixed cost a year's market cash flow must cover to keep operating, €.
    pub om_floor: f64,
    /// Starting state; a fresh battery when `None`.
    pub initial: Option<BatteryState>,
}

impl Default for HorizonOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::default(),
            degradation: DegradationMode::default(),
            solve: SolveOptions::default(),
            max_years: 50,
            om_floor: 0.0,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearResult {
    /// 1-based operating year.
    pub year: usize,
    pub cash_flow: f64,
    pub start: BatteryState,
    pub end: BatteryState,
    pub activity: Activity,
    pub worst_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyResults {
    pub years: Vec<YearResult>,
    pub termination: Termination,
    /// Equipment is retired before the battery is exhausted, so its residual value is recovered.
    pub residual_event: bool,
    pub initial: BatteryState,
    pub eol_capacity: f64,
    pub initial_capacity: f64,
    /// Trading activity of the first solved year, kept even when that year
    /// was not operated.
    pub first_activity: Option<Activity>,
}

impl YearlyResults {
    pub fn operating_years(&self) -> usize {
        self.years.len()
    }

    pub fn cash_flows(&self) -> Vec<f64> {
        self.years.iter().map(|y| y.cash_flow).collect()
    }

    pub fn terminal_state(&self) -> BatteryState {
        self.years.last().map_or(self.initial, |y| y.end)
    }

    /// Prefix of the operation that stops at the first year unable to cover
    /// `om_floor`; used to reuse one physical run for several cost levels.
    pub fn truncated(&self, om_floor: f64) -> YearlyResults {
        match self.years.iter().position(|y| y.cash_flow - om_floor < 0.0) {
            Some(i) => YearlyResults {
                years: self.years[..i].to_vec(),
                termination: Termination::NegativeCashFlow,
                residual_event: true,
                ..self.clone()
            },
            None => self.clone(),
        }
    }
}

/// Repeats the same price year until retirement.
pub fn run_horizon(
    prices: &[f64],
    battery: &BatterySpec,
    converter: &ConverterSpec,
    opts: &HorizonOptions,
) -> Result<YearlyResults, HorizonError> {
    if opts.max_years == 0 {
        return Err(HorizonError::NoYears);
    }
    let initial = opts.initial.unwrap_or_else(|| battery.fresh_state());
    let eol = battery.eol_capacity();
    let mut state = initial;
    let mut years = Vec::new();
    let mut first_activity = None;
    let termination = loop {
        if state.capacity < eol {
            break Termination::EndOfLife;
        }
        if years.len() == opts.max_years {
            break Termination::MaxYears;
        }
        let sol = solve_year(
            prices,
            state,
            battery,
            converter,
            opts.strategy,
            opts.degradation,
            &opts.solve,
        )?;
        first_activity.get_or_insert_with(|| sol.schedule.activity());
        if sol.cash_flow - opts.om_floor < 0.0 {
            break Termination::NegativeCashFlow;
        }
        years.push(YearResult {
            year: years.len() + 1,
            cash_flow: sol.cash_flow,
            start: state,
            end: sol.carry_out,
            activity: sol.schedule.activity(),
            worst_gap: sol.worst_gap(),
        });
        state = sol.carry_out;
    };
    Ok(YearlyResults {
        years,
        termination,
        residual_event: termination != Termination::EndOfLife,
        initial,
        eol_capacity: eol,
        initial_capacity: battery.initial_capacity,
        first_activity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn battery(fade: f64) -> BatterySpec {
        BatterySpec::new(10.0, fade, 0.02, 0.2, 1e5, 0.01).unwrap()
    }

    fn conv() -> ConverterSpec {
        ConverterSpec::new(2.0, 3e4).unwrap()
    }

    fn wave(hours: usize) -> Vec<f64> {
        (0..hours)
            .map(|h| 40.0 + 25.0 * ((h % 24) as f64 / 24.0 * std::f64::consts::TAU).sin())
            .collect()
    }

    #[test]
    fn parses_strategies() {
        assert_eq!(
            "monolithic".parse::<Strategy>().unwrap(),
            Strategy::Monolithic
        );
        assert_eq!(
            "rolling:168:0".parse::<Strategy>().unwrap(),
            Strategy::Rolling {
                window: 168,
                overlap: 0
            }
        );
        assert_eq!(
            "rolling:24".parse::<Strategy>().unwrap(),
            Strategy::Rolling {
                window: 24,
                overlap: 0
            }
        );
        assert!("rolling:0:0".parse::<Strategy>().is_err());
        assert!("greedy".parse::<Strategy>().is_err());
        assert_eq!(Strategy::default().to_string(), "rolling:168:0");
    }

    #[test]
    fn constant_year_is_idle() {
        let b = battery(0.001);
        let s = b.fresh_state();
        let y = solve_year(
            &[30.0; 72],
            s,
            &b,
            &conv(),
            Strategy::default(),
            DegradationMode::PerCycle,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(y.cash_flow, 0.0);
        assert_eq!(y.carry_out, s);
    }

    #[test]
    fn full_window_matches_monolithic() {
        let b = battery(0.001);
        let p = wave(48);
        let go = |st| {
            solve_year(
                &p,
                b.fresh_state(),
                &b,
                &conv(),
                st,
                DegradationMode::PerCycle,
                &Default::default(),
            )
            .unwrap()
        };
        let a = go(Strategy::Monolithic);
        let r = go(Strategy::Rolling {
            window: 48,
            overlap: 0,
        });
        assert_eq!(a.schedule, r.schedule);
        let short = go(Strategy::Rolling {
            window: 24,
            overlap: 0,
        });
        assert!(short.cash_flow <= a.cash_flow + 1e-9);
        let lookahead = go(Strategy::Rolling {
            window: 12,
            overlap: 12,
        });
        assert!(lookahead.cash_flow <= a.cash_flow + 1e-9);
    }

    #[test]
    fn no_fade_runs_to_max_years() {
        let opts = HorizonOptions {
            max_years: 3,
            strategy: Strategy::Monolithic,
            ..Default::default()
        };
        let r = run_horizon(&wave(48), &battery(0.0), &conv(), &opts).unwrap();
        assert_eq!(r.operating_years(), 3);
        assert_eq!(r.termination, Termination::MaxYears);
        assert!(r.residual_event);
    }

    #[test]
    fn exhausted_battery_never_runs() {
        let b = battery(0.0);
        let mut s = b.fresh_state();
        s.capacity = 1.0;
        let opts = HorizonOptions {
            initial: Some(s),
            ..Default::default()
        };
        let r = run_horizon(&wave(48), &b, &conv(), &opts).unwrap();
        assert_eq!(r.operating_years(), 0);
        assert_eq!(r.termination, Termination::EndOfLife);
    }

    #[test]
    fn heavy_fade_retires_early() {
        let opts = HorizonOptions {
            max_years: 30,
            strategy: Strategy::Monolithic,
            ..Default::default()
        };
        let r = run_horizon(&wave(48), &battery(0.5), &conv(), &opts).unwrap();
        assert!(r.operating_years() < 30);
        assert_eq!(r.termination, Termination::EndOfLife);
        assert!(r.terminal_state().capacity < 2.0);
    }

    #[test]
    fn truncation_by_cost() {
        let opts = HorizonOptions {
            max_years: 30,
            strategy: Strategy::Monolithic,
            ..Default::default()
        };
        let r = run_horizon(&wave(48), &battery(0.2), &conv(), &opts).unwrap();
        let first = r.years[0].cash_flow;
        let t = r.truncated(first + 1.0);
        assert_eq!(t.operating_years(), 0);
        assert_eq!(t.termination, Termination::NegativeCashFlow);
        assert_eq!(r.truncated(0.0), r);
    }
}
