//! Trading model instance, operating-state transitions and schedule types.

use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bess::{BatterySpec, BatteryState, ConverterSpec, LastOp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("planning horizon is empty")]
    EmptyHorizon,
    #[error("one-way loss of 1 leaves nothing to store")]
    TotalLoss,
    #[error("price at period {0} is not finite")]
    BadPrice(usize),
    #[error("invalid initial state: {0}")]
    InitialState(String),
    #[error("charge and discharge requested in the same period")]
    SimultaneousOperation,
    #[error("{moves} moves for a {periods}-period horizon")]
    MoveCount { moves: usize, periods: usize },
    #[error("move at period {period} is infeasible: {reason}")]
    InfeasibleMove { period: usize, reason: &'static str },
}

/// Which event consumes battery capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DegradationMode {
    /// Capacity drops by the per-cycle fade each time a discharge follows a
    /// charge phase.
    #[default]
    PerCycle,
    /// Capacity drops by the per-cycle fade in the period after every charging
    /// period.
    PerChargePeriod,
}

impl std::str::FromStr for DegradationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cycle" | "per-cycle" => Ok(Self::PerCycle),
            "per-charge" | "literal" => Ok(Self::PerChargePeriod),
            other => Err(format!(
                "unknown degradation mode `{other}` (cycle|per-charge)"
            )),
        }
    }
}

/// Prices plus the physical system and starting state for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInstance {
    pub(crate) prices: Vec<f64>,
    pub(crate) initial: BatteryState,
    pub(crate) battery: BatterySpec,
    pub(crate) converter: ConverterSpec,
    pub(crate) degradation: DegradationMode,
}

/// Size of the equivalent mixed-integer formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDimensions {
    pub periods: usize,
    pub binary_variables: usize,
    pub continuous_variables: usize,
    pub integer_variables: usize,
    pub constraints: usize,
}

pub fn build_model(
    prices: &[f64],
    initial: BatteryState,
    battery: BatterySpec,
    converter: ConverterSpec,
    degradation: DegradationMode,
) -> Result<ModelInstance, ModelError> {
    if prices.is_empty() {
        return Err(ModelError::EmptyHorizon);
    }
    if battery.one_way_loss >= 1.0 {
        return Err(ModelError::TotalLoss);
    }
    if let Some(t) = prices.iter().position(|p| !p.is_finite()) {
        return Err(ModelError::BadPrice(t + 1));
    }
    initial
        .validate(&battery)
        .map_err(|e| ModelError::InitialState(e.to_string()))?;
    if initial.capacity < 0.0 {
        return Err(ModelError::InitialState("negative capacity".into()));
    }
    Ok(ModelInstance {
        prices: prices.to_vec(),
        initial,
        battery,
        converter,
        degradation,
    })
}

impl ModelInstance {
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn horizon(&self) -> usize {
        self.prices.len()
    }

    pub fn initial(&self) -> &BatteryState {
        &self.initial
    }

    pub fn battery(&self) -> &BatterySpec {
        &self.battery
    }

    pub fn converter(&self) -> &ConverterSpec {
        &self.converter
    }

    pub fn degradation(&self) -> DegradationMode {
        self.degradation
    }

    /// Copy with another converter rating.
    pub fn with_converter_power(&self, power: f64) -> Self {
        let mut m = self.clone();
        m.converter.power = power;
        m
    }

    pub fn with_initial(&self, initial: BatteryState) -> Self {
        let mut m = self.clone();
        m.initial = initial;
        m
    }

    pub fn with_loss(&self, loss: f64) -> Self {
        let mut m = self.clone();
        m.battery.one_way_loss = loss;
        m
    }

    /// Variable and constraint counts of the mixed-integer formulation:
    /// four binaries per period (charge, discharge, last-operation, cycle
    /// end), five continuous (purchase, sale, level, capacity, and the
    /// cumulative cycle counter, kept integer), and the per-period balance,
    /// bound and transition rows.
    pub fn dimensions(&self) -> ModelDimensions {
        let t = self.horizon();
        // headroom, availability, two converter bounds, exclusivity, balance,
        // fade: 7 per period; last-op definitions: 2 per period plus 2 per
        // non-initial period; cycle detection and counting: 1 per
        // non-initial period each; two initial conditions.
        let constraints = 7 * t + 2 * t + 2 * (t - 1) + 2 * (t - 1) + 2;
        ModelDimensions {
            periods: t,
            binary_variables: 4 * t,
            continuous_variables: 4 * t,
            integer_variables: t,
            constraints,
        }
    }
}

/// Next last-operation flag and cycle-completion flag for one period.
///
/// | prev | charge | discharge | next |
/// |------|--------|-----------|------|
/// | 0    | 0      | 0         | 0    |
/// | 0    | 1      | 0         | 1    |
/// | 0    | 0      | 1         | 0    |
/// | 1    | 0      | 0         | 1    |
/// | 1    | 1      | 0         | 1    |
/// | 1    | 0      | 1         | 0    |
///
/// A cycle completes when the flag falls from 1 to 0.
pub fn step_state_transition(
    gamma_prev: bool,
    charge: bool,
    discharge: bool,
) -> Result<(bool, bool), ModelError> {
    let gamma = match (charge, discharge) {
        (true, true) => return Err(ModelError::SimultaneousOperation),
        (true, false) => true,
        (false, true) => false,
        (false, false) => gamma_prev,
    };
    Ok((gamma, gamma_prev && !gamma))
}

/// One period's decision, in MWh traded at the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Move {
    Idle,
    Charge(f64),
    Discharge(f64),
}

/// Plays `moves` forward from the instance's initial state.
pub fn simulate_moves(
    instance: &ModelInstance,
    moves: &[Move],
) -> Result<TradeSchedule, ModelError> {
    if moves.len() != instance.horizon() {
        return Err(ModelError::MoveCount {
            moves: moves.len(),
            periods: instance.horizon(),
        });
    }
    const EPS: f64 = 1e-9;
    let eta = instance.battery.efficiency();
    let psi = instance.converter.power;
    let fade = instance.battery.per_cycle_degradation;
    let init = instance.initial;
    let (mut level, mut capacity, mut cycles) = (init.level, init.capacity, init.cycles);
    let mut gamma = init.last_op.is_charge();
    let mut charged_before = false;
    let mut periods = Vec::with_capacity(moves.len());
    for (i, (&mv, &price)) in moves.iter().zip(&instance.prices).enumerate() {
        let period = i + 1;
        let bad = |reason| ModelError::InfeasibleMove { period, reason };
        let (alpha, beta, purchase, sale) = match mv {
            Move::Idle => (false, false, 0.0, 0.0),
            Move::Charge(p) => (true, false, p, 0.0),
            Move::Discharge(s) => (false, true, 0.0, s),
        };
        if !(purchase >= 0.0 && sale >= 0.0 && purchase.is_finite() && sale.is_finite()) {
            return Err(bad("negative or non-finite amount"));
        }
        if purchase.max(sale) > psi + EPS {
            return Err(bad("exceeds converter power"));
        }
        if eta * purchase > capacity - level + EPS {
            return Err(bad("exceeds free capacity"));
        }
        if sale / eta > level + EPS {
            return Err(bad("exceeds stored energy"));
        }
        let (g, delta) = step_state_transition(gamma, alpha, beta)?;
        let decrement = match instance.degradation {
            DegradationMode::PerCycle => delta,
            DegradationMode::PerChargePeriod => charged_before,
        };
        level = (level + eta * purchase - sale / eta).max(0.0);
        capacity -= fade * decrement as u8 as f64;
        if level > capacity + EPS {
            return Err(bad("stored energy above faded capacity"));
        }
        cycles += delta as u64;
        gamma = g;
        charged_before = alpha;
        periods.push(Period {
            price,
            alpha,
            beta,
            gamma,
            delta,
            purchase,
            sale,
            level,
            capacity,
            cycles,
        });
    }
    Ok(TradeSchedule {
        periods,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub price: f64,
    pub alpha: bool,
    pub beta: bool,
    pub gamma: bool,
    pub delta: bool,
    /// Energy bought from the grid, MWh.
    pub purchase: f64,
    /// Energy sold to the grid, MWh.
    pub sale: f64,
    /// Stored energy at period end, MWh.
    pub level: f64,
    /// Capacity at period end, MWh.
    pub capacity: f64,
    /// Cumulative completed cycles at period end.
    pub cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeSchedule {
    pub periods: Vec<Period>,
    pub warnings: Vec<String>,
}

/// Buy / sell / idle hour counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Activity {
    pub buy_hours: usize,
    pub sell_hours: usize,
    pub idle_hours: usize,
}

impl Activity {
    pub fn total(&self) -> usize {
        self.buy_hours + self.sell_hours + self.idle_hours
    }
}

impl TradeSchedule {
    pub fn len(&self) -> usize {
        self.periods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.periods.is_empty()
    }

    /// Market cash flow `sum(price * (sale - purchase))`, €.
    pub fn objective(&self) -> f64 {
        self.periods
            .iter()
            .map(|p| p.price * (p.sale - p.purchase))
            .sum()
    }

    pub fn activity(&self) -> Activity {
        let mut a = Activity::default();
        for p in &self.periods {
            if p.alpha && p.purchase > 0.0 {
                a.buy_hours += 1;
            } else if p.beta && p.sale > 0.0 {
                a.sell_hours += 1;
            } else {
                a.idle_hours += 1;
            }
        }
        a
    }

    /// Number of charge-to-discharge transitions, counted from the operation
    /// flags alone.
    pub fn counted_cycles(&self, gamma0: bool) -> u64 {
        let mut last_charge = gamma0;
        let mut n = 0;
        for p in &self.periods {
            if p.alpha {
                last_charge = true;
            } else if p.beta {
                if last_charge {
                    n += 1;
                }
                last_charge = false;
            }
        }
        n
    }

    /// State after the final period. Under per-charge-period fade, a charge in
    /// the last period still owes one decrement; it is applied here, clamped so
    /// capacity stays at or above the stored level.
    pub fn terminal_state(&mut self, instance: &ModelInstance) -> BatteryState {
        let Some(last) = self.periods.last().copied() else {
            return instance.initial;
        };
        let mut capacity = last.capacity;
        if instance.degradation == DegradationMode::PerChargePeriod && last.alpha {
            let target = capacity - instance.battery.per_cycle_degradation;
            if target < last.level {
                self.warnings.push(format!(
                    "fade after final period clamped: capacity {:.6} held at level {:.6}",
                    target, last.level
                ));
            }
            capacity = target.max(last.level);
        }
        BatteryState {
            capacity,
            level: last.level,
            cycles: last.cycles,
            last_op: LastOp::from_flag(last.gamma),
        }
    }

    /// Writes `t,price,alpha,beta,gamma,delta,P_mwh,S_mwh,L_mwh,K_mwh,C`, with
    /// `t` starting at `first_t`.
    pub fn write_csv<W: Write>(&self, mut w: W, first_t: usize) -> std::io::Result<()> {
        writeln!(
            w,
            "t,price,alpha,beta,gamma,delta,P_mwh,S_mwh,L_mwh,K_mwh,C"
        )?;
        for (i, p) in self.periods.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{}",
                first_t + i,
                p.price,
                p.alpha as u8,
                p.beta as u8,
                p.gamma as u8,
                p.delta as u8,
                p.purchase,
                p.sale,
                p.level,
                p.capacity,
                p.cycles
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative optimality gap accepted, `(bound - objective) / max(1, |bound|)`.
    pub mip_gap: f64,
    /// Maximum number of search states (value-function evaluations).
    pub node_budget: u64,
    pub time_budget: Duration,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            mip_gap: 1e-6,
            node_budget: 50_000_000,
            time_budget: Duration::from_secs(3600),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    GapLimit,
    TimeLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::GapLimit => "gap-limit",
            SolveStatus::TimeLimit => "time-limit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub status: SolveStatus,
    /// Search states evaluated.
    pub nodes: u64,
    /// Relaxation refinements (cycle-cap increases).
    pub iterations: u64,
    pub wall_time_s: f64,
}

pub(crate) fn relative_gap(bound: f64, objective: f64) -> f64 {
    ((bound - objective) / bound.abs().max(1.0)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_table() {
        let rows = [
            ((false, false, false), (false, false)),
            ((false, true, false), (true, false)),
            ((false, false, true), (false, false)),
            ((true, false, false), (true, false)),
            ((true, true, false), (true, false)),
            ((true, false, true), (false, true)),
        ];
        for ((g, a, b), want) in rows {
            assert_eq!(
                step_state_transition(g, a, b).unwrap(),
                want,
                "row {g} {a} {b}"
            );
        }
        assert_eq!(
            step_state_transition(false, true, true),
            Err(ModelError::SimultaneousOperation)
        );
    }

    fn battery() -> BatterySpec {
        BatterySpec::new(10.0, 0.0004, 0.04, 0.8, 1e5, 0.01).unwrap()
    }

    #[test]
    fn builds_fresh_instance() {
        let b = battery();
        let c = ConverterSpec::new(1.0, 3e4).unwrap();
        let m = build_model(
            &[50.0; 24],
            b.fresh_state(),
            b,
            c,
            DegradationMode::PerCycle,
        )
        .unwrap();
        assert_eq!(m.horizon(), 24);
        assert_eq!(m.initial().cycles, 0);
        assert_eq!(m.initial().last_op, LastOp::Discharge);
    }

    #[test]
    fn rejects_bad_instances() {
        let b = battery();
        let c = ConverterSpec::new(1.0, 3e4).unwrap();
        let mut s = b.fresh_state();
        s.capacity = 5.0;
        s.level = 6.0;
        assert!(matches!(
            build_model(&[1.0], s, b, c, DegradationMode::PerCycle),
            Err(ModelError::InitialState(_))
        ));
        assert_eq!(
            build_model(&[], b.fresh_state(), b, c, DegradationMode::PerCycle),
            Err(ModelError::EmptyHorizon)
        );
        let mut lossy = b;
        lossy.one_way_loss = 1.0;
        assert_eq!(
            build_model(&[1.0], b.fresh_state(), lossy, c, DegradationMode::PerCycle),
            Err(ModelError::TotalLoss)
        );
    }

    #[test]
    fn dimensions_scale_linearly() {
        let b = battery();
        let c = ConverterSpec::new(1.0, 3e4).unwrap();
        let d = |t: usize| {
            build_model(
                &vec![1.0; t],
                b.fresh_state(),
                b,
                c,
                DegradationMode::PerCycle,
            )
            .unwrap()
            .dimensions()
        };
        let (a, y) = (d(24), d(8760));
        assert_eq!(y.binary_variables, 35_040);
        // same order of magnitude as a year-long formulation (~1e5 rows)
        assert!(
            y.constraints > 50_000 && y.constraints < 200_000,
            "{}",
            y.constraints
        );
        let per = (y.constraints - a.constraints) as f64 / (8760 - 24) as f64;
        assert_eq!(per, 13.0);
    }

    #[test]
    fn replayed_solver_moves_reproduce_schedule() {
        let m = build_model(
            &[10.0, 40.0, 5.0, 60.0, 30.0],
            battery().fresh_state(),
            battery(),
            ConverterSpec::new(3.0, 1.0).unwrap(),
            DegradationMode::PerCycle,
        )
        .unwrap();
        let (s, _) = crate::arbitrage::solve(&m, &SolveOptions::default()).unwrap();
        let moves: Vec<Move> = s
            .periods
            .iter()
            .map(|p| {
                if p.alpha {
                    Move::Charge(p.purchase)
                } else if p.beta {
                    Move::Discharge(p.sale)
                } else {
                    Move::Idle
                }
            })
            .collect();
        let r = simulate_moves(&m, &moves).unwrap();
        for (a, b) in r.periods.iter().zip(&s.periods) {
            assert!(
                (a.level - b.level).abs() < 1e-9
                    && a.cycles == b.cycles
                    && (a.capacity - b.capacity).abs() < 1e-12
            );
        }
        let mut bad = moves.clone();
        bad[0] = Move::Discharge(1.0);
        assert!(matches!(
            simulate_moves(&m, &bad),
            Err(ModelError::InfeasibleMove { period: 1, .. })
        ));
        assert!(matches!(
            simulate_moves(&m, &moves[1..]),
            Err(ModelError::MoveCount { .. })
        ));
    }
}
