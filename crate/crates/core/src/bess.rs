//! Battery and converter parameters: efficiency, capacity fade and equipment cost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BessError {
    #[error("round-trip efficiency must lie in (0, 1], got {0}")]
    RoundTrip(f64),
    #[error("battery life must be at least one cycle")]
    ZeroLife,
    #[error("capacity fade fraction must lie in [0, 1), got {0}")]
    Fade(f64),
    #[error("invalid battery parameter: {0}")]
    Battery(String),
    #[error("converter power must be positive, got {0} MW")]
    ConverterPower(f64),
    #[error("invalid battery state: {0}")]
    State(String),
}

/// How a round-trip efficiency is split into the one-way conversion loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EfficiencyMode {
    /// Loss applied on both legs so that charge followed by discharge retains
    /// exactly the round-trip efficiency: `(1 - loss)^2 = eta`.
    #[default]
    SplitSymmetric,
    /// The loss is read directly as `1 - eta` and applied on each leg.
    Literal,
}

/// One-way conversion loss for a given round-trip efficiency.
pub fn one_way_loss_from_round_trip(
    round_trip: f64,
    mode: EfficiencyMode,
) -> Result<f64, BessError> {
    if !(round_trip > 0.0 && round_trip <= 1.0) {
        return Err(BessError::RoundTrip(round_trip));
    }
    Ok(match mode {
        EfficiencyMode::SplitSymmetric => 1.0 - round_trip.sqrt(),
        EfficiencyMode::Literal => 1.0 - round_trip,
    })
}

/// Capacity lost per completed cycle, in MWh.
pub fn degradation_per_cycle(
    initial_capacity: f64,
    life_cycles: u32,
    total_fade_fraction: f64,
) -> Result<f64, BessError> {
    if life_cycles == 0 {
        return Err(BessError::ZeroLife);
    }
    if !(0.0..1.0).contains(&total_fade_fraction) {
        return Err(BessError::Fade(total_fade_fraction));
    }
    Ok(total_fade_fraction * initial_capacity / life_cycles as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    /// Nameplate energy capacity, MWh.
    pub initial_capacity: f64,
    /// Capacity lost per cycle, MWh.
    pub per_cycle_degradation: f64,
    /// Fraction of energy lost on each conversion leg.
    pub one_way_loss: f64,
    /// Operation stops once capacity falls below this fraction of nameplate.
    pub eol_capacity_fraction: f64,
    /// €/MWh of nameplate capacity.
    pub unit_cost: f64,
    /// Yearly O&M as a fraction of equipment value.
    pub om_rate: f64,
}

impl BatterySpec {
    pub fn new(
        initial_capacity: f64,
        per_cycle_degradation: f64,
        one_way_loss: f64,
        eol_capacity_fraction: f64,
        unit_cost: f64,
        om_rate: f64,
    ) -> Result<Self, BessError> {
        let spec = Self {
            initial_capacity,
            per_cycle_degradation,
            one_way_loss,
            eol_capacity_fraction,
            unit_cost,
            om_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a spec from datasheet figures (life in cycles, total fade over
    /// that life, round-trip efficiency).
    #[allow(clippy::too_many_arguments)]
    pub fn from_datasheet(
        initial_capacity: f64,
        life_cycles: u32,
        total_fade_fraction: f64,
        round_trip: f64,
        efficiency: EfficiencyMode,
        eol_capacity_fraction: f64,
        unit_cost: f64,
        om_rate: f64,
    ) -> Result<Self, BessError> {
        let phi = degradation_per_cycle(initial_capacity, life_cycles, total_fade_fraction)?;
        let loss = one_way_loss_from_round_trip(round_trip, efficiency)?;
        Self::new(
            initial_capacity,
            phi,
            loss,
            eol_capacity_fraction,
            unit_cost,
            om_rate,
        )
    }

    pub fn validate(&self) -> Result<(), BessError> {
        let bad = |m: &str| Err(BessError::Battery(m.to_string()));
        if !(self.initial_capacity > 0.0 && self.initial_capacity.is_finite()) {
            return bad("initial capacity must be positive");
        }
        if !(self.per_cycle_degradation >= 0.0
            && self.per_cycle_degradation < self.initial_capacity)
        {
            return bad("per-cycle degradation must lie in [0, initial capacity)");
        }
        if !(0.0..1.0).contains(&self.one_way_loss) {
            return bad("one-way loss must lie in [0, 1)");
        }
        if !(self.eol_capacity_fraction > 0.0 && self.eol_capacity_fraction < 1.0) {
            return bad("end-of-life fraction must lie in (0, 1)");
        }
        if !(self.unit_cost >= 0.0 && self.om_rate >= 0.0) {
            return bad("costs must be non-negative");
        }
        Ok(())
    }

    /// Charge-leg efficiency `1 - loss`.
    pub fn efficiency(&self) -> f64 {
        1.0 - self.one_way_loss
    }

    pub fn eol_capacity(&self) -> f64 {
        self.eol_capacity_fraction * self.initial_capacity
    }

    /// Capacity left after `n` completed cycles under linear fade.
    pub fn capacity_after_cycles(&self, n: u64) -> f64 {
        self.initial_capacity - n as f64 * self.per_cycle_degradation
    }

    pub fn capex(&self) -> f64 {
        self.initial_capacity * self.unit_cost
    }

    pub fn with_unit_cost(mut self, unit_cost: f64) -> Self {
        self.unit_cost = unit_cost;
        self
    }

    pub fn fresh_state(&self) -> BatteryState {
        BatteryState {
            capacity: self.initial_capacity,
            level: 0.0,
            cycles: 0,
            last_op: LastOp::Discharge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConverterSpec {
    /// Power rating, MW (= MWh per hourly period).
    pub power: f64,
    /// €/MW.
    pub unit_cost: f64,
}

impl ConverterSpec {
    pub fn new(power: f64, unit_cost: f64) -> Result<Self, BessError> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(BessError::ConverterPower(power));
        }
        if unit_cost.is_nan() || unit_cost < 0.0 {
            return Err(BessError::Battery(
                "converter cost must be non-negative".into(),
            ));
        }
        Ok(Self { power, unit_cost })
    }

    pub fn capex(&self) -> f64 {
        self.power * self.unit_cost
    }
}

/// Total equipment cost, €.
pub fn capex(battery: &BatterySpec, converter: &ConverterSpec) -> f64 {
    battery.capex() + converter.capex()
}

/// Last operation performed before a period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LastOp {
    Charge,
    Discharge,
}

impl LastOp {
    pub fn is_charge(self) -> bool {
        matches!(self, LastOp::Charge)
    }

    pub fn from_flag(gamma: bool) -> Self {
        if gamma {
            LastOp::Charge
        } else {
            LastOp::Discharge
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    /// Remaining capacity, MWh.
    pub capacity: f64,
    /// Stored energy, MWh.
    pub level: f64,
    /// Completed cycles.
    pub cycles: u64,
    pub last_op: LastOp,
}

impl BatteryState {
    pub fn validate(&self, battery: &BatterySpec) -> Result<(), BessError> {
        let tol = 1e-9 * battery.initial_capacity.max(1.0);
        if self.level.is_nan() || self.level < 0.0 {
            return Err(BessError::State(format!(
                "level {} is negative",
                self.level
            )));
        }
        if self.level > self.capacity + tol {
            return Err(BessError::State(format!(
                "level {} exceeds capacity {}",
                self.level, self.capacity
            )));
        }
        if self.capacity > battery.initial_capacity + tol {
            return Err(BessError::State(format!(
                "capacity {} exceeds nameplate {}",
                self.capacity, battery.initial_capacity
            )));
        }
        Ok(())
    }

    pub fn capacity_fraction(&self, battery: &BatterySpec) -> f64 {
        self.capacity / battery.initial_capacity
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn loss_from_round_trip() {
        let m = EfficiencyMode::SplitSymmetric;
        assert_eq!(one_way_loss_from_round_trip(1.0, m).unwrap(), 0.0);
        assert_abs_diff_eq!(
            one_way_loss_from_round_trip(0.25, m).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        // 1 - sqrt(0.92) = 0.0408337...
        assert_abs_diff_eq!(
            one_way_loss_from_round_trip(0.92, m).unwrap(),
            0.040834,
            epsilon = 5e-7
        );
        assert_abs_diff_eq!(
            one_way_loss_from_round_trip(0.92, EfficiencyMode::Literal).unwrap(),
            0.08,
            epsilon = 1e-15
        );
        assert!(one_way_loss_from_round_trip(0.0, m).is_err());
        assert!(one_way_loss_from_round_trip(1.01, m).is_err());
    }

    #[test]
    fn split_loss_reproduces_round_trip() {
        for i in 1..=100 {
            let eta = i as f64 / 100.0;
            let loss = one_way_loss_from_round_trip(eta, EfficiencyMode::SplitSymmetric).unwrap();
            assert_abs_diff_eq!((1.0 - loss) * (1.0 - loss), eta, epsilon = 1e-12);
            if i > 1 {
                let prev = one_way_loss_from_round_trip(eta - 0.01, EfficiencyMode::SplitSymmetric)
                    .unwrap();
                assert!(loss < prev);
            }
        }
    }

    #[test]
    fn fade_per_cycle() {
        assert_abs_diff_eq!(
            degradation_per_cycle(10.0, 5000, 0.2).unwrap(),
            0.0004,
            epsilon = 1e-15
        );
        assert_eq!(degradation_per_cycle(10.0, 5000, 0.0).unwrap(), 0.0);
        assert_eq!(degradation_per_cycle(1.0, 1, 0.5).unwrap(), 0.5);
        assert_eq!(
            degradation_per_cycle(10.0, 0, 0.2),
            Err(BessError::ZeroLife)
        );
    }

    #[test]
    fn capacity_reaches_fade_at_end_of_life() {
        let b = BatterySpec::from_datasheet(
            10.0,
            5000,
            0.2,
            0.92,
            EfficiencyMode::SplitSymmetric,
            0.8,
            1e5,
            0.01,
        )
        .unwrap();
        assert_abs_diff_eq!(b.capacity_after_cycles(5000), 8.0, epsilon = 1e-9);
        let mut prev = f64::INFINITY;
        for n in (0..=5000).step_by(250) {
            let k = b.capacity_after_cycles(n);
            assert!(k <= prev);
            prev = k;
        }
    }

    #[test]
    fn equipment_cost() {
        let b = BatterySpec::new(10.0, 0.0004, 0.04, 0.8, 100_000.0, 0.01).unwrap();
        let c = ConverterSpec::new(4.0, 30_000.0).unwrap();
        assert_abs_diff_eq!(capex(&b, &c), 1_120_000.0, epsilon = 1e-6);
        let b = b.with_unit_cost(50_000.0);
        let c = ConverterSpec::new(10.0, 30_000.0).unwrap();
        assert_abs_diff_eq!(capex(&b, &c), 800_000.0, epsilon = 1e-6);
        assert!(ConverterSpec::new(0.0, 30_000.0).is_err());
    }

    #[test]
    fn rejects_bad_battery() {
        assert!(BatterySpec::new(0.0, 0.0, 0.0, 0.8, 1.0, 0.01).is_err());
        assert!(BatterySpec::new(10.0, 10.0, 0.0, 0.8, 1.0, 0.01).is_err());
        assert!(BatterySpec::new(10.0, 0.0, 1.0, 0.8, 1.0, 0.01).is_err());
        assert!(BatterySpec::new(10.0, 0.0, 0.0, 1.0, 1.0, 0.01).is_err());
    }
}
