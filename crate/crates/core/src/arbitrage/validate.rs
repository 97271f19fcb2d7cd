//! Independent feasibility check of a schedule against the trading model.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::TradeSchedule;
use super::model::{step_state_transition, DegradationMode, ModelInstance};

/// Absolute tolerance on MWh and € quantities, scaled by magnitude.
const TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    ExclusiveOperation,
    ChargeLimit,
    DischargeLimit,
    ChargeHeadroom,
    DischargeAvailability,
    LevelBalance,
    CapacityFade,
    StateTransition,
    CycleCount,
    Domain,
    LevelWithinCapacity,
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1-based period.
    pub period: usize,
    pub kind: ConstraintKind,
    /// Size of the violation in the constraint's own units.
    pub amount: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "period {}: {} violated by {:.3e}",
            self.period, self.kind, self.amount
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidationError {
    #[error("schedule has {schedule} periods but the instance has {instance}")]
    DimensionMismatch { schedule: usize, instance: usize },
}

fn tol(scale: f64) -> f64 {
    TOL * scale.abs().max(1.0)
}

/// Lists every violated constraint; an empty list means the schedule is feasible.
pub fn validate_schedule(
    instance: &ModelInstance,
    schedule: &TradeSchedule,
) -> Result<Vec<Violation>, ValidationError> {
    if schedule.len() != instance.horizon() {
        return Err(ValidationError::DimensionMismatch {
            schedule: schedule.len(),
            instance: instance.horizon(),
        });
    }
    let eta = 1.0 - instance.battery.one_way_loss;
    let psi = instance.converter.power;
    let fade = instance.battery.per_cycle_degradation;
    let mut out = Vec::new();
    let mut push = |period, kind, amount: f64| {
        out.push(Violation {
            period,
            kind,
            amount,
        })
    };

    let init = instance.initial;
    let (mut l_prev, mut k_prev, mut c_prev) = (init.level, init.capacity, init.cycles);
    let mut g_prev = init.last_op.is_charge();
    let mut a_prev = false;
    for (i, p) in schedule.periods.iter().enumerate() {
        let t = i + 1;
        let scale = k_prev.max(psi);
        if (p.price - instance.prices[i]).abs() > 0.0
            || !(p.purchase.is_finite()
                && p.sale.is_finite()
                && p.level.is_finite()
                && p.capacity.is_finite())
        {
            push(t, ConstraintKind::Domain, f64::NAN);
        }
        for v in [p.purchase, p.sale, p.level, p.capacity] {
            if v < -tol(scale) {
                push(t, ConstraintKind::Domain, -v);
            }
        }
        if p.alpha && p.beta {
            push(t, ConstraintKind::ExclusiveOperation, 1.0);
        }
        let p_cap = if p.alpha { psi } else { 0.0 };
        if p.purchase > p_cap + tol(psi) {
            push(t, ConstraintKind::ChargeLimit, p.purchase - p_cap);
        }
        let s_cap = if p.beta { psi } else { 0.0 };
        if p.sale > s_cap + tol(psi) {
            push(t, ConstraintKind::DischargeLimit, p.sale - s_cap);
        }
        let headroom = k_prev - l_prev;
        if eta * p.purchase > headroom + tol(scale) {
            push(
                t,
                ConstraintKind::ChargeHeadroom,
                eta * p.purchase - headroom,
            );
        }
        if p.sale / eta > l_prev + tol(scale) {
            push(
                t,
                ConstraintKind::DischargeAvailability,
                p.sale / eta - l_prev,
            );
        }
        let level = l_prev + eta * p.purchase - p.sale / eta;
        if (p.level - level).abs() > tol(scale) {
            push(t, ConstraintKind::LevelBalance, (p.level - level).abs());
        }
        match step_state_transition(g_prev, p.alpha, p.beta) {
            Ok((g, d)) => {
                if g != p.gamma || d != p.delta {
                    push(t, ConstraintKind::StateTransition, 1.0);
                }
            }
            Err(_) => push(t, ConstraintKind::StateTransition, 1.0),
        }
        if p.cycles != c_prev + p.delta as u64 {
            push(
                t,
                ConstraintKind::CycleCount,
                p.cycles.abs_diff(c_prev + p.delta as u64) as f64,
            );
        }
        let k = match instance.degradation {
            DegradationMode::PerCycle => k_prev - fade * p.delta as u8 as f64,
            DegradationMode::PerChargePeriod => k_prev - fade * a_prev as u8 as f64,
        };
        if (p.capacity - k).abs() > tol(scale) {
            push(t, ConstraintKind::CapacityFade, (p.capacity - k).abs());
        }
        if p.level > p.capacity + tol(scale) {
            push(t, ConstraintKind::LevelWithinCapacity, p.level - p.capacity);
        }
        l_prev = p.level;
        k_prev = p.capacity;
        c_prev = p.cycles;
        g_prev = p.gamma;
        a_prev = p.alpha;
    }
    Ok(out)
}
