//! Exhaustive reference solver for short horizons.
//!
//! Every charge / discharge / idle pattern is enumerated; the pattern fixes all
//! binaries and the capacity path, leaving a linear program in the traded
//! amounts that is solved with a dense simplex. Independent of the main solver
//! and meant for cross-checking it.

use thiserror::Error;

use rand::Rng;

use super::model::{simulate_moves, DegradationMode, ModelInstance, Move, TradeSchedule};
use super::simplex::{LpResult, Simplex};

pub const ORACLE_MAX_HORIZON: usize = 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("horizon too long for exhaustive search: {0} periods (max {ORACLE_MAX_HORIZON})")]
    HorizonTooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Idle,
    Buy,
    Sell,
}

/// Optimal market cash flow by exhaustive search.
pub fn brute_force_oracle(instance: &ModelInstance) -> Result<f64, OracleError> {
    let t_len = instance.prices.len();
    if t_len > ORACLE_MAX_HORIZON {
        return Err(OracleError::HorizonTooLong(t_len));
    }
    let eta = 1.0 - instance.battery.one_way_loss;
    let psi = instance.converter.power;
    let fade = instance.battery.per_cycle_degradation;
    let k0 = instance.initial.capacity;
    let l0 = instance.initial.level;

    let mut lp = Simplex::default();
    let mut ops = vec![Op::Idle; t_len];
    let mut caps = vec![0.0; t_len];
    let mut active: Vec<usize> = Vec::with_capacity(t_len);
    let (mut c, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    let mut best = 0.0f64;
    let total = 3usize.pow(t_len as u32);
    for code in 0..total {
        let mut k = code;
        for op in ops.iter_mut() {
            *op = [Op::Idle, Op::Buy, Op::Sell][k % 3];
            k /= 3;
        }
        // capacity path implied by the pattern
        let mut last_buy = instance.initial.last_op.is_charge();
        let mut cap = k0;
        let mut prev_buy = false;
        let mut dead = false;
        for t in 0..t_len {
            match instance.degradation {
                DegradationMode::PerCycle => {
                    if ops[t] == Op::Sell && last_buy {
                        cap -= fade;
                    }
                }
                DegradationMode::PerChargePeriod => {
                    if prev_buy {
                        cap -= fade;
                    }
                }
            }
            match ops[t] {
                Op::Buy => last_buy = true,
                Op::Sell => last_buy = false,
                Op::Idle => {}
            }
            prev_buy = ops[t] == Op::Buy;
            if cap < 0.0 {
                dead = true;
                break;
            }
            caps[t] = cap;
        }
        if dead {
            continue;
        }
        active.clear();
        active.extend((0..t_len).filter(|&t| ops[t] != Op::Idle));
        if active.is_empty() {
            continue;
        }
        let n = active.len();
        c.clear();
        c.extend(active.iter().map(|&t| match ops[t] {
            Op::Buy => -instance.prices[t],
            _ => instance.prices[t],
        }));
        // level change per unit of each variable
        let gain = |t: usize| if ops[t] == Op::Buy { eta } else { -1.0 / eta };
        a.clear();
        b.clear();
        for t in 0..t_len {
            let level_rising = ops[t] == Op::Buy;
            let cap_dropped = t > 0 && caps[t] < caps[t - 1] || t == 0 && caps[0] < k0;
            if level_rising || cap_dropped {
                // L_t <= K_t
                for &s in &active {
                    a.push(if s <= t { gain(s) } else { 0.0 });
                }
                b.push(caps[t] - l0);
            }
            if ops[t] == Op::Sell {
                // L_t >= 0
                for &s in &active {
                    a.push(if s <= t { -gain(s) } else { 0.0 });
                }
                b.push(l0);
            }
        }
        for i in 0..n {
            for j in 0..n {
                a.push(if i == j { 1.0 } else { 0.0 });
            }
            b.push(psi);
        }
        if let LpResult::Optimal { value, .. } = lp.solve(&c, &a, &b) {
            best = best.max(value);
        }
    }
    Ok(best)
}

/// A random feasible schedule, played forward with `simulate_moves`.
/// Charges leave room for one step of fade so the walk never dead-ends.
pub fn random_schedule<R: Rng + ?Sized>(instance: &ModelInstance, rng: &mut R) -> TradeSchedule {
    let eta = instance.battery.efficiency();
    let psi = instance.converter.power;
    let fade = instance.battery.per_cycle_degradation;
    let mut moves: Vec<Move> = Vec::with_capacity(instance.prices.len());
    let (mut level, mut capacity) = (instance.initial.level, instance.initial.capacity);
    for t in 0..instance.prices.len() {
        let mut prefix = instance.clone();
        prefix.prices.truncate(t + 1);
        let shrink = 1.0 - 1e-9;
        // fade already owed for a charge in the previous period
        let owed = match (instance.degradation, moves.last()) {
            (DegradationMode::PerChargePeriod, Some(Move::Charge(_))) => fade,
            _ => 0.0,
        };
        let max_buy = (psi.min((capacity - owed - fade - level) / eta)).max(0.0) * shrink;
        let max_sell = psi.min(level * eta) * shrink;
        let pick = match rng.gen_range(0..3) {
            0 => Move::Idle,
            1 if max_buy > 0.0 => Move::Charge(max_buy * rng.gen::<f64>()),
            1 => Move::Idle,
            _ => Move::Discharge(max_sell * rng.gen::<f64>()),
        };
        let mut played = None;
        for m in [pick, Move::Idle, Move::Discharge(max_sell)] {
            moves.push(m);
            if let Ok(s) = simulate_moves(&prefix, &moves) {
                played = Some(s);
                break;
            }
            moves.pop();
        }
        let s = played.expect("idle or a full discharge is always feasible");
        let last = s.periods.last().expect("non-empty prefix");
        (level, capacity) = (last.level, last.capacity);
    }
    simulate_moves(instance, &moves).expect("replay of feasible moves")
}
