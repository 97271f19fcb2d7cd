//! Exact schedule optimization.
//!
//! The binary part of the trading model only matters through a small discrete
//! state: the last-operation flag and the number of capacity decrements taken
//! so far (which fixes the capacity). For each discrete state the best future
//! cash flow is a piecewise-linear function of the stored level, so backward
//! induction over periods solves the mixed-integer model exactly without
//! discretizing the level.
//!
//! The decrement counter is capped. States at the cap keep the cap's capacity,
//! which can only overstate the attainable value, so the capped recursion is a
//! relaxation. If the recovered schedule never needs a decrement beyond the cap
//! it is feasible for the uncapped model and therefore optimal; otherwise the
//! cap is doubled and the recursion repeated.
//!
//! Ties are broken towards idling, then charging, and within an action towards
//! the smallest traded amount.

use std::time::Instant;

use thiserror::Error;

use super::model::{
    relative_gap, DegradationMode, ModelInstance, Period, SolveOptions, SolveReport, SolveStatus,
    TradeSchedule,
};
use super::pwl::Pwl;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("instance infeasible at period {0}; the idle schedule should always be feasible")]
    Infeasible(usize),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Idle,
    Charge,
    Discharge,
}

/// Discrete operating state: last-operation flag, an owed decrement (per-charge
/// fade only), and decrements applied since the start of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Discrete {
    gamma: bool,
    pending: bool,
    n: usize,
}

struct Layout {
    mode: DegradationMode,
    cap: usize,
    k0: f64,
    fade: f64,
}

impl Layout {
    fn modes(&self) -> usize {
        match self.mode {
            DegradationMode::PerCycle => 2,
            DegradationMode::PerChargePeriod => 3,
        }
    }

    fn len(&self) -> usize {
        self.modes() * (self.cap + 1)
    }

    fn index(&self, d: Discrete) -> usize {
        let m = match (d.gamma, d.pending) {
            (false, _) => 0,
            (true, false) => 1,
            (true, true) => 2,
        };
        m * (self.cap + 1) + d.n
    }

    fn state(&self, idx: usize) -> Discrete {
        let (m, n) = (idx / (self.cap + 1), idx % (self.cap + 1));
        Discrete {
            gamma: m > 0,
            pending: m == 2,
            n,
        }
    }

    fn capacity(&self, n: usize) -> f64 {
        self.k0 - self.fade * n as f64
    }

    /// Successor state and whether the transition needed a decrement past the cap.
    fn next(&self, s: Discrete, a: Action) -> (Discrete, bool) {
        let (gamma, pending, extra) = match self.mode {
            DegradationMode::PerCycle => match a {
                Action::Idle => (s.gamma, false, 0),
                Action::Charge => (true, false, 0),
                Action::Discharge => (false, false, s.gamma as usize),
            },
            DegradationMode::PerChargePeriod => {
                let owed = s.pending as usize;
                match a {
                    Action::Idle => (s.gamma, false, owed),
                    Action::Charge => (true, true, owed),
                    Action::Discharge => (false, false, owed),
                }
            }
        };
        let want = s.n + extra;
        let n = want.min(self.cap);
        (Discrete { gamma, pending, n }, want > self.cap)
    }

    /// Largest decrement count reachable by the end of period `t`.
    fn reachable(&self, t: usize, n0_pending: bool, gamma0: bool) -> usize {
        let r = match self.mode {
            DegradationMode::PerCycle => (t + gamma0 as usize) / 2 + gamma0 as usize,
            DegradationMode::PerChargePeriod => t + n0_pending as usize,
        };
        r.min(self.cap)
    }
}

struct Problem<'a> {
    inst: &'a ModelInstance,
    eta: f64,
    power: f64,
}

impl Problem<'_> {
    fn charge_width(&self) -> f64 {
        self.eta * self.power
    }

    fn discharge_width(&self) -> f64 {
        self.power / self.eta
    }
}

struct Tables {
    layout: Layout,
    /// `values[t][s]`: best cash flow from the end of period `t` onward.
    values: Vec<Vec<Option<Pwl>>>,
    nodes: u64,
}

enum Outcome {
    Done(Tables),
    OutOfBudget { nodes: u64, status: SolveStatus },
}

fn backward(
    p: &Problem,
    cap: usize,
    opts: &SolveOptions,
    started: Instant,
    nodes_so_far: u64,
) -> Outcome {
    let inst = p.inst;
    let t_len = inst.horizon();
    let layout = Layout {
        mode: inst.degradation,
        cap,
        k0: inst.initial.capacity,
        fade: inst.battery.per_cycle_degradation,
    };
    let gamma0 = inst.initial.last_op.is_charge();
    let s_count = layout.len();
    let mut values: Vec<Vec<Option<Pwl>>> = Vec::with_capacity(t_len + 1);
    values.resize_with(t_len + 1, || vec![None; s_count]);
    let mut nodes = nodes_so_far;

    for idx in 0..s_count {
        let s = layout.state(idx);
        if s.n > layout.reachable(t_len, false, gamma0) {
            continue;
        }
        let k = layout.capacity(s.n);
        if k >= 0.0 {
            values[t_len][idx] = Some(Pwl::constant(0.0, k));
        }
    }

    let (cw, dw) = (p.charge_width(), p.discharge_width());
    for t in (1..=t_len).rev() {
        if started.elapsed() > opts.time_budget {
            return Outcome::OutOfBudget {
                nodes,
                status: SolveStatus::TimeLimit,
            };
        }
        let price = inst.prices[t - 1];
        let (next, rest) = values.split_at_mut(t);
        let succ = &rest[0];
        let cur = &mut next[t - 1];
        let limit = if t == 1 {
            0
        } else {
            layout.reachable(t - 1, false, gamma0)
        };
        for (idx, slot) in cur.iter_mut().enumerate() {
            let s = layout.state(idx);
            if t == 1 {
                let start = Discrete {
                    gamma: gamma0,
                    pending: false,
                    n: 0,
                };
                if s != start {
                    continue;
                }
            } else if s.n > limit {
                continue;
            }
            let k_here = layout.capacity(s.n);
            if k_here < 0.0 {
                continue;
            }
            nodes += 1;
            if nodes > opts.node_budget {
                return Outcome::OutOfBudget {
                    nodes,
                    status: SolveStatus::GapLimit,
                };
            }
            let mut options: Vec<Pwl> = Vec::with_capacity(3);
            for a in [Action::Idle, Action::Charge, Action::Discharge] {
                let (ns, _) = layout.next(s, a);
                let Some(v) = succ[layout.index(ns)].as_ref() else {
                    continue;
                };
                let f = match a {
                    Action::Idle => v.restrict(k_here),
                    Action::Charge => v.restrict(k_here).map(|mut g| {
                        let slope = price / p.eta;
                        g.add_linear(-slope);
                        let mut m = g.forward_window_max(cw);
                        m.add_linear(slope);
                        m
                    }),
                    Action::Discharge => {
                        let slope = price * p.eta;
                        let mut g = v.clone();
                        g.add_linear(-slope);
                        g.backward_window_max(dw, k_here).map(|mut m| {
                            m.add_linear(slope);
                            m
                        })
                    }
                };
                if let Some(f) = f {
                    options.push(f);
                }
            }
            if !options.is_empty() {
                let refs: Vec<&Pwl> = options.iter().collect();
                *slot = Some(Pwl::max_of(&refs));
            }
        }
    }
    Outcome::Done(Tables {
        layout,
        values,
        nodes,
    })
}

struct Recovered {
    schedule: TradeSchedule,
    value: f64,
    overflow: bool,
}

fn forward(p: &Problem, tables: &Tables) -> Result<Recovered, SolveError> {
    let inst = p.inst;
    let layout = &tables.layout;
    let mut s = Discrete {
        gamma: inst.initial.last_op.is_charge(),
        pending: false,
        n: 0,
    };
    let mut level = inst.initial.level;
    let mut cycles = inst.initial.cycles;
    let mut gamma = s.gamma;
    let value = tables.values[0][layout.index(s)]
        .as_ref()
        .and_then(|v| v.eval(level))
        .ok_or(SolveError::Infeasible(1))?;
    let mut overflow = false;
    let mut periods = Vec::with_capacity(inst.horizon());

    for t in 1..=inst.horizon() {
        let price = inst.prices[t - 1];
        let k_here = layout.capacity(s.n);
        let succ = &tables.values[t];
        let mut best: Option<(Action, f64, f64)> = None;
        for a in [Action::Idle, Action::Charge, Action::Discharge] {
            let (ns, _) = layout.next(s, a);
            let Some(v) = succ[layout.index(ns)].as_ref() else {
                continue;
            };
            let cand = match a {
                Action::Idle => v
                    .eval(level)
                    .filter(|_| level <= k_here + 1e-12)
                    .map(|val| (level, val)),
                Action::Charge => {
                    let slope = price / p.eta;
                    v.argmax_in(level, (level + p.charge_width()).min(k_here), -slope, level)
                        .map(|(x, val)| (x, val + slope * level))
                }
                Action::Discharge => {
                    let slope = price * p.eta;
                    v.argmax_in(level - p.discharge_width(), level, -slope, level)
                        .map(|(x, val)| (x, val + slope * level))
                }
            };
            if let Some((x, val)) = cand {
                let tol = 1e-9 * val.abs().max(1.0);
                if best.is_none_or(|(_, _, bv)| val > bv + tol) {
                    best = Some((a, x, val));
                }
            }
        }
        let (a, x, _) = best.ok_or(SolveError::Infeasible(t))?;
        let (ns, over) = layout.next(s, a);
        overflow |= over;
        let (alpha, beta) = (a == Action::Charge, a == Action::Discharge);
        let (purchase, sale) = match a {
            Action::Idle => (0.0, 0.0),
            Action::Charge => (((x - level) / p.eta).clamp(0.0, p.power), 0.0),
            Action::Discharge => (0.0, ((level - x) * p.eta).clamp(0.0, p.power)),
        };
        let delta = gamma && !ns.gamma;
        cycles += delta as u64;
        gamma = ns.gamma;
        level = x.max(0.0);
        s = ns;
        periods.push(Period {
            price,
            alpha,
            beta,
            gamma,
            delta,
            purchase,
            sale,
            level,
            capacity: layout.capacity(s.n),
            cycles,
        });
    }
    Ok(Recovered {
        schedule: TradeSchedule {
            periods,
            warnings: Vec::new(),
        },
        value,
        overflow,
    })
}

fn idle_schedule(inst: &ModelInstance) -> TradeSchedule {
    let s = inst.initial;
    let periods = inst
        .prices
        .iter()
        .map(|&price| Period {
            price,
            alpha: false,
            beta: false,
            gamma: s.last_op.is_charge(),
            delta: false,
            purchase: 0.0,
            sale: 0.0,
            level: s.level,
            capacity: s.capacity,
            cycles: s.cycles,
        })
        .collect();
    TradeSchedule {
        periods,
        warnings: Vec::new(),
    }
}

/// A valid upper bound that needs no search: every period trades at most one
/// converter-hour at the best conversion rate.
fn trivial_bound(p: &Problem) -> f64 {
    let rate = (1.0 / p.eta).max(p.eta);
    p.inst.prices.iter().map(|w| w.abs() * p.power * rate).sum()
}

/// Maximizes the market cash flow of one instance.
pub fn solve(
    instance: &ModelInstance,
    opts: &SolveOptions,
) -> Result<(TradeSchedule, SolveReport), SolveError> {
    let started = Instant::now();
    let p = Problem {
        inst: instance,
        eta: instance.battery.efficiency(),
        power: instance.converter.power,
    };
    let t_len = instance.horizon();
    let max_cap = match instance.degradation {
        DegradationMode::PerCycle => t_len / 2 + 2,
        DegradationMode::PerChargePeriod => t_len + 1,
    };
    let mut cap = (t_len / 12 + 4).min(max_cap);
    let mut nodes = 0;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let tables = match backward(&p, cap, opts, started, nodes) {
            Outcome::Done(t) => t,
            Outcome::OutOfBudget { nodes, status } => {
                let schedule = idle_schedule(instance);
                let bound = trivial_bound(&p);
                let objective = schedule.objective();
                let report = SolveReport {
                    objective,
                    bound,
                    gap: relative_gap(bound, objective),
                    status,
                    nodes,
                    iterations,
                    wall_time_s: started.elapsed().as_secs_f64(),
                };
                return Ok((schedule, report));
            }
        };
        nodes = tables.nodes;
        let rec = forward(&p, &tables)?;
        if rec.overflow && cap < max_cap {
            cap = (cap * 2).min(max_cap);
            continue;
        }
        if rec.overflow {
            return Err(SolveError::Internal(
                "cycle cap overflow at the horizon bound".into(),
            ));
        }
        let objective = rec.schedule.objective();
        let tol = 1e-6 * rec.value.abs().max(1.0);
        if (objective - rec.value).abs() > tol {
            return Err(SolveError::Internal(format!(
                "recovered schedule earns {objective} but the value function promised {}",
                rec.value
            )));
        }
        let bound = rec.value.max(objective);
        let report = SolveReport {
            objective,
            bound,
            gap: relative_gap(bound, objective),
            status: SolveStatus::Optimal,
            nodes,
            iterations,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        return Ok((rec.schedule, report));
    }
}
