//! Price-taker arbitrage scheduling for a single storage unit.

pub mod horizon;
pub mod model;
pub mod oracle;
mod pwl;
mod simplex;
pub mod solver;
pub mod validate;

pub use horizon::{
    run_horizon, solve_year, HorizonError, HorizonOptions, Strategy, Termination, YearResult,
    YearSolution, YearlyResults,
};
pub use model::{
    build_model, simulate_moves, step_state_transition, Activity, DegradationMode, ModelDimensions,
    ModelError, ModelInstance, Move, Period, SolveOptions, SolveReport, SolveStatus, TradeSchedule,
};
pub use oracle::{brute_force_oracle, random_schedule, OracleError, ORACLE_MAX_HORIZON};
pub use solver::{solve, SolveError};
pub use validate::{validate_schedule, ConstraintKind, ValidationError, Violation};
