//! Battery arbitrage on day-ahead electricity markets: price ingestion,
//! schedule optimization, project valuation, experiment sweeps and
//! multilevel regression of the results.

pub mod arbitrage;
pub mod bess;
pub mod config;
pub mod finance;
pub mod lmm;
pub mod par;
pub mod pricefeed;
pub mod sweep;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
