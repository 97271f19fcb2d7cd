//! Command-line front end: stage functions, run manifest and exit codes.

pub mod app;
pub mod error;
pub mod manifest;
pub mod stages;
