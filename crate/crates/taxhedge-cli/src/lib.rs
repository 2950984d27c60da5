//! Scenario files, batch runners, and CSV reporting for the `taxhedge`
//! library. The `taxhedge` binary in this crate exposes the runners as
//! subcommands; integration tests drive them directly.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{ScenarioConfig, ValidationError};
pub use report::{Cell, Manifest, ResultTable};
pub use runner::{run_hedge_report, run_reserves, run_two_step, RunError};
