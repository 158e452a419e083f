//! Command-line front end for `relaycap`: JSON run configs, mode dispatch,
//! JSON reports and CSV traces.

pub mod config;
pub mod instances;
pub mod report;
pub mod run;

pub use config::{load, parse_config, ConfigError, Mode, Overrides, RunConfig};
pub use report::{Report, SCHEMA_VERSION};
pub use run::{emit, run, Outcome, RunError};
