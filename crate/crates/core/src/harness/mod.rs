// SPDX-License-Identifier: Apache-2.0

//! Configuration, experiment dispatch and reports behind the command line.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    cmd_privacy, cmd_run, cmd_table4, cmd_table5, expected_verdict, load_config,
    nat_rotation_config, rederive_evidence, Artifact, HarnessError, Labels, Output,
};
pub use config::{
    ConfigError, Expectation, PrivacyCellName, PrivacyConfig, ScenarioConfig, Table4Config,
    Table5Config, Tap, CONFIG_VERSION,
};
pub use report::{
    reference, Check, Comparison, Report, CSV_COLUMNS, REPORT_SCHEMA, REPORT_SCHEMA_VERSION,
};
