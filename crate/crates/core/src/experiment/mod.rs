//! Configuration, single runs and sweeps, with CSV output.

mod config;
mod run;
mod sweep;

pub use config::{
    load_config, DatasetSource, ExperimentConfig, Method, CONFIG_HELP, DEFAULT_PRESET,
    MOBILENET_PARAMS, PRESETS, RESNET20_PARAMS, YAMNET_PARAMS,
};
pub use run::{
    accounting_ledger, accounting_only, build_federation, run, run_with_reference, simulate,
    simulation_config, RoundRow, RunReport, RunSummary, CSV_SCHEMA_VERSION, ROUNDS_CSV_HEADER,
    SUMMARY_CSV_HEADER,
};
pub use sweep::{grid, sweep, write_sweep_csv, Axis, SweepAxis, SweepCell};
