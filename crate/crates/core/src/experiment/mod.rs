//! Declarative experiment runner: TOML configs, single runs and sweeps.

mod config;
mod run;
mod sweep;

pub use config::{Baseline, BaselineSection, DataSource, DatasetSection, ExperimentConfig, ModelSection, RunSection};
pub use run::{
    build_datasets, resolve_output_dir, run_experiment, Datasets, ExitStatus, ExperimentOutcome, RunOptions,
    FEATURE_EVAL_IMAGES, GRID_COLS, GRID_IMAGES, OUTPUT_ROOT_ENV,
};
pub use sweep::{parse_values, run_sweep, set_path, write_sweep_csv, SweepRow, SWEEP_CSV_HEADER};
