//! Experiment harness around `trcomp`: configuration, coordinate-file I/O,
//! runners and CSV/JSON artifacts.

pub mod config;
pub mod coo;
pub mod error;
pub mod params;
pub mod point;
pub mod records;
pub mod runner;

pub use config::{Experiment, ExperimentConfig, RankSpec};
pub use coo::{format_coo, parse_coo, parse_coo_str, write_coo};
pub use error::{CliError, Result};
pub use params::param_count;
pub use point::PointFile;
pub use records::{emit_plotdata, format_run_csv, read_plotdata, PlotSeries};
pub use runner::{run_experiment, Outcome, Summary};
