//! Experiment configuration, execution and reporting.

pub mod config;
pub mod plot;
pub mod runner;
pub mod table;

pub use config::{ExperimentConfig, SYNTHETIC_DATASET};
pub use plot::{emit_plot_data, parse_plot_data, EdgePlotRow, RunArtifact};
pub use runner::{
    load_graph, plot_data_from_dir, run_experiment, run_on_graph, write_outputs, ExperimentOutput,
    RunSummary,
};
pub use table::{render_table, ResplitRecord, ResultsRow, ResultsTable, Stat, TableFormat};
