//! Configuration-driven runs that tie the modules together and write
//! report files, plot-ready tables and a manifest.

mod config;
mod output;
mod run;
mod tables;

pub use config::{CvConfig, DataPaths, PermutationConfig, RunConfig, SynchronyConfig};
pub use output::{num, sha256_file, OutputDir};
pub use run::{error_record, read_manifest, run, ErrorRecord, FileEntry, Manifest, RunSummary, Stage, MANIFEST_FILE};
pub use tables::{emit_plot_tables, table2_rows, PREDICTION_HEADER, RESIDUAL_HEADER, TABLE2_HEADER};
