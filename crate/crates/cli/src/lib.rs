//! Command-line driver for `convmpt-core`: bag file formats, versioned model
//! and manifest JSON, k-fold and one-vs-all evaluation, and reports.

pub mod commands;
pub mod error;
pub mod eval;
pub mod io;
pub mod manifest;
pub mod model_file;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
pub use eval::{cross_validate, cross_validate_ova, CvReport, EvalOptions, Grid, OvaCvReport};
pub use io::{fingerprint, load_dataset, load_multiclass, save_dataset, write_jsonl, Format, LoadedDataset};
pub use manifest::{build_report, Report, RunManifest};
pub use model_file::ModelFile;
