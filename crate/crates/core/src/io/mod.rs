//! Files in and out: dataset ingestion, synthetic data, run configs and the
//! CSV artifacts written by the command-line verbs.
//!
//! All CSV output uses LF line endings and 17-significant-digit floats.

pub mod dataset;
pub mod format;
pub mod runner;
pub mod synth;

pub use dataset::{export_csv, ingest_csv, load_dataset, DatasetManifest};
pub use format::fmt_f64;
pub use runner::{
    check_paired, compare, grid_to_dir, ingest_to_dir, load_seed_block, run_config_file, run_to_dir, DatasetSource,
    GridSection, RunConfig,
};
pub use synth::{synth_generate, write_synth, SynthData, SynthSpec};
