//! Configuration, run-directory output and checkpoint/resume.

pub mod checkpoint;
pub mod config;
pub mod output;

pub use checkpoint::DirCheckpointStore;
pub use config::{emit_config, parse_config, scenario_hash, RunConfig};
pub use output::{write_run, write_spectrum, RunWriter};
