//! Configuration, ensemble execution and output files.

mod config;
mod ensemble;
mod write;

pub use config::{
    parse_config, ConfigLayer, Experiment, Representation, RunConfig, SchemeChoice, Series,
    ALL_SERIES,
};
pub use ensemble::{
    prepare, run_ensemble, run_trajectory, CountStats, EnsembleResult, Failure, FixedSum, Prepared,
    RateDip, ShiftStats, MAX_FAILURE_FRACTION,
};
pub use write::{
    metadata, read_summary, summarize, write_outputs, Metadata, Peak, Summary, SHIFT_DEFINITION,
};

#[cfg(test)]
mod tests;
