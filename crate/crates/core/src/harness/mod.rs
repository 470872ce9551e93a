//! Experiment pipeline behind the command-line tool: dataset generation,
//! training, tuning, batch evaluation and energy histograms.
//!
//! Every output is a pure function of the [`RunConfig`] and its seed.
//! Wall-clock columns are only written on request, so reruns reproduce
//! every file byte for byte.

mod commands;
mod config;

pub use commands::{
    cmd_evaluate, cmd_generate, cmd_pdf, cmd_train, cmd_tune, histogram, merge_tuned, EvaluateOutput, GenerateOutput,
    Histogram, Manifest, Options, StrategySummary, TrainOutput, TuneOutput,
};
pub use config::{
    EvaluateConfig, GenerateConfig, HistogramConfig, RunConfig, TrainConfig, TuneConfig, TuneTarget,
    FULL_SCALE_EPISODES, SCHEMA_VERSION,
};

/// Seed stream tags for the stages of a run.
pub mod streams {
    pub const TRAIN_DATA: u64 = 1;
    pub const VALIDATION_DATA: u64 = 2;
    pub const EPISODES: u64 = 3;
    pub const TUNING_EPISODES: u64 = 4;
    pub const OPTIMIZER: u64 = 5;
}
