//! Scenario generation, Monte-Carlo sweeps and their CSV/SVG outputs.

mod bounds;
mod config;
mod pipeline;
mod plot;
mod scene;
mod sweep;

pub use bounds::{crlb_location, read_crlb_csv, run_crlb_sweep, write_crlb_csv, BoundKind, CrlbRow, CRLB_HEADER};
pub use config::{Method, NoisePoint, ScenarioConfig, NOISELESS_VAR_ANGLE, NOISELESS_VAR_DELAY};
pub use pipeline::{
    scenario_scene, scenario_training_set, train_map, train_maps, TrainedMap, TrainedMaps,
};
pub use plot::{emit_plots, render_plots};
pub use scene::{build_training_set, generate_scene, sample_target};
pub use sweep::{
    aggregate, derive_seed, read_sweep_csv, run_sweep, stream, write_sweep_csv, write_trial_csv,
    SweepContext, SweepOutput, SweepRow, TrialRecord, SWEEP_HEADER, TRIAL_HEADER,
};
