//! Online traversability learning runs in simulated vegetation: episode
//! replay, ground-truth evaluation and the strategy comparison harness.
//! The learning pipeline runs in single precision.

pub mod harness;
pub mod pipeline;
pub mod survey;

pub use harness::{run_harness, write_harness, HarnessConfig, HarnessResult};
pub use pipeline::{controller, replay, train_base_model, BaseConfig, RunConfig};
pub use survey::{eval_labels, survey_map, Region, SurveyConfig};
