//! Two-phase training orchestration: per-view predictive pretraining, then
//! joint optimization of all views under the cooperative objective.

mod batch;
mod config;
mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use batch::{load_eval_batch, load_train_batch, BatchTensors};
pub use config::{LossConfig, ModelConfig, PlateauConfig, TrainConfig};
pub use metrics::MetricsLog;
pub use optim::{Adam, AdamConfig};
pub use schedule::{PlateauSchedule, PlateauState};
pub use trainer::{
    matched_instance_distance, phase2_name, train_phase1, train_phase1_view, train_phase2,
    Phase1Output, Phase1ViewOutput, Phase2Output, TrainContext, TrainerState, PHASE1,
};
