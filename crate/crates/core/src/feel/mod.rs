//! The joint learning/localization protocol, its baselines and the learning
//! tasks it drives.

mod protocol;
mod task;

pub use protocol::{
    design_schedule, run_baseline, run_baselines, run_collabsensefed, run_protocol, Baseline, BeamformerSchedule, BlockDesign,
    IntervalTrace, ProtocolState, RoundLog, RunOptions, RunOutput, World, TARGET_CLEARANCE,
};
pub use task::{make_synthetic_task, Dataset, Evaluation, LearningTask, SyntheticSizes, SyntheticTask};
