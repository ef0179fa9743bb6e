//! HTTP service for same/different scene trials.
//!
//! A session fixes a counterbalanced schedule of stimuli and conditions. For
//! each trial the client posts fixations until the target count is reached,
//! which starts generation of the probe image under a time budget. The client
//! then fetches the probe once and posts a same/different answer. Every step
//! is appended to a per-session JSON Lines log from which each probe can be
//! regenerated bit for bit.

mod app;
mod error;
mod generator;
mod record;
mod schedule;

pub use app::{
    random_fixation_seed, router, serve, AppState, FixationAck, FixationIn, FixationStatus, Pending, Phase, ResponseIn,
    SessionCreated, TrialStatus, TrialSummary,
};
pub use error::{ServiceError, ServiceResult};
pub use generator::{
    generation_condition, Generator, GeneratorInfo, ModelGenerator, PngDirectory, StimulusSource, SyntheticStimuli,
};
pub use record::{
    judgments, png_sha256, read_log, regenerate, trial_records, GenerationRecord, LogEvent, RecordedResponse,
    SessionEvent, TrialLog, TrialRecord, SCHEMA_VERSION,
};
pub use schedule::{build_schedule, diverse_subset, SessionConfig, TrialPlan};
