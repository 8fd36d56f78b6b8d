//! Crowd-powered entity extraction for dialog systems.
//!
//! Workers play a timed agreement game over a dialog transcript: each one
//! types the value of a requested slot, and a label is accepted once two
//! different workers agree. This crate holds the game engine and everything
//! needed to study it offline:
//!
//! - [`domain`]: dialog tasks, the line-delimited corpus format, and a
//!   synthetic chat corpus generator.
//! - [`matching`]: answer normalization, the agreement predicate, and the
//!   gazetteer-backed soft matcher used for post-processing.
//! - [`aggregation`]: the three answer-aggregation policies and the
//!   player-subset resampler.
//! - [`session`]: the live game state machine, playlists, and the
//!   append-only event log with replay.
//! - [`crowd_sim`]: discrete-event simulation of recruitment and worker
//!   behavior, plus calibration against observed timelines.
//! - [`evaluation`]: slot scoring, error taxonomy, timeline statistics and
//!   accuracy/latency trade-off sweeps.
//!
//! Statistics and metric arithmetic are generic over a [`Real`] scalar; the
//! aliases below fix the scalar to `f64` (and `f32` where it is useful).

pub mod aggregation;
pub mod crowd_sim;
pub mod domain;
pub mod evaluation;
pub mod matching;
pub mod scalar;
pub mod session;

pub use scalar::Real;

pub use aggregation::{aggregate, AnswerEvent, DecisionKind, GameOutcome, ResamplePlan};
pub use domain::{DialogTask, GameConfig, Mode, Policy, Speaker, UserProfile, Utterance};
pub use matching::{is_match, normalize, Gazetteer};

/// Precision/recall/F1 in double precision.
pub type Prf = evaluation::Prf<f64>;
/// Precision/recall/F1 in single precision.
pub type Prf32 = evaluation::Prf<f32>;
/// Mean and population standard deviation in double precision.
pub type Moments = evaluation::Moments<f64>;
/// Timeline means/stdevs in double precision.
pub type TimelineStats = evaluation::TimelineStats<f64>;
/// Timeline summary (with absent fractions) in double precision.
pub type TimelineSummary = evaluation::TimelineSummary<f64>;
/// Experiment report in double precision.
pub type MetricsReport = evaluation::MetricsReport<f64>;
/// Averaged resampling metrics in double precision.
pub type ResampleMetrics = aggregation::ResampleMetrics<f64>;
/// One trade-off sweep cell in double precision.
pub type SweepRow = evaluation::SweepRow<f64>;
