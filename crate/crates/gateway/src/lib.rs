//! HTTP service, event-log replay and command-line tools around the
//! `dialog-esp` game engine.
//!
//! Endpoints:
//!
//! - `POST /v1/utterances` starts a game for a chat line.
//! - `GET /v1/games/{id}/result` long-polls for the outcome
//!   (`policy`, `i`, `wait_s`).
//! - `POST /v1/workers/{id}/claim` hands a worker its current game.
//! - `POST /v1/games/{id}/answers` submits an answer.
//! - `GET /v1/games/{id}/events` and `GET /v1/workers/{id}/events` stream
//!   log events as JSON lines from a `cursor`.

pub mod cli;
pub mod http;
pub mod params;
pub mod replay;
pub mod service;

pub use params::Params;
pub use replay::{replay_log, ReplayOptions, ReplayReport};
pub use service::{RunMode, Service, ServiceError};
