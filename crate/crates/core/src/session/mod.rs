//! The live game: timed sessions, answer intake with match feedback and
//! points, per-worker playlists, and the append-only event log.
//!
//! Sessions never read wall time. Every mutation takes `now` from an
//! injected [`Clock`], and timeouts only fire when the clock owner calls
//! `expire`. Replaying a log through a fresh engine therefore reproduces it
//! byte for byte.

mod clock;
mod engine;
mod log;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::aggregation::{aggregate, ith_answer, AnswerEvent, GameOutcome};
use crate::domain::{DialogTask, GameConfig, Mode, Policy};

pub use clock::{Clock, ManualClock, ScaledClock, SystemClock, Timestamp};
pub use engine::{tutorial_task, Advance, Engine, EngineError, ReplayError, ReplayedSession, TUTORIAL_PARTNER};
pub use log::{read_event_log, write_event_log, EventLog, LogEvent, LogKind, LogReadError};

/// Points each worker of the first agreeing pair receives.
pub const MATCH_POINTS: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameState {
    Pending,
    Active,
    Decided,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Submitted at or after the deadline.
    Late,
    /// The game already has its answer.
    Closed,
    /// The game's timer has not started.
    NotStarted,
}

/// Result of one submission, shaped for the worker UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intake {
    pub accepted: bool,
    pub matched: bool,
    pub points_awarded: u32,
    pub game_state: GameState,
    pub reason: Option<RejectReason>,
}

/// One game over one dialog task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSession {
    pub game_id: String,
    pub task: DialogTask,
    pub config: GameConfig,
    state: GameState,
    started_at: Option<Timestamp>,
    deadline: Option<Timestamp>,
    events: Vec<AnswerEvent>,
    outcome: Option<GameOutcome>,
    scores: BTreeMap<String, u32>,
    match_recorded: bool,
    next_seq: u64,
}

impl GameSession {
    /// A game whose timer has not started.
    pub fn pending(game_id: impl Into<String>, task: DialogTask, config: GameConfig) -> Self {
        Self {
            game_id: game_id.into(),
            task,
            config,
            state: GameState::Pending,
            started_at: None,
            deadline: None,
            events: Vec::new(),
            outcome: None,
            scores: BTreeMap::new(),
            match_recorded: false,
            next_seq: 0,
        }
    }

    pub fn state(&self) -> GameState {
        self.state
    }

    pub fn started_at(&self) -> Option<Timestamp> {
        self.started_at
    }

    pub fn deadline(&self) -> Option<Timestamp> {
        self.deadline
    }

    pub fn events(&self) -> &[AnswerEvent] {
        &self.events
    }

    pub fn outcome(&self) -> Option<&GameOutcome> {
        self.outcome.as_ref()
    }

    pub fn scores(&self) -> &BTreeMap<String, u32> {
        &self.scores
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.state, GameState::Decided | GameState::Closed)
    }

    /// Seconds left on the timer at `now` (0 once it ran out).
    pub fn remaining_s(&self, now: Timestamp) -> f64 {
        match self.deadline {
            Some(d) if self.state == GameState::Active => (d.secs_since(now)).max(0.0),
            Some(_) => 0.0,
            None => self.config.time_constraint_s,
        }
    }

    fn log(&self, at: Timestamp, kind: LogKind, worker: Option<&str>, payload: serde_json::Value) -> LogEvent {
        LogEvent::new(at, kind, Some(&self.game_id), worker, payload)
    }

    /// Starts the timer. A no-op unless the game is pending.
    pub fn activate(&mut self, now: Timestamp) -> Vec<LogEvent> {
        if self.state != GameState::Pending {
            return Vec::new();
        }
        self.state = GameState::Active;
        self.started_at = Some(now);
        // floor keeps every accepted offset within the time constraint
        let deadline = Timestamp::from_millis(now.millis() + (self.config.time_constraint_s * 1000.0).floor() as i64);
        self.deadline = Some(deadline);
        vec![self.log(
            now,
            LogKind::UtteranceReceived,
            None,
            json!({ "task": self.task, "config": self.config, "deadline": deadline }),
        )]
    }

    fn policy_decided_now(&self) -> bool {
        match self.config.policy {
            Policy::EspOnly | Policy::EspPlusIth => self.match_recorded,
            Policy::IthOnly => ith_answer(&self.events, self.config.fallback_index_i).is_some(),
        }
    }

    /// Takes one answer. Late or closed submissions are acknowledged but
    /// not recorded.
    pub fn submit_answer(&mut self, worker_id: &str, raw_text: &str, now: Timestamp) -> (Intake, Vec<LogEvent>) {
        let reject = |reason: RejectReason, state: GameState| Intake {
            accepted: false,
            matched: false,
            points_awarded: 0,
            game_state: state,
            reason: Some(reason),
        };
        let rejection = match (self.state, self.deadline) {
            (GameState::Pending, _) => Some(RejectReason::NotStarted),
            (GameState::Decided | GameState::Closed, _) => Some(RejectReason::Closed),
            (GameState::Active, Some(d)) if now >= d => Some(RejectReason::Late),
            (GameState::Active, _) => None,
        };
        if let Some(reason) = rejection {
            let ev = self.log(
                now,
                LogKind::AnswerSubmitted,
                Some(worker_id),
                json!({ "text": raw_text, "accepted": false, "offset_s": null, "seq": null, "reason": reason }),
            );
            return (reject(reason, self.state), vec![ev]);
        }

        let started = self.started_at.expect("active games have a start time");
        let seq = self.next_seq;
        self.next_seq += 1;
        // a clock stepping backwards must not reorder the stream
        let floor = self.events.last().map_or(0.0, |e| e.offset_s);
        let event = AnswerEvent::new(worker_id, raw_text, now.secs_since(started).max(floor), seq);
        let mut logs = vec![self.log(
            now,
            LogKind::AnswerSubmitted,
            Some(worker_id),
            json!({ "text": raw_text, "accepted": true, "offset_s": event.offset_s, "seq": seq, "reason": null }),
        )];

        let partner = if self.match_recorded || event.normalized_text.is_empty() {
            None
        } else {
            self.events
                .iter()
                .find(|e| e.normalized_text == event.normalized_text && e.worker_id != event.worker_id)
                .map(|e| e.worker_id.clone())
        };
        let label = event.normalized_text.clone();
        let offset = event.offset_s;
        self.events.push(event);

        let mut points = 0;
        if let Some(partner) = &partner {
            self.match_recorded = true;
            *self.scores.entry(partner.clone()).or_default() += MATCH_POINTS;
            *self.scores.entry(worker_id.to_string()).or_default() += MATCH_POINTS;
            points = MATCH_POINTS;
            logs.push(self.log(
                now,
                LogKind::Match,
                Some(worker_id),
                json!({ "label": label, "workers": [partner, worker_id], "offset_s": offset, "points": MATCH_POINTS }),
            ));
        }

        if self.config.mode == Mode::Live && self.policy_decided_now() {
            let outcome = aggregate(&self.events, &self.config).expect("engine keeps events ordered and in range");
            logs.push(self.log(now, LogKind::GameDecided, None, json!({ "outcome": outcome })));
            self.outcome = Some(outcome);
            self.state = GameState::Decided;
        }

        let intake = Intake {
            accepted: true,
            matched: partner.is_some(),
            points_awarded: points,
            game_state: self.state,
            reason: None,
        };
        (intake, logs)
    }

    /// Whether `now` is at or past the deadline.
    pub fn is_due(&self, now: Timestamp) -> bool {
        self.deadline.is_some_and(|d| now >= d)
    }

    /// Closes the game at its timeout, deciding it first if needed.
    /// Idempotent once closed. Callers must only call this when
    /// [`GameSession::is_due`] holds.
    pub fn expire(&mut self, now: Timestamp) -> (Option<GameOutcome>, Vec<LogEvent>) {
        let mut logs = Vec::new();
        match self.state {
            GameState::Pending | GameState::Closed => return (self.outcome.clone(), logs),
            GameState::Active => {
                let outcome = aggregate(&self.events, &self.config).expect("engine keeps events ordered and in range");
                logs.push(self.log(now, LogKind::GameDecided, None, json!({ "outcome": outcome })));
                self.outcome = Some(outcome);
            }
            GameState::Decided => {}
        }
        self.state = GameState::Closed;
        logs.push(self.log(now, LogKind::GameClosed, None, json!({ "outcome": self.outcome })));
        (self.outcome.clone(), logs)
    }
}

/// A worker's ordered run of games, optionally opening with a tutorial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub worker_session_id: String,
    pub games: Vec<String>,
    pub cursor: usize,
    pub tutorial_first: bool,
}

impl Playlist {
    pub fn current(&self) -> Option<&str> {
        self.games.get(self.cursor).map(String::as_str)
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.games.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::sample_task;

    fn t0() -> Timestamp {
        Timestamp::from_millis(1_800_000_000_000)
    }

    fn session(policy: Policy, mode: Mode) -> GameSession {
        let cfg = GameConfig::new(20.0, policy, 1, mode).unwrap();
        let mut s = GameSession::pending("g1", sample_task(), cfg);
        s.activate(t0());
        s
    }

    #[test]
    fn activation_sets_deadline() {
        let s = session(Policy::EspOnly, Mode::Live);
        assert_eq!(s.state(), GameState::Active);
        assert_eq!(s.deadline().unwrap().secs_since(t0()), 20.0);
        assert_eq!(s.remaining_s(t0().add_secs(5.0)), 15.0);
    }

    #[test]
    fn match_awards_both_and_decides_live() {
        let mut s = session(Policy::EspOnly, Mode::Live);
        let (a, _) = s.submit_answer("w1", "Boston", t0().add_secs(2.0));
        assert!(a.accepted && !a.matched);
        let (b, logs) = s.submit_answer("w2", "boston", t0().add_secs(4.0));
        assert!(b.matched);
        assert_eq!(b.points_awarded, 1000);
        assert_eq!(s.scores()["w1"], 1000);
        assert_eq!(s.scores()["w2"], 1000);
        assert_eq!(s.state(), GameState::Decided);
        let kinds: Vec<LogKind> = logs.iter().map(|l| l.kind).collect();
        assert_eq!(kinds, vec![LogKind::AnswerSubmitted, LogKind::Match, LogKind::GameDecided]);
        let (c, _) = s.submit_answer("w3", "boston", t0().add_secs(5.0));
        assert_eq!(c.reason, Some(RejectReason::Closed));
    }

    #[test]
    fn self_repeat_is_not_a_match() {
        let mut s = session(Policy::EspOnly, Mode::Live);
        s.submit_answer("w1", "boston", t0().add_secs(1.0));
        let (r, _) = s.submit_answer("w1", "boston", t0().add_secs(2.0));
        assert!(r.accepted && !r.matched);
        assert_eq!(s.state(), GameState::Active);
    }

    #[test]
    fn late_submission_rejected() {
        let mut s = session(Policy::EspOnly, Mode::Live);
        let (r, logs) = s.submit_answer("w1", "boston", t0().add_secs(21.0));
        assert_eq!(r.reason, Some(RejectReason::Late));
        assert!(s.events().is_empty());
        assert_eq!(logs.len(), 1);
        let (r, _) = s.submit_answer("w1", "boston", t0().add_secs(20.0));
        assert_eq!(r.reason, Some(RejectReason::Late));
    }

    #[test]
    fn collection_mode_records_past_match() {
        let mut s = session(Policy::EspOnly, Mode::Collection);
        s.submit_answer("w1", "boston", t0().add_secs(1.0));
        let (r, _) = s.submit_answer("w2", "boston", t0().add_secs(2.0));
        assert!(r.matched);
        assert_eq!(s.state(), GameState::Active);
        let (r, _) = s.submit_answer("w3", "boston", t0().add_secs(3.0));
        assert!(r.accepted && !r.matched, "only the first match scores");
        assert_eq!(s.events().len(), 3);
        let (o, _) = s.expire(t0().add_secs(20.0));
        let o = o.unwrap();
        assert_eq!(o.decision_offset_s, 2.0);
        assert_eq!(s.scores().values().sum::<u32>(), 2000);
    }

    #[test]
    fn expire_without_answers_is_empty() {
        let mut s = session(Policy::EspPlusIth, Mode::Live);
        let (o, logs) = s.expire(t0().add_secs(20.0));
        assert_eq!(o, Some(GameOutcome::empty(20.0)));
        assert_eq!(s.state(), GameState::Closed);
        assert_eq!(logs.last().unwrap().kind, LogKind::GameClosed);
    }

    #[test]
    fn expire_falls_back_and_is_idempotent() {
        let mut s = session(Policy::EspPlusIth, Mode::Live);
        s.submit_answer("w1", "boston", t0().add_secs(5.0));
        s.submit_answer("w2", "denver", t0().add_secs(9.0));
        let (o, _) = s.expire(t0().add_secs(20.0));
        let o = o.unwrap();
        assert_eq!(o.kind, crate::aggregation::DecisionKind::FallbackIth);
        assert_eq!(o.label.as_deref(), Some("boston"));
        assert_eq!(o.decision_offset_s, 20.0);
        let (again, logs) = s.expire(t0().add_secs(30.0));
        assert_eq!(again, Some(o));
        assert!(logs.is_empty());
    }

    #[test]
    fn live_ith_only_decides_on_ith_answer() {
        let mut s = session(Policy::IthOnly, Mode::Live);
        s.submit_answer("w1", "  ", t0().add_secs(1.0));
        assert_eq!(s.state(), GameState::Active);
        s.submit_answer("w2", "denver", t0().add_secs(3.0));
        assert_eq!(s.state(), GameState::Decided);
        assert_eq!(s.outcome().unwrap().decision_offset_s, 3.0);
    }

    #[test]
    fn pending_rejects_answers() {
        let cfg = GameConfig::default();
        let mut s = GameSession::pending("g", sample_task(), cfg);
        let (r, _) = s.submit_answer("w", "x", t0());
        assert_eq!(r.reason, Some(RejectReason::NotStarted));
    }
}
