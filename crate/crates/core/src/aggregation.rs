//! Answer aggregation policies over a recorded answer stream, and the
//! player-subset resampler used to study how many players a game needs.
//!
//! Rules shared by every policy:
//! - an agreement needs two *different* workers; repeating your own answer
//!   never matches;
//! - answers that normalize to the empty string neither match nor count
//!   toward the i-th answer;
//! - the i-th answer counts events by arrival, not distinct workers;
//! - the fallback of `esp_plus_ith` is decided at the full time
//!   constraint, so its decision time always equals `esp_only`'s.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{GameConfig, Policy};
use crate::evaluation::{compute_prf, score_outcome, ScoreCounts};
use crate::matching::normalize;
use crate::scalar::Real;

/// One worker submission, positioned in game time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerEvent {
    pub worker_id: String,
    pub raw_text: String,
    pub normalized_text: String,
    /// Seconds since the game started.
    pub offset_s: f64,
    /// Arrival order at the engine; breaks ties between equal offsets.
    pub seq: u64,
}

impl AnswerEvent {
    pub fn new(worker_id: impl Into<String>, raw_text: impl Into<String>, offset_s: f64, seq: u64) -> Self {
        let raw_text = raw_text.into();
        Self {
            worker_id: worker_id.into(),
            normalized_text: normalize(&raw_text),
            raw_text,
            offset_s,
            seq,
        }
    }

    fn key(&self) -> (f64, u64) {
        (self.offset_s, self.seq)
    }

    pub fn is_empty(&self) -> bool {
        self.normalized_text.is_empty()
    }
}

fn key_lt(a: (f64, u64), b: (f64, u64)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).is_lt()
}

/// Sorts events into engine order: by offset, then by `seq`.
pub fn sort_events(events: &mut [AnswerEvent]) {
    events.sort_by(|a, b| a.offset_s.total_cmp(&b.offset_s).then(a.seq.cmp(&b.seq)));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Matched,
    FallbackIth,
    IthOnly,
    EmptyTimeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameOutcome {
    pub label: Option<String>,
    pub decision_offset_s: f64,
    pub kind: DecisionKind,
    /// (earlier worker, later worker) of the agreeing pair.
    pub matched_workers: Option<(String, String)>,
}

impl GameOutcome {
    pub fn empty(time_constraint_s: f64) -> Self {
        Self {
            label: None,
            decision_offset_s: time_constraint_s,
            kind: DecisionKind::EmptyTimeout,
            matched_workers: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("events not ordered by (offset, seq) at index {index}")]
    Unsorted { index: usize },
    #[error("event {index} has offset {offset}s outside [0, {limit}]")]
    OffsetOutOfRange { index: usize, offset: f64, limit: f64 },
    #[error(transparent)]
    Config(#[from] crate::domain::ConfigError),
}

fn check_stream(events: &[AnswerEvent], limit: f64) -> Result<(), AggregationError> {
    for (index, e) in events.iter().enumerate() {
        if !(0.0..=limit).contains(&e.offset_s) {
            return Err(AggregationError::OffsetOutOfRange {
                index,
                offset: e.offset_s,
                limit,
            });
        }
        if index > 0 && !key_lt(events[index - 1].key(), e.key()) {
            return Err(AggregationError::Unsorted { index });
        }
    }
    Ok(())
}

/// Indices `(earlier, later)` of the first agreement between two different
/// workers, where `later` is the earliest event completing any agreement.
pub fn first_match(events: &[AnswerEvent]) -> Option<(usize, usize)> {
    // for each answer text, the first event index of every worker who gave it
    let mut seen: HashMap<&str, Vec<(&str, usize)>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        if e.is_empty() {
            continue;
        }
        let entry = seen.entry(e.normalized_text.as_str()).or_default();
        if let Some(&(_, j)) = entry.iter().find(|(w, _)| *w != e.worker_id) {
            return Some((j, i));
        }
        if !entry.iter().any(|(w, _)| *w == e.worker_id) {
            entry.push((e.worker_id.as_str(), i));
        }
    }
    None
}

/// Index of the i-th (1-based) non-empty event.
pub fn ith_answer(events: &[AnswerEvent], i: usize) -> Option<usize> {
    if i == 0 {
        return None;
    }
    events
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.is_empty())
        .nth(i - 1)
        .map(|(idx, _)| idx)
}

/// Applies `config.policy` to a time-ordered answer stream.
pub fn aggregate(events: &[AnswerEvent], config: &GameConfig) -> Result<GameOutcome, AggregationError> {
    config.validate()?;
    let t = config.time_constraint_s;
    check_stream(events, t)?;

    let matched = || {
        first_match(events).map(|(j, i)| GameOutcome {
            label: Some(events[i].normalized_text.clone()),
            decision_offset_s: events[i].offset_s,
            kind: DecisionKind::Matched,
            matched_workers: Some((events[j].worker_id.clone(), events[i].worker_id.clone())),
        })
    };
    let ith = || ith_answer(events, config.fallback_index_i).map(|k| &events[k]);

    let outcome = match config.policy {
        Policy::EspOnly => matched().unwrap_or_else(|| GameOutcome::empty(t)),
        Policy::IthOnly => match ith() {
            Some(e) => GameOutcome {
                label: Some(e.normalized_text.clone()),
                decision_offset_s: e.offset_s,
                kind: DecisionKind::IthOnly,
                matched_workers: None,
            },
            None => GameOutcome::empty(t),
        },
        Policy::EspPlusIth => matched().unwrap_or_else(|| match ith() {
            Some(e) => GameOutcome {
                label: Some(e.normalized_text.clone()),
                decision_offset_s: t,
                kind: DecisionKind::FallbackIth,
                matched_workers: None,
            },
            None => GameOutcome::empty(t),
        }),
    };
    Ok(outcome)
}

/// How many players to draw per game, for how many rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub k_players: usize,
    pub rounds: usize,
    pub seed: u64,
}

impl ResamplePlan {
    pub fn new(k_players: usize, rounds: usize, seed: u64) -> Self {
        Self {
            k_players,
            rounds,
            seed,
        }
    }
}

/// All answers collected for one game, grouped by worker.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GameStreams {
    pub task_id: String,
    pub gold: Option<String>,
    pub events_by_worker: BTreeMap<String, Vec<AnswerEvent>>,
}

impl GameStreams {
    /// Groups a flat event list by worker.
    pub fn from_events(task_id: impl Into<String>, gold: Option<String>, events: &[AnswerEvent]) -> Self {
        let mut events_by_worker: BTreeMap<String, Vec<AnswerEvent>> = BTreeMap::new();
        for e in events {
            events_by_worker.entry(e.worker_id.clone()).or_default().push(e.clone());
        }
        Self {
            task_id: task_id.into(),
            gold,
            events_by_worker,
        }
    }

    pub fn worker_count(&self) -> usize {
        self.events_by_worker.len()
    }

    /// Merged, engine-ordered stream of the given workers' answers.
    pub fn merged<'a>(&'a self, workers: impl IntoIterator<Item = &'a str>) -> Vec<AnswerEvent> {
        let mut out: Vec<AnswerEvent> = workers
            .into_iter()
            .filter_map(|w| self.events_by_worker.get(w))
            .flatten()
            .cloned()
            .collect();
        sort_events(&mut out);
        out
    }

    pub fn all_events(&self) -> Vec<AnswerEvent> {
        self.merged(self.events_by_worker.keys().map(String::as_str))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("cannot draw {k} players from {available} in game {task_id:?}")]
    TooManyPlayers { k: usize, available: usize, task_id: String },
    #[error("k_players must be at least 1")]
    ZeroPlayers,
    #[error("rounds must be at least 1")]
    ZeroRounds,
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

/// Scores of a single resampling round across all games.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub accuracy: T,
    pub mean_decision_s: T,
    pub counts: ScoreCounts,
}

/// Per-round metrics averaged over all rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub accuracy: T,
    pub mean_decision_s: T,
    pub rounds: Vec<RoundMetrics<T>>,
}

/// Scores one round where `outcomes[g]` is the decision for `games[g]`.
pub fn round_metrics<T: Real>(games: &[GameStreams], outcomes: &[GameOutcome]) -> RoundMetrics<T> {
    let counts: ScoreCounts = games
        .iter()
        .zip(outcomes)
        .map(|(g, o)| score_outcome(o.label.as_deref(), g.gold.as_deref()))
        .sum();
    let prf = compute_prf::<T>(&counts);
    let total_time = outcomes
        .iter()
        .fold(T::zero(), |acc, o| acc + T::lit(o.decision_offset_s));
    let mean_decision_s = if outcomes.is_empty() {
        T::zero()
    } else {
        total_time / T::from_count(outcomes.len() as u64)
    };
    RoundMetrics {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        accuracy: counts.accuracy(),
        mean_decision_s,
        counts,
    }
}

/// Each round draws `k_players` workers per game uniformly without
/// replacement, aggregates their merged answers, and scores the corpus.
/// Per-round metrics are then averaged. Deterministic in `plan.seed`.
pub fn resample_corpus<T: Real>(
    games: &[GameStreams],
    plan: &ResamplePlan,
    config: &GameConfig,
) -> Result<ResampleMetrics<T>, ResampleError> {
    if plan.k_players == 0 {
        return Err(ResampleError::ZeroPlayers);
    }
    if plan.rounds == 0 {
        return Err(ResampleError::ZeroRounds);
    }
    for g in games {
        if plan.k_players > g.worker_count() {
            return Err(ResampleError::TooManyPlayers {
                k: plan.k_players,
                available: g.worker_count(),
                task_id: g.task_id.clone(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut rounds = Vec::with_capacity(plan.rounds);
    for _ in 0..plan.rounds {
        let mut outcomes = Vec::with_capacity(games.len());
        for g in games {
            let workers: Vec<&str> = g.events_by_worker.keys().map(String::as_str).collect();
            let picked = index::sample(&mut rng, workers.len(), plan.k_players);
            let events = g.merged(picked.iter().map(|i| workers[i]));
            outcomes.push(aggregate(&events, config)?);
        }
        rounds.push(round_metrics::<T>(games, &outcomes));
    }
    let n = T::from_count(rounds.len() as u64);
    let avg = |f: fn(&RoundMetrics<T>) -> T| rounds.iter().map(f).fold(T::zero(), |a, b| a + b) / n;
    Ok(ResampleMetrics {
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        f1: avg(|r| r.f1),
        accuracy: avg(|r| r.accuracy),
        mean_decision_s: avg(|r| r.mean_decision_s),
        rounds,
    })
}

/// Single-game form of [`resample_corpus`].
pub fn resample_players<T: Real>(
    events_by_worker: &BTreeMap<String, Vec<AnswerEvent>>,
    plan: &ResamplePlan,
    config: &GameConfig,
    gold: Option<&str>,
) -> Result<ResampleMetrics<T>, ResampleError> {
    let game = GameStreams {
        task_id: String::new(),
        gold: gold.map(str::to_string),
        events_by_worker: events_by_worker.clone(),
    };
    resample_corpus(std::slice::from_ref(&game), plan, config)
}
