//! Offline analysis of a recorded event log.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use dialog_esp::aggregation::{aggregate, resample_corpus, GameStreams, ResampleError};
use dialog_esp::session::{Engine, LogEvent, ReplayedSession};
use dialog_esp::{DialogTask, GameOutcome, Gazetteer, MetricsReport, Mode, Policy, ResampleMetrics, ResamplePlan};
use dialog_esp::evaluation::ReportBuilder;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayLogError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

impl ReplayLogError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ReplayLogError::Line { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    /// Re-aggregate collection-mode games under this policy.
    pub policy: Option<Policy>,
    pub fallback_index_i: Option<usize>,
    /// Gold labels by task id; otherwise the logged task's own gold is used.
    pub corpus: Option<Vec<DialogTask>>,
    pub gazetteer: Option<Gazetteer>,
    /// Player-subset resampling over collection-mode games.
    pub resample: Option<ResamplePlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub game_id: String,
    pub task_id: String,
    pub mode: Mode,
    pub policy: Policy,
    pub workers: usize,
    pub answers: usize,
    pub outcome: Option<GameOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub events: usize,
    /// Whether re-running the inputs regenerated the log exactly.
    pub identical: bool,
    pub sessions: Vec<SessionSummary>,
    pub metrics: MetricsReport,
    pub resampled: Option<ResampleMetrics>,
    /// Games with enough workers to take part in resampling.
    pub resampled_games: usize,
}

/// Parses a log file, keeping each event's 1-based line number.
pub fn read_numbered<R: BufRead>(reader: R) -> Result<Vec<(usize, LogEvent)>, ReplayLogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| ReplayLogError::Line {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, ev));
    }
    Ok(out)
}

/// Rebuilds every session in the log and scores the outcomes.
pub fn replay_log(path: impl AsRef<Path>, opts: &ReplayOptions) -> Result<ReplayReport, ReplayLogError> {
    let numbered = read_numbered(BufReader::new(File::open(path)?))?;
    replay_events(&numbered, opts)
}

pub fn replay_events(numbered: &[(usize, LogEvent)], opts: &ReplayOptions) -> Result<ReplayReport, ReplayLogError> {
    let events: Vec<LogEvent> = numbered.iter().map(|(_, e)| e.clone()).collect();
    let (engine, sessions) = Engine::replay(&events).map_err(|e| ReplayLogError::Line {
        line: numbered[e.index].0,
        message: e.message,
    })?;
    let identical = engine.log().snapshot() == events;

    let gold: HashMap<&str, &DialogTask> = opts
        .corpus
        .iter()
        .flatten()
        .map(|t| (t.task_id.as_str(), t))
        .collect();
    let empty = Gazetteer::default();
    let mut report = ReportBuilder::new(opts.gazetteer.as_ref().unwrap_or(&empty));
    let mut summaries = Vec::with_capacity(sessions.len());
    let mut streams = Vec::new();
    for s in &sessions {
        let summary = summarize(s, opts);
        let task = gold.get(s.task.task_id.as_str()).copied().unwrap_or(&s.task);
        if let Some(o) = &summary.outcome {
            report.add(o.label.as_deref(), task, o.decision_offset_s);
        }
        if s.config.mode == Mode::Collection {
            streams.push(GameStreams::from_events(task.task_id.clone(), task.gold.clone(), &s.events));
        }
        summaries.push(summary);
    }

    let (resampled, resampled_games) = match &opts.resample {
        Some(plan) => {
            let usable: Vec<GameStreams> = streams.into_iter().filter(|g| g.worker_count() >= plan.k_players).collect();
            let config = sessions
                .iter()
                .find(|s| s.config.mode == Mode::Collection)
                .map(|s| {
                    s.config
                        .with_policy(opts.policy.unwrap_or(s.config.policy))
                        .with_fallback_index(opts.fallback_index_i.unwrap_or(s.config.fallback_index_i))
                });
            match config {
                Some(c) if !usable.is_empty() => (Some(resample_corpus::<f64>(&usable, plan, &c)?), usable.len()),
                _ => (None, 0),
            }
        }
        None => (None, 0),
    };

    Ok(ReplayReport {
        events: events.len(),
        identical,
        sessions: summaries,
        metrics: report.finish(),
        resampled,
        resampled_games,
    })
}

fn summarize(s: &ReplayedSession, opts: &ReplayOptions) -> SessionSummary {
    let mut config = s.config;
    let mut outcome = s.outcome.clone();
    if s.config.mode == Mode::Collection && outcome.is_some() {
        config = config
            .with_policy(opts.policy.unwrap_or(config.policy))
            .with_fallback_index(opts.fallback_index_i.unwrap_or(config.fallback_index_i));
        outcome = aggregate(&s.events, &config).ok();
    }
    let mut workers: Vec<&str> = s.events.iter().map(|e| e.worker_id.as_str()).collect();
    workers.sort_unstable();
    workers.dedup();
    SessionSummary {
        game_id: s.game_id.clone(),
        task_id: s.task.task_id.clone(),
        mode: s.config.mode,
        policy: config.policy,
        workers: workers.len(),
        answers: s.events.len(),
        outcome,
    }
}
