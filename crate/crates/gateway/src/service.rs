//! Request handling independent of the HTTP framework.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use dialog_esp::aggregation::aggregate;
use dialog_esp::crowd_sim::{plan_trial, worker_name, CrowdModel, TrialPlan};
use dialog_esp::session::{
    Clock, Engine, EngineError, EventLog, GameState, Intake, LogEvent, LogKind, Timestamp, TUTORIAL_PARTNER,
};
use dialog_esp::{normalize, DialogTask, GameConfig, GameOutcome, Mode, Policy, Utterance};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::params::{Params, SlotSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ServiceError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
}

impl From<EngineError> for ServiceError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::GameNotFound(_) | EngineError::PlaylistNotFound(_) => ServiceError::NotFound(e.to_string()),
            EngineError::InvalidTask(_) | EngineError::Config(_) => ServiceError::Validation(e.to_string()),
            _ => ServiceError::Conflict(e.to_string()),
        }
    }
}

/// Where workers come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Simulated crowds answer every posted game.
    Sim,
    /// Real workers claim games through the worker endpoints.
    Live,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sim" => Ok(RunMode::Sim),
            "live" => Ok(RunMode::Live),
            other => Err(format!("unknown mode {other:?}, expected sim or live")),
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Sim => "sim",
            RunMode::Live => "live",
        })
    }
}

/// Per-request changes to the deployment's game settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverride {
    pub time_constraint_s: Option<f64>,
    pub policy: Option<Policy>,
    pub fallback_index_i: Option<usize>,
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestRequest {
    pub conversation_id: String,
    pub text: String,
    pub slot_name: String,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    #[serde(default)]
    pub config: Option<ConfigOverride>,
    /// Reference value for simulated workers and offline scoring. Never
    /// shown to workers.
    #[serde(default)]
    pub gold: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestResponse {
    pub game_id: String,
    /// True when the idempotency key was seen before.
    pub duplicate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Pending,
    Decided,
    Closed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultQuery {
    pub policy: Option<Policy>,
    pub i: Option<usize>,
    pub wait_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultResponse {
    pub game_id: String,
    pub status: ResultStatus,
    pub policy: Policy,
    pub fallback_index_i: usize,
    pub outcome: Option<GameOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamePayload {
    pub game_id: String,
    pub task_id: String,
    pub dialog: Vec<Utterance>,
    pub slot_name: String,
    pub prompt: String,
    pub explanation: String,
    pub state: GameState,
    pub remaining_s: f64,
    pub deadline: Option<Timestamp>,
    pub tutorial: bool,
    pub playlist_id: String,
    pub position: usize,
    pub playlist_length: usize,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimResponse {
    pub worker_id: String,
    /// `None` when no game is open.
    pub game: Option<GamePayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub worker_id: String,
    pub text: String,
}

/// One line of an event stream. Resume with `cursor + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamLine {
    pub cursor: usize,
    pub event: LogEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamTarget {
    Game(String),
    Worker(String),
}

#[derive(Default)]
struct WorkerState {
    playlists: Vec<String>,
    assigned: HashSet<String>,
}

#[derive(Default)]
struct State {
    conversations: HashMap<String, Vec<Utterance>>,
    idempotency: HashMap<String, String>,
    workers: HashMap<String, WorkerState>,
}

pub struct Service {
    engine: Arc<Engine>,
    mode: RunMode,
    model: CrowdModel,
    speed: f64,
    seed: u64,
    game_config: GameConfig,
    slots: BTreeMap<String, SlotSpec>,
    playlist_length: usize,
    tick: Duration,
    state: Mutex<State>,
    posted: AtomicU64,
    log_len: watch::Receiver<usize>,
}

impl fmt::Debug for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Service")
            .field("mode", &self.mode)
            .field("engine", &self.engine)
            .finish()
    }
}

impl Service {
    pub fn new(params: &Params, mode: RunMode, seed: u64, clock: Arc<dyn Clock>, log: Arc<EventLog>) -> Arc<Self> {
        let (tx, rx) = watch::channel(log.len());
        log.subscribe(move |i, _| {
            tx.send_replace(i + 1);
        });
        Arc::new(Self {
            engine: Arc::new(Engine::with_log(clock, log)),
            mode,
            model: params.model,
            speed: params.serve.sim_speed,
            seed,
            game_config: params.game,
            slots: params.serve.slots.iter().map(|s| (s.name.clone(), s.clone())).collect(),
            playlist_length: params.serve.playlist_length.max(1),
            tick: Duration::from_millis(params.serve.tick_ms.max(1)),
            state: Mutex::new(State::default()),
            posted: AtomicU64::new(0),
            log_len: rx,
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn mode(&self) -> RunMode {
        self.mode
    }

    /// Starts a game for a new chat line and, in sim mode, its crowd.
    pub fn ingest(self: &Arc<Self>, req: IngestRequest) -> Result<IngestResponse, ServiceError> {
        let invalid = |m: &str| Err(ServiceError::Validation(m.to_string()));
        if req.conversation_id.trim().is_empty() {
            return invalid("conversation_id must not be empty");
        }
        if req.text.trim().is_empty() {
            return invalid("text must not be empty");
        }
        let Some(slot) = self.slots.get(&req.slot_name) else {
            return Err(ServiceError::Validation(format!("unknown slot_name {:?}", req.slot_name)));
        };
        let mut config = self.game_config;
        if let Some(o) = &req.config {
            config.time_constraint_s = o.time_constraint_s.unwrap_or(config.time_constraint_s);
            config.policy = o.policy.unwrap_or(config.policy);
            config.fallback_index_i = o.fallback_index_i.unwrap_or(config.fallback_index_i);
            config.mode = o.mode.unwrap_or(config.mode);
        }
        config.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;

        let mut st = self.state.lock().unwrap();
        if let Some(g) = req.idempotency_key.as_ref().and_then(|k| st.idempotency.get(k)) {
            return Ok(IngestResponse {
                game_id: g.clone(),
                duplicate: true,
            });
        }
        let history = st.conversations.entry(req.conversation_id.clone()).or_default();
        history.push(Utterance::user(req.text.trim()));
        let task = DialogTask {
            task_id: format!("{}#{}", req.conversation_id, history.len()),
            category: "chat".into(),
            utterances: history.clone(),
            slot_name: slot.name.clone(),
            slot_prompt: slot.prompt.clone(),
            slot_explanation: slot.explanation.clone(),
            gold: req.gold.as_deref().map(normalize).filter(|g| !g.is_empty()),
            aux_gold: BTreeMap::new(),
        };
        let game_id = match self.engine.create_session(task.clone(), config) {
            Ok(g) => g,
            Err(e) => {
                history.pop();
                return Err(e.into());
            }
        };
        if let Some(k) = req.idempotency_key {
            st.idempotency.insert(k, game_id.clone());
        }
        drop(st);

        let n = self.posted.fetch_add(1, Ordering::SeqCst);
        match self.mode {
            RunMode::Sim => {
                self.engine.record(
                    LogKind::TaskPosted,
                    Some(&game_id),
                    None,
                    json!({ "mode": "sim", "postings": self.model.recruitment.postings }),
                );
                let plan = plan_trial(&task, &config, &self.model, self.seed.wrapping_add(n))
                    .map_err(|e| ServiceError::Validation(e.to_string()))?;
                let svc = self.clone();
                let id = game_id.clone();
                tokio::spawn(async move { svc.drive(&id, plan).await });
            }
            RunMode::Live => {
                self.engine
                    .record(LogKind::TaskPosted, Some(&game_id), None, json!({ "mode": "live" }));
            }
        }
        Ok(IngestResponse {
            game_id,
            duplicate: false,
        })
    }

    async fn sleep_until(&self, target: Timestamp) {
        loop {
            let now = self.engine.now();
            if now >= target {
                return;
            }
            let ahead = target.secs_since(now) / self.speed.max(1e-9);
            tokio::time::sleep(Duration::from_secs_f64(ahead)).await;
        }
    }

    /// Plays a simulated crowd's answers against the real clock.
    async fn drive(&self, game_id: &str, plan: TrialPlan) {
        let Some(start) = self.engine.snapshot(game_id).ok().and_then(|s| s.started_at()) else {
            return;
        };
        enum Step {
            Arrive(usize),
            Answer(usize, String),
        }
        let mut steps: Vec<(f64, Step)> = plan.arrivals.iter().enumerate().map(|(w, &a)| (a, Step::Arrive(w))).collect();
        steps.extend(plan.submissions.into_iter().map(|s| (s.at, Step::Answer(s.worker, s.text))));
        steps.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (at, step) in steps {
            self.sleep_until(start.add_secs(at)).await;
            match step {
                Step::Arrive(w) => {
                    let worker = format!("sim-{}", worker_name(w));
                    self.engine.record(LogKind::WorkerArrived, Some(game_id), Some(&worker), json!({}));
                }
                Step::Answer(w, text) => {
                    let worker = format!("sim-{}", worker_name(w));
                    // a late answer is logged as rejected, like a real one
                    let _ = self.engine.submit_answer(game_id, &worker, &text);
                }
            }
        }
    }

    /// Closes due games and moves playlists past finished games.
    pub fn tick(&self) {
        self.engine.expire_due();
        self.engine.advance_finished_playlists();
    }

    pub fn spawn_ticker(self: &Arc<Self>) -> JoinHandle<()> {
        let svc = self.clone();
        tokio::spawn(async move {
            let mut every = tokio::time::interval(svc.tick);
            every.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                every.tick().await;
                svc.tick();
            }
        })
    }

    fn payload(&self, worker: &str, playlist_id: &str, game_id: &str) -> Result<GamePayload, ServiceError> {
        let p = self.engine.playlist_snapshot(playlist_id)?;
        let s = self.engine.snapshot(game_id)?;
        Ok(GamePayload {
            game_id: game_id.to_string(),
            task_id: s.task.task_id.clone(),
            dialog: s.task.utterances.clone(),
            slot_name: s.task.slot_name.clone(),
            prompt: s.task.slot_prompt.clone(),
            explanation: s.task.slot_explanation.clone(),
            state: s.state(),
            remaining_s: s.remaining_s(self.engine.now()),
            deadline: s.deadline(),
            tutorial: p.tutorial_first && p.cursor == 0,
            playlist_id: playlist_id.to_string(),
            position: p.cursor,
            playlist_length: p.games.len(),
            points: s.scores().get(worker).copied().unwrap_or(0),
        })
    }

    /// The worker's current game. New workers get a playlist of open games
    /// that starts with the tutorial.
    pub fn claim(&self, worker: &str) -> Result<ClaimResponse, ServiceError> {
        if worker.trim().is_empty() || worker == TUTORIAL_PARTNER {
            return Err(ServiceError::Validation("invalid worker id".into()));
        }
        let none = || ClaimResponse {
            worker_id: worker.to_string(),
            game: None,
        };
        let mut st = self.state.lock().unwrap();
        let ws = st.workers.entry(worker.to_string()).or_default();

        if let Some(pid) = ws.playlists.last().cloned() {
            loop {
                let p = self.engine.playlist_snapshot(&pid)?;
                let Some(current) = p.current() else { break };
                if self.engine.snapshot(current)?.is_finished() {
                    self.engine.advance_playlist(&pid)?;
                    continue;
                }
                let game = self.engine.start_playlist(&pid)?.expect("playlist has a current game");
                return Ok(ClaimResponse {
                    worker_id: worker.to_string(),
                    game: Some(self.payload(worker, &pid, &game)?),
                });
            }
        }

        let now = self.engine.now();
        let open: Vec<String> = self
            .engine
            .game_ids()
            .into_iter()
            .filter(|g| !ws.assigned.contains(g))
            .filter(|g| {
                self.engine.snapshot(g).is_ok_and(|s| {
                    s.state() == GameState::Active && s.remaining_s(now) > 0.0 && s.task.task_id != "tutorial"
                })
            })
            .take(self.playlist_length)
            .collect();
        if open.is_empty() {
            return Ok(none());
        }
        let tutorial = ws.playlists.is_empty();
        let pid = format!("{worker}/{}", ws.playlists.len() + 1);
        self.engine.create_playlist(&pid, open.clone(), tutorial)?;
        ws.assigned.extend(open.iter().cloned());
        ws.playlists.push(pid.clone());
        self.engine.record(
            LogKind::WorkerArrived,
            None,
            Some(worker),
            json!({ "playlist_id": pid, "games": open, "tutorial": tutorial }),
        );
        let game = self.engine.start_playlist(&pid)?.expect("new playlists are not empty");
        Ok(ClaimResponse {
            worker_id: worker.to_string(),
            game: Some(self.payload(worker, &pid, &game)?),
        })
    }

    pub fn answer(&self, game_id: &str, req: &AnswerRequest) -> Result<Intake, ServiceError> {
        if req.worker_id.trim().is_empty() {
            return Err(ServiceError::Validation("worker_id must not be empty".into()));
        }
        Ok(self.engine.submit_answer(game_id, &req.worker_id, &req.text)?)
    }

    /// The game's outcome, waiting up to `wait_s` (default 60) for it. A
    /// policy or index override re-aggregates the recorded answers once a
    /// collection-mode game has closed.
    pub async fn result(&self, game_id: &str, q: &ResultQuery) -> Result<ResultResponse, ServiceError> {
        let first = self.engine.snapshot(game_id)?;
        let overridden = q.policy.is_some() || q.i.is_some();
        if overridden && first.config.mode != Mode::Collection {
            return Err(ServiceError::Validation(
                "policy override applies only to collection-mode games".into(),
            ));
        }
        let config = first
            .config
            .with_policy(q.policy.unwrap_or(first.config.policy))
            .with_fallback_index(q.i.unwrap_or(first.config.fallback_index_i));
        config.validate().map_err(|e| ServiceError::Validation(e.to_string()))?;
        let wait = Duration::from_secs_f64(q.wait_s.unwrap_or(60.0).clamp(0.0, 3600.0));
        let until = tokio::time::Instant::now() + wait;
        let mut rx = self.log_len.clone();
        loop {
            rx.borrow_and_update();
            let s = self.engine.snapshot(game_id)?;
            let ready = if overridden {
                s.state() == GameState::Closed
            } else {
                s.outcome().is_some()
            };
            if ready || tokio::time::Instant::now() >= until {
                let outcome = match (ready, overridden) {
                    (false, _) => None,
                    (true, true) => Some(aggregate(s.events(), &config).map_err(|e| ServiceError::Conflict(e.to_string()))?),
                    (true, false) => s.outcome().cloned(),
                };
                let status = match (s.state(), outcome.is_some()) {
                    (GameState::Closed, true) => ResultStatus::Closed,
                    (GameState::Decided, true) => ResultStatus::Decided,
                    _ => ResultStatus::Pending,
                };
                return Ok(ResultResponse {
                    game_id: game_id.to_string(),
                    status,
                    policy: config.policy,
                    fallback_index_i: config.fallback_index_i,
                    outcome,
                });
            }
            if tokio::time::timeout_at(until, rx.changed()).await.is_ok_and(|r| r.is_err()) {
                tokio::time::sleep_until(until).await;
            }
        }
    }

    pub fn check_target(&self, target: &StreamTarget) -> Result<(), ServiceError> {
        match target {
            StreamTarget::Game(g) => self.engine.snapshot(g).map(|_| ()).map_err(Into::into),
            StreamTarget::Worker(w) => {
                if self.state.lock().unwrap().workers.contains_key(w) {
                    Ok(())
                } else {
                    Err(ServiceError::NotFound(format!("unknown worker {w:?}")))
                }
            }
        }
    }

    fn worker_games(&self, worker: &str) -> HashSet<String> {
        let st = self.state.lock().unwrap();
        let Some(ws) = st.workers.get(worker) else {
            return HashSet::new();
        };
        ws.playlists
            .iter()
            .filter_map(|p| self.engine.playlist_snapshot(p).ok())
            .flat_map(|p| p.games)
            .collect()
    }

    /// Log events for the target from position `cursor` on, as they are
    /// appended. A game stream ends after the game's `game_closed` event.
    /// Worker streams hide reference labels.
    pub fn event_stream(self: &Arc<Self>, target: StreamTarget, cursor: usize) -> impl Stream<Item = String> + Send + 'static {
        struct Tail {
            next: usize,
            done: bool,
            rx: watch::Receiver<usize>,
        }
        let svc = self.clone();
        let start = Tail {
            next: cursor,
            done: false,
            rx: self.log_len.clone(),
        };
        futures::stream::unfold(start, move |mut tail| {
            let svc = svc.clone();
            let target = target.clone();
            async move {
                loop {
                    if tail.done {
                        return None;
                    }
                    tail.rx.borrow_and_update();
                    // read the state before the log so a close is never missed
                    let closed = match &target {
                        StreamTarget::Game(g) => svc.engine.snapshot(g).is_ok_and(|s| s.state() == GameState::Closed),
                        StreamTarget::Worker(_) => false,
                    };
                    let games = match &target {
                        StreamTarget::Worker(w) => svc.worker_games(w),
                        StreamTarget::Game(_) => HashSet::new(),
                    };
                    let base = tail.next;
                    let events = svc.engine.log().since(base);
                    tail.next += events.len();
                    let mut out = String::new();
                    for (k, e) in events.iter().enumerate() {
                        let hit = match &target {
                            StreamTarget::Game(g) => e.game_id.as_deref() == Some(g),
                            StreamTarget::Worker(w) => {
                                let own = e.worker_id.as_deref().is_some_and(|id| {
                                    id == w || id.strip_prefix(w.as_str()).is_some_and(|r| r.starts_with('/'))
                                });
                                own || e.game_id.as_ref().is_some_and(|g| games.contains(g))
                            }
                        };
                        if !hit {
                            continue;
                        }
                        let mut event = e.clone();
                        if matches!(target, StreamTarget::Worker(_)) {
                            redact_gold(&mut event);
                        }
                        let line = StreamLine {
                            cursor: base + k,
                            event,
                        };
                        out.push_str(&serde_json::to_string(&line).expect("serializable"));
                        out.push('\n');
                        if matches!(target, StreamTarget::Game(_)) && e.kind == LogKind::GameClosed {
                            tail.done = true;
                            break;
                        }
                    }
                    if !out.is_empty() {
                        return Some((out, tail));
                    }
                    if closed || tail.rx.changed().await.is_err() {
                        return None;
                    }
                }
            }
        })
    }
}

/// Workers never see reference labels.
fn redact_gold(e: &mut LogEvent) {
    if let Some(task) = e.payload.get_mut("task").and_then(|t| t.as_object_mut()) {
        task.insert("gold".into(), serde_json::Value::Null);
        task.insert("aux_gold".into(), json!({}));
    }
}
