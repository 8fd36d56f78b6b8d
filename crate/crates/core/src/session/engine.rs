use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde_json::{json, Value};
use thiserror::Error;

use super::clock::{Clock, ManualClock, Timestamp};
use super::log::{EventLog, LogEvent, LogKind};
use super::{GameSession, GameState, Intake, Playlist};
use crate::aggregation::{AnswerEvent, GameOutcome};
use crate::domain::{validate_task, ConfigError, DialogTask, GameConfig, Mode, Policy, Utterance};

/// Worker id of the scripted partner in tutorial games.
pub const TUTORIAL_PARTNER: &str = "tutorial-partner";

/// The scripted warm-up game shown before a worker's first real game.
pub fn tutorial_task() -> DialogTask {
    DialogTask {
        task_id: "tutorial".into(),
        category: "tutorial".into(),
        utterances: vec![
            Utterance::agent("Hi! What can I get for you today?"),
            Utterance::user("Can I have a bubble tea, please?"),
        ],
        slot_name: "food_name".into(),
        slot_prompt: crate::domain::FOOD_PROMPT.into(),
        slot_explanation: crate::domain::FOOD_EXPLANATION.into(),
        gold: Some("bubble tea".into()),
        aux_gold: BTreeMap::new(),
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("unknown game {0:?}")]
    GameNotFound(String),
    #[error("unknown playlist {0:?}")]
    PlaylistNotFound(String),
    #[error("game {0:?} already exists")]
    DuplicateGame(String),
    #[error("playlist {0:?} already exists")]
    DuplicatePlaylist(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("game {0:?} has not reached its deadline")]
    NotDue(String),
    #[error("playlist {0:?} is already done")]
    PlaylistDone(String),
    #[error("current game {0:?} is still being played")]
    GameStillActive(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Advance {
    Next(String),
    Done,
}

#[derive(Debug, Error, PartialEq)]
#[error("event {index}: {message}")]
pub struct ReplayError {
    /// 0-based position of the offending event.
    pub index: usize,
    pub message: String,
}

/// A session as rebuilt from a log.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedSession {
    pub game_id: String,
    pub task: DialogTask,
    pub config: GameConfig,
    pub state: GameState,
    pub events: Vec<AnswerEvent>,
    pub outcome: Option<GameOutcome>,
}

type Shared<T> = Arc<Mutex<T>>;

/// Owns every session and playlist and the shared event log.
///
/// Each session and playlist has its own lock, so games progress
/// independently. A mutation appends its log events before it returns.
pub struct Engine {
    clock: Arc<dyn Clock>,
    sessions: RwLock<BTreeMap<String, Shared<GameSession>>>,
    playlists: RwLock<BTreeMap<String, Shared<Playlist>>>,
    log: Arc<EventLog>,
    next_game: AtomicU64,
}

impl Engine {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self::with_log(clock, Arc::new(EventLog::default()))
    }

    pub fn with_log(clock: Arc<dyn Clock>, log: Arc<EventLog>) -> Self {
        Self {
            clock,
            sessions: RwLock::new(BTreeMap::new()),
            playlists: RwLock::new(BTreeMap::new()),
            log,
            next_game: AtomicU64::new(1),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    fn fresh_id(&self, prefix: &str) -> String {
        let n = self.next_game.fetch_add(1, Ordering::SeqCst);
        format!("{prefix}-{n:06}")
    }

    fn check(task: &DialogTask, config: &GameConfig) -> Result<(), EngineError> {
        config.validate()?;
        let v = validate_task(task);
        if !v.is_empty() {
            let msg = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
            return Err(EngineError::InvalidTask(msg));
        }
        Ok(())
    }

    /// Creates a game and starts its timer now.
    pub fn create_session(&self, task: DialogTask, config: GameConfig) -> Result<String, EngineError> {
        let id = self.fresh_id("g");
        self.create_session_with_id(&id, task, config)?;
        Ok(id)
    }

    pub fn create_session_with_id(&self, id: &str, task: DialogTask, config: GameConfig) -> Result<(), EngineError> {
        Self::check(&task, &config)?;
        let mut sessions = self.sessions.write().unwrap();
        if sessions.contains_key(id) {
            return Err(EngineError::DuplicateGame(id.to_string()));
        }
        let mut s = GameSession::pending(id, task, config);
        let logs = s.activate(self.clock.now());
        self.log.append(logs);
        sessions.insert(id.to_string(), Arc::new(Mutex::new(s)));
        Ok(())
    }

    /// Creates a game whose timer starts when a playlist reaches it.
    pub fn create_pending(&self, task: DialogTask, config: GameConfig) -> Result<String, EngineError> {
        Self::check(&task, &config)?;
        let id = self.fresh_id("g");
        let s = GameSession::pending(&id, task, config);
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(Mutex::new(s)));
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Shared<GameSession>, EngineError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::GameNotFound(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sessions.read().unwrap().contains_key(id)
    }

    pub fn game_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap().keys().cloned().collect()
    }

    /// A consistent copy of a session's current state.
    pub fn snapshot(&self, id: &str) -> Result<GameSession, EngineError> {
        Ok(self.session(id)?.lock().unwrap().clone())
    }

    pub fn outcome(&self, id: &str) -> Result<Option<GameOutcome>, EngineError> {
        Ok(self.session(id)?.lock().unwrap().outcome().cloned())
    }

    pub fn submit_answer(&self, id: &str, worker_id: &str, raw_text: &str) -> Result<Intake, EngineError> {
        let s = self.session(id)?;
        let mut s = s.lock().unwrap();
        let (intake, logs) = s.submit_answer(worker_id, raw_text, self.clock.now());
        self.log.append(logs);
        Ok(intake)
    }

    /// Closes a game that reached its deadline. Calling it again returns
    /// the same outcome.
    pub fn expire(&self, id: &str) -> Result<Option<GameOutcome>, EngineError> {
        let s = self.session(id)?;
        let mut s = s.lock().unwrap();
        if s.state() == GameState::Closed {
            return Ok(s.outcome().cloned());
        }
        let now = self.clock.now();
        if !s.is_due(now) {
            return Err(EngineError::NotDue(id.to_string()));
        }
        let (outcome, logs) = s.expire(now);
        self.log.append(logs);
        Ok(outcome)
    }

    /// Closes every started game whose deadline has passed. Returns their
    /// ids in id order.
    pub fn expire_due(&self) -> Vec<String> {
        let all: Vec<(String, Shared<GameSession>)> = self
            .sessions
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut closed = Vec::new();
        for (id, s) in all {
            let mut s = s.lock().unwrap();
            let now = self.clock.now();
            if matches!(s.state(), GameState::Active | GameState::Decided) && s.is_due(now) {
                let (_, logs) = s.expire(now);
                self.log.append(logs);
                closed.push(id);
            }
        }
        closed
    }

    /// Appends an event that carries no engine semantics (typing
    /// indicators, recruitment, worker arrival).
    pub fn record(&self, kind: LogKind, game_id: Option<&str>, worker_id: Option<&str>, payload: Value) {
        self.log.append(vec![LogEvent::new(self.clock.now(), kind, game_id, worker_id, payload)]);
    }

    fn playlist(&self, id: &str) -> Result<Shared<Playlist>, EngineError> {
        self.playlists
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::PlaylistNotFound(id.to_string()))
    }

    pub fn playlist_snapshot(&self, id: &str) -> Result<Playlist, EngineError> {
        Ok(self.playlist(id)?.lock().unwrap().clone())
    }

    pub fn has_playlist(&self, id: &str) -> bool {
        self.playlists.read().unwrap().contains_key(id)
    }

    /// Registers a playlist. With `tutorial_first`, a scripted tutorial
    /// game is prepended. Nothing starts until [`Engine::start_playlist`].
    pub fn create_playlist(
        &self,
        worker_session_id: &str,
        games: Vec<String>,
        tutorial_first: bool,
    ) -> Result<(), EngineError> {
        for g in &games {
            self.session(g)?;
        }
        let mut list = Vec::with_capacity(games.len() + 1);
        if tutorial_first {
            let cfg = GameConfig::new(20.0, Policy::EspOnly, 1, Mode::Live)?;
            list.push(self.create_pending(tutorial_task(), cfg)?);
        }
        list.extend(games);
        let mut playlists = self.playlists.write().unwrap();
        if playlists.contains_key(worker_session_id) {
            return Err(EngineError::DuplicatePlaylist(worker_session_id.to_string()));
        }
        playlists.insert(
            worker_session_id.to_string(),
            Arc::new(Mutex::new(Playlist {
                worker_session_id: worker_session_id.to_string(),
                games: list,
                cursor: 0,
                tutorial_first,
            })),
        );
        Ok(())
    }

    fn enter_game(&self, playlist: &Playlist) -> Result<(), EngineError> {
        let Some(game) = playlist.current() else {
            return Ok(());
        };
        let s = self.session(game)?;
        let mut s = s.lock().unwrap();
        let now = self.clock.now();
        let mut logs = s.activate(now);
        let is_tutorial = playlist.tutorial_first && playlist.cursor == 0;
        if is_tutorial && !logs.is_empty() {
            let gold = s.task.gold.clone().unwrap_or_default();
            let (_, more) = s.submit_answer(TUTORIAL_PARTNER, &gold, now);
            logs.extend(more);
        }
        self.log.append(logs);
        Ok(())
    }

    /// Starts the playlist's current game (a no-op if it already runs) and
    /// returns its id, or `None` when the playlist is done.
    pub fn start_playlist(&self, id: &str) -> Result<Option<String>, EngineError> {
        let p = self.playlist(id)?;
        let p = p.lock().unwrap();
        self.enter_game(&p)?;
        Ok(p.current().map(str::to_string))
    }

    /// Moves past a finished game and starts the next one's timer. Emits a
    /// `playlist_advanced` alert either way.
    pub fn advance_playlist(&self, id: &str) -> Result<Advance, EngineError> {
        let p = self.playlist(id)?;
        let mut p = p.lock().unwrap();
        let Some(current) = p.current().map(str::to_string) else {
            return Err(EngineError::PlaylistDone(id.to_string()));
        };
        if !self.session(&current)?.lock().unwrap().is_finished() {
            return Err(EngineError::GameStillActive(current));
        }
        p.cursor += 1;
        let next = p.current().map(str::to_string);
        self.log.append(vec![LogEvent::new(
            self.clock.now(),
            LogKind::PlaylistAdvanced,
            Some(&current),
            Some(id),
            json!({ "cursor": p.cursor, "next_game_id": next, "done": next.is_none() }),
        )]);
        self.enter_game(&p)?;
        Ok(match next {
            Some(g) => Advance::Next(g),
            None => Advance::Done,
        })
    }

    /// Advances every playlist whose current game has finished. Returns the
    /// playlist ids that moved.
    pub fn advance_finished_playlists(&self) -> Vec<String> {
        let ids: Vec<String> = self.playlists.read().unwrap().keys().cloned().collect();
        ids.into_iter()
            .filter(|id| self.advance_playlist(id).is_ok())
            .collect()
    }

    /// Rebuilds an engine by feeding a log's input events through it.
    /// `match` and `game_decided` are regenerated rather than read, so the
    /// rebuilt engine's log equals the input exactly when the input was
    /// produced by this engine.
    pub fn replay(events: &[LogEvent]) -> Result<(Engine, Vec<ReplayedSession>), ReplayError> {
        let clock = ManualClock::default();
        let engine = Engine::new(Arc::new(clock.clone()));
        let err = |index: usize, message: String| ReplayError { index, message };
        for (index, ev) in events.iter().enumerate() {
            clock.set(ev.at);
            let game = || {
                ev.game_id
                    .as_deref()
                    .ok_or_else(|| err(index, format!("{} without game_id", ev.kind)))
            };
            match ev.kind {
                LogKind::UtteranceReceived => {
                    let task: DialogTask = serde_json::from_value(ev.payload["task"].clone())
                        .map_err(|e| err(index, format!("bad task payload: {e}")))?;
                    let config: GameConfig = serde_json::from_value(ev.payload["config"].clone())
                        .map_err(|e| err(index, format!("bad config payload: {e}")))?;
                    engine
                        .create_session_with_id(game()?, task, config)
                        .map_err(|e| err(index, e.to_string()))?;
                }
                LogKind::AnswerSubmitted => {
                    let worker = ev
                        .worker_id
                        .as_deref()
                        .ok_or_else(|| err(index, "answer without worker_id".into()))?;
                    let text = ev.payload["text"]
                        .as_str()
                        .ok_or_else(|| err(index, "answer without text".into()))?;
                    engine
                        .submit_answer(game()?, worker, text)
                        .map_err(|e| err(index, e.to_string()))?;
                }
                LogKind::GameClosed => {
                    engine.expire(game()?).map_err(|e| err(index, e.to_string()))?;
                }
                k if k.is_derived() => {}
                _ => engine.log.append(vec![ev.clone()]),
            }
        }
        let sessions = engine
            .sessions
            .read()
            .unwrap()
            .values()
            .map(|s| {
                let s = s.lock().unwrap();
                ReplayedSession {
                    game_id: s.game_id.clone(),
                    task: s.task.clone(),
                    config: s.config,
                    state: s.state(),
                    events: s.events().to_vec(),
                    outcome: s.outcome().cloned(),
                }
            })
            .collect();
        Ok((engine, sessions))
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("games", &self.sessions.read().unwrap().len())
            .field("playlists", &self.playlists.read().unwrap().len())
            .field("log", &self.log)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::sample_task;

    fn setup() -> (ManualClock, Engine) {
        let clock = ManualClock::new(Timestamp::from_millis(1_800_000_000_000));
        let engine = Engine::new(Arc::new(clock.clone()));
        (clock, engine)
    }

    #[test]
    fn distinct_ids_and_deadline() {
        let (_, e) = setup();
        let a = e.create_session(sample_task(), GameConfig::default()).unwrap();
        let b = e.create_session(sample_task(), GameConfig::default()).unwrap();
        assert_ne!(a, b);
        let s = e.snapshot(&a).unwrap();
        assert_eq!(s.state(), GameState::Active);
        assert_eq!(s.deadline().unwrap().secs_since(s.started_at().unwrap()), 20.0);
        assert_eq!(e.log().snapshot()[0].kind, LogKind::UtteranceReceived);
    }

    #[test]
    fn invalid_task_rejected() {
        let (_, e) = setup();
        let mut t = sample_task();
        t.utterances.clear();
        assert!(matches!(
            e.create_session(t, GameConfig::default()),
            Err(EngineError::InvalidTask(_))
        ));
        assert_eq!(e.submit_answer("nope", "w", "x"), Err(EngineError::GameNotFound("nope".into())));
    }

    #[test]
    fn expire_requires_deadline() {
        let (clock, e) = setup();
        let g = e.create_session(sample_task(), GameConfig::default()).unwrap();
        assert_eq!(e.expire(&g), Err(EngineError::NotDue(g.clone())));
        clock.advance_secs(20.0);
        assert_eq!(e.expire(&g).unwrap(), Some(GameOutcome::empty(20.0)));
        assert_eq!(e.expire(&g).unwrap(), Some(GameOutcome::empty(20.0)));
        let kinds: Vec<LogKind> = e.log().snapshot().iter().map(|l| l.kind).collect();
        assert_eq!(kinds, vec![LogKind::UtteranceReceived, LogKind::GameDecided, LogKind::GameClosed]);
    }

    #[test]
    fn playlist_flow_with_tutorial() {
        let (clock, e) = setup();
        let games: Vec<String> = (0..5)
            .map(|_| e.create_pending(sample_task(), GameConfig::default()).unwrap())
            .collect();
        e.create_playlist("ws1", games.clone(), true).unwrap();
        let tutorial = e.start_playlist("ws1").unwrap().unwrap();
        assert_eq!(e.snapshot(&tutorial).unwrap().task.task_id, "tutorial");

        // advancing while the tutorial runs is refused
        assert_eq!(e.advance_playlist("ws1"), Err(EngineError::GameStillActive(tutorial.clone())));

        clock.advance_secs(3.0);
        let r = e.submit_answer(&tutorial, "w1", "Bubble tea").unwrap();
        assert!(r.matched);
        assert_eq!(r.points_awarded, 1000);

        assert_eq!(e.advance_playlist("ws1").unwrap(), Advance::Next(games[0].clone()));
        let g1 = e.snapshot(&games[0]).unwrap();
        assert_eq!(g1.state(), GameState::Active);
        assert_eq!(g1.started_at(), Some(clock.now()));
        let alerts = e.log().snapshot().iter().filter(|l| l.kind == LogKind::PlaylistAdvanced).count();
        assert_eq!(alerts, 1);

        for (i, g) in games.iter().enumerate() {
            clock.advance_secs(20.0);
            e.expire(g).unwrap();
            let next = e.advance_playlist("ws1").unwrap();
            if i + 1 < games.len() {
                assert_eq!(next, Advance::Next(games[i + 1].clone()));
            } else {
                assert_eq!(next, Advance::Done);
            }
        }
        assert_eq!(e.advance_playlist("ws1"), Err(EngineError::PlaylistDone("ws1".into())));
        assert!(e.playlist_snapshot("ws1").unwrap().is_done());
    }

    #[test]
    fn replay_reproduces_log() {
        let (clock, e) = setup();
        let live = e.create_session(sample_task(), GameConfig::default()).unwrap();
        let coll = e
            .create_session(sample_task(), GameConfig::default().with_mode(Mode::Collection))
            .unwrap();
        e.record(LogKind::TaskPosted, Some(&live), None, json!({"postings": 120}));
        clock.advance_secs(2.0);
        e.submit_answer(&live, "w1", "Las Vegas").unwrap();
        e.submit_answer(&coll, "w1", "montreal").unwrap();
        clock.advance_secs(1.5);
        e.submit_answer(&live, "w2", "las vegas!").unwrap();
        e.submit_answer(&coll, "w2", "Montreal").unwrap();
        e.submit_answer(&live, "w3", "late to the party").unwrap();
        clock.advance_secs(30.0);
        e.submit_answer(&coll, "w3", "too late").unwrap();
        e.expire_due();

        let original = e.log().snapshot();
        let (replayed, sessions) = Engine::replay(&original).unwrap();
        assert_eq!(replayed.log().to_lines(), e.log().to_lines());
        assert_eq!(sessions.len(), 2);
        for s in sessions {
            assert_eq!(Some(s.outcome.clone().unwrap()), e.outcome(&s.game_id).unwrap());
        }
    }

    #[test]
    fn replay_reports_bad_events() {
        let ev = LogEvent::new(Timestamp::from_millis(0), LogKind::AnswerSubmitted, Some("g-x"), Some("w"), json!({"text": "a"}));
        let err = Engine::replay(&[ev]).err().unwrap();
        assert_eq!(err.index, 0);
    }

    #[test]
    fn concurrent_submissions_are_serialized() {
        let (clock, e) = setup();
        let e = Arc::new(e);
        let ids: Vec<String> = (0..8)
            .map(|_| e.create_session(sample_task(), GameConfig::default().with_mode(Mode::Collection)).unwrap())
            .collect();
        clock.advance_secs(1.0);
        std::thread::scope(|scope| {
            for w in 0..8 {
                let e = e.clone();
                let ids = ids.clone();
                scope.spawn(move || {
                    for id in &ids {
                        e.submit_answer(id, &format!("w{w}"), "las vegas").unwrap();
                    }
                });
            }
        });
        for id in &ids {
            let s = e.snapshot(id).unwrap();
            assert_eq!(s.events().len(), 8);
            assert_eq!(s.scores().values().sum::<u32>(), 2000);
        }
    }
}
