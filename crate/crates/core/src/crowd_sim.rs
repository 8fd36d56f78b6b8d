//! Discrete-event simulation of fleeting-task recruitment and worker
//! behavior, driven through the session engine on a virtual clock.

use std::io::{self, BufRead, Write};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::aggregation::{first_match, AnswerEvent, GameOutcome, GameStreams};
use crate::domain::{DialogTask, GameConfig, Mode, Policy, Utterance};
use crate::evaluation::{summarize_timeline, StatsError, TimelineStats, TimelineSummary, TrialTimeline};
use crate::matching::{normalize, tokens};
use crate::session::{Engine, LogEvent, LogKind, ManualClock, Timestamp};

#[derive(Debug, Error, PartialEq)]
pub enum CrowdError {
    #[error("invalid recruitment model: {0}")]
    Recruitment(String),
    #[error("invalid worker behavior: {0}")]
    Behavior(String),
    #[error(transparent)]
    Targets(#[from] StatsError),
    #[error("search budget must be at least 1")]
    Budget,
    #[error("trial failed: {0}")]
    Engine(String),
}

/// Fleeting-task recruitment: many short-lived postings, each reaching the
/// marketplace after a routing delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecruitmentModel {
    pub postings: usize,
    pub lifetime_s: f64,
    pub routing_delay_range_s: (f64, f64),
    /// Claims per second on each visible posting. `None` claims a posting
    /// the moment it becomes visible.
    pub claim_rate_per_s: Option<f64>,
    /// Scales every routing delay (time-of-day effect).
    #[serde(default = "one")]
    pub routing_multiplier: f64,
}

fn one() -> f64 {
    1.0
}

impl RecruitmentModel {
    /// 120 postings with a 60 s lifetime and 5 to 40 s routing.
    pub fn fleeting(claim_rate_per_s: f64) -> Self {
        Self {
            postings: 120,
            lifetime_s: 60.0,
            routing_delay_range_s: (5.0, 40.0),
            claim_rate_per_s: Some(claim_rate_per_s),
            routing_multiplier: 1.0,
        }
    }

    /// A pre-recruited waiting pool. Workers are signalled with no routing
    /// delay and three quarters of them answer the signal within 3 s.
    pub fn retainer(pool: usize) -> Self {
        Self {
            postings: pool,
            lifetime_s: 60.0,
            routing_delay_range_s: (0.0, 0.0),
            claim_rate_per_s: Some(4f64.ln() / 3.0),
            routing_multiplier: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), CrowdError> {
        let bad = |m: &str| Err(CrowdError::Recruitment(m.to_string()));
        let (lo, hi) = self.routing_delay_range_s;
        if !(self.lifetime_s > 0.0 && self.lifetime_s.is_finite()) {
            return bad("lifetime_s must be positive");
        }
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad("routing delay range must satisfy 0 <= low <= high");
        }
        if !(self.routing_multiplier > 0.0 && self.routing_multiplier.is_finite()) {
            return bad("routing_multiplier must be positive");
        }
        if let Some(r) = self.claim_rate_per_s {
            if !(r > 0.0 && r.is_finite()) {
                return bad("claim_rate_per_s must be positive");
            }
        }
        Ok(())
    }
}

/// Arrivals produced by one batch of postings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recruitment {
    /// Worker arrival offsets, ascending.
    pub arrivals: Vec<f64>,
    /// Postings that produced no worker: routed too late or never claimed.
    pub expired: usize,
}

impl Recruitment {
    pub fn expired_fraction(&self, postings: usize) -> f64 {
        if postings == 0 {
            0.0
        } else {
            self.expired as f64 / postings as f64
        }
    }
}

/// Draws routing and claim times for every posting. A posting is claimable
/// from its routing delay until its lifetime ends; arrivals at or past
/// `horizon_s` are dropped too.
pub fn simulate_recruitment(model: &RecruitmentModel, horizon_s: f64, seed: u64) -> Recruitment {
    recruit(model, horizon_s, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn recruit<R: Rng>(model: &RecruitmentModel, horizon_s: f64, rng: &mut R) -> Recruitment {
    let (lo, hi) = model.routing_delay_range_s;
    let claim = model.claim_rate_per_s.map(|r| Exp::new(r).expect("validated rate"));
    let close = model.lifetime_s.min(horizon_s);
    let mut arrivals = Vec::new();
    let mut expired = 0;
    for _ in 0..model.postings {
        let routed = (lo + (hi - lo) * rng.random::<f64>()) * model.routing_multiplier;
        let wait = claim.map_or(0.0, |d| d.sample(rng));
        if routed >= model.lifetime_s {
            expired += 1;
            continue;
        }
        let at = routed + wait;
        if at < close {
            arrivals.push(at);
        } else {
            expired += 1;
        }
    }
    arrivals.sort_by(f64::total_cmp);
    Recruitment { arrivals, expired }
}

/// Probabilities of each kind of answer a worker may give.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMix {
    pub correct: f64,
    pub distractor_slot: f64,
    pub wrong_entity: f64,
    pub substring: f64,
    pub typo: f64,
    pub no_answer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Correct,
    DistractorSlot,
    WrongEntity,
    Substring,
    Typo,
    NoAnswer,
}

impl OutcomeMix {
    pub fn perfect() -> Self {
        Self::from_errors(1.0, [0.0; 5])
    }

    /// Spreads `1 - correct` over the errors in proportion to `errors`
    /// (distractor, wrong entity, substring, typo, no answer).
    pub fn from_errors(correct: f64, errors: [f64; 5]) -> Self {
        let total: f64 = errors.iter().sum();
        let w = |x: f64| if total > 0.0 { (1.0 - correct) * x / total } else { 0.0 };
        let mut mix = Self {
            correct,
            distractor_slot: w(errors[0]),
            wrong_entity: w(errors[1]),
            substring: w(errors[2]),
            typo: w(errors[3]),
            no_answer: w(errors[4]),
        };
        if total == 0.0 {
            mix.no_answer = 1.0 - correct;
        }
        mix
    }

    /// Error mass of the flight-query (Class D) analysis: departure city,
    /// incorrect city plus false positives, soft matches, false negatives.
    pub fn flight_prior(correct: f64) -> Self {
        Self::from_errors(correct, [0.3953, 0.1628 + 0.0930, 0.1628, 0.0, 0.1860])
    }

    /// Error mass of the chat user study, leaving out system problems.
    pub fn chat_prior(correct: f64) -> Self {
        Self::from_errors(correct, [0.0, 0.0, 0.1250, 0.0417, 0.4583])
    }

    fn weights(&self) -> [(AnswerKind, f64); 6] {
        [
            (AnswerKind::Correct, self.correct),
            (AnswerKind::DistractorSlot, self.distractor_slot),
            (AnswerKind::WrongEntity, self.wrong_entity),
            (AnswerKind::Substring, self.substring),
            (AnswerKind::Typo, self.typo),
            (AnswerKind::NoAnswer, self.no_answer),
        ]
    }

    pub fn validate(&self) -> Result<(), CrowdError> {
        let w = self.weights();
        if w.iter().any(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(CrowdError::Behavior("probabilities must lie in [0, 1]".into()));
        }
        let sum: f64 = w.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CrowdError::Behavior(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> AnswerKind {
        let mut u = rng.random::<f64>();
        let w = self.weights();
        for (kind, p) in w {
            if u < p {
                return kind;
            }
            u -= p;
        }
        w.iter().rev().find(|(_, p)| *p > 0.0).map_or(AnswerKind::NoAnswer, |(k, _)| *k)
    }
}

/// How one simulated worker plays a game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerBehavior {
    /// Median think time per answer.
    pub median_s: f64,
    /// Log-normal shape; 0 makes every think time equal the median.
    pub sigma: f64,
    pub outcome_mix: OutcomeMix,
    /// Mean answers per worker per game, at least 1.
    pub answers_per_game: f64,
    /// Chance a submission is lost in transit.
    #[serde(default)]
    pub drop_probability: f64,
}

impl WorkerBehavior {
    pub fn new(median_s: f64, sigma: f64, outcome_mix: OutcomeMix, answers_per_game: f64) -> Self {
        Self {
            median_s,
            sigma,
            outcome_mix,
            answers_per_game,
            drop_probability: 0.0,
        }
    }

    /// Chat workers: about 2.3 answers each (33.81 answers from 14.45
    /// workers per trial).
    pub fn chat(median_s: f64, sigma: f64, correct: f64) -> Self {
        Self::new(median_s, sigma, OutcomeMix::chat_prior(correct), 33.81 / 14.45)
    }

    pub fn validate(&self) -> Result<(), CrowdError> {
        let bad = |m: &str| Err(CrowdError::Behavior(m.to_string()));
        if !(self.median_s > 0.0 && self.median_s.is_finite()) {
            return bad("median_s must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !(self.answers_per_game >= 1.0 && self.answers_per_game.is_finite()) {
            return bad("answers_per_game must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return bad("drop_probability must lie in [0, 1]");
        }
        self.outcome_mix.validate()
    }

    fn think_time<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.sigma == 0.0 {
            return self.median_s;
        }
        LogNormal::new(self.median_s.ln(), self.sigma)
            .expect("validated parameters")
            .sample(rng)
    }

    fn answer_count<R: Rng>(&self, rng: &mut R) -> usize {
        let extra = self.answers_per_game - 1.0;
        if extra <= 0.0 {
            return 1;
        }
        1 + Poisson::new(extra).expect("positive mean").sample(rng) as usize
    }
}

/// One worker answer, or `None` for silence.
pub fn generate_worker_answer<R: Rng>(behavior: &WorkerBehavior, task: &DialogTask, rng: &mut R) -> Option<String> {
    answer_of_kind(behavior.outcome_mix.draw(rng), task, rng)
}

/// Renders an answer of the given kind. Kinds that need a gold value fall
/// back as documented on each arm.
pub fn answer_of_kind<R: Rng>(kind: AnswerKind, task: &DialogTask, rng: &mut R) -> Option<String> {
    let gold = task.gold.as_deref();
    match kind {
        AnswerKind::Correct => gold.map(str::to_string),
        AnswerKind::NoAnswer => None,
        AnswerKind::DistractorSlot => {
            let values: Vec<&String> = task.aux_gold.values().collect();
            match values.choose(rng) {
                Some(v) => Some(v.to_string()),
                None => wrong_entity(task, rng),
            }
        }
        AnswerKind::WrongEntity => wrong_entity(task, rng),
        // single-token gold has no proper sub-span, so the worker is right
        AnswerKind::Substring => gold.map(|g| {
            let norm = normalize(g);
            let toks = tokens(&norm);
            if toks.len() < 2 {
                return g.to_string();
            }
            let len = rng.random_range(1..toks.len());
            let start = rng.random_range(0..=toks.len() - len);
            toks[start..start + len].join(" ")
        }),
        AnswerKind::Typo => gold.map(|g| typo(g, rng)),
    }
}

fn wrong_entity<R: Rng>(task: &DialogTask, rng: &mut R) -> Option<String> {
    let gold = task.gold.as_deref().map(normalize).unwrap_or_default();
    let gold = tokens(&gold);
    let mut pool: Vec<String> = task
        .utterances
        .iter()
        .flat_map(|u| {
            let text = normalize(&u.text);
            tokens(&text).into_iter().map(str::to_string).collect::<Vec<_>>()
        })
        .filter(|t| t.chars().count() >= 3 && !gold.contains(&t.as_str()))
        .collect();
    pool.sort();
    pool.dedup();
    pool.choose(rng).cloned()
}

fn typo<R: Rng>(gold: &str, rng: &mut R) -> String {
    let chars: Vec<char> = gold.chars().collect();
    let letters: Vec<usize> = (0..chars.len()).filter(|&i| chars[i].is_alphanumeric()).collect();
    for _ in 0..8 {
        let Some(&i) = letters.choose(rng) else { break };
        let mut c = chars.clone();
        match rng.random_range(0..4) {
            0 => c[i] = rng.random_range(b'a'..=b'z') as char,
            1 => {
                c.remove(i);
            }
            2 => c.insert(i, rng.random_range(b'a'..=b'z') as char),
            _ if i + 1 < c.len() => c.swap(i, i + 1),
            _ => c.swap(i, i.saturating_sub(1)),
        }
        let out: String = c.into_iter().collect();
        if !normalize(&out).is_empty() && normalize(&out) != normalize(gold) {
            return out;
        }
    }
    format!("{gold}x")
}

/// A recruitment and behavior pair; the unit of presets and fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdModel {
    pub recruitment: RecruitmentModel,
    pub behavior: WorkerBehavior,
}

impl CrowdModel {
    pub fn validate(&self) -> Result<(), CrowdError> {
        self.recruitment.validate()?;
        self.behavior.validate()
    }
}

/// A named model, one per line in preset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub model: CrowdModel,
}

/// Built-in models for comparison runs.
pub fn presets() -> Vec<Preset> {
    let chat = WorkerBehavior::chat(6.0, 0.5, 0.8);
    vec![
        Preset {
            name: "fleeting".into(),
            model: CrowdModel {
                recruitment: RecruitmentModel::fleeting(0.005),
                behavior: chat,
            },
        },
        Preset {
            name: "retainer".into(),
            model: CrowdModel {
                recruitment: RecruitmentModel::retainer(15),
                behavior: chat,
            },
        },
        Preset {
            name: "flight".into(),
            model: CrowdModel {
                recruitment: RecruitmentModel::fleeting(0.005),
                behavior: WorkerBehavior::new(6.0, 0.5, OutcomeMix::flight_prior(0.8), 1.0),
            },
        },
    ]
}

pub fn write_presets<W: Write>(mut w: W, presets: &[Preset]) -> io::Result<()> {
    for p in presets {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_presets<R: BufRead>(r: R) -> io::Result<Vec<Preset>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Preset = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        p.model
            .validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

/// Everything one simulated game produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// The engine's recorded answer stream.
    pub events: Vec<AnswerEvent>,
    pub outcome: GameOutcome,
    pub timeline: TrialTimeline,
    pub arrivals: Vec<f64>,
    pub expired_postings: usize,
    /// The engine's full event log for the game.
    pub log: Vec<LogEvent>,
}

/// Origin of the virtual clock in simulated trials.
pub const SIM_EPOCH: Timestamp = Timestamp::from_millis(1_767_225_600_000);

fn ms(t: f64) -> f64 {
    (t * 1000.0).round() / 1000.0
}

/// One answer a simulated worker will submit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    /// Offset from the posting, in whole milliseconds.
    pub at: f64,
    /// Index into the arrivals.
    pub worker: usize,
    pub text: String,
}

/// What a simulated crowd will do for one posted task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub arrivals: Vec<f64>,
    pub expired: usize,
    /// Time ordered; only answers due before the game deadline.
    pub submissions: Vec<Submission>,
}

/// Draws the arrivals and answers of one trial without playing it.
pub fn plan_trial(task: &DialogTask, config: &GameConfig, model: &CrowdModel, seed: u64) -> Result<TrialPlan, CrowdError> {
    model.validate()?;
    Ok(plan(task, config, &model.recruitment, &model.behavior, &mut ChaCha8Rng::seed_from_u64(seed)))
}

fn plan<R: Rng>(
    task: &DialogTask,
    config: &GameConfig,
    recruitment: &RecruitmentModel,
    behavior: &WorkerBehavior,
    rng: &mut R,
) -> TrialPlan {
    let deadline = (config.time_constraint_s * 1000.0).floor() / 1000.0;
    let hired = recruit(recruitment, deadline, rng);
    let submissions = plan_answers(&hired.arrivals, task, behavior, deadline, rng);
    TrialPlan {
        arrivals: hired.arrivals,
        expired: hired.expired,
        submissions,
    }
}

/// Answers each worker would submit, starting from its arrival, before
/// `deadline_s`. Dropped answers are already removed.
fn plan_answers<R: Rng>(
    arrivals: &[f64],
    task: &DialogTask,
    behavior: &WorkerBehavior,
    deadline_s: f64,
    rng: &mut R,
) -> Vec<Submission> {
    let mut subs = Vec::new();
    for (worker, &arrival) in arrivals.iter().enumerate() {
        let mut t = arrival;
        for _ in 0..behavior.answer_count(rng) {
            t += behavior.think_time(rng);
            if ms(t) >= deadline_s {
                break;
            }
            let answer = generate_worker_answer(behavior, task, rng);
            let dropped = behavior.drop_probability > 0.0 && rng.random::<f64>() < behavior.drop_probability;
            if let (Some(text), false) = (answer, dropped) {
                subs.push(Submission { at: ms(t), worker, text });
            }
        }
    }
    subs.sort_by(|a, b| a.at.total_cmp(&b.at).then(a.worker.cmp(&b.worker)));
    subs
}

/// Id of the `i`-th simulated worker of a trial.
pub fn worker_name(i: usize) -> String {
    format!("w{:03}", i + 1)
}

/// Posts one task, recruits workers and plays the game to its deadline on a
/// virtual clock. Timeline offsets count from the posting and use every
/// delivered answer, whatever the policy decided.
pub fn run_trial(
    task: &DialogTask,
    config: &GameConfig,
    recruitment: &RecruitmentModel,
    behavior: &WorkerBehavior,
    seed: u64,
) -> Result<Trial, CrowdError> {
    recruitment.validate()?;
    behavior.validate()?;
    run_trial_unchecked(task, config, recruitment, behavior, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn run_trial_unchecked<R: Rng>(
    task: &DialogTask,
    config: &GameConfig,
    recruitment: &RecruitmentModel,
    behavior: &WorkerBehavior,
    rng: &mut R,
) -> Result<Trial, CrowdError> {
    let engine_err = |e: crate::session::EngineError| CrowdError::Engine(e.to_string());
    let deadline = (config.time_constraint_s * 1000.0).floor() / 1000.0;
    let TrialPlan {
        arrivals: hired,
        expired,
        submissions: subs,
    } = plan(task, config, recruitment, behavior, rng);

    let clock = ManualClock::new(SIM_EPOCH);
    let engine = Engine::new(Arc::new(clock.clone()));
    let game = "trial";
    engine.create_session_with_id(game, task.clone(), *config).map_err(engine_err)?;
    engine.record(LogKind::TaskPosted, Some(game), None, json!({ "postings": recruitment.postings }));

    let mut arrivals = hired.iter().enumerate().peekable();
    for s in &subs {
        while let Some((w, &a)) = arrivals.next_if(|(_, &a)| ms(a) <= s.at) {
            clock.set(SIM_EPOCH.add_secs(a));
            engine.record(LogKind::WorkerArrived, Some(game), Some(&worker_name(w)), json!({}));
        }
        clock.set(SIM_EPOCH.add_secs(s.at));
        engine.submit_answer(game, &worker_name(s.worker), &s.text).map_err(engine_err)?;
    }
    for (w, &a) in arrivals {
        clock.set(SIM_EPOCH.add_secs(a));
        engine.record(LogKind::WorkerArrived, Some(game), Some(&worker_name(w)), json!({}));
    }
    clock.set(SIM_EPOCH.add_secs(deadline));
    let outcome = engine
        .expire(game)
        .map_err(engine_err)?
        .unwrap_or_else(|| GameOutcome::empty(config.time_constraint_s));

    let stream: Vec<AnswerEvent> = subs
        .iter()
        .enumerate()
        .map(|(i, s)| AnswerEvent::new(worker_name(s.worker), s.text.as_str(), s.at, i as u64))
        .collect();
    let timeline = TrialTimeline {
        first_worker_s: hired.first().map(|&a| ms(a)),
        first_answer_s: stream.iter().find(|e| !e.is_empty()).map(|e| e.offset_s),
        first_match_s: first_match(&stream).map(|(_, i)| stream[i].offset_s),
    };
    let events = engine.snapshot(game).map_err(engine_err)?.events().to_vec();
    Ok(Trial {
        events,
        outcome,
        timeline,
        arrivals: hired,
        expired_postings: expired,
        log: engine.log().snapshot(),
    })
}

/// Runs `n` independent trials of one task. Trial `j` uses stream `j` of
/// the seed, so results do not depend on thread scheduling.
pub fn run_trials(
    task: &DialogTask,
    config: &GameConfig,
    model: &CrowdModel,
    n: usize,
    seed: u64,
) -> Result<Vec<Trial>, CrowdError> {
    model.validate()?;
    (0..n)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            run_trial_unchecked(task, config, &model.recruitment, &model.behavior, &mut rng)
        })
        .collect()
}

/// Full answer streams for offline resampling: `workers` workers all start
/// each game at its posting and answer until `time_constraint_s`.
pub fn simulate_collection_streams(
    tasks: &[DialogTask],
    workers: usize,
    behavior: &WorkerBehavior,
    time_constraint_s: f64,
    seed: u64,
) -> Result<Vec<GameStreams>, CrowdError> {
    behavior.validate()?;
    let deadline = (time_constraint_s * 1000.0).floor() / 1000.0;
    let present = vec![0.0; workers];
    Ok(tasks
        .iter()
        .enumerate()
        .map(|(j, task)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let subs = plan_answers(&present, task, behavior, deadline, &mut rng);
            let events: Vec<AnswerEvent> = subs
                .iter()
                .enumerate()
                .map(|(i, s)| AnswerEvent::new(worker_name(s.worker), s.text.as_str(), s.at, i as u64))
                .collect();
            let mut game = GameStreams::from_events(task.task_id.clone(), task.gold.clone(), &events);
            // silent workers still count as players
            for w in 0..workers {
                game.events_by_worker.entry(worker_name(w)).or_default();
            }
            game
        })
        .collect())
}

/// What calibration simulates: one task under one game configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSetup {
    pub task: DialogTask,
    pub config: GameConfig,
    pub trials_per_candidate: usize,
    /// Postings and lifetime stay fixed during the search.
    pub postings: usize,
    pub lifetime_s: f64,
}

impl Default for CalibrationSetup {
    /// The chat user study: a 60 s answer window, ESP with first-answer
    /// fallback.
    fn default() -> Self {
        Self {
            task: calibration_task(),
            config: GameConfig::new(60.0, Policy::EspPlusIth, 1, Mode::Live).expect("valid config"),
            trials_per_candidate: 200,
            postings: 120,
            lifetime_s: 60.0,
        }
    }
}

/// A two-token food mention used for calibration trials.
pub fn calibration_task() -> DialogTask {
    DialogTask {
        task_id: "calibration".into(),
        category: "scenario:food/act:mention".into(),
        utterances: vec![
            Utterance::agent("How was your weekend?"),
            Utterance::user("Great, we finally tried the bubble tea place near the station."),
        ],
        slot_name: crate::domain::FOOD_SLOT.into(),
        slot_prompt: crate::domain::FOOD_PROMPT.into(),
        slot_explanation: crate::domain::FOOD_EXPLANATION.into(),
        gold: Some("bubble tea".into()),
        aux_gold: Default::default(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub model: CrowdModel,
    pub achieved: TimelineStats<f64>,
    pub max_relative_error: f64,
    pub candidates_tried: usize,
}

/// Fits a model to observed timeline means with [`CalibrationSetup::default`].
pub fn calibrate(targets: &TimelineStats<f64>, search_budget: usize, seed: u64) -> Result<Calibration, CrowdError> {
    calibrate_with(&CalibrationSetup::default(), targets, search_budget, seed)
}

/// Simulated timeline statistics of `model`; `None` if some field never
/// occurred.
pub fn evaluate_model(
    setup: &CalibrationSetup,
    model: &CrowdModel,
    trials: usize,
    seed: u64,
) -> Result<Option<TimelineStats<f64>>, CrowdError> {
    Ok(simulate_summary(setup, model, trials, seed)?.stats())
}

fn simulate_summary(
    setup: &CalibrationSetup,
    model: &CrowdModel,
    trials: usize,
    seed: u64,
) -> Result<TimelineSummary<f64>, CrowdError> {
    let runs = run_trials(&setup.task, &setup.config, model, trials, seed)?;
    let timelines: Vec<TrialTimeline> = runs.into_iter().map(|t| t.timeline).collect();
    Ok(summarize_timeline::<f64>(&timelines)?)
}

/// Worst relative error of a field's mean, widened by two standard errors
/// so that means estimated from few trials are not trusted.
fn pessimistic_error(summary: &TimelineSummary<f64>, targets: &TimelineStats<f64>, trials: usize) -> f64 {
    let fields = [
        (&summary.first_worker_s, targets.first_worker_s.mean),
        (&summary.first_answer_s, targets.first_answer_s.mean),
        (&summary.first_match_s, targets.first_match_s.mean),
    ];
    fields
        .iter()
        .map(|(f, want)| match f.moments {
            Some(m) => {
                let n = (trials as f64 * (1.0 - f.absent_fraction)).max(1.0);
                ((m.mean - want).abs() + 2.0 * m.stdev / n.sqrt()) / want
            }
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// Search coordinates; all but `lo` and `correct` are searched in log space.
#[derive(Debug, Clone, Copy)]
struct Params {
    claim_rate: f64,
    routing_lo: f64,
    routing_width: f64,
    median: f64,
    sigma: f64,
    correct: f64,
    answers: f64,
}

impl Params {
    fn model(&self, setup: &CalibrationSetup) -> CrowdModel {
        CrowdModel {
            recruitment: RecruitmentModel {
                postings: setup.postings,
                lifetime_s: setup.lifetime_s,
                routing_delay_range_s: (self.routing_lo, self.routing_lo + self.routing_width),
                claim_rate_per_s: Some(self.claim_rate),
                routing_multiplier: 1.0,
            },
            behavior: WorkerBehavior::new(
                self.median,
                self.sigma,
                OutcomeMix::chat_prior(self.correct),
                self.answers,
            ),
        }
    }

    fn random<R: Rng>(rng: &mut R, lifetime: f64) -> Self {
        let log_uniform = |rng: &mut R, lo: f64, hi: f64| (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp();
        Self {
            claim_rate: log_uniform(rng, 1e-4, 0.2),
            routing_lo: rng.random_range(0.0..lifetime * 0.7),
            routing_width: rng.random_range(0.0..lifetime * 0.7),
            median: log_uniform(rng, 0.5, 20.0),
            sigma: rng.random_range(0.0..1.2),
            correct: rng.random_range(0.4..1.0),
            answers: rng.random_range(1.0..4.0),
        }
    }

    fn perturb<R: Rng>(&self, rng: &mut R, scale: f64, lifetime: f64) -> Self {
        let mut jitter = |x: f64| x * (scale * (2.0 * rng.random::<f64>() - 1.0)).exp();
        let mut p = Self {
            claim_rate: jitter(self.claim_rate),
            routing_lo: jitter(self.routing_lo.max(0.1)),
            routing_width: jitter(self.routing_width.max(0.1)),
            median: jitter(self.median),
            sigma: jitter(self.sigma.max(0.02)),
            correct: jitter(self.correct),
            answers: jitter(self.answers),
        };
        p.routing_lo = p.routing_lo.min(lifetime * 0.95);
        p.correct = p.correct.clamp(0.05, 1.0);
        p.answers = p.answers.clamp(1.0, 8.0);
        p.sigma = p.sigma.min(2.0);
        p
    }

    /// Moves each coordinate that mainly drives one timeline gap toward
    /// its target.
    fn corrected(&self, got: &[f64; 3], want: &[f64; 3], lifetime: f64) -> Self {
        let mut p = *self;
        // slower claims push the first arrival later
        p.claim_rate *= (got[0] / want[0]).powf(1.5);
        p.routing_lo = (p.routing_lo + 0.5 * (want[0] - got[0])).clamp(0.0, lifetime * 0.95);
        let gap = |a: f64, b: f64| (b - a).max(0.05);
        p.median *= gap(want[0], want[1]) / gap(got[0], got[1]);
        p.correct = (p.correct * (gap(got[1], got[2]) / gap(want[1], want[2])).powf(0.5)).clamp(0.05, 1.0);
        p
    }
}

/// Randomized search for a model whose simulated timeline means match
/// `targets`. Every candidate is scored on the same
/// `setup.trials_per_candidate` trial seeds. Candidate 0 is the
/// deterministic model whose analytic means are the targets when the
/// first match coincides with the first answer.
pub fn calibrate_with(
    setup: &CalibrationSetup,
    targets: &TimelineStats<f64>,
    search_budget: usize,
    seed: u64,
) -> Result<Calibration, CrowdError> {
    targets.validate_targets()?;
    if search_budget == 0 {
        return Err(CrowdError::Budget);
    }
    let want = targets.means();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trial_seed = rng.random::<u64>();
    let n = setup.trials_per_candidate;
    let score = |model: &CrowdModel| -> Result<(f64, Option<TimelineStats<f64>>), CrowdError> {
        let summary = simulate_summary(setup, model, n, trial_seed)?;
        Ok((pessimistic_error(&summary, targets, n), summary.stats()))
    };

    let analytic = CrowdModel {
        recruitment: RecruitmentModel {
            postings: 2,
            lifetime_s: setup.lifetime_s.max(want[0] + 1.0),
            routing_delay_range_s: (want[0], want[0]),
            claim_rate_per_s: None,
            routing_multiplier: 1.0,
        },
        behavior: WorkerBehavior::new((want[1] - want[0]).max(1e-3), 0.0, OutcomeMix::perfect(), 1.0),
    };
    let (mut best_err, mut best_stats) = score(&analytic)?;
    let mut best_model = analytic;
    // best parameterized candidate, the centre of the local search
    let mut anchor: Option<(Params, f64, [f64; 3])> = None;

    let explore = (search_budget - 1) / 4;
    for i in 0..search_budget - 1 {
        let candidate = match anchor {
            Some((p, _, got)) if i >= explore => {
                let step = i - explore;
                if step.is_multiple_of(3) {
                    p.corrected(&got, &want, setup.lifetime_s)
                } else {
                    let left = 1.0 - step as f64 / (search_budget - 1 - explore) as f64;
                    p.perturb(&mut rng, 0.5 * left + 0.05, setup.lifetime_s)
                }
            }
            _ => Params::random(&mut rng, setup.lifetime_s),
        };
        let model = candidate.model(setup);
        let (err, stats) = score(&model)?;
        if let Some(s) = &stats {
            if anchor.is_none_or(|(_, e, _)| err < e) {
                anchor = Some((candidate, err, s.means()));
            }
        }
        if err < best_err {
            best_err = err;
            best_stats = stats;
            best_model = model;
        }
    }
    let tried = search_budget;

    let achieved = best_stats.ok_or_else(|| CrowdError::Engine("no candidate produced a complete timeline".into()))?;
    Ok(Calibration {
        model: best_model,
        achieved,
        max_relative_error: achieved.max_relative_error(targets),
        candidates_tried: tried,
    })
}
