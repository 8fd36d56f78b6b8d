//! Command-line entry points.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dialog_esp::crowd_sim::{
    calibrate_with, evaluate_model, run_trials, simulate_collection_streams, write_presets, CalibrationSetup,
    Preset, WorkerBehavior, OutcomeMix,
};
use dialog_esp::domain::{appendix_profiles, generate_synthetic_corpus, load_corpus, synthetic_corpus, write_corpus};
use dialog_esp::evaluation::{summarize_timeline, tradeoff_sweep, write_sweep_tsv, ReportBuilder, TimelineStats};
use dialog_esp::session::{Clock, EventLog, ScaledClock, SystemClock};
use dialog_esp::{DialogTask, GameConfig, Gazetteer, Mode, Policy, ResamplePlan};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::params::Params;
use crate::replay::{replay_log, ReplayOptions};
use crate::service::{RunMode, Service};

#[derive(Debug, Parser)]
#[command(name = "dialog-esp", version, about = "Crowd-powered slot extraction: service and experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "SEED", default_value_t = 0)]
    pub seed: u64,
    /// JSON parameter file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service. `--out` mirrors the event log to a file.
    Serve {
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "MODE", default_value = "sim")]
        mode: RunMode,
    },
    /// Simulate recruited crowds on a corpus; prints a timeline and score
    /// summary, and writes one line per trial to `--out`.
    Simulate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        trials_per_task: Option<usize>,
    },
    /// Accuracy and latency by number of players, as a TSV table.
    Sweep {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Fit a crowd model to timeline means; writes it as a preset line.
    Calibrate {
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Rebuild sessions from an event log and score them.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
        #[arg(long)]
        policy: Option<Policy>,
        #[arg(long)]
        i: Option<usize>,
        /// Resample this many players per collection-mode game.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 20)]
        rounds: usize,
    },
    /// Score predictions against a corpus.
    Score {
        #[arg(long)]
        corpus: PathBuf,
        /// Lines of `{"task_id", "label", "response_s"}`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Write a synthetic chat corpus.
    GenCorpus {
        #[arg(long)]
        tasks: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub task_id: String,
    pub label: Option<String>,
    #[serde(default)]
    pub response_s: f64,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn corpus_or_synthetic(path: Option<&Path>, tasks: Option<usize>, seed: u64) -> anyhow::Result<Vec<DialogTask>> {
    match (path, tasks) {
        (Some(p), _) => load_corpus(p).with_context(|| format!("loading {}", p.display())),
        (None, Some(n)) => Ok(synthetic_corpus(n, seed)),
        (None, None) => Ok(generate_synthetic_corpus(&appendix_profiles(), seed)),
    }
}

fn gazetteer(path: Option<&Path>) -> anyhow::Result<Option<Gazetteer>> {
    path.map(|p| Gazetteer::load(p, dialog_esp::matching::DEFAULT_SIMILARITY_THRESHOLD))
        .transpose()
        .context("loading gazetteer")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let params = Params::load(cli.common.config.as_deref())?;
    let seed = cli.common.seed;
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Serve { port, mode } => serve(params, mode, seed, port, out),
        Command::Simulate { corpus, trials_per_task } => {
            let tasks = corpus_or_synthetic(corpus.as_deref(), params.corpus.tasks, seed)?;
            let n = trials_per_task.unwrap_or(params.simulate.trials_per_task);
            simulate(&params, &tasks, n, seed, out)
        }
        Command::Sweep { corpus } => {
            let sp = &params.sweep;
            let tasks = match corpus {
                Some(p) => load_corpus(&p)?,
                None => synthetic_corpus(sp.tasks, seed),
            };
            let behavior = WorkerBehavior::new(sp.median_s, sp.sigma, OutcomeMix::chat_prior(sp.correct), sp.answers_per_game);
            let streams = simulate_collection_streams(&tasks, sp.workers, &behavior, sp.time_constraint_s, seed)?;
            let base = GameConfig::new(sp.time_constraint_s, Policy::EspPlusIth, sp.fallback_index_i, Mode::Collection)?;
            let rows = tradeoff_sweep::<f64>(&streams, &sp.ks, &Policy::ALL, &base, sp.rounds, seed)?;
            let mut w = output(out)?;
            write_sweep_tsv(&mut w, &rows)?;
            w.flush()?;
            Ok(())
        }
        Command::Calibrate { budget } => {
            let cp = &params.calibrate;
            let [w, a, m] = cp.targets;
            let targets = TimelineStats::from_means(w, a, m);
            let setup = CalibrationSetup {
                config: params.game,
                trials_per_candidate: cp.trials_per_candidate,
                ..CalibrationSetup::default()
            };
            let fit = calibrate_with(&setup, &targets, budget.unwrap_or(cp.budget), seed)?;
            let validation = evaluate_model(&setup, &fit.model, cp.validation_trials, seed.wrapping_add(1))?;
            print_json(&json!({
                "targets": targets.means(),
                "fit": fit,
                "validation": validation.map(|v| json!({
                    "trials": cp.validation_trials,
                    "means": v.means(),
                    "max_relative_error": v.max_relative_error(&targets),
                })),
            }))?;
            if let Some(path) = out {
                let preset = Preset {
                    name: "calibrated".into(),
                    model: fit.model,
                };
                write_presets(File::create(path)?, &[preset])?;
            }
            Ok(())
        }
        Command::Replay {
            log,
            corpus,
            gazetteer: gz,
            policy,
            i,
            k,
            rounds,
        } => {
            let opts = ReplayOptions {
                policy,
                fallback_index_i: i,
                corpus: corpus.map(|p| load_corpus(&p)).transpose()?,
                gazetteer: gazetteer(gz.as_deref())?,
                resample: k.map(|k| ResamplePlan::new(k, rounds, seed)),
            };
            let report = replay_log(&log, &opts).with_context(|| format!("replaying {}", log.display()))?;
            let mut w = output(out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        Command::Score {
            corpus,
            predictions,
            gazetteer: gz,
        } => {
            let tasks = load_corpus(&corpus)?;
            let preds = read_predictions(&predictions)?;
            let gz = gazetteer(gz.as_deref())?.unwrap_or_default();
            let report = score(&tasks, &preds, &gz)?;
            let mut w = output(out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        Command::GenCorpus { tasks } => {
            let corpus = corpus_or_synthetic(None, tasks.or(params.corpus.tasks), seed)?;
            let mut w = output(out)?;
            write_corpus(&mut w, &corpus)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn serve(params: Params, mode: RunMode, seed: u64, port: u16, log_path: Option<&Path>) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = match mode {
        RunMode::Sim => Arc::new(ScaledClock::new(params.serve.sim_speed)),
        RunMode::Live => Arc::new(SystemClock),
    };
    let sink: Option<Box<dyn Write + Send>> = match log_path {
        Some(p) => Some(Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => None,
    };
    let log = Arc::new(EventLog::new(sink));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let service = Service::new(&params, mode, seed, clock, log);
        let listener = TcpListener::bind(("0.0.0.0", port)).await?;
        eprintln!("listening on {} ({mode} mode)", listener.local_addr()?);
        crate::http::serve(service, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

fn simulate(params: &Params, tasks: &[DialogTask], per_task: usize, seed: u64, out: Option<&Path>) -> anyhow::Result<()> {
    if per_task == 0 {
        bail!("trials_per_task must be positive");
    }
    let gz = Gazetteer::default();
    let mut report = ReportBuilder::new(&gz);
    let mut timelines = Vec::new();
    let mut lines: Option<Box<dyn Write>> = out.map(|p| output(Some(p))).transpose()?;
    for (j, task) in tasks.iter().enumerate() {
        let trials = run_trials(task, &params.game, &params.model, per_task, seed.wrapping_add(j as u64))?;
        for (n, t) in trials.into_iter().enumerate() {
            report.add(t.outcome.label.as_deref(), task, t.outcome.decision_offset_s);
            if let Some(w) = lines.as_mut() {
                serde_json::to_writer(
                    &mut *w,
                    &json!({
                        "task_id": task.task_id,
                        "trial": n,
                        "workers": t.arrivals.len(),
                        "expired_postings": t.expired_postings,
                        "answers": t.events.len(),
                        "outcome": t.outcome,
                        "timeline": t.timeline,
                    }),
                )?;
                writeln!(w)?;
            }
            timelines.push(t.timeline);
        }
    }
    if let Some(mut w) = lines {
        w.flush()?;
    }
    print_json(&json!({
        "trials": timelines.len(),
        "timeline": summarize_timeline::<f64>(&timelines)?,
        "metrics": report.finish::<f64>(),
    }))
}

pub fn read_predictions(path: &Path) -> anyhow::Result<Vec<Prediction>> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

/// Scores one prediction per task; tasks without a prediction count as
/// empty answers.
pub fn score(tasks: &[DialogTask], preds: &[Prediction], gazetteer: &Gazetteer) -> anyhow::Result<dialog_esp::MetricsReport> {
    let by_id: std::collections::HashMap<&str, &Prediction> = preds.iter().map(|p| (p.task_id.as_str(), p)).collect();
    if let Some(p) = preds.iter().find(|p| !tasks.iter().any(|t| t.task_id == p.task_id)) {
        bail!("prediction for unknown task {:?}", p.task_id);
    }
    let mut report = ReportBuilder::new(gazetteer);
    for t in tasks {
        let p = by_id.get(t.task_id.as_str());
        let label = p.and_then(|p| p.label.as_deref()).map(dialog_esp::normalize);
        report.add(label.as_deref(), t, p.map_or(0.0, |p| p.response_s));
    }
    Ok(report.finish())
}
