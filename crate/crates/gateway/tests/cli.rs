use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use dialog_esp::domain::{load_corpus, write_corpus};
use dialog_esp::session::{Engine, ManualClock, Timestamp};
use dialog_esp::{DialogTask, GameConfig, Gazetteer, Mode, Policy};
use dialog_esp_gateway::cli::{score, Prediction};
use dialog_esp_gateway::{replay_log, ReplayOptions};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dialog-esp")).args(args).output().unwrap()
}

fn task(id: &str, text: &str, gold: Option<&str>) -> DialogTask {
    let mut t = dialog_esp::session::tutorial_task();
    t.task_id = id.into();
    t.utterances = vec![dialog_esp::Utterance::user(text)];
    t.gold = gold.map(str::to_string);
    t
}

fn recorded_log(dir: &Path) -> std::path::PathBuf {
    let clock = Arc::new(ManualClock::new(Timestamp::from_millis(1_700_000_000_000)));
    let engine = Engine::new(clock.clone());
    let live = GameConfig::new(10.0, Policy::EspPlusIth, 1, Mode::Live).unwrap();
    let collect = GameConfig::new(10.0, Policy::EspOnly, 1, Mode::Collection).unwrap();
    let a = engine.create_session(task("a", "one pho", Some("pho")), live).unwrap();
    let b = engine.create_session(task("b", "udon or soba", Some("soba")), collect).unwrap();
    for (dt, g, w, text) in [
        (1.0, &a, "w1", "pho"),
        (0.5, &b, "w1", "udon"),
        (0.5, &b, "w2", "soba"),
        (1.0, &a, "w2", "pho"),
        (1.0, &b, "w3", "soba"),
    ] {
        clock.advance_secs(dt);
        engine.submit_answer(g, w, text).unwrap();
    }
    clock.advance_secs(10.0);
    engine.expire_due();
    let path = dir.join("events.jsonl");
    fs::write(&path, engine.log().to_lines()).unwrap();
    path
}

#[test]
fn replay_reproduces_a_recorded_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = recorded_log(dir.path());
    let report = replay_log(&path, &ReplayOptions::default()).unwrap();
    assert!(report.identical);
    assert_eq!(report.sessions.len(), 2);
    assert_eq!(report.sessions[0].outcome.as_ref().unwrap().label.as_deref(), Some("pho"));
    assert_eq!(report.sessions[1].outcome.as_ref().unwrap().label.as_deref(), Some("soba"));
    assert_eq!(report.metrics.f1, 1.0);

    let ith = ReplayOptions {
        policy: Some(Policy::IthOnly),
        fallback_index_i: Some(1),
        ..ReplayOptions::default()
    };
    let report = replay_log(&path, &ith).unwrap();
    // only the collection-mode game is re-aggregated
    assert_eq!(report.sessions[0].policy, Policy::EspPlusIth);
    assert_eq!(report.sessions[1].policy, Policy::IthOnly);
    assert_eq!(report.sessions[1].outcome.as_ref().unwrap().label.as_deref(), Some("udon"));
}

#[test]
fn truncated_log_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = recorded_log(dir.path());
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let cut = format!("{}\n{}", lines[..4].join("\n"), &lines[4][..lines[4].len() / 2]);
    fs::write(&path, cut).unwrap();
    let err = replay_log(&path, &ReplayOptions::default()).unwrap_err();
    assert_eq!(err.line(), Some(5));

    let out = bin(&["replay", "--log", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));
}

#[test]
fn out_of_order_log_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = recorded_log(dir.path());
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    // an answer before its game exists
    let answer = lines.iter().position(|l| l.contains("answer_submitted")).unwrap();
    let moved = lines.remove(answer);
    lines.insert(0, moved);
    fs::write(&path, lines.join("\n")).unwrap();
    let err = replay_log(&path, &ReplayOptions::default()).unwrap_err();
    assert_eq!(err.line(), Some(1));
}

#[test]
fn gen_corpus_writes_a_loadable_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    let out = bin(&["gen-corpus", "--tasks", "7", "--seed", "3", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let tasks = load_corpus(&path).unwrap();
    assert_eq!(tasks.len(), 7);
    assert!(tasks.iter().all(|t| !t.utterances.is_empty()));

    let again = bin(&["gen-corpus", "--tasks", "7", "--seed", "3"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), fs::read_to_string(&path).unwrap());
}

#[test]
fn score_counts_soft_matches_and_missing_predictions() {
    let tasks = vec![
        task("1", "a pho", Some("pho")),
        task("2", "some tea", Some("green tea")),
        task("3", "nothing", None),
        task("4", "a bagel", Some("bagel")),
    ];
    let preds = vec![
        Prediction { task_id: "1".into(), label: Some("Pho".into()), response_s: 2.0 },
        Prediction { task_id: "2".into(), label: Some("coffee".into()), response_s: 4.0 },
        Prediction { task_id: "3".into(), label: None, response_s: 6.0 },
    ];
    let r = score(&tasks, &preds, &Gazetteer::default()).unwrap();
    assert_eq!((r.counts.tp, r.counts.fp, r.counts.fn_, r.counts.tn), (1, 1, 2, 1));
    assert_eq!(r.precision, 0.5);
    // a wrong label is both a false positive and a missed gold
    assert!((r.recall - 1.0 / 3.0).abs() < 1e-12);

    let bad = vec![Prediction { task_id: "zzz".into(), label: None, response_s: 0.0 }];
    assert!(score(&tasks, &bad, &Gazetteer::default()).is_err());
}

#[test]
fn score_command_prints_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let preds = dir.path().join("preds.jsonl");
    write_corpus(fs::File::create(&corpus).unwrap(), &[task("1", "a pho", Some("pho"))]).unwrap();
    fs::write(&preds, "{\"task_id\":\"1\",\"label\":\"pho\",\"response_s\":3.5}\n").unwrap();
    let out = bin(&["score", "--corpus", corpus.to_str().unwrap(), "--predictions", preds.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["f1"], 1.0);
    assert_eq!(v["mean_response_s"], 3.5);
}

#[test]
fn simulate_command_summarizes_trials() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let out = bin(&["gen-corpus", "--tasks", "3", "--out", corpus.to_str().unwrap()]);
    assert!(out.status.success());
    let out = bin(&["simulate", "--corpus", corpus.to_str().unwrap(), "--trials-per-task", "2", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["trials"], 6);
    assert!(v["metrics"]["f1"].is_number());
}

#[test]
fn sweep_command_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("params.json");
    fs::write(&config, r#"{"sweep": {"tasks": 20, "workers": 4, "rounds": 2, "ks": [2, 4]}}"#).unwrap();
    let out = bin(&["sweep", "--config", config.to_str().unwrap(), "--seed", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], dialog_esp::evaluation::SWEEP_HEADER);
    assert_eq!(lines.len(), 1 + 3 * 2);
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("params.json");
    fs::write(&config, r#"{"game": {"time_constraint_s": 0}}"#).unwrap();
    let out = bin(&["gen-corpus", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
}
