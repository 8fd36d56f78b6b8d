use std::fs::File;
use std::io::BufReader;
use std::sync::Arc;

use dialog_esp::domain::{load_corpus, synthetic_corpus, write_corpus};
use dialog_esp::session::{read_event_log, write_event_log, Engine, ManualClock, Timestamp};
use dialog_esp::{normalize, GameConfig, Mode, Policy};

#[test]
fn synthetic_corpus_survives_a_file() {
    let tasks = synthetic_corpus(60, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    write_corpus(File::create(&path).unwrap(), &tasks).unwrap();
    assert_eq!(load_corpus(&path).unwrap(), tasks);
    for t in &tasks {
        assert!(!t.utterances.is_empty());
        if let Some(g) = &t.gold {
            assert_eq!(&normalize(g), g);
        }
    }
}

#[test]
fn engine_log_survives_a_file() {
    let clock = Arc::new(ManualClock::new(Timestamp::from_millis(1_700_000_000_000)));
    let engine = Engine::new(clock.clone());
    let mut games = Vec::new();
    for (n, task) in synthetic_corpus(6, 9).into_iter().enumerate() {
        let mode = if n % 2 == 0 { Mode::Live } else { Mode::Collection };
        let config = GameConfig::new(8.0, Policy::ALL[n % 3], 1 + n % 2, mode).unwrap();
        games.push((engine.create_session(task.clone(), config).unwrap(), task));
    }
    for step in 0..30 {
        clock.advance_secs(0.4);
        let (g, task) = &games[step % games.len()];
        let text = task.gold.clone().unwrap_or_else(|| "nothing".into());
        engine.submit_answer(g, &format!("w{}", step % 4), &text).unwrap();
    }
    clock.advance_secs(10.0);
    engine.expire_due();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    write_event_log(File::create(&path).unwrap(), &engine.log().snapshot()).unwrap();
    let events = read_event_log(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(events, engine.log().snapshot());

    let (again, sessions) = Engine::replay(&events).unwrap();
    assert_eq!(again.log().to_lines(), engine.log().to_lines());
    for s in sessions {
        assert_eq!(s.outcome, engine.outcome(&s.game_id).unwrap());
    }
}
