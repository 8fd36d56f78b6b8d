use dialog_esp::aggregation::{aggregate, sort_events};
use dialog_esp::{AnswerEvent, GameConfig, Mode, Policy};
use proptest::prelude::*;

/// Brute-force reference. `per_worker` switches the i-th answer to count
/// only each worker's first answer.
fn reference(events: &[AnswerEvent], policy: Policy, i: usize, t: f64, per_worker: bool) -> (Option<String>, f64) {
    let live: Vec<&AnswerEvent> = events.iter().filter(|e| !e.normalized_text.is_empty()).collect();
    let mut best: Option<usize> = None;
    for b in 0..live.len() {
        for a in 0..b {
            if live[a].worker_id != live[b].worker_id && live[a].normalized_text == live[b].normalized_text {
                best = Some(best.map_or(b, |x: usize| x.min(b)));
            }
        }
    }
    let mut counted: Vec<&AnswerEvent> = Vec::new();
    for e in &live {
        if !per_worker || !counted.iter().any(|c| c.worker_id == e.worker_id) {
            counted.push(e);
        }
    }
    let ith = counted.get(i - 1);
    let matched = best.map(|b| (Some(live[b].normalized_text.clone()), live[b].offset_s));
    match policy {
        Policy::EspOnly => matched.unwrap_or((None, t)),
        Policy::IthOnly => ith.map_or((None, t), |e| (Some(e.normalized_text.clone()), e.offset_s)),
        Policy::EspPlusIth => matched.unwrap_or_else(|| ith.map_or((None, t), |e| (Some(e.normalized_text.clone()), t))),
    }
}

fn stream() -> impl Strategy<Value = Vec<AnswerEvent>> {
    let words = prop::sample::select(vec!["a", "B", "b!", "", "  .", "c d"]);
    prop::collection::vec((0usize..4, words, 0u32..10), 0..9).prop_map(|raw| {
        let mut events: Vec<AnswerEvent> = raw
            .into_iter()
            .enumerate()
            .map(|(k, (w, text, at))| AnswerEvent::new(format!("w{w}"), text, f64::from(at), k as u64))
            .collect();
        sort_events(&mut events);
        events
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn aggregate_matches_reference(events in stream(), i in 1usize..4, p in 0usize..3) {
        let policy = Policy::ALL[p];
        let config = GameConfig::new(10.0, policy, i, Mode::Collection).unwrap();
        let got = aggregate(&events, &config).unwrap();
        let want = reference(&events, policy, i, 10.0, false);
        prop_assert_eq!((got.label, got.decision_offset_s), want);
    }

    #[test]
    fn esp_plus_ith_keeps_esp_timing(events in stream(), i in 1usize..4) {
        let run = |p| aggregate(&events, &GameConfig::new(10.0, p, i, Mode::Collection).unwrap()).unwrap();
        let (esp, both) = (run(Policy::EspOnly), run(Policy::EspPlusIth));
        prop_assert_eq!(esp.decision_offset_s, both.decision_offset_s);
        if esp.label.is_some() {
            prop_assert_eq!(esp.label, both.label);
        }
    }
}

#[test]
fn ith_answer_counts_events_not_workers() {
    let events = vec![
        AnswerEvent::new("w1", "tea", 1.0, 0),
        AnswerEvent::new("w1", "coffee", 2.0, 1),
        AnswerEvent::new("w2", "juice", 3.0, 2),
    ];
    let config = GameConfig::new(10.0, Policy::IthOnly, 2, Mode::Collection).unwrap();
    let got = aggregate(&events, &config).unwrap();
    assert_eq!(got.label.as_deref(), Some("coffee"));
    assert_eq!(reference(&events, Policy::IthOnly, 2, 10.0, false).0.as_deref(), Some("coffee"));
    assert_eq!(reference(&events, Policy::IthOnly, 2, 10.0, true).0.as_deref(), Some("juice"));
}
