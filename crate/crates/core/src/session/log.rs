use std::fmt;
use std::io::{self, BufRead, Write};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    UserTypingStart,
    UserTypingStop,
    UtteranceReceived,
    TaskPosted,
    WorkerArrived,
    AnswerSubmitted,
    Match,
    GameDecided,
    GameClosed,
    PlaylistAdvanced,
}

impl LogKind {
    /// Kinds the engine emits as a consequence of other events. Replay
    /// regenerates these instead of reading them back.
    pub fn is_derived(self) -> bool {
        matches!(self, LogKind::Match | LogKind::GameDecided)
    }
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(Value::as_str).unwrap_or("?"))
    }
}

/// One line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub at: Timestamp,
    pub kind: LogKind,
    pub game_id: Option<String>,
    pub worker_id: Option<String>,
    pub payload: Value,
}

impl LogEvent {
    pub fn new(at: Timestamp, kind: LogKind, game_id: Option<&str>, worker_id: Option<&str>, payload: Value) -> Self {
        Self {
            at,
            kind,
            game_id: game_id.map(str::to_string),
            worker_id: worker_id.map(str::to_string),
            payload,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log events always serialize")
    }
}

#[derive(Debug, Error)]
pub enum LogReadError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl LogReadError {
    pub fn line(&self) -> Option<usize> {
        match self {
            LogReadError::Parse { line, .. } => Some(*line),
            LogReadError::Io(_) => None,
        }
    }
}

/// Parses a line-delimited event log. Blank lines are skipped; line numbers
/// in errors are 1-based.
pub fn read_event_log<R: BufRead>(reader: R) -> Result<Vec<LogEvent>, LogReadError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|source| LogReadError::Parse { line: idx + 1, source })?;
        out.push(ev);
    }
    Ok(out)
}

pub fn write_event_log<W: Write>(mut w: W, events: &[LogEvent]) -> io::Result<()> {
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()
}

type Listener = Box<dyn Fn(usize, &LogEvent) + Send + Sync>;

struct Inner {
    events: Vec<LogEvent>,
    sink: Option<Box<dyn Write + Send>>,
    sink_error: Option<io::Error>,
}

/// In-memory append-only log with an optional line-delimited file mirror.
///
/// Appends are totally ordered; each event's position is its cursor.
pub struct EventLog {
    inner: Mutex<Inner>,
    grew: Condvar,
    listeners: Mutex<Vec<Listener>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new(None)
    }
}

impl fmt::Debug for EventLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventLog").field("len", &self.len()).finish()
    }
}

impl EventLog {
    pub fn new(sink: Option<Box<dyn Write + Send>>) -> Self {
        Self {
            inner: Mutex::new(Inner {
                events: Vec::new(),
                sink,
                sink_error: None,
            }),
            grew: Condvar::new(),
            listeners: Mutex::new(Vec::new()),
        }
    }

    /// Registers a callback run after every append, with the event's cursor.
    pub fn subscribe(&self, f: impl Fn(usize, &LogEvent) + Send + Sync + 'static) {
        self.listeners.lock().unwrap().push(Box::new(f));
    }

    pub fn append(&self, events: Vec<LogEvent>) {
        if events.is_empty() {
            return;
        }
        let first;
        {
            let mut inner = self.inner.lock().unwrap();
            first = inner.events.len();
            if inner.sink.is_some() {
                let mut buf = String::new();
                for e in &events {
                    buf.push_str(&e.to_line());
                    buf.push('\n');
                }
                let sink = inner.sink.as_mut().unwrap();
                let res = sink.write_all(buf.as_bytes()).and_then(|_| sink.flush());
                if let Err(e) = res {
                    inner.sink_error.get_or_insert(e);
                }
            }
            inner.events.extend(events.iter().cloned());
        }
        self.grew.notify_all();
        let listeners = self.listeners.lock().unwrap();
        for (i, e) in events.iter().enumerate() {
            for l in listeners.iter() {
                l(first + i, e);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<LogEvent> {
        self.inner.lock().unwrap().events.clone()
    }

    /// Events at positions `cursor..`.
    pub fn since(&self, cursor: usize) -> Vec<LogEvent> {
        let inner = self.inner.lock().unwrap();
        inner.events.get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Blocks until the log is longer than `cursor` or `timeout` passes.
    pub fn wait_past(&self, cursor: usize, timeout: Duration) -> bool {
        let inner = self.inner.lock().unwrap();
        let (inner, _) = self
            .grew
            .wait_timeout_while(inner, timeout, |i| i.events.len() <= cursor)
            .unwrap();
        inner.events.len() > cursor
    }

    /// First write error hit by the file mirror, if any.
    pub fn take_sink_error(&self) -> Option<io::Error> {
        self.inner.lock().unwrap().sink_error.take()
    }

    pub fn to_lines(&self) -> String {
        let inner = self.inner.lock().unwrap();
        inner.events.iter().map(|e| e.to_line() + "\n").collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn ev(ms: i64, kind: LogKind) -> LogEvent {
        LogEvent::new(Timestamp::from_millis(ms), kind, Some("g1"), None, json!({}))
    }

    #[test]
    fn line_has_exact_fields() {
        let line = ev(0, LogKind::GameClosed).to_line();
        assert_eq!(
            line,
            r#"{"at":"1970-01-01T00:00:00.000Z","kind":"game_closed","game_id":"g1","worker_id":null,"payload":{}}"#
        );
        let back: LogEvent = serde_json::from_str(&line).unwrap();
        assert_eq!(back, ev(0, LogKind::GameClosed));
    }

    #[test]
    fn truncated_log_reports_line() {
        let text = format!("{}\n{}", ev(0, LogKind::UtteranceReceived).to_line(), &ev(5, LogKind::GameClosed).to_line()[..20]);
        let err = read_event_log(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn append_mirrors_to_sink_and_listeners() {
        #[derive(Clone, Default)]
        struct Shared(Arc<Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let buf = Shared::default();
        let log = EventLog::new(Some(Box::new(buf.clone())));
        let seen = Arc::new(AtomicUsize::new(0));
        let s2 = seen.clone();
        log.subscribe(move |i, _| {
            s2.fetch_max(i + 1, Ordering::SeqCst);
        });
        log.append(vec![ev(0, LogKind::UtteranceReceived), ev(1, LogKind::GameClosed)]);
        assert_eq!(seen.load(Ordering::SeqCst), 2);
        assert_eq!(log.since(1).len(), 1);
        assert!(log.since(9).is_empty());
        let written = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        assert_eq!(written, log.to_lines());
        assert_eq!(read_event_log(written.as_bytes()).unwrap(), log.snapshot());
        assert!(log.wait_past(1, Duration::from_millis(1)));
        assert!(!log.wait_past(2, Duration::from_millis(1)));
    }
}
