use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use super::{validate_task, DialogTask, Violation};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: invalid task: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid { line: usize, violations: Vec<Violation> },
    #[error("line {line}: duplicate task_id {task_id:?}")]
    Duplicate { line: usize, task_id: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CorpusError {
    /// 1-based line the error refers to, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Parse { line, .. }
            | CorpusError::Invalid { line, .. }
            | CorpusError::Duplicate { line, .. } => Some(*line),
            CorpusError::Io(_) => None,
        }
    }
}

/// Reads line-delimited task records. Blank lines are skipped; labels are
/// normalized before validation.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<DialogTask>, CorpusError> {
    let mut seen = HashSet::new();
    let mut tasks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut task: DialogTask = serde_json::from_str(&line).map_err(|source| {
            CorpusError::Parse {
                line: line_no,
                source,
            }
        })?;
        task.normalize_labels();
        let violations = validate_task(&task);
        if !violations.is_empty() {
            return Err(CorpusError::Invalid {
                line: line_no,
                violations,
            });
        }
        if !seen.insert(task.task_id.clone()) {
            return Err(CorpusError::Duplicate {
                line: line_no,
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DialogTask>, CorpusError> {
    read_corpus(BufReader::new(File::open(path)?))
}

/// Writes one JSON record per task, in order.
pub fn write_corpus<W: Write>(mut writer: W, tasks: &[DialogTask]) -> io::Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut writer, task)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
