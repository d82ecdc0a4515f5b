use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RunState, SchedError, TaskRun, TaskState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    RunStarted {
        at_us: i64,
        dag_id: String,
        logical_time_us: i64,
    },
    Transition {
        at_us: i64,
        task_id: String,
        attempt: u32,
        from: TaskState,
        to: TaskState,
        /// Set on `Retrying`: when the next attempt may be queued.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ready_at_us: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    RunFinished {
        at_us: i64,
        state: RunState,
    },
}

/// `{root}/runs/{dag_id}/{logical_time_us}/events.jsonl`
pub fn run_log_path(root: &Path, dag_id: &str, logical_time_us: i64) -> PathBuf {
    root.join("runs").join(dag_id).join(logical_time_us.to_string()).join("events.jsonl")
}

/// Append-only, one fsynced line per event.
#[derive(Debug)]
pub struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    /// Opens for append, first cutting a torn trailing line left by a crash.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        if let Ok(bytes) = fs::read(path) {
            if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
                let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
                OpenOptions::new().write(true).open(path)?.set_len(keep as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &RunEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredRun {
    pub dag_id: String,
    pub logical_time_us: i64,
    pub tasks: BTreeMap<String, TaskRun>,
    /// Earliest queue time for tasks sitting in `Retrying`.
    pub ready_at_us: BTreeMap<String, i64>,
    pub finished: Option<RunState>,
    pub events: Vec<RunEvent>,
}

/// Replays a run log. `Ok(None)` if the run never started. A torn final line
/// (no trailing newline) is ignored; anything else malformed is an error.
pub fn recover(path: &Path) -> Result<Option<RecoveredRun>, SchedError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let complete = match bytes.iter().rposition(|b| *b == b'\n') {
        Some(i) => &bytes[..=i],
        None => &[][..],
    };
    let corrupt = |line: usize, reason: String| SchedError::CorruptRunLog {
        path: path.display().to_string(),
        line,
        reason,
    };
    let mut run: Option<RecoveredRun> = None;
    for (i, raw) in complete.split(|b| *b == b'\n').enumerate() {
        let line_no = i + 1;
        if raw.is_empty() {
            continue;
        }
        let event: RunEvent = serde_json::from_slice(raw).map_err(|e| corrupt(line_no, e.to_string()))?;
        match (&mut run, &event) {
            (None, RunEvent::RunStarted { dag_id, logical_time_us, .. }) => {
                run = Some(RecoveredRun {
                    dag_id: dag_id.clone(),
                    logical_time_us: *logical_time_us,
                    tasks: BTreeMap::new(),
                    ready_at_us: BTreeMap::new(),
                    finished: None,
                    events: Vec::new(),
                });
            }
            (None, _) => return Err(corrupt(line_no, "first event must be run_started".into())),
            (Some(r), _) if r.finished.is_some() => {
                return Err(corrupt(line_no, "event after run_finished".into()));
            }
            (Some(_), RunEvent::RunStarted { .. }) => return Err(corrupt(line_no, "duplicate run_started".into())),
            (Some(r), RunEvent::RunFinished { state, .. }) => r.finished = Some(*state),
            (Some(r), RunEvent::Transition { at_us, task_id, attempt, from, to, ready_at_us, .. }) => {
                let t = r.tasks.entry(task_id.clone()).or_insert_with(|| TaskRun {
                    dag_id: r.dag_id.clone(),
                    logical_time_us: r.logical_time_us,
                    task_id: task_id.clone(),
                    attempt: 0,
                    state: TaskState::Pending,
                    started_us: None,
                    finished_us: None,
                });
                if t.state != *from || !from.can_move_to(*to) {
                    return Err(corrupt(
                        line_no,
                        format!("{task_id}: illegal {from:?} -> {to:?} (current {:?})", t.state),
                    ));
                }
                let attempt_ok = match (from, to) {
                    (TaskState::Pending, TaskState::Queued) => *attempt == 1,
                    (TaskState::Pending, TaskState::Failed) => true,
                    // Normal retry bumps the attempt; crash recovery keeps it.
                    (TaskState::Retrying, TaskState::Queued) => *attempt == t.attempt || *attempt == t.attempt + 1,
                    _ => *attempt == t.attempt,
                };
                if !attempt_ok {
                    return Err(corrupt(line_no, format!("{task_id}: unexpected attempt {attempt} after {}", t.attempt)));
                }
                t.attempt = *attempt;
                t.state = *to;
                match to {
                    TaskState::Running => t.started_us = Some(*at_us),
                    TaskState::Succeeded | TaskState::Failed => t.finished_us = Some(*at_us),
                    _ => {}
                }
                if *to == TaskState::Retrying {
                    r.ready_at_us.insert(task_id.clone(), ready_at_us.unwrap_or(*at_us));
                } else {
                    r.ready_at_us.remove(task_id);
                }
            }
        }
        if let Some(r) = &mut run {
            r.events.push(event);
        }
    }
    Ok(run)
}
