//! DAG scheduler. Every task state change is appended to a per-run JSONL log
//! before it takes effect; recovery replays that log.

mod executor;
mod runlog;
mod scheduler;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{Duration as ChronoDuration, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fault::InjectedCrash;

pub use executor::{
    backfill, execute_run, ActionError, ActionRegistry, RunResult, RunState, TaskAction, TaskContext, TaskRun,
};
pub use runlog::{recover, run_log_path, RecoveredRun, RunEvent, RunLog};
pub use scheduler::{load_dags, Scheduler, SchedulerOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Interval { anchor_us: i64, period_us: i64 },
    DailyAt { hour: u32, minute: u32 },
}

impl Schedule {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Schedule::Interval { period_us, .. } if period_us <= 0 => Err("period_us must be > 0".into()),
            Schedule::DailyAt { hour, minute } if hour >= 24 || minute >= 60 => {
                Err(format!("invalid time of day {hour:02}:{minute:02}"))
            }
            _ => Ok(()),
        }
    }
}

/// First schedule instant strictly after `t_us`.
pub fn next_run_after(schedule: &Schedule, t_us: i64) -> i64 {
    match *schedule {
        Schedule::Interval { anchor_us, period_us } => {
            if t_us < anchor_us {
                return anchor_us;
            }
            let k = (t_us as i128 - anchor_us as i128).div_euclid(period_us as i128) + 1;
            (anchor_us as i128 + period_us as i128 * k).clamp(i64::MIN as i128, i64::MAX as i128) as i64
        }
        Schedule::DailyAt { hour, minute } => {
            let at = NaiveTime::from_hms_opt(hour, minute, 0).expect("validated time of day");
            let date = crate::time::date_of(t_us);
            let today = date.and_time(at).and_utc().timestamp_micros();
            if today > t_us {
                today
            } else {
                (date + ChronoDuration::days(1)).and_time(at).and_utc().timestamp_micros()
            }
        }
    }
}

/// Schedule instants in `[from_us, to_us)`, ascending.
pub fn instants_in(schedule: &Schedule, from_us: i64, to_us: i64) -> Vec<i64> {
    let mut out = Vec::new();
    if from_us >= to_us {
        return out;
    }
    let mut t = next_run_after(schedule, from_us.saturating_sub(1));
    while t < to_us {
        out.push(t);
        let next = next_run_after(schedule, t);
        if next <= t {
            break;
        }
        t = next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "one")]
    pub max_attempts: u32,
    #[serde(default)]
    pub base_delay_s: u64,
    #[serde(default)]
    pub cap_delay_s: u64,
}

fn one() -> u32 {
    1
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 1,
            base_delay_s: 0,
            cap_delay_s: 0,
        }
    }
}

/// `min(base × 2^(attempt−1), cap)` seconds, saturating.
pub fn backoff_delay(retry: &RetryPolicy, attempt: u32) -> u64 {
    let shift = attempt.saturating_sub(1);
    let raw = if shift >= 64 {
        u64::MAX
    } else {
        retry.base_delay_s.saturating_mul(1u64 << shift)
    };
    raw.min(retry.cap_delay_s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionBinding {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    pub action: ActionBinding,
    #[serde(default)]
    pub retry: RetryPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSpec {
    pub dag_id: String,
    pub schedule: Schedule,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "one_usize")]
    pub max_parallel_tasks: usize,
}

fn one_usize() -> usize {
    1
}

impl DagSpec {
    pub fn from_json_file(path: &Path) -> Result<Self, SchedError> {
        let bytes = std::fs::read(path)?;
        let dag: DagSpec = serde_json::from_slice(&bytes)
            .map_err(|e| SchedError::InvalidDag(format!("{}: {e}", path.display())))?;
        dag.validate()?;
        Ok(dag)
    }

    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        let bad = |m: String| Err(SchedError::InvalidDag(format!("{}: {m}", self.dag_id)));
        if !crate::objectstore::is_valid_segment(&self.dag_id) {
            return bad("dag_id must match [A-Za-z0-9._=-]+".into());
        }
        if self.tasks.is_empty() {
            return bad("no tasks".into());
        }
        if self.max_parallel_tasks == 0 {
            return bad("max_parallel_tasks must be >= 1".into());
        }
        self.schedule.validate().or_else(bad)?;
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !crate::objectstore::is_valid_segment(&t.task_id) {
                return bad(format!("bad task id {:?}", t.task_id));
            }
            if !ids.insert(t.task_id.as_str()) {
                return bad(format!("duplicate task id {:?}", t.task_id));
            }
            if t.retry.max_attempts == 0 {
                return bad(format!("{}: retry.max_attempts must be >= 1", t.task_id));
            }
        }
        for t in &self.tasks {
            if let Some(d) = t.depends_on.iter().find(|d| !ids.contains(d.as_str())) {
                return bad(format!("{} depends on unknown task {d:?}", t.task_id));
            }
        }
        topo_order(self)?;
        Ok(())
    }
}

/// Kahn's algorithm with the ready set ordered by task id.
pub fn topo_order(dag: &DagSpec) -> Result<Vec<String>, SchedError> {
    let mut indegree: BTreeMap<&str, usize> = dag.tasks.iter().map(|t| (t.task_id.as_str(), 0)).collect();
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &dag.tasks {
        for d in &t.depends_on {
            *indegree.get_mut(t.task_id.as_str()).expect("own id") += 1;
            children.entry(d.as_str()).or_default().push(&t.task_id);
        }
    }
    let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, n)| **n == 0).map(|(k, _)| *k).collect();
    let mut out = Vec::with_capacity(dag.tasks.len());
    while let Some(id) = ready.pop_first() {
        out.push(id.to_string());
        for c in children.get(id).into_iter().flatten() {
            let n = indegree.get_mut(c).expect("child id");
            *n -= 1;
            if *n == 0 {
                ready.insert(c);
            }
        }
    }
    if out.len() == dag.tasks.len() {
        return Ok(out);
    }
    let stuck: BTreeSet<&str> = indegree.iter().filter(|(_, n)| **n > 0).map(|(k, _)| *k).collect();
    Err(SchedError::CycleDetected(find_cycle(dag, &stuck)))
}

/// Walks dependency edges inside `stuck` (every node there has an unmet
/// dependency that is also stuck) until a node repeats.
fn find_cycle(dag: &DagSpec, stuck: &BTreeSet<&str>) -> Vec<String> {
    let Some(start) = stuck.first() else { return Vec::new() };
    let mut path: Vec<&str> = vec![start];
    loop {
        let cur = *path.last().unwrap();
        let next = dag
            .task(cur)
            .and_then(|t| t.depends_on.iter().map(String::as_str).filter(|d| stuck.contains(d)).min())
            .expect("stuck node has a stuck dependency");
        if let Some(i) = path.iter().position(|p| *p == next) {
            let mut cycle: Vec<String> = path[i..].iter().rev().map(|s| s.to_string()).collect();
            cycle.push(cycle[0].clone());
            return cycle;
        }
        path.push(next);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Pending,
    Queued,
    Running,
    Succeeded,
    Failed,
    Retrying,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Succeeded | TaskState::Failed)
    }

    /// Pending→Failed covers dependents of a failed task, which never run.
    pub fn can_move_to(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Pending, Queued) | (Pending, Failed) | (Queued, Running) | (Running, Succeeded | Failed | Retrying) | (Retrying, Queued)
        )
    }
}

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("invalid DAG: {0}")]
    InvalidDag(String),
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("no action registered for task {0}")]
    ActionNotRegistered(String),
    #[error("corrupt run log {path} line {line}: {reason}")]
    CorruptRunLog { path: String, line: usize, reason: String },
    #[error("another scheduler holds {0}")]
    SchedulerLocked(String),
    #[error(transparent)]
    Crash(#[from] InjectedCrash),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl SchedError {
    pub fn kind(&self) -> &'static str {
        match self {
            SchedError::InvalidDag(_) => "InvalidDag",
            SchedError::CycleDetected(_) => "CycleDetected",
            SchedError::ActionNotRegistered(_) => "ActionNotRegistered",
            SchedError::CorruptRunLog { .. } => "CorruptRunLog",
            SchedError::SchedulerLocked(_) => "SchedulerLocked",
            SchedError::Crash(_) => "InjectedCrash",
            SchedError::Io(_) => "Io",
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    const S: i64 = 1_000_000;

    pub fn task(id: &str, deps: &[&str]) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
            action: ActionBinding {
                name: format!("test.{id}"),
                params: serde_json::Value::Null,
            },
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_s: 5,
                cap_delay_s: 300,
            },
        }
    }

    pub fn dag(tasks: Vec<TaskSpec>) -> DagSpec {
        DagSpec {
            dag_id: "d".into(),
            schedule: Schedule::Interval {
                anchor_us: 0,
                period_us: 60 * S,
            },
            tasks,
            max_parallel_tasks: 2,
        }
    }

    #[test]
    fn interval_schedule() {
        let s = Schedule::Interval {
            anchor_us: 0,
            period_us: 60 * S,
        };
        assert_eq!(next_run_after(&s, 130 * S), 180 * S);
        assert_eq!(next_run_after(&s, 60 * S), 120 * S);
        let anchored = Schedule::Interval {
            anchor_us: 1000 * S,
            period_us: 60 * S,
        };
        assert_eq!(next_run_after(&anchored, 5 * S), 1000 * S);
        assert_eq!(next_run_after(&anchored, 999 * S), 1000 * S);
    }

    #[test]
    fn daily_schedule() {
        let s = Schedule::DailyAt { hour: 0, minute: 5 };
        let t = crate::time::parse_iso_us("2021-03-04T00:05:00Z").unwrap();
        assert_eq!(next_run_after(&s, t), crate::time::parse_iso_us("2021-03-05T00:05:00Z").unwrap());
        assert_eq!(next_run_after(&s, t - 1), t);
        assert!(Schedule::DailyAt { hour: 24, minute: 0 }.validate().is_err());
    }

    #[test]
    fn instants_window() {
        let day = crate::time::US_PER_DAY;
        let s = Schedule::Interval {
            anchor_us: 0,
            period_us: day,
        };
        assert_eq!(instants_in(&s, 10 * day, 13 * day), [10 * day, 11 * day, 12 * day]);
        assert!(instants_in(&s, 10 * day, 10 * day).is_empty());
        assert_eq!(instants_in(&s, 10 * day + 1, 12 * day), [11 * day]);
    }

    #[test]
    fn topo_examples() {
        let diamond = dag(vec![task("D", &["B", "C"]), task("C", &["A"]), task("B", &["A"]), task("A", &[])]);
        assert_eq!(topo_order(&diamond).unwrap(), ["A", "B", "C", "D"]);
        let cyc = dag(vec![task("A", &["B"]), task("B", &["A"])]);
        match topo_order(&cyc) {
            Err(SchedError::CycleDetected(c)) => {
                assert_eq!(c.first(), c.last());
                assert_eq!(c.len(), 3);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(topo_order(&dag(vec![task("only", &[])])).unwrap(), ["only"]);
    }

    #[test]
    fn backoff_examples() {
        let r = RetryPolicy {
            max_attempts: 10,
            base_delay_s: 5,
            cap_delay_s: 300,
        };
        assert_eq!(backoff_delay(&r, 1), 5);
        assert_eq!(backoff_delay(&r, 3), 20);
        assert_eq!(backoff_delay(&r, 10), 300);
        assert_eq!(backoff_delay(&r, 200), 300);
    }

    #[test]
    fn dag_validation() {
        assert!(dag(vec![task("A", &["Z"])]).validate().is_err());
        assert!(dag(vec![task("A", &[]), task("A", &[])]).validate().is_err());
        assert!(dag(vec![task("A", &[]), task("B", &["A"])]).validate().is_ok());
    }

    #[test]
    fn dag_json() {
        let json = r#"{"dag_id":"brc","schedule":{"kind":"interval","anchor_us":0,"period_us":300000000},
            "max_parallel_tasks":2,"tasks":[{"task_id":"export","action":{"name":"etl.export","params":{"table":"trades"}},
            "retry":{"max_attempts":3,"base_delay_s":5,"cap_delay_s":300}}]}"#;
        let d: DagSpec = serde_json::from_str(json).unwrap();
        d.validate().unwrap();
        assert_eq!(d.tasks[0].action.params["table"], "trades");
    }
}
