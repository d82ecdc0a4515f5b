use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::runlog::{recover, run_log_path};
use super::{backfill, execute_run, next_run_after, ActionRegistry, DagSpec, RunResult, SchedError};
use crate::clock::Clock;
use crate::fsutil::LockFile;

/// Every `*.json` in `dir`, by file name. DAG ids must be unique.
pub fn load_dags(dir: &Path) -> Result<Vec<DagSpec>, SchedError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in paths {
        let dag = DagSpec::from_json_file(&p)?;
        if !seen.insert(dag.dag_id.clone()) {
            return Err(SchedError::InvalidDag(format!("dag_id {:?} defined twice", dag.dag_id)));
        }
        out.push(dag);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct SchedulerOptions {
    /// Stop after this many runs (resumed runs included).
    pub max_runs: Option<usize>,
    /// Do not start runs whose logical time is at or after this instant.
    pub until_us: Option<i64>,
}

/// Sole owner of a state directory while alive.
pub struct Scheduler {
    dags: Vec<DagSpec>,
    registry: ActionRegistry,
    clock: Arc<dyn Clock>,
    state_root: PathBuf,
    _lock: LockFile,
}

impl std::fmt::Debug for Scheduler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scheduler").field("state_root", &self.state_root).finish()
    }
}

impl Scheduler {
    pub fn new(
        dags: Vec<DagSpec>,
        registry: ActionRegistry,
        clock: Arc<dyn Clock>,
        state_root: &Path,
    ) -> Result<Self, SchedError> {
        for d in &dags {
            d.validate()?;
        }
        let lock_path = state_root.join("scheduler.lock");
        let lock = LockFile::try_acquire(&lock_path)?
            .ok_or_else(|| SchedError::SchedulerLocked(lock_path.display().to_string()))?;
        Ok(Scheduler {
            dags,
            registry,
            clock,
            state_root: state_root.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn dag(&self, dag_id: &str) -> Result<&DagSpec, SchedError> {
        self.dags
            .iter()
            .find(|d| d.dag_id == dag_id)
            .ok_or_else(|| SchedError::InvalidDag(format!("unknown dag {dag_id:?}")))
    }

    pub fn run_once(&self, dag_id: &str, logical_time_us: i64) -> Result<RunResult, SchedError> {
        execute_run(self.dag(dag_id)?, logical_time_us, self.clock.as_ref(), &self.registry, &self.state_root)
    }

    pub fn backfill(&self, dag_id: &str, from_us: i64, to_us: i64) -> Result<Vec<RunResult>, SchedError> {
        backfill(self.dag(dag_id)?, from_us, to_us, self.clock.as_ref(), &self.registry, &self.state_root)
    }

    fn logged_runs(&self, dag_id: &str) -> Result<Vec<i64>, SchedError> {
        let dir = self.state_root.join("runs").join(dag_id);
        let mut times: Vec<i64> = match fs::read_dir(&dir) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .filter_map(|e| e.file_name().to_str().and_then(|s| s.parse().ok()))
                .collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        times.sort_unstable();
        Ok(times)
    }

    /// Finishes every run whose log stops short of `run_finished`.
    pub fn resume_unfinished(&self) -> Result<Vec<RunResult>, SchedError> {
        let mut out = Vec::new();
        for d in &self.dags {
            for t in self.logged_runs(&d.dag_id)? {
                let unfinished = recover(&run_log_path(&self.state_root, &d.dag_id, t))?.is_some_and(|r| r.finished.is_none());
                if unfinished {
                    out.push(self.run_once(&d.dag_id, t)?);
                }
            }
        }
        Ok(out)
    }

    /// Resumes interrupted runs, then fires each DAG at its schedule
    /// instants, earliest first. Without a prior run a DAG starts at its
    /// next instant after now; missed instants are left to `backfill`.
    pub fn run(&self, opts: &SchedulerOptions) -> Result<Vec<RunResult>, SchedError> {
        let mut done = self.resume_unfinished()?;
        let mut last: Vec<i64> = self
            .dags
            .iter()
            .map(|d| {
                let logged = self.logged_runs(&d.dag_id)?;
                Ok(logged.last().copied().unwrap_or_else(|| self.clock.now_us()))
            })
            .collect::<Result<_, SchedError>>()?;
        loop {
            if opts.max_runs.is_some_and(|m| done.len() >= m) {
                break;
            }
            let Some((i, next)) = self
                .dags
                .iter()
                .enumerate()
                .map(|(i, d)| (i, next_run_after(&d.schedule, last[i])))
                .min_by_key(|(i, t)| (*t, *i))
            else {
                break;
            };
            if opts.until_us.is_some_and(|u| next >= u) {
                break;
            }
            self.clock.sleep_until(next);
            done.push(execute_run(&self.dags[i], next, self.clock.as_ref(), &self.registry, &self.state_root)?);
            last[i] = next;
        }
        Ok(done)
    }
}
