use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::runlog::{recover, run_log_path, RunEvent, RunLog};
use super::{backoff_delay, instants_in, topo_order, DagSpec, SchedError, TaskState};
use crate::clock::Clock;
use crate::fault::InjectedCrash;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunState {
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRun {
    pub dag_id: String,
    pub logical_time_us: i64,
    pub task_id: String,
    pub attempt: u32,
    pub state: TaskState,
    pub started_us: Option<i64>,
    pub finished_us: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunResult {
    pub dag_id: String,
    pub logical_time_us: i64,
    pub state: RunState,
    /// In topological order.
    pub tasks: Vec<TaskRun>,
    /// The log already recorded this run as finished; nothing was executed.
    pub already_finished: bool,
}

#[derive(Debug)]
pub enum ActionError {
    /// Ordinary failure; the task is retried per its policy.
    Failed(String),
    /// Simulated process death: the scheduler stops without recording anything.
    Crash(InjectedCrash),
}

impl From<InjectedCrash> for ActionError {
    fn from(c: InjectedCrash) -> Self {
        ActionError::Crash(c)
    }
}

#[derive(Debug, Clone)]
pub struct TaskContext<'a> {
    pub dag_id: &'a str,
    pub task_id: &'a str,
    /// The schedule instant this run stands for, not wall time.
    pub logical_time_us: i64,
    pub attempt: u32,
    pub params: &'a serde_json::Value,
}

/// Actions must tolerate at-least-once execution.
pub trait TaskAction: Send + Sync {
    fn run(&self, ctx: &TaskContext<'_>) -> Result<(), ActionError>;
}

impl<F> TaskAction for F
where
    F: Fn(&TaskContext<'_>) -> Result<(), ActionError> + Send + Sync,
{
    fn run(&self, ctx: &TaskContext<'_>) -> Result<(), ActionError> {
        self(ctx)
    }
}

#[derive(Clone, Default)]
pub struct ActionRegistry {
    actions: HashMap<String, Arc<dyn TaskAction>>,
}

impl std::fmt::Debug for ActionRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.names()).finish()
    }
}

impl ActionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, action: impl TaskAction + 'static) -> &mut Self {
        self.actions.insert(name.to_string(), Arc::new(action));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn TaskAction>> {
        self.actions.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.actions.keys().cloned().collect();
        v.sort();
        v
    }
}

struct Live {
    state: TaskState,
    attempt: u32,
    ready_at_us: i64,
    started_us: Option<i64>,
    finished_us: Option<i64>,
}

struct Run<'a> {
    dag: &'a DagSpec,
    logical_time_us: i64,
    clock: &'a dyn Clock,
    log: RunLog,
    tasks: BTreeMap<String, Live>,
}

impl Run<'_> {
    /// Logs the transition, then applies it.
    fn transition(
        &mut self,
        task_id: &str,
        to: TaskState,
        attempt: u32,
        ready_at_us: Option<i64>,
        error: Option<String>,
    ) -> Result<(), SchedError> {
        let now = self.clock.now_us();
        let t = self.tasks.get_mut(task_id).expect("known task");
        debug_assert!(t.state.can_move_to(to), "{:?} -> {to:?}", t.state);
        self.log.append(&RunEvent::Transition {
            at_us: now,
            task_id: task_id.to_string(),
            attempt,
            from: t.state,
            to,
            ready_at_us,
            error,
        })?;
        t.state = to;
        t.attempt = attempt;
        if let Some(r) = ready_at_us {
            t.ready_at_us = r;
        }
        match to {
            TaskState::Running => t.started_us = Some(now),
            TaskState::Succeeded | TaskState::Failed => t.finished_us = Some(now),
            _ => {}
        }
        Ok(())
    }

    fn state(&self, id: &str) -> TaskState {
        self.tasks[id].state
    }

    fn result(&self, order: &[String], state: RunState, already_finished: bool) -> RunResult {
        RunResult {
            dag_id: self.dag.dag_id.clone(),
            logical_time_us: self.logical_time_us,
            state,
            tasks: order
                .iter()
                .map(|id| {
                    let t = &self.tasks[id];
                    TaskRun {
                        dag_id: self.dag.dag_id.clone(),
                        logical_time_us: self.logical_time_us,
                        task_id: id.clone(),
                        attempt: t.attempt,
                        state: t.state,
                        started_us: t.started_us,
                        finished_us: t.finished_us,
                    }
                })
                .collect(),
            already_finished,
        }
    }
}

/// Runs (or resumes) one DAG run under `state_root`. A finished run is
/// returned from its log without executing anything.
pub fn execute_run(
    dag: &DagSpec,
    logical_time_us: i64,
    clock: &dyn Clock,
    registry: &ActionRegistry,
    state_root: &Path,
) -> Result<RunResult, SchedError> {
    dag.validate()?;
    let order = topo_order(dag)?;
    for t in &dag.tasks {
        if registry.get(&t.action.name).is_none() {
            return Err(SchedError::ActionNotRegistered(t.task_id.clone()));
        }
    }

    let path = run_log_path(state_root, &dag.dag_id, logical_time_us);
    let recovered = recover(&path)?;
    let mut run = Run {
        dag,
        logical_time_us,
        clock,
        log: RunLog::open(&path)?,
        tasks: order
            .iter()
            .map(|id| {
                let live = Live {
                    state: TaskState::Pending,
                    attempt: 0,
                    ready_at_us: i64::MIN,
                    started_us: None,
                    finished_us: None,
                };
                (id.clone(), live)
            })
            .collect(),
    };

    match recovered {
        None => run.log.append(&RunEvent::RunStarted {
            at_us: clock.now_us(),
            dag_id: dag.dag_id.clone(),
            logical_time_us,
        })?,
        Some(rec) => {
            for (id, t) in &rec.tasks {
                let Some(live) = run.tasks.get_mut(id) else {
                    return Err(SchedError::CorruptRunLog {
                        path: path.display().to_string(),
                        line: 0,
                        reason: format!("task {id:?} is not in DAG {}", dag.dag_id),
                    });
                };
                live.state = t.state;
                live.attempt = t.attempt;
                live.started_us = t.started_us;
                live.finished_us = t.finished_us;
                live.ready_at_us = rec.ready_at_us.get(id).copied().unwrap_or(i64::MIN);
            }
            if let Some(state) = rec.finished {
                return Ok(run.result(&order, state, true));
            }
            // Interrupted attempts are re-queued under the same attempt number.
            for id in &order {
                if run.state(id) == TaskState::Running {
                    let attempt = run.tasks[id].attempt;
                    let now = clock.now_us();
                    run.transition(id, TaskState::Retrying, attempt, Some(now), Some("interrupted".into()))?;
                    run.transition(id, TaskState::Queued, attempt, None, None)?;
                }
            }
        }
    }

    loop {
        for id in &order {
            if run.state(id) != TaskState::Pending {
                continue;
            }
            let spec = dag.task(id).expect("task in order");
            if let Some(dep) = spec.depends_on.iter().find(|d| run.state(d) == TaskState::Failed) {
                run.transition(id, TaskState::Failed, 0, None, Some(format!("upstream {dep} failed")))?;
            } else if spec.depends_on.iter().all(|d| run.state(d) == TaskState::Succeeded) {
                run.transition(id, TaskState::Queued, 1, None, None)?;
            }
        }
        let now = clock.now_us();
        for id in &order {
            let t = &run.tasks[id];
            if t.state == TaskState::Retrying && t.ready_at_us <= now {
                let next = t.attempt + 1;
                run.transition(id, TaskState::Queued, next, None, None)?;
            }
        }
        if run.tasks.values().all(|t| t.state.is_terminal()) {
            break;
        }

        let wave: Vec<String> = order
            .iter()
            .filter(|id| run.state(id) == TaskState::Queued)
            .take(dag.max_parallel_tasks)
            .cloned()
            .collect();
        if wave.is_empty() {
            let next = run
                .tasks
                .values()
                .filter(|t| t.state == TaskState::Retrying)
                .map(|t| t.ready_at_us)
                .min()
                .expect("non-terminal tasks are pending on a retry");
            clock.sleep_until(next);
            continue;
        }
        for id in &wave {
            let attempt = run.tasks[id].attempt;
            run.transition(id, TaskState::Running, attempt, None, None)?;
        }

        let results: Vec<Result<(), ActionError>> = {
            let jobs: Vec<(TaskContext<'_>, Arc<dyn TaskAction>)> = wave
                .iter()
                .map(|id| {
                    let spec = dag.task(id).expect("task in order");
                    let ctx = TaskContext {
                        dag_id: &dag.dag_id,
                        task_id: &spec.task_id,
                        logical_time_us,
                        attempt: run.tasks[id].attempt,
                        params: &spec.action.params,
                    };
                    (ctx, registry.get(&spec.action.name).expect("checked above").clone())
                })
                .collect();
            if jobs.len() == 1 {
                jobs.iter().map(|(ctx, a)| a.run(ctx)).collect()
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = jobs.iter().map(|(ctx, a)| s.spawn(move || a.run(ctx))).collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().unwrap_or_else(|_| Err(ActionError::Failed("action panicked".into()))))
                        .collect()
                })
            }
        };

        if results.iter().any(|r| matches!(r, Err(ActionError::Crash(_)))) {
            let crash = results
                .into_iter()
                .find_map(|r| match r {
                    Err(ActionError::Crash(c)) => Some(c),
                    _ => None,
                })
                .expect("found above");
            return Err(SchedError::Crash(crash));
        }

        let now = clock.now_us();
        for (id, result) in wave.iter().zip(results) {
            let attempt = run.tasks[id].attempt;
            match result {
                Ok(()) => run.transition(id, TaskState::Succeeded, attempt, None, None)?,
                Err(ActionError::Failed(msg)) => {
                    let retry = dag.task(id).expect("task in order").retry;
                    if attempt < retry.max_attempts {
                        let delay_us = (backoff_delay(&retry, attempt) as i64).saturating_mul(1_000_000);
                        let ready = now.saturating_add(delay_us);
                        run.transition(id, TaskState::Retrying, attempt, Some(ready), Some(msg))?;
                    } else {
                        run.transition(id, TaskState::Failed, attempt, None, Some(msg))?;
                    }
                }
                Err(ActionError::Crash(_)) => unreachable!("handled above"),
            }
        }
    }

    let state = if run.tasks.values().all(|t| t.state == TaskState::Succeeded) {
        RunState::Succeeded
    } else {
        RunState::Failed
    };
    run.log.append(&RunEvent::RunFinished {
        at_us: clock.now_us(),
        state,
    })?;
    Ok(run.result(&order, state, false))
}

/// One run per schedule instant in `[from_us, to_us)`, oldest first.
/// Finished runs are skipped; a partially executed run resumes.
pub fn backfill(
    dag: &DagSpec,
    from_us: i64,
    to_us: i64,
    clock: &dyn Clock,
    registry: &ActionRegistry,
    state_root: &Path,
) -> Result<Vec<RunResult>, SchedError> {
    dag.validate()?;
    instants_in(&dag.schedule, from_us, to_us)
        .into_iter()
        .map(|t| execute_run(dag, t, clock, registry, state_root))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::fault::{CrashPoint, FaultInjector};
    use crate::orchestrator::tests::{dag, task};
    use crate::orchestrator::{recover, Schedule};
    use std::sync::Mutex;

    const S: i64 = 1_000_000;

    /// Scripted outcomes: `fail[task]` failures before success; every start recorded.
    #[derive(Default)]
    struct Script {
        fail: Mutex<HashMap<String, u32>>,
        starts: Mutex<Vec<(String, u32, i64, i64)>>,
    }

    fn registry(script: &Arc<Script>, ids: &[&str], clock: &Arc<SimClock>) -> ActionRegistry {
        let mut r = ActionRegistry::new();
        for id in ids {
            let (s, c) = (script.clone(), clock.clone());
            r.register(&format!("test.{id}"), move |ctx: &TaskContext<'_>| {
                s.starts
                    .lock()
                    .unwrap()
                    .push((ctx.task_id.to_string(), ctx.attempt, c.now_us(), ctx.logical_time_us));
                let mut f = s.fail.lock().unwrap();
                match f.get_mut(ctx.task_id) {
                    Some(n) if *n > 0 => {
                        *n -= 1;
                        Err(ActionError::Failed("scripted".into()))
                    }
                    _ => Ok(()),
                }
            });
        }
        r
    }

    fn events(root: &Path, t: i64) -> Vec<RunEvent> {
        recover(&run_log_path(root, "d", t)).unwrap().unwrap().events
    }

    #[test]
    fn all_succeed() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::new(0));
        let script = Arc::new(Script::default());
        let d = dag(vec![task("A", &[]), task("B", &["A"]), task("C", &["A"])]);
        let r = execute_run(&d, 0, clock.as_ref(), &registry(&script, &["A", "B", "C"], &clock), dir.path()).unwrap();
        assert_eq!(r.state, RunState::Succeeded);
        assert!(r.tasks.iter().all(|t| t.attempt == 1 && t.state == TaskState::Succeeded));
        assert!(matches!(events(dir.path(), 0).last(), Some(RunEvent::RunFinished { state: RunState::Succeeded, .. })));
    }

    #[test]
    fn retry_with_backoff() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::new(1000 * S));
        let script = Arc::new(Script::default());
        script.fail.lock().unwrap().insert("B".into(), 2);
        let d = dag(vec![task("A", &[]), task("B", &["A"])]);
        let r = execute_run(&d, 0, clock.as_ref(), &registry(&script, &["A", "B"], &clock), dir.path()).unwrap();
        assert_eq!(r.state, RunState::Succeeded);
        let b: Vec<(u32, i64)> = script.starts.lock().unwrap().iter().filter(|s| s.0 == "B").map(|s| (s.1, s.2)).collect();
        assert_eq!(b, [(1, 1000 * S), (2, 1005 * S), (3, 1015 * S)]);
    }

    #[test]
    fn failure_propagates() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::new(0));
        let script = Arc::new(Script::default());
        script.fail.lock().unwrap().insert("A".into(), 99);
        let d = dag(vec![task("A", &[]), task("B", &["A"]), task("C", &["B"]), task("X", &[])]);
        let r = execute_run(&d, 0, clock.as_ref(), &registry(&script, &["A", "B", "C", "X"], &clock), dir.path()).unwrap();
        assert_eq!(r.state, RunState::Failed);
        let st: HashMap<_, _> = r.tasks.iter().map(|t| (t.task_id.as_str(), (t.state, t.attempt))).collect();
        assert_eq!(st["A"], (TaskState::Failed, 3));
        assert_eq!(st["B"].0, TaskState::Failed);
        assert_eq!(st["C"].0, TaskState::Failed);
        assert_eq!(st["X"].0, TaskState::Succeeded);
        let started: Vec<String> = script.starts.lock().unwrap().iter().map(|s| s.0.clone()).collect();
        assert!(!started.contains(&"B".into()) && !started.contains(&"C".into()));
    }

    #[test]
    fn unregistered_action() {
        let dir = tempfile::tempdir().unwrap();
        let d = dag(vec![task("A", &[])]);
        assert!(matches!(
            execute_run(&d, 0, &SimClock::new(0), &ActionRegistry::new(), dir.path()),
            Err(SchedError::ActionNotRegistered(t)) if t == "A"
        ));
    }

    /// Replays the log checking parallelism and dependency order.
    fn check_log_invariants(d: &DagSpec, evs: &[RunEvent]) {
        let mut running = 0usize;
        let mut succeeded = std::collections::HashSet::new();
        for e in evs {
            if let RunEvent::Transition { task_id, to, from, .. } = e {
                if *to == TaskState::Running {
                    running += 1;
                    assert!(running <= d.max_parallel_tasks);
                    for dep in &d.task(task_id).unwrap().depends_on {
                        assert!(succeeded.contains(dep), "{task_id} started before {dep}");
                    }
                }
                if *from == TaskState::Running {
                    running -= 1;
                }
                if *to == TaskState::Succeeded {
                    succeeded.insert(task_id.clone());
                }
            }
        }
    }

    #[test]
    fn wide_dag_respects_parallelism_and_is_deterministic() {
        let mut tasks = vec![task("root", &[])];
        for i in 0..6 {
            tasks.push(task(&format!("mid{i}"), &["root"]));
        }
        tasks.push(task("sink", &["mid0", "mid1", "mid2", "mid3", "mid4", "mid5"]));
        let d = dag(tasks);
        let ids: Vec<String> = d.tasks.iter().map(|t| t.task_id.clone()).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let mut logs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let clock = Arc::new(SimClock::new(0));
            let script = Arc::new(Script::default());
            script.fail.lock().unwrap().insert("mid3".into(), 1);
            execute_run(&d, 0, clock.as_ref(), &registry(&script, &ids, &clock), dir.path()).unwrap();
            let evs = events(dir.path(), 0);
            check_log_invariants(&d, &evs);
            logs.push(evs);
        }
        assert_eq!(logs[0], logs[1]);
    }

    fn crashing(script: &Arc<Script>, clock: &Arc<SimClock>, faults: &Arc<FaultInjector>, ids: &[&str]) -> ActionRegistry {
        let mut r = registry(script, ids, clock);
        for id in ids {
            let inner = r.get(&format!("test.{id}")).unwrap().clone();
            let f = faults.clone();
            r.register(&format!("test.{id}"), move |ctx: &TaskContext<'_>| {
                inner.run(ctx)?;
                f.hit("test", Some(ctx.task_id)).map_err(ActionError::Crash)
            });
        }
        r
    }

    #[test]
    fn recovery_requeues_running_task_with_same_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::new(0));
        let script = Arc::new(Script::default());
        let faults = Arc::new(FaultInjector::new([CrashPoint {
            site: "test".into(),
            scope: Some("B".into()),
            hit: 1,
        }]));
        let d = dag(vec![task("A", &[]), task("B", &["A"])]);
        let reg = crashing(&script, &clock, &faults, &["A", "B"]);
        assert!(matches!(execute_run(&d, 0, clock.as_ref(), &reg, dir.path()), Err(SchedError::Crash(_))));
        let rec = recover(&run_log_path(dir.path(), "d", 0)).unwrap().unwrap();
        assert_eq!(rec.tasks["B"].state, TaskState::Running);
        let r = execute_run(&d, 0, clock.as_ref(), &reg, dir.path()).unwrap();
        assert_eq!(r.state, RunState::Succeeded);
        assert_eq!(r.tasks[1].attempt, 1);
        let starts: Vec<(String, u32)> = script.starts.lock().unwrap().iter().map(|s| (s.0.clone(), s.1)).collect();
        // A is never re-run; B's interrupted attempt 1 runs again.
        assert_eq!(starts, [("A".to_string(), 1), ("B".to_string(), 1), ("B".to_string(), 1)]);
        let again = execute_run(&d, 0, clock.as_ref(), &reg, dir.path()).unwrap();
        assert!(again.already_finished);
    }

    #[test]
    fn backfill_windows_and_crash_resume() {
        let day = crate::time::US_PER_DAY;
        let mut d = dag(vec![task("A", &[])]);
        d.schedule = Schedule::Interval {
            anchor_us: 0,
            period_us: day,
        };
        let dir = tempfile::tempdir().unwrap();
        let clock = Arc::new(SimClock::new(100 * day));
        let script = Arc::new(Script::default());
        let faults = Arc::new(FaultInjector::new([CrashPoint {
            site: "test".into(),
            scope: Some("A".into()),
            hit: 3,
        }]));
        let reg = crashing(&script, &clock, &faults, &["A"]);
        assert!(backfill(&d, 10 * day, 13 * day, clock.as_ref(), &reg, dir.path()).is_err());
        script.starts.lock().unwrap().clear();
        let runs = backfill(&d, 10 * day, 13 * day, clock.as_ref(), &reg, dir.path()).unwrap();
        assert_eq!(runs.len(), 3);
        assert_eq!(runs.iter().map(|r| r.already_finished).collect::<Vec<_>>(), [true, true, false]);
        let executed: Vec<i64> = script.starts.lock().unwrap().iter().map(|s| s.3).collect();
        assert_eq!(executed, [12 * day]);
        assert!(backfill(&d, 5 * day, 5 * day, clock.as_ref(), &reg, dir.path()).unwrap().is_empty());
    }
}
