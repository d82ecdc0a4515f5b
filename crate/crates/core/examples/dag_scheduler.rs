//! DAG runs under a simulated clock: a flaky task retried with exponential
//! backoff, a failing branch, and a week-long daily backfill.
//!
//! cargo run --example dag_scheduler

use std::sync::{Arc, Mutex};

use brc_lake::clock::{Clock, SimClock};
use brc_lake::orchestrator::{
    recover, run_log_path, ActionError, ActionRegistry, DagSpec, RunEvent, Scheduler, TaskContext,
};
use brc_lake::time::{parse_iso_us, render_iso_us};

const DAG: &str = r#"{
  "dag_id": "nightly",
  "schedule": {"kind": "daily_at", "hour": 1, "minute": 30},
  "max_parallel_tasks": 2,
  "tasks": [
    {"task_id": "pull", "action": {"name": "demo.ok"}},
    {"task_id": "flaky", "depends_on": ["pull"], "action": {"name": "demo.flaky"},
     "retry": {"max_attempts": 4, "base_delay_s": 5, "cap_delay_s": 60}},
    {"task_id": "broken", "depends_on": ["pull"], "action": {"name": "demo.fail"}},
    {"task_id": "after_broken", "depends_on": ["broken"], "action": {"name": "demo.ok"}},
    {"task_id": "publish", "depends_on": ["flaky"], "action": {"name": "demo.ok"}}
  ]
}"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dag: DagSpec = serde_json::from_str(DAG)?;
    let clock = Arc::new(SimClock::new(parse_iso_us("2024-05-01T00:00:00Z").unwrap()));
    let failures_left = Arc::new(Mutex::new(3));
    let mut registry = ActionRegistry::new();
    registry.register("demo.ok", |_: &TaskContext<'_>| Ok(()));
    registry.register("demo.fail", |_: &TaskContext<'_>| Err(ActionError::Failed("always".into())));
    let left = failures_left.clone();
    registry.register("demo.flaky", move |ctx: &TaskContext<'_>| {
        let mut n = left.lock().unwrap();
        if *n > 0 {
            *n -= 1;
            return Err(ActionError::Failed(format!("attempt {} failed", ctx.attempt)));
        }
        Ok(())
    });

    let state = tempfile::tempdir()?;
    let sched = Scheduler::new(vec![dag.clone()], registry, clock.clone(), state.path())?;
    let at = parse_iso_us("2024-04-30T01:30:00Z").unwrap();
    let run = sched.run_once("nightly", at)?;
    println!("run {} -> {:?}", render_iso_us(at), run.state);
    for e in recover(&run_log_path(state.path(), "nightly", at))?.unwrap().events {
        if let RunEvent::Transition { at_us, task_id, attempt, from, to, ready_at_us, .. } = e {
            let ready = ready_at_us.map(|r| format!(" next try {}", render_iso_us(r))).unwrap_or_default();
            println!("  {} {task_id:<12} #{attempt} {from:?} -> {to:?}{ready}", render_iso_us(at_us));
        }
    }

    let from = parse_iso_us("2024-04-01T00:00:00Z").unwrap();
    let to = parse_iso_us("2024-04-08T00:00:00Z").unwrap();
    *failures_left.lock().unwrap() = 0;
    let runs = sched.backfill("nightly", from, to)?;
    println!("backfill {} .. {}: {} runs (each fails on `broken`)", render_iso_us(from), render_iso_us(to), runs.len());
    for r in &runs {
        println!("  {} {:?}", render_iso_us(r.logical_time_us), r.state);
    }
    println!("simulated clock now {}", render_iso_us(clock.now_us()));
    Ok(())
}
