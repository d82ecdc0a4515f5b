//! Named crash sites.
//!
//! Components call [`FaultInjector::hit`] at the points where a process kill
//! is interesting. When an armed site fires, the call returns
//! [`InjectedCrash`] and the caller must bail out immediately without any
//! further durable writes; the harness then rebuilds every component from
//! disk, which is what a process restart would do.

use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Inside `append_batch`, after record lines are written but before the
/// segment head is published.
pub const MID_APPEND: &str = "mid_append";
/// Connector appended a batch but has not yet saved its source position.
pub const AFTER_APPEND_BEFORE_POSITION: &str = "after_append_before_position";
/// Exporter drained a batch but wrote nothing yet.
pub const AFTER_DRAIN: &str = "after_drain";
/// Data files written, no log entry yet.
pub const AFTER_DATA_WRITE: &str = "after_data_write";
/// Log entry committed, staging checkpoint not advanced.
pub const AFTER_LAKE_COMMIT_BEFORE_CHECKPOINT: &str = "after_lake_commit_before_checkpoint";
/// Compacted file written, replacing commit not made.
pub const MID_COMPACTION: &str = "mid_compaction";

pub const ALL_SITES: &[&str] = &[
    MID_APPEND,
    AFTER_APPEND_BEFORE_POSITION,
    AFTER_DRAIN,
    AFTER_DATA_WRITE,
    AFTER_LAKE_COMMIT_BEFORE_CHECKPOINT,
    MID_COMPACTION,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashPoint {
    pub site: String,
    /// Restrict hit counting to one scope (usually a connector id).
    #[serde(default)]
    pub scope: Option<String>,
    /// Fire on this (1-based) hit of the site within the scope.
    #[serde(default = "one")]
    pub hit: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InjectedCrash {
    pub site: String,
    pub scope: Option<String>,
}

impl fmt::Display for InjectedCrash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.scope {
            Some(s) => write!(f, "injected crash at {} ({s})", self.site),
            None => write!(f, "injected crash at {}", self.site),
        }
    }
}

impl std::error::Error for InjectedCrash {}

#[derive(Debug)]
struct Armed {
    point: CrashPoint,
    seen: u64,
    fired: bool,
}

/// Counts hits per armed crash point; each point fires at most once for the
/// lifetime of the injector, so it must outlive simulated restarts.
#[derive(Debug, Default)]
pub struct FaultInjector {
    armed: Mutex<Vec<Armed>>,
    fired: Mutex<Vec<CrashPoint>>,
}

impl FaultInjector {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn new(points: impl IntoIterator<Item = CrashPoint>) -> Self {
        let armed = points
            .into_iter()
            .map(|point| Armed {
                point,
                seen: 0,
                fired: false,
            })
            .collect();
        Self {
            armed: Mutex::new(armed),
            fired: Mutex::new(Vec::new()),
        }
    }

    pub fn hit(&self, site: &str, scope: Option<&str>) -> Result<(), InjectedCrash> {
        let mut armed = self.armed.lock().unwrap();
        for a in armed.iter_mut() {
            if a.fired || a.point.site != site {
                continue;
            }
            if let Some(want) = &a.point.scope {
                if scope != Some(want.as_str()) {
                    continue;
                }
            }
            a.seen += 1;
            if a.seen == a.point.hit {
                a.fired = true;
                self.fired.lock().unwrap().push(a.point.clone());
                return Err(InjectedCrash {
                    site: site.to_string(),
                    scope: scope.map(str::to_string),
                });
            }
        }
        Ok(())
    }

    /// Crash points that have fired so far, in firing order.
    pub fn fired(&self) -> Vec<CrashPoint> {
        self.fired.lock().unwrap().clone()
    }

    pub fn pending(&self) -> usize {
        self.armed.lock().unwrap().iter().filter(|a| !a.fired).count()
    }
}
