use std::collections::{BTreeSet, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::Serialize;

use super::{Action, LakeError, LogEntry, PartitionKey, Snapshot};
use crate::clock::Clock;
use crate::lakeformat::ColumnSchema;
use crate::objectstore::{ObjectKey, ObjectStore, StoreError};

pub const DEFAULT_MAX_RETRIES: u32 = 10;

/// Handle on one table. Cheap to clone; the cached snapshot is shared.
#[derive(Clone)]
pub struct Table {
    store: Arc<dyn ObjectStore>,
    clock: Arc<dyn Clock>,
    table_id: String,
    cache: Arc<Mutex<Option<Snapshot>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub version: u64,
    pub live_files: usize,
    /// Live paths whose object is missing. Must always be empty.
    pub dangling: Vec<String>,
    /// Data objects no log entry ever added (e.g. a crash between data
    /// write and commit).
    pub unreferenced: Vec<String>,
    /// Data objects that were added and later removed.
    pub removed: Vec<String>,
}

impl std::fmt::Debug for Table {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Table").field("table_id", &self.table_id).finish()
    }
}

fn parse_log_name(name: &str) -> Option<u64> {
    let digits = name.strip_suffix(".json")?;
    (digits.len() == 20 && digits.bytes().all(|b| b.is_ascii_digit())).then(|| digits.parse().ok())?
}

impl Table {
    pub fn new(store: Arc<dyn ObjectStore>, table_id: &str, clock: Arc<dyn Clock>) -> Result<Self, LakeError> {
        if !crate::objectstore::is_valid_segment(table_id) {
            return Err(LakeError::InvalidAction(format!("bad table id {table_id:?}")));
        }
        Ok(Table {
            store,
            clock,
            table_id: table_id.to_string(),
            cache: Arc::new(Mutex::new(None)),
        })
    }

    pub fn id(&self) -> &str {
        &self.table_id
    }

    pub fn store(&self) -> &Arc<dyn ObjectStore> {
        &self.store
    }

    fn log_prefix(&self) -> String {
        format!("tables/{}/_log/", self.table_id)
    }

    pub fn log_key(&self, version: u64) -> ObjectKey {
        ObjectKey::new(format!("{}{version:020}.json", self.log_prefix())).expect("valid log key")
    }

    pub fn data_prefix(&self) -> String {
        format!("tables/{}/data/", self.table_id)
    }

    /// Fresh, unique key for a new data file in `partition`.
    pub fn new_data_key(&self, partition: &PartitionKey, committer: &str) -> Result<ObjectKey, StoreError> {
        ObjectKey::new(format!(
            "{}{}/part-{committer}-{}.brcl",
            self.data_prefix(),
            partition.render(),
            uuid::Uuid::new_v4()
        ))
    }

    fn encode(entry: &LogEntry) -> Vec<u8> {
        let v = serde_json::to_value(entry).expect("entry serializes");
        serde_json::to_vec(&v).expect("entry serializes")
    }

    fn read_entry(&self, version: u64) -> Result<Option<LogEntry>, LakeError> {
        match self.store.get(&self.log_key(version)) {
            Ok(bytes) => {
                let e: LogEntry = serde_json::from_slice(&bytes)
                    .map_err(|err| LakeError::CorruptLog(format!("version {version}: {err}")))?;
                if e.version != version || e.parent + 1 != version {
                    return Err(LakeError::CorruptLog(format!(
                        "object for version {version} claims version {} parent {}",
                        e.version, e.parent
                    )));
                }
                Ok(Some(e))
            }
            Err(StoreError::NotFound(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn entry(&self, version: u64) -> Result<LogEntry, LakeError> {
        let current = self.current_version()?;
        if version == 0 || version > current {
            return Err(LakeError::NoSuchVersion { requested: version, current });
        }
        self.read_entry(version)?
            .ok_or_else(|| LakeError::CorruptLog(format!("version {version} vanished")))
    }

    pub fn init(&self, schema_id: &str, columns: &[ColumnSchema], committer: &str) -> Result<LogEntry, LakeError> {
        crate::lakeformat::validate_schema(columns).map_err(|e| LakeError::InvalidAction(e.to_string()))?;
        if !self.store.list(&self.log_prefix())?.is_empty() {
            return Err(LakeError::AlreadyInitialized(self.table_id.clone()));
        }
        let entry = LogEntry {
            version: 1,
            parent: 0,
            committed_at_us: self.clock.now_us(),
            actions: vec![Action::SetSchema {
                schema_id: schema_id.to_string(),
                columns: columns.to_vec(),
            }],
            committer: committer.to_string(),
        };
        match self.store.put(&self.log_key(1), &Self::encode(&entry), true) {
            Ok(_) => Ok(entry),
            Err(StoreError::PreconditionFailed(_)) => Err(LakeError::AlreadyInitialized(self.table_id.clone())),
            Err(e) => Err(e.into()),
        }
    }

    /// Highest version `v` such that entries `1..=v` are all present.
    pub fn current_version(&self) -> Result<u64, LakeError> {
        let prefix = self.log_prefix();
        let versions: BTreeSet<u64> = self
            .store
            .list(&prefix)?
            .iter()
            .filter_map(|m| parse_log_name(&m.key.as_str()[prefix.len()..]))
            .collect();
        let mut v = 0;
        while versions.contains(&(v + 1)) {
            v += 1;
        }
        if v == 0 {
            return Err(LakeError::NotInitialized(self.table_id.clone()));
        }
        Ok(v)
    }

    /// Rolls `snap` forward through every entry that exists after it.
    fn catch_up(&self, snap: &mut Snapshot) -> Result<(), LakeError> {
        while let Some(e) = self.read_entry(snap.version + 1)? {
            snap.apply(&e);
        }
        Ok(())
    }

    fn latest(&self) -> Result<Snapshot, LakeError> {
        let mut snap = self.cache.lock().unwrap().clone().unwrap_or_default();
        self.catch_up(&mut snap)?;
        if snap.version == 0 {
            return Err(LakeError::NotInitialized(self.table_id.clone()));
        }
        self.remember(&snap);
        Ok(snap)
    }

    fn remember(&self, snap: &Snapshot) {
        let mut c = self.cache.lock().unwrap();
        if c.as_ref().is_none_or(|old| old.version < snap.version) {
            *c = Some(snap.clone());
        }
    }

    /// Fold of entries `1..=version` (default: latest).
    pub fn snapshot_at(&self, version: Option<u64>) -> Result<Snapshot, LakeError> {
        let latest = self.latest()?;
        let Some(v) = version else { return Ok(latest) };
        if v == 0 || v > latest.version {
            return Err(LakeError::NoSuchVersion {
                requested: v,
                current: latest.version,
            });
        }
        if v == latest.version {
            return Ok(latest);
        }
        let mut snap = Snapshot::default();
        for i in 1..=v {
            let e = self
                .read_entry(i)?
                .ok_or_else(|| LakeError::CorruptLog(format!("version {i} missing below {}", latest.version)))?;
            snap.apply(&e);
        }
        Ok(snap)
    }

    /// Optimistic commit: validate against the latest snapshot, try to create
    /// the next version, and on conflict rebase onto whatever won and retry.
    pub fn commit(&self, actions: Vec<Action>, committer: &str, max_retries: u32) -> Result<LogEntry, LakeError> {
        let mut snap = self.latest()?;
        let mut conflicts = 0u32;
        loop {
            snap.validate(&actions)?;
            let entry = LogEntry {
                version: snap.version + 1,
                parent: snap.version,
                committed_at_us: self.clock.now_us(),
                actions: actions.clone(),
                committer: committer.to_string(),
            };
            match self.store.put(&self.log_key(entry.version), &Self::encode(&entry), true) {
                Ok(_) => {
                    snap.apply(&entry);
                    self.remember(&snap);
                    return Ok(entry);
                }
                Err(StoreError::PreconditionFailed(_)) => {
                    conflicts += 1;
                    if conflicts > max_retries {
                        return Err(LakeError::CommitConflictExhausted { attempts: conflicts });
                    }
                    let backoff = rand::rng().random_range(0..=(200u64 << conflicts.min(6)));
                    std::thread::sleep(Duration::from_micros(backoff));
                    self.catch_up(&mut snap)?;
                    self.remember(&snap);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// All entries `1..=current`, in order.
    pub fn history(&self) -> Result<Vec<LogEntry>, LakeError> {
        let current = self.current_version()?;
        (1..=current)
            .map(|v| {
                self.read_entry(v)?
                    .ok_or_else(|| LakeError::CorruptLog(format!("version {v} missing")))
            })
            .collect()
    }

    /// Cross-checks the latest snapshot against the objects under `data/`.
    pub fn audit(&self) -> Result<AuditReport, LakeError> {
        let history = self.history()?;
        let snap = Snapshot::fold(&history);
        let present: HashSet<String> = self
            .store
            .list(&self.data_prefix())?
            .into_iter()
            .map(|m| m.key.to_string())
            .collect();
        let ever_added: HashSet<String> = history
            .iter()
            .flat_map(|e| &e.actions)
            .filter_map(|a| match a {
                Action::AddFile(f) => Some(f.path.to_string()),
                _ => None,
            })
            .collect();
        let mut report = AuditReport {
            version: snap.version,
            live_files: snap.live_files.len(),
            ..Default::default()
        };
        for path in snap.live_files.keys() {
            if !present.contains(path) {
                report.dangling.push(path.clone());
            }
        }
        for path in &present {
            if snap.live_files.contains_key(path) {
                continue;
            }
            if ever_added.contains(path) {
                report.removed.push(path.clone());
            } else {
                report.unreferenced.push(path.clone());
            }
        }
        report.dangling.sort();
        report.unreferenced.sort();
        report.removed.sort();
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::SimClock;
    use crate::lakeformat::PhysicalType;
    use crate::lakehouse::AddFile;
    use crate::objectstore::FsStore;

    fn table(dir: &std::path::Path) -> Table {
        let store: Arc<dyn ObjectStore> = Arc::new(FsStore::new(dir).unwrap());
        Table::new(store, "t", Arc::new(SimClock::new(1_000))).unwrap()
    }

    fn cols() -> Vec<ColumnSchema> {
        vec![ColumnSchema::new("x", PhysicalType::Int64)]
    }

    fn add(t: &Table, name: &str) -> Action {
        let partition = PartitionKey::for_event("BTC-USD", 1_600_000_000_000_000);
        let path = ObjectKey::new(format!("{}{}/{name}.brcl", t.data_prefix(), partition.render())).unwrap();
        t.store().put(&path, b"data", false).unwrap();
        Action::AddFile(AddFile {
            path,
            partition,
            rows: 1,
            bytes: 4,
            min_event_time_us: 1_600_000_000_000_000,
            max_event_time_us: 1_600_000_000_000_000,
        })
    }

    fn remove(t: &Table, name: &str) -> Action {
        let partition = PartitionKey::for_event("BTC-USD", 1_600_000_000_000_000);
        Action::RemoveFile {
            path: ObjectKey::new(format!("{}{}/{name}.brcl", t.data_prefix(), partition.render())).unwrap(),
        }
    }

    fn names(s: &Snapshot) -> Vec<String> {
        s.live_files
            .keys()
            .map(|k| k.rsplit('/').next().unwrap().trim_end_matches(".brcl").to_string())
            .collect()
    }

    #[test]
    fn init_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(dir.path());
        assert!(matches!(t.current_version(), Err(LakeError::NotInitialized(_))));
        let e = t.init("trades_v1", &cols(), "me").unwrap();
        assert_eq!(e.version, 1);
        assert!(matches!(e.actions[..], [Action::SetSchema { .. }]));
        assert_eq!(t.current_version().unwrap(), 1);
        assert!(matches!(t.init("trades_v1", &cols(), "me"), Err(LakeError::AlreadyInitialized(_))));
        for i in 0..3 {
            t.commit(vec![add(&t, &format!("f{i}"))], "me", 10).unwrap();
        }
        assert_eq!(t.current_version().unwrap(), 4);
        assert_eq!(t.log_key(4).as_str(), "tables/t/_log/00000000000000000004.json");
    }

    #[test]
    fn fold_and_time_travel() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(dir.path());
        t.init("s", &cols(), "me").unwrap();
        t.commit(vec![add(&t, "f1"), add(&t, "f2")], "me", 10).unwrap();
        t.commit(vec![remove(&t, "f1"), add(&t, "f3")], "me", 10).unwrap();
        assert_eq!(names(&t.snapshot_at(None).unwrap()), ["f2", "f3"]);
        assert_eq!(names(&t.snapshot_at(Some(2)).unwrap()), ["f1", "f2"]);
        assert!(matches!(t.snapshot_at(Some(99)), Err(LakeError::NoSuchVersion { requested: 99, current: 3 })));
        assert_eq!(Snapshot::fold(&t.history().unwrap()), t.snapshot_at(None).unwrap());
    }

    #[test]
    fn invalid_actions() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(dir.path());
        t.init("s", &cols(), "me").unwrap();
        assert!(matches!(t.commit(vec![remove(&t, "nope")], "me", 10), Err(LakeError::InvalidAction(_))));
        assert!(matches!(t.commit(vec![], "me", 10), Err(LakeError::InvalidAction(_))));
        t.commit(vec![add(&t, "a")], "me", 10).unwrap();
        assert!(matches!(t.commit(vec![add(&t, "a")], "me", 10), Err(LakeError::InvalidAction(_))));
    }

    #[test]
    fn stale_writer_rebases() {
        let dir = tempfile::tempdir().unwrap();
        let t1 = table(dir.path());
        t1.init("s", &cols(), "a").unwrap();
        for i in 0..4 {
            t1.commit(vec![add(&t1, &format!("base{i}"))], "a", 10).unwrap();
        }
        // Two handles that both believe the table is at v5.
        let t2 = table(dir.path());
        t2.snapshot_at(None).unwrap();
        assert_eq!(t1.commit(vec![add(&t1, "x")], "a", 10).unwrap().version, 6);
        assert_eq!(t2.commit(vec![add(&t2, "y")], "b", 10).unwrap().version, 7);
        let names = names(&t1.snapshot_at(Some(7)).unwrap());
        assert!(names.contains(&"x".to_string()) && names.contains(&"y".to_string()));
    }

    #[test]
    fn rebase_rejects_double_remove() {
        let dir = tempfile::tempdir().unwrap();
        let t1 = table(dir.path());
        t1.init("s", &cols(), "a").unwrap();
        t1.commit(vec![add(&t1, "f")], "a", 10).unwrap();
        let t2 = table(dir.path());
        t2.snapshot_at(None).unwrap();
        t1.commit(vec![remove(&t1, "f")], "a", 10).unwrap();
        assert!(matches!(t2.commit(vec![remove(&t2, "f")], "b", 10), Err(LakeError::InvalidAction(_))));
    }

    /// Every conditional put loses, as if another writer always got there first.
    struct AlwaysLoses(FsStore);

    impl ObjectStore for AlwaysLoses {
        fn put(&self, key: &ObjectKey, bytes: &[u8], if_none_match: bool) -> Result<crate::objectstore::ObjectMeta, StoreError> {
            if if_none_match && key.as_str().contains("/_log/") && !key.as_str().ends_with("01.json") {
                return Err(StoreError::PreconditionFailed(key.to_string()));
            }
            self.0.put(key, bytes, if_none_match)
        }
        fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
            self.0.get(key)
        }
        fn get_range(&self, key: &ObjectKey, r: std::ops::Range<u64>) -> Result<Vec<u8>, StoreError> {
            self.0.get_range(key, r)
        }
        fn head(&self, key: &ObjectKey) -> Result<crate::objectstore::ObjectMeta, StoreError> {
            self.0.head(key)
        }
        fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
            self.0.delete(key)
        }
        fn list(&self, prefix: &str) -> Result<Vec<crate::objectstore::ObjectMeta>, StoreError> {
            self.0.list(prefix)
        }
    }

    #[test]
    fn conflicts_exhaust() {
        let dir = tempfile::tempdir().unwrap();
        let store: Arc<dyn ObjectStore> = Arc::new(AlwaysLoses(FsStore::new(dir.path()).unwrap()));
        let t = Table::new(store, "t", Arc::new(SimClock::new(0))).unwrap();
        t.init("s", &cols(), "a").unwrap();
        assert!(matches!(
            t.commit(vec![add(&t, "g")], "b", 3),
            Err(LakeError::CommitConflictExhausted { attempts: 4 })
        ));
    }

    #[test]
    fn audit_classifies_objects() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(dir.path());
        t.init("s", &cols(), "a").unwrap();
        t.commit(vec![add(&t, "f1"), add(&t, "f2")], "a", 10).unwrap();
        t.commit(vec![remove(&t, "f1")], "a", 10).unwrap();
        let _orphan = add(&t, "orphan");
        let r = t.audit().unwrap();
        assert!(r.dangling.is_empty());
        assert_eq!(r.live_files, 1);
        assert_eq!(r.removed.len(), 1);
        assert_eq!(r.unreferenced.len(), 1);
        if let Action::AddFile(f) = add(&t, "f2") {
            t.store().delete(&f.path).unwrap();
        }
        assert_eq!(t.audit().unwrap().dangling.len(), 1);
    }

    #[test]
    fn concurrent_writers_dense_history() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(dir.path());
        t.init("s", &cols(), "a").unwrap();
        std::thread::scope(|s| {
            for w in 0..4 {
                let t = table(dir.path());
                s.spawn(move || {
                    for i in 0..25 {
                        t.commit(vec![add(&t, &format!("w{w}-{i}"))], &format!("w{w}"), 1000).unwrap();
                    }
                });
            }
        });
        let h = t.history().unwrap();
        assert_eq!(h.len(), 101);
        assert!(h.iter().enumerate().all(|(i, e)| e.version == i as u64 + 1));
        assert_eq!(t.snapshot_at(None).unwrap().live_files.len(), 100);
    }
}
