use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Mutex;

use super::{ObjectKey, ObjectMeta, ObjectStore, StoreError};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadStats {
    /// Read calls (`get` or `get_range`) per key.
    pub reads: BTreeMap<String, u64>,
    pub bytes_read: u64,
}

impl ReadStats {
    pub fn keys_read(&self) -> Vec<String> {
        self.reads.keys().cloned().collect()
    }
}

/// Wrapper that records which objects were read and how many bytes came back.
#[derive(Debug)]
pub struct CountingStore<S> {
    inner: S,
    stats: Mutex<ReadStats>,
}

impl<S: ObjectStore> CountingStore<S> {
    pub fn new(inner: S) -> Self {
        CountingStore {
            inner,
            stats: Mutex::new(ReadStats::default()),
        }
    }

    pub fn stats(&self) -> ReadStats {
        self.stats.lock().unwrap().clone()
    }

    pub fn reset(&self) {
        *self.stats.lock().unwrap() = ReadStats::default();
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    fn record(&self, key: &ObjectKey, n: usize) {
        let mut s = self.stats.lock().unwrap();
        *s.reads.entry(key.to_string()).or_default() += 1;
        s.bytes_read += n as u64;
    }
}

impl<S: ObjectStore> ObjectStore for CountingStore<S> {
    fn put(&self, key: &ObjectKey, bytes: &[u8], if_none_match: bool) -> Result<ObjectMeta, StoreError> {
        self.inner.put(key, bytes, if_none_match)
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        let b = self.inner.get(key)?;
        self.record(key, b.len());
        Ok(b)
    }

    fn get_range(&self, key: &ObjectKey, range: Range<u64>) -> Result<Vec<u8>, StoreError> {
        let b = self.inner.get_range(key, range)?;
        self.record(key, b.len());
        Ok(b)
    }

    fn head(&self, key: &ObjectKey) -> Result<ObjectMeta, StoreError> {
        self.inner.head(key)
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        self.inner.delete(key)
    }

    fn list(&self, prefix: &str) -> Result<Vec<ObjectMeta>, StoreError> {
        self.inner.list(prefix)
    }
}
