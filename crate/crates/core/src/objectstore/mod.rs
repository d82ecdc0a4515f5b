//! Uniform object storage: a local filesystem backend and an S3-wire client.
//!
//! Conditional put (`if_none_match`) is the only cross-client synchronization
//! primitive; the lakehouse commit protocol is built on it.

mod counting;
mod fs;
mod s3;
pub mod sigv4;

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counting::{CountingStore, ReadStats};
pub use fs::FsStore;
pub use s3::{S3Config, S3Store};

const MAX_KEY_BYTES: usize = 900;

/// One `/`-separated key segment: `^[A-Za-z0-9._=-]+$`, excluding `.` and `..`.
pub fn is_valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'=' | b'-'))
}

/// Validated object key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectKey(String);

impl ObjectKey {
    pub fn new(key: impl Into<String>) -> Result<Self, StoreError> {
        let key = key.into();
        let reason = if key.is_empty() {
            Some("empty key")
        } else if key.len() > MAX_KEY_BYTES {
            Some("key longer than 900 bytes")
        } else if key.starts_with('/') {
            Some("leading '/'")
        } else if !key.split('/').all(is_valid_segment) {
            Some("segments must match [A-Za-z0-9._=-]+ and not be empty, '.' or '..'")
        } else if key.split('/').next() == Some(fs::TMP_DIR) {
            Some("reserved prefix")
        } else {
            None
        };
        match reason {
            Some(r) => Err(StoreError::InvalidKey(key, r.to_string())),
            None => Ok(ObjectKey(key)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ObjectKey {
    type Error = StoreError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ObjectKey::new(s)
    }
}

impl From<ObjectKey> for String {
    fn from(k: ObjectKey) -> String {
        k.0
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ObjectKey {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub key: ObjectKey,
    pub size_bytes: u64,
    /// Lowercase hex MD5 of the content.
    pub etag: String,
}

pub fn content_md5(bytes: &[u8]) -> String {
    hex::encode(Md5::digest(bytes))
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object {0} not found")]
    NotFound(String),
    #[error("object {0} already exists")]
    PreconditionFailed(String),
    #[error("invalid key {0:?}: {1}")]
    InvalidKey(String, String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("endpoint does not honour conditional put: {0}")]
    UnsafeEndpoint(String),
}

impl StoreError {
    pub fn kind(&self) -> &'static str {
        match self {
            StoreError::NotFound(_) => "NotFound",
            StoreError::PreconditionFailed(_) => "PreconditionFailed",
            StoreError::InvalidKey(..) => "InvalidKey",
            StoreError::BackendUnavailable(_) => "BackendUnavailable",
            StoreError::UnsafeEndpoint(_) => "UnsafeEndpoint",
        }
    }
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::BackendUnavailable(e.to_string())
    }
}

pub trait ObjectStore: Send + Sync {
    /// Store `bytes` at `key`. With `if_none_match` the put is an atomic
    /// create and fails with [`StoreError::PreconditionFailed`] if the key exists.
    fn put(&self, key: &ObjectKey, bytes: &[u8], if_none_match: bool) -> Result<ObjectMeta, StoreError>;

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError>;

    /// Bytes in `range`, clipped to the object's end.
    fn get_range(&self, key: &ObjectKey, range: Range<u64>) -> Result<Vec<u8>, StoreError>;

    fn head(&self, key: &ObjectKey) -> Result<ObjectMeta, StoreError>;

    /// Succeeds when the key is already absent.
    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError>;

    /// Every key starting with `prefix`, sorted bytewise ascending.
    fn list(&self, prefix: &str) -> Result<Vec<ObjectMeta>, StoreError>;
}

impl<T: ObjectStore + ?Sized> ObjectStore for Arc<T> {
    fn put(&self, key: &ObjectKey, bytes: &[u8], if_none_match: bool) -> Result<ObjectMeta, StoreError> {
        (**self).put(key, bytes, if_none_match)
    }
    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        (**self).get(key)
    }
    fn get_range(&self, key: &ObjectKey, range: Range<u64>) -> Result<Vec<u8>, StoreError> {
        (**self).get_range(key, range)
    }
    fn head(&self, key: &ObjectKey) -> Result<ObjectMeta, StoreError> {
        (**self).head(key)
    }
    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        (**self).delete(key)
    }
    fn list(&self, prefix: &str) -> Result<Vec<ObjectMeta>, StoreError> {
        (**self).list(prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_grammar() {
        for ok in ["a", "a/b", "tables/t/_log/00000000000000000001.json", "symbol=BTC-USD/date=2021-03-04"] {
            assert!(ObjectKey::new(ok).is_ok(), "{ok}");
        }
        for bad in ["", "/a", "a//b", "a/", "a/../b", "..", "a b", "a/ü", ".tmp/x"] {
            assert!(ObjectKey::new(bad).is_err(), "{bad}");
        }
        assert!(ObjectKey::new("x".repeat(900)).is_ok());
        assert!(ObjectKey::new("x".repeat(901)).is_err());
    }

    #[test]
    fn md5_etag() {
        assert_eq!(content_md5(b""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(content_md5(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
    }
}
