use std::fs::{self, File};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};
use walkdir::WalkDir;

use super::{content_md5, ObjectKey, ObjectMeta, ObjectStore, StoreError};

/// Reserved top-level directory for in-flight writes; never a valid key prefix.
pub(super) const TMP_DIR: &str = ".tmp";

/// Keys map directly to relative paths under `root`.
#[derive(Debug, Clone)]
pub struct FsStore {
    root: PathBuf,
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join(TMP_DIR))?;
        Ok(FsStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &ObjectKey) -> PathBuf {
        self.root.join(key.as_str())
    }

    fn write_temp(&self, bytes: &[u8]) -> io::Result<PathBuf> {
        let tmp = self.root.join(TMP_DIR).join(uuid::Uuid::new_v4().simple().to_string());
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        Ok(tmp)
    }
}

fn file_md5(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Md5::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn not_found(key: &ObjectKey) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::NotFound {
            StoreError::NotFound(key.to_string())
        } else {
            e.into()
        }
    }
}

impl ObjectStore for FsStore {
    fn put(&self, key: &ObjectKey, bytes: &[u8], if_none_match: bool) -> Result<ObjectMeta, StoreError> {
        let path = self.path(key);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.write_temp(bytes)?;
        let result = if if_none_match {
            // link(2) never replaces an existing name: atomic create-if-absent
            // of fully written content.
            match fs::hard_link(&tmp, &path) {
                Ok(()) => Ok(()),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    Err(StoreError::PreconditionFailed(key.to_string()))
                }
                Err(e) => Err(e.into()),
            }
        } else {
            fs::rename(&tmp, &path).map_err(StoreError::from)
        };
        let _ = fs::remove_file(&tmp);
        result?;
        if let Some(dir) = path.parent() {
            crate::fsutil::sync_dir(dir);
        }
        Ok(ObjectMeta {
            key: key.clone(),
            size_bytes: bytes.len() as u64,
            etag: content_md5(bytes),
        })
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        fs::read(self.path(key)).map_err(not_found(key))
    }

    fn get_range(&self, key: &ObjectKey, range: Range<u64>) -> Result<Vec<u8>, StoreError> {
        let mut f = File::open(self.path(key)).map_err(not_found(key))?;
        let len = f.metadata()?.len();
        let start = range.start.min(len);
        let end = range.end.min(len).max(start);
        f.seek(SeekFrom::Start(start))?;
        let mut buf = vec![0u8; (end - start) as usize];
        f.read_exact(&mut buf)?;
        Ok(buf)
    }

    fn head(&self, key: &ObjectKey) -> Result<ObjectMeta, StoreError> {
        let path = self.path(key);
        let meta = fs::metadata(&path).map_err(not_found(key))?;
        if !meta.is_file() {
            return Err(StoreError::NotFound(key.to_string()));
        }
        Ok(ObjectMeta {
            key: key.clone(),
            size_bytes: meta.len(),
            etag: file_md5(&path).map_err(not_found(key))?,
        })
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        match fs::remove_file(self.path(key)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn list(&self, prefix: &str) -> Result<Vec<ObjectMeta>, StoreError> {
        // Only walk the deepest directory the prefix pins down.
        let base = match prefix.rfind('/') {
            Some(i) => self.root.join(&prefix[..i]),
            None => self.root.clone(),
        };
        let mut out = Vec::new();
        for entry in WalkDir::new(&base).follow_links(false) {
            let entry = match entry {
                Ok(e) => e,
                Err(e) if e.io_error().is_some_and(|io| io.kind() == io::ErrorKind::NotFound) => continue,
                Err(e) => return Err(StoreError::BackendUnavailable(e.to_string())),
            };
            if !entry.file_type().is_file() {
                continue;
            }
            let Ok(rel) = entry.path().strip_prefix(&self.root) else {
                continue;
            };
            let Some(rel) = rel.to_str() else { continue };
            let rel = rel.replace(std::path::MAIN_SEPARATOR, "/");
            if !rel.starts_with(prefix) {
                continue;
            }
            let Ok(key) = ObjectKey::new(rel) else { continue };
            // Deleted between walk and stat: skip like S3 would.
            match self.head(&key) {
                Ok(meta) => out.push(meta),
                Err(StoreError::NotFound(_)) => {}
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|a, b| a.key.as_str().as_bytes().cmp(b.key.as_str().as_bytes()));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Barrier};

    fn key(s: &str) -> ObjectKey {
        ObjectKey::new(s).unwrap()
    }

    #[test]
    fn put_head_get_delete() {
        let dir = tempfile::tempdir().unwrap();
        let s = FsStore::new(dir.path()).unwrap();
        s.put(&key("a/b"), &[1, 2, 3], false).unwrap();
        let meta = s.head(&key("a/b")).unwrap();
        assert_eq!(meta.size_bytes, 3);
        assert_eq!(meta.etag, content_md5(&[1, 2, 3]));
        assert_eq!(s.get(&key("a/b")).unwrap(), [1, 2, 3]);
        assert_eq!(s.get_range(&key("a/b"), 1..10).unwrap(), [2, 3]);
        s.delete(&key("a/b")).unwrap();
        s.delete(&key("a/b")).unwrap();
        assert!(matches!(s.head(&key("a/b")), Err(StoreError::NotFound(_))));
        assert!(matches!(s.get(&key("missing")), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn empty_object() {
        let dir = tempfile::tempdir().unwrap();
        let s = FsStore::new(dir.path()).unwrap();
        s.put(&key("z"), &[], false).unwrap();
        assert!(s.get(&key("z")).unwrap().is_empty());
    }

    #[test]
    fn conditional_put() {
        let dir = tempfile::tempdir().unwrap();
        let s = FsStore::new(dir.path()).unwrap();
        s.put(&key("k"), b"one", true).unwrap();
        assert!(matches!(s.put(&key("k"), b"two", true), Err(StoreError::PreconditionFailed(_))));
        assert_eq!(s.get(&key("k")).unwrap(), b"one");
        s.put(&key("k"), b"three", false).unwrap();
        assert_eq!(s.get(&key("k")).unwrap(), b"three");
    }

    #[test]
    fn list_sorted_by_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let s = FsStore::new(dir.path()).unwrap();
        for k in ["b/1", "a/2", "a/1", "a10"] {
            s.put(&key(k), k.as_bytes(), false).unwrap();
        }
        let keys = |p: &str| -> Vec<String> { s.list(p).unwrap().into_iter().map(|m| m.key.to_string()).collect() };
        assert_eq!(keys("a/"), ["a/1", "a/2"]);
        assert_eq!(keys(""), ["a/1", "a/2", "a10", "b/1"]);
        assert_eq!(keys("a"), ["a/1", "a/2", "a10"]);
        assert!(keys("zz/").is_empty());
    }

    #[test]
    fn concurrent_conditional_puts_have_one_winner() {
        let dir = tempfile::tempdir().unwrap();
        let s = Arc::new(FsStore::new(dir.path()).unwrap());
        let barrier = Arc::new(Barrier::new(8));
        let handles: Vec<_> = (0..8u8)
            .map(|i| {
                let (s, b) = (s.clone(), barrier.clone());
                std::thread::spawn(move || {
                    b.wait();
                    s.put(&key("race"), &[i], true).ok().map(|_| i)
                })
            })
            .collect();
        let winners: Vec<u8> = handles.into_iter().filter_map(|h| h.join().unwrap()).collect();
        assert_eq!(winners.len(), 1);
        assert_eq!(s.get(&key("race")).unwrap(), [winners[0]]);
    }
}
