//! On-disk cache of solved fields, keyed by a content hash.
//!
//! Each entry is a directory `<root>/<key>/` published by an atomic rename,
//! so readers never see a partial entry. Writers of one key serialize on
//! `<root>/<key>.lock`.

use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};

pub const CACHE_ENV: &str = "WEAKKAM_CACHE";
const LOCK_WAIT: Duration = Duration::from_secs(1800);

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

/// Held while a key is being written; removes the lock file on drop.
struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl Cache {
    /// Root precedence: explicit path, then `$WEAKKAM_CACHE`, then
    /// `.weakkam-cache` in the working directory.
    pub fn resolve(explicit: Option<&Path>) -> Self {
        let root = explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(".weakkam-cache"));
        Self { root }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry(&self, key: &str) -> PathBuf {
        self.root.join(key)
    }

    /// Contents of `file` in the entry for `key`, if the entry exists.
    pub fn get(&self, key: &str, file: &str) -> Result<Option<Vec<u8>>> {
        let path = self.entry(key).join(file);
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
        }
    }

    /// Publishes an entry. If another writer published the key while we
    /// waited for the lock, its entry is kept.
    pub fn put(&self, key: &str, files: &[(&str, &[u8])]) -> Result<()> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating cache root {}", self.root.display()))?;
        let _lock = self.lock(key)?;
        let dest = self.entry(key);
        if dest.exists() {
            return Ok(());
        }
        let tmp = self.root.join(format!("{key}.tmp-{}", std::process::id()));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir(&tmp)?;
        for (name, bytes) in files {
            fs::write(tmp.join(name), bytes)?;
        }
        fs::rename(&tmp, &dest).with_context(|| format!("publishing cache entry {}", dest.display()))?;
        Ok(())
    }

    fn lock(&self, key: &str) -> Result<LockGuard> {
        let path = self.root.join(format!("{key}.lock"));
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(LockGuard(path)),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    if start.elapsed() > LOCK_WAIT {
                        bail!("cache lock {} held for over {:?}; remove it if stale", path.display(), LOCK_WAIT);
                    }
                    std::thread::sleep(Duration::from_millis(200));
                }
                Err(e) => return Err(e).with_context(|| format!("creating lock {}", path.display())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::resolve(Some(dir.path()));
        assert!(cache.get("k", "a").unwrap().is_none());
        cache.put("k", &[("a", b"one"), ("b", b"two")]).unwrap();
        assert_eq!(cache.get("k", "b").unwrap().unwrap(), b"two");
        // a second put keeps the first entry
        cache.put("k", &[("a", b"other")]).unwrap();
        assert_eq!(cache.get("k", "a").unwrap().unwrap(), b"one");
        assert!(!dir.path().join("k.lock").exists());
    }
}
