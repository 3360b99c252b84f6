//! Blob storage backing files, the manifest log and WAL segments.
//!
//! [`FsStore`] maps names onto files in a directory; [`MemStore`] keeps
//! everything in memory and survives dropping an engine, which lets tests
//! reopen a "crashed" database.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use crate::error::Result;

pub trait Store: Send + Sync + std::fmt::Debug {
    /// Creates or replaces `name` with `data`.
    fn write_all(&self, name: &str, data: &[u8]) -> Result<()>;
    fn write_at(&self, name: &str, offset: u64, data: &[u8]) -> Result<()>;
    fn append(&self, name: &str, data: &[u8]) -> Result<()>;
    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>>;
    fn read_all(&self, name: &str) -> Result<Vec<u8>>;
    fn truncate(&self, name: &str, len: u64) -> Result<()>;
    fn len(&self, name: &str) -> Result<u64>;
    fn exists(&self, name: &str) -> bool;
    fn remove(&self, name: &str) -> Result<()>;
    fn list(&self) -> Result<Vec<String>>;
    fn sync(&self, name: &str) -> Result<()>;
}

fn not_found(name: &str) -> io::Error {
    io::Error::new(io::ErrorKind::NotFound, format!("no such blob: {name}"))
}

#[derive(Debug, Default, Clone)]
pub struct MemStore {
    blobs: Arc<RwLock<HashMap<String, Vec<u8>>>>,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Total bytes held, across all blobs.
    pub fn total_bytes(&self) -> u64 {
        self.blobs.read().unwrap().values().map(|b| b.len() as u64).sum()
    }
}

impl Store for MemStore {
    fn write_all(&self, name: &str, data: &[u8]) -> Result<()> {
        self.blobs.write().unwrap().insert(name.to_string(), data.to_vec());
        Ok(())
    }

    fn write_at(&self, name: &str, offset: u64, data: &[u8]) -> Result<()> {
        let mut blobs = self.blobs.write().unwrap();
        let blob = blobs.get_mut(name).ok_or_else(|| not_found(name))?;
        let end = offset as usize + data.len();
        if blob.len() < end {
            blob.resize(end, 0);
        }
        blob[offset as usize..end].copy_from_slice(data);
        Ok(())
    }

    fn append(&self, name: &str, data: &[u8]) -> Result<()> {
        self.blobs.write().unwrap().entry(name.to_string()).or_default().extend_from_slice(data);
        Ok(())
    }

    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>> {
        let blobs = self.blobs.read().unwrap();
        let blob = blobs.get(name).ok_or_else(|| not_found(name))?;
        let start = offset as usize;
        if start + len > blob.len() {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, format!("short read on {name}")).into());
        }
        Ok(blob[start..start + len].to_vec())
    }

    fn read_all(&self, name: &str) -> Result<Vec<u8>> {
        let blobs = self.blobs.read().unwrap();
        Ok(blobs.get(name).ok_or_else(|| not_found(name))?.clone())
    }

    fn truncate(&self, name: &str, len: u64) -> Result<()> {
        let mut blobs = self.blobs.write().unwrap();
        blobs.get_mut(name).ok_or_else(|| not_found(name))?.resize(len as usize, 0);
        Ok(())
    }

    fn len(&self, name: &str) -> Result<u64> {
        let blobs = self.blobs.read().unwrap();
        Ok(blobs.get(name).ok_or_else(|| not_found(name))?.len() as u64)
    }

    fn exists(&self, name: &str) -> bool {
        self.blobs.read().unwrap().contains_key(name)
    }

    fn remove(&self, name: &str) -> Result<()> {
        self.blobs.write().unwrap().remove(name);
        Ok(())
    }

    fn list(&self) -> Result<Vec<String>> {
        let mut names: Vec<String> = self.blobs.read().unwrap().keys().cloned().collect();
        names.sort();
        Ok(names)
    }

    fn sync(&self, _name: &str) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FsStore {
    dir: PathBuf,
}

impl FsStore {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(FsStore { dir: dir.as_ref().to_path_buf() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Store for FsStore {
    fn write_all(&self, name: &str, data: &[u8]) -> Result<()> {
        fs::write(self.path(name), data)?;
        Ok(())
    }

    fn write_at(&self, name: &str, offset: u64, data: &[u8]) -> Result<()> {
        use std::os::unix::fs::FileExt;
        let f = OpenOptions::new().write(true).open(self.path(name))?;
        f.write_all_at(data, offset)?;
        Ok(())
    }

    fn append(&self, name: &str, data: &[u8]) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(name))?;
        f.write_all(data)?;
        Ok(())
    }

    fn read_at(&self, name: &str, offset: u64, len: usize) -> Result<Vec<u8>> {
        use std::os::unix::fs::FileExt;
        let f = File::open(self.path(name))?;
        let mut buf = vec![0u8; len];
        f.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    }

    fn read_all(&self, name: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.path(name))?)
    }

    fn truncate(&self, name: &str, len: u64) -> Result<()> {
        OpenOptions::new().write(true).open(self.path(name))?.set_len(len)?;
        Ok(())
    }

    fn len(&self, name: &str) -> Result<u64> {
        Ok(fs::metadata(self.path(name))?.len())
    }

    fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    fn remove(&self, name: &str) -> Result<()> {
        match fs::remove_file(self.path(name)) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    fn list(&self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                names.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        names.sort();
        Ok(names)
    }

    fn sync(&self, name: &str) -> Result<()> {
        File::open(self.path(name))?.sync_all()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(store: &dyn Store) {
        store.write_all("a", b"hello").unwrap();
        store.append("a", b" world").unwrap();
        assert_eq!(store.read_all("a").unwrap(), b"hello world");
        store.write_at("a", 0, b"J").unwrap();
        assert_eq!(store.read_at("a", 0, 5).unwrap(), b"Jello");
        store.truncate("a", 5).unwrap();
        assert_eq!(store.len("a").unwrap(), 5);
        assert!(store.read_at("a", 3, 10).is_err());
        assert_eq!(store.list().unwrap(), vec!["a".to_string()]);
        store.remove("a").unwrap();
        assert!(!store.exists("a"));
    }

    #[test]
    fn mem_store_basics() {
        exercise(&MemStore::new());
    }

    #[test]
    fn fs_store_basics() {
        let dir = tempfile::tempdir().unwrap();
        exercise(&FsStore::open(dir.path()).unwrap());
    }
}
