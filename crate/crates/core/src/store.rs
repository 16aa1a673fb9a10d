//! Write-once content-addressed blob store.
//!
//! Layout: `<root>/<first two hex chars>/<full hex address>`. Writes go to a
//! temporary file in the same directory and are renamed into place.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::model::ImageRef;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob {0} not found")]
    Missing(ImageRef),
    #[error("blob {address} is corrupt (content hashes to {actual})")]
    Corrupt { address: ImageRef, actual: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(BlobStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_of(&self, address: &ImageRef) -> PathBuf {
        let hex = address.as_str();
        let shard = hex.get(..2).unwrap_or("__");
        self.root.join(shard).join(hex)
    }

    /// Store `bytes`; a blob that already exists is left untouched.
    pub fn put(&self, bytes: &[u8]) -> Result<ImageRef, StoreError> {
        let address = ImageRef::of_bytes(bytes);
        let path = self.path_of(&address);
        if path.exists() {
            return Ok(address);
        }
        let dir = path.parent().expect("blob path has a shard directory");
        fs::create_dir_all(dir)?;
        crate::jsonl::write_atomic(&path, bytes)?;
        Ok(address)
    }

    /// Read and verify a blob.
    pub fn get(&self, address: &ImageRef) -> Result<Vec<u8>, StoreError> {
        let bytes = match fs::read(self.path_of(address)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::Missing(address.clone())),
            Err(e) => return Err(e.into()),
        };
        let actual = crate::hashing::sha256_hex(&bytes);
        if actual != address.as_str() {
            return Err(StoreError::Corrupt { address: address.clone(), actual });
        }
        Ok(bytes)
    }

    pub fn contains(&self, address: &ImageRef) -> bool {
        self.path_of(address).exists()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_roundtrip_and_dedup() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path().join("blobs")).unwrap();
        let a = store.put(b"hello").unwrap();
        let b = store.put(b"hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.get(&a).unwrap(), b"hello");
        assert!(store.contains(&a));
    }

    #[test]
    fn missing_and_corrupt_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let store = BlobStore::open(dir.path()).unwrap();
        let missing = ImageRef::of_bytes(b"nope");
        assert!(matches!(store.get(&missing), Err(StoreError::Missing(_))));

        let a = store.put(b"payload").unwrap();
        fs::write(store.path_of(&a), b"tampered").unwrap();
        assert!(matches!(store.get(&a), Err(StoreError::Corrupt { .. })));
    }
}
