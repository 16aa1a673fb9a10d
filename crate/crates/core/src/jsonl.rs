//! JSONL helpers: atomic writes, typed reads, and timestamp-free content
//! hashing.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Field names that never contribute to content hashes.
pub const UNHASHED_FIELDS: &[&str] = &["created_at"];

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Write `bytes` to a sibling temp file, fsync, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn is_temp_name(name: &str) -> bool {
    name.starts_with('.') && name.contains(".tmp-")
}

/// Remove temp files left under `dir` by interrupted [`write_atomic`] calls.
/// Only safe while no other writer is active in `dir`.
pub fn sweep_temp_files(dir: &Path) -> io::Result<usize> {
    let mut removed = 0;
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(e),
    };
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            removed += sweep_temp_files(&path)?;
        } else if entry.file_name().to_str().is_some_and(is_temp_name) {
            fs::remove_file(&path)?;
            removed += 1;
        }
    }
    Ok(removed)
}

/// Encode records one per line, each terminated by `\n`.
pub fn to_jsonl_bytes<T: Serialize>(records: &[T]) -> Result<Vec<u8>, serde_json::Error> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let bytes = to_jsonl_bytes(records)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// SHA-256 of a JSON or JSONL document with [`UNHASHED_FIELDS`] removed from
/// every top-level object and keys in canonical (sorted) order.
///
/// Falls back to hashing raw bytes for anything that is not JSON.
pub fn content_hash(bytes: &[u8]) -> String {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return crate::hashing::sha256_hex(bytes);
    };
    let mut canonical = Vec::with_capacity(bytes.len());
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(mut value) => {
                if let Some(obj) = value.as_object_mut() {
                    for field in UNHASHED_FIELDS {
                        obj.remove(*field);
                    }
                }
                canonical.extend(serde_json::to_vec(&value).expect("Value serializes"));
                canonical.push(b'\n');
            }
            Err(_) => {
                // Pretty-printed documents span lines; hash the whole thing.
                return match serde_json::from_slice::<serde_json::Value>(bytes) {
                    Ok(mut value) => {
                        if let Some(obj) = value.as_object_mut() {
                            for field in UNHASHED_FIELDS {
                                obj.remove(*field);
                            }
                        }
                        let mut doc = serde_json::to_vec(&value).expect("Value serializes");
                        doc.push(b'\n');
                        crate::hashing::sha256_hex(&doc)
                    }
                    Err(_) => crate::hashing::sha256_hex(bytes),
                };
            }
        }
    }
    crate::hashing::sha256_hex(&canonical)
}

pub fn file_content_hash(path: &Path) -> io::Result<String> {
    Ok(content_hash(&fs::read(path)?))
}
