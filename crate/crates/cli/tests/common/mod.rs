#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agfsync_cli::config::BackendMode;
use agfsync_cli::PipelineConfig;

pub const CREATED_AT: &str = "2024-05-01T12:00:00Z";

/// Exemplar fixtures for every category, written once per test directory.
pub fn exemplars(root: &Path) -> PathBuf {
    let dir = root.join("exemplars");
    agfsync_testkit::fixtures::write_exemplar_fixtures(&dir).unwrap();
    dir
}

/// Small mock configuration covering all twelve categories.
pub fn mock_config(root: &Path, out: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = 7;
    cfg.out = root.join(out);
    cfg.prompts_per_category = 2;
    cfg.exemplar_dir = Some(exemplars(root));
    cfg.created_at = Some(CREATED_AT.parse().unwrap());
    cfg.jobs = Some(4);
    cfg.backends.mode = BackendMode::Mock;
    cfg
}

/// TOML config for the binary, with `extra` appended.
pub fn config_file(root: &Path, extra: &str) -> PathBuf {
    let ex = exemplars(root);
    let path = root.join("agfsync.toml");
    let text = format!(
        "seed = 7\nprompts_per_category = 2\njobs = 4\ncreated_at = \"{CREATED_AT}\"\nexemplar_dir = {:?}\n{extra}",
        ex.display().to_string()
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, acc: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, acc);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                acc.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(dir, dir, &mut acc);
    acc
}

/// Snapshot without manifests, whose config hashes name the backend.
pub fn data_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    snapshot(dir).into_iter().filter(|(k, _)| !k.starts_with("manifests/")).collect()
}

pub fn assert_same(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) {
    let only_a: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).collect();
    let only_b: Vec<&String> = b.keys().filter(|k| !a.contains_key(*k)).collect();
    assert!(only_a.is_empty() && only_b.is_empty(), "file sets differ: {only_a:?} vs {only_b:?}");
    for (k, v) in a {
        assert!(v == &b[k], "{k} differs");
    }
}
