//! Per-stage manifests recording what a stage consumed and produced.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use agfsync_core::hashing::sha256_hex;
use agfsync_core::jsonl::{file_content_hash, write_json, JsonlError};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prompts,
    Qa,
    Images,
    Scores,
    Pairs,
    Export,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Prompts, Stage::Qa, Stage::Images, Stage::Scores, Stage::Pairs, Stage::Export, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prompts => "prompts",
            Stage::Qa => "qa",
            Stage::Images => "images",
            Stage::Scores => "scores",
            Stage::Pairs => "pairs",
            Stage::Export => "export",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Prompts => &[],
            Stage::Qa => &[Stage::Prompts],
            Stage::Images => &[Stage::Prompts],
            Stage::Scores => &[Stage::Prompts, Stage::Qa, Stage::Images],
            Stage::Pairs => &[Stage::Images, Stage::Scores],
            Stage::Export => &[Stage::Prompts, Stage::Images, Stage::Pairs],
            Stage::Eval => &[Stage::Prompts, Stage::Images, Stage::Scores, Stage::Pairs],
        }
    }

    /// Main output file, relative to the output root.
    pub fn output(self) -> &'static str {
        match self {
            Stage::Prompts => PROMPTS,
            Stage::Qa => QA,
            Stage::Images => CANDIDATES,
            Stage::Scores => SCORES,
            Stage::Pairs => PAIRS,
            Stage::Export => DPO_BATCHES,
            Stage::Eval => EVAL,
        }
    }

    pub fn manifest_path(self, out: &Path) -> std::path::PathBuf {
        out.join("manifests").join(format!("{}.json", self.name()))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}` (prompts, qa, images, scores, pairs, export, eval)"))
    }
}

pub const PROMPTS: &str = "prompts.jsonl";
pub const QA: &str = "qa.jsonl";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const SKIPS: &str = "skips.jsonl";
pub const FILTER: &str = "filter.json";
pub const DPO_BATCHES: &str = "dpo_batches.jsonl";
pub const EVAL: &str = "eval.jsonl";
pub const STATS: &str = "stats.json";
pub const EVAL_SUMMARY: &str = "winrate_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Complete,
    /// Some items failed; their ids are in `retry`.
    Partial,
    /// Every item failed.
    Failed,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Complete => "complete",
            StageStatus::Partial => "partial",
            StageStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub hash: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryItem {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub status: StageStatus,
    pub config_hash: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<OutputFile>,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retry: Vec<RetryItem>,
}

impl StageManifest {
    pub fn load(out: &Path, stage: Stage) -> Option<StageManifest> {
        let text = std::fs::read_to_string(stage.manifest_path(out)).ok()?;
        match serde_json::from_str(&text) {
            Ok(m) => Some(m),
            Err(e) => {
                log::warn!("ignoring unreadable {stage} manifest: {e}");
                None
            }
        }
    }

    pub fn save(&self, out: &Path) -> Result<(), JsonlError> {
        write_json(&self.stage.manifest_path(out), self)
    }

    /// True when every recorded output still has its recorded content hash.
    pub fn outputs_intact(&self, out: &Path) -> bool {
        self.outputs
            .iter()
            .all(|o| file_content_hash(&out.join(&o.path)).is_ok_and(|h| h == o.hash))
    }

    /// Up to date with respect to the given inputs and config.
    pub fn is_fresh(&self, out: &Path, config_hash: &str, inputs: &[FileHash]) -> bool {
        self.status == StageStatus::Complete
            && self.config_hash == config_hash
            && self.inputs == inputs
            && self.outputs_intact(out)
    }
}

/// SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("config values serialize"))
}
