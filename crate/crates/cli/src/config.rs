//! Pipeline configuration: one TOML or JSON file plus command-line overrides.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use agfsync_core::backend::{BackendKind, Backends};
use agfsync_core::candidates::GenerationConfig;
use agfsync_core::dpo::{make_linear_schedule, DpoConfig, NoiseSchedule};
use agfsync_core::eval::DEFAULT_THRESHOLDS;
use agfsync_core::model::{validate_weights, Category, WeightConfig};
use agfsync_core::prompts::{ExemplarSet, DEFAULT_BATCH_SIZE};
use agfsync_core::qa::{DEFAULT_MIN_QUESTIONS, DEFAULT_ROUNDS};
use agfsync_core::scoring::ClipConfig;
use agfsync_gateway::{EndpointConfig, HttpBackend};
use agfsync_testkit::{mock_backends, JudgeMode};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Read { path: String, message: String },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    /// Real endpoints through the HTTP gateway.
    #[default]
    Http,
    /// Deterministic in-process mocks.
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MockJudge {
    #[default]
    Parity,
    PositionInvariant,
}

impl From<MockJudge> for JudgeMode {
    fn from(m: MockJudge) -> Self {
        match m {
            MockJudge::Parity => JudgeMode::Parity,
            MockJudge::PositionInvariant => JudgeMode::PositionInvariant,
        }
    }
}

/// Per-kind endpoint settings; unset fields keep the gateway defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_retries: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub mode: BackendMode,
    pub mock_judge: MockJudge,
    /// Base URL for every kind without its own `url`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub llm: Endpoint,
    pub t2i: Endpoint,
    pub vqa: Endpoint,
    pub embed: Endpoint,
    pub aesthetic: Endpoint,
    pub judge: Endpoint,
}

impl BackendsConfig {
    pub fn endpoint(&self, kind: BackendKind) -> &Endpoint {
        match kind {
            BackendKind::Llm => &self.llm,
            BackendKind::T2i => &self.t2i,
            BackendKind::Vqa => &self.vqa,
            BackendKind::Embed => &self.embed,
            BackendKind::Aesthetic => &self.aesthetic,
            BackendKind::Judge => &self.judge,
        }
    }

    pub fn endpoint_mut(&mut self, kind: BackendKind) -> &mut Endpoint {
        match kind {
            BackendKind::Llm => &mut self.llm,
            BackendKind::T2i => &mut self.t2i,
            BackendKind::Vqa => &mut self.vqa,
            BackendKind::Embed => &mut self.embed,
            BackendKind::Aesthetic => &mut self.aesthetic,
            BackendKind::Judge => &mut self.judge,
        }
    }

    fn url(&self, kind: BackendKind) -> Option<&str> {
        self.endpoint(kind).url.as_deref().or(self.url.as_deref())
    }

    pub fn endpoint_config(&self, kind: BackendKind) -> Result<EndpointConfig, ConfigError> {
        let ep = self.endpoint(kind);
        let url = self.url(kind).ok_or_else(|| invalid(format!("no URL configured for the {kind} backend")))?;
        let mut cfg = EndpointConfig::new(kind, url);
        cfg.auth_token = ep.auth_token.clone();
        cfg.model = ep.model.clone();
        if let Some(v) = ep.timeout_ms {
            cfg.timeout_ms = v;
        }
        if let Some(v) = ep.max_retries {
            cfg.max_retries = v;
        }
        if let Some(v) = ep.max_in_flight {
            cfg.max_in_flight = v;
        }
        Ok(cfg)
    }

    /// Identity of one backend as far as outputs are concerned; part of the
    /// stage config hashes.
    pub fn descriptor(&self, kind: BackendKind) -> String {
        match self.mode {
            BackendMode::Mock if kind == BackendKind::Judge => format!("mock:{:?}", self.mock_judge),
            BackendMode::Mock => "mock".into(),
            BackendMode::Http => {
                let model = self.endpoint(kind).model.as_deref().unwrap_or("");
                format!("http:{}:{model}", self.url(kind).unwrap_or(""))
            }
        }
    }

    pub fn build(&self) -> Result<Backends, ConfigError> {
        match self.mode {
            BackendMode::Mock => Ok(mock_backends(self.mock_judge.into())),
            BackendMode::Http => {
                let b = |kind| self.endpoint_config(kind).map(|c| std::sync::Arc::new(HttpBackend::new(c)));
                Ok(Backends {
                    llm: b(BackendKind::Llm)?,
                    t2i: b(BackendKind::T2i)?,
                    vqa: b(BackendKind::Vqa)?,
                    embed: b(BackendKind::Embed)?,
                    aesthetic: b(BackendKind::Aesthetic)?,
                    judge: b(BackendKind::Judge)?,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Generation {
    pub n_candidates: u32,
    pub sigma: f64,
}

impl Default for Generation {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Generation { n_candidates: g.n_candidates, sigma: g.sigma }
    }
}

/// Filter thresholds on the raw `[0, 1]` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub vqa: f64,
    pub aes: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { vqa: 0.9, aes: 0.6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { timesteps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule, ConfigError> {
        make_linear_schedule(self.timesteps, self.beta_start, self.beta_end).map_err(|e| invalid(format!("schedule: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { width: 16, height: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Draw thresholds for the win/draw tables, on the raw `[0, 1]` scale.
    pub thresholds: Vec<f64>,
    pub position_swap: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { thresholds: DEFAULT_THRESHOLDS.to_vec(), position_swap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root of every random stream.
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; defaults to the number of logical cores.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Timestamp for generated records. Falls back to `SOURCE_DATE_EPOCH`,
    /// then the current time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    pub categories: Vec<Category>,
    pub prompts_per_category: usize,
    pub batch_size: usize,
    /// Directory of `<category_slug>.json` exemplar files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exemplar_dir: Option<PathBuf>,
    pub qa_rounds: usize,
    /// Prompts with fewer valid questions are not scored.
    pub min_questions: usize,
    pub generation: Generation,
    pub weights: WeightConfig,
    pub clip: ClipConfig,
    pub thresholds: Thresholds,
    pub dpo: DpoConfig,
    pub schedule: ScheduleConfig,
    pub export: ExportConfig,
    pub eval: EvalConfig,
    pub backends: BackendsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("out"),
            jobs: None,
            created_at: None,
            categories: Category::ALL.to_vec(),
            prompts_per_category: 10,
            batch_size: DEFAULT_BATCH_SIZE,
            exemplar_dir: None,
            qa_rounds: DEFAULT_ROUNDS,
            min_questions: DEFAULT_MIN_QUESTIONS,
            generation: Generation::default(),
            weights: WeightConfig::default(),
            clip: ClipConfig::default(),
            thresholds: Thresholds::default(),
            dpo: DpoConfig::default(),
            schedule: ScheduleConfig::default(),
            export: ExportConfig::default(),
            eval: EvalConfig::default(),
            backends: BackendsConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parse a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let p = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read { path: p.clone(), message: e.to_string() })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: p, message: e.to_string() })
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: p, message: e.to_string() })
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.categories.is_empty() {
            return Err(invalid("categories: at least one is required"));
        }
        let unique: HashSet<_> = self.categories.iter().collect();
        if unique.len() != self.categories.len() {
            return Err(invalid("categories: duplicates"));
        }
        if self.prompts_per_category < 1 {
            return Err(invalid("prompts_per_category must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.qa_rounds < 1 {
            return Err(invalid("qa_rounds must be at least 1"));
        }
        if self.min_questions < 1 {
            return Err(invalid("min_questions must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs must be at least 1"));
        }
        self.generation_config(0, 0).validate().map_err(|e| invalid(format!("generation: {e}")))?;
        validate_weights(&self.weights).map_err(|e| invalid(format!("weights: {e}")))?;
        if !(self.clip.gamma.is_finite() && self.clip.gamma > 0.0) {
            return Err(invalid(format!("clip.gamma = {}; must be positive", self.clip.gamma)));
        }
        for (name, t) in [("thresholds.vqa", self.thresholds.vqa), ("thresholds.aes", self.thresholds.aes)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid(format!("{name} = {t}; must be in [0, 1]")));
            }
        }
        self.dpo.validate().map_err(|e| invalid(format!("dpo: {e}")))?;
        self.schedule.build()?;
        if self.export.width < 1 || self.export.height < 1 {
            return Err(invalid("export width and height must be positive"));
        }
        if let Some(&t) = self.eval.thresholds.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(invalid(format!("eval threshold {t} must be finite and nonnegative")));
        }
        Ok(())
    }

    /// Load the exemplar sets of every configured category.
    pub fn exemplar_sets(&self) -> Result<Vec<ExemplarSet>, ConfigError> {
        self.categories
            .iter()
            .map(|&c| ExemplarSet::load(self.exemplar_dir.as_deref(), c).map_err(|e| invalid(e.to_string())))
            .collect()
    }

    /// Generation settings for one prompt, with its own seed bases.
    pub fn generation_config(&self, seed_base: u64, noise_seed_base: u64) -> GenerationConfig {
        GenerationConfig {
            n_candidates: self.generation.n_candidates,
            sigma: self.generation.sigma,
            seed_base,
            noise_seed_base,
        }
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        if let Some(t) = self.created_at {
            return t;
        }
        std::env::var("SOURCE_DATE_EPOCH")
            .ok()
            .and_then(|s| s.trim().parse::<i64>().ok())
            .and_then(|secs| DateTime::from_timestamp(secs, 0))
            .unwrap_or_else(Utc::now)
    }

    /// Check that the output root exists or can be created and is writable.
    pub fn prepare_out(&self) -> Result<(), ConfigError> {
        let err = |e: std::io::Error| invalid(format!("output root {}: {e}", self.out.display()));
        fs::create_dir_all(&self.out).map_err(err)?;
        let probe = self.out.join(".write-probe");
        fs::write(&probe, b"").map_err(err)?;
        fs::remove_file(&probe).map_err(err)
    }
}
