//! Stage execution: upstream checks, caching, item-level resume, and atomic
//! output plus manifest writes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use agfsync_core::backend::{embed, load_image, Backends, BackendKind, EmbedPayload, Embedding};
use agfsync_core::candidates::generate_candidates;
use agfsync_core::dpo::{export_dpo_batches, to_bytes, ExportError, LumaFlatten};
use agfsync_core::eval::{pairwise_tournament, threshold_table, Choice, JudgeExchange, QuestionOutcome, ThresholdRow};
use agfsync_core::hashing::substream_seed;
use agfsync_core::jsonl::{content_hash, read_jsonl, sweep_temp_files, to_jsonl_bytes, write_atomic, JsonlError};
use agfsync_core::model::{CandidateImage, ImageRef, PreferencePair, PromptRecord};
use agfsync_core::preference::{select_pair, threshold_report, FilterReport, SkipRecord};
use agfsync_core::prompts::{generate_prompts, PromptRequest};
use agfsync_core::qa::{collect_qa, PromptQa};
use agfsync_core::scoring::{ScoreRecord, Scorer};
use agfsync_core::store::BlobStore;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, PipelineConfig};
use crate::manifest::*;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} needs {upstream}, which has not been run")]
    UpstreamMissing { stage: Stage, upstream: Stage },
    #[error("stage {stage} needs {upstream}, whose last run is {status}; rerun it first")]
    UpstreamIncomplete { stage: Stage, upstream: Stage, status: StageStatus },
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("{0}")]
    Io(String),
}

impl From<JsonlError> for PipelineError {
    fn from(e: JsonlError) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Rerun even when the stage is up to date.
    pub force: bool,
    /// After a partial run, recompute only the failed items.
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct StageRun {
    pub manifest: StageManifest,
    pub cached: bool,
}

/// Everything a stage produced, before it is written.
struct StageOutput {
    files: Vec<(&'static str, Vec<u8>, usize)>,
    counts: BTreeMap<String, usize>,
    retry: Vec<RetryItem>,
    succeeded: usize,
}

/// Results of running a keyed list of items.
struct Items<R> {
    records: Vec<R>,
    succeeded: usize,
    failed: Vec<RetryItem>,
}

/// Records of a partial earlier run that a resumed run may keep.
struct Reuse {
    retry: HashSet<String>,
}

/// One judged winner/loser pair; a line of `eval.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub prompt_id: String,
    /// Shown as image A.
    pub winner: String,
    /// Shown as image B.
    pub loser: String,
    pub outcomes: Vec<QuestionOutcome>,
    pub exchanges: Vec<JudgeExchange>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionSummary {
    pub asked: usize,
    pub consistent: usize,
    pub winner_preferred: usize,
}

/// Contents of `winrate_report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub pairs: usize,
    pub judged: usize,
    pub position_swap: bool,
    /// Consistent judge choices that agree with the score-based winner.
    pub judge_agreement: f64,
    pub per_question: BTreeMap<String, QuestionSummary>,
    /// Winner against loser per aspect, on the raw `[0, 1]` scale.
    pub winrate: BTreeMap<String, Vec<ThresholdRow>>,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    backends: Option<Backends>,
    pool: rayon::ThreadPool,
}

fn input_err(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Input { path: path.display().to_string(), message: message.to_string() }
}

fn group_by<R: Clone>(records: &[R], key: impl Fn(&R) -> String) -> HashMap<String, Vec<R>> {
    let mut map: HashMap<String, Vec<R>> = HashMap::new();
    for r in records {
        map.entry(key(r)).or_default().push(r.clone());
    }
    map
}

impl Pipeline {
    /// Pipeline with backends built from the configuration on first use.
    pub fn new(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        Self::build(cfg, None)
    }

    pub fn with_backends(cfg: PipelineConfig, backends: Backends) -> Result<Self, PipelineError> {
        Self::build(cfg, Some(backends))
    }

    fn build(cfg: PipelineConfig, backends: Option<Backends>) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs.unwrap_or(0))
            .build()
            .map_err(|e| PipelineError::Io(format!("worker pool: {e}")))?;
        Ok(Pipeline { cfg, backends, pool })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    fn backends(&self) -> Result<Backends, PipelineError> {
        match &self.backends {
            Some(b) => Ok(b.clone()),
            None => Ok(self.cfg.backends.build()?),
        }
    }

    fn store(&self) -> Result<BlobStore, PipelineError> {
        Ok(BlobStore::open(self.out().join("blobs"))?)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out().join(file)
    }

    fn read<T: DeserializeOwned>(&self, file: &str) -> Result<Vec<T>, PipelineError> {
        let path = self.path(file);
        read_jsonl(&path).map_err(|e| input_err(&path, e))
    }

    fn read_prompts(&self) -> Result<Vec<PromptRecord>, PipelineError> {
        let prompts: Vec<PromptRecord> = self.read(PROMPTS)?;
        let mut ids = HashSet::new();
        for p in &prompts {
            p.validate().map_err(|e| input_err(&self.path(PROMPTS), format!("{}: {e}", p.prompt_id)))?;
            if !ids.insert(p.prompt_id.as_str()) {
                return Err(input_err(&self.path(PROMPTS), format!("duplicate prompt id {}", p.prompt_id)));
            }
        }
        Ok(prompts)
    }

    fn read_candidates(&self) -> Result<Vec<CandidateImage>, PipelineError> {
        self.read(CANDIDATES)
    }

    fn read_pairs(&self) -> Result<Vec<PreferencePair>, PipelineError> {
        let pairs: Vec<PreferencePair> = self.read(PAIRS)?;
        for p in &pairs {
            p.validate().map_err(|e| input_err(&self.path(PAIRS), format!("{}: {e}", p.prompt_id)))?;
        }
        Ok(pairs)
    }

    /// Candidates with their scores attached.
    fn scored_candidates(&self) -> Result<Vec<CandidateImage>, PipelineError> {
        let scores: Vec<ScoreRecord> = self.read(SCORES)?;
        let by_id: HashMap<&str, &ScoreRecord> = scores.iter().map(|s| (s.candidate_id.as_str(), s)).collect();
        let mut candidates = self.read_candidates()?;
        for c in &mut candidates {
            if let Some(s) = by_id.get(c.candidate_id.as_str()) {
                let v = s.scores();
                v.validate().map_err(|e| input_err(&self.path(SCORES), format!("{}: {e}", c.candidate_id)))?;
                c.scores = Some(v);
                c.weighted = Some(s.weighted);
            }
        }
        Ok(candidates)
    }

    /// Hash of the configuration slice that determines a stage's outputs.
    pub fn stage_config_hash(&self, stage: Stage) -> Result<String, PipelineError> {
        let c = &self.cfg;
        let b = &c.backends;
        let d = |k| b.descriptor(k);
        let value = match stage {
            Stage::Prompts => serde_json::json!({
                "seed": c.seed,
                "prompts_per_category": c.prompts_per_category,
                "batch_size": c.batch_size,
                "exemplars": c.exemplar_sets()?,
                "llm": d(BackendKind::Llm),
            }),
            Stage::Qa => serde_json::json!({ "seed": c.seed, "qa_rounds": c.qa_rounds, "llm": d(BackendKind::Llm) }),
            Stage::Images => serde_json::json!({
                "seed": c.seed,
                "generation": c.generation,
                "t2i": d(BackendKind::T2i),
                "embed": d(BackendKind::Embed),
            }),
            Stage::Scores => serde_json::json!({
                "weights": c.weights,
                "clip": c.clip,
                "min_questions": c.min_questions,
                "vqa": d(BackendKind::Vqa),
                "embed": d(BackendKind::Embed),
                "aesthetic": d(BackendKind::Aesthetic),
            }),
            Stage::Pairs => serde_json::json!({ "thresholds": c.thresholds }),
            Stage::Export => serde_json::json!({
                "dpo": c.dpo,
                "schedule": c.schedule,
                "export": c.export,
                "embed": d(BackendKind::Embed),
            }),
            Stage::Eval => serde_json::json!({ "eval": c.eval, "judge": d(BackendKind::Judge) }),
        };
        Ok(config_hash(&value))
    }

    fn upstream_inputs(&self, stage: Stage) -> Result<Vec<FileHash>, PipelineError> {
        let mut inputs = Vec::new();
        for &up in stage.upstream() {
            let m = StageManifest::load(self.out(), up).ok_or(PipelineError::UpstreamMissing { stage, upstream: up })?;
            if m.status != StageStatus::Complete {
                return Err(PipelineError::UpstreamIncomplete { stage, upstream: up, status: m.status });
            }
            if !m.outputs_intact(self.out()) {
                return Err(PipelineError::UpstreamMissing { stage, upstream: up });
            }
            inputs.extend(m.outputs.into_iter().map(|o| FileHash { path: o.path, hash: o.hash }));
        }
        Ok(inputs)
    }

    /// Run one stage unless it is already up to date.
    pub fn run_stage(&self, stage: Stage, opts: RunOptions) -> Result<StageRun, PipelineError> {
        self.cfg.prepare_out()?;
        let swept = sweep_temp_files(self.out())?;
        if swept > 0 {
            log::info!("removed {swept} temp file(s) left by an interrupted run");
        }
        let inputs = self.upstream_inputs(stage)?;
        let chash = self.stage_config_hash(stage)?;
        let prev = StageManifest::load(self.out(), stage);
        if let Some(m) = &prev {
            if !opts.force && m.is_fresh(self.out(), &chash, &inputs) {
                log::info!("{stage}: up to date");
                return Ok(StageRun { manifest: m.clone(), cached: true });
            }
        }
        let reuse = prev
            .filter(|m| {
                opts.resume
                    && m.status == StageStatus::Partial
                    && m.config_hash == chash
                    && m.inputs == inputs
                    && m.outputs_intact(self.out())
            })
            .map(|m| Reuse { retry: m.retry.into_iter().map(|r| r.item).collect() });

        log::info!("{stage}: running{}", if reuse.is_some() { " (resuming failed items)" } else { "" });
        let output = self.pool.install(|| self.execute(stage, reuse.as_ref()))?;

        let mut outputs = Vec::with_capacity(output.files.len());
        for (file, bytes, records) in &output.files {
            write_atomic(&self.path(file), bytes)?;
            outputs.push(OutputFile { path: file.to_string(), hash: content_hash(bytes), records: *records });
        }
        let status = if output.retry.is_empty() {
            StageStatus::Complete
        } else if output.succeeded == 0 {
            StageStatus::Failed
        } else {
            StageStatus::Partial
        };
        for r in &output.retry {
            log::warn!("{stage}: {} failed: {}", r.item, r.error);
        }
        let manifest = StageManifest {
            stage,
            status,
            config_hash: chash,
            inputs,
            outputs,
            counts: output.counts,
            retry: output.retry,
        };
        manifest.save(self.out())?;
        Ok(StageRun { manifest, cached: false })
    }

    fn execute(&self, stage: Stage, reuse: Option<&Reuse>) -> Result<StageOutput, PipelineError> {
        match stage {
            Stage::Prompts => self.stage_prompts(reuse),
            Stage::Qa => self.stage_qa(reuse),
            Stage::Images => self.stage_images(reuse),
            Stage::Scores => self.stage_scores(reuse),
            Stage::Pairs => self.stage_pairs(),
            Stage::Export => self.stage_export(),
            Stage::Eval => self.stage_eval(reuse),
        }
    }

    /// Run `f` for every item not kept from a resumed run, in parallel, and
    /// return the records in item order.
    fn run_items<R, F>(
        &self,
        items: &[String],
        reuse: Option<&Reuse>,
        file: &str,
        key: impl Fn(&R) -> String,
        f: F,
    ) -> Result<Items<R>, PipelineError>
    where
        R: Clone + Send + Sync + DeserializeOwned,
        F: Fn(&str) -> Result<Vec<R>, String> + Sync,
    {
        let kept: HashMap<String, Vec<R>> = match reuse {
            Some(r) => {
                let prior: Vec<R> = self.read(file)?;
                group_by(&prior, &key).into_iter().filter(|(k, _)| !r.retry.contains(k)).collect()
            }
            None => HashMap::new(),
        };
        let results: Vec<Result<Vec<R>, String>> = items
            .par_iter()
            .map(|item| match kept.get(item) {
                Some(records) => Ok(records.clone()),
                None => f(item),
            })
            .collect();
        let mut out = Items { records: Vec::new(), succeeded: 0, failed: Vec::new() };
        for (item, r) in items.iter().zip(results) {
            match r {
                Ok(records) => {
                    out.succeeded += 1;
                    out.records.extend(records);
                }
                Err(error) => out.failed.push(RetryItem { item: item.clone(), error }),
            }
        }
        Ok(out)
    }

    fn stage_prompts(&self, reuse: Option<&Reuse>) -> Result<StageOutput, PipelineError> {
        let backends = self.backends()?;
        let sets = self.cfg.exemplar_sets()?;
        let created_at = self.cfg.created_at();
        let items: Vec<String> = sets.iter().map(|s| s.category.slug().to_string()).collect();
        let by_slug: HashMap<&str, _> = sets.iter().map(|s| (s.category.slug(), s)).collect();
        let seed = substream_seed(self.cfg.seed, &["prompts"]);
        let r = self.run_items(&items, reuse, PROMPTS, |p: &PromptRecord| p.category.slug().to_string(), |slug| {
            let set = by_slug[slug];
            let request = PromptRequest {
                category: set.category,
                count: self.cfg.prompts_per_category,
                batch_size: self.cfg.batch_size,
                seed,
                created_at,
            };
            generate_prompts(backends.llm.as_ref(), set, &request).map_err(|e| e.to_string())
        })?;
        let counts = BTreeMap::from([("categories".into(), items.len()), ("prompts".into(), r.records.len())]);
        Ok(StageOutput {
            files: vec![(PROMPTS, to_jsonl_bytes(&r.records).map_err(JsonlError::from)?, r.records.len())],
            counts,
            retry: r.failed,
            succeeded: r.succeeded,
        })
    }

    fn stage_qa(&self, reuse: Option<&Reuse>) -> Result<StageOutput, PipelineError> {
        let backends = self.backends()?;
        let prompts = self.read_prompts()?;
        let items: Vec<String> = prompts.iter().map(|p| p.prompt_id.clone()).collect();
        let by_id: HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
        let seed = substream_seed(self.cfg.seed, &["qa"]);
        let r = self.run_items(&items, reuse, QA, |q: &PromptQa| q.prompt_id.clone(), |pid| {
            let pairs = collect_qa(backends.llm.as_ref(), by_id[pid], self.cfg.qa_rounds, seed).map_err(|e| e.to_string())?;
            Ok(vec![PromptQa { prompt_id: pid.to_string(), pairs }])
        })?;
        let questions: usize = r.records.iter().map(|q| q.pairs.len()).sum();
        let below = r.records.iter().filter(|q| q.pairs.len() < self.cfg.min_questions).count();
        let counts = BTreeMap::from([
            ("prompts".into(), r.records.len()),
            ("questions".into(), questions),
            ("below_min_questions".into(), below),
        ]);
        Ok(StageOutput {
            files: vec![(QA, to_jsonl_bytes(&r.records).map_err(JsonlError::from)?, r.records.len())],
            counts,
            retry: r.failed,
            succeeded: r.succeeded,
        })
    }

    fn stage_images(&self, reuse: Option<&Reuse>) -> Result<StageOutput, PipelineError> {
        let backends = self.backends()?;
        let store = self.store()?;
        let prompts = self.read_prompts()?;
        let items: Vec<String> = prompts.iter().map(|p| p.prompt_id.clone()).collect();
        let by_id: HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
        let r = self.run_items(&items, reuse, CANDIDATES, |c: &CandidateImage| c.prompt_id.clone(), |pid| {
            let gen = self.cfg.generation_config(
                substream_seed(self.cfg.seed, &["images", "latent", pid]),
                substream_seed(self.cfg.seed, &["images", "noise", pid]),
            );
            generate_candidates(backends.t2i.as_ref(), backends.embed.as_ref(), &store, by_id[pid], &gen)
                .map_err(|e| e.to_string())
        })?;
        let counts = BTreeMap::from([("prompts".into(), r.succeeded), ("candidates".into(), r.records.len())]);
        Ok(StageOutput {
            files: vec![(CANDIDATES, to_jsonl_bytes(&r.records).map_err(JsonlError::from)?, r.records.len())],
            counts,
            retry: r.failed,
            succeeded: r.succeeded,
        })
    }

    fn stage_scores(&self, reuse: Option<&Reuse>) -> Result<StageOutput, PipelineError> {
        let backends = self.backends()?;
        let store = self.store()?;
        let prompts = self.read_prompts()?;
        let qa: Vec<PromptQa> = self.read(QA)?;
        let candidates = self.read_candidates()?;
        let qa_by_id: HashMap<&str, &PromptQa> = qa.iter().map(|q| (q.prompt_id.as_str(), q)).collect();
        let cands_by_prompt = group_by(&candidates, |c| c.prompt_id.clone());
        let prompt_of: HashMap<&str, &str> =
            candidates.iter().map(|c| (c.candidate_id.as_str(), c.prompt_id.as_str())).collect();
        let items: Vec<String> =
            prompts.iter().map(|p| p.prompt_id.clone()).filter(|id| cands_by_prompt.contains_key(id)).collect();
        let by_id: HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
        let unscored: Vec<&String> = items
            .iter()
            .filter(|id| qa_by_id.get(id.as_str()).map_or(0, |q| q.pairs.len()) < self.cfg.min_questions)
            .collect();

        let scorer = Scorer {
            vqa: backends.vqa.as_ref(),
            embedder: backends.embed.as_ref(),
            aesthetic: backends.aesthetic.as_ref(),
            store: &store,
            weights: self.cfg.weights,
            clip: self.cfg.clip,
        };
        let key = |s: &ScoreRecord| prompt_of.get(s.candidate_id.as_str()).copied().unwrap_or_default().to_string();
        let r = self.run_items(&items, reuse, SCORES, key, |pid| {
            let Some(q) = qa_by_id.get(pid).filter(|q| q.pairs.len() >= self.cfg.min_questions) else {
                return Ok(Vec::new());
            };
            let caption = scorer.embed_caption(&by_id[pid].text).map_err(|e| e.to_string())?;
            cands_by_prompt[pid]
                .iter()
                .map(|c| scorer.score_candidate(&caption, &q.pairs, c).map_err(|e| format!("{}: {e}", c.candidate_id)))
                .collect()
        })?;
        let counts = BTreeMap::from([
            ("prompts".into(), items.len()),
            ("unscored_prompts".into(), unscored.len()),
            ("scored_candidates".into(), r.records.len()),
        ]);
        Ok(StageOutput {
            files: vec![(SCORES, to_jsonl_bytes(&r.records).map_err(JsonlError::from)?, r.records.len())],
            counts,
            retry: r.failed,
            succeeded: r.succeeded,
        })
    }

    /// Candidates grouped by prompt, in file order.
    fn grouped(candidates: Vec<CandidateImage>) -> BTreeMap<String, Vec<CandidateImage>> {
        let mut map: BTreeMap<String, Vec<CandidateImage>> = BTreeMap::new();
        for c in candidates {
            map.entry(c.prompt_id.clone()).or_default().push(c);
        }
        map
    }

    fn stage_pairs(&self) -> Result<StageOutput, PipelineError> {
        let groups = Self::grouped(self.scored_candidates()?);
        let mut pairs = Vec::new();
        let mut skips: Vec<SkipRecord> = Vec::new();
        for (pid, cands) in &groups {
            match select_pair(pid, cands) {
                Ok(sel) => pairs.push(sel.pair),
                Err(skip) => skips.push(skip),
            }
        }
        let filter = filter_report(&groups, self.cfg.thresholds.vqa, self.cfg.thresholds.aes)?;
        let mut filter_bytes = serde_json::to_vec_pretty(&filter).map_err(JsonlError::from)?;
        filter_bytes.push(b'\n');
        let counts = BTreeMap::from([
            ("prompts".into(), groups.len()),
            ("pairs".into(), pairs.len()),
            ("skipped".into(), skips.len()),
            ("retained".into(), filter.retained),
        ]);
        Ok(StageOutput {
            files: vec![
                (PAIRS, to_jsonl_bytes(&pairs).map_err(JsonlError::from)?, pairs.len()),
                (SKIPS, to_jsonl_bytes(&skips).map_err(JsonlError::from)?, skips.len()),
                (FILTER, filter_bytes, 1),
            ],
            counts,
            retry: Vec::new(),
            succeeded: groups.len(),
        })
    }

    fn stage_export(&self) -> Result<StageOutput, PipelineError> {
        let pairs = self.read_pairs()?;
        if pairs.is_empty() {
            return Ok(StageOutput {
                files: Vec::new(),
                counts: BTreeMap::from([("pairs".into(), 0)]),
                retry: Vec::new(),
                succeeded: 0,
            });
        }
        let backends = self.backends()?;
        let store = self.store()?;
        let prompts = self.read_prompts()?;
        let text_of: HashMap<&str, &str> = prompts.iter().map(|p| (p.prompt_id.as_str(), p.text.as_str())).collect();
        let images: HashMap<String, ImageRef> =
            self.read_candidates()?.into_iter().map(|c| (c.candidate_id, c.image_ref)).collect();

        let embedded: Vec<(String, Result<Embedding, String>)> = pairs
            .par_iter()
            .map(|p| {
                let r = match text_of.get(p.prompt_id.as_str()) {
                    Some(text) => embed(backends.embed.as_ref(), EmbedPayload::Text(text), None).map_err(|e| e.to_string()),
                    None => Err("prompt not found".to_string()),
                };
                (p.prompt_id.clone(), r)
            })
            .collect();
        let mut conds = HashMap::new();
        let mut retry = Vec::new();
        for (pid, r) in embedded {
            match r {
                Ok(e) => {
                    conds.insert(pid, e);
                }
                Err(error) => retry.push(RetryItem { item: pid, error }),
            }
        }
        let failed = |retry: Vec<RetryItem>| StageOutput {
            files: Vec::new(),
            counts: BTreeMap::from([("pairs".into(), pairs.len())]),
            retry,
            succeeded: 0,
        };
        if !retry.is_empty() {
            return Ok(failed(retry));
        }
        let sched = self.cfg.schedule.build()?;
        let encoder = LumaFlatten { width: self.cfg.export.width, height: self.cfg.export.height };
        match export_dpo_batches(&pairs, &images, &conds, &store, &sched, &self.cfg.dpo, &encoder) {
            Ok(export) => {
                let bytes = to_bytes(&export).map_err(|e| PipelineError::Io(e.to_string()))?;
                Ok(StageOutput {
                    files: vec![(DPO_BATCHES, bytes, export.pairs.len())],
                    counts: BTreeMap::from([
                        ("pairs".into(), export.pairs.len()),
                        ("d".into(), export.header.d),
                        ("cond_dim".into(), export.header.cond_dim),
                    ]),
                    retry: Vec::new(),
                    succeeded: export.pairs.len(),
                })
            }
            Err(ExportError::Items(items)) => Ok(failed(
                items.into_iter().map(|f| RetryItem { item: f.prompt_id, error: f.message }).collect(),
            )),
            Err(e) => Err(PipelineError::Io(e.to_string())),
        }
    }

    fn stage_eval(&self, reuse: Option<&Reuse>) -> Result<StageOutput, PipelineError> {
        let backends = self.backends()?;
        let store = self.store()?;
        let pairs = self.read_pairs()?;
        let prompts = self.read_prompts()?;
        let candidates = self.scored_candidates()?;
        let text_of: HashMap<&str, &str> = prompts.iter().map(|p| (p.prompt_id.as_str(), p.text.as_str())).collect();
        let cand_of: HashMap<&str, &CandidateImage> = candidates.iter().map(|c| (c.candidate_id.as_str(), c)).collect();
        let pair_of: HashMap<&str, &PreferencePair> = pairs.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
        let items: Vec<String> = pairs.iter().map(|p| p.prompt_id.clone()).collect();

        let load = |id: &str| -> Result<Vec<u8>, String> {
            let c = cand_of.get(id).ok_or_else(|| format!("unknown candidate {id}"))?;
            load_image(&store, &c.image_ref).map_err(|e| e.to_string())
        };
        let r = self.run_items(&items, reuse, EVAL, |j: &JudgeRecord| j.prompt_id.clone(), |pid| {
            let pair = pair_of[pid];
            let caption = text_of.get(pid).ok_or("prompt not found")?;
            let (w, l) = (load(&pair.winner)?, load(&pair.loser)?);
            let t = pairwise_tournament(backends.judge.as_ref(), caption, &w, &l, self.cfg.eval.position_swap)
                .map_err(|e| e.to_string())?;
            Ok(vec![JudgeRecord {
                prompt_id: pid.to_string(),
                winner: pair.winner.clone(),
                loser: pair.loser.clone(),
                outcomes: t.outcomes,
                exchanges: t.exchanges,
            }])
        })?;

        let summary = eval_summary(&pairs, &cand_of, &r.records, &self.cfg.eval.thresholds, self.cfg.eval.position_swap);
        let mut summary_bytes = serde_json::to_vec_pretty(&summary).map_err(JsonlError::from)?;
        summary_bytes.push(b'\n');
        let counts = BTreeMap::from([("pairs".into(), pairs.len()), ("judged".into(), r.records.len())]);
        Ok(StageOutput {
            files: vec![
                (EVAL, to_jsonl_bytes(&r.records).map_err(JsonlError::from)?, r.records.len()),
                (EVAL_SUMMARY, summary_bytes, 1),
            ],
            counts,
            retry: r.failed,
            succeeded: r.succeeded,
        })
    }
}

/// Threshold filter over every prompt; all zeros when there are no prompts.
pub fn filter_report(
    groups: &BTreeMap<String, Vec<CandidateImage>>,
    vqa: f64,
    aes: f64,
) -> Result<FilterReport, PipelineError> {
    if groups.is_empty() {
        return Ok(FilterReport { vqa_threshold: vqa, aes_threshold: aes, ..FilterReport::default() });
    }
    threshold_report(groups, vqa, aes).map_err(|e| PipelineError::Config(ConfigError::Invalid(e.to_string())))
}

fn eval_summary(
    pairs: &[PreferencePair],
    cand_of: &HashMap<&str, &CandidateImage>,
    judged: &[JudgeRecord],
    thresholds: &[f64],
    position_swap: bool,
) -> EvalSummary {
    let mut per_question: BTreeMap<String, QuestionSummary> = BTreeMap::new();
    let (mut consistent, mut agree) = (0, 0);
    for rec in judged {
        for o in &rec.outcomes {
            let q = per_question.entry(o.question.id().to_string()).or_default();
            q.asked += 1;
            if let Some(choice) = o.choice {
                q.consistent += 1;
                consistent += 1;
                if choice == Choice::A {
                    q.winner_preferred += 1;
                    agree += 1;
                }
            }
        }
    }

    let mut winrate = BTreeMap::new();
    let scored: Vec<(_, _)> = pairs
        .iter()
        .filter_map(|p| {
            let w = cand_of.get(p.winner.as_str())?;
            let l = cand_of.get(p.loser.as_str())?;
            Some(((w.scores?, w.weighted?), (l.scores?, l.weighted?)))
        })
        .collect();
    if !scored.is_empty() && !thresholds.is_empty() {
        type Pick = fn(&(agfsync_core::model::ScoreVector, f64)) -> f64;
        let aspects: [(&str, Pick); 4] = [
            ("vqa", |s| s.0.s_vqa),
            ("clip", |s| s.0.s_clip),
            ("aes", |s| s.0.s_aes),
            ("weighted", |s| s.1),
        ];
        for (name, pick) in aspects {
            let a: Vec<f64> = scored.iter().map(|(w, _)| pick(w) / 100.0).collect();
            let b: Vec<f64> = scored.iter().map(|(_, l)| pick(l) / 100.0).collect();
            if let Ok(rows) = threshold_table(&a, &b, thresholds) {
                winrate.insert(name.to_string(), rows);
            }
        }
    }

    EvalSummary {
        pairs: pairs.len(),
        judged: judged.len(),
        position_swap,
        judge_agreement: if consistent == 0 { 0.0 } else { agree as f64 / consistent as f64 },
        per_question,
        winrate,
    }
}
