//! Per-image scoring: VQA faithfulness, CLIP similarity, aesthetics, their
//! weighted combination, and the weight grid search.

use serde::{Deserialize, Serialize};

use crate::backend::{
    embed, load_image, rate_aesthetics, AestheticBackend, BackendError, EmbedBackend, EmbedPayload,
    Embedding, VqaBackend,
};
use crate::model::{
    validate_weights, weighted_score, CandidateImage, ImageRef, QAPair, ScoreVector, ValidationError, WeightConfig,
    WEIGHT_SUM_TOLERANCE,
};
use crate::store::BlobStore;

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("no questions to ask")]
    NoQuestions,
    #[error("question {0} is not a valid yes-question")]
    InvalidQuestion(u32),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("embedding dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("gamma must be positive and finite, got {0}")]
    BadGamma(f64),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("weight grid is empty")]
    EmptyGrid,
    #[error("weight grid candidate {0} is outside (0, 1)")]
    BadGridValue(f64),
    #[error("no weight triple in the grid sums to 1")]
    NoValidTriple,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub gamma: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig { gamma: 100.0 }
    }
}

/// True when a free-text VQA reply means "yes": case-insensitive, ignoring
/// surrounding punctuation, and accepting a leading "yes" token
/// ("Yes, there is.").
pub fn is_yes(reply: &str) -> bool {
    let lowered = reply.trim().to_lowercase();
    let first = lowered
        .split(|c: char| !c.is_alphanumeric())
        .find(|tok| !tok.is_empty());
    first == Some("yes")
}

/// `100 * matches / N` over the caption's questions.
///
/// Questions are asked sequentially; any backend failure fails the whole
/// score.
pub fn vqa_score(vqa: &dyn VqaBackend, store: &BlobStore, image: &ImageRef, pairs: &[QAPair]) -> Result<f64, ScoreError> {
    if pairs.is_empty() {
        return Err(ScoreError::NoQuestions);
    }
    if let Some(bad) = pairs.iter().find(|p| !p.is_valid()) {
        return Err(ScoreError::InvalidQuestion(bad.question_id));
    }
    // one blob read for all questions
    let bytes = load_image(store, image)?;
    let mut matches = 0usize;
    for p in pairs {
        if is_yes(&vqa.answer(&bytes, &p.question)?) {
            matches += 1;
        }
    }
    Ok(100.0 * matches as f64 / pairs.len() as f64)
}

/// `gamma * cos(text, image)`; may be negative.
pub fn clip_score(text: &Embedding, image: &Embedding, cfg: &ClipConfig) -> Result<f64, ScoreError> {
    if !(cfg.gamma.is_finite() && cfg.gamma > 0.0) {
        return Err(ScoreError::BadGamma(cfg.gamma));
    }
    if text.dim() != image.dim() {
        return Err(ScoreError::DimMismatch(text.dim(), image.dim()));
    }
    let (u, v) = (text.values(), image.values());
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|b| b * b).sum();
    if nu == 0.0 || nv == 0.0 {
        return Err(ScoreError::ZeroNorm);
    }
    // sqrt(nu * nv) rather than sqrt(nu) * sqrt(nv): identical inputs give
    // exactly 1.
    let cos = (dot / (nu * nv).sqrt()).clamp(-1.0, 1.0);
    Ok(cos * cfg.gamma)
}

/// Backend aesthetic score rescaled to 0..=100.
pub fn aesthetic_score(backend: &dyn AestheticBackend, image: &[u8]) -> Result<f64, ScoreError> {
    Ok(100.0 * rate_aesthetics(backend, image)?)
}

/// Backends and settings needed to score candidates.
pub struct Scorer<'a> {
    pub vqa: &'a dyn VqaBackend,
    pub embedder: &'a dyn EmbedBackend,
    pub aesthetic: &'a dyn AestheticBackend,
    pub store: &'a BlobStore,
    pub weights: WeightConfig,
    pub clip: ClipConfig,
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub candidate_id: String,
    pub s_vqa: f64,
    pub s_clip: f64,
    pub s_aes: f64,
    pub weighted: f64,
}

impl ScoreRecord {
    pub fn scores(&self) -> ScoreVector {
        ScoreVector::new(self.s_vqa, self.s_clip, self.s_aes)
    }
}

impl Scorer<'_> {
    pub fn embed_caption(&self, caption: &str) -> Result<Embedding, ScoreError> {
        Ok(embed(self.embedder, EmbedPayload::Text(caption), None)?)
    }

    /// Fill the candidate's score vector and weighted score.
    ///
    /// `caption_embedding` is the caption's text embedding, computed once per
    /// prompt by the caller.
    pub fn score_candidate(
        &self,
        caption_embedding: &Embedding,
        pairs: &[QAPair],
        candidate: &CandidateImage,
    ) -> Result<ScoreRecord, ScoreError> {
        validate_weights(&self.weights)?;
        let bytes = load_image(self.store, &candidate.image_ref)?;
        let s_vqa = vqa_score(self.vqa, self.store, &candidate.image_ref, pairs)?;
        let image_embedding = embed(self.embedder, EmbedPayload::Image(&bytes), Some(caption_embedding.dim()))?;
        let mut s_clip = clip_score(caption_embedding, &image_embedding, &self.clip)?;
        if s_clip < 0.0 {
            log::warn!("{}: negative CLIP score {s_clip:.4} clamped to 0", candidate.candidate_id);
            s_clip = 0.0;
        }
        let s_aes = aesthetic_score(self.aesthetic, &bytes)?;
        let scores = ScoreVector::new(s_vqa, s_clip, s_aes);
        let weighted = weighted_score(&scores, &self.weights)?;
        Ok(ScoreRecord { candidate_id: candidate.candidate_id.clone(), s_vqa, s_clip, s_aes, weighted })
    }
}

/// Candidate weight values per score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightGrid {
    pub clip_candidates: Vec<f64>,
    pub vqa_candidates: Vec<f64>,
    pub aes_candidates: Vec<f64>,
}

impl Default for WeightGrid {
    fn default() -> Self {
        let wide = vec![0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6];
        WeightGrid { clip_candidates: wide.clone(), vqa_candidates: wide, aes_candidates: vec![0.05, 0.1, 0.15, 0.2] }
    }
}

/// All `(w_clip, w_vqa, w_aes)` triples from the grid summing to one, in grid
/// order.
pub fn enumerate_weight_triples(grid: &WeightGrid) -> Result<Vec<WeightConfig>, ScoreError> {
    let lists = [&grid.clip_candidates, &grid.vqa_candidates, &grid.aes_candidates];
    if lists.iter().any(|l| l.is_empty()) {
        return Err(ScoreError::EmptyGrid);
    }
    if let Some(&bad) = lists.iter().flat_map(|l| l.iter()).find(|&&v| !(v > 0.0 && v < 1.0)) {
        return Err(ScoreError::BadGridValue(bad));
    }
    let mut out = Vec::new();
    for &w_clip in &grid.clip_candidates {
        for &w_vqa in &grid.vqa_candidates {
            for &w_aes in &grid.aes_candidates {
                if (w_clip + w_vqa + w_aes - 1.0).abs() <= WEIGHT_SUM_TOLERANCE {
                    out.push(WeightConfig { w_vqa, w_clip, w_aes });
                }
            }
        }
    }
    Ok(out)
}

/// Argmax of `objective` over the grid's sum-to-one triples. Ties go to the
/// lexicographically largest `(w_clip, w_vqa, w_aes)`.
pub fn grid_search_weights<F>(grid: &WeightGrid, mut objective: F) -> Result<WeightConfig, ScoreError>
where
    F: FnMut(&WeightConfig) -> f64,
{
    let triples = enumerate_weight_triples(grid)?;
    let key = |w: &WeightConfig| (w.w_clip, w.w_vqa, w.w_aes);
    let mut best: Option<(f64, WeightConfig)> = None;
    for w in triples {
        let value = objective(&w);
        let better = match &best {
            None => true,
            Some((bv, bw)) => value > *bv || (value == *bv && key(&w) > key(bw)),
        };
        if better {
            best = Some((value, w));
        }
    }
    best.map(|(_, w)| w).ok_or(ScoreError::NoValidTriple)
}
