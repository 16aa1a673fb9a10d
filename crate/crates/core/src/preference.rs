//! Winner/loser selection, the threshold-filter baseline and dataset
//! statistics.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::model::{word_count, CandidateImage, Category, PreferencePair, PromptRecord};
use crate::qa::PromptQa;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreferenceError {
    #[error("conversion efficiency needs at least one input prompt")]
    NoPrompts,
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// Fewer than two candidates carry a weighted score.
    TooFewScored,
    /// Every scored candidate has the same weighted score.
    Degenerate,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::TooFewScored => "too_few_scored",
            SkipReason::Degenerate => "degenerate",
        }
    }
}

/// One line of `skips.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub prompt_id: String,
    pub reason: SkipReason,
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub pair: PreferencePair,
    /// Positions in the input list.
    pub winner_index: usize,
    pub loser_index: usize,
}

/// Indices of the first maximum and first minimum of `scores`.
///
/// Fails with the skip reason when there are fewer than two scores or all
/// are equal.
pub fn argmax_argmin(scores: &[f64]) -> Result<(usize, usize), SkipReason> {
    if scores.len() < 2 {
        return Err(SkipReason::TooFewScored);
    }
    let (mut hi, mut lo) = (0, 0);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[hi] {
            hi = i;
        }
        if s < scores[lo] {
            lo = i;
        }
    }
    if scores[hi] == scores[lo] {
        return Err(SkipReason::Degenerate);
    }
    Ok((hi, lo))
}

/// Pick the highest and lowest weighted candidates of one prompt.
///
/// Candidates without a finite weighted score are ignored. Ties go to the
/// candidate listed first, so callers should pass candidates in generation
/// order.
pub fn select_pair(prompt_id: &str, candidates: &[CandidateImage]) -> Result<Selection, SkipRecord> {
    let scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.weighted.filter(|w| w.is_finite()).map(|w| (i, w)))
        .collect();
    let values: Vec<f64> = scored.iter().map(|&(_, w)| w).collect();
    let (hi, lo) = argmax_argmin(&values).map_err(|reason| SkipRecord {
        prompt_id: prompt_id.to_string(),
        reason,
        scored: scored.len(),
    })?;
    let (wi, ws) = scored[hi];
    let (li, ls) = scored[lo];
    Ok(Selection {
        pair: PreferencePair {
            prompt_id: prompt_id.to_string(),
            winner: candidates[wi].candidate_id.clone(),
            loser: candidates[li].candidate_id.clone(),
            winner_score: ws,
            loser_score: ls,
            margin: ws - ls,
        },
        winner_index: wi,
        loser_index: li,
    })
}

fn check_threshold(t: f64) -> Result<(), PreferenceError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(PreferenceError::BadThreshold(t))
    }
}

/// True when any candidate strictly clears both thresholds.
///
/// Thresholds are on the raw 0..=1 scale; scores are on the 0..=100 scale.
pub fn filter_by_threshold(candidates: &[CandidateImage], vqa_thr: f64, aes_thr: f64) -> Result<bool, PreferenceError> {
    check_threshold(vqa_thr)?;
    check_threshold(aes_thr)?;
    let (v, a) = (100.0 * vqa_thr, 100.0 * aes_thr);
    Ok(candidates.iter().filter_map(|c| c.scores).any(|s| s.s_vqa > v && s.s_aes > a))
}

pub fn conversion_efficiency(prompts_in: usize, pairs_out: usize) -> Result<f64, PreferenceError> {
    if prompts_in == 0 {
        return Err(PreferenceError::NoPrompts);
    }
    Ok(pairs_out as f64 / prompts_in as f64)
}

/// Contents of `filter.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub vqa_threshold: f64,
    pub aes_threshold: f64,
    pub prompts_in: usize,
    pub retained: usize,
    pub efficiency: f64,
    pub retained_prompt_ids: Vec<String>,
}

/// Run the threshold filter over every prompt's candidates.
pub fn threshold_report(
    by_prompt: &BTreeMap<String, Vec<CandidateImage>>,
    vqa_thr: f64,
    aes_thr: f64,
) -> Result<FilterReport, PreferenceError> {
    let mut retained_prompt_ids = Vec::new();
    for (pid, cands) in by_prompt {
        if filter_by_threshold(cands, vqa_thr, aes_thr)? {
            retained_prompt_ids.push(pid.clone());
        }
    }
    let prompts_in = by_prompt.len();
    Ok(FilterReport {
        vqa_threshold: vqa_thr,
        aes_threshold: aes_thr,
        prompts_in,
        retained: retained_prompt_ids.len(),
        efficiency: conversion_efficiency(prompts_in, retained_prompt_ids.len())?,
        retained_prompt_ids,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub prompts: usize,
    pub questions: usize,
    pub pairs: usize,
    /// Prompts clearing the threshold filter, when a filter result is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention: Option<f64>,
}

/// Contents of `stats.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub total_prompts: usize,
    pub total_questions: usize,
    pub total_pairs: usize,
    pub mean_questions_per_prompt: f64,
    pub mean_words_per_prompt: f64,
    pub mean_words_per_question: f64,
    pub per_category: BTreeMap<String, CategoryStats>,
}

fn mean(total: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Summary statistics over the prompt, QA and pair datasets.
///
/// `retained` is the set of prompt ids that passed the threshold filter; when
/// given, per-category retention proportions are included.
pub fn dataset_stats(
    prompts: &[PromptRecord],
    qa: &[PromptQa],
    pairs: &[PreferencePair],
    retained: Option<&HashSet<String>>,
) -> StatsReport {
    let category_of: HashMap<&str, Category> = prompts.iter().map(|p| (p.prompt_id.as_str(), p.category)).collect();
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    fn slot(map: &mut BTreeMap<String, CategoryStats>, c: Category) -> &mut CategoryStats {
        map.entry(c.name().to_string()).or_default()
    }

    let mut prompt_words = 0;
    for p in prompts {
        prompt_words += word_count(&p.text);
        let stats = slot(&mut per_category, p.category);
        stats.prompts += 1;
        if let Some(set) = retained {
            *stats.retained.get_or_insert(0) += usize::from(set.contains(&p.prompt_id));
        }
    }
    let mut total_questions = 0;
    let mut question_words = 0;
    for row in qa {
        total_questions += row.pairs.len();
        question_words += row.pairs.iter().map(|q| word_count(&q.question)).sum::<usize>();
        if let Some(&c) = category_of.get(row.prompt_id.as_str()) {
            slot(&mut per_category, c).questions += row.pairs.len();
        }
    }
    for pair in pairs {
        if let Some(&c) = category_of.get(pair.prompt_id.as_str()) {
            slot(&mut per_category, c).pairs += 1;
        }
    }
    for stats in per_category.values_mut() {
        stats.retention = stats.retained.map(|r| mean(r, stats.prompts));
    }

    StatsReport {
        total_prompts: prompts.len(),
        total_questions,
        total_pairs: pairs.len(),
        mean_questions_per_prompt: mean(total_questions, prompts.len()),
        mean_words_per_prompt: mean(prompt_words, prompts.len()),
        mean_words_per_question: mean(question_words, total_questions),
        per_category,
    }
}
