//! Summary report over whatever stage outputs exist.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use agfsync_core::jsonl::{read_jsonl, write_atomic};
use agfsync_core::model::{PreferencePair, PromptRecord};
use agfsync_core::preference::{dataset_stats, FilterReport, SkipReason, SkipRecord, StatsReport};
use agfsync_core::qa::PromptQa;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::manifest::*;
use crate::pipeline::{EvalSummary, PipelineError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    pub prompts_in: usize,
    pub pairs_out: usize,
    pub efficiency: f64,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Status of each stage's last run, or "missing".
    pub stages: BTreeMap<String, String>,
    pub stats: StatsReport,
    pub conversion: Conversion,
    pub skips: BTreeMap<String, usize>,
    pub filter: FilterReport,
    pub eval: EvalSummary,
}

fn read_or_empty<T: DeserializeOwned>(out: &Path, file: &str) -> Result<Vec<T>, PipelineError> {
    let path = out.join(file);
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_jsonl(&path).map_err(|e| PipelineError::Input { path: path.display().to_string(), message: e.to_string() })
}

fn read_doc<T: DeserializeOwned + Default>(out: &Path, file: &str) -> Result<T, PipelineError> {
    let path = out.join(file);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Input { path: path.display().to_string(), message: e.to_string() }),
        Err(_) => Ok(T::default()),
    }
}

/// Build the report from the files under `out`. Missing files count as empty.
pub fn build_report(out: &Path) -> Result<Report, PipelineError> {
    let stages = Stage::ALL
        .iter()
        .map(|&s| {
            let status = StageManifest::load(out, s).map_or("missing".to_string(), |m| m.status.to_string());
            (s.name().to_string(), status)
        })
        .collect();
    let prompts: Vec<PromptRecord> = read_or_empty(out, PROMPTS)?;
    let qa: Vec<PromptQa> = read_or_empty(out, QA)?;
    let pairs: Vec<PreferencePair> = read_or_empty(out, PAIRS)?;
    let skip_records: Vec<SkipRecord> = read_or_empty(out, SKIPS)?;
    let filter: FilterReport = read_doc(out, FILTER)?;
    let eval: EvalSummary = read_doc(out, EVAL_SUMMARY)?;

    let retained: Option<HashSet<String>> =
        out.join(FILTER).exists().then(|| filter.retained_prompt_ids.iter().cloned().collect());
    let stats = dataset_stats(&prompts, &qa, &pairs, retained.as_ref());

    let mut skips: BTreeMap<String, usize> =
        [SkipReason::TooFewScored, SkipReason::Degenerate].iter().map(|r| (r.as_str().to_string(), 0)).collect();
    for s in &skip_records {
        *skips.entry(s.reason.as_str().to_string()).or_default() += 1;
    }
    let conversion = Conversion {
        prompts_in: prompts.len(),
        pairs_out: pairs.len(),
        efficiency: if prompts.is_empty() { 0.0 } else { pairs.len() as f64 / prompts.len() as f64 },
    };
    Ok(Report { stages, stats, conversion, skips, filter, eval })
}

pub fn render_text(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "agfsync report");
    let stages: Vec<String> = r.stages.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(s, "stages: {}", stages.join(" "));
    let _ = writeln!(s);
    let st = &r.stats;
    let _ = writeln!(s, "prompts: {}", st.total_prompts);
    let _ = writeln!(s, "questions: {} ({:.2} per prompt)", st.total_questions, st.mean_questions_per_prompt);
    let _ = writeln!(s, "words per prompt: {:.2}", st.mean_words_per_prompt);
    let _ = writeln!(s, "words per question: {:.2}", st.mean_words_per_question);
    let _ = writeln!(s, "pairs: {}", st.total_pairs);
    let c = &r.conversion;
    let _ = writeln!(s, "conversion efficiency: {:.4} ({} pairs from {} prompts)", c.efficiency, c.pairs_out, c.prompts_in);
    let skips: Vec<String> = r.skips.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let _ = writeln!(s, "skipped prompts: {}", skips.join(" "));
    let f = &r.filter;
    let _ = writeln!(
        s,
        "threshold filter (vqa > {}, aes > {}): {} of {} prompts retained ({:.4})",
        f.vqa_threshold, f.aes_threshold, f.retained, f.prompts_in, f.efficiency
    );
    if !st.per_category.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<30} {:>8} {:>10} {:>6} {:>10}", "category", "prompts", "questions", "pairs", "retention");
        for (name, c) in &st.per_category {
            let retention = c.retention.map_or("-".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "{:<30} {:>8} {:>10} {:>6} {:>10}", name, c.prompts, c.questions, c.pairs, retention);
        }
    }
    let e = &r.eval;
    if e.judged > 0 || !e.winrate.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(s, "judged pairs: {} of {} (position swap: {})", e.judged, e.pairs, e.position_swap);
        let _ = writeln!(s, "judge agreement with score winner: {:.4}", e.judge_agreement);
        for (q, v) in &e.per_question {
            let _ = writeln!(s, "  {q}: asked {} consistent {} winner preferred {}", v.asked, v.consistent, v.winner_preferred);
        }
        for (aspect, rows) in &e.winrate {
            let _ = writeln!(s, "winner vs loser, {aspect}:");
            for row in rows {
                let _ = writeln!(
                    s,
                    "  threshold {}: win {:.4} draw {:.4} lose {:.4}",
                    row.threshold, row.win, row.draw, row.lose
                );
            }
        }
    }
    s
}

/// Write `report.json` and `report.txt` under `out`.
/// Write `report.json`, `report.txt` and `stats.json`.
pub fn write_report(out: &Path) -> Result<Report, PipelineError> {
    let report = build_report(out)?;
    let mut stats = serde_json::to_vec_pretty(&report.stats).map_err(|e| PipelineError::Io(e.to_string()))?;
    stats.push(b'\n');
    write_atomic(&out.join(STATS), &stats)?;
    let mut json = serde_json::to_vec_pretty(&report).map_err(|e| PipelineError::Io(e.to_string()))?;
    json.push(b'\n');
    write_atomic(&out.join("report.json"), &json)?;
    write_atomic(&out.join("report.txt"), render_text(&report).as_bytes())?;
    Ok(report)
}
