//! Win/draw rates under gap thresholds, pairwise judge prompts and replies,
//! and agreement between judges.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{BackendError, JudgeBackend};
use crate::reply::{parse_json, ReplyError};

/// Gap thresholds reported by default.
pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.1, 0.01, 0.001];

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("score lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no scores to compare")]
    Empty,
    #[error("threshold must be finite and nonnegative, got {0}")]
    BadThreshold(f64),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("{question} judge reply: {source}")]
    Reply { question: &'static str, source: ReplyError },
    #[error("{question} judge call: {source}")]
    Backend { question: &'static str, source: BackendError },
}

/// Outcome counts of a per-index comparison of two score lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinDrawCounts {
    pub n: usize,
    pub win_a: usize,
    pub draw: usize,
    pub win_b: usize,
}

impl WinDrawCounts {
    /// `(win_a, draw, win_b)` as fractions of `n`.
    ///
    /// The last fraction is the remainder `1 - (win + draw)`, so
    /// `win + draw + lose == 1.0` holds exactly in floating point. It stays
    /// within one ulp of `win_b / n`.
    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = self.n as f64;
        let (win, draw) = (self.win_a as f64 / n, self.draw as f64 / n);
        (win, draw, 1.0 - (win + draw))
    }

    pub fn swapped(&self) -> Self {
        WinDrawCounts { n: self.n, win_a: self.win_b, draw: self.draw, win_b: self.win_a }
    }
}

/// Compare `a[i]` with `b[i]`: a draw when `|a - b| <= threshold`, otherwise
/// a win for the larger.
pub fn win_draw_rates(a: &[f64], b: &[f64], threshold: f64) -> Result<WinDrawCounts, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(EvalError::BadThreshold(threshold));
    }
    let mut counts = WinDrawCounts { n: a.len(), win_a: 0, draw: 0, win_b: 0 };
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() <= threshold {
            counts.draw += 1;
        } else if x > y {
            counts.win_a += 1;
        } else {
            counts.win_b += 1;
        }
    }
    Ok(counts)
}

/// One row of `winrate_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub counts: WinDrawCounts,
    pub win: f64,
    pub draw: f64,
    pub lose: f64,
}

pub fn threshold_table(a: &[f64], b: &[f64], thresholds: &[f64]) -> Result<Vec<ThresholdRow>, EvalError> {
    thresholds
        .iter()
        .map(|&threshold| {
            let counts = win_draw_rates(a, b, threshold)?;
            let (win, draw, lose) = counts.fractions();
            Ok(ThresholdRow { threshold, counts, win, draw, lose })
        })
        .collect()
}

/// Fraction of positions where the two lists agree.
pub fn agreement_rate<T: PartialEq>(judge: &[T], reference: &[T]) -> Result<f64, EvalError> {
    if judge.len() != reference.len() {
        return Err(EvalError::LengthMismatch(judge.len(), reference.len()));
    }
    if judge.is_empty() {
        return Err(EvalError::Empty);
    }
    let same = judge.iter().zip(reference).filter(|(x, y)| x == y).count();
    Ok(same as f64 / judge.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgeQuestion {
    Q1,
    Q2,
    Q3,
}

impl JudgeQuestion {
    pub const ALL: [JudgeQuestion; 3] = [JudgeQuestion::Q1, JudgeQuestion::Q2, JudgeQuestion::Q3];

    pub fn id(self) -> &'static str {
        match self {
            JudgeQuestion::Q1 => "Q1",
            JudgeQuestion::Q2 => "Q2",
            JudgeQuestion::Q3 => "Q3",
        }
    }

    /// Aspect being judged: general preference, prompt alignment, visual appeal.
    pub fn aspect(self) -> &'static str {
        match self {
            JudgeQuestion::Q1 => "preference",
            JudgeQuestion::Q2 => "alignment",
            JudgeQuestion::Q3 => "appeal",
        }
    }

    pub fn text(self) -> &'static str {
        match self {
            JudgeQuestion::Q1 => "Which image do you prefer?",
            JudgeQuestion::Q2 => "Which image better fits the text description?",
            JudgeQuestion::Q3 => "Disregarding the prompt, which image is more visually appealing?",
        }
    }
}

const FORCED_CHOICE: &str = "No matter what happens, you must make a choice and answer A or B.";
const REPLY_SCHEMA: &str = "Reply in JSON format below:\n{\n  \"reason\": \"your reason\",\n  \"choice\": \"A/B\"\n}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgePrompt {
    pub question: JudgeQuestion,
    pub instruction: String,
}

pub fn build_judge_prompts(caption: &str) -> Result<[JudgePrompt; 3], EvalError> {
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(EvalError::EmptyCaption);
    }
    Ok(JudgeQuestion::ALL.map(|question| JudgePrompt {
        question,
        instruction: format!(
            "The prompt for these two pictures is: {caption}\n{} {FORCED_CHOICE}\n\n{REPLY_SCHEMA}",
            question.text()
        ),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn flipped(self) -> Self {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub choice: Choice,
    pub reason: String,
}

/// Parse `{"reason": ..., "choice": "A"|"B"}`, tolerating code fences and
/// letter case.
pub fn parse_judge_reply(reply: &str) -> Result<JudgeVerdict, ReplyError> {
    let value = parse_json(reply)?;
    let obj = value.as_object().ok_or(ReplyError::WrongShape { expected: "object" })?;
    let raw = match obj.get("choice") {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(other) => return Err(ReplyError::InvalidChoice(other.to_string())),
        None => return Err(ReplyError::MissingKey("choice")),
    };
    let choice = match raw.to_ascii_uppercase().as_str() {
        "A" => Choice::A,
        "B" => Choice::B,
        _ => return Err(ReplyError::InvalidChoice(raw)),
    };
    let reason = obj.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(JudgeVerdict { choice, reason })
}

/// One judge call, kept for the audit transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeExchange {
    pub question: JudgeQuestion,
    /// Images were shown in B, A order.
    pub swapped: bool,
    pub instruction: String,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOutcome {
    pub question: JudgeQuestion,
    /// Choice with the images in A, B order.
    pub first: Choice,
    /// Choice with the images swapped, mapped back to the original labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swapped: Option<Choice>,
    /// Agreed choice; `None` when the two orders disagree.
    pub choice: Option<Choice>,
}

impl QuestionOutcome {
    pub fn is_consistent(&self) -> bool {
        self.choice.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tournament {
    pub outcomes: Vec<QuestionOutcome>,
    pub exchanges: Vec<JudgeExchange>,
}

impl Tournament {
    pub fn inconsistencies(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.is_consistent()).count()
    }
}

/// Ask all three questions about `image_a` versus `image_b`.
///
/// With `position_swap`, each question is asked again with the images in the
/// opposite order; disagreements are kept as inconsistent rather than
/// resolved.
pub fn pairwise_tournament(
    judge: &dyn JudgeBackend,
    caption: &str,
    image_a: &[u8],
    image_b: &[u8],
    position_swap: bool,
) -> Result<Tournament, EvalError> {
    let prompts = build_judge_prompts(caption)?;
    let mut outcomes = Vec::with_capacity(3);
    let mut exchanges = Vec::new();
    for prompt in prompts {
        let question = prompt.question.id();
        let mut ask = |swapped: bool| -> Result<Choice, EvalError> {
            let (x, y) = if swapped { (image_b, image_a) } else { (image_a, image_b) };
            let reply = judge.judge(&prompt.instruction, x, y).map_err(|source| EvalError::Backend { question, source })?;
            let verdict = parse_judge_reply(&reply).map_err(|source| EvalError::Reply { question, source })?;
            exchanges.push(JudgeExchange { question: prompt.question, swapped, instruction: prompt.instruction.clone(), reply });
            Ok(if swapped { verdict.choice.flipped() } else { verdict.choice })
        };
        let first = ask(false)?;
        let swapped = if position_swap { Some(ask(true)?) } else { None };
        let choice = match swapped {
            Some(s) if s != first => None,
            _ => Some(first),
        };
        outcomes.push(QuestionOutcome { question: prompt.question, first, swapped, choice });
    }
    Ok(Tournament { outcomes, exchanges })
}
