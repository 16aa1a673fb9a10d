//! Caption decomposition into yes-answer verification questions.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{complete_text, LlmBackend};
use crate::hashing::substream_seed;
use crate::model::{ElementType, PromptRecord, QAPair};
use crate::reply::{parse_json, ReplyError};

pub const DEFAULT_ROUNDS: usize = 6;
pub const DEFAULT_MIN_QUESTIONS: usize = 3;

const INTRO: &str = "You are a large language model, trained on a massive dataset of text. You can receive the text as a prompt \
for Text-to-Image models and break it down into general interrogative sentences that verifies if the image description is \
correct and give answers to those questions.";

const RULES: [&str; 9] = [
    "Based on the text content, the answers to the questions you generate must only be 'yes', meaning the questions you generate should be general interrogative sentences.",
    "The questions you generate must have a definitive and correct answer that can be found in the given text, and this answer must be 'yes'.",
    "The correct answer to your generated question cannot be unmentioned in the text, nor can it be inferred solely from common sense; it must be explicitly stated in the text.",
    "Each question you break down from the text must be unique, meaning that each question must be different.",
    "If you break down the text into questions, each question must be atomic, i.e., they must not be divided into new sub-questions.",
    "Categorize each question into types (object, human, animal, food, activity, attribute, counting, color, material, spatial, location, shape, other).",
    "You must generate at least 15 questions, ensuring there are at least 15 question ids.",
    "The questions you generate must cover the content contained in the text as much as possible.",
    "You also need to indicate whether the question you provided is an invalid question of the \"not mentioned in the text\" type, with 0 representing an invalid question and 1 representing a minor question.",
];

const SCHEMA: &str = r#"[
    {
        "question_id": "The number of the issue you generated, starting with 1",
        "question": "A general interrogative sentence you derive from breaking down the text should inquire whether the image conforms to the content of the text. The answer to this question must be found based on the text, not on common sense, etc. The answer must not be unmentioned in the text, and according to the text, the answer to this question must be 'yes'.",
        "answer": "The real answer to the question according to the text provided. The answer should be 'yes'",
        "element_type": "The type of problem. (object, human, animal, food, activity, attribute, counting, color, material, spatial, location, shape, other)",
        "element": "The elements mentioned in the question, or the specific elements asked by the question",
        "flag": "Check if the correct answer to the question you generated is an invalid question such as not mentioned, with 0 being an invalid question and 1 being not an invalid question"
    }
    # There should be more questions here, because a text should be broken down into multiple questions, and the number of questions is up to you
]"#;

/// Marker the mocks use to recognize a QA instruction.
pub const QA_TEXT_MARKER: &str = "The text is: ";

#[derive(Debug, thiserror::Error)]
pub enum QaError {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("{prompt_id}: all {rounds} rounds failed: {last}")]
    AllRoundsFailed { prompt_id: String, rounds: usize, last: String },
}

/// One line of `qa.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptQa {
    pub prompt_id: String,
    pub pairs: Vec<QAPair>,
}

pub fn build_qa_instruction(caption: &str) -> Result<String, QaError> {
    if caption.trim().is_empty() {
        return Err(QaError::EmptyCaption);
    }
    let mut r = String::from(INTRO);
    r.push_str("\n\nYou must follow these rules:\n");
    for (i, rule) in RULES.iter().enumerate() {
        r.push_str(&format!("{}. {}\n", i + 1, rule));
    }
    r.push_str("\nEach time I'll give you a text that will serve as a prompt for Text-to-Image models.\n\n");
    r.push_str("You should only respond in JSON format as described below:\n");
    r.push_str(SCHEMA);
    r.push('\n');
    r.push_str(crate::prompts::PARSEABILITY_LINE);
    r.push_str("\n\n");
    r.push_str(QA_TEXT_MARKER);
    r.push_str(caption.trim());
    r.push('\n');
    Ok(r)
}

/// Why a reply entry was discarded during parsing.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedEntry {
    pub index: usize,
    pub reason: String,
}

fn field_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(format!("`{key}` is not a string")),
        None => Err(format!("missing `{key}`")),
    }
}

fn field_int(obj: &serde_json::Map<String, Value>, key: &str) -> Result<u64, String> {
    match obj.get(key) {
        Some(Value::Number(n)) => n.as_u64().ok_or_else(|| format!("`{key}` is not a nonnegative integer")),
        Some(Value::String(s)) => s.trim().parse().map_err(|_| format!("`{key}` = {s:?} is not an integer")),
        Some(_) => Err(format!("`{key}` has the wrong type")),
        None => Err(format!("missing `{key}`")),
    }
}

fn parse_entry(value: &Value) -> Result<QAPair, String> {
    let obj = value.as_object().ok_or("entry is not an object")?;
    let question_id = field_int(obj, "question_id")?;
    let question_id = u32::try_from(question_id).ok().filter(|&q| q > 0).ok_or("`question_id` must be a positive integer")?;
    let question = field_str(obj, "question")?.trim().to_string();
    if question.is_empty() {
        return Err("`question` is empty".into());
    }
    let answer = field_str(obj, "answer")?
        .trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase();
    let element_type: ElementType = field_str(obj, "element_type")?.parse().map_err(|e| format!("{e}"))?;
    let element = field_str(obj, "element")?.trim().to_string();
    let flag = match field_int(obj, "flag")? {
        f @ (0 | 1) => f as u8,
        other => return Err(format!("`flag` = {other}, expected 0 or 1")),
    };
    // Non-"yes" answers break the all-yes scoring contract.
    let flag = if answer == "yes" { flag } else { 0 };
    Ok(QAPair { question_id, question, answer, element_type, element, flag })
}

/// Parse a QA reply, also reporting entries that were dropped.
pub fn parse_qa_reply_detailed(reply: &str) -> Result<(Vec<QAPair>, Vec<DroppedEntry>), ReplyError> {
    let value = parse_json(reply)?;
    let entries = value.as_array().ok_or(ReplyError::WrongShape { expected: "array" })?;
    let mut pairs = Vec::with_capacity(entries.len());
    let mut dropped = Vec::new();
    for (index, entry) in entries.iter().enumerate() {
        match parse_entry(entry) {
            Ok(p) => pairs.push(p),
            Err(reason) => {
                log::warn!("dropping QA entry {index}: {reason}");
                dropped.push(DroppedEntry { index, reason });
            }
        }
    }
    Ok((pairs, dropped))
}

/// Parse a QA reply. Malformed entries are dropped with a warning; entries
/// whose answer is not "yes" are kept with `flag` forced to 0.
pub fn parse_qa_reply(reply: &str) -> Result<Vec<QAPair>, ReplyError> {
    parse_qa_reply_detailed(reply).map(|(pairs, _)| pairs)
}

/// Dedup key: lowercase, terminal punctuation stripped, whitespace collapsed.
pub fn question_key(question: &str) -> String {
    question
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// Keep the first occurrence of each normalized question.
pub fn dedup_questions(pairs: Vec<QAPair>) -> Vec<QAPair> {
    let mut seen = HashSet::new();
    pairs.into_iter().filter(|p| seen.insert(question_key(&p.question))).collect()
}

/// Run `rounds` QA generations for one prompt, keep valid entries, dedup, and
/// renumber `question_id` as 1..K in (round, entry) order.
pub fn collect_qa(llm: &dyn LlmBackend, prompt: &PromptRecord, rounds: usize, seed: u64) -> Result<Vec<QAPair>, QaError> {
    if rounds < 1 {
        return Err(QaError::NoRounds);
    }
    let instruction = build_qa_instruction(&prompt.text)?;
    let results: Vec<Result<Vec<QAPair>, String>> = (0..rounds)
        .into_par_iter()
        .map(|round| {
            let s = substream_seed(seed, &["qa", &prompt.prompt_id, &round.to_string()]);
            let reply = complete_text(llm, &instruction, s).map_err(|e| e.to_string())?;
            parse_qa_reply(&reply).map_err(|e| e.to_string())
        })
        .collect();

    let mut last = String::new();
    let mut any_ok = false;
    let mut all = Vec::new();
    for (round, r) in results.into_iter().enumerate() {
        match r {
            Ok(pairs) => {
                any_ok = true;
                all.extend(pairs.into_iter().filter(QAPair::is_valid));
            }
            Err(e) => {
                log::warn!("{}: QA round {round} failed: {e}", prompt.prompt_id);
                last = e;
            }
        }
    }
    if !any_ok {
        return Err(QaError::AllRoundsFailed { prompt_id: prompt.prompt_id.clone(), rounds, last });
    }
    let mut pairs = dedup_questions(all);
    for (i, p) in pairs.iter_mut().enumerate() {
        p.question_id = i as u32 + 1;
    }
    Ok(pairs)
}
