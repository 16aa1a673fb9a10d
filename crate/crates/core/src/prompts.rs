//! Caption generation: in-context instruction rendering, reply parsing, and
//! batched collection into [`PromptRecord`]s.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{complete_text, BackendError, LlmBackend};
use crate::hashing::substream_seed;
use crate::model::{Category, PromptRecord};
use crate::reply::{parse_json, ReplyError};

pub const EXEMPLAR_COUNT: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 10;

/// Built-in exemplars for the one category whose examples are published.
pub const NATURAL_LANDSCAPE_EXEMPLARS: [&str; EXEMPLAR_COUNT] = [
    "A sprawling meadow under a twilight sky, where the last rays of the sun kiss the tips of wildflowers, creating a canvas of gold and purple hues.",
    "A majestic waterfall cascading down rugged cliffs, enveloped by a mist that dances in the air, surrounded by an ancient forest whispering the tales of nature.",
    "An endless desert, where golden dunes rise and fall like waves in an ocean of sand, punctuated by the occasional resilient cactus standing as a testament to life's perseverance.",
    "A serene lake, mirror-like, reflecting the perfect image of surrounding snow-capped mountains, while a solitary swan glides gracefully, leaving ripples in its wake.",
    "The aurora borealis illuminating the polar sky in a symphony of greens and purples, arching over a silent, frozen landscape that sleeps under a blanket of snow.",
];

const NATURAL_LANDSCAPES_THEME: &str =
    "Natural Landscapes: Includes terrain, bodies of water, weather phenomena, and natural scenes.";

const RULES: [&str; 10] = [
    "Your generation will be served as prompts for Text-to-Image models. So your prompt should be as visual as possible.",
    "Do NOT generate scary prompts.",
    "Do NOT repeat any existing examples.",
    "Your generated examples should be as creative as possible.",
    "Your generated examples should not have repetition.",
    "Your generated examples should be as diverse as possible.",
    "Do NOT include extra texts such as greetings.",
    "Generate {num} descriptions.",
    "The descriptions you generate should have a diverse word count, with both long and short lengths.",
    "The more detailed the description of an image, the better, and the more elements, the better.",
];

pub const PARSEABILITY_LINE: &str = "Ensure that the response can be parsed by json.loads in Python, for example: no trailing commas, no single quotes, and so on.";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("expected exactly {EXEMPLAR_COUNT} exemplars, got {0}")]
    ExemplarCount(usize),
    #[error("exemplar {0} is empty")]
    EmptyExemplar(usize),
    #[error("requested {0} descriptions; need at least 1")]
    BadCount(usize),
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error("{category}: batches failed: {}", format_failures(.failures))]
    Batches { category: Category, failures: Vec<(usize, String)> },
    #[error("{category}: only {got} unique captions after {batches} batches, wanted {wanted}")]
    Shortfall { category: Category, got: usize, wanted: usize, batches: usize },
    #[error("exemplar file {path}: {message}")]
    ExemplarFile { path: String, message: String },
    #[error("no exemplars available for {0}; supply an exemplar file")]
    MissingExemplars(Category),
}

fn format_failures(failures: &[(usize, String)]) -> String {
    failures.iter().map(|(i, e)| format!("#{i}: {e}")).collect::<Vec<_>>().join("; ")
}

/// Per-category wording substituted into the instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub category: Category,
    pub examples: Vec<String>,
    /// Theme line, e.g. "Natural Landscapes: Includes terrain, ...".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<String>,
    /// Noun phrase for "example descriptions for {subject} images".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl ExemplarSet {
    pub fn builtin(category: Category) -> Option<Self> {
        match category {
            Category::NaturalLandscapes => Some(ExemplarSet {
                category,
                examples: NATURAL_LANDSCAPE_EXEMPLARS.iter().map(|s| s.to_string()).collect(),
                theme: Some(NATURAL_LANDSCAPES_THEME.to_string()),
                subject: Some("natural landscape".to_string()),
            }),
            _ => None,
        }
    }

    /// Load `<dir>/<slug>.json`, falling back to the built-in set.
    pub fn load(dir: Option<&Path>, category: Category) -> Result<Self, PromptError> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{}.json", category.slug()));
            if path.exists() {
                let err = |message: String| PromptError::ExemplarFile { path: path.display().to_string(), message };
                let text = fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
                let set: ExemplarSet = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
                if set.category != category {
                    return Err(err(format!("declares category {}, expected {category}", set.category)));
                }
                return Ok(set);
            }
        }
        ExemplarSet::builtin(category).ok_or(PromptError::MissingExemplars(category))
    }

    fn theme(&self) -> String {
        self.theme.clone().unwrap_or_else(|| self.category.name().to_string())
    }

    fn subject(&self) -> String {
        self.subject.clone().unwrap_or_else(|| self.category.name().to_lowercase())
    }
}

/// A fully rendered caption-generation instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstruction {
    pub category: Category,
    pub num: usize,
    pub exemplars: Vec<String>,
    pub rendered: String,
}

pub fn build_prompt_instruction(set: &ExemplarSet, num: usize) -> Result<PromptInstruction, PromptError> {
    if num < 1 {
        return Err(PromptError::BadCount(num));
    }
    if set.examples.len() != EXEMPLAR_COUNT {
        return Err(PromptError::ExemplarCount(set.examples.len()));
    }
    if let Some(i) = set.examples.iter().position(|e| e.trim().is_empty()) {
        return Err(PromptError::EmptyExemplar(i));
    }

    let mut r = String::from(
        "You are a large language model, trained on a massive dataset of text. You can generate texts from given examples. \
         You are asked to generate similar examples to the provided ones and follow these rules:\n",
    );
    for (i, rule) in RULES.iter().enumerate() {
        r.push_str(&format!("{}. {}\n", i + 1, rule.replace("{num}", &num.to_string())));
    }
    r.push_str(&format!("\nPlease open your mind based on the theme \"{}\"\n\n", set.theme()));
    r.push_str(&format!("Here are five example descriptions for {} images:\n", set.subject()));
    for (i, ex) in set.examples.iter().enumerate() {
        r.push_str(&format!("{}. {}\n", i + 1, ex));
    }
    r.push_str("\nPlease imitate the example above to generate a diverse image description and do not repeat the example above.\n\n");
    r.push_str(&format!(
        "Each description aims to vividly convey the beauty and unique atmosphere of various {}.\n\n",
        set.category.name().to_lowercase()
    ));
    r.push_str("The format of your answer should be:\n{\n    \"descriptions\":[...]\n}\n");
    r.push_str(PARSEABILITY_LINE);
    r.push('\n');

    Ok(PromptInstruction { category: set.category, num, exemplars: set.examples.clone(), rendered: r })
}

/// Extract the `descriptions` array from an LLM reply.
pub fn parse_descriptions(reply: &str) -> Result<Vec<String>, ReplyError> {
    let value = parse_json(reply)?;
    let obj = value.as_object().ok_or(ReplyError::WrongShape { expected: "object" })?;
    let list = obj.get("descriptions").ok_or(ReplyError::MissingKey("descriptions"))?;
    let list = list.as_array().ok_or(ReplyError::WrongShape { expected: "array of descriptions" })?;
    if list.is_empty() {
        return Err(ReplyError::EmptyList("descriptions"));
    }
    list.iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::String(s) if s.trim().is_empty() => Err(ReplyError::EmptyEntry(i)),
            Value::String(s) => Ok(s.trim().to_string()),
            _ => Err(ReplyError::NonString(i)),
        })
        .collect()
}

/// Dedup key: lowercase with whitespace collapsed.
pub fn caption_key(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
pub struct PromptRequest {
    pub category: Category,
    pub count: usize,
    pub batch_size: usize,
    /// Root of the sampling-seed sub-streams for this request.
    pub seed: u64,
    pub created_at: DateTime<Utc>,
}

/// Ask for one batch, re-asking on unparseable replies within the backend's
/// retry budget.
fn run_batch(llm: &dyn LlmBackend, set: &ExemplarSet, num: usize, seed: u64, index: usize) -> Result<Vec<String>, String> {
    let instruction = build_prompt_instruction(set, num).map_err(|e| e.to_string())?;
    let mut last_err = String::new();
    for attempt in 0..=llm.retry_budget() {
        let s = substream_seed(seed, &[set.category.slug(), "batch", &index.to_string(), &attempt.to_string()]);
        match complete_text(llm, &instruction.rendered, s) {
            Ok(reply) => match parse_descriptions(&reply) {
                Ok(list) => return Ok(list),
                Err(e) => last_err = e.to_string(),
            },
            // Transport errors were already retried by the backend.
            Err(e @ BackendError::Transport { .. }) => return Err(e.to_string()),
            Err(e) => last_err = e.to_string(),
        }
        log::warn!("{}: batch {index} attempt {attempt} unusable: {last_err}", set.category);
    }
    Err(last_err)
}

/// Generate exactly `request.count` unique captions for one category.
///
/// Issues `ceil(count / batch_size)` batches up front, the last one sized to
/// the remainder. Duplicates (including repeats of the exemplars) are
/// dropped; a shortfall triggers extra batches within the retry budget.
pub fn generate_prompts(llm: &dyn LlmBackend, set: &ExemplarSet, request: &PromptRequest) -> Result<Vec<PromptRecord>, PromptError> {
    if request.count < 1 {
        return Err(PromptError::BadCount(request.count));
    }
    if request.batch_size < 1 {
        return Err(PromptError::BadBatchSize);
    }
    // validate exemplars before spending any calls
    build_prompt_instruction(set, 1)?;

    let category = set.category;
    let mut sizes = vec![request.batch_size; request.count / request.batch_size];
    if !request.count.is_multiple_of(request.batch_size) {
        sizes.push(request.count % request.batch_size);
    }

    let mut seen: HashSet<String> = set.examples.iter().map(|e| caption_key(e)).collect();
    let mut captions: Vec<String> = Vec::with_capacity(request.count);
    let mut next_index = 0usize;
    let mut extra_rounds = 0u32;

    loop {
        let results: Vec<(usize, Result<Vec<String>, String>)> = sizes
            .par_iter()
            .enumerate()
            .map(|(offset, &num)| {
                let index = next_index + offset;
                (index, run_batch(llm, set, num, request.seed, index))
            })
            .collect();
        next_index += sizes.len();

        let failures: Vec<(usize, String)> =
            results.iter().filter_map(|(i, r)| r.as_ref().err().map(|e| (*i, e.clone()))).collect();
        if !failures.is_empty() {
            return Err(PromptError::Batches { category, failures });
        }
        for (_, batch) in results {
            for caption in batch.expect("failures handled above") {
                if seen.insert(caption_key(&caption)) {
                    captions.push(caption);
                } else {
                    log::warn!("{category}: dropping duplicate caption {caption:?}");
                }
            }
        }

        if captions.len() >= request.count {
            break;
        }
        if extra_rounds >= llm.retry_budget() {
            return Err(PromptError::Shortfall { category, got: captions.len(), wanted: request.count, batches: next_index });
        }
        extra_rounds += 1;
        sizes = vec![(request.count - captions.len()).min(request.batch_size)];
    }

    captions.truncate(request.count);
    let source = llm.id();
    Ok(captions
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            PromptRecord::new(prompt_id(category, i), category, text, source.clone(), request.created_at)
                .expect("parsed captions are nonempty")
        })
        .collect())
}

pub fn prompt_id(category: Category, index: usize) -> String {
    format!("{}-{:04}", category.slug(), index + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replies with `num` captions derived from the seed.
    struct SeededLlm {
        calls: AtomicUsize,
    }

    impl LlmBackend for SeededLlm {
        fn id(&self) -> String {
            "seeded".into()
        }
        fn complete(&self, instruction: &str, seed: u64) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let num: usize = instruction
                .split("Generate ")
                .nth(1)
                .and_then(|s| s.split(' ').next())
                .and_then(|n| n.parse().ok())
                .unwrap();
            let list: Vec<String> = (0..num).map(|i| format!("scene {seed:x} number {i}")).collect();
            Ok(serde_json::json!({ "descriptions": list }).to_string())
        }
    }

    struct ConstLlm(&'static str);
    impl LlmBackend for ConstLlm {
        fn id(&self) -> String {
            "const".into()
        }
        fn complete(&self, _: &str, _: u64) -> Result<String, BackendError> {
            Ok(self.0.to_string())
        }
    }

    fn landscapes() -> ExemplarSet {
        ExemplarSet::builtin(Category::NaturalLandscapes).unwrap()
    }

    fn request(count: usize, batch_size: usize) -> PromptRequest {
        PromptRequest { category: Category::NaturalLandscapes, count, batch_size, seed: 42, created_at: DateTime::UNIX_EPOCH }
    }

    #[test]
    fn instruction_contains_rules_theme_exemplars_and_footer() {
        let ins = build_prompt_instruction(&landscapes(), 10).unwrap();
        assert!(ins.rendered.contains("8. Generate 10 descriptions."));
        assert!(ins.rendered.contains("10. The more detailed the description"));
        assert!(ins.rendered.contains(NATURAL_LANDSCAPES_THEME));
        for ex in NATURAL_LANDSCAPE_EXEMPLARS {
            assert!(ins.rendered.contains(ex));
        }
        assert!(ins.rendered.contains("\"descriptions\":[...]"));
        assert!(ins.rendered.contains(PARSEABILITY_LINE));
        assert_eq!(ins.num, 10);
    }

    #[test]
    fn instruction_arity_and_count() {
        let mut four = landscapes();
        four.examples.pop();
        assert!(matches!(build_prompt_instruction(&four, 10), Err(PromptError::ExemplarCount(4))));
        assert!(matches!(build_prompt_instruction(&landscapes(), 0), Err(PromptError::BadCount(0))));
        let one = build_prompt_instruction(&landscapes(), 1).unwrap();
        assert!(one.rendered.contains("Generate 1 descriptions."));
        let mut blank = landscapes();
        blank.examples[2] = " ".into();
        assert!(matches!(build_prompt_instruction(&blank, 1), Err(PromptError::EmptyExemplar(2))));
    }

    #[test]
    fn parse_descriptions_examples() {
        assert_eq!(parse_descriptions(r#"{"descriptions":["a cat","a dog"]}"#).unwrap(), vec!["a cat", "a dog"]);
        assert_eq!(parse_descriptions("```json\n{\"descriptions\":[\"x\"]}\n```").unwrap(), vec!["x"]);
        assert_eq!(parse_descriptions(r#"{"descriptions":[]}"#), Err(ReplyError::EmptyList("descriptions")));
        assert_eq!(parse_descriptions(r#"{"desc":["x"]}"#), Err(ReplyError::MissingKey("descriptions")));
        assert_eq!(parse_descriptions(r#"{"descriptions":["x", 3]}"#), Err(ReplyError::NonString(1)));
        assert_eq!(parse_descriptions(r#"{"descriptions":["x", ""]}"#), Err(ReplyError::EmptyEntry(1)));
        assert!(matches!(parse_descriptions("sure! here you go"), Err(ReplyError::NotJson(_))));
    }

    #[test]
    fn parse_is_identity_on_rendered_reply() {
        let captions = vec!["one".to_string(), "two words".to_string(), "tr\"icky".to_string()];
        let reply = serde_json::json!({ "descriptions": captions }).to_string();
        assert_eq!(parse_descriptions(&reply).unwrap(), captions);
    }

    #[test]
    fn seven_prompts_in_two_calls() {
        let llm = SeededLlm { calls: AtomicUsize::new(0) };
        let out = generate_prompts(&llm, &landscapes(), &request(7, 5)).unwrap();
        assert_eq!(out.len(), 7);
        assert_eq!(llm.calls.load(Ordering::SeqCst), 2);
        for (i, p) in out.iter().enumerate() {
            assert_eq!(p.category, Category::NaturalLandscapes);
            assert_eq!(p.word_count, p.text.split_whitespace().count());
            assert_eq!(p.prompt_id, prompt_id(Category::NaturalLandscapes, i));
        }
    }

    #[test]
    fn zero_count_is_rejected() {
        let llm = SeededLlm { calls: AtomicUsize::new(0) };
        assert!(matches!(generate_prompts(&llm, &landscapes(), &request(0, 5)), Err(PromptError::BadCount(0))));
        assert_eq!(llm.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn overage_is_truncated() {
        let llm = ConstLlm(r#"{"descriptions":["a","b","c","d"]}"#);
        let out = generate_prompts(&llm, &landscapes(), &request(2, 2)).unwrap();
        assert_eq!(out.iter().map(|p| p.text.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn duplicates_and_exemplar_repeats_are_dropped() {
        let reply = serde_json::json!({ "descriptions": ["A  Cat", "a cat", NATURAL_LANDSCAPE_EXEMPLARS[0], "dog"] }).to_string();
        let llm = ConstLlm(Box::leak(reply.into_boxed_str()));
        let out = generate_prompts(&llm, &landscapes(), &request(2, 10)).unwrap();
        assert_eq!(out.iter().map(|p| p.text.as_str()).collect::<Vec<_>>(), vec!["A  Cat", "dog"]);
    }

    #[test]
    fn persistent_shortfall_is_an_error() {
        let llm = ConstLlm(r#"{"descriptions":["same"]}"#);
        assert!(matches!(generate_prompts(&llm, &landscapes(), &request(3, 10)), Err(PromptError::Shortfall { got: 1, .. })));
    }

    #[test]
    fn persistent_parse_failure_lists_batches() {
        let llm = ConstLlm("not json at all");
        match generate_prompts(&llm, &landscapes(), &request(4, 2)) {
            Err(PromptError::Batches { failures, .. }) => {
                assert_eq!(failures.iter().map(|f| f.0).collect::<Vec<_>>(), vec![0, 1]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exemplar_files_load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ExemplarSet::load(Some(dir.path()), Category::Animals), Err(PromptError::MissingExemplars(_))));
        assert_eq!(ExemplarSet::load(None, Category::NaturalLandscapes).unwrap(), landscapes());

        let set = ExemplarSet {
            category: Category::Animals,
            examples: (0..5).map(|i| format!("animal {i}")).collect(),
            theme: None,
            subject: None,
        };
        fs::write(dir.path().join("animals.json"), serde_json::to_string(&set).unwrap()).unwrap();
        let loaded = ExemplarSet::load(Some(dir.path()), Category::Animals).unwrap();
        assert_eq!(loaded, set);
        let ins = build_prompt_instruction(&loaded, 3).unwrap();
        assert!(ins.rendered.contains("theme \"Animals\""));

        fs::write(dir.path().join("plants.json"), serde_json::to_string(&set).unwrap()).unwrap();
        assert!(matches!(ExemplarSet::load(Some(dir.path()), Category::Plants), Err(PromptError::ExemplarFile { .. })));
    }
}
