//! Hash-seeded mock backends.
//!
//! Every output is a pure function of the inputs through SHA-256, so mocks
//! agree across processes and platforms.

use std::io::Cursor;

use agfsync_core::backend::{
    AestheticBackend, BackendError, EmbedBackend, EmbedPayload, Embedding, JudgeBackend, LlmBackend, T2iBackend,
    VqaBackend,
};
use agfsync_core::hashing::hash_u64;
use agfsync_core::model::ElementType;
use agfsync_core::qa::QA_TEXT_MARKER;
use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

pub const MOCK_LLM_ID: &str = "mock-llm";
pub const DEFAULT_EMBED_DIM: usize = 64;
const EMBED_OFFSET: f64 = 1.0;
pub const DEFAULT_QUANTUM: f64 = 0.25;
pub const DEFAULT_IMAGE_SIZE: u32 = 16;
/// Entries per QA reply; at least the fifteen the instruction asks for.
pub const QA_ENTRIES: usize = 16;

fn rng_for(parts: &[&[u8]]) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(hash_u64(parts))
}

const ADJECTIVES: [&str; 16] = [
    "misty", "golden", "quiet", "vivid", "ancient", "crimson", "towering", "gentle", "weathered", "luminous", "frozen",
    "verdant", "rugged", "serene", "sunlit", "shadowed",
];
const NOUNS: [&str; 16] = [
    "river", "tower", "garden", "bridge", "harbor", "meadow", "lantern", "forest", "market", "cliff", "orchard", "canyon",
    "village", "lighthouse", "glacier", "courtyard",
];
const PLACES: [&str; 12] = [
    "valley", "coastline", "hillside", "plaza", "lake", "plateau", "island", "street", "desert", "field", "shore", "ridge",
];
const DETAILS: [&str; 12] = [
    "with birds circling overhead",
    "under a pale blue sky",
    "surrounded by tall grass",
    "as evening light fades",
    "beside a winding stone path",
    "with red flowers in bloom",
    "while rain begins to fall",
    "beneath drifting clouds",
    "with three wooden boats nearby",
    "as fog rolls in from the sea",
    "with snow on distant peaks",
    "lit by scattered lanterns",
];
const QUESTION_FORMS: [&str; 4] =
    ["Is there a {} in the image?", "Does the image show {}?", "Is {} visible in the picture?", "Does the scene include {}?"];
const STOPWORDS: [&str; 14] =
    ["a", "an", "the", "of", "with", "in", "on", "as", "by", "to", "and", "under", "from", "while"];

/// Replies to caption requests ("Generate N descriptions.") with N captions
/// and to QA requests (instructions containing the caption marker) with a
/// list of yes-questions about the caption's words.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm;

impl MockLlm {
    fn requested_count(instruction: &str) -> Option<usize> {
        instruction.split("Generate ").skip(1).find_map(|rest| {
            let (n, tail) = rest.split_once(' ')?;
            tail.starts_with("descriptions.").then(|| n.parse().ok()).flatten()
        })
    }

    fn category_hint(instruction: &str) -> String {
        instruction
            .split("atmosphere of various ")
            .nth(1)
            .and_then(|s| s.split('.').next())
            .unwrap_or("scenes")
            .to_string()
    }

    fn descriptions(instruction: &str, seed: u64, n: usize) -> String {
        let mut rng = rng_for(&[b"llm-desc", instruction.as_bytes(), &seed.to_le_bytes()]);
        let hint = Self::category_hint(instruction);
        let list: Vec<String> = (0..n)
            .map(|_| {
                let pick = |rng: &mut ChaCha20Rng, xs: &[&'static str]| xs[rng.random_range(0..xs.len())];
                let mut s = format!(
                    "A {} {} near a {} {}",
                    pick(&mut rng, &ADJECTIVES),
                    pick(&mut rng, &NOUNS),
                    pick(&mut rng, &ADJECTIVES),
                    pick(&mut rng, &PLACES)
                );
                for _ in 0..rng.random_range(0..3) {
                    s.push_str(", ");
                    s.push_str(pick(&mut rng, &DETAILS));
                }
                s.push_str(&format!(", a study of {hint}."));
                s
            })
            .collect();
        json!({ "descriptions": list }).to_string()
    }

    fn questions(caption: &str, instruction: &str, seed: u64) -> String {
        let mut rng = rng_for(&[b"llm-qa", instruction.as_bytes(), &seed.to_le_bytes()]);
        let mut words: Vec<String> = caption
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
            .filter(|w| !STOPWORDS.contains(&w.as_str()))
            .collect();
        words.dedup();
        if words.is_empty() {
            words.push("scene".into());
        }
        let entries: Vec<_> = (0..QA_ENTRIES)
            .map(|i| {
                let element = &words[rng.random_range(0..words.len())];
                let form = QUESTION_FORMS[rng.random_range(0..QUESTION_FORMS.len())];
                let kind = ElementType::ALL[rng.random_range(0..ElementType::ALL.len())];
                let flag = u8::from(rng.random_range(0..8) != 0);
                json!({
                    "question_id": i + 1,
                    "question": form.replace("{}", element),
                    "answer": "yes",
                    "element_type": kind.name(),
                    "element": element,
                    "flag": flag,
                })
            })
            .collect();
        serde_json::Value::Array(entries).to_string()
    }
}

impl LlmBackend for MockLlm {
    fn id(&self) -> String {
        MOCK_LLM_ID.into()
    }

    fn complete(&self, instruction: &str, seed: u64) -> Result<String, BackendError> {
        if let Some(pos) = instruction.rfind(QA_TEXT_MARKER) {
            let caption = instruction[pos + QA_TEXT_MARKER.len()..].trim();
            return Ok(Self::questions(caption, instruction, seed));
        }
        if let Some(n) = Self::requested_count(instruction) {
            return Ok(Self::descriptions(instruction, seed, n));
        }
        Ok("I can only write descriptions or questions.".into())
    }
}

/// Small PNG whose pixels depend on the condition rounded down to multiples
/// of `quantum` and on the latent seed, so nearby conditions in one cell give
/// the same image.
#[derive(Debug, Clone, Copy)]
pub struct MockT2i {
    pub quantum: f64,
    pub size: u32,
}

impl Default for MockT2i {
    fn default() -> Self {
        MockT2i { quantum: DEFAULT_QUANTUM, size: DEFAULT_IMAGE_SIZE }
    }
}

impl MockT2i {
    pub fn cell(&self, condition: &Embedding) -> Vec<i64> {
        condition.values().iter().map(|v| (v / self.quantum).floor() as i64).collect()
    }
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

impl T2iBackend for MockT2i {
    fn generate(&self, condition: &Embedding, latent_seed: u64) -> Result<Vec<u8>, BackendError> {
        let cell: Vec<u8> = self.cell(condition).iter().flat_map(|c| c.to_le_bytes()).collect();
        let mut rng = rng_for(&[b"t2i", &cell, &latent_seed.to_le_bytes()]);
        let img = RgbImage::from_fn(self.size, self.size, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
        Ok(encode_png(&img))
    }
}

/// "yes" when the hash of (image, question) is even, otherwise "no".
#[derive(Debug, Clone, Copy, Default)]
pub struct MockVqa;

impl VqaBackend for MockVqa {
    fn answer(&self, image: &[u8], question: &str) -> Result<String, BackendError> {
        let h = hash_u64(&[b"vqa", image, question.as_bytes()]);
        Ok(if h.is_multiple_of(2) { "yes" } else { "no" }.into())
    }
}

/// Unit vector of dimension `dim` drawn from the payload's hash.
#[derive(Debug, Clone, Copy)]
pub struct MockEmbed {
    pub dim: usize,
}

impl Default for MockEmbed {
    fn default() -> Self {
        MockEmbed { dim: DEFAULT_EMBED_DIM }
    }
}

impl EmbedBackend for MockEmbed {
    fn embed(&self, payload: EmbedPayload<'_>) -> Result<Embedding, BackendError> {
        let (tag, bytes): (&[u8], &[u8]) = match payload {
            EmbedPayload::Text(t) => (b"text", t.as_bytes()),
            EmbedPayload::Image(b) => (b"image", b),
        };
        let mut rng = rng_for(&[b"embed", tag, bytes]);
        // Shared offset so text and image vectors point into the same cone,
        // like real joint embeddings.
        let raw: Vec<f64> = (0..self.dim).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); EMBED_OFFSET + z }).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        Embedding::new(raw.into_iter().map(|v| v / norm).collect())
    }
}

/// Score in `[0, 1)` from the image hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockAesthetic;

impl AestheticBackend for MockAesthetic {
    fn rate(&self, image: &[u8]) -> Result<f64, BackendError> {
        Ok((hash_u64(&[b"aesthetic", image]) >> 11) as f64 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JudgeMode {
    /// Choice by parity of the hash of the whole request.
    #[default]
    Parity,
    /// Prefers the image with the larger per-image hash, so swapping the
    /// images swaps the choice.
    PositionInvariant,
}

impl std::str::FromStr for JudgeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parity" => Ok(JudgeMode::Parity),
            "position-invariant" => Ok(JudgeMode::PositionInvariant),
            other => Err(format!("unknown judge mode `{other}` (parity, position-invariant)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockJudge {
    pub mode: JudgeMode,
}

impl JudgeBackend for MockJudge {
    fn judge(&self, instruction: &str, image_a: &[u8], image_b: &[u8]) -> Result<String, BackendError> {
        let pick_a = match self.mode {
            JudgeMode::Parity => hash_u64(&[b"judge", instruction.as_bytes(), image_a, image_b]).is_multiple_of(2),
            JudgeMode::PositionInvariant => {
                let score = |img: &[u8]| hash_u64(&[b"judge-one", instruction.as_bytes(), img]);
                score(image_a) >= score(image_b)
            }
        };
        let choice = if pick_a { "A" } else { "B" };
        Ok(json!({ "reason": "mock judgement", "choice": choice }).to_string())
    }
}
