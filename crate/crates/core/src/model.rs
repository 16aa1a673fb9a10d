//! Shared domain types and the weighted-score primitive.
//!
//! The JSON encodings produced by the serde derives here are the line format
//! of every JSONL stage file, so field names must not change.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tolerance for "weights sum to one".
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("score `{field}` = {value} is outside [0, 100]")]
    ScoreOutOfRange { field: &'static str, value: f64 },
    #[error("weight `{field}` = {value} is negative or not finite")]
    NegativeWeight { field: &'static str, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightSum { sum: f64 },
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("word_count {stated} does not match text ({actual} tokens)")]
    WordCount { stated: usize, actual: usize },
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown element type `{0}`")]
    UnknownElementType(String),
    #[error("winner and loser are the same candidate `{0}`")]
    SelfPair(String),
    #[error("negative margin {0}")]
    NegativeMargin(f64),
}

/// The twelve caption categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    NaturalLandscapes,
    CitiesAndArchitecture,
    People,
    Animals,
    Plants,
    FoodAndBeverages,
    SportsAndFitness,
    ArtAndCulture,
    TechnologyAndIndustry,
    EverydayObjects,
    Transportation,
    AbstractAndConceptualArt,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::NaturalLandscapes,
        Category::CitiesAndArchitecture,
        Category::People,
        Category::Animals,
        Category::Plants,
        Category::FoodAndBeverages,
        Category::SportsAndFitness,
        Category::ArtAndCulture,
        Category::TechnologyAndIndustry,
        Category::EverydayObjects,
        Category::Transportation,
        Category::AbstractAndConceptualArt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::NaturalLandscapes => "Natural Landscapes",
            Category::CitiesAndArchitecture => "Cities and Architecture",
            Category::People => "People",
            Category::Animals => "Animals",
            Category::Plants => "Plants",
            Category::FoodAndBeverages => "Food and Beverages",
            Category::SportsAndFitness => "Sports and Fitness",
            Category::ArtAndCulture => "Art and Culture",
            Category::TechnologyAndIndustry => "Technology and Industry",
            Category::EverydayObjects => "Everyday Objects",
            Category::Transportation => "Transportation",
            Category::AbstractAndConceptualArt => "Abstract and Conceptual Art",
        }
    }

    /// snake_case identifier, used for file names and prompt ids.
    pub fn slug(self) -> &'static str {
        match self {
            Category::NaturalLandscapes => "natural_landscapes",
            Category::CitiesAndArchitecture => "cities_and_architecture",
            Category::People => "people",
            Category::Animals => "animals",
            Category::Plants => "plants",
            Category::FoodAndBeverages => "food_and_beverages",
            Category::SportsAndFitness => "sports_and_fitness",
            Category::ArtAndCulture => "art_and_culture",
            Category::TechnologyAndIndustry => "technology_and_industry",
            Category::EverydayObjects => "everyday_objects",
            Category::Transportation => "transportation",
            Category::AbstractAndConceptualArt => "abstract_and_conceptual_art",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = ValidationError;

    /// Accepts either the display name or the slug.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s) || c.slug() == s)
            .ok_or_else(|| ValidationError::UnknownCategory(s.to_string()))
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// What a verification question asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Object,
    Human,
    Animal,
    Food,
    Activity,
    Attribute,
    Counting,
    Color,
    Material,
    Spatial,
    Location,
    Shape,
    Other,
}

impl ElementType {
    pub const ALL: [ElementType; 13] = [
        ElementType::Object,
        ElementType::Human,
        ElementType::Animal,
        ElementType::Food,
        ElementType::Activity,
        ElementType::Attribute,
        ElementType::Counting,
        ElementType::Color,
        ElementType::Material,
        ElementType::Spatial,
        ElementType::Location,
        ElementType::Shape,
        ElementType::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ElementType::Object => "object",
            ElementType::Human => "human",
            ElementType::Animal => "animal",
            ElementType::Food => "food",
            ElementType::Activity => "activity",
            ElementType::Attribute => "attribute",
            ElementType::Counting => "counting",
            ElementType::Color => "color",
            ElementType::Material => "material",
            ElementType::Spatial => "spatial",
            ElementType::Location => "location",
            ElementType::Shape => "shape",
            ElementType::Other => "other",
        }
    }
}

impl FromStr for ElementType {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        ElementType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ValidationError::UnknownElementType(s.to_string()))
    }
}

/// Content address of a stored image (lowercase hex SHA-256 of its bytes).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        ImageRef(crate::hashing::sha256_hex(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// One LLM-generated image caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub category: Category,
    pub text: String,
    pub word_count: usize,
    pub source_model: String,
    pub created_at: DateTime<Utc>,
}

impl PromptRecord {
    pub fn new(
        prompt_id: impl Into<String>,
        category: Category,
        text: impl Into<String>,
        source_model: impl Into<String>,
        created_at: DateTime<Utc>,
    ) -> Result<Self, ValidationError> {
        let text = text.into();
        let record = PromptRecord {
            prompt_id: prompt_id.into(),
            category,
            word_count: word_count(&text),
            text,
            source_model: source_model.into(),
            created_at,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyPrompt);
        }
        let actual = word_count(&self.text);
        if actual != self.word_count {
            return Err(ValidationError::WordCount { stated: self.word_count, actual });
        }
        Ok(())
    }
}

/// One yes-answer verification question derived from a caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question_id: u32,
    pub question: String,
    pub answer: String,
    pub element_type: ElementType,
    pub element: String,
    pub flag: u8,
}

impl QAPair {
    pub fn is_valid(&self) -> bool {
        self.flag == 1 && self.answer == "yes" && !self.question.trim().is_empty()
    }
}

/// Per-aspect scores, all on the 0..=100 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub s_vqa: f64,
    pub s_clip: f64,
    pub s_aes: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_pick: Option<f64>,
}

impl ScoreVector {
    pub fn new(s_vqa: f64, s_clip: f64, s_aes: f64) -> Self {
        ScoreVector { s_vqa, s_clip, s_aes, s_pick: None }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let fields = [("s_vqa", Some(self.s_vqa)), ("s_clip", Some(self.s_clip)), ("s_aes", Some(self.s_aes)), ("s_pick", self.s_pick)];
        for (field, value) in fields {
            if let Some(value) = value {
                if !(0.0..=100.0).contains(&value) {
                    return Err(ValidationError::ScoreOutOfRange { field, value });
                }
            }
        }
        Ok(())
    }
}

/// Convex weights over the three scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub w_vqa: f64,
    pub w_clip: f64,
    pub w_aes: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { w_vqa: 0.35, w_clip: 0.55, w_aes: 0.1 }
    }
}

impl WeightConfig {
    pub fn new(w_vqa: f64, w_clip: f64, w_aes: f64) -> Result<Self, ValidationError> {
        let w = WeightConfig { w_vqa, w_clip, w_aes };
        validate_weights(&w)?;
        Ok(w)
    }
}

/// Accepts iff every weight is finite and nonnegative and they sum to one
/// within [`WEIGHT_SUM_TOLERANCE`].
pub fn validate_weights(weights: &WeightConfig) -> Result<(), ValidationError> {
    for (field, value) in [("w_vqa", weights.w_vqa), ("w_clip", weights.w_clip), ("w_aes", weights.w_aes)] {
        if !value.is_finite() || value < 0.0 {
            return Err(ValidationError::NegativeWeight { field, value });
        }
    }
    let sum = weights.w_vqa + weights.w_clip + weights.w_aes;
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(ValidationError::WeightSum { sum });
    }
    Ok(())
}

/// Weighted composite score `w_vqa*s_vqa + w_clip*s_clip + w_aes*s_aes`.
///
/// `s_pick` is never weighted. The result is clamped into `[0, 100]` to absorb
/// rounding in the last ulp.
pub fn weighted_score(scores: &ScoreVector, weights: &WeightConfig) -> Result<f64, ValidationError> {
    validate_weights(weights)?;
    scores.validate()?;
    let s = weights.w_vqa * scores.s_vqa + weights.w_clip * scores.s_clip + weights.w_aes * scores.s_aes;
    Ok(s.clamp(0.0, 100.0))
}

/// One generated candidate image for a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateImage {
    pub candidate_id: String,
    pub prompt_id: String,
    pub seed: u64,
    pub noise_sigma: f64,
    pub image_ref: ImageRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted: Option<f64>,
}

/// A winner/loser pair for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub winner: String,
    pub loser: String,
    pub winner_score: f64,
    pub loser_score: f64,
    pub margin: f64,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.winner == self.loser {
            return Err(ValidationError::SelfPair(self.winner.clone()));
        }
        if self.margin < 0.0 {
            return Err(ValidationError::NegativeMargin(self.margin));
        }
        Ok(())
    }
}
