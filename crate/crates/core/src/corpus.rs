//! Meme records, prompt construction and the synthetic trigger corpus.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_rng, stage};

/// Binary meme label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "hateful")]
    Hateful,
    #[serde(rename = "not_hateful")]
    NonHateful,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Hateful, Label::NonHateful];

    /// Canonical lowercase rendering used by the output grammar.
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hateful => "hateful",
            Label::NonHateful => "not_hateful",
        }
    }

    /// Index into two-class tables: hateful 0, not hateful 1.
    pub fn index(self) -> usize {
        match self {
            Label::Hateful => 0,
            Label::NonHateful => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = ();

    /// Case-insensitive; accepts exactly the two canonical spellings.
    fn from_str(s: &str) -> Result<Self, ()> {
        if s.eq_ignore_ascii_case("hateful") {
            Ok(Label::Hateful)
        } else if s.eq_ignore_ascii_case("not_hateful") {
            Ok(Label::NonHateful)
        } else {
            Err(())
        }
    }
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                $(if s.eq_ignore_ascii_case($text) {
                    return Ok($name::$variant);
                })+
                Err(())
            }
        }
    };
}

string_enum! {
    /// Protected characteristic targeted by a hateful meme.
    ProtectedCategory {
        Religion => "religion",
        Race => "race",
        Sex => "sex",
        Disability => "disability",
        Nationality => "nationality",
    }
}

string_enum! {
    /// Form of attack used by a hateful meme.
    AttackType {
        Dehumanizing => "dehumanizing",
        Inferiority => "inferiority",
        IncitingViolence => "inciting_violence",
        Mocking => "mocking",
        Contempt => "contempt",
        Slurs => "slurs",
        Exclusion => "exclusion",
    }
}

string_enum! {
    Split {
        Train => "train",
        Dev => "dev",
        Test => "test",
    }
}

impl Split {
    pub fn index(self) -> usize {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Test => 2,
        }
    }
}

/// One meme instance with its gold supervision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemeRecord {
    pub id: String,
    /// Opaque image path. Never opened by the text-only pipeline.
    pub image_ref: String,
    pub ocr_text: String,
    pub label: Label,
    pub protected_categories: BTreeSet<ProtectedCategory>,
    pub attack_types: BTreeSet<AttackType>,
    pub gold_explanation: String,
    pub cot_trace: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("record {id}: non-hateful record carries fine-grained labels")]
    FineGrainedOnNonHateful { id: String },
    #[error("record {id}: empty gold explanation")]
    EmptyExplanation { id: String },
    #[error("record has an empty id")]
    EmptyId,
}

impl MemeRecord {
    /// Checks the per-record invariants.
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.id.is_empty() {
            return Err(RecordError::EmptyId);
        }
        if self.label == Label::NonHateful
            && (!self.protected_categories.is_empty() || !self.attack_types.is_empty())
        {
            return Err(RecordError::FineGrainedOnNonHateful { id: self.id.clone() });
        }
        if self.gold_explanation.trim().is_empty() {
            return Err(RecordError::EmptyExplanation { id: self.id.clone() });
        }
        Ok(())
    }
}

/// Label counts for one split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub hateful: usize,
    pub non_hateful: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.hateful + self.non_hateful
    }
}

/// Per-split, per-label counts, indexed by [`Split::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub splits: [LabelCounts; 3],
}

impl CorpusStats {
    pub fn split(&self, split: Split) -> LabelCounts {
        self.splits[split.index()]
    }

    pub fn total(&self) -> usize {
        self.splits.iter().map(LabelCounts::total).sum()
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<6} {:>7}  {:>11}  {:>5}", "split", "hateful", "not_hateful", "total")?;
        for split in Split::ALL {
            let c = self.split(*split);
            writeln!(f, "{:<6} {:>7}  {:>11}  {:>5}", split.as_str(), c.hateful, c.non_hateful, c.total())?;
        }
        writeln!(f, "{:<6} {:>7}  {:>11}  {:>5}", "all",
            self.splits.iter().map(|c| c.hateful).sum::<usize>(),
            self.splits.iter().map(|c| c.non_hateful).sum::<usize>(),
            self.total())
    }
}

pub fn corpus_stats(records: &[MemeRecord]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for r in records {
        let c = &mut stats.splits[r.split.index()];
        match r.label {
            Label::Hateful => c.hateful += 1,
            Label::NonHateful => c.non_hateful += 1,
        }
    }
    stats
}

// ---------------------------------------------------------------------------
// Prompts

/// Versioned classification guidelines shipped with the crate.
pub const GUIDELINES_V1: &str = include_str!("../resources/guidelines_v1.txt");

pub const TEMPLATE_INSTRUCT_V1: &str = "instruct_v1";
pub const KNOWN_TEMPLATES: &[&str] = &[TEMPLATE_INSTRUCT_V1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptContext {
    pub guidelines: String,
    pub include_fine_grained: bool,
    pub template_id: String,
}

impl Default for PromptContext {
    fn default() -> Self {
        Self {
            guidelines: GUIDELINES_V1.trim().to_string(),
            include_fine_grained: true,
            template_id: TEMPLATE_INSTRUCT_V1.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("guidelines text is empty")]
    EmptyGuidelines,
}

fn join_names<T: Copy + fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// Renders the instruction prompt for `record`.
///
/// Only the OCR text of the record is read; gold labels, explanations and
/// reasoning traces never reach the prompt.
pub fn build_prompt(record: &MemeRecord, ctx: &PromptContext) -> Result<String, PromptError> {
    if !KNOWN_TEMPLATES.contains(&ctx.template_id.as_str()) {
        return Err(PromptError::UnknownTemplate(ctx.template_id.clone()));
    }
    if ctx.guidelines.trim().is_empty() {
        return Err(PromptError::EmptyGuidelines);
    }
    let mut out = String::new();
    out.push_str("Classify the meme as hateful or not hateful.\n\nGuidelines:\n");
    out.push_str(ctx.guidelines.trim());
    out.push('\n');
    if ctx.include_fine_grained {
        out.push_str("\nProtected categories: ");
        out.push_str(&join_names(ProtectedCategory::ALL));
        out.push_str("\nAttack types: ");
        out.push_str(&join_names(AttackType::ALL));
        out.push('\n');
    }
    out.push_str("\nMeme text:\n");
    out.push_str(&record.ocr_text);
    out.push_str(
        "\n\nReason privately inside <think></think>, then answer on two lines:\n\
         Label: hateful or not_hateful\nExplanation: a short rationale",
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// Words used by the synthetic explanation and reasoning templates.
pub const TEMPLATE_WORDS: &[&str] = &[
    "the", "text", "uses", "slur", "to", "demean", "a", "protected", "group", "no", "or",
    "attack", "appears", "so", "is", "benign", "scan", "find", "which", "targets", "trigger",
    "word",
];

/// Fine-grained label words appended to explanations by the fine-grained SFT variants.
pub fn fine_grained_words() -> impl Iterator<Item = &'static str> {
    ProtectedCategory::ALL
        .iter()
        .map(|c| c.as_str())
        .chain(AttackType::ALL.iter().map(|a| a.as_str()))
}

pub fn synthetic_explanation(trigger: Option<&str>) -> String {
    match trigger {
        Some(t) => format!("the text uses the slur {t} to demean a protected group"),
        None => "no slur or attack appears so the text is benign".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Total vocabulary size of the matching toy policy, structural tokens included.
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub trigger_tokens: Vec<String>,
    pub hateful_ratio: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            n_train: 200,
            n_dev: 50,
            n_test: 50,
            trigger_tokens: ["zorp", "blick", "fermo", "quazz", "vindle", "traxo", "mulp", "grendo"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            hateful_ratio: 0.5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic corpus config: {0}")]
    InvalidConfig(String),
}

/// Smallest filler-word pool that still gives varied OCR texts.
pub const MIN_FILLER_WORDS: usize = 4;
pub const MAX_VOCAB_SIZE: usize = 256;

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return bad("split sizes must be positive".into());
        }
        if !(self.hateful_ratio > 0.0 && self.hateful_ratio < 1.0) {
            return bad(format!("hateful_ratio {} is outside (0, 1)", self.hateful_ratio));
        }
        if self.trigger_tokens.is_empty() {
            return bad("at least one trigger token is required".into());
        }
        let reserved: BTreeSet<&str> = crate::policy::STRUCTURAL_TOKENS
            .iter()
            .copied()
            .chain(TEMPLATE_WORDS.iter().copied())
            .chain(fine_grained_words())
            .collect();
        let mut seen = BTreeSet::new();
        for t in &self.trigger_tokens {
            if t.is_empty() || t.chars().any(|c| c.is_whitespace() || !c.is_alphanumeric()) {
                return bad(format!("trigger `{t}` must be a single alphanumeric word"));
            }
            if reserved.contains(t.as_str()) || t.starts_with("filler") {
                return bad(format!("trigger `{t}` collides with a reserved word"));
            }
            if !seen.insert(t.as_str()) {
                return bad(format!("duplicate trigger `{t}`"));
            }
        }
        let fixed = reserved.len() + self.trigger_tokens.len();
        if self.vocab_size < fixed + MIN_FILLER_WORDS || self.vocab_size > MAX_VOCAB_SIZE {
            return bad(format!(
                "vocab_size {} must lie in [{}, {}]",
                self.vocab_size,
                fixed + MIN_FILLER_WORDS,
                MAX_VOCAB_SIZE
            ));
        }
        Ok(())
    }

    /// Content words that are neither structural, template nor trigger tokens.
    pub fn filler_words(&self) -> Vec<String> {
        let fixed = crate::policy::STRUCTURAL_TOKENS.len()
            + TEMPLATE_WORDS.len()
            + fine_grained_words().count()
            + self.trigger_tokens.len();
        (0..self.vocab_size.saturating_sub(fixed))
            .map(|i| format!("filler{i:02}"))
            .collect()
    }

    /// Full ordered vocabulary of the toy policy trained on this corpus.
    pub fn vocabulary_words(&self) -> Vec<String> {
        crate::policy::STRUCTURAL_TOKENS
            .iter()
            .copied()
            .chain(TEMPLATE_WORDS.iter().copied())
            .chain(fine_grained_words())
            .map(String::from)
            .chain(self.trigger_tokens.iter().cloned())
            .chain(self.filler_words())
            .collect()
    }
}

/// Generates train, dev and test records.
///
/// A record is hateful iff its OCR text contains a trigger word. Each split
/// holds exactly `round(n * hateful_ratio)` hateful records at positions
/// chosen by a seeded shuffle. Hateful records carry exactly one trigger and
/// fine-grained labels determined by which trigger it is.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<MemeRecord>, SynthError> {
    config.validate()?;
    let filler = config.filler_words();
    let mut out = Vec::with_capacity(config.n_train + config.n_dev + config.n_test);
    for (split, n) in [
        (Split::Train, config.n_train),
        (Split::Dev, config.n_dev),
        (Split::Test, config.n_test),
    ] {
        let mut rng = derive_rng(config.seed, &[stage::SYNTH, split.index() as u64]);
        let n_hateful = libm::round(n as f64 * config.hateful_ratio) as usize;
        let mut labels: Vec<bool> = (0..n).map(|i| i < n_hateful).collect();
        labels.shuffle(&mut rng);
        for (i, hateful) in labels.into_iter().enumerate() {
            let id = format!("{split}-{i:05}");
            let len = rng.gen_range(4..=8);
            let mut words: Vec<&str> =
                (0..len).map(|_| filler[rng.gen_range(0..filler.len())].as_str()).collect();
            let mut record = MemeRecord {
                image_ref: format!("synthetic/{id}.png"),
                id,
                ocr_text: String::new(),
                label: Label::NonHateful,
                protected_categories: BTreeSet::new(),
                attack_types: BTreeSet::new(),
                gold_explanation: synthetic_explanation(None),
                cot_trace: None,
                split,
            };
            if hateful {
                let t = rng.gen_range(0..config.trigger_tokens.len());
                let trigger = config.trigger_tokens[t].as_str();
                let at = rng.gen_range(0..=words.len());
                words.insert(at, trigger);
                record.label = Label::Hateful;
                record
                    .protected_categories
                    .insert(ProtectedCategory::ALL[t % ProtectedCategory::ALL.len()]);
                record.attack_types.insert(AttackType::ALL[t % AttackType::ALL.len()]);
                record.gold_explanation = synthetic_explanation(Some(trigger));
            }
            record.ocr_text = words.join(" ");
            out.push(record);
        }
    }
    Ok(out)
}

/// First trigger word present in `text`, if any.
pub fn find_trigger<'a>(text: &str, triggers: &'a [String]) -> Option<&'a str> {
    text.split_whitespace()
        .find_map(|w| triggers.iter().find(|t| t.as_str() == w))
        .map(String::as_str)
}
