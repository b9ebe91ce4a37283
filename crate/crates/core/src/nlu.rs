//! Deterministic natural-language understanding.
//!
//! Intents are scored by Jaccard overlap between the utterance's token set
//! and each training example's token set. Anchored wildcard patterns force a
//! score of 1.0. Entities come from longest-match gazetteer lookup over token
//! n-grams.
//!
//! Pattern syntax: whitespace-separated literal tokens, `*`, which matches
//! one or more tokens, and `@type`, which matches any surface form listed in
//! the gazetteer for that entity type. Literals are normalized with
//! [`tokenize`], so `"* don't like *"` matches `"i dont like sushi"` and
//! `"not @cuisine"` matches `"not Italian"`.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved intent name for utterances nothing matched well enough.
pub const OUT_OF_SCOPE: &str = "out_of_scope";

/// Default fallback threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

pub const CORPUS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum NluError {
    #[error("intent corpus is empty")]
    EmptySpecs,
    #[error("duplicate intent `{0}`")]
    DuplicateIntent(String),
    #[error("intent name `{0}` is reserved")]
    ReservedName(String),
    #[error("intent `{0}` has no examples or patterns")]
    NoTrainingData(String),
    #[error("intent `{intent}` has an example with no usable tokens: {example:?}")]
    EmptyExample { intent: String, example: String },
    #[error("intent `{intent}` has an invalid pattern: {pattern:?}")]
    InvalidPattern { intent: String, pattern: String },
    #[error("pattern {pattern:?} of intent `{intent}` names unknown entity type `{entity_type}`")]
    UnknownPatternEntity {
        intent: String,
        pattern: String,
        entity_type: String,
    },
    #[error("example {example:?} appears in both `{first}` and `{second}`")]
    ExampleClash {
        example: String,
        first: String,
        second: String,
    },
    #[error("duplicate gazetteer `{0}`")]
    DuplicateGazetteer(String),
    #[error("gazetteer `{entity_type}` has an empty surface form")]
    EmptySurfaceForm { entity_type: String },
    #[error("gazetteer `{entity_type}` lists surface form {surface:?} twice")]
    DuplicateSurfaceForm {
        entity_type: String,
        surface: String,
    },
    #[error("unsupported corpus schema_version {0}")]
    SchemaVersion(u32),
    #[error("threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("corpus parse error: {0}")]
    Parse(String),
}

/// Training unit for one intent.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IntentSpec {
    pub name: String,
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default)]
    pub patterns: Vec<String>,
    #[serde(default)]
    pub priority: i32,
}

impl IntentSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            examples: Vec::new(),
            patterns: Vec::new(),
            priority: 0,
        }
    }

    pub fn examples<I, S>(mut self, examples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.examples.extend(examples.into_iter().map(Into::into));
        self
    }

    pub fn patterns<I, S>(mut self, patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.patterns.extend(patterns.into_iter().map(Into::into));
        self
    }

    pub fn priority(mut self, priority: i32) -> Self {
        self.priority = priority;
        self
    }
}

/// Surface form to canonical value lookup for one entity type.
///
/// Entries are kept as an ordered list so duplicate surface forms in a corpus
/// file are reported instead of silently collapsed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Gazetteer {
    pub entity_type: String,
    pub entries: Vec<GazetteerEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GazetteerEntry {
    pub surface: String,
    pub value: String,
}

impl Gazetteer {
    pub fn new(entity_type: impl Into<String>) -> Self {
        Self {
            entity_type: entity_type.into(),
            entries: Vec::new(),
        }
    }

    pub fn entry(mut self, surface: impl Into<String>, value: impl Into<String>) -> Self {
        self.entries.push(GazetteerEntry {
            surface: surface.into(),
            value: value.into(),
        });
        self
    }

    /// Entries whose canonical value equals their surface form.
    pub fn identity<I, S>(entity_type: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut g = Self::new(entity_type);
        for v in values {
            let v = v.into();
            g = g.entry(v.clone(), v);
        }
        g
    }
}

/// A recognized entity; `start..end` indexes the utterance's tokens.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Entity {
    pub entity_type: String,
    pub value: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NluResult {
    pub text: String,
    pub intent: String,
    pub confidence: f64,
    pub entities: Vec<Entity>,
    pub is_fallback: bool,
}

impl NluResult {
    pub fn entities_of<'a, 'b>(
        &'a self,
        entity_type: &'b str,
    ) -> impl Iterator<Item = &'a Entity> + use<'a, 'b> {
        self.entities
            .iter()
            .filter(move |e| e.entity_type == entity_type)
    }

    pub fn first_entity(&self, entity_type: &str) -> Option<&str> {
        self.entities_of(entity_type)
            .next()
            .map(|e| e.value.as_str())
    }
}

/// Intent corpus document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub schema_version: u32,
    pub intents: Vec<IntentSpec>,
    #[serde(default)]
    pub gazetteers: Vec<Gazetteer>,
}

impl CorpusDocument {
    pub fn from_json(text: &str) -> Result<Self, NluError> {
        let doc: CorpusDocument =
            serde_json::from_str(text).map_err(|e| NluError::Parse(e.to_string()))?;
        if doc.schema_version != CORPUS_SCHEMA_VERSION {
            return Err(NluError::SchemaVersion(doc.schema_version));
        }
        Ok(doc)
    }
}

/// Lowercases, strips punctuation and drops apostrophes inside words.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if is_apostrophe(ch) {
            // "conference's" -> "conferences"
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn is_apostrophe(ch: char) -> bool {
    matches!(ch, '\'' | '\u{2019}' | '\u{2018}' | '`')
}

/// Entity types referenced by `@type` placeholders in a raw pattern.
pub fn pattern_entity_types(pattern: &str) -> impl Iterator<Item = &str> {
    pattern
        .split_whitespace()
        .filter_map(|w| w.strip_prefix('@'))
        .filter(|t| !t.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatternToken {
    Literal(String),
    Wildcard,
    Entity(String),
}

#[derive(Debug, Clone)]
struct Pattern {
    parts: Vec<PatternToken>,
}

impl Pattern {
    fn parse(raw: &str) -> Option<Self> {
        let mut parts = Vec::new();
        for word in raw.split_whitespace() {
            if word == "*" {
                if parts.last() != Some(&PatternToken::Wildcard) {
                    parts.push(PatternToken::Wildcard);
                }
                continue;
            }
            if let Some(entity_type) = word.strip_prefix('@') {
                if entity_type.is_empty() {
                    return None;
                }
                parts.push(PatternToken::Entity(entity_type.to_string()));
                continue;
            }
            for t in tokenize(word) {
                parts.push(PatternToken::Literal(t));
            }
        }
        if parts.iter().any(|p| !matches!(p, PatternToken::Wildcard)) {
            Some(Self { parts })
        } else {
            None
        }
    }

    fn matches(&self, tokens: &[String], gazetteers: &[CompiledGazetteer]) -> bool {
        match_from(&self.parts, tokens, gazetteers)
    }

    fn entity_types(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            PatternToken::Entity(t) => Some(t.as_str()),
            _ => None,
        })
    }
}

fn match_from(parts: &[PatternToken], tokens: &[String], gazetteers: &[CompiledGazetteer]) -> bool {
    match parts.split_first() {
        None => tokens.is_empty(),
        Some((PatternToken::Literal(lit), rest)) => {
            tokens.first() == Some(lit) && match_from(rest, &tokens[1..], gazetteers)
        }
        Some((PatternToken::Wildcard, rest)) => {
            (1..=tokens.len()).any(|skip| match_from(rest, &tokens[skip..], gazetteers))
        }
        Some((PatternToken::Entity(entity_type), rest)) => {
            let Some(gaz) = gazetteers.iter().find(|g| &g.entity_type == entity_type) else {
                return false;
            };
            (1..=gaz.max_len.min(tokens.len())).any(|len| {
                gaz.entries.contains_key(&tokens[..len])
                    && match_from(rest, &tokens[len..], gazetteers)
            })
        }
    }
}

#[derive(Debug, Clone)]
struct CompiledIntent {
    name: String,
    priority: i32,
    examples: Vec<HashSet<String>>,
    patterns: Vec<Pattern>,
}

#[derive(Debug, Clone)]
struct CompiledGazetteer {
    entity_type: String,
    entries: HashMap<Vec<String>, String>,
    max_len: usize,
}

/// Immutable compiled model; cheap to share across sessions.
#[derive(Debug, Clone)]
pub struct NluModel {
    intents: Vec<CompiledIntent>,
    gazetteers: Vec<CompiledGazetteer>,
    threshold: f64,
}

/// Builds a model with the default threshold.
pub fn compile_model(specs: &[IntentSpec], gazetteers: &[Gazetteer]) -> Result<NluModel, NluError> {
    NluModel::compile(specs, gazetteers, DEFAULT_THRESHOLD)
}

impl NluModel {
    pub fn compile(
        specs: &[IntentSpec],
        gazetteers: &[Gazetteer],
        threshold: f64,
    ) -> Result<Self, NluError> {
        if specs.is_empty() {
            return Err(NluError::EmptySpecs);
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(NluError::Threshold(threshold));
        }
        let mut names = HashSet::new();
        let mut seen_examples: HashMap<BTreeSet<String>, (String, String)> = HashMap::new();
        let mut intents = Vec::with_capacity(specs.len());
        for spec in specs {
            if spec.name == OUT_OF_SCOPE {
                return Err(NluError::ReservedName(spec.name.clone()));
            }
            if !names.insert(spec.name.as_str()) {
                return Err(NluError::DuplicateIntent(spec.name.clone()));
            }
            if spec.examples.is_empty() && spec.patterns.is_empty() {
                return Err(NluError::NoTrainingData(spec.name.clone()));
            }
            let mut examples = Vec::with_capacity(spec.examples.len());
            for example in &spec.examples {
                let set: BTreeSet<String> = tokenize(example).into_iter().collect();
                if set.is_empty() {
                    return Err(NluError::EmptyExample {
                        intent: spec.name.clone(),
                        example: example.clone(),
                    });
                }
                if let Some((owner, _)) = seen_examples.get(&set) {
                    if owner != &spec.name {
                        return Err(NluError::ExampleClash {
                            example: example.clone(),
                            first: owner.clone(),
                            second: spec.name.clone(),
                        });
                    }
                }
                seen_examples.insert(set.clone(), (spec.name.clone(), example.clone()));
                examples.push(set.into_iter().collect());
            }
            let patterns = spec
                .patterns
                .iter()
                .map(|p| {
                    Pattern::parse(p).ok_or_else(|| NluError::InvalidPattern {
                        intent: spec.name.clone(),
                        pattern: p.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            intents.push(CompiledIntent {
                name: spec.name.clone(),
                priority: spec.priority,
                examples,
                patterns,
            });
        }

        let mut types = HashSet::new();
        let mut compiled_gaz = Vec::with_capacity(gazetteers.len());
        for gaz in gazetteers {
            if !types.insert(gaz.entity_type.as_str()) {
                return Err(NluError::DuplicateGazetteer(gaz.entity_type.clone()));
            }
            let mut entries = HashMap::new();
            let mut max_len = 0;
            for entry in &gaz.entries {
                let key = tokenize(&entry.surface);
                if key.is_empty() {
                    return Err(NluError::EmptySurfaceForm {
                        entity_type: gaz.entity_type.clone(),
                    });
                }
                max_len = max_len.max(key.len());
                if entries.insert(key, entry.value.clone()).is_some() {
                    return Err(NluError::DuplicateSurfaceForm {
                        entity_type: gaz.entity_type.clone(),
                        surface: entry.surface.clone(),
                    });
                }
            }
            compiled_gaz.push(CompiledGazetteer {
                entity_type: gaz.entity_type.clone(),
                entries,
                max_len,
            });
        }

        for (intent, spec) in intents.iter().zip(specs) {
            for (pattern, raw) in intent.patterns.iter().zip(&spec.patterns) {
                if let Some(t) = pattern.entity_types().find(|t| !types.contains(t)) {
                    return Err(NluError::UnknownPatternEntity {
                        intent: spec.name.clone(),
                        pattern: raw.clone(),
                        entity_type: t.to_string(),
                    });
                }
            }
        }

        Ok(Self {
            intents,
            gazetteers: compiled_gaz,
            threshold,
        })
    }

    pub fn from_document(doc: &CorpusDocument, threshold: f64) -> Result<Self, NluError> {
        Self::compile(&doc.intents, &doc.gazetteers, threshold)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Same intents and gazetteers under a different fallback threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self, NluError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(NluError::Threshold(threshold));
        }
        Ok(Self {
            threshold,
            ..self.clone()
        })
    }

    pub fn intent_names(&self) -> impl Iterator<Item = &str> {
        self.intents.iter().map(|i| i.name.as_str())
    }

    pub fn entity_types(&self) -> impl Iterator<Item = &str> {
        self.gazetteers.iter().map(|g| g.entity_type.as_str())
    }

    /// Per-intent scores in model order.
    pub fn scores(&self, text: &str) -> Vec<(&str, f64)> {
        let tokens = tokenize(text);
        let set: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        self.intents
            .iter()
            .map(|intent| {
                (
                    intent.name.as_str(),
                    score_intent(intent, &tokens, &set, &self.gazetteers),
                )
            })
            .collect()
    }

    pub fn classify(&self, text: &str) -> NluResult {
        let tokens = tokenize(text);
        let set: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        let mut best: Option<(&CompiledIntent, f64)> = None;
        for intent in &self.intents {
            let score = score_intent(intent, &tokens, &set, &self.gazetteers);
            best = match best {
                None => Some((intent, score)),
                Some((cur, cur_score)) => {
                    if beats(intent, score, cur, cur_score) {
                        Some((intent, score))
                    } else {
                        Some((cur, cur_score))
                    }
                }
            };
        }
        let entities = self.extract_from_tokens(&tokens);
        let (winner, confidence) = best.map(|(i, s)| (i.name.as_str(), s)).unwrap_or(("", 0.0));
        if tokens.is_empty() || confidence < self.threshold {
            NluResult {
                text: text.to_string(),
                intent: OUT_OF_SCOPE.to_string(),
                confidence,
                entities,
                is_fallback: true,
            }
        } else {
            NluResult {
                text: text.to_string(),
                intent: winner.to_string(),
                confidence,
                entities,
                is_fallback: false,
            }
        }
    }

    pub fn extract_entities(&self, text: &str) -> Vec<Entity> {
        self.extract_from_tokens(&tokenize(text))
    }

    fn extract_from_tokens(&self, tokens: &[String]) -> Vec<Entity> {
        let longest = self.gazetteers.iter().map(|g| g.max_len).max().unwrap_or(0);
        let mut found = Vec::new();
        let mut start = 0;
        'outer: while start < tokens.len() {
            let max_here = longest.min(tokens.len() - start);
            for len in (1..=max_here).rev() {
                let span = &tokens[start..start + len];
                for gaz in &self.gazetteers {
                    if len > gaz.max_len {
                        continue;
                    }
                    if let Some(value) = gaz.entries.get(span) {
                        found.push(Entity {
                            entity_type: gaz.entity_type.clone(),
                            value: value.clone(),
                            start,
                            end: start + len,
                        });
                        start += len;
                        continue 'outer;
                    }
                }
            }
            start += 1;
        }
        found
    }
}

fn score_intent(
    intent: &CompiledIntent,
    tokens: &[String],
    set: &HashSet<&str>,
    gazetteers: &[CompiledGazetteer],
) -> f64 {
    if intent
        .patterns
        .iter()
        .any(|p| p.matches(tokens, gazetteers))
    {
        return 1.0;
    }
    intent
        .examples
        .iter()
        .map(|ex| jaccard(set, ex))
        .fold(0.0, f64::max)
}

fn jaccard(a: &HashSet<&str>, b: &HashSet<String>) -> f64 {
    let inter = b.iter().filter(|t| a.contains(t.as_str())).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Score, then priority, then the lexicographically smaller name.
fn beats(cand: &CompiledIntent, cand_score: f64, cur: &CompiledIntent, cur_score: f64) -> bool {
    if cand_score != cur_score {
        return cand_score > cur_score;
    }
    if cand.priority != cur.priority {
        return cand.priority > cur.priority;
    }
    cand.name < cur.name
}
