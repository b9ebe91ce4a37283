//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Set `CONCIERGE_BLESS=1` to rewrite the golden transcript instead of comparing.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeZone, Utc};
use concierge::admin::{self, AnalyticsReport, AnalyticsView};
use concierge::assistant::{AssistantData, SEED_CORPUS, SEED_PROGRAMME};
use concierge::gateway::{router, serve, ChannelKind, HubConfig};
use concierge::logstore::{
    conversation_length_histogram, load_dir, turns_per_skill, Direction, LogRecord, LogStore,
};
use concierge::nlu::{Gazetteer, DEFAULT_THRESHOLD, OUT_OF_SCOPE};
use concierge::profile::{qr_token, Consent, ProfileStore};
use concierge::skill_conference::{
    load_programme, next_session, recommend_session, ConferenceEvent, EventCategory,
    InterestProfile, Programme,
};
use concierge::skill_poi::{
    recommend, Catalog, Coordinates, PoiCategory, PoiItem, PoiPreferences, TransportMode,
    TransportOption,
};
use concierge::{ChannelDescriptor, DialogueEngine};
use futures::{SinkExt, StreamExt};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use regex::Regex;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- oracles

/// Reference tokenizer: lowercase, drop apostrophes, keep letter/digit runs.
fn oracle_tokens(text: &str) -> Vec<String> {
    static WORD: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let re = WORD.get_or_init(|| Regex::new(r"[\p{Alphabetic}\p{N}]+").unwrap());
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '\'' | '\u{2019}' | '\u{2018}' | '`'))
        .collect();
    re.find_iter(&lowered)
        .map(|m| m.as_str().to_string())
        .collect()
}

struct OracleIntent {
    name: String,
    priority: i64,
    examples: Vec<BTreeSet<String>>,
    patterns: Vec<Regex>,
}

/// `*` is one or more tokens; `@type` is any listed surface form of that type.
fn pattern_regex(pattern: &str, gazetteers: &[Gazetteer]) -> Regex {
    let mut parts = Vec::new();
    for word in pattern.split_whitespace() {
        if word == "*" {
            parts.push(r"\S+(?: \S+)*".to_string());
        } else if let Some(ty) = word.strip_prefix('@') {
            let surfaces: Vec<String> = gazetteers
                .iter()
                .filter(|g| g.entity_type == ty)
                .flat_map(|g| {
                    g.entries
                        .iter()
                        .map(|e| regex::escape(&oracle_tokens(&e.surface).join(" ")))
                })
                .collect();
            parts.push(format!("(?:{})", surfaces.join("|")));
        } else {
            parts.extend(oracle_tokens(word).iter().map(|t| regex::escape(t)));
        }
    }
    Regex::new(&format!("^{}$", parts.join(" "))).unwrap()
}

fn oracle_intents(corpus: &Value, gazetteers: &[Gazetteer]) -> Vec<OracleIntent> {
    corpus["intents"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| OracleIntent {
            name: i["name"].as_str().unwrap().to_string(),
            priority: i.get("priority").and_then(Value::as_i64).unwrap_or(0),
            examples: i["examples"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| oracle_tokens(e.as_str().unwrap()).into_iter().collect())
                .collect(),
            patterns: i
                .get("patterns")
                .and_then(Value::as_array)
                .map(|ps| {
                    ps.iter()
                        .map(|p| pattern_regex(p.as_str().unwrap(), gazetteers))
                        .collect()
                })
                .unwrap_or_default(),
        })
        .collect()
}

/// Exhaustive scoring over every intent; returns (intent, confidence).
fn oracle_classify(intents: &[OracleIntent], text: &str, threshold: f64) -> (String, f64) {
    let tokens = oracle_tokens(text);
    let set: BTreeSet<String> = tokens.iter().cloned().collect();
    let joined = tokens.join(" ");
    let mut scored: Vec<(f64, i64, &str)> = intents
        .iter()
        .map(|i| {
            let score = if !tokens.is_empty() && i.patterns.iter().any(|p| p.is_match(&joined)) {
                1.0
            } else {
                i.examples
                    .iter()
                    .map(|ex| {
                        let inter = ex.intersection(&set).count();
                        let union = ex.union(&set).count();
                        if union == 0 {
                            0.0
                        } else {
                            inter as f64 / union as f64
                        }
                    })
                    .fold(0.0, f64::max)
            };
            (score, i.priority, i.name.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
    let (score, _, name) = scored[0];
    if tokens.is_empty() || score < threshold {
        (OUT_OF_SCOPE.to_string(), score)
    } else {
        (name.to_string(), score)
    }
}

/// All gazetteer spans, then greedy leftmost, longest, earliest-gazetteer selection.
fn oracle_entities(gazetteers: &[Gazetteer], text: &str) -> Vec<(String, String, usize, usize)> {
    let tokens = oracle_tokens(text);
    let mut spans = Vec::new();
    for (g_idx, g) in gazetteers.iter().enumerate() {
        for e in &g.entries {
            let surface = oracle_tokens(&e.surface);
            if surface.is_empty() || surface.len() > tokens.len() {
                continue;
            }
            for start in 0..=tokens.len() - surface.len() {
                if tokens[start..start + surface.len()] == surface[..] {
                    spans.push((
                        start,
                        surface.len(),
                        g_idx,
                        g.entity_type.clone(),
                        e.value.clone(),
                    ));
                }
            }
        }
    }
    spans.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    let mut out = Vec::new();
    let mut covered = 0;
    for (start, len, _, ty, value) in spans {
        if start < covered {
            continue;
        }
        out.push((ty, value, start, start + len));
        covered = start + len;
    }
    out
}

fn oracle_recommend<'a>(items: &'a [PoiItem], prefs: &PoiPreferences) -> Option<&'a PoiItem> {
    let mut candidates: Vec<&PoiItem> = items
        .iter()
        .filter(|i| prefs.category.is_none_or(|c| i.category == c))
        .filter(|i| prefs.liked.is_empty() || prefs.liked.iter().any(|k| i.keywords.contains(k)))
        .filter(|i| prefs.disliked.iter().all(|k| !i.keywords.contains(k)))
        .filter(|i| !prefs.rejected_ids.contains(&i.id))
        .collect();
    candidates.sort_by(|a, b| {
        b.rating
            .partial_cmp(&a.rating)
            .unwrap()
            .then(b.review_count.cmp(&a.review_count))
            .then(a.name.cmp(&b.name))
    });
    candidates.first().copied()
}

struct RawEvent {
    id: String,
    kind: String,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    topics: BTreeSet<String>,
}

fn raw_event(e: &Value) -> RawEvent {
    let mut topics: BTreeSet<String> = e["topics"]
        .as_array()
        .map(|t| t.iter().map(|x| x.as_str().unwrap().to_string()).collect())
        .unwrap_or_default();
    topics.extend(oracle_tokens(e["title"].as_str().unwrap_or("")));
    topics.extend(oracle_tokens(e["abstract"].as_str().unwrap_or("")));
    RawEvent {
        id: e["id"].as_str().unwrap().to_string(),
        kind: e["kind"].as_str().unwrap().to_string(),
        start: e["start"].as_str().unwrap().parse().unwrap(),
        end: e["end"].as_str().unwrap().parse().unwrap(),
        topics,
    }
}

fn oracle_session(
    events: &[RawEvent],
    interests: &BTreeSet<String>,
    done: &BTreeSet<String>,
    now: DateTime<Utc>,
) -> Option<String> {
    let mut scored: Vec<(f64, DateTime<Utc>, &str)> = events
        .iter()
        .filter(|e| matches!(e.kind.as_str(), "session" | "tutorial" | "workshop"))
        .filter(|e| e.end > now && !done.contains(&e.id))
        .map(|e| {
            let inter = e.topics.intersection(interests).count() as f64;
            let union = e.topics.union(interests).count() as f64;
            (
                if union == 0.0 { 0.0 } else { inter / union },
                e.start,
                e.id.as_str(),
            )
        })
        .filter(|s| s.0 > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(b.2)));
    scored.first().map(|s| s.2.to_string())
}

fn oracle_next(events: &[RawEvent], now: DateTime<Utc>) -> Option<String> {
    events
        .iter()
        .filter(|e| e.start > now)
        .min_by(|a, b| a.start.cmp(&b.start).then(a.id.cmp(&b.id)))
        .map(|e| e.id.clone())
}

// ---------------------------------------------------------------- criteria

const GOLDEN_SCRIPT: [&str; 7] = [
    "Hello",
    "Do you know of any good Indian restaurants?",
    "no",
    "yes",
    "How do I get there?",
    "thanks",
    "bye",
];

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/restaurant_walkthrough.txt")
}

async fn golden_transcript() -> Outcome {
    let started = Instant::now();
    let app = common::small_app();
    let (_, replies) = common::converse(&app, &GOLDEN_SCRIPT).await;
    let mut transcript = String::new();
    for (line, reply) in GOLDEN_SCRIPT.iter().zip(&replies) {
        transcript.push_str(&format!("user: {line}\n"));
        for r in reply {
            transcript.push_str(&format!("bot: {}\n", serde_json::to_string(r).unwrap()));
        }
    }
    let elapsed = started.elapsed();
    let path = golden_path();
    if std::env::var_os("CONCIERGE_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &transcript).unwrap();
    }
    let expected = std::fs::read_to_string(&path)
        .map_err(|e| format!("golden file {}: {e}", path.display()))?;
    if expected != transcript {
        let diff = expected
            .lines()
            .zip(transcript.lines())
            .position(|(a, b)| a != b)
            .unwrap_or(expected.lines().count().min(transcript.lines().count()));
        return Err(format!(
            "transcript differs from golden file at line {}:\n  expected: {}\n  actual:   {}",
            diff + 1,
            expected.lines().nth(diff).unwrap_or("<eof>"),
            transcript.lines().nth(diff).unwrap_or("<eof>")
        ));
    }
    ensure(elapsed < Duration::from_secs(5), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{} turns, {} bytes byte-identical, {elapsed:.2?}",
        GOLDEN_SCRIPT.len(),
        transcript.len()
    ))
}

const NONSENSE: [&str; 20] = [
    "purple elephants dance quietly",
    "asdf qwerty zxcv",
    "the mitochondria is the powerhouse of the cell",
    "seventeen bananas ago",
    "quantum toaster firmware update",
    "glorp flibber wump",
    "my cat owns three bicycles",
    "lorem ipsum dolor sit amet",
    "invert the matrix twice sideways",
    "zzzz",
    "42 1337 9000",
    "banana phone ringing loudly",
    "photosynthesis requires chlorophyll",
    "tax refund paperwork deadline",
    "knitting socks for octopuses",
    "xylophone volcano marmalade",
    "reboot the satellite uplink",
    "grandma's secret pickle recipe",
    "wobbly jelly trampoline contest",
    "submarine sandwich diplomacy",
];

fn nlu_accuracy() -> Outcome {
    let data = AssistantData::seed();
    let model = data
        .build_nlu(DEFAULT_THRESHOLD)
        .map_err(|e| e.to_string())?;
    let corpus: Value = serde_json::from_str(SEED_CORPUS).unwrap();
    let gazetteers = data.gazetteers();
    let intents = oracle_intents(&corpus, &gazetteers);
    ensure(intents.len() >= 12, || {
        format!("only {} intents", intents.len())
    })?;
    if let Some(i) = intents.iter().find(|i| i.examples.len() < 8) {
        return Err(format!(
            "intent {} has only {} examples",
            i.name,
            i.examples.len()
        ));
    }

    let heldout = common::heldout();
    let heldout_2 = common::heldout_2();
    let blind = common::heldout_blind();
    let training: BTreeSet<Vec<String>> = corpus["intents"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|i| {
            i["examples"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| oracle_tokens(e.as_str().unwrap()))
        })
        .collect();
    let mut scores = Vec::new();
    let mut misses = Vec::new();
    for (label, set) in [
        ("held-out", &heldout),
        ("held-out 2", &heldout_2),
        ("blind", &blind),
    ] {
        if let Some(dup) = set
            .values()
            .flatten()
            .find(|l| training.contains(&oracle_tokens(l)))
        {
            return Err(format!("{label} line {dup:?} is also a training example"));
        }
        let mut total = 0;
        let mut correct = 0;
        for intent in &intents {
            let lines = set.get(&intent.name).cloned().unwrap_or_default();
            ensure(lines.len() >= 5, || {
                format!("{label} set has {} lines for {}", lines.len(), intent.name)
            })?;
            for line in lines {
                total += 1;
                let got = model.classify(&line).intent;
                if got == intent.name {
                    correct += 1;
                } else if label != "blind" {
                    misses.push(format!("{label} {line:?}: {} -> {got}", intent.name));
                }
            }
        }
        scores.push((label, correct, total));
    }

    let leaked: Vec<String> = NONSENSE
        .iter()
        .map(|s| (s, model.classify(s)))
        .filter(|(_, r)| r.intent != OUT_OF_SCOPE)
        .map(|(s, r)| format!("{s:?} -> {} ({:.2})", r.intent, r.confidence))
        .collect();

    // random utterances against the exhaustive oracle
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut vocab: Vec<String> = intents
        .iter()
        .flat_map(|i| i.examples.iter().flatten().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    vocab.extend(
        [
            "zebra",
            "quantum",
            "blue",
            "seventeen",
            "dont",
            "Indian",
            "Room",
            "A",
        ]
        .map(String::from),
    );
    let examples: Vec<String> = corpus["intents"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|i| {
            i["examples"]
                .as_array()
                .unwrap()
                .iter()
                .map(|e| e.as_str().unwrap().to_string())
        })
        .collect();
    let mut disagreements = Vec::new();
    for n in 0..500 {
        let text = match n % 4 {
            0 => {
                let len = rng.random_range(1..=8);
                (0..len)
                    .map(|_| vocab.choose(&mut rng).unwrap().as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            1 => {
                let mut words: Vec<String> = examples
                    .choose(&mut rng)
                    .unwrap()
                    .split(' ')
                    .map(String::from)
                    .collect();
                if rng.random_bool(0.5) && words.len() > 1 {
                    let at = rng.random_range(0..words.len());
                    words.remove(at);
                }
                if rng.random_bool(0.5) {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, vocab.choose(&mut rng).unwrap().clone());
                }
                words.join(" ")
            }
            2 => format!(
                "{} {}!",
                ["I don't like", "not", "no", "avoid", "I hate", "please no"]
                    .choose(&mut rng)
                    .unwrap(),
                vocab.choose(&mut rng).unwrap()
            ),
            _ => heldout
                .values()
                .flatten()
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .unwrap()
                .to_string(),
        };
        let got = model.classify(&text);
        let (want, want_score) = oracle_classify(&intents, &text, DEFAULT_THRESHOLD);
        let got_entities: Vec<_> = got
            .entities
            .iter()
            .map(|e| (e.entity_type.clone(), e.value.clone(), e.start, e.end))
            .collect();
        if got.intent != want
            || got.confidence != want_score
            || got_entities != oracle_entities(&gazetteers, &text)
        {
            disagreements.push(format!(
                "{text:?}: model {} {:.3}, oracle {want} {want_score:.3}",
                got.intent, got.confidence
            ));
        }
    }

    let accuracy_text: Vec<String> = scores
        .iter()
        .map(|(label, c, t)| format!("{label} {c}/{t} = {:.1}%", *c as f64 * 100.0 / *t as f64))
        .collect();
    let summary = format!(
        "{}, nonsense {}/20 out_of_scope, oracle agreement {}/500",
        accuracy_text.join(", "),
        20 - leaked.len(),
        500 - disagreements.len()
    );
    let mut problems = Vec::new();
    if scores.iter().any(|(_, c, t)| (*c as f64) < 0.9 * *t as f64) {
        problems.push(format!(
            "accuracy below 90%; misses (blind set unlisted): {}",
            misses.join("; ")
        ));
    }
    if !leaked.is_empty() {
        problems.push(format!(
            "nonsense classified in scope: {}",
            leaked.join("; ")
        ));
    }
    if !disagreements.is_empty() {
        problems.push(format!(
            "oracle disagreements: {}",
            disagreements
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join("; ")
        ));
    }
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{summary}\n  {}", problems.join("\n  ")))
    }
}

const KEYWORD_POOL: [&str; 12] = [
    "indian",
    "italian",
    "spicy",
    "cheap",
    "view",
    "outdoor",
    "kids",
    "history",
    "vegan",
    "craft beer",
    "running",
    "cozy",
];
const NAME_POOL: [&str; 10] = [
    "Alder", "Birch", "Cedar", "Dune", "Elm", "Fjord", "Gale", "Heath", "Isle", "Juniper",
];

fn random_catalog(rng: &mut StdRng) -> Vec<PoiItem> {
    let n = rng.random_range(1..=50);
    let mut names: Vec<String> = NAME_POOL
        .iter()
        .flat_map(|a| ["Grill", "Bar", "Hall", "Park", "Cafe"].map(|b| format!("{a} {b}")))
        .collect();
    names.shuffle(rng);
    (0..n)
        .map(|i| {
            let kws = (0..rng.random_range(0..=3))
                .map(|_| KEYWORD_POOL.choose(rng).unwrap().to_string())
                .collect();
            PoiItem {
                id: format!("i{i:02}"),
                name: names[i].clone(),
                category: *PoiCategory::ALL.choose(rng).unwrap(),
                keywords: kws,
                price_level: rng.random_range(1..=4),
                // coarse values so that rating and review ties actually happen
                rating: rng.random_range(6..=10) as f64 / 2.0,
                review_count: rng.random_range(0..4) * 50,
                address: "Somewhere 1".into(),
                coordinates: Coordinates {
                    lat: 58.97,
                    lon: 5.73,
                },
                transport_options: vec![TransportOption {
                    mode: TransportMode::Walk,
                    instructions: "Walk.".into(),
                    duration_minutes: 5,
                }],
                description: "A place.".into(),
            }
        })
        .collect()
}

fn random_keywords(rng: &mut StdRng, max: usize) -> Vec<String> {
    let mut out = Vec::new();
    for _ in 0..rng.random_range(0..=max) {
        let k = KEYWORD_POOL.choose(rng).unwrap().to_string();
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

fn poi_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(727);
    let mut mismatches = Vec::new();
    let mut non_empty = 0;
    for n in 0..200 {
        let items = random_catalog(&mut rng);
        let catalog = Catalog::new(items.clone()).map_err(|e| e.to_string())?;
        let mut prefs = PoiPreferences {
            category: rng
                .random_bool(0.6)
                .then(|| *PoiCategory::ALL.choose(&mut rng).unwrap()),
            liked: random_keywords(&mut rng, 2),
            ..Default::default()
        };
        prefs.disliked = random_keywords(&mut rng, 2)
            .into_iter()
            .filter(|k| !prefs.liked.contains(k))
            .collect();
        for i in &items {
            if rng.random_bool(0.15) {
                prefs.rejected_ids.insert(i.id.clone());
            }
        }
        let got = recommend(&catalog, &prefs).map(|i| i.id.clone());
        let want = oracle_recommend(&items, &prefs).map(|i| i.id.clone());
        non_empty += usize::from(want.is_some());
        if got != want {
            mismatches.push(format!("instance {n}: got {got:?}, oracle {want:?}"));
        }
    }

    let mut violations = Vec::new();
    for seq in 0..1000 {
        let items = random_catalog(&mut rng);
        let catalog = Catalog::new(items.clone()).map_err(|e| e.to_string())?;
        let mut prefs = PoiPreferences::default();
        for step in 0..rng.random_range(1..=20) {
            let kw = KEYWORD_POOL.choose(&mut rng).unwrap();
            let id = &items.choose(&mut rng).unwrap().id;
            let before = oracle_recommend(&items, &prefs).is_some();
            match rng.random_range(0..5) {
                0 => prefs.like(kw),
                1 => {
                    let count = |p: &PoiPreferences| {
                        items
                            .iter()
                            .filter(|i| oracle_recommend(std::slice::from_ref(*i), p).is_some())
                            .count()
                    };
                    let size_before = count(&prefs);
                    let had_like = prefs.liked.iter().any(|k| k == kw);
                    prefs.dislike(kw);
                    if !had_like && count(&prefs) > size_before {
                        violations.push(format!(
                            "seq {seq} step {step}: disliking {kw} enlarged the candidates"
                        ));
                    }
                }
                2 => prefs.reject(id),
                3 => prefs.accept(id),
                _ => {
                    prefs.category = rng
                        .random_bool(0.7)
                        .then(|| *PoiCategory::ALL.choose(&mut rng).unwrap())
                }
            }
            let _ = before;
            if prefs.liked.iter().any(|k| prefs.disliked.contains(k)) {
                violations.push(format!("seq {seq} step {step}: liked and disliked overlap"));
            }
            if prefs
                .accepted_id
                .as_ref()
                .is_some_and(|a| prefs.rejected_ids.contains(a))
            {
                violations.push(format!("seq {seq} step {step}: accepted item is rejected"));
            }
            if let Some(item) = recommend(&catalog, &prefs) {
                if prefs.rejected_ids.contains(&item.id) {
                    violations.push(format!(
                        "seq {seq} step {step}: recommended rejected {}",
                        item.id
                    ));
                }
                if prefs.disliked.iter().any(|k| item.keywords.contains(k)) {
                    violations.push(format!(
                        "seq {seq} step {step}: recommended disliked {}",
                        item.id
                    ));
                }
            }
        }
    }
    ensure(mismatches.is_empty(), || {
        format!(
            "{} of 200 disagree: {}",
            mismatches.len(),
            mismatches.join("; ")
        )
    })?;
    ensure(violations.is_empty(), || {
        format!(
            "{} violations: {}",
            violations.len(),
            violations
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join("; ")
        )
    })?;
    Ok(format!(
        "200/200 instances agree ({non_empty} non-empty), 1000 update sequences clean"
    ))
}

const TOPIC_POOL: [&str; 10] = [
    "ranking",
    "fairness",
    "retrieval",
    "recommendation",
    "evaluation",
    "neural",
    "query",
    "conversational",
    "music",
    "privacy",
];
const TITLE_POOL: [&str; 12] = [
    "Advances", "in", "Neural", "Ranking", "Music", "Search", "Privacy", "for", "Users", "Fair",
    "Query", "Models",
];

fn random_programme(rng: &mut StdRng) -> Vec<Value> {
    let n = rng.random_range(1..=40);
    let kinds = ["keynote", "tutorial", "workshop", "session", "social"];
    (0..n)
        .map(|i| {
            let day = rng.random_range(11..=12);
            let hour = rng.random_range(8..=18);
            let minute = [0, 30].choose(rng).unwrap();
            let start = Utc
                .with_ymd_and_hms(2022, 4, day, hour, *minute, 0)
                .unwrap();
            let end = start + chrono::Duration::minutes(rng.random_range(1..=6) * 30);
            let title: Vec<&str> = (0..rng.random_range(0..=4))
                .map(|_| *TITLE_POOL.choose(rng).unwrap())
                .collect();
            let topics: BTreeSet<&str> = (0..rng.random_range(0..=3))
                .map(|_| *TOPIC_POOL.choose(rng).unwrap())
                .collect();
            json!({
                "id": format!("e{i:02}"),
                "title": title.join(" "),
                "kind": kinds.choose(rng).unwrap(),
                "start": start.to_rfc3339(),
                "end": end.to_rfc3339(),
                "room": "Room A",
                "speakers": [],
                "abstract": if rng.random_bool(0.3) { "Short abstract on Ranking." } else { "" },
                "topics": topics,
            })
        })
        .collect()
}

fn random_now(rng: &mut StdRng) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 4, 10, 12, 0, 0).unwrap()
        + chrono::Duration::minutes(rng.random_range(0..3 * 24 * 60))
}

fn conference_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(728);
    let mut mismatches = Vec::new();
    let mut checks = 0;

    let small_raw: Vec<RawEvent> = serde_json::from_str::<Value>(SEED_PROGRAMME).unwrap()["events"]
        .as_array()
        .unwrap()
        .iter()
        .map(raw_event)
        .collect();
    let small = load_programme(SEED_PROGRAMME).map_err(|e| e.to_string())?;
    ensure(small.events().len() == 8, || {
        format!("prog_small has {} events", small.events().len())
    })?;
    let mut compare =
        |programme: &Programme, raw: &[RawEvent], label: &str, rng: &mut StdRng, rounds: usize| {
            for _ in 0..rounds {
                let interests: BTreeSet<String> = (0..rng.random_range(1..=3))
                    .map(|_| TOPIC_POOL.choose(rng).unwrap().to_string())
                    .collect();
                let mut profile = InterestProfile::new(interests.iter().cloned());
                for e in raw {
                    if rng.random_bool(0.1) {
                        profile.recommended_ids.insert(e.id.clone());
                    }
                }
                let now = random_now(rng);
                let got = recommend_session(programme, &profile, now).map(|e| e.id.clone());
                let want = oracle_session(raw, &interests, &profile.recommended_ids, now);
                checks += 1;
                if got != want {
                    mismatches.push(format!(
                        "{label} interests {interests:?} now {now}: got {got:?}, oracle {want:?}"
                    ));
                }
                let got_next = next_session(programme, now).map(|e| e.id.clone());
                let want_next = oracle_next(raw, now);
                if got_next != want_next {
                    mismatches.push(format!(
                        "{label} next at {now}: got {got_next:?}, oracle {want_next:?}"
                    ));
                }
            }
        };
    compare(&small, &small_raw, "prog_small", &mut rng, 200);
    for p in 0..100 {
        let events = random_programme(&mut rng);
        let raw: Vec<RawEvent> = events.iter().map(raw_event).collect();
        let parsed: Vec<ConferenceEvent> = serde_json::from_value(Value::Array(events)).unwrap();
        let programme = Programme::new(parsed).map_err(|e| format!("programme {p}: {e}"))?;
        compare(&programme, &raw, &format!("programme {p}"), &mut rng, 10);
    }

    let mut ended = Vec::new();
    let programmes: Vec<Programme> = (0..10)
        .map(|_| {
            let parsed: Vec<ConferenceEvent> =
                serde_json::from_value(Value::Array(random_programme(&mut rng))).unwrap();
            Programme::new(parsed).unwrap()
        })
        .chain([small.clone()])
        .collect();
    for _ in 0..1000 {
        let now = random_now(&mut rng);
        let programme = programmes.choose(&mut rng).unwrap();
        let topics: Vec<String> = programme
            .events()
            .iter()
            .flat_map(|e| e.topics.iter().cloned())
            .collect();
        let profile = InterestProfile::new(topics.choose_multiple(&mut rng, 3).cloned());
        for e in recommend_session(programme, &profile, now)
            .into_iter()
            .chain(next_session(programme, now))
        {
            if e.end <= now {
                ended.push(format!("{} ended {} <= {now}", e.id, e.end));
            }
            if e.kind == EventCategory::Social
                && recommend_session(programme, &profile, now).map(|r| &r.id) == Some(&e.id)
            {
                ended.push(format!("social event {} recommended", e.id));
            }
        }
    }
    ensure(mismatches.is_empty(), || {
        format!(
            "{} mismatches: {}",
            mismatches.len(),
            mismatches
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join("; ")
        )
    })?;
    ensure(ended.is_empty(), || ended.join("; "))?;
    Ok(format!("{checks} recommendation checks agree (prog_small + 100 random programmes), 1000 random nows never return an ended event"))
}

// ---------------------------------------------------------------- device-group sync

type Socket =
    tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

struct Client {
    ws: Socket,
    seq: u64,
    frames: Vec<Value>,
}

impl Client {
    async fn connect(addr: std::net::SocketAddr) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/ws"))
            .await
            .unwrap();
        Self {
            ws,
            seq: 0,
            frames: Vec::new(),
        }
    }

    async fn send(&mut self, kind: &str, session: &str, payload: Value) {
        self.seq += 1;
        let msg =
            json!({"v": 1, "type": kind, "session": session, "seq": self.seq, "payload": payload});
        self.ws.send(Message::text(msg.to_string())).await.unwrap();
    }

    async fn next(&mut self) -> Value {
        loop {
            let frame = tokio::time::timeout(Duration::from_secs(5), self.ws.next())
                .await
                .expect("frame within 5s")
                .unwrap()
                .unwrap();
            if let Message::Text(t) = frame {
                let v: Value = serde_json::from_str(t.as_str()).unwrap();
                self.frames.push(v.clone());
                return v;
            }
        }
    }

    async fn until(&mut self, kind: &str) -> Value {
        loop {
            let v = self.next().await;
            if v["type"] == kind {
                return v;
            }
        }
    }

    /// Round-trips a ping so every frame sent before it has arrived.
    async fn drain(&mut self) {
        self.send("ping", "", json!({})).await;
        self.until("pong").await;
    }

    fn bot_frames(&self) -> Vec<(u64, u64, String)> {
        self.frames
            .iter()
            .filter(|f| f["type"] == "bot_response")
            .map(|f| {
                (
                    f["seq"].as_u64().unwrap(),
                    f["payload"]["turn"].as_u64().unwrap(),
                    f["payload"]["skill"].as_str().unwrap().to_string(),
                )
            })
            .collect()
    }
}

const SYNC_SCRIPT: [&str; 30] = [
    "hello",
    "who are you",
    "what can you do",
    "who are the keynote speakers",
    "what is the next session about",
    "what is on the schedule today",
    "what is happening in room b",
    "can you recommend a session",
    "ranking and fairness",
    "no",
    "recommend a talk",
    "Do you know of any good Indian restaurants?",
    "no",
    "show me another one",
    "yes",
    "how do I get there",
    "what is the address",
    "how expensive is it",
    "is there a museum nearby",
    "nothing",
    "yes",
    "how far is it",
    "what is the weather like",
    "blorp zzz",
    "help",
    "where can I go running",
    "no",
    "yes",
    "thanks",
    "bye",
];

async fn start_server(
    state: concierge::gateway::AppState,
) -> (std::net::SocketAddr, tokio::sync::oneshot::Sender<()>) {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    tokio::spawn(serve(listener, state, async {
        let _ = rx.await;
    }));
    (addr, tx)
}

async fn open_group(addr: std::net::SocketAddr) -> (Client, String, String) {
    let mut robot = Client::connect(addr).await;
    robot.send("hello", "", json!({})).await;
    robot.until("hello").await;
    robot
        .send("session_open", "", json!({"channel": "robot"}))
        .await;
    let ack = robot.until("session_open").await;
    let session = ack["payload"]["session"].as_str().unwrap().to_string();
    let token = ack["payload"]["group_token"].as_str().unwrap().to_string();
    (robot, session, token)
}

async fn join_screen(addr: std::net::SocketAddr, token: &str) -> Client {
    let mut screen = Client::connect(addr).await;
    screen
        .send(
            "session_join",
            "",
            json!({"group_token": token, "channel": "screen"}),
        )
        .await;
    screen.until("session_join").await;
    screen
}

async fn device_group_sync() -> Outcome {
    let state = common::state_for(common::small_engine(), HubConfig::default());
    let (addr, stop) = start_server(state).await;

    // both devices from the start
    let (mut robot, session, token) = open_group(addr).await;
    let mut screen = join_screen(addr, &token).await;
    for line in SYNC_SCRIPT {
        robot
            .send("user_utterance", &session, json!({"text": line}))
            .await;
        robot.drain().await;
    }
    screen.drain().await;
    let (r, s) = (robot.bot_frames(), screen.bot_frames());
    ensure(!r.is_empty(), || "robot received no bot responses".into())?;
    let turns: BTreeSet<u64> = r.iter().map(|f| f.1).collect();
    ensure(turns.len() == SYNC_SCRIPT.len(), || {
        format!("{} turns answered of {}", turns.len(), SYNC_SCRIPT.len())
    })?;
    let divergent = r.iter().zip(&s).filter(|(a, b)| a != b).count() + r.len().abs_diff(s.len());
    ensure(divergent == 0, || {
        format!("{divergent} divergent frames between robot and screen")
    })?;
    ensure(r.windows(2).all(|w| w[0].0 < w[1].0), || {
        "seq not strictly increasing".into()
    })?;
    let errors: Vec<&Value> = robot
        .frames
        .iter()
        .chain(&screen.frames)
        .filter(|f| f["type"] == "error")
        .collect();
    ensure(errors.is_empty(), || format!("error frames: {errors:?}"))?;
    let screen_quick_replies = screen
        .frames
        .iter()
        .filter(|f| {
            f["type"] == "bot_response" && f["payload"]["response"]["kind"] == "quick_replies"
        })
        .count();
    ensure(screen_quick_replies == 0, || {
        "screen received quick replies".into()
    })?;
    let full_frames = r.len();

    // screen boots in the middle of the conversation
    let (mut robot, session, token) = open_group(addr).await;
    let join_after = 12;
    for line in &SYNC_SCRIPT[..join_after] {
        robot
            .send("user_utterance", &session, json!({"text": line}))
            .await;
        robot.drain().await;
    }
    let mut screen = join_screen(addr, &token).await;
    for line in &SYNC_SCRIPT[join_after..] {
        robot
            .send("user_utterance", &session, json!({"text": line}))
            .await;
        robot.drain().await;
    }
    screen.drain().await;
    let (r, s) = (robot.bot_frames(), screen.bot_frames());
    let last_turn_before_join = r
        .iter()
        .filter(|f| f.1 as usize <= join_after)
        .map(|f| f.1)
        .max()
        .unwrap();
    let expected: Vec<_> = r
        .iter()
        .filter(|f| f.1 >= last_turn_before_join)
        .cloned()
        .collect();
    let replayed = s
        .iter()
        .take_while(|f| f.1 == last_turn_before_join)
        .count();
    ensure(replayed > 0, || {
        "screen got no replay of the current turn".into()
    })?;
    let divergent =
        expected.iter().zip(&s).filter(|(a, b)| a != b).count() + expected.len().abs_diff(s.len());
    ensure(divergent == 0, || {
        format!("{divergent} divergent frames after mid-session join")
    })?;

    let _ = stop.send(());
    Ok(format!(
        "{} turns, {full_frames} bot frames identical on robot and screen; mid-session join replayed {replayed} frame(s) of turn {last_turn_before_join}, then {} identical frames",
        SYNC_SCRIPT.len(),
        expected.len() - replayed
    ))
}

// ---------------------------------------------------------------- analytics

fn analytics() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(730);
    let mut planted_hist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut planted_skills: BTreeMap<String, usize> = BTreeMap::new();
    {
        let log = LogStore::open(dir.path()).map_err(|e| e.to_string())?;
        let t0 = Utc.with_ymd_and_hms(2022, 4, 11, 9, 0, 0).unwrap();
        for s in 0..100 {
            let turns = rng.random_range(1..=12);
            *planted_hist.entry(turns).or_default() += 1;
            // sessions spread over two days so more than one log file is read
            let day_offset = chrono::Duration::days(s % 2);
            for turn in 1..=turns as u32 {
                let at = t0 + day_offset + chrono::Duration::seconds(turn as i64);
                let mk = |direction, seq, skill: Option<&str>| LogRecord {
                    session_id: format!("planted-{s:03}"),
                    turn,
                    seq,
                    timestamp: at,
                    direction,
                    text: "x".into(),
                    intent: None,
                    skill: skill.map(String::from),
                    channel_kind: ChannelKind::Rest,
                    user_id: None,
                };
                log.append(mk(Direction::User, 0, None))
                    .map_err(|e| e.to_string())?;
                for seq in 1..=rng.random_range(1..=2) {
                    let skill = *[Some("core"), Some("poi"), Some("conference"), None]
                        .choose(&mut rng)
                        .unwrap();
                    *planted_skills
                        .entry(skill.unwrap_or("core").to_string())
                        .or_default() += 1;
                    log.append(mk(Direction::Bot, seq, skill))
                        .map_err(|e| e.to_string())?;
                }
            }
        }
    }
    let records = load_dir(dir.path()).map_err(|e| e.to_string())?;
    ensure(
        conversation_length_histogram(&records) == planted_hist,
        || "histogram differs from planted counts".into(),
    )?;
    ensure(turns_per_skill(&records) == planted_skills, || {
        format!(
            "skill counts {:?} differ from planted {planted_skills:?}",
            turns_per_skill(&records)
        )
    })?;
    let report =
        AnalyticsReport::from_dir(dir.path(), AnalyticsView::Both).map_err(|e| e.to_string())?;
    ensure(
        report.conversation_lengths.as_ref() == Some(&planted_hist),
        || "report histogram differs".into(),
    )?;

    // the shipped CLI reads the same directory
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_concierge"))
        .args(["analytics", "--skills", "--format", "json", "--log-dir"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let cli: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    ensure(cli["turns_per_skill"] == json!(planted_skills), || {
        format!("CLI reported {cli}")
    })?;

    // the demo dialogues: core should dominate
    let log = Arc::new(LogStore::in_memory());
    let engine = common::engine_with(
        &common::small_data(),
        Arc::new(ProfileStore::in_memory()),
        log.clone(),
    );
    for dialogue in common::demo_dialogues() {
        let mut session = engine.new_session(ChannelDescriptor::webchat());
        for line in dialogue {
            engine.handle_message(&mut session, &line, common::conference_morning());
        }
    }
    let demo = turns_per_skill(&log.records().map_err(|e| e.to_string())?);
    let core = demo.get("core").copied().unwrap_or(0);
    let strictly_largest = demo.iter().all(|(k, v)| k == "core" || *v < core);
    ensure(strictly_largest, || {
        format!("core is not the strictly largest skill: {demo:?}")
    })?;
    Ok(format!(
        "100 planted sessions reproduced exactly ({} lengths, {:?}); demo set {demo:?}",
        planted_hist.len(),
        planted_skills
    ))
}

// ---------------------------------------------------------------- consent

fn consent_gating() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let now = common::conference_morning();
    let engine: DialogueEngine = common::small_engine_in(dir.path());
    let store = engine.profiles().clone();
    for (id, name) in [("ada", "Ada"), ("bob", "Bob"), ("cy", "Cy"), ("dee", "Dee")] {
        store.register(id, Some(name)).map_err(|e| e.to_string())?;
    }
    let chat = [
        "Do you know of any good Indian restaurants?",
        "no",
        "yes",
        "recommend a session",
        "ranking",
        "yes",
        "bye",
    ];
    let run_chat = |s: &mut concierge::Session| {
        for line in chat {
            engine.handle_message(s, line, now);
        }
    };

    // deny by voice right after the consent question
    let mut s = engine.new_session(ChannelDescriptor::robot());
    engine.handle_identify(&mut s, Some(&qr_token("ada")), now);
    engine.handle_message(&mut s, "no", now);
    run_chat(&mut s);

    // deny, then identify by badge and keep chatting; the recognition token must not stick
    let mut s = engine.new_session(ChannelDescriptor::robot());
    engine.handle_identify(&mut s, Some("face:4711"), now);
    engine
        .handle_consent(&mut s, Consent::Denied, now)
        .map_err(|e| e.to_string())?;
    engine.handle_identify(&mut s, Some(&qr_token("bob")), now);
    engine.handle_identify(&mut s, Some("face:4711"), now);
    run_chat(&mut s);

    // consent asked but never answered
    let mut s = engine.new_session(ChannelDescriptor::webchat());
    engine.handle_identify(&mut s, Some(&qr_token("cy")), now);
    run_chat(&mut s);

    let audit = store.audit();
    let leaked: Vec<_> = audit.iter().filter(|a| a.user_id != "dee").collect();
    ensure(leaked.is_empty(), || {
        format!("memory writes for non-consenting profiles: {leaked:?}")
    })?;
    for id in ["ada", "bob", "cy"] {
        let p = store.get(id).unwrap();
        ensure(p.memory.is_empty(), || {
            format!("{id} has memory {:?}", p.memory)
        })?;
        ensure(p.identifiers == BTreeSet::from([qr_token(id)]), || {
            format!("{id} identifiers {:?}", p.identifiers)
        })?;
    }
    ensure(store.identify("face:4711").is_none(), || {
        "denied recognition token was linked".into()
    })?;
    ensure(store.get("ada").unwrap().consent == Consent::Denied, || {
        "ada's denial not recorded".into()
    })?;

    // grant, use, then delete
    let mut s = engine.new_session(ChannelDescriptor::robot());
    engine.handle_identify(&mut s, Some("face:0042"), now);
    engine.handle_message(&mut s, "yes", now);
    engine.handle_identify(&mut s, Some(&qr_token("dee")), now);
    run_chat(&mut s);
    let dee = store.get("dee").unwrap();
    ensure(dee.consent == Consent::Granted, || {
        "dee's consent not granted".into()
    })?;
    ensure(!dee.memory.accepted_poi_ids.is_empty(), || {
        format!("granted profile kept no memory: {:?}", dee.memory)
    })?;
    ensure(dee.identifiers.contains("face:0042"), || {
        "recognition token not linked after consent".into()
    })?;
    let writes = store.audit().iter().filter(|a| a.user_id == "dee").count();
    ensure(
        store
            .audit()
            .iter()
            .all(|a| a.consent_at_write == Consent::Granted),
        || "write audited without consent".into(),
    )?;
    let attributed = load_dir(dir.path())
        .map_err(|e| e.to_string())?
        .iter()
        .filter(|r| r.user_id.as_deref() == Some("dee"))
        .count();
    ensure(attributed > 0, || {
        "no log records attributed to the consenting user".into()
    })?;

    let report = admin::delete_profile(dir.path(), "dee").map_err(|e| e.to_string())?;
    let reopened = ProfileStore::open(dir.path()).map_err(|e| e.to_string())?;
    ensure(reopened.get("dee").is_none(), || {
        "profile still present".into()
    })?;
    ensure(reopened.audit().iter().all(|a| a.user_id != "dee"), || {
        "audit still mentions dee".into()
    })?;
    ensure(reopened.identify("face:0042").is_none(), || {
        "token still resolves".into()
    })?;
    let remaining = load_dir(dir.path())
        .map_err(|e| e.to_string())?
        .iter()
        .filter(|r| r.user_id.as_deref() == Some("dee"))
        .count();
    ensure(remaining == 0, || {
        format!("{remaining} log records still attributed")
    })?;
    ensure(report.scrubbed_records == attributed, || {
        format!("scrubbed {} of {attributed}", report.scrubbed_records)
    })?;
    Ok(format!(
        "deny / deny-then-chat / unanswered: 0 writes; grant: {writes} audited writes, delete scrubbed {attributed} log records"
    ))
}

// ---------------------------------------------------------------- replay

async fn replay_determinism() -> Outcome {
    let first_dir = tempfile::tempdir().unwrap();
    let second_dir = tempfile::tempdir().unwrap();
    let app_a = router(common::state_for(
        common::small_engine_in(first_dir.path()),
        HubConfig::default(),
    ));
    let mut rng = StdRng::seed_from_u64(732);
    let heldout: Vec<String> = common::heldout().into_values().flatten().collect();
    let scripted: Vec<String> = SYNC_SCRIPT
        .iter()
        .chain(GOLDEN_SCRIPT.iter())
        .map(|s| s.to_string())
        .collect();
    let mut replies_a: HashMap<String, Vec<Value>> = HashMap::new();
    for _ in 0..50 {
        let len = rng.random_range(3..=15);
        let lines: Vec<String> = (0..len)
            .map(|_| {
                if rng.random_bool(0.5) {
                    scripted.choose(&mut rng).unwrap().clone()
                } else {
                    heldout.choose(&mut rng).unwrap().clone()
                }
            })
            .collect();
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let (session, replies) = common::converse(&app_a, &refs).await;
        replies_a.insert(session, replies.into_iter().flatten().collect());
    }

    // replay from the logs alone
    let records = load_dir(first_dir.path()).map_err(|e| e.to_string())?;
    let mut by_session: BTreeMap<String, Vec<&LogRecord>> = BTreeMap::new();
    for r in &records {
        by_session.entry(r.session_id.clone()).or_default().push(r);
    }
    ensure(by_session.len() == 50, || {
        format!("{} sessions logged", by_session.len())
    })?;
    let app_b = router(common::state_for(
        common::small_engine_in(second_dir.path()),
        HubConfig::default(),
    ));
    let mut diverged = Vec::new();
    let mut bot_total = 0;
    for (session, recs) in &by_session {
        let user: Vec<&str> = recs
            .iter()
            .filter(|r| r.direction == Direction::User)
            .map(|r| r.text.as_str())
            .collect();
        let bot_a: Vec<&str> = recs
            .iter()
            .filter(|r| r.direction == Direction::Bot)
            .map(|r| r.text.as_str())
            .collect();
        let (replayed, replies) = common::converse(&app_b, &user).await;
        let replies: Vec<Value> = replies.into_iter().flatten().collect();
        let records_b = load_dir(second_dir.path()).map_err(|e| e.to_string())?;
        let bot_b: Vec<&str> = records_b
            .iter()
            .filter(|r| r.session_id == replayed && r.direction == Direction::Bot)
            .map(|r| r.text.as_str())
            .collect();
        bot_total += bot_a.len();
        if bot_a != bot_b || replies_a.get(session) != Some(&replies) {
            diverged.push(session.clone());
        }
    }
    ensure(diverged.is_empty(), || {
        format!("{} sessions diverged: {diverged:?}", diverged.len())
    })?;
    Ok(format!(
        "50 sessions, {bot_total} bot messages reproduced identically from logged user texts"
    ))
}

// ---------------------------------------------------------------- runner

fn run_guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default()
        )),
    }
}

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

fn main() -> ExitCode {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .unwrap();
    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "golden transcript",
            Box::new(|| rt.block_on(golden_transcript())),
        ),
        ("nlu accuracy and oracle", Box::new(nlu_accuracy)),
        ("poi ranking oracle", Box::new(poi_oracle)),
        (
            "conference recommendation oracle",
            Box::new(conference_oracle),
        ),
        (
            "device-group sync",
            Box::new(|| rt.block_on(device_group_sync())),
        ),
        ("analytics", Box::new(analytics)),
        ("consent gating", Box::new(consent_gating)),
        (
            "replay determinism",
            Box::new(|| rt.block_on(replay_determinism())),
        ),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        match run_guarded(run) {
            Ok(detail) => println!(
                "PASS [{}] {name} ({:.2?}): {detail}",
                i + 1,
                started.elapsed()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "FAIL [{}] {name} ({:.2?}): {detail}",
                    i + 1,
                    started.elapsed()
                );
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
