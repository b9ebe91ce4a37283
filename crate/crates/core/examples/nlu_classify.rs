//! Classifies utterances with the shipped corpus and shows scores and entities.
//!
//! Pass utterances as arguments to classify your own.

use concierge::assistant::AssistantData;
use concierge::nlu::DEFAULT_THRESHOLD;

const SAMPLES: [&str; 6] = [
    "Do you know of any good Indian restaurants?",
    "no spicy food please",
    "how do I get there by bus",
    "who are the keynote speakers",
    "I am interested in fairness and ranking",
    "the mitochondria is the powerhouse of the cell",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = AssistantData::seed().build_nlu(DEFAULT_THRESHOLD)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let lines: Vec<&str> = if args.is_empty() {
        SAMPLES.to_vec()
    } else {
        args.iter().map(String::as_str).collect()
    };
    for line in lines {
        let result = model.classify(line);
        println!("{line:?}");
        println!(
            "  intent {} ({:.2}){}",
            result.intent,
            result.confidence,
            if result.is_fallback { " fallback" } else { "" }
        );
        let mut scores = model.scores(line);
        scores.sort_by(|a, b| b.1.total_cmp(&a.1));
        let runners_up: Vec<String> = scores
            .into_iter()
            .filter(|(name, _)| *name != result.intent)
            .take(2)
            .map(|(name, score)| format!("{name} {score:.2}"))
            .collect();
        println!("  next best: {}", runners_up.join(", "));
        for e in &result.entities {
            println!(
                "  entity {}={} tokens {}..{}",
                e.entity_type, e.value, e.start, e.end
            );
        }
    }
    Ok(())
}
