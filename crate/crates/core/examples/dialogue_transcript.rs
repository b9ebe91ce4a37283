//! Walks through a restaurant conversation over the five-item demo catalog.
//!
//! Pass your own utterances as arguments to replace the scripted ones.

use std::sync::Arc;

use chrono::Utc;
use concierge::assistant::{AssistantData, POI_SMALL};
use concierge::gateway::{flatten_text, ChannelDescriptor};
use concierge::logstore::LogStore;
use concierge::profile::ProfileStore;
use concierge::skill_poi::load_catalog;

const SCRIPT: [&str; 5] = [
    "Hello",
    "Do you know of any good Indian restaurants?",
    "no",
    "yes",
    "How do I get there?",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = AssistantData::seed().with_catalog(load_catalog(POI_SMALL)?);
    let engine = data.build_engine(
        concierge::nlu::DEFAULT_THRESHOLD,
        Arc::new(ProfileStore::in_memory()),
        Arc::new(LogStore::in_memory()),
    )?;
    let mut session = engine.new_session(ChannelDescriptor::webchat());

    let args: Vec<String> = std::env::args().skip(1).collect();
    let lines: Vec<&str> = if args.is_empty() {
        SCRIPT.to_vec()
    } else {
        args.iter().map(String::as_str).collect()
    };
    for line in lines {
        println!("user> {line}");
        let nlu = engine.nlu().classify(line);
        for response in engine.handle_message(&mut session, line, Utc::now()) {
            println!(
                "bot[{}|{}]> {}",
                nlu.intent,
                response.skill,
                flatten_text(&response.payload)
            );
        }
    }
    Ok(())
}
