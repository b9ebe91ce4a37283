//! Runs a few scripted conversations into a log directory and prints the
//! conversation-length histogram and per-skill turn counts.
//!
//! Pass an existing log directory to report on it instead.

use std::path::PathBuf;
use std::sync::Arc;

use concierge::admin::{AnalyticsReport, AnalyticsView, OutputFormat};
use concierge::assistant::AssistantData;
use concierge::gateway::ChannelDescriptor;
use concierge::logstore::LogStore;
use concierge::nlu::DEFAULT_THRESHOLD;
use concierge::profile::ProfileStore;

const CONVERSATIONS: [&[&str]; 4] = [
    &["Hello", "what can you do", "bye"],
    &[
        "Do you know of any good Indian restaurants?",
        "no",
        "yes",
        "How do I get there?",
        "thanks",
    ],
    &[
        "who are the keynote speakers",
        "recommend a session",
        "fairness",
        "yes",
        "thanks",
        "bye",
    ],
    &["hi", "will it rain today", "xqzzy blorp", "goodbye"],
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scratch;
    let dir: PathBuf = match std::env::args().nth(1) {
        Some(d) => d.into(),
        None => {
            scratch = tempfile::tempdir()?;
            let engine = AssistantData::seed().build_engine(
                DEFAULT_THRESHOLD,
                Arc::new(ProfileStore::in_memory()),
                Arc::new(LogStore::open(scratch.path())?),
            )?;
            let now = "2022-04-11T08:00:00Z".parse()?;
            for lines in CONVERSATIONS {
                let mut session = engine.new_session(ChannelDescriptor::webchat());
                for line in lines {
                    engine.handle_message(&mut session, line, now);
                }
            }
            scratch.path().to_path_buf()
        }
    };
    let report = AnalyticsReport::from_dir(&dir, AnalyticsView::Both)?;
    print!("{}", report.render(OutputFormat::Table)?);
    println!();
    print!("{}", report.render(OutputFormat::Json)?);
    Ok(())
}
