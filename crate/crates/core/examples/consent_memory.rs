//! Badge identification, the consent question and what gets remembered.
//!
//! One visitor allows memory and is greeted by name on a later visit; the
//! other denies and nothing is stored. The first profile is then deleted.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use concierge::admin::delete_profile;
use concierge::assistant::AssistantData;
use concierge::gateway::{flatten_text, ChannelDescriptor};
use concierge::logstore::LogStore;
use concierge::nlu::DEFAULT_THRESHOLD;
use concierge::profile::{qr_token, ProfileStore};
use concierge::{DialogueEngine, Response, Session};

fn print(who: &str, said: &str, responses: Vec<Response>) {
    println!("{who}> {said}");
    for r in responses {
        println!("  bot> {}", flatten_text(&r.payload));
    }
}

fn chat(engine: &DemoEngine, session: &mut Session, who: &str, lines: &[&str]) {
    for line in lines {
        print(who, line, engine.0.handle_message(session, line, engine.1));
    }
}

struct DemoEngine(DialogueEngine, DateTime<Utc>);

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let profiles = Arc::new(ProfileStore::open(dir.path())?);
    let log = Arc::new(LogStore::open(dir.path())?);
    profiles.register("ada", Some("Ada"))?;
    profiles.register("bob", Some("Bob"))?;
    let engine = DemoEngine(
        AssistantData::seed().build_engine(DEFAULT_THRESHOLD, profiles.clone(), log.clone())?,
        "2022-04-11T08:00:00Z".parse()?,
    );

    println!("-- Ada scans her badge and allows memory");
    let mut s = engine.0.new_session(ChannelDescriptor::robot());
    print(
        "ada",
        "[badge]",
        engine
            .0
            .handle_identify(&mut s, Some(&qr_token("ada")), engine.1),
    );
    chat(
        &engine,
        &mut s,
        "ada",
        &["yes", "recommend a session", "fairness", "no", "bye"],
    );

    println!("-- Bob scans his badge and declines");
    let mut s = engine.0.new_session(ChannelDescriptor::robot());
    print(
        "bob",
        "[badge]",
        engine
            .0
            .handle_identify(&mut s, Some(&qr_token("bob")), engine.1),
    );
    chat(
        &engine,
        &mut s,
        "bob",
        &["no", "recommend a session", "ranking", "bye"],
    );

    println!("-- Ada comes back");
    let mut s = engine.0.new_session(ChannelDescriptor::robot());
    print(
        "ada",
        "[badge]",
        engine
            .0
            .handle_identify(&mut s, Some(&qr_token("ada")), engine.1),
    );
    chat(&engine, &mut s, "ada", &["recommend a session"]);

    for id in ["ada", "bob"] {
        let p = profiles.get(id).unwrap();
        println!("{id}: consent {:?}, memory {:?}", p.consent, p.memory);
    }
    println!("audited writes: {}", profiles.audit().len());

    drop(engine);
    let report = delete_profile(dir.path(), "ada")?;
    println!(
        "deleted {}, scrubbed {} log records",
        report.user_id, report.scrubbed_records
    );
    Ok(())
}
