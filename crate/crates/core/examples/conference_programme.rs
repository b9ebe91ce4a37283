//! Queries the shipped programme: keynotes, what is next, the schedule and
//! interest-based session suggestions.
//!
//! The first argument sets the current time (RFC 3339); defaults to the
//! morning of the first day.

use chrono::{DateTime, Utc};
use concierge::assistant::SEED_PROGRAMME;
use concierge::skill_conference::{
    interest_score, keynotes, load_programme, next_session, recommend_session, schedule_query,
    InterestProfile, ScheduleFilter,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let now: DateTime<Utc> = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "2022-04-11T08:00:00Z".into())
        .parse()?;
    let programme = load_programme(SEED_PROGRAMME)?;
    println!("now {now}");

    println!("keynotes:");
    for k in keynotes(&programme) {
        println!(
            "  {} {} by {}",
            k.start.format("%a %H:%M"),
            k.title,
            k.speakers.join(", ")
        );
    }

    match next_session(&programme, now) {
        Some(e) => println!(
            "next: {} at {} in {}",
            e.title,
            e.start.format("%H:%M"),
            e.room
        ),
        None => println!("next: nothing, the programme is over"),
    }

    println!("in Room A:");
    for e in schedule_query(&programme, &ScheduleFilter::Room("Room A".into())) {
        println!("  {} {}", e.start.format("%a %H:%M"), e.title);
    }

    let mut profile = InterestProfile::new(["recommendation", "conversational"]);
    println!("interests {:?}:", profile.interests);
    while let Some(e) = recommend_session(&programme, &profile, now) {
        println!(
            "  {:.2} {} ({})",
            interest_score(e, &profile),
            e.title,
            e.kind.as_str()
        );
        profile.recommended_ids.insert(e.id.clone());
    }
    Ok(())
}
