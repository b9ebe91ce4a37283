//! Ranks catalog items as preferences are stated, rejected and accepted.
//!
//! Uses the demo catalog, or a catalog file given as the first argument.

use concierge::assistant::SEED_POI_CATALOG;
use concierge::skill_poi::{
    load_catalog, recommend, select_transport, PoiCategory, PoiPreferences, TransportMode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let json = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => SEED_POI_CATALOG.to_string(),
    };
    let catalog = load_catalog(&json)?;
    println!(
        "{} items, keywords: {:?}",
        catalog.len(),
        catalog.keywords()
    );

    let mut prefs = PoiPreferences {
        category: Some(PoiCategory::Restaurant),
        ..Default::default()
    };
    let show = |step: &str, prefs: &PoiPreferences| match recommend(&catalog, prefs) {
        Some(item) => println!(
            "{step:<28} -> {} ({:.1}, {} reviews, {})",
            item.name,
            item.rating,
            item.review_count,
            item.price_glyphs()
        ),
        None => println!("{step:<28} -> nothing left"),
    };

    show("any restaurant", &prefs);
    prefs.like("indian");
    show("likes indian", &prefs);
    prefs.dislike("spicy");
    show("dislikes spicy", &prefs);
    if let Some(first) = recommend(&catalog, &prefs).map(|i| i.id.clone()) {
        prefs.reject(&first);
        show("rejects the first offer", &prefs);
    }
    prefs.like("spicy");
    show("changes mind on spicy", &prefs);

    if let Some(item) = recommend(&catalog, &prefs) {
        prefs.accept(&item.id.clone());
        for mode in [
            None,
            Some(TransportMode::Walk),
            Some(TransportMode::Bus),
            Some(TransportMode::Taxi),
        ] {
            if let Some(t) = select_transport(item, mode) {
                let asked = match mode {
                    None => "fastest".to_string(),
                    Some(m) if m == t.mode => m.as_str().to_string(),
                    Some(m) => format!("{} (n/a)", m.as_str()),
                };
                println!(
                    "  {asked:<10} {} min by {}: {}",
                    t.duration_minutes,
                    t.mode.as_str(),
                    t.instructions
                );
            }
        }
    }
    Ok(())
}
