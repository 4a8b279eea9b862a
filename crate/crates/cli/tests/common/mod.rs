use std::fs;
use std::path::Path;

use influence_core::synth::{corpus, daily_events, events_to_csv, posts_to_jsonl, CorpusSpec};

/// Writes a small corpus and a config pointing at it; returns the config path.
pub fn fixture(dir: &Path) -> std::path::PathBuf {
    let spec = CorpusSpec { users: 60, posts: 400, days: 12, seed: 11, ..Default::default() };
    fs::write(dir.join("posts.jsonl"), posts_to_jsonl(&corpus(&spec))).unwrap();
    let types = influence_core::entities::default_event_types();
    fs::write(dir.join("events.csv"), events_to_csv(&daily_events(&types, spec.start, spec.days, 3, 2))).unwrap();
    let config = dir.join("pipeline.toml");
    fs::write(
        &config,
        r#"seed = 5
store = "store"

[input]
posts = "posts.jsonl"
events = "events.csv"

[windows]
length_days = 4
shift_days = 1
lag_days = 2

[embed]
epochs = 30

[discovery]
min_overlap = 3
min_correlation = 0.5
"#,
    )
    .unwrap();
    config
}
