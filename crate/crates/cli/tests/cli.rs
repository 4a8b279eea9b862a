mod common;

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_influence-tomograph"))
}

#[test]
fn all_twice_is_a_full_cache_hit() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::fixture(dir.path());
    let first = bin().args(["all", "--config"]).arg(&config).output().unwrap();
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let out = String::from_utf8(first.stdout).unwrap();
    assert!(out.contains("6 recomputed, 0 cached"), "{out}");
    for stage in ["ingest", "graph", "clean", "embed", "entities", "discover"] {
        assert!(out.lines().any(|l| l.starts_with(stage)), "{out}");
    }
    assert!(out.contains("edges="), "{out}");

    let second = bin().args(["all", "--jobs", "2", "--config"]).arg(&config).output().unwrap();
    assert_eq!(second.status.code(), Some(0));
    let out = String::from_utf8(second.stdout).unwrap();
    assert!(out.contains("0 recomputed, 6 cached"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::fixture(dir.path());

    // Validation errors name the field and exit 1.
    let bad = bin().args(["all", "--set", "windows.shift_days=0", "--config"]).arg(&config).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("windows.shift_days"));
    let lag = bin().args(["all", "--set", "windows.lag_days=0", "--config"]).arg(&config).output().unwrap();
    assert_eq!(lag.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&lag.stderr).contains("windows.lag_days"));

    // A stage without its upstream names the stage to run first and exits 2.
    let missing = bin().args(["embed", "--config"]).arg(&config).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("run `ingest` first"));

    // Unreadable input is a runtime failure.
    let gone = bin().args(["ingest", "--set", "input.posts=\"nowhere.jsonl\"", "--config"]).arg(&config).output().unwrap();
    assert_eq!(gone.status.code(), Some(2));

    for stage in ["ingest", "graph", "clean", "embed", "entities", "discover"] {
        let ok = bin().arg(stage).arg("--config").arg(&config).output().unwrap();
        assert_eq!(ok.status.code(), Some(0), "{stage}: {}", String::from_utf8_lossy(&ok.stderr));
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::fixture(dir.path());
    let common = influence_cli::Common {
        config: Some(config),
        set: vec!["discovery.min_correlation=0.9".into()],
        preset: Some("philippine".into()),
        seed: Some(77),
        jobs: None,
    };
    let cfg = influence_cli::load_config(&common).unwrap();
    assert_eq!(cfg.discovery.min_correlation, 0.9);
    assert_eq!(cfg.windows.shift_days, 2);
    assert_eq!(cfg.seed, 77);
    assert_eq!(cfg.embed.epochs, 30);
    assert!(cfg.store.starts_with(dir.path()));
}
