//! Stage orchestration with a checksum-keyed stage cache.
//!
//! Each stage maps upstream artifact bytes to its own artifact bytes. Its
//! cache key hashes the upstream checksums together with the slice of
//! configuration it reads, so a re-run with unchanged inputs reuses every
//! stage. Downstream stages always parse the serialized upstream bytes,
//! which makes cached and fresh results identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cleaning::{apply_cleaning, score_links, scores_to_tsv, CleaningError};
use crate::config::{ConfigError, PipelineConfig};
use crate::discovery::{discover, InfluenceGraph};
use crate::embedding::{build_embedding_series, EmbedError, EmbeddingSeries};
use crate::entities::{
    build_entities, build_series_table, detect_communities_with, entities_to_tsv, members_to_tsv, EntityError,
    EntityKind, EntitySeriesTable,
};
use crate::graph::{build_graph, user_projection, windows_for_range, BipartiteGraph, GraphError};
use crate::ingest::{events_to_csv, parse_events, parse_posts, posts_to_jsonl, IngestError};
use crate::store::{sha256_hex, RunManifest, RunStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Graph,
    Clean,
    Embed,
    Entities,
    Discover,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Ingest, Stage::Graph, Stage::Clean, Stage::Embed, Stage::Entities, Stage::Discover];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Graph => "graph",
            Stage::Clean => "clean",
            Stage::Embed => "embed",
            Stage::Entities => "entities",
            Stage::Discover => "discover",
        }
    }

    pub fn artifacts(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[artifact::POSTS, artifact::EVENTS, artifact::REJECTS],
            Stage::Graph => &[artifact::GRAPH],
            Stage::Clean => &[artifact::CLEAN_GRAPH, artifact::LINK_SCORES],
            Stage::Embed => &[artifact::EMBEDDINGS, artifact::EMBED_REPORT],
            Stage::Entities => &[artifact::ENTITIES, artifact::ENTITY_MEMBERS, artifact::ENTITY_SERIES],
            Stage::Discover => &[artifact::INFLUENCE, artifact::INFLUENCE_DOT],
        }
    }

    fn index(self) -> usize {
        Stage::ALL.iter().position(|s| *s == self).expect("listed stage")
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL.iter().copied().find(|st| st.name() == s).ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

pub mod artifact {
    pub const POSTS: &str = "posts.jsonl";
    pub const EVENTS: &str = "events.csv";
    pub const REJECTS: &str = "rejects.tsv";
    pub const GRAPH: &str = "graph.json";
    pub const CLEAN_GRAPH: &str = "graph.clean.json";
    pub const LINK_SCORES: &str = "link_scores.tsv";
    pub const EMBEDDINGS: &str = "embeddings.tsv";
    pub const EMBED_REPORT: &str = "embed_report.json";
    pub const ENTITIES: &str = "entities.tsv";
    pub const ENTITY_MEMBERS: &str = "entity_members.tsv";
    pub const ENTITY_SERIES: &str = "entity_series.tsv";
    pub const INFLUENCE: &str = "influence.json";
    pub const INFLUENCE_DOT: &str = "influence.dot";
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage} needs the output of stage {needs}; run `{needs}` first")]
    MissingUpstream { stage: Stage, needs: Stage },
    #[error("cannot read {path}: {source}")]
    Input { path: PathBuf, source: std::io::Error },
    #[error("cache i/o error at {path}: {source}")]
    Cache { path: PathBuf, source: std::io::Error },
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error("cleaning: {0}")]
    Cleaning(#[from] CleaningError),
    #[error("embedding: {0}")]
    Embed(#[from] EmbedError),
    #[error("entities: {0}")]
    Entities(#[from] EntityError),
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("artifact {name}: {reason}")]
    Artifact { name: String, reason: String },
}

impl PipelineError {
    /// 1 for configuration errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn bad_artifact(name: &str, reason: impl fmt::Display) -> PipelineError {
    PipelineError::Artifact { name: name.to_string(), reason: reason.to_string() }
}

pub type Artifacts = BTreeMap<String, Vec<u8>>;

fn get<'a>(artifacts: &'a Artifacts, name: &str) -> Result<&'a [u8], PipelineError> {
    artifacts.get(name).map(Vec::as_slice).ok_or_else(|| bad_artifact(name, "missing"))
}

fn text<'a>(artifacts: &'a Artifacts, name: &str) -> Result<&'a str, PipelineError> {
    std::str::from_utf8(get(artifacts, name)?).map_err(|e| bad_artifact(name, e))
}

/// Outputs of one stage plus a one-line summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub artifacts: Artifacts,
    pub summary: String,
}

fn output(pairs: Vec<(&str, Vec<u8>)>, summary: String) -> StageOutput {
    StageOutput { artifacts: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect(), summary }
}

/// The configuration slice a stage reads, as JSON. Part of its cache key.
fn stage_config(stage: Stage, cfg: &PipelineConfig) -> serde_json::Value {
    match stage {
        Stage::Ingest => serde_json::json!({ "event_types": cfg.entities.event_types }),
        Stage::Graph => serde_json::json!({ "start": cfg.input.start, "end": cfg.input.end }),
        Stage::Clean => serde_json::to_value(&cfg.cleaning).expect("serializes"),
        Stage::Embed => serde_json::json!({ "windows": cfg.windows, "embed": cfg.embed_config() }),
        Stage::Entities => serde_json::json!({ "entities": cfg.entities, "seed": cfg.seed }),
        Stage::Discover => serde_json::to_value(cfg.discovery_config()).expect("serializes"),
    }
}

const CACHE_VERSION: u32 = 1;

pub fn stage_key(stage: Stage, cfg: &PipelineConfig, upstream: &Artifacts) -> String {
    let checksums: BTreeMap<&str, String> = upstream.iter().map(|(k, v)| (k.as_str(), sha256_hex(v))).collect();
    let doc = serde_json::json!({
        "stage": stage.name(),
        "version": CACHE_VERSION,
        "upstream": checksums,
        "config": stage_config(stage, cfg),
    });
    sha256_hex(doc.to_string().as_bytes())
}

/// Raw inputs of the ingest stage.
pub fn read_inputs(cfg: &PipelineConfig) -> Result<Artifacts, PipelineError> {
    let read = |p: &Path| fs::read(p).map_err(|source| PipelineError::Input { path: p.to_path_buf(), source });
    let mut out = Artifacts::new();
    out.insert("input:posts".into(), read(&cfg.input.posts)?);
    out.insert(
        "input:events".into(),
        match &cfg.input.events {
            Some(p) => read(p)?,
            None => Vec::new(),
        },
    );
    Ok(out)
}

pub fn run_ingest(cfg: &PipelineConfig, inputs: &Artifacts) -> Result<StageOutput, PipelineError> {
    let batch = parse_posts(get(inputs, "input:posts")?)?;
    let allowed: BTreeSet<String> = cfg.entities.event_types.iter().cloned().collect();
    let raw_events = get(inputs, "input:events")?;
    let events = if raw_events.is_empty() { Default::default() } else { parse_events(raw_events, &allowed)? };
    let mut rejects = String::from("source\tline\tfield\treason\n");
    for (source, list) in [("posts", &batch.rejects), ("events", &events.rejects)] {
        for r in list.iter() {
            rejects.push_str(&format!(
                "{source}\t{}\t{}\t{}\n",
                r.line,
                crate::table::escape(r.field.as_deref().unwrap_or("")),
                crate::table::escape(&r.reason)
            ));
        }
    }
    let summary = format!(
        "posts={} post_rejects={} event_records={} event_rejects={}",
        batch.posts.len(),
        batch.rejects.len(),
        events.records.len(),
        events.rejects.len()
    );
    Ok(output(
        vec![
            (artifact::POSTS, posts_to_jsonl(&batch.posts).into_bytes()),
            (artifact::EVENTS, events_to_csv(&events.records).into_bytes()),
            (artifact::REJECTS, rejects.into_bytes()),
        ],
        summary,
    ))
}

fn load_posts(artifacts: &Artifacts) -> Result<Vec<crate::ingest::Post>, PipelineError> {
    let batch = parse_posts(get(artifacts, artifact::POSTS)?)?;
    if !batch.rejects.is_empty() {
        return Err(bad_artifact(artifact::POSTS, format!("{} unreadable records", batch.rejects.len())));
    }
    Ok(batch.posts)
}

pub fn load_events(cfg: &PipelineConfig, artifacts: &Artifacts) -> Result<Vec<crate::ingest::EventRecord>, PipelineError> {
    let allowed: BTreeSet<String> = cfg.entities.event_types.iter().cloned().collect();
    Ok(parse_events(get(artifacts, artifact::EVENTS)?, &allowed)?.records)
}

pub fn run_graph(cfg: &PipelineConfig, upstream: &Artifacts) -> Result<StageOutput, PipelineError> {
    let posts = load_posts(upstream)?;
    let graph = build_graph(&posts, cfg.date_range());
    let summary = format!(
        "users={} assertions={} edges={} range={}..{}",
        graph.users().len(),
        graph.assertions().len(),
        graph.edges().len(),
        graph.date_range().start,
        graph.date_range().end
    );
    Ok(output(vec![(artifact::GRAPH, graph.to_snapshot_bytes())], summary))
}

fn load_graph(artifacts: &Artifacts, name: &str) -> Result<BipartiteGraph, PipelineError> {
    Ok(BipartiteGraph::from_snapshot_bytes(get(artifacts, name)?)?)
}

pub fn run_clean(cfg: &PipelineConfig, upstream: &Artifacts) -> Result<StageOutput, PipelineError> {
    let graph = load_graph(upstream, artifact::GRAPH)?;
    let c = &cfg.cleaning;
    if !c.enabled || graph.edges().is_empty() {
        let summary = format!("cleaning skipped; edges={}", graph.edges().len());
        return Ok(output(
            vec![(artifact::CLEAN_GRAPH, graph.to_snapshot_bytes()), (artifact::LINK_SCORES, scores_to_tsv(&[]).into_bytes())],
            summary,
        ));
    }
    let scores = score_links(&graph, c.candidate_budget);
    let cleaned = apply_cleaning(&graph, &scores, c.add_threshold, c.remove_threshold)?;
    let added = cleaned.edges().iter().filter(|e| e.kind == crate::graph::EdgeKind::Imputed).count();
    let removed = graph.edges().len() + added - cleaned.edges().len();
    let summary = format!("scored={} removed={} added={} edges={}", scores.len(), removed, added, cleaned.edges().len());
    Ok(output(
        vec![(artifact::CLEAN_GRAPH, cleaned.to_snapshot_bytes()), (artifact::LINK_SCORES, scores_to_tsv(&scores).into_bytes())],
        summary,
    ))
}

pub fn run_embed(cfg: &PipelineConfig, upstream: &Artifacts) -> Result<StageOutput, PipelineError> {
    let graph = load_graph(upstream, artifact::CLEAN_GRAPH)?;
    let windows = windows_for_range(graph.date_range(), cfg.windows.length_days, cfg.windows.shift_days);
    let (series, reports) = build_embedding_series(&graph, &windows, &cfg.embed_config())?;
    let losses: Vec<String> = reports
        .iter()
        .map(|r| r.train.as_ref().map_or("-".to_string(), |t| format!("{:.1}", t.final_terms.total)))
        .collect();
    let summary = format!("windows={} final_loss=[{}]", windows.len(), losses.join(" "));
    let report = serde_json::to_vec_pretty(&reports).expect("reports serialize");
    Ok(output(vec![(artifact::EMBEDDINGS, series.to_tsv().into_bytes()), (artifact::EMBED_REPORT, report)], summary))
}

pub fn run_entities(cfg: &PipelineConfig, upstream: &Artifacts) -> Result<StageOutput, PipelineError> {
    let graph = load_graph(upstream, artifact::CLEAN_GRAPH)?;
    let series = EmbeddingSeries::from_tsv(text(upstream, artifact::EMBEDDINGS)?)?;
    let events = load_events(cfg, upstream)?;
    let e = &cfg.entities;
    let partition = detect_communities_with(&user_projection(&graph), cfg.seed, e.max_iters, e.min_community_size);
    let entities = build_entities(&graph, &partition, e);
    let windows: Vec<_> = series.windows.iter().map(|w| w.window).collect();
    let table = build_series_table(&entities, &series, &events, &windows);
    let count = |k: EntityKind| entities.iter().filter(|x| x.kind == k).count();
    let summary = format!(
        "physical={} influencers={} communities={} domains={} unclustered_users={}",
        count(EntityKind::Physical),
        count(EntityKind::Influencer),
        count(EntityKind::Community),
        count(EntityKind::Domain),
        partition.unclustered.len()
    );
    Ok(output(
        vec![
            (artifact::ENTITIES, entities_to_tsv(&entities).into_bytes()),
            (artifact::ENTITY_MEMBERS, members_to_tsv(&entities).into_bytes()),
            (artifact::ENTITY_SERIES, table.to_tsv().into_bytes()),
        ],
        summary,
    ))
}

pub fn run_discover(cfg: &PipelineConfig, upstream: &Artifacts) -> Result<StageOutput, PipelineError> {
    let table = EntitySeriesTable::from_tsv(text(upstream, artifact::ENTITY_SERIES)?)?;
    let graph = discover(&table.series, &cfg.discovery_config());
    let summary = format!(
        "entities={} pairs={} edges={} max_lag_windows={}",
        graph.entities.len(),
        graph.pairs.len(),
        graph.edges.len(),
        graph.config.max_lag_windows
    );
    Ok(output(
        vec![(artifact::INFLUENCE, graph.to_json().into_bytes()), (artifact::INFLUENCE_DOT, graph.to_dot().into_bytes())],
        summary,
    ))
}

pub fn load_influence(artifacts: &Artifacts) -> Result<InfluenceGraph, PipelineError> {
    InfluenceGraph::from_json(text(artifacts, artifact::INFLUENCE)?).map_err(|e| bad_artifact(artifact::INFLUENCE, e))
}

/// Artifacts a stage reads.
fn inputs_of(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Ingest => &["input:posts", "input:events"],
        Stage::Graph => &[artifact::POSTS],
        Stage::Clean => &[artifact::GRAPH],
        Stage::Embed => &[artifact::CLEAN_GRAPH],
        Stage::Entities => &[artifact::CLEAN_GRAPH, artifact::EMBEDDINGS, artifact::EVENTS],
        Stage::Discover => &[artifact::ENTITY_SERIES],
    }
}

pub fn run_stage(stage: Stage, cfg: &PipelineConfig, upstream: &Artifacts) -> Result<StageOutput, PipelineError> {
    match stage {
        Stage::Ingest => run_ingest(cfg, upstream),
        Stage::Graph => run_graph(cfg, upstream),
        Stage::Clean => run_clean(cfg, upstream),
        Stage::Embed => run_embed(cfg, upstream),
        Stage::Entities => run_entities(cfg, upstream),
        Stage::Discover => run_discover(cfg, upstream),
    }
}

/// On-disk stage cache under `<store>/cache/<stage>/<key>/`.
#[derive(Debug, Clone)]
pub struct StageCache {
    root: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheIndex {
    summary: String,
    checksums: BTreeMap<String, String>,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn dir(&self, stage: Stage, key: &str) -> PathBuf {
        self.root.join(stage.name()).join(key)
    }

    /// A verified cache entry; corrupt entries count as misses.
    pub fn get(&self, stage: Stage, key: &str) -> Option<StageOutput> {
        let dir = self.dir(stage, key);
        let index: CacheIndex = serde_json::from_slice(&fs::read(dir.join("index.json")).ok()?).ok()?;
        let mut artifacts = Artifacts::new();
        for (name, sum) in &index.checksums {
            let bytes = fs::read(dir.join(name)).ok()?;
            if &sha256_hex(&bytes) != sum {
                log::warn!("cache entry {stage}/{key} is corrupt; recomputing");
                return None;
            }
            artifacts.insert(name.clone(), bytes);
        }
        Some(StageOutput { artifacts, summary: index.summary })
    }

    pub fn put(&self, stage: Stage, key: &str, out: &StageOutput) -> Result<(), PipelineError> {
        let final_dir = self.dir(stage, key);
        if final_dir.join("index.json").is_file() {
            return Ok(());
        }
        let parent = self.root.join(stage.name());
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PipelineError::Cache { path, source }
        };
        fs::create_dir_all(&parent).map_err(io(&parent))?;
        let tmp = parent.join(format!(".tmp-{key}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&tmp);
        fs::create_dir(&tmp).map_err(io(&tmp))?;
        for (name, bytes) in &out.artifacts {
            fs::write(tmp.join(name), bytes).map_err(io(&tmp))?;
        }
        let index = CacheIndex {
            summary: out.summary.clone(),
            checksums: out.artifacts.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        };
        fs::write(tmp.join("index.json"), serde_json::to_vec_pretty(&index).expect("index serializes")).map_err(io(&tmp))?;
        match fs::rename(&tmp, &final_dir) {
            Ok(()) => Ok(()),
            // Another process committed the same key first.
            Err(_) if final_dir.join("index.json").is_file() => {
                let _ = fs::remove_dir_all(&tmp);
                Ok(())
            }
            Err(e) => Err(PipelineError::Cache { path: final_dir, source: e }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Stage(Stage),
    All,
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            Ok(Target::All)
        } else {
            s.parse().map(Target::Stage)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub cached: bool,
    pub key: String,
    pub summary: String,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
    pub manifest: RunManifest,
    pub artifacts: Artifacts,
}

impl PipelineReport {
    /// Artifact name to SHA-256, as recorded in the manifest.
    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.manifest.artifacts.iter().map(|(k, v)| (k.clone(), v.sha256.clone())).collect()
    }

    pub fn recomputed(&self) -> usize {
        self.stages.iter().filter(|s| !s.cached).count()
    }
}

/// Runs `target` (and, for `All`, every stage before it), then saves a run
/// snapshot holding every artifact produced so far. A single stage reuses
/// cached upstream outputs and fails if any is missing.
pub fn run(cfg: &PipelineConfig, target: Target) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    let cache = StageCache::new(cfg.store.join("cache"));
    let last = match target {
        Target::All => Stage::Discover,
        Target::Stage(s) => s,
    };
    let mut available = read_inputs(cfg)?;
    let mut produced = Artifacts::new();
    let mut reports = Vec::new();
    for stage in Stage::ALL.iter().copied().take(last.index() + 1) {
        let upstream: Artifacts = inputs_of(stage)
            .iter()
            .map(|n| Ok((n.to_string(), get(&available, n)?.to_vec())))
            .collect::<Result<_, PipelineError>>()?;
        let key = stage_key(stage, cfg, &upstream);
        let must_run = target == Target::All || stage == last;
        let (out, cached) = match cache.get(stage, &key) {
            Some(out) => (out, true),
            None if must_run => {
                let out = run_stage(stage, cfg, &upstream)?;
                cache.put(stage, &key, &out)?;
                (out, false)
            }
            None => return Err(PipelineError::MissingUpstream { stage: last, needs: stage }),
        };
        log::info!("{stage}: {}{}", out.summary, if cached { " (cached)" } else { "" });
        reports.push(StageReport { stage, cached, key, summary: out.summary.clone() });
        for (k, v) in &out.artifacts {
            available.insert(k.clone(), v.clone());
            produced.insert(k.clone(), v.clone());
        }
    }
    let absent: Vec<String> = Stage::ALL.iter().skip(last.index() + 1).map(|s| s.name().to_string()).collect();
    let manifest = RunStore::new(&cfg.store).save_run(&produced, cfg, &absent)?;
    Ok(PipelineReport { stages: reports, manifest, artifacts: produced })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{corpus, daily_events, CorpusSpec};

    fn small_config(dir: &Path) -> PipelineConfig {
        let spec = CorpusSpec { users: 60, posts: 400, days: 12, seed: 3, ..Default::default() };
        let posts = corpus(&spec);
        fs::write(dir.join("posts.jsonl"), posts_to_jsonl(&posts)).unwrap();
        let mut cfg = PipelineConfig::default();
        let events = daily_events(&cfg.entities.event_types, spec.start, spec.days, 3, 1);
        fs::write(dir.join("events.csv"), events_to_csv(&events)).unwrap();
        cfg.input.posts = dir.join("posts.jsonl");
        cfg.input.events = Some(dir.join("events.csv"));
        cfg.store = dir.join("store");
        cfg.windows.length_days = 4;
        cfg.windows.shift_days = 1;
        cfg.windows.lag_days = 2;
        cfg.embed.epochs = 30;
        cfg.discovery.min_overlap = 3;
        cfg
    }

    #[test]
    fn single_stage_needs_upstream() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let err = run(&cfg, Target::Stage(Stage::Embed)).unwrap_err();
        assert!(matches!(err, PipelineError::MissingUpstream { needs: Stage::Ingest, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
        run(&cfg, Target::Stage(Stage::Ingest)).unwrap();
        run(&cfg, Target::Stage(Stage::Graph)).unwrap();
        let err = run(&cfg, Target::Stage(Stage::Embed)).unwrap_err();
        assert!(err.to_string().contains("run `clean` first"), "{err}");
    }

    #[test]
    fn rerun_is_a_full_cache_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let first = run(&cfg, Target::All).unwrap();
        assert_eq!(first.recomputed(), 6);
        let second = run(&cfg, Target::All).unwrap();
        assert_eq!(second.recomputed(), 0);
        assert_eq!(first.checksums(), second.checksums());
        assert_ne!(first.manifest.run_id, second.manifest.run_id);
        let loaded = RunStore::new(&cfg.store).load_run(&second.manifest.run_id).unwrap();
        assert_eq!(loaded.artifacts, second.artifacts);
    }

    #[test]
    fn invalid_config_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.windows.shift_days = 0;
        assert_eq!(run(&cfg, Target::All).unwrap_err().exit_code(), 1);
    }
}
