//! Read-only `/api/v1` handler over stored runs, independent of any HTTP
//! server. Responses are compact JSON and byte-stable for a fixed run and
//! query.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::Serialize;

use crate::discovery::{pair_table, DiscoveryConfig, InfluenceEdge, InfluenceGraph, LagRow, PairSummary};
use crate::entities::{entities_from_tsv, Entity, EntityKind, EntitySeriesTable, SeriesValue};
use crate::graph::NodeKind;
use crate::ingest::{extract_urls, parse_posts, Post};
use crate::pipeline::artifact;
use crate::store::{format_instant, LoadedRun, RunManifest, RunStore, StoreError};

pub const PREFIX: &str = "/api/v1";
pub const EXCERPT_CHARS: usize = 280;
pub const DEFAULT_POST_LIMIT: usize = 20;
pub const MAX_POST_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl ApiResponse {
    pub const CONTENT_TYPE: &'static str = "application/json";

    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        let mut body = serde_json::to_vec(value).expect("response serializes");
        body.push(b'\n');
        Self { status, body }
    }

    pub fn text(&self) -> &str {
        std::str::from_utf8(&self.body).expect("json is utf-8")
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Debug, Serialize)]
struct ErrorDetail<'a> {
    status: u16,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

#[derive(Debug)]
enum ApiError {
    NotFound(String),
    BadRequest { field: &'static str, message: String },
    MethodNotAllowed,
    Internal(String),
}

impl ApiError {
    fn into_response(self) -> ApiResponse {
        let (status, message, field) = match self {
            ApiError::NotFound(m) => (404, m, None),
            ApiError::BadRequest { field, message } => (400, message, Some(field)),
            ApiError::MethodNotAllowed => (405, "the API is read-only; only GET is supported".to_string(), None),
            ApiError::Internal(m) => (500, m, None),
        };
        ApiResponse::json(status, &ErrorBody { error: ErrorDetail { status, message, field } })
    }
}

fn bad(field: &'static str, message: impl Into<String>) -> ApiError {
    ApiError::BadRequest { field, message: message.into() }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::RunNotFound(_) | StoreError::ArtifactNotFound { .. } => ApiError::NotFound(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

/// Parsed, immutable view of one committed run.
#[derive(Debug)]
pub struct RunView {
    pub manifest: RunManifest,
    pub entities: Vec<Entity>,
    pub series: EntitySeriesTable,
    pub influence: InfluenceGraph,
    pub posts: Vec<Post>,
    /// Repost, reply and quote count per post id.
    pub engagement: HashMap<String, usize>,
}

impl RunView {
    pub fn from_loaded(run: &LoadedRun) -> Result<Self, String> {
        let need = |name: &str| {
            run.text(name).ok_or_else(|| format!("run {} has no {name}; run the full pipeline first", run.manifest.run_id))
        };
        let entities = entities_from_tsv(need(artifact::ENTITIES)?, need(artifact::ENTITY_MEMBERS)?).map_err(|e| e.to_string())?;
        let series = EntitySeriesTable::from_tsv(need(artifact::ENTITY_SERIES)?).map_err(|e| e.to_string())?;
        let influence = InfluenceGraph::from_json(need(artifact::INFLUENCE)?).map_err(|e| e.to_string())?;
        let posts = parse_posts(need(artifact::POSTS)?.as_bytes()).map_err(|e| e.to_string())?.posts;
        let mut engagement: HashMap<String, usize> = HashMap::new();
        for p in &posts {
            let mut targets: BTreeSet<&String> = BTreeSet::new();
            targets.extend(p.repost_of.iter().chain(&p.reply_to).chain(&p.quote_of));
            for t in targets {
                *engagement.entry(t.clone()).or_default() += 1;
            }
        }
        Ok(Self { manifest: run.manifest.clone(), entities, series, influence, posts, engagement })
    }

    fn entity(&self, id: &str) -> Result<&Entity, ApiError> {
        self.entities.iter().find(|e| e.entity_id == id).ok_or_else(|| ApiError::NotFound(format!("entity {id:?} not found")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntitySummary {
    pub id: String,
    pub kind: EntityKind,
    pub label: String,
    pub size: usize,
}

impl From<&Entity> for EntitySummary {
    fn from(e: &Entity) -> Self {
        Self { id: e.entity_id.clone(), kind: e.kind, label: e.label.clone(), size: e.members.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PostSummary {
    pub post_id: String,
    pub excerpt: String,
    pub timestamp: String,
    pub engagement: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntityDetail {
    pub entity: EntitySummary,
    pub from_window: usize,
    pub to_window: usize,
    pub from: String,
    pub to: String,
    pub posts: Vec<PostSummary>,
}

/// At most [`EXCERPT_CHARS`] characters; longer text is cut and ends in an
/// ellipsis.
pub fn excerpt(text: &str) -> String {
    if text.chars().count() <= EXCERPT_CHARS {
        return text.to_string();
    }
    let mut out: String = text.chars().take(EXCERPT_CHARS - 1).collect();
    out.push('…');
    out
}

pub struct Api {
    store: RunStore,
    runs: RwLock<HashMap<String, Arc<RunView>>>,
}

fn decode(segment: &str) -> String {
    url::form_urlencoded::parse(format!("x={}", segment.replace('+', "%2B")).as_bytes())
        .next()
        .map(|(_, v)| v.into_owned())
        .unwrap_or_default()
}

type Query = BTreeMap<String, String>;

fn parse_query(query: Option<&str>) -> Query {
    query.map(|q| url::form_urlencoded::parse(q.as_bytes()).into_owned().collect()).unwrap_or_default()
}

fn parse_bool(field: &'static str, raw: &str) -> Result<bool, ApiError> {
    match raw {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(bad(field, format!("{field} must be true or false, got {raw:?}"))),
    }
}

fn parse_usize(field: &'static str, raw: &str) -> Result<usize, ApiError> {
    raw.parse().map_err(|_| bad(field, format!("{field} must be a nonnegative integer, got {raw:?}")))
}

impl Api {
    pub fn new(store: RunStore) -> Self {
        Self { store, runs: RwLock::new(HashMap::new()) }
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    /// Dispatches one request. `path` excludes the query string.
    pub fn handle(&self, method: &str, path: &str, query: Option<&str>) -> ApiResponse {
        match self.route(method, path, &parse_query(query)) {
            Ok(r) => r,
            Err(e) => e.into_response(),
        }
    }

    pub fn get(&self, path_and_query: &str) -> ApiResponse {
        let (path, query) = match path_and_query.split_once('?') {
            Some((p, q)) => (p, Some(q)),
            None => (path_and_query, None),
        };
        self.handle("GET", path, query)
    }

    fn view(&self, run_id: &str) -> Result<Arc<RunView>, ApiError> {
        if let Some(v) = self.runs.read().expect("run cache lock").get(run_id) {
            return Ok(v.clone());
        }
        let loaded = self.store.load_run(run_id)?;
        let view = Arc::new(RunView::from_loaded(&loaded).map_err(ApiError::NotFound)?);
        self.runs.write().expect("run cache lock").insert(run_id.to_string(), view.clone());
        Ok(view)
    }

    fn route(&self, method: &str, path: &str, query: &Query) -> Result<ApiResponse, ApiError> {
        let rest = path.strip_prefix(PREFIX).ok_or_else(|| ApiError::NotFound(format!("no route for {path}")))?;
        let segments: Vec<String> = rest.trim_end_matches('/').split('/').skip(1).map(decode).collect();
        let segs: Vec<&str> = segments.iter().map(String::as_str).collect();
        if !matches!(segs.as_slice(), [] | [""]) && method != "GET" {
            return Err(ApiError::MethodNotAllowed);
        }
        match segs.as_slice() {
            ["runs"] => self.runs(),
            ["runs", run, "entities"] => self.entities(run),
            ["runs", run, "influence-graph"] => self.influence_graph(run, query),
            ["runs", run, "heatmap"] => self.heatmap(run),
            ["runs", run, "entities", id, "series"] => self.series(run, id),
            ["runs", run, "entities", id, "posts"] => self.posts(run, id, query),
            ["runs", run, "pairs", a, b] => self.pair(run, a, b),
            _ => Err(ApiError::NotFound(format!("no route for {path}"))),
        }
    }

    fn runs(&self) -> Result<ApiResponse, ApiError> {
        #[derive(Serialize)]
        struct Runs {
            runs: Vec<RunManifest>,
        }
        Ok(ApiResponse::json(200, &Runs { runs: self.store.list_runs()? }))
    }

    fn entities(&self, run: &str) -> Result<ApiResponse, ApiError> {
        let view = self.view(run)?;
        #[derive(Serialize)]
        struct Body<'a> {
            run_id: &'a str,
            entities: Vec<EntitySummary>,
        }
        Ok(ApiResponse::json(200, &Body { run_id: run, entities: view.entities.iter().map(EntitySummary::from).collect() }))
    }

    fn influence_graph(&self, run: &str, query: &Query) -> Result<ApiResponse, ApiError> {
        let view = self.view(run)?;
        let cfg = &view.influence.config;
        let min_corr = match query.get("min_corr") {
            Some(raw) => {
                let v: f64 = raw.parse().map_err(|_| bad("min_corr", format!("min_corr must be a number, got {raw:?}")))?;
                if !(v.is_finite() && v > 0.0) {
                    return Err(bad("min_corr", "min_corr must be positive and finite"));
                }
                v
            }
            None => cfg.min_correlation,
        };
        let use_absolute = match query.get("use_absolute") {
            Some(raw) => parse_bool("use_absolute", raw)?,
            None => cfg.use_absolute,
        };
        let filter: Option<BTreeSet<String>> = match query.get("entities") {
            Some(raw) => {
                let ids: BTreeSet<String> = raw.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect();
                if ids.is_empty() {
                    return Err(bad("entities", "entities must list at least one entity id"));
                }
                for id in &ids {
                    view.entity(id)?;
                }
                Some(ids)
            }
            None => None,
        };
        let edges: Vec<InfluenceEdge> = view
            .influence
            .edges_at(min_corr, use_absolute)
            .into_iter()
            .filter(|e| filter.as_ref().is_none_or(|f| f.contains(&e.source) || f.contains(&e.target)))
            .collect();
        let nodes: Vec<EntitySummary> = match &filter {
            None => view.entities.iter().map(EntitySummary::from).collect(),
            Some(f) => {
                let keep: BTreeSet<&str> =
                    f.iter().map(String::as_str).chain(edges.iter().flat_map(|e| [e.source.as_str(), e.target.as_str()])).collect();
                view.entities.iter().filter(|e| keep.contains(e.entity_id.as_str())).map(EntitySummary::from).collect()
            }
        };
        #[derive(Serialize)]
        struct Body<'a> {
            run_id: &'a str,
            min_corr: f64,
            use_absolute: bool,
            nodes: Vec<EntitySummary>,
            edges: Vec<InfluenceEdge>,
        }
        Ok(ApiResponse::json(200, &Body { run_id: run, min_corr, use_absolute, nodes, edges }))
    }

    fn heatmap(&self, run: &str) -> Result<ApiResponse, ApiError> {
        let view = self.view(run)?;
        let m = view.influence.heatmap();
        #[derive(Serialize)]
        struct Body<'a> {
            run_id: &'a str,
            entities: Vec<&'a str>,
            r: Vec<Vec<Option<f64>>>,
            lag: Vec<Vec<Option<usize>>>,
        }
        Ok(ApiResponse::json(
            200,
            &Body {
                run_id: run,
                entities: view.influence.entities.iter().map(|e| e.entity_id.as_str()).collect(),
                r: m.iter().map(|row| row.iter().map(|c| c.map(|x| x.0)).collect()).collect(),
                lag: m.iter().map(|row| row.iter().map(|c| c.map(|x| x.1)).collect()).collect(),
            },
        ))
    }

    fn series(&self, run: &str, id: &str) -> Result<ApiResponse, ApiError> {
        let view = self.view(run)?;
        let entity = view.entity(id)?;
        let series = view.series.get(id).ok_or_else(|| ApiError::NotFound(format!("no series for entity {id:?}")))?;
        #[derive(Serialize)]
        struct Window {
            index: usize,
            start: String,
            end: String,
        }
        #[derive(Serialize)]
        #[serde(untagged)]
        enum Value {
            Vector(Vec<f64>),
            Scalar(f64),
        }
        #[derive(Serialize)]
        struct Body<'a> {
            run_id: &'a str,
            entity: EntitySummary,
            dim: usize,
            windows: Vec<Window>,
            values: Vec<Option<Value>>,
        }
        let windows = view
            .series
            .windows
            .iter()
            .map(|w| Window { index: w.index, start: w.start.to_string(), end: w.end().to_string() })
            .collect();
        let values = series
            .values
            .iter()
            .map(|v| match v {
                SeriesValue::Vector(x) => Some(Value::Vector(x.clone())),
                SeriesValue::Scalar(s) => Some(Value::Scalar(*s)),
                SeriesValue::Missing => None,
            })
            .collect();
        let dim = if entity.kind == EntityKind::Physical { 1 } else { view.series.dim };
        Ok(ApiResponse::json(200, &Body { run_id: run, entity: entity.into(), dim, windows, values }))
    }

    fn pair(&self, run: &str, a: &str, b: &str) -> Result<ApiResponse, ApiError> {
        let view = self.view(run)?;
        view.entity(a)?;
        view.entity(b)?;
        if a == b {
            return Err(bad("b", "a pair needs two distinct entities"));
        }
        let sa = view.series.get(a).ok_or_else(|| ApiError::NotFound(format!("no series for entity {a:?}")))?;
        let sb = view.series.get(b).ok_or_else(|| ApiError::NotFound(format!("no series for entity {b:?}")))?;
        let cfg: &DiscoveryConfig = &view.influence.config;
        #[derive(Serialize)]
        struct Body<'a> {
            run_id: &'a str,
            a: &'a str,
            b: &'a str,
            max_lag_windows: usize,
            min_overlap: usize,
            summary: Option<&'a PairSummary>,
            rows: Vec<LagRow>,
        }
        Ok(ApiResponse::json(
            200,
            &Body {
                run_id: run,
                a,
                b,
                max_lag_windows: cfg.max_lag_windows,
                min_overlap: cfg.min_overlap,
                summary: view.influence.pair(a, b),
                rows: pair_table(sa, sb, cfg),
            },
        ))
    }

    fn posts(&self, run: &str, id: &str, query: &Query) -> Result<ApiResponse, ApiError> {
        let view = self.view(run)?;
        let entity = view.entity(id)?;
        let windows = &view.series.windows;
        let last = windows.len().saturating_sub(1);
        let from_window = query.get("from").map(|r| parse_usize("from", r)).transpose()?.unwrap_or(0);
        let to_window = query.get("to").map(|r| parse_usize("to", r)).transpose()?.unwrap_or(last);
        if windows.is_empty() || from_window > last {
            return Err(bad("from", format!("from must be a window index in 0..={last}")));
        }
        if to_window > last {
            return Err(bad("to", format!("to must be a window index in 0..={last}")));
        }
        let limit = query.get("limit").map(|r| parse_usize("limit", r)).transpose()?.unwrap_or(DEFAULT_POST_LIMIT);
        if limit > MAX_POST_LIMIT {
            return Err(bad("limit", format!("limit must be at most {MAX_POST_LIMIT}")));
        }
        let start = windows[from_window].start;
        let end = windows[to_window].end();
        let in_range = |t: &DateTime<Utc>| from_window <= to_window && t.date_naive() >= start && t.date_naive() < end;

        let users: BTreeSet<&str> = entity.member_nodes().filter(|n| n.kind == NodeKind::User).map(|n| n.key.as_str()).collect();
        let urls: BTreeSet<&str> =
            entity.member_nodes().filter(|n| n.kind == NodeKind::Assertion).map(|n| n.key.as_str()).collect();
        let belongs = |p: &Post| match entity.kind {
            EntityKind::Influencer | EntityKind::Community => users.contains(p.author_id.as_str()),
            EntityKind::Domain => extract_urls(p).iter().any(|d| urls.contains(d.url.as_str())),
            EntityKind::Physical => false,
        };
        let mut posts: Vec<(&Post, usize)> = view
            .posts
            .iter()
            .filter(|p| in_range(&p.timestamp) && belongs(p))
            .map(|p| (p, view.engagement.get(&p.post_id).copied().unwrap_or(0)))
            .collect();
        posts.sort_by(|x, y| y.1.cmp(&x.1).then(y.0.timestamp.cmp(&x.0.timestamp)).then(x.0.post_id.cmp(&y.0.post_id)));
        let posts = posts
            .into_iter()
            .take(limit)
            .map(|(p, n)| PostSummary {
                post_id: p.post_id.clone(),
                excerpt: excerpt(&p.text),
                timestamp: format_instant(&p.timestamp),
                engagement: n,
            })
            .collect();
        let detail = EntityDetail {
            entity: entity.into(),
            from_window,
            to_window,
            from: start.to_string(),
            to: end.to_string(),
            posts,
        };
        Ok(ApiResponse::json(200, &detail))
    }
}
