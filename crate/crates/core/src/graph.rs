//! Bipartite user–assertion interaction graph, time-window slicing and the
//! user–user interaction projection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Days, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{extract_urls, Post};

pub const GRAPH_FORMAT: &str = "influence-graph/1";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph snapshot is not valid: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("unsupported graph snapshot format {0:?}")]
    Format(String),
    #[error("graph snapshot inconsistent: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    User,
    Assertion,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub key: String,
}

impl NodeId {
    pub fn user(key: impl Into<String>) -> Self {
        Self { kind: NodeKind::User, key: key.into() }
    }

    pub fn assertion(key: impl Into<String>) -> Self {
        Self { kind: NodeKind::Assertion, key: key.into() }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::User => write!(f, "user:{}", self.key),
            NodeKind::Assertion => write!(f, "assertion:{}", self.key),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Post,
    Repost,
    Reply,
    Quote,
    CiteUrl,
    /// Added by graph cleaning, never observed.
    Imputed,
}

impl EdgeKind {
    pub fn is_engagement(self) -> bool {
        matches!(self, EdgeKind::Repost | EdgeKind::Reply | EdgeKind::Quote)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssertionKind {
    Post,
    Url,
    /// Referenced post that is absent from the collected batch.
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionMeta {
    pub kind: AssertionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
}

impl AssertionMeta {
    fn stub() -> Self {
        Self { kind: AssertionKind::Stub, author: None, timestamp: None, text: String::new(), host: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub user: String,
    pub assertion: String,
    pub kind: EdgeKind,
    pub timestamp: DateTime<Utc>,
}

/// Half-open calendar range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        let d = t.date_naive();
        d >= self.start && d < self.end
    }

    pub fn days(&self) -> i64 {
        (self.end - self.start).num_days()
    }

    /// Midnight-aligned midpoint instant of the range.
    pub fn midpoint(&self) -> DateTime<Utc> {
        let start = self.start.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        start + chrono::Duration::seconds(self.days().max(0) * 86_400 / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: NaiveDate,
    pub length_days: u32,
    pub index: usize,
}

impl TimeWindow {
    pub fn end(&self) -> NaiveDate {
        self.start + Days::new(u64::from(self.length_days))
    }

    pub fn range(&self) -> DateRange {
        DateRange { start: self.start, end: self.end() }
    }

    pub fn contains_date(&self, d: NaiveDate) -> bool {
        d >= self.start && d < self.end()
    }
}

/// Windows of `length_days` starting at `range.start` and advancing by
/// `shift_days`, as many as fit inside the range (at least one).
pub fn windows_for_range(range: DateRange, length_days: u32, shift_days: u32) -> Vec<TimeWindow> {
    assert!(length_days >= 1 && shift_days >= 1);
    let span = range.days().max(0);
    let count = if span <= i64::from(length_days) {
        1
    } else {
        ((span - i64::from(length_days)) / i64::from(shift_days) + 1) as usize
    };
    (0..count)
        .map(|index| TimeWindow {
            start: range.start + Days::new(index as u64 * u64::from(shift_days)),
            length_days,
            index,
        })
        .collect()
}

/// Users and assertions joined by typed, timestamped edges. Every edge runs
/// from a user to an assertion, so the graph is bipartite by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteGraph {
    date_range: DateRange,
    users: BTreeSet<String>,
    assertions: BTreeMap<String, AssertionMeta>,
    edges: Vec<Edge>,
}

impl BipartiteGraph {
    /// Assembles a graph from parts; edges are sorted and validated.
    pub fn from_parts(
        date_range: DateRange,
        users: BTreeSet<String>,
        assertions: BTreeMap<String, AssertionMeta>,
        mut edges: Vec<Edge>,
    ) -> Result<Self, GraphError> {
        for e in &edges {
            if !users.contains(&e.user) {
                return Err(GraphError::Inconsistent(format!("edge references unknown user {:?}", e.user)));
            }
            if !assertions.contains_key(&e.assertion) {
                return Err(GraphError::Inconsistent(format!("edge references unknown assertion {:?}", e.assertion)));
            }
            if !date_range.contains(&e.timestamp) {
                return Err(GraphError::Inconsistent(format!("edge timestamp {} outside graph range", e.timestamp)));
            }
        }
        edges.sort();
        Ok(Self { date_range, users, assertions, edges })
    }

    pub fn empty(date_range: DateRange) -> Self {
        Self { date_range, users: BTreeSet::new(), assertions: BTreeMap::new(), edges: Vec::new() }
    }

    pub fn date_range(&self) -> DateRange {
        self.date_range
    }

    pub fn users(&self) -> &BTreeSet<String> {
        &self.users
    }

    pub fn assertions(&self) -> &BTreeMap<String, AssertionMeta> {
        &self.assertions
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.users.len() + self.assertions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        match node.kind {
            NodeKind::User => self.users.contains(&node.key),
            NodeKind::Assertion => self.assertions.contains_key(&node.key),
        }
    }

    /// All nodes, users first, each group sorted by key.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.users.iter().map(NodeId::user).chain(self.assertions.keys().map(NodeId::assertion))
    }

    /// Edge count per node, multi-edges counted.
    pub fn degrees(&self) -> HashMap<NodeId, usize> {
        let mut deg: HashMap<NodeId, usize> = self.nodes().map(|n| (n, 0)).collect();
        for e in &self.edges {
            *deg.get_mut(&NodeId::user(e.user.as_str())).expect("user node") += 1;
            *deg.get_mut(&NodeId::assertion(e.assertion.as_str())).expect("assertion node") += 1;
        }
        deg
    }

    /// Same nodes, different edge list.
    pub fn with_edges(&self, edges: Vec<Edge>) -> Result<Self, GraphError> {
        Self::from_parts(self.date_range, self.users.clone(), self.assertions.clone(), edges)
    }

    /// Subgraph induced by the given edges: only nodes incident to them survive.
    fn from_edge_subset(&self, date_range: DateRange, edges: Vec<Edge>) -> Self {
        let users: BTreeSet<String> = edges.iter().map(|e| e.user.clone()).collect();
        let assertions: BTreeMap<String, AssertionMeta> = edges
            .iter()
            .map(|e| (e.assertion.clone(), self.assertions[&e.assertion].clone()))
            .collect();
        Self { date_range, users, assertions, edges }
    }

    /// Keeps the edges whose both endpoints satisfy `keep`.
    pub fn restrict_to(&self, keep: &BTreeSet<NodeId>) -> Self {
        let edges = self
            .edges
            .iter()
            .filter(|e| keep.contains(&NodeId::user(e.user.as_str())) && keep.contains(&NodeId::assertion(e.assertion.as_str())))
            .cloned()
            .collect();
        self.from_edge_subset(self.date_range, edges)
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let snapshot = GraphSnapshot {
            format: GRAPH_FORMAT.to_string(),
            header: SnapshotHeader {
                users: self.users.len(),
                assertions: self.assertions.len(),
                edges: self.edges.len(),
                date_start: self.date_range.start,
                date_end: self.date_range.end,
            },
            users: self.users.iter().cloned().collect(),
            assertions: self
                .assertions
                .iter()
                .map(|(key, meta)| SnapshotAssertion { key: key.clone(), meta: meta.clone() })
                .collect(),
            edges: self.edges.clone(),
        };
        let mut bytes = serde_json::to_vec(&snapshot).expect("graph snapshot serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        let snap: GraphSnapshot = serde_json::from_slice(bytes)?;
        if snap.format != GRAPH_FORMAT {
            return Err(GraphError::Format(snap.format));
        }
        let range = DateRange { start: snap.header.date_start, end: snap.header.date_end };
        let users: BTreeSet<String> = snap.users.into_iter().collect();
        let assertions: BTreeMap<String, AssertionMeta> =
            snap.assertions.into_iter().map(|a| (a.key, a.meta)).collect();
        if users.len() != snap.header.users
            || assertions.len() != snap.header.assertions
            || snap.edges.len() != snap.header.edges
        {
            return Err(GraphError::Inconsistent("header counts do not match tables".into()));
        }
        Self::from_parts(range, users, assertions, snap.edges)
    }
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    users: usize,
    assertions: usize,
    edges: usize,
    date_start: NaiveDate,
    date_end: NaiveDate,
}

#[derive(Serialize, Deserialize)]
struct SnapshotAssertion {
    key: String,
    #[serde(flatten)]
    meta: AssertionMeta,
}

#[derive(Serialize, Deserialize)]
struct GraphSnapshot {
    format: String,
    header: SnapshotHeader,
    users: Vec<String>,
    assertions: Vec<SnapshotAssertion>,
    edges: Vec<Edge>,
}

/// Date range spanning every post: first day through the day after the last.
pub fn posts_date_range(posts: &[Post]) -> Option<DateRange> {
    let first = posts.iter().map(|p| p.timestamp.date_naive()).min()?;
    let last = posts.iter().map(|p| p.timestamp.date_naive()).max()?;
    Some(DateRange { start: first, end: last + Days::new(1) })
}

/// Builds the interaction graph. Posts outside `range` (when given) are
/// skipped; without a range the posts' own span is used.
pub fn build_graph(posts: &[Post], range: Option<DateRange>) -> BipartiteGraph {
    let Some(date_range) = range.or_else(|| posts_date_range(posts)) else {
        let today = NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch");
        return BipartiteGraph::empty(DateRange { start: today, end: today });
    };
    let posts: Vec<&Post> = posts.iter().filter(|p| date_range.contains(&p.timestamp)).collect();

    let mut users = BTreeSet::new();
    let mut assertions: BTreeMap<String, AssertionMeta> = BTreeMap::new();
    for p in &posts {
        assertions.insert(
            p.post_id.clone(),
            AssertionMeta {
                kind: AssertionKind::Post,
                author: Some(p.author_id.clone()),
                timestamp: Some(p.timestamp),
                text: p.text.clone(),
                host: None,
            },
        );
    }

    let mut edges = Vec::new();
    for p in &posts {
        users.insert(p.author_id.clone());
        let edge = |assertion: &str, kind| Edge {
            user: p.author_id.clone(),
            assertion: assertion.to_string(),
            kind,
            timestamp: p.timestamp,
        };
        edges.push(edge(&p.post_id, EdgeKind::Post));
        for (target, kind) in [(&p.repost_of, EdgeKind::Repost), (&p.reply_to, EdgeKind::Reply), (&p.quote_of, EdgeKind::Quote)] {
            if let Some(target) = target {
                assertions.entry(target.clone()).or_insert_with(AssertionMeta::stub);
                edges.push(edge(target, kind));
            }
        }
        for domain in extract_urls(p) {
            match assertions.get(&domain.url) {
                Some(meta) if meta.kind != AssertionKind::Url => {
                    log::warn!("url {:?} collides with a post id; citation skipped", domain.url);
                    continue;
                }
                Some(_) => {}
                None => {
                    assertions.insert(
                        domain.url.clone(),
                        AssertionMeta {
                            kind: AssertionKind::Url,
                            author: None,
                            timestamp: None,
                            text: String::new(),
                            host: Some(domain.host.clone()),
                        },
                    );
                }
            }
            edges.push(edge(&domain.url, EdgeKind::CiteUrl));
        }
    }
    edges.sort();
    BipartiteGraph { date_range, users, assertions, edges }
}

/// Edges with timestamps inside the window plus their endpoints.
pub fn window_slice(graph: &BipartiteGraph, window: &TimeWindow) -> BipartiteGraph {
    let range = window.range();
    let edges = graph.edges.iter().filter(|e| range.contains(&e.timestamp)).cloned().collect();
    graph.from_edge_subset(range, edges)
}

/// Undirected, positively weighted user–user graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserGraph {
    users: BTreeSet<String>,
    /// Keyed by `(a, b)` with `a < b`.
    weights: BTreeMap<(String, String), u32>,
}

impl UserGraph {
    pub fn new(users: BTreeSet<String>) -> Self {
        Self { users, weights: BTreeMap::new() }
    }

    /// Adds `w` to edge `{a, b}`. Self-loops and zero weights are ignored;
    /// both endpoints become users of the graph.
    pub fn add_weight(&mut self, a: &str, b: &str, w: u32) {
        if a == b || w == 0 {
            return;
        }
        self.users.insert(a.to_string());
        self.users.insert(b.to_string());
        let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        *self.weights.entry(key).or_default() += w;
    }

    pub fn users(&self) -> &BTreeSet<String> {
        &self.users
    }

    pub fn weight(&self, a: &str, b: &str) -> u32 {
        let key = if a < b { (a.to_string(), b.to_string()) } else { (b.to_string(), a.to_string()) };
        self.weights.get(&key).copied().unwrap_or(0)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.weights.iter().map(|((a, b), w)| (a.as_str(), b.as_str(), *w))
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Projects repost/reply/quote interactions onto author pairs.
pub fn user_projection(graph: &BipartiteGraph) -> UserGraph {
    let mut out = UserGraph::new(graph.users.clone());
    for e in graph.edges.iter().filter(|e| e.kind.is_engagement()) {
        if let Some(author) = graph.assertions.get(&e.assertion).and_then(|m| m.author.as_deref()) {
            out.add_weight(&e.user, author, 1);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_timestamp;

    pub(crate) fn post(id: &str, author: &str, ts: &str, text: &str) -> Post {
        Post {
            post_id: id.into(),
            author_id: author.into(),
            timestamp: parse_timestamp(ts).unwrap(),
            text: text.into(),
            repost_of: None,
            reply_to: None,
            quote_of: None,
            urls: vec![],
        }
    }

    #[test]
    fn single_post_with_url() {
        let g = build_graph(&[post("p1", "u1", "2022-03-01T00:00:00Z", "https://reuters.com/a")], None);
        assert_eq!(g.users().len(), 1);
        assert_eq!(g.assertions().len(), 2);
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.assertions()["https://reuters.com/a"].host.as_deref(), Some("reuters.com"));
    }

    #[test]
    fn repost_edge_targets_assertion_and_stub_is_created() {
        let mut rp = post("p2", "u2", "2022-03-02T00:00:00Z", "");
        rp.repost_of = Some("p1".into());
        let mut orphan = post("p3", "u3", "2022-03-02T00:00:00Z", "");
        orphan.reply_to = Some("gone".into());
        let g = build_graph(&[post("p1", "u1", "2022-03-01T00:00:00Z", "x"), rp, orphan], None);
        assert!(g.edges().iter().any(|e| e.user == "u2" && e.assertion == "p1" && e.kind == EdgeKind::Repost));
        assert_eq!(g.assertions()["gone"].kind, AssertionKind::Stub);
        for e in g.edges() {
            assert!(g.users().contains(&e.user));
            assert!(g.assertions().contains_key(&e.assertion));
        }
    }

    #[test]
    fn projection_counts_and_skips_self() {
        let mut posts = vec![post("p1", "u1", "2022-03-01T00:00:00Z", "x")];
        for (i, who) in ["u2", "u2", "u1"].iter().enumerate() {
            let mut rp = post(&format!("r{i}"), who, "2022-03-02T00:00:00Z", "");
            rp.repost_of = Some("p1".into());
            posts.push(rp);
        }
        let ug = user_projection(&build_graph(&posts, None));
        assert_eq!(ug.weight("u1", "u2"), 2);
        assert_eq!(ug.weight("u2", "u1"), 2);
        assert_eq!(ug.edge_count(), 1);
    }

    #[test]
    fn windows_cover_range() {
        let range = DateRange {
            start: NaiveDate::from_ymd_opt(2022, 3, 1).unwrap(),
            end: NaiveDate::from_ymd_opt(2022, 3, 31).unwrap(),
        };
        let ws = windows_for_range(range, 20, 1);
        assert_eq!(ws.len(), 11);
        assert_eq!(ws.last().unwrap().end(), range.end);
        assert_eq!(windows_for_range(range, 40, 2).len(), 1);
    }

    #[test]
    fn empty_window_slice() {
        let g = build_graph(&[post("p1", "u1", "2022-03-01T00:00:00Z", "")], None);
        let w = TimeWindow { start: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(), length_days: 3, index: 0 };
        let s = window_slice(&g, &w);
        assert!(s.is_empty());
        assert_eq!(s.node_count(), 0);
    }

    #[test]
    fn snapshot_round_trip_is_byte_stable() {
        let mut rp = post("p2", "u2", "2022-03-02T00:00:00Z", "tab\there https://a.org/x");
        rp.quote_of = Some("p1".into());
        let g = build_graph(&[post("p1", "u1", "2022-03-01T00:00:00Z", "x"), rp], None);
        let bytes = g.to_snapshot_bytes();
        let back = BipartiteGraph::from_snapshot_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_snapshot_bytes(), bytes);
    }

    #[test]
    fn from_parts_rejects_dangling_edges() {
        let g = build_graph(&[post("p1", "u1", "2022-03-01T00:00:00Z", "")], None);
        let mut edges = g.edges().to_vec();
        edges[0].user = "ghost".into();
        assert!(g.with_edges(edges).is_err());
    }
}
