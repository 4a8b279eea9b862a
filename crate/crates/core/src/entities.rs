//! Entities (physical event types, influencers, communities, domains) and
//! their per-window time series.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingSeries, EmbeddingTable};
use crate::graph::{AssertionKind, BipartiteGraph, EdgeKind, NodeId, NodeKind, TimeWindow, UserGraph};
use crate::ingest::EventRecord;
use crate::table::{escape, unescape};

pub const ENTITY_SERIES_FORMAT: &str = "entity-series/1";
pub const UNCLUSTERED: &str = "unclustered";

#[derive(Debug, thiserror::Error)]
pub enum EntityError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn parse_err(line: usize, reason: impl Into<String>) -> EntityError {
    EntityError::Parse { line, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntityConfig {
    pub influencer_count: usize,
    pub domain_count: usize,
    pub min_community_size: usize,
    pub max_iters: usize,
    pub event_types: Vec<String>,
}

pub fn default_event_types() -> Vec<String> {
    [
        "make public statement",
        "appeal for aid",
        "express intent to cooperate",
        "consult",
        "engage in diplomatic cooperation",
        "engage in material cooperation",
        "provide economic aid",
        "investigate military action",
        "demand",
        "disapprove",
        "reject",
        "threaten",
        "protest",
        "exhibit military posture",
        "obstruct passage",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl Default for EntityConfig {
    fn default() -> Self {
        Self { influencer_count: 20, domain_count: 20, min_community_size: 3, max_iters: 50, event_types: default_event_types() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Physical,
    Influencer,
    Community,
    Domain,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Physical => "physical",
            EntityKind::Influencer => "influencer",
            EntityKind::Community => "community",
            EntityKind::Domain => "domain",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "physical" => Ok(EntityKind::Physical),
            "influencer" => Ok(EntityKind::Influencer),
            "community" => Ok(EntityKind::Community),
            "domain" => Ok(EntityKind::Domain),
            other => Err(format!("unknown entity kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Member {
    Node(NodeId),
    EventType(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub kind: EntityKind,
    pub label: String,
    /// Community: its users. Influencer: the user. Domain: every URL node of
    /// the host. Physical: the event type.
    pub members: Vec<Member>,
}

impl Entity {
    pub fn member_nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.members.iter().filter_map(|m| match m {
            Member::Node(n) => Some(n),
            Member::EventType(_) => None,
        })
    }
}

/// Community labels `0..k` for clustered users; everyone else is unclustered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: BTreeMap<String, usize>,
    pub unclustered: BTreeSet<String>,
}

impl Partition {
    pub fn community_count(&self) -> usize {
        self.labels.values().max().map_or(0, |m| m + 1)
    }

    pub fn communities(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.community_count()];
        for (user, &label) in &self.labels {
            out[label].push(user.clone());
        }
        out
    }
}

/// Synchronous weighted label propagation. Initial labels are a seeded
/// permutation of `0..n`; each round every user takes the label with the
/// largest incident weight among its neighbours (ties to the smaller label).
/// Stops at a fixpoint or after `max_iters` rounds. Groups smaller than
/// `min_size` become unclustered; the rest are relabelled `0..k` by
/// decreasing size, then smallest member.
pub fn detect_communities_with(user_graph: &UserGraph, seed: u64, max_iters: usize, min_size: usize) -> Partition {
    let users: Vec<&str> = user_graph.users().iter().map(String::as_str).collect();
    let index: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (*u, i)).collect();
    let mut adjacency: Vec<Vec<(usize, u32)>> = vec![Vec::new(); users.len()];
    for (a, b, w) in user_graph.edges() {
        let (i, j) = (index[a], index[b]);
        adjacency[i].push((j, w));
        adjacency[j].push((i, w));
    }

    let mut labels: Vec<usize> = (0..users.len()).collect();
    labels.shuffle(&mut crate::synth::rng(seed));
    for _ in 0..max_iters {
        let next: Vec<usize> = adjacency
            .iter()
            .enumerate()
            .map(|(i, nbrs)| {
                if nbrs.is_empty() {
                    return labels[i];
                }
                let mut totals: BTreeMap<usize, u64> = BTreeMap::new();
                for &(j, w) in nbrs {
                    *totals.entry(labels[j]).or_default() += u64::from(w);
                }
                // BTreeMap iterates labels ascending, so the first maximum wins.
                let mut best = (0, 0);
                for (label, total) in totals {
                    if total > best.1 {
                        best = (label, total);
                    }
                }
                best.0
            })
            .collect();
        if next == labels {
            break;
        }
        labels = next;
    }

    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(users[i]);
    }
    let mut kept: Vec<Vec<&str>> = Vec::new();
    let mut partition = Partition::default();
    for (_, members) in groups {
        if members.len() >= min_size.max(1) {
            kept.push(members);
        } else {
            partition.unclustered.extend(members.iter().map(|u| u.to_string()));
        }
    }
    kept.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(b[0])));
    for (label, members) in kept.iter().enumerate() {
        for u in members {
            partition.labels.insert(u.to_string(), label);
        }
    }
    partition
}

pub fn detect_communities(user_graph: &UserGraph, seed: u64, max_iters: usize) -> Partition {
    detect_communities_with(user_graph, seed, max_iters, 3)
}

/// Newman modularity of a labelling; users absent from `labels` each form
/// their own group.
pub fn modularity(user_graph: &UserGraph, labels: &BTreeMap<String, usize>) -> f64 {
    let total: f64 = user_graph.edges().map(|(_, _, w)| f64::from(w)).sum();
    if total == 0.0 {
        return 0.0;
    }
    let group = |u: &str| labels.get(u).map(|l| format!("#{l}")).unwrap_or_else(|| u.to_string());
    let mut strength: HashMap<String, f64> = HashMap::new();
    let mut inside: HashMap<String, f64> = HashMap::new();
    for (a, b, w) in user_graph.edges() {
        let w = f64::from(w);
        let (ga, gb) = (group(a), group(b));
        *strength.entry(ga.clone()).or_default() += w;
        *strength.entry(gb.clone()).or_default() += w;
        if ga == gb {
            *inside.entry(ga).or_default() += w;
        }
    }
    strength.iter().map(|(g, s)| inside.get(g).copied().unwrap_or(0.0) / total - (s / (2.0 * total)).powi(2)).sum()
}

fn rank_top<K: Ord + Clone>(counts: BTreeMap<K, usize>, n: usize) -> Vec<K> {
    let mut ranked: Vec<(K, usize)> = counts.into_iter().collect();
    // Stable sort keeps key order among equal counts.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.into_iter().take(n).map(|(k, _)| k).collect()
}

/// Influencers are the top users by total degree; domains the top hosts by
/// URL citations; every kept community and configured event type becomes an
/// entity. Influencers are taken out of their communities, and a community
/// that drops below the minimum size is dissolved.
pub fn build_entities(graph: &BipartiteGraph, partition: &Partition, cfg: &EntityConfig) -> Vec<Entity> {
    let mut entities = Vec::new();

    for event_type in &cfg.event_types {
        entities.push(Entity {
            entity_id: format!("physical:{event_type}"),
            kind: EntityKind::Physical,
            label: event_type.clone(),
            members: vec![Member::EventType(event_type.clone())],
        });
    }

    let mut user_degree: BTreeMap<String, usize> = graph.users().iter().map(|u| (u.clone(), 0)).collect();
    let mut host_citations: BTreeMap<String, usize> = BTreeMap::new();
    let mut host_urls: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for e in graph.edges() {
        *user_degree.entry(e.user.clone()).or_default() += 1;
        if e.kind == EdgeKind::CiteUrl {
            if let Some(host) = graph.assertions().get(&e.assertion).and_then(|m| m.host.clone()) {
                *host_citations.entry(host).or_default() += 1;
            }
        }
    }
    for (key, meta) in graph.assertions() {
        if let (AssertionKind::Url, Some(host)) = (meta.kind, &meta.host) {
            host_urls.entry(host.clone()).or_default().insert(key.clone());
        }
    }

    let influencers = rank_top(user_degree, cfg.influencer_count);
    for user in &influencers {
        entities.push(Entity {
            entity_id: format!("influencer:{user}"),
            kind: EntityKind::Influencer,
            label: user.clone(),
            members: vec![Member::Node(NodeId::user(user.as_str()))],
        });
    }

    let excluded: BTreeSet<&String> = influencers.iter().collect();
    for (label, members) in partition.communities().into_iter().enumerate() {
        let members: Vec<String> = members.into_iter().filter(|u| !excluded.contains(u)).collect();
        if members.len() < cfg.min_community_size.max(1) {
            continue;
        }
        entities.push(Entity {
            entity_id: format!("community:{label}"),
            kind: EntityKind::Community,
            label: format!("community {label} ({} users)", members.len()),
            members: members.into_iter().map(|u| Member::Node(NodeId::user(u))).collect(),
        });
    }

    for host in rank_top(host_citations, cfg.domain_count) {
        let urls = host_urls.get(&host).cloned().unwrap_or_default();
        entities.push(Entity {
            entity_id: format!("domain:{host}"),
            kind: EntityKind::Domain,
            label: host.clone(),
            members: urls.into_iter().map(|u| Member::Node(NodeId::assertion(u))).collect(),
        });
    }
    entities
}

/// Users grouped by role after entity construction: communities that became
/// entities, influencers, and everyone else.
pub fn user_roles(graph: &BipartiteGraph, entities: &[Entity]) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
    let mut community = BTreeSet::new();
    let mut influencer = BTreeSet::new();
    for e in entities {
        let target = match e.kind {
            EntityKind::Community => &mut community,
            EntityKind::Influencer => &mut influencer,
            _ => continue,
        };
        target.extend(e.member_nodes().filter(|n| n.kind == NodeKind::User).map(|n| n.key.clone()));
    }
    let rest = graph.users().iter().filter(|u| !community.contains(*u) && !influencer.contains(*u)).cloned().collect();
    (community, influencer, rest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesValue {
    Vector(Vec<f64>),
    Scalar(f64),
    Missing,
}

impl SeriesValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, SeriesValue::Missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTimeSeries {
    pub entity_id: String,
    pub kind: EntityKind,
    /// One value per window of the shared grid.
    pub values: Vec<SeriesValue>,
}

impl EntityTimeSeries {
    /// Number of real-valued components: `d` for ideology series, 1 for
    /// scalar series (and for series with no present window).
    pub fn components(&self) -> usize {
        self.values
            .iter()
            .find_map(|v| match v {
                SeriesValue::Vector(x) => Some(x.len()),
                SeriesValue::Scalar(_) => Some(1),
                SeriesValue::Missing => None,
            })
            .unwrap_or(1)
    }

    pub fn is_vector(&self) -> bool {
        self.values.iter().any(|v| matches!(v, SeriesValue::Vector(_)))
    }

    /// Component `k` per window, `None` where missing.
    pub fn component(&self, k: usize) -> Vec<Option<f64>> {
        self.values
            .iter()
            .map(|v| match v {
                SeriesValue::Vector(x) => x.get(k).copied(),
                SeriesValue::Scalar(s) if k == 0 => Some(*s),
                _ => None,
            })
            .collect()
    }
}

fn mean_of(table: &EmbeddingTable, nodes: impl Iterator<Item = NodeId>) -> SeriesValue {
    let d = table.dim();
    let mut sum = vec![0.0; d];
    let mut count = 0usize;
    for node in nodes {
        if let Some(v) = table.vector(&node) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            count += 1;
        }
    }
    if count == 0 {
        return SeriesValue::Missing;
    }
    sum.iter_mut().for_each(|s| *s /= count as f64);
    SeriesValue::Vector(sum)
}

/// Per-window values of one entity. Embedding entities read `series`, whose
/// windows must be `windows`; physical entities sum event counts per window.
pub fn entity_series(
    entity: &Entity,
    series: &EmbeddingSeries,
    events: &[EventRecord],
    windows: &[TimeWindow],
) -> EntityTimeSeries {
    let values = match entity.kind {
        EntityKind::Physical => {
            let types: BTreeSet<&str> = entity
                .members
                .iter()
                .filter_map(|m| match m {
                    Member::EventType(t) => Some(t.as_str()),
                    Member::Node(_) => None,
                })
                .collect();
            windows
                .iter()
                .map(|w| {
                    let total: u64 = events
                        .iter()
                        .filter(|e| types.contains(e.event_type.as_str()) && w.contains_date(e.date))
                        .map(|e| e.count)
                        .sum();
                    SeriesValue::Scalar(total as f64)
                })
                .collect()
        }
        _ => windows
            .iter()
            .map(|w| match series.windows.iter().find(|s| s.window.index == w.index) {
                Some(we) => mean_of(&we.table, entity.member_nodes().cloned()),
                None => SeriesValue::Missing,
            })
            .collect(),
    };
    EntityTimeSeries { entity_id: entity.entity_id.clone(), kind: entity.kind, values }
}

/// Series of every entity on the shared window grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySeriesTable {
    pub dim: usize,
    pub windows: Vec<TimeWindow>,
    pub series: Vec<EntityTimeSeries>,
}

pub fn build_series_table(
    entities: &[Entity],
    series: &EmbeddingSeries,
    events: &[EventRecord],
    windows: &[TimeWindow],
) -> EntitySeriesTable {
    let all = entities.par_iter().map(|e| entity_series(e, series, events, windows)).collect();
    EntitySeriesTable { dim: series.dim, windows: windows.to_vec(), series: all }
}

fn number(x: f64) -> String {
    format!("{x:.8e}")
}

impl EntitySeriesTable {
    pub fn get(&self, entity_id: &str) -> Option<&EntityTimeSeries> {
        self.series.iter().find(|s| s.entity_id == entity_id)
    }

    /// Tab-separated: `#window` lines, then `entity_id, kind, window, value`
    /// rows where value is comma-separated numbers or `MISSING`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {ENTITY_SERIES_FORMAT}\tdim={}", self.dim);
        for w in &self.windows {
            let _ = writeln!(out, "#window\t{}\t{}\t{}", w.index, w.start, w.length_days);
        }
        out.push_str("entity_id\tkind\twindow\tvalue\n");
        for s in &self.series {
            for (w, v) in self.windows.iter().zip(&s.values) {
                let value = match v {
                    SeriesValue::Vector(x) => format!("v:{}", x.iter().map(|c| number(*c)).collect::<Vec<_>>().join(",")),
                    SeriesValue::Scalar(c) => format!("s:{}", number(*c)),
                    SeriesValue::Missing => "MISSING".to_string(),
                };
                let _ = writeln!(out, "{}\t{}\t{}\t{}", escape(&s.entity_id), s.kind, w.index, value);
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, EntityError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
        let dim = head
            .strip_prefix(&format!("# {ENTITY_SERIES_FORMAT}\tdim="))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| parse_err(1, "bad header"))?;
        let mut windows = Vec::new();
        let mut series: Vec<EntityTimeSeries> = Vec::new();
        let mut index_of: HashMap<String, usize> = HashMap::new();
        for (line, raw) in lines {
            if let Some(rest) = raw.strip_prefix("#window\t") {
                let f: Vec<&str> = rest.split('\t').collect();
                if f.len() != 3 {
                    return Err(parse_err(line, "bad window line"));
                }
                windows.push(TimeWindow {
                    index: f[0].parse().map_err(|_| parse_err(line, "bad window index"))?,
                    start: f[1].parse().map_err(|_| parse_err(line, "bad window start"))?,
                    length_days: f[2].parse().map_err(|_| parse_err(line, "bad window length"))?,
                });
                continue;
            }
            if raw.starts_with("entity_id\t") || raw.is_empty() {
                continue;
            }
            let f: Vec<&str> = raw.split('\t').collect();
            if f.len() != 4 {
                return Err(parse_err(line, "expected 4 fields"));
            }
            let id = unescape(f[0]);
            let kind: EntityKind = f[1].parse().map_err(|e: String| parse_err(line, e))?;
            let nums = |s: &str| -> Result<Vec<f64>, EntityError> {
                s.split(',').map(|x| x.parse::<f64>().map_err(|_| parse_err(line, "bad number"))).collect()
            };
            let value = if f[3] == "MISSING" {
                SeriesValue::Missing
            } else if let Some(v) = f[3].strip_prefix("v:") {
                SeriesValue::Vector(nums(v)?)
            } else if let Some(s) = f[3].strip_prefix("s:") {
                SeriesValue::Scalar(nums(s)?[0])
            } else {
                return Err(parse_err(line, "bad value"));
            };
            let slot = *index_of.entry(id.clone()).or_insert_with(|| {
                series.push(EntityTimeSeries { entity_id: id.clone(), kind, values: Vec::new() });
                series.len() - 1
            });
            series[slot].values.push(value);
        }
        if let Some(bad) = series.iter().find(|s| s.values.len() != windows.len()) {
            return Err(parse_err(0, format!("entity {} has {} values for {} windows", bad.entity_id, bad.values.len(), windows.len())));
        }
        Ok(Self { dim, windows, series })
    }
}

/// Entities file: `entity_id, kind, label, member_count`.
pub fn entities_to_tsv(entities: &[Entity]) -> String {
    let mut out = String::from("entity_id\tkind\tlabel\tmember_count\n");
    for e in entities {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", escape(&e.entity_id), e.kind, escape(&e.label), e.members.len());
    }
    out
}

/// Membership file: one `entity_id, member_kind, key` row per member.
pub fn members_to_tsv(entities: &[Entity]) -> String {
    let mut out = String::from("entity_id\tmember_kind\tkey\n");
    for e in entities {
        for m in &e.members {
            let (kind, key) = match m {
                Member::Node(n) => (if n.kind == NodeKind::User { "user" } else { "assertion" }, n.key.as_str()),
                Member::EventType(t) => ("event_type", t.as_str()),
            };
            let _ = writeln!(out, "{}\t{}\t{}", escape(&e.entity_id), kind, escape(key));
        }
    }
    out
}

/// Inverse of [`entities_to_tsv`] plus [`members_to_tsv`].
pub fn entities_from_tsv(entities: &str, members: &str) -> Result<Vec<Entity>, EntityError> {
    let mut out: Vec<Entity> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();
    let mut expected = Vec::new();
    for (i, raw) in entities.lines().enumerate().skip(1) {
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(i + 1, "expected 4 fields"));
        }
        let id = unescape(f[0]);
        let kind: EntityKind = f[1].parse().map_err(|e: String| parse_err(i + 1, e))?;
        let count: usize = f[3].parse().map_err(|_| parse_err(i + 1, "bad member count"))?;
        if index_of.insert(id.clone(), out.len()).is_some() {
            return Err(parse_err(i + 1, format!("duplicate entity {id}")));
        }
        expected.push(count);
        out.push(Entity { entity_id: id, kind, label: unescape(f[2]), members: Vec::new() });
    }
    for (i, raw) in members.lines().enumerate().skip(1) {
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(i + 1, "expected 3 fields"));
        }
        let slot = *index_of.get(&unescape(f[0])).ok_or_else(|| parse_err(i + 1, "member of unknown entity"))?;
        let key = unescape(f[2]);
        let member = match f[1] {
            "user" => Member::Node(NodeId::user(key)),
            "assertion" => Member::Node(NodeId::assertion(key)),
            "event_type" => Member::EventType(key),
            other => return Err(parse_err(i + 1, format!("unknown member kind {other:?}"))),
        };
        out[slot].members.push(member);
    }
    for (e, n) in out.iter().zip(expected) {
        if e.members.len() != n {
            return Err(parse_err(0, format!("entity {} lists {n} members but has {}", e.entity_id, e.members.len())));
        }
    }
    Ok(out)
}
