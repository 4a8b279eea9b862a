//! Windowed ideology embeddings: popular-node selection, per-window VGAE
//! training, propagation to the remaining nodes and axis alignment across
//! windows.

mod propagate;
pub mod vgae;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{window_slice, BipartiteGraph, NodeId, NodeKind, TimeWindow};
use crate::table::{escape, unescape};

pub use propagate::{align_axes, propagate_embeddings, Alignment};
pub use vgae::{LossTerms, TrainReport};

pub const SERIES_FORMAT: &str = "embedding-series/1";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no links among the selected popular nodes")]
    EmptyGraph,
    #[error("loss became non-finite at epoch {epoch}: {terms:?}")]
    NonFinite { epoch: usize, terms: LossTerms },
    #[error("window {index}: {source}")]
    Window {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("invalid embedding config: {0}")]
    Config(String),
    #[error("malformed embedding series line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub latent_dim: usize,
    /// Zero leaves the initialization untouched.
    pub epochs: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    pub ortho_weight: f64,
    pub negative_ratio: usize,
    /// Loss weight of each sampled non-link; observed links weigh 1.
    pub negative_weight: f64,
    pub popular_users: usize,
    pub popular_assertions: usize,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            epochs: 300,
            learning_rate: 0.05,
            kl_weight: 0.1,
            ortho_weight: 1.0,
            negative_ratio: 5,
            negative_weight: 0.05,
            popular_users: 2000,
            popular_assertions: 2000,
            seed: 42,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let fail = |m: &str| Err(EmbedError::Config(m.to_string()));
        if self.latent_dim < 2 {
            return fail("latent_dim must be at least 2");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive and finite");
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return fail("kl_weight must be nonnegative and finite");
        }
        if !(self.ortho_weight.is_finite() && self.ortho_weight >= 0.0) {
            return fail("ortho_weight must be nonnegative and finite");
        }
        if self.negative_ratio == 0 {
            return fail("negative_ratio must be positive");
        }
        if !(self.negative_weight.is_finite() && self.negative_weight > 0.0) {
            return fail("negative_weight must be positive and finite");
        }
        if self.popular_users == 0 {
            return fail("popular_users must be positive");
        }
        if self.popular_assertions == 0 {
            return fail("popular_assertions must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Trained,
    Propagated,
    Missing,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Trained => "trained",
            Provenance::Propagated => "propagated",
            Provenance::Missing => "missing",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "trained" => Some(Provenance::Trained),
            "propagated" => Some(Provenance::Propagated),
            "missing" => Some(Provenance::Missing),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbedding {
    /// Empty when the provenance is `Missing`.
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

/// Nonnegative `dim`-dimensional vectors keyed by node. Nodes absent from
/// the table count as missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<NodeId, NodeEmbedding>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stores a vector. Panics if its length differs from the table's
    /// dimension or a coordinate is negative or non-finite.
    pub fn insert(&mut self, node: NodeId, vector: Vec<f64>, provenance: Provenance) {
        assert_eq!(vector.len(), self.dim, "embedding dimension mismatch for {node}");
        assert!(vector.iter().all(|x| x.is_finite() && *x >= 0.0), "embedding for {node} leaves the positive orthant");
        assert_ne!(provenance, Provenance::Missing, "use mark_missing");
        self.entries.insert(node, NodeEmbedding { vector, provenance });
    }

    pub fn mark_missing(&mut self, node: NodeId) {
        self.entries.insert(node, NodeEmbedding { vector: Vec::new(), provenance: Provenance::Missing });
    }

    pub fn get(&self, node: &NodeId) -> Option<&NodeEmbedding> {
        self.entries.get(node)
    }

    pub fn provenance(&self, node: &NodeId) -> Provenance {
        self.entries.get(node).map_or(Provenance::Missing, |e| e.provenance)
    }

    /// The node's vector unless it is missing.
    pub fn vector(&self, node: &NodeId) -> Option<&[f64]> {
        self.entries.get(node).filter(|e| e.provenance != Provenance::Missing).map(|e| e.vector.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &NodeEmbedding)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.values().filter(|e| e.provenance == provenance).count()
    }
}

/// The `user_count` users and `assertion_count` assertions of highest degree;
/// ties go to the lexicographically smaller key.
pub fn select_popular(graph: &BipartiteGraph, user_count: usize, assertion_count: usize) -> BTreeSet<NodeId> {
    let degrees = graph.degrees();
    let mut ranked: Vec<(&NodeId, usize)> = degrees.iter().map(|(n, d)| (n, *d)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.key.cmp(&b.0.key)));
    let mut chosen = BTreeSet::new();
    let (mut users, mut assertions) = (0, 0);
    for (node, _) in ranked {
        match node.kind {
            NodeKind::User if users < user_count => {
                users += 1;
                chosen.insert(node.clone());
            }
            NodeKind::Assertion if assertions < assertion_count => {
                assertions += 1;
                chosen.insert(node.clone());
            }
            _ => {}
        }
    }
    chosen
}

/// Trains on the subgraph induced by the popular nodes and returns their
/// posterior means.
pub fn train_window_embedding(
    graph: &BipartiteGraph,
    cfg: &EmbedConfig,
    warm_start: Option<&EmbeddingTable>,
) -> Result<(EmbeddingTable, TrainReport), EmbedError> {
    cfg.validate()?;
    let popular = select_popular(graph, cfg.popular_users, cfg.popular_assertions);
    let sub = graph.restrict_to(&popular);
    let problem = vgae::Problem::from_graph(&sub, cfg.latent_dim)?;
    let mut rng = crate::synth::rng(cfg.seed.wrapping_add(1));
    let init = vgae::initial_params(&problem, warm_start, &mut rng);
    let (params, report) = vgae::fit(&problem, cfg, init)?;
    let means = params.means();
    let d = cfg.latent_dim;
    let mut table = EmbeddingTable::new(d);
    for (i, node) in problem.nodes.iter().enumerate() {
        table.insert(node.clone(), means[i * d..(i + 1) * d].to_vec(), Provenance::Trained);
    }
    Ok((table, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEmbedding {
    pub window: TimeWindow,
    pub table: EmbeddingTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSeries {
    pub dim: usize,
    pub windows: Vec<WindowEmbedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub index: usize,
    pub train: Option<TrainReport>,
    pub permutation: Vec<usize>,
    pub trained: usize,
    pub propagated: usize,
    pub missing: usize,
}

/// Slices, trains, propagates and aligns window by window. Each window is
/// warm-started from the previous aligned table. Windows without edges get
/// an empty (all-missing) table.
pub fn build_embedding_series(
    graph: &BipartiteGraph,
    windows: &[TimeWindow],
    cfg: &EmbedConfig,
) -> Result<(EmbeddingSeries, Vec<WindowReport>), EmbedError> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(windows.len());
    let mut reports = Vec::with_capacity(windows.len());
    let mut previous: Option<EmbeddingTable> = None;
    for window in windows {
        let slice = window_slice(graph, window);
        if slice.is_empty() {
            out.push(WindowEmbedding { window: *window, table: EmbeddingTable::new(cfg.latent_dim) });
            reports.push(WindowReport {
                index: window.index,
                train: None,
                permutation: (0..cfg.latent_dim).collect(),
                trained: 0,
                propagated: 0,
                missing: 0,
            });
            continue;
        }
        let wrap = |e: EmbedError| EmbedError::Window { index: window.index, source: Box::new(e) };
        let (trained, report) = train_window_embedding(&slice, cfg, previous.as_ref()).map_err(wrap)?;
        let full = propagate_embeddings(&trained, &slice);
        let (table, permutation) = match &previous {
            Some(prev) => {
                let aligned = align_axes(prev, &full);
                (aligned.table, aligned.permutation)
            }
            None => (full, (0..cfg.latent_dim).collect()),
        };
        reports.push(WindowReport {
            index: window.index,
            train: Some(report),
            permutation,
            trained: table.count(Provenance::Trained),
            propagated: table.count(Provenance::Propagated),
            missing: table.count(Provenance::Missing),
        });
        previous = Some(table.clone());
        out.push(WindowEmbedding { window: *window, table });
    }
    Ok((EmbeddingSeries { dim: cfg.latent_dim, windows: out }, reports))
}

/// Nine significant digits, scientific notation.
fn coord(x: f64) -> String {
    format!("{x:.8e}")
}

impl EmbeddingSeries {
    /// Tab-separated text: one `#window` line per window, then one row per
    /// (window, node) in node order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {SERIES_FORMAT}\tdim={}", self.dim);
        for w in &self.windows {
            let _ = writeln!(out, "#window\t{}\t{}\t{}", w.window.index, w.window.start, w.window.length_days);
        }
        let mut header = String::from("window\tkind\tkey\tprovenance");
        for k in 0..self.dim {
            let _ = write!(header, "\tc{k}");
        }
        out.push_str(&header);
        out.push('\n');
        for w in &self.windows {
            for (node, emb) in w.table.iter() {
                let kind = match node.kind {
                    NodeKind::User => "user",
                    NodeKind::Assertion => "assertion",
                };
                let _ = write!(out, "{}\t{}\t{}\t{}", w.window.index, kind, escape(&node.key), emb.provenance.as_str());
                for x in &emb.vector {
                    out.push('\t');
                    out.push_str(&coord(*x));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, EmbedError> {
        let err = |line: usize, reason: &str| EmbedError::Parse { line: line + 1, reason: reason.to_string() };
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        let dim: usize = first
            .strip_prefix(&format!("# {SERIES_FORMAT}\tdim="))
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| err(0, "bad header"))?;
        let mut windows: Vec<WindowEmbedding> = Vec::new();
        let mut by_index: BTreeMap<usize, usize> = BTreeMap::new();
        for (no, line) in lines {
            if let Some(rest) = line.strip_prefix("#window\t") {
                let f: Vec<&str> = rest.split('\t').collect();
                if f.len() != 3 {
                    return Err(err(no, "bad window line"));
                }
                let index: usize = f[0].parse().map_err(|_| err(no, "bad window index"))?;
                let start = NaiveDate::parse_from_str(f[1], "%Y-%m-%d").map_err(|_| err(no, "bad window start"))?;
                let length_days: u32 = f[2].parse().map_err(|_| err(no, "bad window length"))?;
                by_index.insert(index, windows.len());
                windows.push(WindowEmbedding {
                    window: TimeWindow { start, length_days, index },
                    table: EmbeddingTable::new(dim),
                });
                continue;
            }
            if line.starts_with("window\t") || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() < 4 {
                return Err(err(no, "too few columns"));
            }
            let index: usize = f[0].parse().map_err(|_| err(no, "bad window index"))?;
            let slot = *by_index.get(&index).ok_or_else(|| err(no, "row for undeclared window"))?;
            let kind = match f[1] {
                "user" => NodeKind::User,
                "assertion" => NodeKind::Assertion,
                _ => return Err(err(no, "bad node kind")),
            };
            let node = NodeId { kind, key: unescape(f[2]) };
            let provenance = Provenance::parse(f[3]).ok_or_else(|| err(no, "bad provenance"))?;
            let table = &mut windows[slot].table;
            if provenance == Provenance::Missing {
                table.mark_missing(node);
                continue;
            }
            let vector: Vec<f64> = f[4..].iter().map(|x| x.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| err(no, "bad coordinate"))?;
            if vector.len() != dim || vector.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(err(no, "coordinates must be dim nonnegative reals"));
            }
            table.insert(node, vector, provenance);
        }
        Ok(Self { dim, windows })
    }
}
