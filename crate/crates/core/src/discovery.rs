//! Lagged Pearson correlation between entity series and the directed
//! influence graph built from it.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entities::{EntityKind, EntitySeriesTable, EntityTimeSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub max_lag_windows: usize,
    pub min_correlation: f64,
    pub min_overlap: usize,
    pub use_absolute: bool,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self { max_lag_windows: 5, min_correlation: 0.7, min_overlap: 8, use_absolute: false }
    }
}

impl DiscoveryConfig {
    /// Names the offending field on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.max_lag_windows < 1 {
            return Err(("max_lag_windows", "must be at least 1".into()));
        }
        if !(self.min_correlation > 0.0 && self.min_correlation <= 1.0) {
            return Err(("min_correlation", format!("must be in (0, 1], got {}", self.min_correlation)));
        }
        if self.min_overlap < 1 {
            return Err(("min_overlap", "must be positive".into()));
        }
        Ok(())
    }
}

/// Two-pass Pearson correlation over the positions where both sides are
/// present. `None` when fewer than two pairs remain or a side is constant.
pub fn pearson(x: &[Option<f64>], y: &[Option<f64>]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    let pairs: Vec<(f64, f64)> = x.iter().zip(y).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
    pearson_pairs(&pairs)
}

pub fn pearson_slices(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    let pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pearson_pairs(&pairs)
}

fn pearson_pairs(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    if pairs.iter().all(|p| p.0 == pairs[0].0) || pairs.iter().all(|p| p.1 == pairs[0].1) {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if r.is_finite() {
        Some(r.clamp(-1.0, 1.0))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorr {
    pub lag: usize,
    /// `None` when undefined or the overlap is below the minimum.
    pub r: Option<f64>,
    /// Pairs left after dropping missing positions.
    pub n: usize,
}

/// `r(tau) = pearson(lead[0..n - tau], lagging[tau..n])` for `tau` in `0..=max_lag`.
pub fn lagged_correlation(lead: &[Option<f64>], lagging: &[Option<f64>], max_lag: usize, min_overlap: usize) -> Vec<LagCorr> {
    assert_eq!(lead.len(), lagging.len(), "series must share a window grid");
    let len = lead.len();
    (0..=max_lag)
        .map(|tau| {
            if tau >= len {
                return LagCorr { lag: tau, r: None, n: 0 };
            }
            let x = &lead[..len - tau];
            let y = &lagging[tau..];
            let n = x.iter().zip(y).filter(|(a, b)| a.is_some() && b.is_some()).count();
            let r = if n < min_overlap.max(2) { None } else { pearson(x, y) };
            LagCorr { lag: tau, r, n }
        })
        .collect()
}

/// One scanned `(direction, lag, axes)` tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub source: String,
    pub target: String,
    pub lag: usize,
    pub r: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_axis: Option<usize>,
    /// True when `source` is the first entity of the pair.
    pub forward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEdge {
    pub source: String,
    pub target: String,
    pub lag: usize,
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_axis: Option<usize>,
}

impl From<&Candidate> for InfluenceEdge {
    fn from(c: &Candidate) -> Self {
        Self {
            source: c.source.clone(),
            target: c.target.clone(),
            lag: c.lag,
            r: c.r,
            source_axis: c.source_axis,
            target_axis: c.target_axis,
        }
    }
}

/// Every lag of every axis pair in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagRow {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_axis: Option<usize>,
    pub lags: Vec<LagCorr>,
}

fn axes(s: &EntityTimeSeries) -> Vec<Option<usize>> {
    if s.is_vector() {
        (0..s.components()).map(Some).collect()
    } else {
        vec![None]
    }
}

fn column(s: &EntityTimeSeries, axis: Option<usize>) -> Vec<Option<f64>> {
    s.component(axis.unwrap_or(0))
}

/// The full drill-down table for a pair: `a -> b` rows first, then `b -> a`.
pub fn pair_table(a: &EntityTimeSeries, b: &EntityTimeSeries, cfg: &DiscoveryConfig) -> Vec<LagRow> {
    let mut rows = Vec::new();
    for (lead, lagging) in [(a, b), (b, a)] {
        for i in axes(lead) {
            for j in axes(lagging) {
                rows.push(LagRow {
                    source: lead.entity_id.clone(),
                    target: lagging.entity_id.clone(),
                    source_axis: i,
                    target_axis: j,
                    lags: lagged_correlation(&column(lead, i), &column(lagging, j), cfg.max_lag_windows, cfg.min_overlap),
                });
            }
        }
    }
    rows
}

/// Orders candidates best-first: larger score, then smaller lag, smaller
/// axes, forward direction.
fn better(score: impl Fn(&Candidate) -> f64) -> impl Fn(&Candidate, &Candidate) -> Ordering {
    move |x, y| {
        score(y)
            .partial_cmp(&score(x))
            .unwrap_or(Ordering::Equal)
            .then(x.lag.cmp(&y.lag))
            .then(x.source_axis.cmp(&y.source_axis))
            .then(x.target_axis.cmp(&y.target_axis))
            .then(y.forward.cmp(&x.forward))
    }
}

fn candidates(rows: &[LagRow], first: &str) -> Vec<Candidate> {
    let mut out = Vec::new();
    for row in rows {
        for lc in &row.lags {
            if let Some(r) = lc.r {
                out.push(Candidate {
                    source: row.source.clone(),
                    target: row.target.clone(),
                    lag: lc.lag,
                    r,
                    n: lc.n,
                    source_axis: row.source_axis,
                    target_axis: row.target_axis,
                    forward: row.source == first,
                });
            }
        }
    }
    out
}

fn best_by(cands: impl Iterator<Item = Candidate>, use_absolute: bool) -> Option<Candidate> {
    let score = move |c: &Candidate| if use_absolute { c.r.abs() } else { c.r };
    let order = better(score);
    cands.min_by(|x, y| order(x, y))
}

/// Pair statistics, enough to answer any threshold without recomputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub a: String,
    pub b: String,
    /// Largest r over lags `0..=L`, both directions, all axes.
    pub best: Option<Candidate>,
    /// Largest r over lags `1..=L`.
    pub lagged_positive: Option<Candidate>,
    /// Largest |r| over lags `1..=L`.
    pub lagged_absolute: Option<Candidate>,
}

impl PairSummary {
    pub fn edge(&self, min_correlation: f64, use_absolute: bool) -> Option<InfluenceEdge> {
        if use_absolute {
            self.lagged_absolute.as_ref().filter(|c| c.r.abs() >= min_correlation).map(InfluenceEdge::from)
        } else {
            self.lagged_positive.as_ref().filter(|c| c.r >= min_correlation).map(InfluenceEdge::from)
        }
    }
}

pub fn summarize_pair(a: &EntityTimeSeries, b: &EntityTimeSeries, cfg: &DiscoveryConfig) -> PairSummary {
    let rows = pair_table(a, b, cfg);
    let all = candidates(&rows, &a.entity_id);
    let lagged = || all.iter().filter(|c| c.lag >= 1).cloned();
    PairSummary {
        a: a.entity_id.clone(),
        b: b.entity_id.clone(),
        best: best_by(all.iter().cloned(), false),
        lagged_positive: best_by(lagged(), false),
        lagged_absolute: best_by(lagged(), true),
    }
}

/// The strongest threshold-passing lagged tuple for the pair, if any.
pub fn best_edge(a: &EntityTimeSeries, b: &EntityTimeSeries, cfg: &DiscoveryConfig) -> Option<InfluenceEdge> {
    summarize_pair(a, b, cfg).edge(cfg.min_correlation, cfg.use_absolute)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRef {
    pub entity_id: String,
    pub kind: EntityKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceGraph {
    pub config: DiscoveryConfig,
    pub entities: Vec<EntityRef>,
    pub edges: Vec<InfluenceEdge>,
    /// One summary per unordered pair `(i, j)`, `i < j` in entity order.
    pub pairs: Vec<PairSummary>,
}

impl InfluenceGraph {
    /// Edges at another threshold, from the stored pair statistics.
    pub fn edges_at(&self, min_correlation: f64, use_absolute: bool) -> Vec<InfluenceEdge> {
        let mut edges: Vec<InfluenceEdge> =
            self.pairs.iter().filter_map(|p| p.edge(min_correlation, use_absolute)).collect();
        sort_edges(&mut edges);
        edges
    }

    pub fn pair(&self, a: &str, b: &str) -> Option<&PairSummary> {
        self.pairs.iter().find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }

    /// Dense symmetric matrix of the heatmap value (best r, lag) per pair in
    /// entity order; the diagonal is `(1, 0)` for entities with a defined
    /// self-correlation.
    pub fn heatmap(&self) -> Vec<Vec<Option<(f64, usize)>>> {
        let n = self.entities.len();
        let index: std::collections::HashMap<&str, usize> =
            self.entities.iter().enumerate().map(|(i, e)| (e.entity_id.as_str(), i)).collect();
        let mut m = vec![vec![None; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = Some((1.0, 0));
        }
        for p in &self.pairs {
            let (i, j) = (index[p.a.as_str()], index[p.b.as_str()]);
            let cell = p.best.as_ref().map(|c| (c.r, c.lag));
            m[i][j] = cell;
            m[j][i] = cell;
        }
        m
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("influence graph serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Graphviz description of the edges.
    pub fn to_dot(&self) -> String {
        let quote = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let mut out = String::from("digraph influence {\n");
        for e in &self.entities {
            let _ = writeln!(out, "  {} [kind={}];", quote(&e.entity_id), e.kind);
        }
        for e in &self.edges {
            let _ = writeln!(out, "  {} -> {} [lag={}, r={:.4}];", quote(&e.source), quote(&e.target), e.lag, e.r);
        }
        out.push_str("}\n");
        out
    }
}

fn sort_edges(edges: &mut [InfluenceEdge]) {
    edges.sort_by(|x, y| (&x.source, &x.target).cmp(&(&y.source, &y.target)));
}

/// Scans every unordered pair (in parallel) and keeps the pairs whose best
/// lagged tuple passes the threshold.
pub fn discover(series: &[EntityTimeSeries], cfg: &DiscoveryConfig) -> InfluenceGraph {
    let n = series.len();
    let pairs_ix: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let pairs: Vec<PairSummary> = pairs_ix.par_iter().map(|&(i, j)| summarize_pair(&series[i], &series[j], cfg)).collect();
    let mut graph = InfluenceGraph {
        config: cfg.clone(),
        entities: series.iter().map(|s| EntityRef { entity_id: s.entity_id.clone(), kind: s.kind }).collect(),
        edges: Vec::new(),
        pairs,
    };
    graph.edges = graph.edges_at(cfg.min_correlation, cfg.use_absolute);
    graph
}

pub fn discover_table(table: &EntitySeriesTable, cfg: &DiscoveryConfig) -> InfluenceGraph {
    discover(&table.series, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entities::SeriesValue;
    use proptest::prelude::*;

    fn some(x: &[f64]) -> Vec<Option<f64>> {
        x.iter().map(|v| Some(*v)).collect()
    }

    fn scalar(id: &str, x: &[f64]) -> EntityTimeSeries {
        EntityTimeSeries {
            entity_id: id.into(),
            kind: EntityKind::Physical,
            values: x.iter().map(|v| SeriesValue::Scalar(*v)).collect(),
        }
    }

    #[test]
    fn pearson_basics() {
        let close = |r: Option<f64>, want: f64| (r.unwrap() - want).abs() < 1e-12;
        assert!(close(pearson_slices(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0));
        assert!(close(pearson_slices(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0));
        assert_eq!(pearson_slices(&[1.0, 1.0, 1.0], &[3.0, 2.0, 1.0]), None);
        assert_eq!(pearson_slices(&[1.0], &[3.0]), None);
        let x = [Some(1.0), None, Some(2.0), Some(3.0)];
        let y = [Some(2.0), Some(9.0), Some(4.0), Some(6.0)];
        assert!(close(pearson(&x, &y), 1.0));
    }

    #[test]
    fn exact_shift_peaks_at_its_lag() {
        let lead: Vec<f64> = (0..40).map(|t| ((t * 7919) % 31) as f64).collect();
        let mut lagging = vec![0.0; 40];
        for t in 2..40 {
            lagging[t] = lead[t - 2];
        }
        let table = lagged_correlation(&some(&lead), &some(&lagging), 5, 8);
        let best = table.iter().filter_map(|l| l.r.map(|r| (l.lag, r))).max_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
        assert_eq!(best.0, 2);
        assert!((best.1 - 1.0).abs() < 1e-12);
        assert!(table.iter().filter(|l| l.lag != 2).all(|l| l.r.unwrap() < 1.0 - 1e-9));
    }

    #[test]
    fn constant_lead_is_undefined() {
        let table = lagged_correlation(&some(&[1.0; 20]), &some(&(0..20).map(f64::from).collect::<Vec<_>>()), 3, 8);
        assert!(table.iter().all(|l| l.r.is_none()));
    }

    #[test]
    fn short_overlap_is_undefined() {
        let table = lagged_correlation(&some(&[1.0, 2.0, 3.0, 4.0]), &some(&[1.0, 2.0, 3.0, 5.0]), 1, 8);
        assert!(table.iter().all(|l| l.r.is_none()));
    }

    #[test]
    fn one_window_shift_gives_forward_edge() {
        let x: Vec<f64> = (0..30).map(|t| ((t * 37) % 11) as f64).collect();
        let mut y = vec![0.0; 30];
        y[1..].copy_from_slice(&x[..29]);
        let cfg = DiscoveryConfig::default();
        let edge = best_edge(&scalar("a", &x), &scalar("b", &y), &cfg).unwrap();
        assert_eq!((edge.source.as_str(), edge.target.as_str(), edge.lag), ("a", "b", 1));
        let reversed = best_edge(&scalar("b", &y), &scalar("a", &x), &cfg).unwrap();
        assert_eq!((reversed.source.as_str(), reversed.lag), ("a", 1));
    }

    #[test]
    fn identical_series_have_no_edge() {
        let x: Vec<f64> = (0..30).map(|t| ((t * 37) % 11) as f64).collect();
        let g = discover(&[scalar("a", &x), scalar("b", &x)], &DiscoveryConfig::default());
        assert!(g.edges.is_empty());
        let best = g.pairs[0].best.as_ref().unwrap();
        assert_eq!((best.lag, best.r), (0, 1.0));
    }

    #[test]
    fn vector_axes_are_reported() {
        let x: Vec<f64> = (0..30).map(|t| ((t * 37) % 11) as f64).collect();
        let a = EntityTimeSeries {
            entity_id: "a".into(),
            kind: EntityKind::Community,
            values: x.iter().map(|v| SeriesValue::Vector(vec![0.5, *v])).collect(),
        };
        let mut shifted = vec![0.0; 30];
        shifted[2..].copy_from_slice(&x[..28]);
        let b = scalar("b", &shifted);
        let edge = best_edge(&a, &b, &DiscoveryConfig::default()).unwrap();
        assert_eq!((edge.source_axis, edge.target_axis, edge.lag), (Some(1), None, 2));
    }

    #[test]
    fn dot_export_lists_edges() {
        let x: Vec<f64> = (0..30).map(|t| ((t * 37) % 11) as f64).collect();
        let mut y = vec![0.0; 30];
        y[1..].copy_from_slice(&x[..29]);
        let g = discover(&[scalar("a", &x), scalar("b", &y)], &DiscoveryConfig::default());
        let dot = g.to_dot();
        assert!(dot.contains("\"a\" -> \"b\" [lag=1"));
        assert_eq!(InfluenceGraph::from_json(&g.to_json()).unwrap(), g);
    }

    fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| (prop::collection::vec(-1e3f64..1e3, n), prop::collection::vec(-1e3f64..1e3, n)))
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric((x, y) in series()) {
            if let Some(r) = pearson_slices(&x, &y) {
                prop_assert!(r.abs() <= 1.0 + 1e-12);
                prop_assert_eq!(Some(r), pearson_slices(&y, &x));
            }
        }

        #[test]
        fn affine_invariance((x, y) in series(), alpha in 0.01f64..100.0, gamma in -100.0f64..100.0) {
            let y2: Vec<f64> = y.iter().map(|v| alpha * v + gamma).collect();
            if let (Some(r1), Some(r2)) = (pearson_slices(&x, &y), pearson_slices(&x, &y2)) {
                prop_assert!((r1 - r2).abs() < 1e-9);
            }
        }
    }
}
