//! Link scoring and graph cleaning. Existing user–assertion links are
//! scored so implausible ones can be dropped, and the best-scoring non-links
//! are proposed for imputation. The baseline scorer is a neighbourhood
//! Jaccard; anything implementing [`LinkScorer`] can replace it.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BipartiteGraph, Edge, EdgeKind, NodeId};

#[derive(Debug, Error, PartialEq)]
pub enum CleaningError {
    #[error("{name} must lie in [0, 1], got {value}")]
    Threshold { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkScore {
    pub user: NodeId,
    pub assertion: NodeId,
    pub score: f64,
    pub existing: bool,
}

pub trait LinkScorer {
    /// Scores every existing link and at most `candidate_budget` non-links.
    fn score_links(&self, graph: &BipartiteGraph, candidate_budget: usize) -> Vec<LinkScore>;
}

/// Jaccard overlap between the assertions a user engages and the assertions
/// engaged by the other engagers of the target assertion.
#[derive(Debug, Clone, Copy, Default)]
pub struct JaccardScorer;

impl LinkScorer for JaccardScorer {
    fn score_links(&self, graph: &BipartiteGraph, candidate_budget: usize) -> Vec<LinkScore> {
        score_links(graph, candidate_budget)
    }
}

struct Adjacency<'g> {
    users: Vec<&'g str>,
    assertions: Vec<&'g str>,
    by_user: Vec<Vec<usize>>,
    by_assertion: Vec<Vec<usize>>,
}

impl<'g> Adjacency<'g> {
    fn new(graph: &'g BipartiteGraph) -> Self {
        let users: Vec<&str> = graph.users().iter().map(String::as_str).collect();
        let assertions: Vec<&str> = graph.assertions().keys().map(String::as_str).collect();
        let user_ix: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let assertion_ix: HashMap<&str, usize> = assertions.iter().enumerate().map(|(i, a)| (*a, i)).collect();
        let mut by_user = vec![Vec::new(); users.len()];
        let mut by_assertion = vec![Vec::new(); assertions.len()];
        for e in graph.edges() {
            let (u, a) = (user_ix[e.user.as_str()], assertion_ix[e.assertion.as_str()]);
            by_user[u].push(a);
            by_assertion[a].push(u);
        }
        for list in by_user.iter_mut().chain(by_assertion.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        Self { users, assertions, by_user, by_assertion }
    }

    /// For each assertion reachable in two hops from `a`, how many of `a`'s
    /// engagers touch it.
    fn co_engagement(&self, a: usize) -> HashMap<usize, u32> {
        let mut counts = HashMap::new();
        for &u in &self.by_assertion[a] {
            for &x in &self.by_user[u] {
                *counts.entry(x).or_insert(0) += 1;
            }
        }
        counts
    }

    fn jaccard(&self, u: usize, a: usize, counts: &HashMap<usize, u32>, existing: bool) -> f64 {
        let support = counts.len() - usize::from(counts.contains_key(&a));
        let own: u32 = u32::from(existing);
        let mut inter = 0usize;
        let mut own_only = 0usize;
        let mut user_side = 0usize;
        for &x in &self.by_user[u] {
            if x == a {
                continue;
            }
            user_side += 1;
            let c = counts.get(&x).copied().unwrap_or(0);
            if c > own {
                inter += 1;
            } else if existing && c == 1 {
                own_only += 1;
            }
        }
        let assertion_side = support - own_only;
        let union = assertion_side + user_side - inter;
        if union == 0 {
            0.0
        } else {
            (inter as f64 / union as f64).clamp(0.0, 1.0)
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    user: usize,
    assertion: usize,
    score: f64,
}

fn rank(a: &Candidate, b: &Candidate, adj: &Adjacency) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| adj.users[a.user].cmp(adj.users[b.user]))
        .then_with(|| adj.assertions[a.assertion].cmp(adj.assertions[b.assertion]))
}

/// Baseline scorer. Existing links come first in `(user, assertion)` order,
/// followed by the top `candidate_budget` non-links, best first.
pub fn score_links(graph: &BipartiteGraph, candidate_budget: usize) -> Vec<LinkScore> {
    let adj = Adjacency::new(graph);
    let per_assertion: Vec<(Vec<Candidate>, Vec<Candidate>)> = (0..adj.assertions.len())
        .into_par_iter()
        .map(|a| {
            let counts = adj.co_engagement(a);
            let existing: Vec<Candidate> = adj.by_assertion[a]
                .iter()
                .map(|&u| Candidate { user: u, assertion: a, score: adj.jaccard(u, a, &counts, true) })
                .collect();
            let engaged: HashSet<usize> = adj.by_assertion[a].iter().copied().collect();
            let mut reach: BTreeSet<usize> = BTreeSet::new();
            for &x in counts.keys() {
                if x != a {
                    reach.extend(adj.by_assertion[x].iter().copied().filter(|u| !engaged.contains(u)));
                }
            }
            let mut candidates: Vec<Candidate> = reach
                .into_iter()
                .map(|u| Candidate { user: u, assertion: a, score: adj.jaccard(u, a, &counts, false) })
                .filter(|c| c.score > 0.0)
                .collect();
            candidates.sort_by(|x, y| rank(x, y, &adj));
            candidates.truncate(candidate_budget);
            (existing, candidates)
        })
        .collect();

    let mut existing: Vec<Candidate> = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();
    for (e, c) in per_assertion {
        existing.extend(e);
        candidates.extend(c);
    }
    existing.sort_by(|x, y| adj.users[x.user].cmp(adj.users[y.user]).then(adj.assertions[x.assertion].cmp(adj.assertions[y.assertion])));
    candidates.sort_by(|x, y| rank(x, y, &adj));
    candidates.truncate(candidate_budget);

    // Zero-score pairs fill any remaining budget in key order.
    if candidates.len() < candidate_budget {
        let taken: HashSet<(usize, usize)> = candidates.iter().map(|c| (c.user, c.assertion)).collect();
        'fill: for u in 0..adj.users.len() {
            for a in 0..adj.assertions.len() {
                if candidates.len() >= candidate_budget {
                    break 'fill;
                }
                if adj.by_user[u].binary_search(&a).is_err() && !taken.contains(&(u, a)) {
                    candidates.push(Candidate { user: u, assertion: a, score: 0.0 });
                }
            }
        }
    }

    let to_score = |c: &Candidate, existing: bool| LinkScore {
        user: NodeId::user(adj.users[c.user]),
        assertion: NodeId::assertion(adj.assertions[c.assertion]),
        score: c.score,
        existing,
    };
    existing
        .iter()
        .map(|c| to_score(c, true))
        .chain(candidates.iter().map(|c| to_score(c, false)))
        .collect()
}

fn check_threshold(name: &'static str, value: f64) -> Result<(), CleaningError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(CleaningError::Threshold { name, value })
    }
}

/// Drops existing links scoring below `remove_threshold` and inserts
/// non-links scoring at least `add_threshold` as imputed edges stamped at the
/// midpoint of the graph's date range. `add_threshold = 1.0` never inserts.
/// The node set is unchanged.
pub fn apply_cleaning(
    graph: &BipartiteGraph,
    scores: &[LinkScore],
    add_threshold: f64,
    remove_threshold: f64,
) -> Result<BipartiteGraph, CleaningError> {
    check_threshold("add_threshold", add_threshold)?;
    check_threshold("remove_threshold", remove_threshold)?;

    let drop: HashSet<(&str, &str)> = scores
        .iter()
        .filter(|s| s.existing && s.score < remove_threshold)
        .map(|s| (s.user.key.as_str(), s.assertion.key.as_str()))
        .collect();
    let mut edges: Vec<Edge> = graph
        .edges()
        .iter()
        .filter(|e| !drop.contains(&(e.user.as_str(), e.assertion.as_str())))
        .cloned()
        .collect();
    if add_threshold < 1.0 {
        let stamp = graph.date_range().midpoint();
        for s in scores.iter().filter(|s| !s.existing && s.score >= add_threshold) {
            if graph.contains(&s.user) && graph.contains(&s.assertion) {
                edges.push(Edge {
                    user: s.user.key.clone(),
                    assertion: s.assertion.key.clone(),
                    kind: EdgeKind::Imputed,
                    timestamp: stamp,
                });
            }
        }
    }
    Ok(graph.with_edges(edges).expect("cleaning keeps edges on existing nodes"))
}

/// Tab-separated dump of scores with a header row.
pub fn scores_to_tsv(scores: &[LinkScore]) -> String {
    let mut out = String::from("user\tassertion\tscore\texisting\n");
    for s in scores {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            crate::table::escape(&s.user.key),
            crate::table::escape(&s.assertion.key),
            s.score,
            s.existing
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_day, graph_from_pairs};

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(u, a)| (u.to_string(), a.to_string())).collect()
    }

    fn score_of(scores: &[LinkScore], u: &str, a: &str) -> f64 {
        scores.iter().find(|s| s.user.key == u && s.assertion.key == a).unwrap().score
    }

    #[test]
    fn perfect_overlap_scores_one() {
        // v and w engage {a, x, y}; u engages {x, y} but not a.
        let g = graph_from_pairs(
            default_day(),
            &pairs(&[("v", "a"), ("v", "x"), ("v", "y"), ("w", "a"), ("w", "x"), ("w", "y"), ("u", "x"), ("u", "y")]),
        );
        let scores = score_links(&g, 10);
        let s = scores.iter().find(|s| s.user.key == "u" && s.assertion.key == "a").unwrap();
        assert!(!s.existing);
        assert_eq!(s.score, 1.0);
        assert_eq!(score_of(&scores, "v", "a"), 1.0);
    }

    #[test]
    fn isolated_pair_scores_zero() {
        let g = graph_from_pairs(default_day(), &pairs(&[("u", "a"), ("v", "b")]));
        let scores = score_links(&g, 10);
        assert_eq!(score_of(&scores, "u", "a"), 0.0);
        assert_eq!(score_of(&scores, "u", "b"), 0.0);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(&s.score)));
    }

    #[test]
    fn budget_caps_candidates() {
        let g = graph_from_pairs(default_day(), &pairs(&[("u", "a"), ("v", "b"), ("w", "c")]));
        let scores = score_links(&g, 2);
        assert_eq!(scores.iter().filter(|s| s.existing).count(), 3);
        assert_eq!(scores.iter().filter(|s| !s.existing).count(), 2);
    }

    #[test]
    fn identity_configuration_is_a_no_op() {
        let g = graph_from_pairs(
            default_day(),
            &pairs(&[("v", "a"), ("v", "x"), ("w", "a"), ("w", "x"), ("u", "x")]),
        );
        let scores = score_links(&g, 100);
        let cleaned = apply_cleaning(&g, &scores, 1.0, 0.0).unwrap();
        assert_eq!(cleaned.to_snapshot_bytes(), g.to_snapshot_bytes());
    }

    #[test]
    fn single_candidate_is_imputed() {
        let g = graph_from_pairs(default_day(), &pairs(&[("u", "b"), ("v", "a")]));
        let scores = vec![LinkScore {
            user: NodeId::user("u"),
            assertion: NodeId::assertion("a"),
            score: 0.9,
            existing: false,
        }];
        let cleaned = apply_cleaning(&g, &scores, 0.8, 0.0).unwrap();
        let imputed: Vec<_> = cleaned.edges().iter().filter(|e| e.kind == EdgeKind::Imputed).collect();
        assert_eq!(imputed.len(), 1);
        assert_eq!(imputed[0].timestamp, g.date_range().midpoint());
        assert_eq!(apply_cleaning(&g, &scores, 0.95, 0.0).unwrap().edges().len(), 2);
    }

    #[test]
    fn thresholds_are_validated() {
        let g = graph_from_pairs(default_day(), &pairs(&[("u", "a")]));
        assert_eq!(
            apply_cleaning(&g, &[], 1.5, 0.0).unwrap_err(),
            CleaningError::Threshold { name: "add_threshold", value: 1.5 }
        );
        assert!(apply_cleaning(&g, &[], 0.5, -0.1).is_err());
    }
}
