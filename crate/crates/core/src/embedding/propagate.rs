use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;

use super::{EmbeddingTable, Provenance};
use crate::graph::{BipartiteGraph, NodeId};

/// Extends `trained` to every node of `graph` by synchronous sweeps: a node
/// without a vector that has embedded neighbours takes their mean. Sweeps
/// stop when nothing changes; nodes never reached are marked missing.
/// Existing entries are kept as they are.
pub fn propagate_embeddings(trained: &EmbeddingTable, graph: &BipartiteGraph) -> EmbeddingTable {
    let mut neighbours: BTreeMap<NodeId, BTreeSet<NodeId>> = graph.nodes().map(|n| (n, BTreeSet::new())).collect();
    for e in graph.edges() {
        let (u, a) = (NodeId::user(e.user.as_str()), NodeId::assertion(e.assertion.as_str()));
        neighbours.get_mut(&u).expect("user node").insert(a.clone());
        neighbours.get_mut(&a).expect("assertion node").insert(u);
    }

    let mut table = trained.clone();
    let d = table.dim();
    let mut pending: Vec<&NodeId> = neighbours.keys().filter(|n| table.vector(n).is_none()).collect();
    loop {
        let mut updates: Vec<(NodeId, Vec<f64>)> = Vec::new();
        for node in &pending {
            let mut sum = vec![0.0; d];
            let mut count = 0usize;
            for nb in &neighbours[*node] {
                if let Some(v) = table.vector(nb) {
                    sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                    count += 1;
                }
            }
            if count > 0 {
                sum.iter_mut().for_each(|s| *s /= count as f64);
                updates.push(((*node).clone(), sum));
            }
        }
        if updates.is_empty() {
            break;
        }
        let done: BTreeSet<NodeId> = updates.iter().map(|(n, _)| n.clone()).collect();
        for (node, v) in updates {
            table.insert(node, v, Provenance::Propagated);
        }
        pending.retain(|n| !done.contains(*n));
    }
    for node in pending {
        table.mark_missing(node.clone());
    }
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub table: EmbeddingTable,
    /// New axis `k` is old axis `permutation[k]`.
    pub permutation: Vec<usize>,
    /// Set when the two tables share no embedded node; the table is then
    /// returned unchanged.
    pub no_shared_nodes: bool,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Permutes the axes of `cur` to best match `prev`: the permutation
/// maximising the summed cosine similarity between matching axis columns
/// over the nodes embedded in both tables. All `d!` permutations are tried;
/// on ties the lexicographically first permutation wins.
pub fn align_axes(prev: &EmbeddingTable, cur: &EmbeddingTable) -> Alignment {
    let d = cur.dim();
    assert_eq!(prev.dim(), d, "aligned tables must share a dimension");
    let identity: Vec<usize> = (0..d).collect();
    let shared: Vec<(&[f64], &[f64])> =
        cur.iter().filter_map(|(node, _)| Some((prev.vector(node)?, cur.vector(node)?))).collect();
    if shared.is_empty() {
        log::warn!("axis alignment skipped: no shared embedded nodes");
        return Alignment { table: cur.clone(), permutation: identity, no_shared_nodes: true };
    }
    let column = |side: usize, k: usize| -> Vec<f64> {
        shared.iter().map(|(p, c)| if side == 0 { p[k] } else { c[k] }).collect()
    };
    let prev_cols: Vec<Vec<f64>> = (0..d).map(|k| column(0, k)).collect();
    let cur_cols: Vec<Vec<f64>> = (0..d).map(|k| column(1, k)).collect();
    let sim: Vec<Vec<f64>> = (0..d).map(|k| (0..d).map(|j| cosine(&prev_cols[k], &cur_cols[j])).collect()).collect();

    let mut best = identity.clone();
    let mut best_score = f64::NEG_INFINITY;
    for perm in (0..d).permutations(d) {
        let score: f64 = perm.iter().enumerate().map(|(k, &j)| sim[k][j]).sum();
        if score > best_score + 1e-12 {
            best_score = score;
            best = perm;
        }
    }

    let mut table = EmbeddingTable::new(d);
    for (node, emb) in cur.iter() {
        if emb.provenance == Provenance::Missing {
            table.mark_missing(node.clone());
        } else {
            table.insert(node.clone(), best.iter().map(|&j| emb.vector[j]).collect(), emb.provenance);
        }
    }
    Alignment { table, permutation: best, no_shared_nodes: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_day, graph_from_pairs};

    fn path_graph() -> BipartiteGraph {
        graph_from_pairs(default_day(), &[("u".into(), "a".into()), ("v".into(), "a".into()), ("w".into(), "b".into())])
    }

    #[test]
    fn path_propagation() {
        let mut trained = EmbeddingTable::new(2);
        trained.insert(NodeId::user("u"), vec![1.0, 0.0], Provenance::Trained);
        let out = propagate_embeddings(&trained, &path_graph());
        assert_eq!(out.vector(&NodeId::assertion("a")), Some(&[1.0, 0.0][..]));
        assert_eq!(out.vector(&NodeId::user("v")), Some(&[1.0, 0.0][..]));
        assert_eq!(out.provenance(&NodeId::user("v")), Provenance::Propagated);
        assert_eq!(out.provenance(&NodeId::user("w")), Provenance::Missing);
        assert_eq!(out.provenance(&NodeId::assertion("b")), Provenance::Missing);
        assert_eq!(propagate_embeddings(&out, &path_graph()), out);
    }

    #[test]
    fn two_neighbour_mean() {
        let g = graph_from_pairs(default_day(), &[("u".into(), "a".into()), ("v".into(), "a".into())]);
        let mut trained = EmbeddingTable::new(2);
        trained.insert(NodeId::user("u"), vec![1.0, 0.0], Provenance::Trained);
        trained.insert(NodeId::user("v"), vec![0.0, 1.0], Provenance::Trained);
        let out = propagate_embeddings(&trained, &g);
        assert_eq!(out.vector(&NodeId::assertion("a")), Some(&[0.5, 0.5][..]));
    }

    fn table(rows: &[(&str, [f64; 3])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(3);
        for (k, v) in rows {
            t.insert(NodeId::user(*k), v.to_vec(), Provenance::Trained);
        }
        t
    }

    #[test]
    fn alignment_undoes_a_permutation() {
        let prev = table(&[("a", [1.0, 0.1, 0.0]), ("b", [0.0, 2.0, 0.2]), ("c", [0.3, 0.0, 1.5])]);
        let cur = table(&[("a", [0.0, 1.0, 0.1]), ("b", [0.2, 0.0, 2.0]), ("c", [1.5, 0.3, 0.0])]);
        let aligned = align_axes(&prev, &cur);
        assert_eq!(aligned.permutation, vec![1, 2, 0]);
        assert_eq!(aligned.table, prev);
        let same = align_axes(&prev, &prev);
        assert_eq!(same.permutation, vec![0, 1, 2]);
        assert_eq!(same.table, prev);
    }

    #[test]
    fn alignment_without_overlap_is_flagged() {
        let prev = table(&[("a", [1.0, 0.0, 0.0])]);
        let cur = table(&[("b", [0.0, 1.0, 0.0])]);
        let aligned = align_axes(&prev, &cur);
        assert!(aligned.no_shared_nodes);
        assert_eq!(aligned.table, cur);
    }
}
