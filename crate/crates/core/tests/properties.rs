//! Property tests for the graph, cleaning, embedding, entity, discovery and
//! configuration invariants.

use std::collections::BTreeSet;

use chrono::Days;
use influence_core::cleaning::{apply_cleaning, score_links};
use influence_core::config::{Overrides, PipelineConfig};
use influence_core::discovery::{discover, DiscoveryConfig};
use influence_core::embedding::vgae::{self, logistic, Params, Problem, Sample};
use influence_core::embedding::{
    align_axes, propagate_embeddings, train_window_embedding, EmbedConfig, EmbeddingSeries, EmbeddingTable, Provenance, WindowEmbedding,
};
use influence_core::entities::{
    build_entities, detect_communities, entity_series, user_roles, Entity, EntityConfig, EntityKind, EntityTimeSeries, Member, SeriesValue,
};
use influence_core::graph::{build_graph, user_projection, window_slice, windows_for_range, BipartiteGraph, NodeId, TimeWindow};
use influence_core::ingest::EventRecord;
use influence_core::synth::{self, corpus, default_day, graph_from_pairs, CorpusSpec};
use proptest::prelude::*;
use rand::Rng;

fn small_corpus_graph(users: usize, posts: usize, days: u32, seed: u64) -> BipartiteGraph {
    build_graph(&corpus(&CorpusSpec { users, posts, days, hosts: 6, seed, ..Default::default() }), None)
}

fn random_pairs(seed: u64, users: usize, assertions: usize, density: f64) -> BipartiteGraph {
    let mut rng = synth::rng(seed);
    let mut pairs = Vec::new();
    for u in 0..users {
        for a in 0..assertions {
            if rng.random::<f64>() < density {
                pairs.push((format!("u{u}"), format!("a{a}")));
            }
        }
    }
    graph_from_pairs(default_day(), &pairs)
}

fn edge_keys(g: &BipartiteGraph) -> BTreeSet<(String, String, i64)> {
    g.edges().iter().map(|e| (e.user.clone(), e.assertion.clone(), e.timestamp.timestamp())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graphs_are_bipartite(users in 2usize..40, posts in 1usize..200, seed in any::<u64>()) {
        let g = small_corpus_graph(users, posts, 10, seed);
        for e in g.edges() {
            prop_assert!(g.contains(&NodeId::user(e.user.as_str())));
            prop_assert!(g.contains(&NodeId::assertion(e.assertion.as_str())));
            prop_assert!(g.users().contains(&e.user));
            prop_assert!(g.assertions().contains_key(&e.assertion));
        }
    }

    #[test]
    fn windows_partition_the_edges(posts in 1usize..200, len in 1u32..8, shift_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let shift = 1 + ((len - 1) as f64 * shift_frac) as u32;
        let g = small_corpus_graph(20, posts, 12, seed);
        let all = edge_keys(&g);
        let mut union = BTreeSet::new();
        // Grid of windows that reaches the last day, tail included.
        let range = g.date_range();
        let mut grid = Vec::new();
        while grid.is_empty() || range.start + Days::new(((grid.len() - 1) as u32 * shift + len) as u64) < range.end {
            grid.push(TimeWindow { start: range.start + Days::new((grid.len() as u32 * shift) as u64), length_days: len, index: grid.len() });
        }
        for w in &grid {
            let slice = edge_keys(&window_slice(&g, w));
            prop_assert!(slice.is_subset(&all));
            union.extend(slice);
        }
        prop_assert_eq!(union, all);
    }

    #[test]
    fn projection_is_symmetric(users in 2usize..30, posts in 1usize..300, seed in any::<u64>()) {
        let g = small_corpus_graph(users, posts, 5, seed);
        let p = user_projection(&g);
        let us: Vec<&String> = p.users().iter().collect();
        for a in &us {
            for b in &us {
                prop_assert_eq!(p.weight(a, b), p.weight(b, a));
            }
        }
    }

    #[test]
    fn link_scores_are_bounded_and_deterministic(seed in any::<u64>(), users in 2usize..25, assertions in 2usize..25, density in 0.05f64..0.5) {
        let g = random_pairs(seed, users, assertions, density);
        let scores = score_links(&g, 50);
        prop_assert!(scores.iter().all(|s| (0.0..=1.0).contains(&s.score)));
        prop_assert_eq!(&scores, &score_links(&g, 50));
        let identity = apply_cleaning(&g, &scores, 1.0, 0.0).unwrap();
        prop_assert_eq!(identity.to_snapshot_bytes(), g.to_snapshot_bytes());
    }

    #[test]
    fn cleaning_thresholds_are_monotone(
        seed in any::<u64>(),
        density in 0.05f64..0.5,
        add in (0.0f64..1.0, 0.0f64..1.0),
        remove in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let g = random_pairs(seed, 15, 15, density);
        let scores = score_links(&g, 200);
        let (add_lo, add_hi) = if add.0 <= add.1 { add } else { (add.1, add.0) };
        let (rm_lo, rm_hi) = if remove.0 <= remove.1 { remove } else { (remove.1, remove.0) };
        let added = |t: f64| apply_cleaning(&g, &scores, t, 0.0).unwrap().edges().len() - g.edges().len();
        prop_assert!(added(add_hi) <= added(add_lo));
        let kept = |t: f64| edge_keys(&apply_cleaning(&g, &scores, 1.0, t).unwrap());
        prop_assert!(kept(rm_hi).is_subset(&kept(rm_lo)));
    }

    #[test]
    fn kl_is_nonnegative_and_decoder_is_a_probability(seed in any::<u64>(), s in -30.0f64..30.0) {
        let p = logistic(s);
        prop_assert!(p > 0.0 && p < 1.0);
        let g = random_pairs(seed, 4, 4, 0.5);
        prop_assume!(!g.edges().is_empty());
        let problem = Problem::from_graph(&g, 2).unwrap();
        let mut rng = synth::rng(seed);
        let len = problem.len() * 2;
        let params = Params {
            mu: (0..len).map(|_| rng.random_range(-2.0..2.0)).collect(),
            logvar: (0..len).map(|_| rng.random_range(-6.0..6.0)).collect(),
        };
        let sample = Sample::draw(&problem, 3, &mut rng);
        let terms = vgae::loss(&problem, &params, &sample, &EmbedConfig::default());
        prop_assert!(terms.kl >= 0.0);
        prop_assert!(terms.is_finite());
    }

    #[test]
    fn propagation_is_a_fixed_point(seed in any::<u64>(), density in 0.02f64..0.3, trained_frac in 0.05f64..0.6) {
        let g = random_pairs(seed, 20, 20, density);
        let mut rng = synth::rng(seed ^ 1);
        let mut trained = EmbeddingTable::new(2);
        for n in g.nodes() {
            if rng.random::<f64>() < trained_frac {
                trained.insert(n, vec![rng.random(), rng.random()], Provenance::Trained);
            }
        }
        let out = propagate_embeddings(&trained, &g);
        for (n, e) in trained.iter() {
            prop_assert_eq!(out.get(n), Some(e));
        }
        prop_assert!(out.iter().all(|(_, e)| e.vector.iter().all(|x| *x >= 0.0)));
        prop_assert_eq!(propagate_embeddings(&out, &g), out);
    }

    #[test]
    fn alignment_only_permutes(seed in any::<u64>(), dim in 2usize..5, nodes in 1usize..30) {
        let mut rng = synth::rng(seed);
        let mut prev = EmbeddingTable::new(dim);
        let mut cur = EmbeddingTable::new(dim);
        for i in 0..nodes {
            prev.insert(NodeId::user(format!("n{i}")), (0..dim).map(|_| rng.random()).collect(), Provenance::Trained);
            cur.insert(NodeId::user(format!("n{i}")), (0..dim).map(|_| rng.random()).collect(), Provenance::Propagated);
        }
        cur.mark_missing(NodeId::assertion("gone"));
        let aligned = align_axes(&prev, &cur);
        let mut perm = aligned.permutation.clone();
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..dim).collect::<Vec<_>>());
        for (n, e) in cur.iter() {
            let a = aligned.table.get(n).unwrap();
            prop_assert_eq!(a.provenance, e.provenance);
            let mut x = e.vector.clone();
            let mut y = a.vector.clone();
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn no_self_loops_no_lag_zero_and_nested_thresholds(seed in any::<u64>(), n in 2usize..8, lo in 0.05f64..0.9, gap in 0.0f64..0.5) {
        let mut rng = synth::rng(seed);
        let base = synth::white_noise(40, &mut rng);
        let series: Vec<EntityTimeSeries> = (0..n)
            .map(|i| {
                // Shifted noisy copies make real edges likely.
                let noise = synth::white_noise(40, &mut rng);
                let shift = rng.random_range(0..4);
                let values = (0..40)
                    .map(|t| if t >= shift { SeriesValue::Scalar(base[t - shift] + 0.5 * noise[t]) } else { SeriesValue::Missing })
                    .collect();
                EntityTimeSeries { entity_id: format!("e{i}"), kind: EntityKind::Physical, values }
            })
            .collect();
        let hi = (lo + gap).min(1.0);
        for use_absolute in [false, true] {
            let at = |t: f64| {
                let cfg = DiscoveryConfig { max_lag_windows: 4, min_correlation: t, min_overlap: 8, use_absolute };
                discover(&series, &cfg).edges
            };
            let loose = at(lo);
            let strict = at(hi);
            for e in &loose {
                prop_assert!(e.lag >= 1);
                prop_assert_ne!(&e.source, &e.target);
            }
            let key = |e: &influence_core::discovery::InfluenceEdge| (e.source.clone(), e.target.clone(), e.lag);
            let loose: BTreeSet<_> = loose.iter().map(key).collect();
            prop_assert!(strict.iter().map(key).all(|k| loose.contains(&k)));
        }
    }

    #[test]
    fn window_config_validation_names_the_field(len in 0u32..30, shift in 0u32..30, lag in 0u32..30) {
        let ov = Overrides {
            set: vec![format!("windows.length_days={len}"), format!("windows.shift_days={shift}"), format!("windows.lag_days={lag}")],
            ..Default::default()
        };
        let valid = shift >= 1 && len >= shift && lag >= shift;
        match PipelineConfig::resolve(None, &ov) {
            Ok(_) => prop_assert!(valid),
            Err(e) => {
                prop_assert!(!valid);
                prop_assert!(e.to_string().contains("windows."), "{}", e);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trained_embeddings_are_nonnegative(seed in any::<u64>(), density in 0.1f64..0.5) {
        let g = random_pairs(seed, 12, 12, density);
        prop_assume!(!g.edges().is_empty());
        let cfg = EmbedConfig { epochs: 40, seed, ..Default::default() };
        let (table, report) = train_window_embedding(&g, &cfg, None).unwrap();
        prop_assert!(table.iter().all(|(_, e)| e.vector.iter().all(|x| *x >= 0.0)));
        let (_, again) = train_window_embedding(&g, &cfg, None).unwrap();
        prop_assert_eq!(report.trajectory, again.trajectory);
    }

    #[test]
    fn entity_roles_partition_the_users(users in 5usize..60, posts in 20usize..400, seed in any::<u64>(), influencers in 0usize..6) {
        let g = small_corpus_graph(users, posts, 6, seed);
        let partition = detect_communities(&user_projection(&g), seed, 30);
        let cfg = EntityConfig { influencer_count: influencers, ..Default::default() };
        let entities = build_entities(&g, &partition, &cfg);
        let (community, influencer, rest) = user_roles(&g, &entities);
        prop_assert!(community.is_disjoint(&influencer));
        prop_assert!(community.is_disjoint(&rest));
        prop_assert!(influencer.is_disjoint(&rest));
        let union: BTreeSet<String> = community.iter().chain(&influencer).chain(&rest).cloned().collect();
        prop_assert_eq!(&union, g.users());
        // No user sits in two communities.
        let mut seen = BTreeSet::new();
        for e in entities.iter().filter(|e| e.kind == EntityKind::Community) {
            for n in e.member_nodes() {
                prop_assert!(seen.insert(n.key.clone()));
            }
        }
    }

    #[test]
    fn singleton_and_physical_series(seed in any::<u64>(), windows_n in 1usize..8) {
        let mut rng = synth::rng(seed);
        let windows = windows_for_range(
            influence_core::graph::DateRange { start: default_day(), end: default_day() + Days::new(windows_n as u64) },
            1,
            1,
        );
        let member = NodeId::user("solo");
        let mut expected = Vec::new();
        let series = EmbeddingSeries {
            dim: 2,
            windows: windows
                .iter()
                .map(|w| {
                    let mut table = EmbeddingTable::new(2);
                    if rng.random::<f64>() < 0.7 {
                        let v = vec![rng.random::<f64>(), rng.random::<f64>()];
                        table.insert(member.clone(), v.clone(), Provenance::Trained);
                        expected.push(SeriesValue::Vector(v));
                    } else {
                        expected.push(SeriesValue::Missing);
                    }
                    WindowEmbedding { window: *w, table }
                })
                .collect(),
        };
        let community = Entity { entity_id: "community:0".into(), kind: EntityKind::Community, label: "0".into(), members: vec![Member::Node(member)] };
        prop_assert_eq!(entity_series(&community, &series, &[], &windows).values, expected);

        let events: Vec<EventRecord> = (0..windows_n as u64 * 3)
            .map(|i| EventRecord { date: default_day() + Days::new(i % windows_n as u64), event_type: "protest".into(), count: rng.random_range(0..50) })
            .collect();
        let physical = Entity { entity_id: "physical:protest".into(), kind: EntityKind::Physical, label: "protest".into(), members: vec![Member::EventType("protest".into())] };
        for v in entity_series(&physical, &series, &events, &windows).values {
            match v {
                SeriesValue::Scalar(x) => prop_assert!(x >= 0.0 && x.fract() == 0.0),
                other => prop_assert!(false, "physical value {:?}", other),
            }
        }
    }
}
