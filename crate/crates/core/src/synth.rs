//! Seeded synthetic corpora and graphs with planted ground truth.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Days, NaiveDate, Utc};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{AssertionKind, AssertionMeta, BipartiteGraph, DateRange, Edge, EdgeKind};
use crate::ingest::{EventRecord, Post};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn midnight(d: NaiveDate) -> DateTime<Utc> {
    d.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

/// Graph over `(user, assertion, timestamp)` engagement triples. Assertions
/// are authorless posts; edges are reposts.
pub fn graph_from_triples(range: DateRange, triples: &[(String, String, DateTime<Utc>)]) -> BipartiteGraph {
    let users: BTreeSet<String> = triples.iter().map(|t| t.0.clone()).collect();
    let assertions: BTreeMap<String, AssertionMeta> = triples
        .iter()
        .map(|t| {
            (
                t.1.clone(),
                AssertionMeta { kind: AssertionKind::Post, author: None, timestamp: None, text: String::new(), host: None },
            )
        })
        .collect();
    let edges = triples
        .iter()
        .map(|(u, a, ts)| Edge { user: u.clone(), assertion: a.clone(), kind: EdgeKind::Repost, timestamp: *ts })
        .collect();
    BipartiteGraph::from_parts(range, users, assertions, edges).expect("synthetic graph is consistent")
}

/// Graph over `(user, assertion)` pairs, all stamped on `day`.
pub fn graph_from_pairs(day: NaiveDate, pairs: &[(String, String)]) -> BipartiteGraph {
    let ts = midnight(day);
    let triples: Vec<_> = pairs.iter().map(|(u, a)| (u.clone(), a.clone(), ts)).collect();
    graph_from_triples(DateRange { start: day, end: day + Days::new(1) }, &triples)
}

pub fn default_day() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 3, 1).expect("valid date")
}

/// Bipartite graph with planted blocks. Users and assertions each belong to
/// one block; a pair links with `p_in` inside a block, `p_out` across.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    pub pairs: Vec<(String, String)>,
    pub user_block: BTreeMap<String, usize>,
    pub assertion_block: BTreeMap<String, usize>,
}

pub fn block_model(
    blocks: usize,
    users_per_block: usize,
    assertions_per_block: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> BlockGraph {
    let mut rng = rng(seed);
    let mut user_block = BTreeMap::new();
    let mut assertion_block = BTreeMap::new();
    for b in 0..blocks {
        for i in 0..users_per_block {
            user_block.insert(format!("u{b}_{i:04}"), b);
        }
        for i in 0..assertions_per_block {
            assertion_block.insert(format!("a{b}_{i:04}"), b);
        }
    }
    let mut pairs = Vec::new();
    for (u, ub) in &user_block {
        for (a, ab) in &assertion_block {
            let p = if ub == ab { p_in } else { p_out };
            if rng.random::<f64>() < p {
                pairs.push((u.clone(), a.clone()));
            }
        }
    }
    BlockGraph { pairs, user_block, assertion_block }
}

/// Two-sided echo-chamber graph: each user engages `per_user` assertions,
/// choosing the other side with probability `cross_fraction`. Node sides are
/// returned keyed by `user:`/`assertion:` display form.
pub fn echo_chambers(
    users_per_side: usize,
    assertions_per_side: usize,
    per_user: usize,
    cross_fraction: f64,
    seed: u64,
) -> BlockGraph {
    let mut rng = rng(seed);
    let mut user_block = BTreeMap::new();
    let mut assertion_block = BTreeMap::new();
    let mut by_side: Vec<Vec<String>> = vec![Vec::new(), Vec::new()];
    for side in 0..2 {
        for i in 0..assertions_per_side {
            let key = format!("a{side}_{i:04}");
            assertion_block.insert(key.clone(), side);
            by_side[side].push(key);
        }
    }
    let mut pairs = BTreeSet::new();
    for side in 0..2 {
        let users: Vec<String> = (0..users_per_side).map(|i| format!("u{side}_{i:04}")).collect();
        for user in &users {
            user_block.insert(user.clone(), side);
            for _ in 0..per_user {
                let target_side = if rng.random::<f64>() < cross_fraction { 1 - side } else { side };
                let a = by_side[target_side].choose(&mut rng).expect("nonempty side").clone();
                pairs.insert((user.clone(), a));
            }
        }
        // Every assertion gets at least one engager from its own side.
        let covered: BTreeSet<&String> = pairs.iter().map(|(_, a)| a).collect();
        let missing: Vec<String> = by_side[side].iter().filter(|a| !covered.contains(a)).cloned().collect();
        for a in missing {
            let user = users.choose(&mut rng).expect("nonempty side").clone();
            pairs.insert((user, a));
        }
    }
    BlockGraph { pairs: pairs.into_iter().collect(), user_block, assertion_block }
}

/// `y[t] = gain * x[t - lag] + N(0, noise)` with `x` standard normal.
pub fn lagged_pair(n: usize, lag: usize, gain: f64, noise: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let eps = Normal::new(0.0, noise).expect("valid noise");
    let x: Vec<f64> = (0..n + lag).map(|_| normal.sample(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|t| gain * x[t] + eps.sample(&mut rng)).collect();
    (x[lag..].to_vec(), y)
}

pub fn white_noise(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    (0..n).map(|_| normal.sample(rng)).collect()
}

#[derive(Debug, Clone)]
pub struct CorpusSpec {
    pub users: usize,
    pub posts: usize,
    pub days: u32,
    pub communities: usize,
    pub hosts: usize,
    /// Fraction of posts that repost/reply/quote another post.
    pub engagement_rate: f64,
    /// Fraction of posts citing a URL.
    pub url_rate: f64,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            users: 1000,
            posts: 5000,
            days: 29,
            communities: 2,
            hosts: 30,
            engagement_rate: 0.5,
            url_rate: 0.3,
            start: default_day(),
            seed: 7,
        }
    }
}

/// Social corpus with community structure: users mostly engage posts and
/// hosts of their own community. Activity is Zipf-like across users.
pub fn corpus(spec: &CorpusSpec) -> Vec<Post> {
    let mut rng = rng(spec.seed);
    let communities = spec.communities.max(1);
    let community_of = |u: usize| u % communities;
    // Zipf-ish activity weights.
    let weights: Vec<f64> = (0..spec.users).map(|u| 1.0 / (1.0 + u as f64).powf(0.8)).collect();
    let total: f64 = weights.iter().sum();
    let cumulative: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w / total;
            Some(*acc)
        })
        .collect();
    let pick_user = |rng: &mut ChaCha8Rng| {
        let r: f64 = rng.random();
        cumulative.partition_point(|c| *c < r).min(spec.users - 1)
    };

    let seconds = i64::from(spec.days) * 86_400;
    let mut stamps: Vec<i64> = (0..spec.posts).map(|_| rng.random_range(0..seconds)).collect();
    stamps.sort_unstable();
    let origin = midnight(spec.start);

    let mut posts: Vec<Post> = Vec::with_capacity(spec.posts);
    let mut by_community: Vec<Vec<usize>> = vec![Vec::new(); communities];
    for (i, offset) in stamps.into_iter().enumerate() {
        let author = pick_user(&mut rng);
        let community = community_of(author);
        let mut post = Post {
            post_id: format!("p{i:06}"),
            author_id: format!("user{author:05}"),
            timestamp: origin + chrono::Duration::seconds(offset),
            text: format!("post {i} from community {community}"),
            repost_of: None,
            reply_to: None,
            quote_of: None,
            urls: Vec::new(),
        };
        let pool_community = if rng.random::<f64>() < 0.9 { community } else { rng.random_range(0..communities) };
        let pool = &by_community[pool_community];
        if !pool.is_empty() && rng.random::<f64>() < spec.engagement_rate {
            // Prefer recent posts.
            let back = pool.len().min(200);
            let target = pool[pool.len() - 1 - rng.random_range(0..back)];
            let target_id = posts[target].post_id.clone();
            match rng.random_range(0..3) {
                0 => post.repost_of = Some(target_id),
                1 => post.reply_to = Some(target_id),
                _ => post.quote_of = Some(target_id),
            }
        }
        if rng.random::<f64>() < spec.url_rate {
            let per_community = (spec.hosts / communities).max(1);
            let host = pool_community * per_community + rng.random_range(0..per_community);
            let page = rng.random_range(0..20);
            post.text.push_str(&format!(" https://news{host}.example.org/story/{page}?utm_source=feed"));
        }
        by_community[community].push(i);
        posts.push(post);
    }
    posts
}

/// Daily counts per event type over `days` days, Poisson-ish around `base`.
pub fn daily_events(types: &[String], start: NaiveDate, days: u32, base: u64, seed: u64) -> Vec<EventRecord> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for d in 0..days {
        let date = start + Days::new(u64::from(d));
        for t in types {
            let count = (0..2 * base).filter(|_| rng.random::<f64>() < 0.5).count() as u64;
            out.push(EventRecord { date, event_type: t.clone(), count });
        }
    }
    out
}

pub use crate::ingest::{events_to_csv, posts_to_jsonl};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_posts;

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let spec = CorpusSpec { users: 50, posts: 300, seed: 1, ..Default::default() };
        let posts = corpus(&spec);
        let parsed = parse_posts(posts_to_jsonl(&posts).as_bytes()).unwrap();
        assert!(parsed.rejects.is_empty());
        assert_eq!(parsed.posts.len(), 300);
        assert!(parsed.posts.iter().any(|p| p.repost_of.is_some()));
        assert_eq!(corpus(&spec), posts);
    }

    #[test]
    fn lagged_pair_is_shifted() {
        let (x, y) = lagged_pair(50, 3, 1.0, 0.0, 4);
        assert_eq!(x.len(), 50);
        for t in 3..50 {
            assert!((y[t] - x[t - 3]).abs() < 1e-12);
        }
    }
}
