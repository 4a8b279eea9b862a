//! Nonnegative variational graph auto-encoder over a bipartite graph.
//!
//! Each node carries a diagonal Gaussian posterior with mean `relu(mu)` and
//! log-variance `logvar`. A sample `z = max(relu(mu) + sigma * eps, 0)` stays
//! in the positive orthant, and the decoder scores a link as
//! `logistic(z_u . z_a)`. The objective is
//!
//! ```text
//! sum BCE(observed links) + negative_weight * sum BCE(sampled non-links)
//!   + kl_weight    * sum_nodes KL(q || N(0, I))
//!   + ortho_weight * sum_{k != l} (Zhat^T Zhat)_{kl}^2
//! ```
//!
//! where `Zhat` is the matrix of posterior means with columns divided by
//! `sqrt(|col|^2 + NORM_SMOOTHING)`. Updates project `mu` back onto `mu >= 0`,
//! so a node pushed to the origin can still be pulled back out.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EmbedConfig, EmbedError, EmbeddingTable};
use crate::graph::{BipartiteGraph, NodeId};
use crate::synth;

const LOGVAR_MIN: f64 = -8.0;
const LOGVAR_MAX: f64 = 8.0;
const NORM_FLOOR: f64 = 1e-12;
/// Added to each squared column norm so the penalty stays smooth when a
/// column is nearly empty.
pub const NORM_SMOOTHING: f64 = 1.0;

/// Link-reconstruction problem over the nodes touched by at least one edge.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Users first, then assertions, each sorted by key.
    pub nodes: Vec<NodeId>,
    pub n_users: usize,
    pub dim: usize,
    /// `(user index, assertion index)` into `nodes`, deduplicated.
    pub positives: Vec<(usize, usize)>,
    edge_set: HashSet<(usize, usize)>,
}

impl Problem {
    pub fn from_graph(graph: &BipartiteGraph, dim: usize) -> Result<Self, EmbedError> {
        if graph.edges().is_empty() {
            return Err(EmbedError::EmptyGraph);
        }
        let users: BTreeSet<&str> = graph.edges().iter().map(|e| e.user.as_str()).collect();
        let assertions: BTreeSet<&str> = graph.edges().iter().map(|e| e.assertion.as_str()).collect();
        let nodes: Vec<NodeId> =
            users.iter().map(|u| NodeId::user(*u)).chain(assertions.iter().map(|a| NodeId::assertion(*a))).collect();
        let user_ix: HashMap<&str, usize> = users.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let assertion_ix: HashMap<&str, usize> =
            assertions.iter().enumerate().map(|(i, a)| (*a, users.len() + i)).collect();
        let pairs: BTreeSet<(usize, usize)> = graph
            .edges()
            .iter()
            .map(|e| (user_ix[e.user.as_str()], assertion_ix[e.assertion.as_str()]))
            .collect();
        Ok(Self {
            nodes,
            n_users: users.len(),
            dim,
            positives: pairs.iter().copied().collect(),
            edge_set: pairs.into_iter().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_edge(&self, user: usize, assertion: usize) -> bool {
        self.edge_set.contains(&(user, assertion))
    }

    /// Draws `ratio` non-links per observed link by corrupting both ends.
    pub fn sample_negatives(&self, ratio: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        let n_assertions = self.nodes.len() - self.n_users;
        let mut out = Vec::with_capacity(self.positives.len() * ratio);
        for _ in 0..self.positives.len() * ratio {
            for _ in 0..8 {
                let u = rng.random_range(0..self.n_users);
                let a = self.n_users + rng.random_range(0..n_assertions);
                if !self.is_edge(u, a) {
                    out.push((u, a));
                    break;
                }
            }
        }
        out
    }
}

/// Per-node posterior parameters, row-major `nodes x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Pre-activation means; the posterior mean is `relu(mu)`.
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl Params {
    pub fn zeros(len: usize) -> Self {
        Self { mu: vec![0.0; len], logvar: vec![0.0; len] }
    }

    pub fn means(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m.max(0.0)).collect()
    }
}

/// The stochastic inputs of one loss evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub noise: Vec<f64>,
    pub negatives: Vec<(usize, usize)>,
}

impl Sample {
    pub fn draw(problem: &Problem, negative_ratio: usize, rng: &mut ChaCha8Rng) -> Self {
        let noise = (0..problem.len() * problem.dim).map(|_| rng.sample(StandardNormal)).collect();
        Self { noise, negatives: problem.sample_negatives(negative_ratio, rng) }
    }

    /// Noise-free sample: the decoder sees posterior means.
    pub fn at_means(problem: &Problem, negatives: Vec<(usize, usize)>) -> Self {
        Self { noise: vec![0.0; problem.len() * problem.dim], negatives }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub reconstruction: f64,
    pub kl: f64,
    pub orthogonality: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.reconstruction.is_finite() && self.kl.is_finite() && self.orthogonality.is_finite() && self.total.is_finite()
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sum over ordered axis pairs `k != l` of the squared cosine between mean
/// columns. Optionally accumulates `weight * d/dM` into `grad_means`.
pub fn orthogonality_penalty(means: &[f64], dim: usize, weight: f64, grad_means: Option<&mut [f64]>) -> f64 {
    let n = means.len() / dim;
    let mut gram = vec![0.0; dim * dim];
    for row in means.chunks_exact(dim) {
        for k in 0..dim {
            for l in k..dim {
                gram[k * dim + l] += row[k] * row[l];
            }
        }
    }
    for k in 0..dim {
        for l in 0..k {
            gram[k * dim + l] = gram[l * dim + k];
        }
    }
    let norms: Vec<f64> = (0..dim).map(|k| (gram[k * dim + k] + NORM_SMOOTHING).sqrt()).collect();
    let mut cos = vec![0.0; dim * dim];
    let mut penalty = 0.0;
    for k in 0..dim {
        for l in 0..dim {
            if k != l && norms[k] > NORM_FLOOR && norms[l] > NORM_FLOOR {
                let c = gram[k * dim + l] / (norms[k] * norms[l]);
                cos[k * dim + l] = c;
                penalty += c * c;
            }
        }
    }
    if let Some(grad) = grad_means {
        for i in 0..n {
            let row = &means[i * dim..(i + 1) * dim];
            for k in 0..dim {
                if norms[k] <= NORM_FLOOR {
                    continue;
                }
                let mut g = 0.0;
                for l in 0..dim {
                    if l == k || norms[l] <= NORM_FLOOR {
                        continue;
                    }
                    let c = cos[k * dim + l];
                    g += 4.0 * c * (row[l] / (norms[k] * norms[l]) - c * row[k] / (norms[k] * norms[k]));
                }
                grad[i * dim + k] += weight * g;
            }
        }
    }
    penalty
}

/// Loss value only.
pub fn loss(problem: &Problem, params: &Params, sample: &Sample, cfg: &EmbedConfig) -> LossTerms {
    evaluate(problem, params, sample, cfg, None)
}

/// Loss value plus its gradient with respect to `params`, written into `grad`.
pub fn loss_and_grad(problem: &Problem, params: &Params, sample: &Sample, cfg: &EmbedConfig, grad: &mut Params) -> LossTerms {
    evaluate(problem, params, sample, cfg, Some(grad))
}

fn evaluate(problem: &Problem, params: &Params, sample: &Sample, cfg: &EmbedConfig, grad: Option<&mut Params>) -> LossTerms {
    let d = problem.dim;
    let len = problem.len() * d;
    debug_assert_eq!(params.mu.len(), len);
    let means = params.means();
    let logvar: Vec<f64> = params.logvar.iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
    let sigma: Vec<f64> = logvar.iter().map(|v| (0.5 * v).exp()).collect();
    let pre: Vec<f64> = (0..len).map(|i| means[i] + sigma[i] * sample.noise[i]).collect();
    let z: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();

    let want_grad = grad.is_some();
    let mut grad_z = if want_grad { vec![0.0; len] } else { Vec::new() };
    let mut reconstruction = 0.0;
    let labelled = problem.positives.iter().map(|p| (*p, 1.0)).chain(sample.negatives.iter().map(|p| (*p, 0.0)));
    for ((u, a), y) in labelled {
        let w = if y > 0.5 { 1.0 } else { cfg.negative_weight };
        let zu = &z[u * d..(u + 1) * d];
        let za = &z[a * d..(a + 1) * d];
        let s: f64 = zu.iter().zip(za).map(|(x, y)| x * y).sum();
        reconstruction += w * (softplus(s) - y * s);
        if want_grad {
            let g = w * (logistic(s) - y);
            for k in 0..d {
                grad_z[u * d + k] += g * za[k];
                grad_z[a * d + k] += g * zu[k];
            }
        }
    }

    let kl: f64 = (0..len).map(|i| 0.5 * (sigma[i] * sigma[i] + means[i] * means[i] - 1.0 - logvar[i])).sum();

    let mut grad_means = if want_grad { vec![0.0; len] } else { Vec::new() };
    let orthogonality = orthogonality_penalty(
        &means,
        d,
        cfg.ortho_weight,
        if want_grad { Some(grad_means.as_mut_slice()) } else { None },
    );

    if let Some(grad) = grad {
        grad.mu.clear();
        grad.mu.resize(len, 0.0);
        grad.logvar.clear();
        grad.logvar.resize(len, 0.0);
        for i in 0..len {
            let sample_active = pre[i] > 0.0;
            // The trainer keeps mu >= 0, so mu = 0 takes the one-sided derivative.
            let mean_active = params.mu[i] >= 0.0;
            let logvar_active = params.logvar[i] > LOGVAR_MIN && params.logvar[i] < LOGVAR_MAX;
            let mut gm = grad_means[i] + cfg.kl_weight * means[i];
            let mut gl = cfg.kl_weight * 0.5 * (sigma[i] * sigma[i] - 1.0);
            if sample_active {
                gm += grad_z[i];
                gl += grad_z[i] * 0.5 * sigma[i] * sample.noise[i];
            }
            grad.mu[i] = if mean_active { gm } else { 0.0 };
            grad.logvar[i] = if logvar_active { gl } else { 0.0 };
        }
    }

    let total = reconstruction + cfg.kl_weight * kl + cfg.ortho_weight * orthogonality;
    LossTerms { reconstruction, kl, orthogonality, total }
}

/// Adam with the usual defaults.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Produces per-node posterior parameters and learns from their gradient.
/// [`FreeEncoder`] stores the parameters directly; a message-passing encoder
/// would derive them from node features and graph structure.
pub trait Encoder {
    fn posterior(&self) -> &Params;
    fn apply_gradient(&mut self, grad: &Params, learning_rate: f64);
}

#[derive(Debug, Clone)]
pub struct FreeEncoder {
    params: Params,
    adam_mu: Adam,
    adam_logvar: Adam,
}

impl FreeEncoder {
    pub fn new(params: Params) -> Self {
        let len = params.mu.len();
        Self { params, adam_mu: Adam::new(len), adam_logvar: Adam::new(len) }
    }

    pub fn into_params(self) -> Params {
        self.params
    }
}

impl Encoder for FreeEncoder {
    fn posterior(&self) -> &Params {
        &self.params
    }

    fn apply_gradient(&mut self, grad: &Params, learning_rate: f64) {
        self.adam_mu.step(&mut self.params.mu, &grad.mu, learning_rate);
        self.params.mu.iter_mut().for_each(|m| *m = m.max(0.0));
        self.adam_logvar.step(&mut self.params.logvar, &grad.logvar, learning_rate);
    }
}

pub const INIT_LOGVAR: f64 = -3.0;

/// Means from `warm` where it has the node, uniform in `[0, 1)` otherwise.
pub fn initial_params(problem: &Problem, warm: Option<&EmbeddingTable>, rng: &mut ChaCha8Rng) -> Params {
    let d = problem.dim;
    let mut params = Params::zeros(problem.len() * d);
    params.logvar.fill(INIT_LOGVAR);
    for (i, node) in problem.nodes.iter().enumerate() {
        let row = &mut params.mu[i * d..(i + 1) * d];
        match warm.and_then(|t| t.vector(node)).filter(|v| v.len() == d) {
            Some(v) => row.copy_from_slice(v),
            None => row.iter_mut().for_each(|x| *x = rng.random::<f64>()),
        }
    }
    params
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub nodes: usize,
    pub positive_links: usize,
    /// Noise-free loss on a fixed negative sample, before training.
    pub initial: LossTerms,
    /// Same evaluation after training.
    #[serde(rename = "final")]
    pub final_terms: LossTerms,
    /// Stochastic training loss per epoch.
    pub trajectory: Vec<f64>,
}

/// Runs `cfg.epochs` full-batch Adam steps from `init`.
pub fn fit(problem: &Problem, cfg: &EmbedConfig, init: Params) -> Result<(Params, TrainReport), EmbedError> {
    let mut rng = synth::rng(cfg.seed);
    let mut eval_rng = synth::rng(cfg.seed ^ 0x5eed_e7a1);
    let eval = Sample::at_means(problem, problem.sample_negatives(cfg.negative_ratio, &mut eval_rng));

    let mut encoder = FreeEncoder::new(init);
    let initial = loss(problem, encoder.posterior(), &eval, cfg);
    if !initial.is_finite() {
        return Err(EmbedError::NonFinite { epoch: 0, terms: initial });
    }
    let mut trajectory = Vec::with_capacity(cfg.epochs);
    let mut grad = Params::zeros(0);
    for epoch in 0..cfg.epochs {
        let sample = Sample::draw(problem, cfg.negative_ratio, &mut rng);
        let terms = loss_and_grad(problem, encoder.posterior(), &sample, cfg, &mut grad);
        if !terms.is_finite() || grad.mu.iter().chain(&grad.logvar).any(|g| !g.is_finite()) {
            return Err(EmbedError::NonFinite { epoch, terms });
        }
        trajectory.push(terms.total);
        encoder.apply_gradient(&grad, cfg.learning_rate);
    }
    let params = encoder.into_params();
    let final_terms = loss(problem, &params, &eval, cfg);
    if !final_terms.is_finite() {
        return Err(EmbedError::NonFinite { epoch: cfg.epochs, terms: final_terms });
    }
    let report = TrainReport {
        epochs: cfg.epochs,
        nodes: problem.len(),
        positive_links: problem.positives.len(),
        initial,
        final_terms,
        trajectory,
    };
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{default_day, graph_from_pairs};

    fn tiny() -> (Problem, EmbedConfig) {
        let pairs: Vec<(String, String)> = [("u1", "a1"), ("u1", "a2"), ("u2", "a2"), ("u2", "a3"), ("u3", "a3")]
            .iter()
            .map(|(u, a)| (u.to_string(), a.to_string()))
            .collect();
        let g = graph_from_pairs(default_day(), &pairs);
        (Problem::from_graph(&g, 2).unwrap(), EmbedConfig { latent_dim: 2, ..EmbedConfig::default() })
    }

    #[test]
    fn decoder_output_is_a_probability() {
        for s in [-800.0, -5.0, 0.0, 3.0, 30.0] {
            let p = logistic(s);
            assert!((0.0..=1.0).contains(&p));
        }
        assert!(logistic(3.0) > 0.0 && logistic(3.0) < 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(-50.0) - (-50f64).exp()).abs() < 1e-25);
    }

    #[test]
    fn kl_is_nonnegative() {
        let (problem, cfg) = tiny();
        let mut rng = synth::rng(3);
        for _ in 0..20 {
            let mut params = initial_params(&problem, None, &mut rng);
            for v in params.logvar.iter_mut() {
                *v = rng.random_range(-4.0..4.0);
            }
            let sample = Sample::draw(&problem, 2, &mut rng);
            assert!(loss(&problem, &params, &sample, &cfg).kl >= 0.0);
        }
    }

    #[test]
    fn orthogonal_columns_have_zero_penalty() {
        let means = [1.0, 0.0, 2.0, 0.0, 0.0, 3.0];
        assert_eq!(orthogonality_penalty(&means, 2, 1.0, None), 0.0);
        let aligned = [1.0, 1.0, 2.0, 2.0];
        // Gram entries are 5 and smoothed norms sqrt(6).
        assert!((orthogonality_penalty(&aligned, 2, 1.0, None) - 2.0 * (5.0f64 / 6.0).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn negatives_avoid_observed_links() {
        let (problem, _) = tiny();
        let mut rng = synth::rng(1);
        for (u, a) in problem.sample_negatives(10, &mut rng) {
            assert!(u < problem.n_users && a >= problem.n_users);
            assert!(!problem.is_edge(u, a));
        }
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (problem, cfg) = tiny();
        let run = || {
            let init = initial_params(&problem, None, &mut synth::rng(cfg.seed));
            fit(&problem, &EmbedConfig { epochs: 100, ..cfg.clone() }, init).unwrap()
        };
        let (p1, r1) = run();
        let (p2, r2) = run();
        assert!(r1.final_terms.total <= r1.initial.total);
        assert_eq!(r1, r2);
        assert_eq!(p1, p2);
    }
}
