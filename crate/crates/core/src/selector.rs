//! Difficulty estimation and cost-aware pool selection.

use serde::{Deserialize, Serialize};

use crate::choice::{derive_seed, Chooser};
use crate::diffcore::{sigmoid, Graph, ParameterStore, Tensor, Var};
use crate::embedding::Embedding;
use crate::error::{Error, SelectError, ShapeError};

pub const DEFAULT_BUCKET_TEMPERATURE: f64 = 0.05;
pub const DIFFICULTY_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultySource {
    /// Offline label shipped with the query.
    Label,
    Stub,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEstimate {
    pub d: f64,
    pub d_eff: f64,
    pub source: DifficultySource,
}

impl DifficultyEstimate {
    pub fn new(d: f64, delta: f64, source: DifficultySource) -> Self {
        Self {
            d,
            d_eff: effective_difficulty(d, delta),
            source,
        }
    }
}

pub fn effective_difficulty(d: f64, delta: f64) -> f64 {
    (d + delta).clamp(0.0, 1.0)
}

/// Difficulty label from the fraction of reference models that solve an item.
pub fn difficulty_from_ease(solved: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.5;
    }
    1.0 - solved as f64 / total as f64
}

/// Deterministic offline estimator: whitespace length scaled by
/// `max_tokens`, blended with a per-query hash jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StubEstimator {
    pub max_tokens: usize,
    pub jitter_weight: f64,
    pub seed: u64,
}

impl Default for StubEstimator {
    fn default() -> Self {
        Self {
            max_tokens: 48,
            jitter_weight: 0.1,
            seed: 0,
        }
    }
}

impl StubEstimator {
    pub fn estimate(&self, query: &str) -> f64 {
        let len = query.split_whitespace().count() as f64;
        let base = (len / self.max_tokens.max(1) as f64).min(1.0);
        let jitter = (derive_seed(self.seed, query) >> 11) as f64 / (1u64 << 53) as f64;
        let w = self.jitter_weight.clamp(0.0, 1.0);
        ((1.0 - w) * base + w * jitter).clamp(0.0, 1.0)
    }
}

/// Trainable MLP head `σ(w2·relu(W1 e + b1) + b2)` over frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyHead {
    pub params: ParameterStore,
}

impl DifficultyHead {
    /// All-zero head: predicts 0.5 for every query.
    pub fn zeros(dim: usize) -> Self {
        let mut params = ParameterStore::new(0);
        params.insert("diff_w1", Tensor::zeros(DIFFICULTY_HIDDEN, dim));
        params.insert("diff_b1", Tensor::zeros(DIFFICULTY_HIDDEN, 1));
        params.insert("diff_w2", Tensor::zeros(1, DIFFICULTY_HIDDEN));
        params.insert("diff_b2", Tensor::zeros(1, 1));
        Self { params }
    }

    pub fn random(dim: usize, seed: u64) -> Self {
        let mut params = ParameterStore::new(seed);
        params.init_uniform("diff_w1", DIFFICULTY_HIDDEN, dim);
        params.insert("diff_b1", Tensor::zeros(DIFFICULTY_HIDDEN, 1));
        params.init_uniform("diff_w2", 1, DIFFICULTY_HIDDEN);
        params.insert("diff_b2", Tensor::zeros(1, 1));
        Self { params }
    }

    /// Pre-sigmoid score.
    pub fn logit(&self, g: &mut Graph, embedding: &Embedding) -> Result<Var, ShapeError> {
        let w1 = g.param(&self.params, "diff_w1")?;
        let b1 = g.param(&self.params, "diff_b1")?;
        let w2 = g.param(&self.params, "diff_w2")?;
        let b2 = g.param(&self.params, "diff_b2")?;
        let x = g.column(embedding.values());
        let z1 = g.matmul(w1, x)?;
        let z1 = g.add(z1, b1)?;
        let a1 = g.relu(z1);
        let z2 = g.matmul(w2, a1)?;
        g.add(z2, b2)
    }

    pub fn predict(&self, embedding: &Embedding) -> Result<f64, ShapeError> {
        let mut g = Graph::new();
        let z = self.logit(&mut g, embedding)?;
        Ok(sigmoid(g.scalar_value(z)))
    }

    /// Plain SGD on binary cross-entropy against difficulty targets in
    /// [0, 1]. Returns the mean loss of each epoch.
    pub fn fit(&mut self, data: &[(Embedding, f64)], epochs: usize, lr: f64) -> Result<Vec<f64>, Error> {
        let mut history = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            let mut total = 0.0;
            for (emb, target) in data {
                let mut g = Graph::new();
                let z = self.logit(&mut g, emb)?;
                let p = g.sigmoid(z);
                let log_p = g.log(p);
                let neg = g.scale(z, -1.0);
                let q = g.sigmoid(neg);
                let log_q = g.log(q);
                let a = g.scale(log_p, -target);
                let b = g.scale(log_q, -(1.0 - target));
                let loss = g.add(a, b)?;
                total += g.scalar_value(loss);
                g.backward(loss, &mut self.params)?;
                self.params.sgd_step(lr, Some(5.0));
            }
            history.push(total / data.len().max(1) as f64);
        }
        Ok(history)
    }
}

/// Sigmoid-difference bucketizer over thresholds `thr` (last one treated as
/// +∞, first lower edge as −∞), renormalised.
pub fn bucket_probs(thr: &[f64], d: f64, tau: f64) -> Vec<f64> {
    let n = thr.len();
    let raw: Vec<f64> = (0..n)
        .map(|p| {
            let lower = if p == 0 { 1.0 } else { sigmoid((d - thr[p - 1]) / tau) };
            let upper = if p + 1 == n { 0.0 } else { sigmoid((d - thr[p]) / tau) };
            lower - upper
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / total).collect()
}

/// Graph nodes of an unsampled pool distribution.
#[derive(Debug, Clone)]
pub struct PoolGraph {
    /// Projected context `e_p` of every pool (masked ones included).
    pub contexts: Vec<Var>,
    /// Unnormalised bucket masses of the allowed pools `0..=upper_bound`.
    pub masses: Vec<Var>,
    pub total: Var,
    pub weights: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Over every pool; masked entries are 0.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDecision {
    pub index: usize,
    pub weights: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub probs: Vec<f64>,
    pub p_sel: f64,
    pub log_p_sel: f64,
    pub d: f64,
    pub d_eff: f64,
}

/// Cost-aware logits `ℓ_p = w_pool_score · e_p − softplus(alpha_raw)·c̄_p`,
/// masked above `upper_bound`, turned into softmax weights, prefix-sum
/// thresholds and bucket probabilities at `d_eff`.
///
/// `pool_inputs[p]` is the mean of the members' `[e_perf; e_ptp; e_type]`.
pub fn pool_distribution(
    g: &mut Graph,
    params: &ParameterStore,
    pool_inputs: &[Tensor],
    cost_curve: &[f64],
    d_eff: f64,
    upper_bound: usize,
    tau: f64,
) -> Result<PoolGraph, SelectError> {
    let pools = pool_inputs.len();
    if pools == 0 {
        return Err(SelectError::AllMasked { upper_bound, pools });
    }
    if upper_bound >= pools {
        return Err(SelectError::Invalid(format!(
            "upper bound {upper_bound} is not a pool index (have {pools} pools)"
        )));
    }
    if cost_curve.len() != pools {
        return Err(SelectError::Invalid(format!(
            "cost curve has {} entries for {pools} pools",
            cost_curve.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(SelectError::Invalid(format!("bucket temperature must be > 0, got {tau}")));
    }
    let w_ctx = g.param(params, "w_pool_ctx")?;
    let w_score = g.param(params, "w_pool_score")?;
    let alpha_raw = g.param(params, "alpha_raw")?;
    let alpha = g.softplus(alpha_raw);

    let mut contexts = Vec::with_capacity(pools);
    for input in pool_inputs {
        let x = g.constant(input.clone());
        contexts.push(g.matmul(w_ctx, x)?);
    }
    let mut logits = Vec::with_capacity(upper_bound + 1);
    for p in 0..=upper_bound {
        let score = g.matmul(w_score, contexts[p])?;
        let penalty = g.scale(alpha, cost_curve[p]);
        logits.push(g.sub(score, penalty)?);
    }
    let stacked = g.concat(&logits)?;
    let w = g.softmax(stacked)?;

    let allowed = upper_bound + 1;
    // upper sigmoid edge of each allowed bucket except the last
    let mut edges = Vec::with_capacity(allowed.saturating_sub(1));
    let mut thresholds = Vec::with_capacity(allowed);
    let mut running: Option<Var> = None;
    for p in 0..allowed {
        let wp = g.pick(w, p)?;
        let thr = match running {
            None => wp,
            Some(prev) => g.add(prev, wp)?,
        };
        running = Some(thr);
        thresholds.push(g.scalar_value(thr));
        if p + 1 < allowed {
            let neg = g.scale(thr, -1.0 / tau);
            let arg = g.offset(neg, d_eff / tau);
            edges.push(g.sigmoid(arg));
        }
    }
    let mut masses = Vec::with_capacity(allowed);
    for p in 0..allowed {
        let mass = match (p, allowed) {
            (_, 1) => g.scalar(1.0),
            (0, _) => {
                let s = g.scale(edges[0], -1.0);
                g.offset(s, 1.0)
            }
            (p, n) if p + 1 == n => edges[p - 1],
            (p, _) => g.sub(edges[p - 1], edges[p])?,
        };
        masses.push(mass);
    }
    let all = g.concat(&masses)?;
    let total = g.sum(all);
    let total_value = g.scalar_value(total);
    let mut probs = vec![0.0; pools];
    for (p, m) in masses.iter().enumerate() {
        probs[p] = g.scalar_value(*m) / total_value;
    }
    Ok(PoolGraph {
        contexts,
        masses,
        total,
        weights: g.value(w).data().to_vec(),
        thresholds,
        probs,
    })
}

/// Draws the pool under label `"pool"`; `log_p_sel` stays on the tape.
pub fn sample_pool(
    g: &mut Graph,
    dist: &PoolGraph,
    d: f64,
    d_eff: f64,
    chooser: &mut dyn Chooser,
) -> Result<(PoolDecision, Var), SelectError> {
    let index = chooser.categorical("pool", &dist.probs);
    let mass = *dist
        .masses
        .get(index)
        .ok_or_else(|| SelectError::Invalid(format!("chooser picked masked pool {index}")))?;
    let log_mass = g.log(mass);
    let log_total = g.log(dist.total);
    let log_p = g.sub(log_mass, log_total)?;
    let decision = PoolDecision {
        index,
        weights: dist.weights.clone(),
        thresholds: dist.thresholds.clone(),
        probs: dist.probs.clone(),
        p_sel: dist.probs[index],
        log_p_sel: g.scalar_value(log_p),
        d,
        d_eff,
    };
    Ok((decision, log_p))
}
