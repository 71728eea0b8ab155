//! Agent representations, gating, edge synthesis, hop limit and
//! critical-path pruning.

use serde::{Deserialize, Serialize};

use crate::choice::Chooser;
use crate::diffcore::{Graph, ParameterStore, Var};
use crate::error::{ShapeError, TopologyError};
use crate::mas::{topological_order, Admissible};
use crate::matcher::BackboneEmbeddings;

/// `h_i = r_i^h + γ·w_ctx·attn(𝐪_i, 𝐤_i, 𝐯_i)` for every agent, with one
/// key/value row per agent built from its assigned backbone's embeddings.
///
/// `roles[i]` is the role embedding `r_i`, `backbones[i]` the backbone
/// matched to role `i`.
pub fn agent_representation(
    g: &mut Graph,
    params: &ParameterStore,
    query: Var,
    roles: &[Var],
    backbones: &[&BackboneEmbeddings],
) -> Result<Vec<Var>, ShapeError> {
    if roles.len() != backbones.len() {
        return Err(ShapeError::Mismatch {
            op: "agent_representation",
            lhs: (roles.len(), 1),
            rhs: (backbones.len(), 1),
        });
    }
    let w_q = g.param(params, "w_q")?;
    let w_r = g.param(params, "w_r")?;
    let w_l = g.param(params, "w_l")?;
    let w_aq = g.param(params, "w_attn_q")?;
    let w_ak = g.param(params, "w_attn_k")?;
    let w_av = g.param(params, "w_attn_v")?;
    let w_ctx = g.param(params, "w_ctx")?;
    let gamma = g.param(params, "gamma")?;
    let q_h = g.matmul(w_q, query)?;
    let mut out = Vec::with_capacity(roles.len());
    for (&r, b) in roles.iter().zip(backbones) {
        let r_h = g.matmul(w_r, r)?;
        let perf = g.constant(b.perf.clone());
        let ptp = g.constant(b.ptp.clone());
        let ty = g.constant(b.ty.clone());
        let d_i = g.matmul(w_l, perf)?;
        let c_i = g.matmul(w_l, ptp)?;
        let t_i = g.matmul(w_l, ty)?;
        let rq = g.concat(&[r_h, q_h])?;
        let dct = g.concat(&[d_i, c_i, t_i])?;
        let query_i = g.matmul(w_aq, rq)?;
        let key_i = g.matmul(w_ak, dct)?;
        let value_i = g.matmul(w_av, dct)?;
        let key_row = g.transpose(key_i);
        let value_row = g.transpose(value_i);
        let attn = g.attention(query_i, key_row, value_row)?;
        let ctx = g.matmul(w_ctx, attn)?;
        let scaled = g.scale_by(ctx, gamma)?;
        out.push(g.add(r_h, scaled)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub keep_probs: Vec<f64>,
    pub bits: Vec<bool>,
    /// Agents switched on by the at-least-two repair.
    pub repaired: Vec<usize>,
    pub log_p_gate: f64,
}

impl GateDecision {
    pub fn retained(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }
}

/// `log σ(x)` and `log(1 − σ(x)) = log σ(−x)` on the tape.
fn log_bernoulli(g: &mut Graph, logit: Var, kept: bool) -> Var {
    let x = if kept { logit } else { g.scale(logit, -1.0) };
    let p = g.sigmoid(x);
    g.log(p)
}

/// Keep probabilities `p_i = σ(w_gate [h_i; h̄])`, drawn under
/// `"gate/<role_id>"`. If fewer than two agents survive, the
/// highest-probability ones are switched on (and counted as kept).
pub fn gate_agents(
    g: &mut Graph,
    params: &ParameterStore,
    reprs: &[Var],
    role_ids: &[&str],
    chooser: &mut dyn Chooser,
) -> Result<(GateDecision, Var), TopologyError> {
    let n = reprs.len();
    if n < 2 {
        return Err(TopologyError::TooFewAgents(n));
    }
    let w_gate = g.param(params, "w_gate")?;
    let h_bar = g.mean(reprs)?;
    let mut logits = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut bits = Vec::with_capacity(n);
    for (i, &h) in reprs.iter().enumerate() {
        let x = g.concat(&[h, h_bar])?;
        let logit = g.matmul(w_gate, x)?;
        let p = crate::diffcore::sigmoid(g.scalar_value(logit));
        bits.push(chooser.bernoulli(&format!("gate/{}", role_ids[i]), p));
        logits.push(logit);
        probs.push(p);
    }
    let mut repaired = Vec::new();
    while bits.iter().filter(|b| **b).count() < 2 {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !bits[i]) {
            if best.is_none_or(|b| probs[i] > probs[b]) {
                best = Some(i);
            }
        }
        let i = best.expect("fewer than two kept implies an off gate");
        bits[i] = true;
        repaired.push(i);
    }
    let terms: Vec<Var> = logits
        .iter()
        .zip(&bits)
        .map(|(&l, &b)| log_bernoulli(g, l, b))
        .collect();
    let all = g.concat(&terms)?;
    let log_p = g.sum(all);
    Ok((
        GateDecision {
            keep_probs: probs,
            bits,
            repaired,
            log_p_gate: g.scalar_value(log_p),
        },
        log_p,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeProb {
    pub from: usize,
    pub to: usize,
    pub p: f64,
}

/// Sampled edges over retained agents (local indices `0..n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSample {
    pub edge_probs: Vec<EdgeProb>,
    pub sampled: Vec<(usize, usize)>,
    pub log_p_topo: f64,
}

impl EdgeSample {
    pub fn prob(&self, from: usize, to: usize) -> Option<f64> {
        self.edge_probs
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.p)
    }
}

/// `p_ij = σ(⟨w_a h_i, w_a h_j⟩)` for admissible `i < j`, drawn under
/// `"edge/<role_i>/<role_j>"`. Edges only point forward in template order,
/// so every sample is acyclic.
///
/// `template_index[k]` maps retained agent `k` to its template position.
pub fn synthesize_topology(
    g: &mut Graph,
    params: &ParameterStore,
    reprs: &[Var],
    role_ids: &[&str],
    template_index: &[usize],
    admissible: &Admissible,
    chooser: &mut dyn Chooser,
) -> Result<(EdgeSample, Var), TopologyError> {
    let n = reprs.len();
    if n < 2 {
        return Err(TopologyError::TooFewAgents(n));
    }
    let w_a = g.param(params, "w_a")?;
    let projected: Vec<Var> = reprs
        .iter()
        .map(|&h| g.matmul(w_a, h))
        .collect::<Result<_, _>>()?;
    let mut sample = EdgeSample {
        edge_probs: Vec::new(),
        sampled: Vec::new(),
        log_p_topo: 0.0,
    };
    let mut terms = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !admissible.allows(template_index[i], template_index[j]) {
                continue;
            }
            let logit = g.dot(projected[i], projected[j])?;
            let p = crate::diffcore::sigmoid(g.scalar_value(logit));
            let on = chooser.bernoulli(&format!("edge/{}/{}", role_ids[i], role_ids[j]), p);
            sample.edge_probs.push(EdgeProb { from: i, to: j, p });
            if on {
                sample.sampled.push((i, j));
            }
            terms.push(log_bernoulli(g, logit, on));
        }
    }
    let log_p = if terms.is_empty() {
        g.scalar(0.0)
    } else {
        let all = g.concat(&terms)?;
        g.sum(all)
    };
    sample.log_p_topo = g.scalar_value(log_p);
    Ok((sample, log_p))
}

/// `π = softmax` of the first `n − 1` rows of `w_l_hop · h̄` and
/// `L_max = 1 + Σ_k k·π_k`.
pub fn hop_limit(g: &mut Graph, params: &ParameterStore, reprs: &[Var]) -> Result<(Vec<f64>, Var), TopologyError> {
    let n = reprs.len();
    if n < 2 {
        return Err(TopologyError::TooFewAgents(n));
    }
    let w = g.param(params, "w_l_hop")?;
    let h_bar = g.mean(reprs)?;
    let scores = g.matmul(w, h_bar)?;
    let scores = g.rows(scores, n - 1)?;
    let pi = g.softmax(scores)?;
    let ks: Vec<f64> = (1..n).map(|k| k as f64).collect();
    let ks = g.column(&ks);
    let expected = g.dot(pi, ks)?;
    let l_max = g.offset(expected, 1.0);
    Ok((g.value(pi).data().to_vec(), l_max))
}

/// Longest path in edges, 0 for an empty edge set.
pub fn longest_path(n: usize, edges: &[(usize, usize)]) -> Result<usize, TopologyError> {
    Ok(critical_path(n, edges)?.len().saturating_sub(1))
}

/// Lexicographically smallest node sequence among the longest paths.
pub fn critical_path(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, TopologyError> {
    let order = topological_order(n, edges)?;
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(a, b) in edges {
        succ[a].push(b);
    }
    for s in &mut succ {
        s.sort_unstable();
        s.dedup();
    }
    // edges on the longest path starting at each node
    let mut reach = vec![0usize; n];
    for &v in order.iter().rev() {
        reach[v] = succ[v].iter().map(|&w| reach[w] + 1).max().unwrap_or(0);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let best = *reach.iter().max().expect("n > 0");
    let mut v = (0..n).find(|&v| reach[v] == best).expect("max exists");
    let mut path = vec![v];
    while reach[v] > 0 {
        v = *succ[v]
            .iter()
            .find(|&&w| reach[w] + 1 == reach[v])
            .expect("a successor continues the path");
        path.push(v);
    }
    Ok(path)
}

/// Outcome of [`prune_to_hop_limit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pruning {
    pub edges: Vec<(usize, usize)>,
    /// Removed edges in removal order.
    pub removed: Vec<(usize, usize)>,
    pub length: usize,
}

/// While the critical path is longer than `⌈l_max⌉`, drops the
/// lowest-probability edge on it (ties to the smallest `(i, j)`).
pub fn prune_to_hop_limit(
    n: usize,
    edges: &[(usize, usize)],
    prob: impl Fn(usize, usize) -> f64,
    l_max: f64,
) -> Result<Pruning, TopologyError> {
    let limit = l_max.ceil().max(0.0) as usize;
    let mut kept = edges.to_vec();
    let mut removed = Vec::new();
    loop {
        let path = critical_path(n, &kept)?;
        let len = path.len().saturating_sub(1);
        if len <= limit {
            return Ok(Pruning {
                edges: kept,
                removed,
                length: len,
            });
        }
        let mut worst = (path[0], path[1]);
        for w in path.windows(2) {
            let e = (w[0], w[1]);
            let (pe, pw) = (prob(e.0, e.1), prob(worst.0, worst.1));
            if pe < pw || (pe == pw && e < worst) {
                worst = e;
            }
        }
        kept.retain(|&e| e != worst);
        removed.push(worst);
    }
}

/// `Pen_len = relu(ℓ − L_max)` with `ℓ` the pre-pruning length.
pub fn length_penalty(g: &mut Graph, length: usize, l_max: Var) -> Var {
    let neg = g.scale(l_max, -1.0);
    let diff = g.offset(neg, length as f64);
    g.relu(diff)
}
