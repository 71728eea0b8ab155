//! The full configurator forward pass: pool, matching, gating, topology.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, PoolSet};
use crate::choice::{Choice, Chooser, Recorder};
use crate::diffcore::{softplus_inverse, Graph, ParameterStore, Tensor, Var};
use crate::embedding::EmbeddingStore;
use crate::error::{CatalogError, Error};
use crate::mas::{validate_templates, Admissible, AgentTemplate, MasInstance, MasNode};
use crate::matcher::{match_roles, pool_input, BackboneEmbeddings, MatchDecision};
use crate::selector::{pool_distribution, sample_pool, DifficultyEstimate, PoolDecision};
use crate::topology::{
    agent_representation, gate_agents, hop_limit, length_penalty, prune_to_hop_limit,
    synthesize_topology, EdgeProb, GateDecision,
};

pub const DEFAULT_HIDDEN: usize = 16;

/// Registers every policy parameter. `embed_dim` is H, `hidden` is the
/// policy width, `agents` the number of templates.
pub fn init_params(embed_dim: usize, hidden: usize, agents: usize, seed: u64) -> ParameterStore {
    let (h, d) = (embed_dim, hidden);
    let mut s = ParameterStore::new(seed);
    s.init_uniform("w_pool_ctx", d, 3 * h);
    s.init_uniform("w_pool_score", 1, d);
    s.insert("alpha_raw", Tensor::scalar(softplus_inverse(1.0)));
    s.init_uniform("w_ct", h, 2 * h);
    s.init_uniform("w_u", d, 2 * h);
    s.init_uniform("w_v", d, 2 * h + d);
    s.init_uniform("w_q", d, h);
    s.init_uniform("w_r", d, h);
    s.init_uniform("w_l", d, h);
    s.init_uniform("w_attn_q", d, 2 * d);
    s.init_uniform("w_attn_k", d, 3 * d);
    s.init_uniform("w_attn_v", d, 3 * d);
    s.init_uniform("w_ctx", d, d);
    s.insert("gamma", Tensor::scalar(0.1));
    s.init_uniform("w_gate", 1, 2 * d);
    s.init_uniform("w_a", d, d);
    s.init_uniform("w_l_hop", agents.max(2) - 1, d);
    s
}

/// Query-independent inputs shared by every episode.
#[derive(Debug, Clone)]
pub struct PolicyContext {
    pub templates: Vec<AgentTemplate>,
    pub role_embeddings: Vec<Tensor>,
    pub pools: PoolSet,
    pub backbones: BTreeMap<String, BackboneEmbeddings>,
    pub pool_inputs: Vec<Tensor>,
    pub admissible: Admissible,
    pub embed_dim: usize,
}

impl PolicyContext {
    pub fn new(
        templates: Vec<AgentTemplate>,
        pools: PoolSet,
        catalog: &Catalog,
        store: &EmbeddingStore,
        admissible: Option<Admissible>,
    ) -> Result<Self, Error> {
        validate_templates(&templates)?;
        pools.check_members(catalog)?;
        let mut backbones = BTreeMap::new();
        for pool in &pools.pools {
            for id in &pool.members {
                if backbones.contains_key(id) {
                    continue;
                }
                let profile = catalog
                    .get(id)
                    .ok_or_else(|| CatalogError::UnknownBackbone(id.clone()))?;
                backbones.insert(id.clone(), BackboneEmbeddings::from_profile(profile, store)?);
            }
        }
        let mut pool_inputs = Vec::with_capacity(pools.len());
        for pool in &pools.pools {
            let members: Vec<&BackboneEmbeddings> = pool.members.iter().map(|id| &backbones[id]).collect();
            pool_inputs.push(pool_input(&members)?);
        }
        let role_embeddings = templates
            .iter()
            .map(|t| store.encode_text(&t.role_prompt).map(|e| Tensor::column(e.values().to_vec())))
            .collect::<Result<Vec<_>, _>>()?;
        let n = templates.len();
        let admissible = admissible.unwrap_or_else(|| Admissible::all(n));
        if admissible.len() != n {
            return Err(Error::Config(format!(
                "admissible edge set covers {} agents, templates define {n}",
                admissible.len()
            )));
        }
        Ok(Self {
            templates,
            role_embeddings,
            pools,
            backbones,
            pool_inputs,
            admissible,
            embed_dim: store.dim(),
        })
    }

    pub fn agent_count(&self) -> usize {
        self.templates.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionSettings {
    /// Highest selectable pool index.
    pub upper_bound: usize,
    pub bucket_temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDecision {
    /// Template indices of the retained agents; edges index into this list.
    pub retained: Vec<usize>,
    pub edge_probs: Vec<EdgeProb>,
    pub sampled: Vec<(usize, usize)>,
    /// Edges after hop-limit pruning.
    pub edges: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
    pub hop_probs: Vec<f64>,
    pub l_max: f64,
    pub length_sampled: usize,
    pub length_pruned: usize,
    pub log_p_topo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub pool: PoolDecision,
    pub matches: MatchDecision,
    pub gates: GateDecision,
    pub topology: TopologyDecision,
    pub log_p_total: f64,
    pub pen_len: f64,
    /// Every labelled draw, enough to replay the decision.
    pub choices: BTreeMap<String, Choice>,
}

impl DecisionTrace {
    pub fn component_sum(&self) -> f64 {
        self.pool.log_p_sel + self.matches.log_p_match + self.gates.log_p_gate + self.topology.log_p_topo
    }

    /// The executable system: retained agents with their backbones and the
    /// pruned edges.
    pub fn instance(&self, templates: &[AgentTemplate]) -> MasInstance {
        MasInstance {
            nodes: self
                .topology
                .retained
                .iter()
                .map(|&i| MasNode {
                    template: templates[i].clone(),
                    backbone_id: self.matches.assignment[i].clone(),
                })
                .collect(),
            edges: self.topology.edges.clone(),
            hop_limit: self.topology.l_max,
        }
    }
}

/// Tape handles for the loss.
#[derive(Debug, Clone)]
pub struct Forward {
    pub trace: DecisionTrace,
    pub log_p_sel: Var,
    pub log_p_match: Var,
    pub log_p_gate: Var,
    pub log_p_topo: Var,
    pub log_p_total: Var,
    pub pen_len: Var,
}

/// Runs every decision stage for one query on `g`.
pub fn forward(
    g: &mut Graph,
    params: &ParameterStore,
    ctx: &PolicyContext,
    query_embedding: &Tensor,
    difficulty: DifficultyEstimate,
    settings: DecisionSettings,
    chooser: &mut dyn Chooser,
) -> Result<Forward, Error> {
    let mut rec = Recorder::new(chooser);

    let dist = pool_distribution(
        g,
        params,
        &ctx.pool_inputs,
        &ctx.pools.cost_curve,
        difficulty.d_eff,
        settings.upper_bound,
        settings.bucket_temperature,
    )?;
    let (pool, log_sel) = sample_pool(g, &dist, difficulty.d, difficulty.d_eff, &mut rec)?;

    let q = g.constant(query_embedding.clone());
    let roles: Vec<Var> = ctx.role_embeddings.iter().map(|r| g.constant(r.clone())).collect();
    let ids: Vec<&str> = ctx.templates.iter().map(|t| t.role_id.as_str()).collect();
    let members: Vec<&BackboneEmbeddings> = ctx.pools.pools[pool.index]
        .members
        .iter()
        .map(|id| &ctx.backbones[id])
        .collect();
    let role_pairs: Vec<(&str, Var)> = ids.iter().copied().zip(roles.iter().copied()).collect();
    let (matches, log_match) = match_roles(g, params, &role_pairs, &members, q, dist.contexts[pool.index], &mut rec)?;

    let assigned: Vec<&BackboneEmbeddings> = matches.assignment.iter().map(|id| &ctx.backbones[id]).collect();
    let reprs = agent_representation(g, params, q, &roles, &assigned)?;
    let (gates, log_gate) = gate_agents(g, params, &reprs, &ids, &mut rec)?;

    let retained = gates.retained();
    let kept_h: Vec<Var> = retained.iter().map(|&i| reprs[i]).collect();
    let kept_ids: Vec<&str> = retained.iter().map(|&i| ids[i]).collect();
    let (edges, log_topo) =
        synthesize_topology(g, params, &kept_h, &kept_ids, &retained, &ctx.admissible, &mut rec)?;
    let (hop_probs, l_max_var) = hop_limit(g, params, &kept_h)?;
    let l_max = g.scalar_value(l_max_var);
    let n = retained.len();
    let pruning = prune_to_hop_limit(n, &edges.sampled, |a, b| edges.prob(a, b).unwrap_or(0.0), l_max)?;
    let length_sampled = crate::topology::longest_path(n, &edges.sampled)?;
    let pen = length_penalty(g, length_sampled, l_max_var);

    let parts = g.concat(&[log_sel, log_match, log_gate, log_topo])?;
    let log_total = g.sum(parts);
    let trace = DecisionTrace {
        log_p_total: g.scalar_value(log_total),
        pen_len: g.scalar_value(pen),
        pool,
        matches,
        gates,
        topology: TopologyDecision {
            retained,
            edge_probs: edges.edge_probs,
            sampled: edges.sampled,
            edges: pruning.edges,
            removed: pruning.removed,
            hop_probs,
            l_max,
            length_sampled,
            length_pruned: pruning.length,
            log_p_topo: edges.log_p_topo,
        },
        choices: rec.log,
    };
    Ok(Forward {
        trace,
        log_p_sel: log_sel,
        log_p_match: log_match,
        log_p_gate: log_gate,
        log_p_topo: log_topo,
        log_p_total: log_total,
        pen_len: pen,
    })
}

impl<C: Chooser + ?Sized> Chooser for &mut C {
    fn categorical(&mut self, label: &str, probs: &[f64]) -> usize {
        (**self).categorical(label, probs)
    }

    fn bernoulli(&mut self, label: &str, p: f64) -> bool {
        (**self).bernoulli(label, p)
    }
}
