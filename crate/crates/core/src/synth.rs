//! A small synthetic benchmark: four backbone tiers from cheap and weak to
//! expensive and strong, simulated ground truth, and labelled queries.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{
    build_pool_set, BackboneProfile, Catalog, ModelType, PoolingOptions, CONVENTIONAL_TYPE_PROFILE,
    REASONING_TYPE_PROFILE,
};
use crate::choice::{derive_seed, keyed_rng};
use crate::dataset::Query;
use crate::embedding::EmbeddingStore;
use crate::error::{CatalogError, Error};
use crate::executor::{execute_mas, ExactMatch, Simulator, SyntheticBackbone};
use crate::mas::{AgentTemplate, MasInstance, MasNode};
use crate::metrics::{auc, upper_envelope, BudgetKind, Extension, HullMode};
use crate::policy::{init_params, PolicyContext, DEFAULT_HIDDEN};
use crate::trainer::{evaluate, train, DifficultyModel, Environment, EvalMode, EvalSummary, TrainConfig};

struct Tier {
    name: &'static str,
    input_ptp: f64,
    output_ptp: f64,
    params_b: f64,
    reasoning: bool,
    gamma: f64,
    accuracy: [f64; 3],
    per_token_latency: f64,
    fixed_overhead: f64,
}

const TIERS: [Tier; 4] = [
    Tier {
        name: "nano",
        input_ptp: 0.1,
        output_ptp: 0.4,
        params_b: 2.0,
        reasoning: false,
        gamma: 1.0,
        accuracy: [0.60, 0.25, 0.05],
        per_token_latency: 0.004,
        fixed_overhead: 0.3,
    },
    Tier {
        name: "small",
        input_ptp: 0.25,
        output_ptp: 1.0,
        params_b: 8.0,
        reasoning: false,
        gamma: 1.0,
        accuracy: [0.78, 0.45, 0.15],
        per_token_latency: 0.008,
        fixed_overhead: 0.5,
    },
    Tier {
        name: "medium",
        input_ptp: 1.0,
        output_ptp: 4.0,
        params_b: 32.0,
        reasoning: false,
        gamma: 1.0,
        accuracy: [0.90, 0.70, 0.35],
        per_token_latency: 0.015,
        fixed_overhead: 0.8,
    },
    Tier {
        name: "large",
        input_ptp: 2.5,
        output_ptp: 10.0,
        params_b: 22.0,
        reasoning: true,
        gamma: 4.0,
        accuracy: [0.97, 0.88, 0.65],
        per_token_latency: 0.02,
        fixed_overhead: 1.0,
    },
];

/// Variants inside a tier: (suffix, accuracy shift, price factor).
const VARIANTS: [(&str, f64, f64); 3] = [("a", -0.03, 0.8), ("b", 0.0, 1.0), ("c", 0.02, 1.25)];

pub const SYNTH_MEAN_OUT_TOKENS: f64 = 300.0;
/// Prompt size used to turn prices into per-call cost estimates.
pub const SYNTH_PROMPT_TOKENS: f64 = 300.0;

#[derive(Debug, Clone)]
pub struct SynthSuite {
    pub catalog: Catalog,
    pub backbones: Vec<SyntheticBackbone>,
    pub templates: Vec<AgentTemplate>,
    pub train: Vec<Query>,
    pub eval: Vec<Query>,
}

pub fn synthetic_catalog() -> Result<(Catalog, Vec<SyntheticBackbone>), CatalogError> {
    let mut profiles = Vec::new();
    let mut sims = Vec::new();
    for tier in &TIERS {
        for (suffix, shift, factor) in VARIANTS {
            let id = format!("{}-{suffix}", tier.name);
            let accuracy: Vec<f64> = tier.accuracy.iter().map(|a| (a + shift).clamp(0.0, 1.0)).collect();
            let (inp, out) = (tier.input_ptp * factor, tier.output_ptp * factor);
            let out_tokens = SYNTH_MEAN_OUT_TOKENS * tier.gamma;
            let per_call = (SYNTH_PROMPT_TOKENS * inp + out_tokens * out) / 1e6;
            let latency = tier.fixed_overhead + tier.per_token_latency * (SYNTH_PROMPT_TOKENS + out_tokens);
            profiles.push(BackboneProfile {
                id: id.clone(),
                family: "synthetic".into(),
                model_type: if tier.reasoning { ModelType::Reasoning } else { ModelType::NonReasoning },
                input_ptp: inp,
                output_ptp: out,
                activated_params: Some(tier.params_b),
                perf_score: accuracy.iter().sum::<f64>() / accuracy.len() as f64,
                tok_cost_est: per_call,
                lat_est: latency,
                perf_profile: format!("{id}: synthetic model, average accuracy {:.2}.", accuracy.iter().sum::<f64>() / 3.0),
                ptp_profile: format!("Price: {inp:.3} CNY per million input tokens, {out:.3} per million output tokens."),
                type_profile: if tier.reasoning { REASONING_TYPE_PROFILE } else { CONVENTIONAL_TYPE_PROFILE }.into(),
            });
            sims.push(SyntheticBackbone {
                backbone_id: id,
                base_accuracy: accuracy,
                mean_out_tokens: SYNTH_MEAN_OUT_TOKENS,
                gamma_task: tier.gamma,
                per_token_latency: tier.per_token_latency,
                fixed_overhead: tier.fixed_overhead,
            });
        }
    }
    Ok((Catalog::new(profiles)?, sims))
}

pub fn synthetic_templates() -> Vec<AgentTemplate> {
    [
        ("planner", "Break the problem into steps and outline an approach."),
        ("solver", "Work through the steps and produce a candidate answer."),
        ("verifier", "Check the candidate answer for mistakes and fix them."),
        ("finalizer", "Read the discussion and state the final answer."),
    ]
    .iter()
    .map(|(id, prompt)| AgentTemplate {
        role_id: id.to_string(),
        role_prompt: prompt.to_string(),
        plugins: vec![],
    })
    .collect()
}

const WORDS: [&str; 12] = [
    "value", "series", "sum", "angle", "ratio", "prime", "digit", "area", "rate", "term", "factor", "root",
];

/// Queries with uniform difficulty; longer text for harder items.
pub fn synthetic_queries(seed: u64, prefix: &str, n: usize) -> Vec<Query> {
    let mut rng = keyed_rng(seed, &format!("synth/{prefix}"));
    (0..n)
        .map(|i| {
            let d: f64 = rng.random();
            let len = 6 + (d * 30.0) as usize;
            let words: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            Query {
                id: format!("{prefix}-{i:03}"),
                text: format!("Problem {prefix}-{i}: {}?", words.join(" ")),
                answer: rng.random_range(0..10_000).to_string(),
                difficulty: Some(d),
            }
        })
        .collect()
}

pub fn synthetic_suite(seed: u64, n_train: usize, n_eval: usize) -> Result<SynthSuite, CatalogError> {
    let (catalog, backbones) = synthetic_catalog()?;
    Ok(SynthSuite {
        catalog,
        backbones,
        templates: synthetic_templates(),
        train: synthetic_queries(seed, "train", n_train),
        eval: synthetic_queries(seed, "eval", n_eval),
    })
}

/// Four operating points from tight to loose budgets:
/// (λ_tok, λ_lat, δ, highest pool index).
pub const LADDER: [(f64, f64, f64, usize); 4] = [
    (40.0, 5e-3, 0.3, 0),
    (10.0, 1e-3, 0.3, 1),
    (2.0, 5e-4, 0.4, 2),
    (0.0, 0.0, 0.6, 3),
];

pub fn ladder_configs(seed: u64, episodes: usize) -> Vec<TrainConfig> {
    LADDER
        .iter()
        .map(|&(lambda_tok, lambda_lat, delta, upper_bound)| TrainConfig {
            lambda_tok,
            lambda_lat,
            delta,
            upper_bound,
            episodes,
            seed,
            ..TrainConfig::default()
        })
        .collect()
}

/// One evaluated operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub setting: usize,
    pub lambda_tok: f64,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRun {
    pub seed: u64,
    pub trained: Vec<LadderPoint>,
    pub random: Vec<LadderPoint>,
    /// Full system on the strongest pool's medoid: (mean cost, mean perf).
    pub base: (f64, f64),
    pub auc_trained: f64,
    pub auc_random: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderOptions {
    pub n_train: usize,
    pub n_eval: usize,
    pub episodes: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub workers: usize,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_eval: 100,
            episodes: 200,
            embed_dim: 32,
            hidden: DEFAULT_HIDDEN,
            workers: 4,
        }
    }
}

/// Every template on one backbone with all admissible edges.
pub fn base_instance(templates: &[AgentTemplate], backbone_id: &str) -> MasInstance {
    let n = templates.len();
    MasInstance {
        nodes: templates
            .iter()
            .map(|t| MasNode { template: t.clone(), backbone_id: backbone_id.to_string() })
            .collect(),
        edges: (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect(),
        hop_limit: n.saturating_sub(1) as f64,
    }
}

/// Trains and evaluates all ladder settings for one seed, plus the random
/// baseline at the same upper bounds, and integrates both token-cost
/// frontiers over the base system's budget.
pub fn run_ladder(seed: u64, opts: &LadderOptions) -> Result<LadderRun, Error> {
    let suite = synthetic_suite(seed, opts.n_train, opts.n_eval)?;
    let pools = build_pool_set(&suite.catalog, PoolingOptions { seed, ..PoolingOptions::default() })?;
    let store = EmbeddingStore::fallback(opts.embed_dim);
    let top_medoid = pools.pools[pools.len() - 1].medoid.clone();
    let ctx = PolicyContext::new(suite.templates.clone(), pools, &suite.catalog, &store, None)?;
    let sim = Simulator::new(suite.backbones.clone())?;
    let difficulty = DifficultyModel::default();
    let env = Environment {
        catalog: &suite.catalog,
        ctx: &ctx,
        embeddings: &store,
        backend: &sim,
        checker: &ExactMatch,
        difficulty: &difficulty,
    };

    let mut trained = Vec::new();
    let mut random = Vec::new();
    for (i, cfg) in ladder_configs(seed, opts.episodes).into_iter().enumerate() {
        let mut params = init_params(opts.embed_dim, opts.hidden, suite.templates.len(), seed);
        train(env, &suite.train, &mut params, &cfg)?;
        let (_, s) = evaluate(env, &suite.eval, &params, &cfg, EvalMode::Argmax, opts.workers)?;
        trained.push(LadderPoint { setting: i, lambda_tok: cfg.lambda_tok, summary: s });
        let (_, r) = evaluate(env, &suite.eval, &params, &cfg, EvalMode::Random, opts.workers)?;
        random.push(LadderPoint { setting: i, lambda_tok: cfg.lambda_tok, summary: r });
    }

    let base_mas = base_instance(&suite.templates, &top_medoid);
    let mut cost = 0.0;
    let mut perf = 0.0;
    for (i, q) in suite.eval.iter().enumerate() {
        let d = q.difficulty.unwrap_or(0.5);
        let r = execute_mas(&base_mas, q, d, &suite.catalog, &sim, &ExactMatch, derive_seed(seed, &format!("base/{i}")))?;
        cost += r.tok_cost;
        perf += r.perf;
    }
    let n = suite.eval.len().max(1) as f64;
    let base = (cost / n, perf / n);

    let frontier = |pts: &[LadderPoint]| {
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.summary.mean_tok_cost, p.summary.mean_perf)).collect();
        upper_envelope(&xy, BudgetKind::TokenCost, HullMode::Convex)
    };
    let auc_trained = auc(&frontier(&trained), base.0, Some(base), Extension::AppendBase)?;
    let auc_random = auc(&frontier(&random), base.0, Some(base), Extension::AppendBase)?;
    Ok(LadderRun { seed, trained, random, base, auc_trained, auc_random })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{build_pool_set, PoolingOptions};

    #[test]
    fn pools_recover_the_tiers() {
        let (catalog, sims) = synthetic_catalog().unwrap();
        assert_eq!(sims.len(), 12);
        let pools = build_pool_set(&catalog, PoolingOptions::default()).unwrap();
        assert_eq!(pools.len(), 4);
        for (pool, tier) in pools.pools.iter().zip(&TIERS) {
            let mut m = pool.members.clone();
            m.sort();
            let want: Vec<String> = VARIANTS.iter().map(|v| format!("{}-{}", tier.name, v.0)).collect();
            assert_eq!(m, want);
        }
    }

    #[test]
    fn queries_are_seeded() {
        let a = synthetic_queries(3, "train", 10);
        assert_eq!(a, synthetic_queries(3, "train", 10));
        assert_ne!(a, synthetic_queries(4, "train", 10));
        assert!(a.iter().all(|q| q.difficulty.is_some_and(|d| (0.0..1.0).contains(&d))));
    }
}
