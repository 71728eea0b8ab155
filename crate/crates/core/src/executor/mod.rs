//! Running a configured system over a backend, with cost and latency
//! accounting.

mod remote;
mod sim;

pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use sim::{band_index, load_synthetic_backbones, SyntheticBackbone, Simulator, UPSTREAM_BOOST};

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::choice::derive_seed;
use crate::dataset::Query;
use crate::error::{ExecutionError, PartialAccounting};
use crate::mas::MasInstance;

/// One backbone call as the executor sees it.
#[derive(Debug, Clone, Copy)]
pub struct NodeRequest<'a> {
    pub node: usize,
    pub backbone_id: &'a str,
    pub prompt: &'a str,
    pub difficulty: f64,
    /// Upstream messages that already carry the right answer.
    pub upstream_correct: usize,
    /// Ground truth, only consumed by simulated backends.
    pub reference: &'a str,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResponse {
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub text: String,
    /// Seconds from start to completion of this call.
    pub latency: f64,
    /// Usage counts were estimated locally instead of reported.
    pub usage_estimated: bool,
    pub attempts: u32,
}

pub trait Backend: Sync {
    fn complete(&self, req: &NodeRequest<'_>) -> Result<NodeResponse, ExecutionError>;
}

/// Scores a final answer against the ground truth.
pub trait Checker: Sync {
    fn score(&self, answer: &str, truth: &str) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatch;

impl Checker for ExactMatch {
    fn score(&self, answer: &str, truth: &str) -> f64 {
        if extract_answer(answer) == truth.trim() {
            1.0
        } else {
            0.0
        }
    }
}

/// Text after the last `ANSWER:` marker, or the whole message.
pub fn extract_answer(text: &str) -> &str {
    match text.rfind("ANSWER:") {
        Some(i) => text[i + "ANSWER:".len()..].trim(),
        None => text.trim(),
    }
}

pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Role prompt, then the query, then upstream messages in the given order.
pub fn assemble_prompt(role_prompt: &str, query: &str, incoming: &[(&str, &str)]) -> String {
    let mut s = format!("[role] {role_prompt}\n[query] {query}\n");
    for (role, msg) in incoming {
        s.push_str(&format!("[from {role}] {msg}\n"));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeUsage {
    pub node: usize,
    pub role_id: String,
    pub backbone_id: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cost: f64,
    pub start: f64,
    pub finish: f64,
    pub usage_estimated: bool,
}

impl NodeUsage {
    pub fn latency(&self) -> f64 {
        self.finish - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub query_id: String,
    pub perf: f64,
    pub tok_cost: f64,
    pub latency: f64,
    pub answer: String,
    pub nodes: Vec<NodeUsage>,
}

/// Executes nodes in topological order. Timing is analytic: a node starts
/// when its last predecessor finishes, so parallel branches overlap.
pub fn execute_mas(
    instance: &MasInstance,
    query: &Query,
    difficulty: f64,
    catalog: &Catalog,
    backend: &dyn Backend,
    checker: &dyn Checker,
    seed: u64,
) -> Result<EpisodeResult, ExecutionError> {
    instance.validate(catalog)?;
    let order = instance
        .topological_order()
        .map_err(|e| ExecutionError::InvalidInstance(e.to_string()))?;
    let n = instance.nodes.len();
    let mut texts: Vec<Option<String>> = vec![None; n];
    let mut correct = vec![false; n];
    let mut usage: Vec<Option<NodeUsage>> = vec![None; n];
    let mut partial = PartialAccounting::default();

    for &v in &order {
        let node = &instance.nodes[v];
        let preds = instance.predecessors(v);
        let incoming: Vec<(&str, &str)> = preds
            .iter()
            .map(|&p| {
                (
                    instance.nodes[p].template.role_id.as_str(),
                    texts[p].as_deref().unwrap_or_default(),
                )
            })
            .collect();
        let prompt = assemble_prompt(&node.template.role_prompt, &query.text, &incoming);
        let start = preds
            .iter()
            .filter_map(|&p| usage[p].as_ref().map(|u| u.finish))
            .fold(0.0, f64::max);
        let req = NodeRequest {
            node: v,
            backbone_id: &node.backbone_id,
            prompt: &prompt,
            difficulty,
            upstream_correct: preds.iter().filter(|&&p| correct[p]).count(),
            reference: &query.answer,
            seed: derive_seed(seed, &format!("node/{v}")),
        };
        let resp = backend.complete(&req).map_err(|e| ExecutionError::Backend {
            node: v,
            message: e.to_string(),
            partial: partial.clone(),
        })?;
        let profile = catalog.get(&node.backbone_id).expect("validated above");
        let cost = profile.call_cost(resp.tokens_in, resp.tokens_out);
        let finish = start + resp.latency;
        partial.tok_cost += cost;
        partial.latency = partial.latency.max(finish);
        partial.nodes_completed += 1;
        correct[v] = checker.score(&resp.text, &query.answer) >= 1.0;
        usage[v] = Some(NodeUsage {
            node: v,
            role_id: node.template.role_id.clone(),
            backbone_id: node.backbone_id.clone(),
            tokens_in: resp.tokens_in,
            tokens_out: resp.tokens_out,
            cost,
            start,
            finish,
            usage_estimated: resp.usage_estimated,
        });
        texts[v] = Some(resp.text);
    }

    let last = *order.last().expect("at least two nodes");
    let final_text = texts[last].take().unwrap_or_default();
    let nodes: Vec<NodeUsage> = usage.into_iter().map(|u| u.expect("all nodes ran")).collect();
    Ok(EpisodeResult {
        query_id: query.id.clone(),
        perf: checker.score(&final_text, &query.answer),
        tok_cost: nodes.iter().map(|u| u.cost).sum(),
        latency: nodes.iter().map(|u| u.finish).fold(0.0, f64::max),
        answer: extract_answer(&final_text).to_string(),
        nodes,
    })
}

/// End-to-end latency from fixed per-node latencies.
pub fn critical_path_latency(node_latency: &[f64], edges: &[(usize, usize)]) -> Result<f64, ExecutionError> {
    let n = node_latency.len();
    let order = crate::mas::topological_order(n, edges)
        .map_err(|e| ExecutionError::InvalidInstance(e.to_string()))?;
    let mut finish = vec![0.0f64; n];
    for &v in &order {
        let start = edges
            .iter()
            .filter(|&&(_, b)| b == v)
            .map(|&(a, _)| finish[a])
            .fold(0.0, f64::max);
        finish[v] = start + node_latency[v];
    }
    Ok(finish.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{BackboneProfile, ModelType};
    use crate::mas::{AgentTemplate, MasNode};
    use proptest::prelude::*;

    pub(crate) fn profile(id: &str, input_ptp: f64, output_ptp: f64) -> BackboneProfile {
        BackboneProfile {
            id: id.into(),
            family: "test".into(),
            model_type: ModelType::NonReasoning,
            input_ptp,
            output_ptp,
            activated_params: Some(8.0),
            perf_score: 0.5,
            tok_cost_est: 0.01,
            lat_est: 1.0,
            perf_profile: format!("{id} perf"),
            ptp_profile: format!("{id} price"),
            type_profile: "plain".into(),
        }
    }

    fn node(role: &str, backbone: &str) -> MasNode {
        MasNode {
            template: AgentTemplate {
                role_id: role.into(),
                role_prompt: format!("You are {role}."),
                plugins: vec![],
            },
            backbone_id: backbone.into(),
        }
    }

    /// Fixed usage and latency per node, keyed by node index.
    struct Scripted {
        latency: Vec<f64>,
        usage: (u64, u64),
        fail_at: Option<usize>,
    }

    impl Backend for Scripted {
        fn complete(&self, req: &NodeRequest<'_>) -> Result<NodeResponse, ExecutionError> {
            if self.fail_at == Some(req.node) {
                return Err(ExecutionError::Remote {
                    attempts: 3,
                    message: "boom".into(),
                });
            }
            Ok(NodeResponse {
                tokens_in: self.usage.0,
                tokens_out: self.usage.1,
                text: format!("ANSWER: {}", req.reference),
                latency: self.latency[req.node],
                usage_estimated: false,
                attempts: 1,
            })
        }
    }

    fn query() -> Query {
        Query {
            id: "q".into(),
            text: "what is 2+2".into(),
            answer: "4".into(),
            difficulty: Some(0.2),
        }
    }

    #[test]
    fn parallel_branches_overlap() {
        let catalog = Catalog::new(vec![profile("m", 2.0, 8.0)]).unwrap();
        let inst = MasInstance {
            nodes: vec![node("a", "m"), node("b", "m"), node("c", "m")],
            edges: vec![(0, 2), (1, 2)],
            hop_limit: 2.0,
        };
        let be = Scripted { latency: vec![3.0, 5.0, 2.0], usage: (1, 1), fail_at: None };
        let r = execute_mas(&inst, &query(), 0.2, &catalog, &be, &ExactMatch, 0).unwrap();
        assert_eq!(r.latency, 7.0);
        assert_eq!(r.perf, 1.0);

        let inst2 = MasInstance { edges: vec![], ..inst.clone() };
        let be2 = Scripted { latency: vec![3.0, 5.0], usage: (1, 1), fail_at: None };
        let inst2 = MasInstance { nodes: inst2.nodes[..2].to_vec(), ..inst2 };
        assert_eq!(execute_mas(&inst2, &query(), 0.2, &catalog, &be2, &ExactMatch, 0).unwrap().latency, 5.0);
    }

    #[test]
    fn single_call_cost_uses_catalog_prices() {
        let fixture = crate::catalog::qwen_mmlu_catalog().unwrap();
        let row = fixture.get("Qwen3-32B").unwrap();
        assert!((row.call_cost(1000, 500) - 0.003).abs() < 1e-15);
        let p = profile("qwen3-32b", row.input_ptp, row.output_ptp);
        let catalog = Catalog::new(vec![p]).unwrap();
        let inst = MasInstance {
            nodes: vec![node("a", "qwen3-32b"), node("b", "qwen3-32b")],
            edges: vec![(0, 1)],
            hop_limit: 1.0,
        };
        let be = Scripted { latency: vec![1.0, 1.0], usage: (1000, 500), fail_at: None };
        let r = execute_mas(&inst, &query(), 0.2, &catalog, &be, &ExactMatch, 0).unwrap();
        let resum: f64 = r.nodes.iter().map(|u| (u.tokens_in as f64 * 1.0 + u.tokens_out as f64 * 4.0) / 1e6).sum();
        assert_eq!(r.tok_cost, resum);
    }

    #[test]
    fn failure_carries_partial_accounting() {
        let catalog = Catalog::new(vec![profile("m", 1.0, 1.0)]).unwrap();
        let inst = MasInstance {
            nodes: vec![node("a", "m"), node("b", "m"), node("c", "m")],
            edges: vec![(0, 1), (1, 2)],
            hop_limit: 2.0,
        };
        let be = Scripted { latency: vec![1.0, 2.0, 3.0], usage: (10, 10), fail_at: Some(2) };
        let err = execute_mas(&inst, &query(), 0.2, &catalog, &be, &ExactMatch, 0).unwrap_err();
        let p = err.partial().unwrap();
        assert_eq!(p.nodes_completed, 2);
        assert_eq!(p.latency, 3.0);
        assert!((p.tok_cost - 40.0 / 1e6).abs() < 1e-18);
    }

    #[test]
    fn prompt_layout_matches_golden() {
        let p = assemble_prompt(
            "You check the work.",
            "What is 6 x 7?",
            &[("solver", "ANSWER: 42"), ("planner", "multiply")],
        );
        assert_eq!(p, include_str!("../../tests/fixtures/prompt_golden.txt"));
        assert_eq!(assemble_prompt("r", "q", &[]), "[role] r\n[query] q\n");
    }

    #[test]
    fn answer_extraction() {
        assert_eq!(extract_answer("blah\nANSWER: 12 "), "12");
        assert_eq!(extract_answer(" 12 "), "12");
        assert_eq!(ExactMatch.score("x ANSWER: a ANSWER: b", "b"), 1.0);
    }

    fn all_paths_max(lat: &[f64], edges: &[(usize, usize)]) -> f64 {
        fn walk(v: usize, acc: f64, lat: &[f64], edges: &[(usize, usize)], best: &mut f64) {
            let acc = acc + lat[v];
            *best = best.max(acc);
            for &(a, b) in edges {
                if a == v {
                    walk(b, acc, lat, edges, best);
                }
            }
        }
        let mut best = 0.0;
        for v in 0..lat.len() {
            walk(v, 0.0, lat, edges, &mut best);
        }
        best
    }

    proptest! {
        #[test]
        fn critical_path_matches_enumeration(
            lat in proptest::collection::vec(0.0f64..10.0, 1..8),
            mask in proptest::collection::vec(any::<bool>(), 28),
        ) {
            let n = lat.len();
            let mut edges = Vec::new();
            let mut k = 0;
            for i in 0..n { for j in i + 1..n { if mask[k] { edges.push((i, j)); } k += 1; } }
            let cp = critical_path_latency(&lat, &edges).unwrap();
            prop_assert_eq!(cp, all_paths_max(&lat, &edges));
            if let Some(&e) = edges.first() {
                let fewer: Vec<_> = edges.iter().copied().filter(|&x| x != e).collect();
                prop_assert!(critical_path_latency(&lat, &fewer).unwrap() <= cp);
            }
        }
    }
}
