//! Qwen-family catalog with list prices (CNY per million tokens) and
//! MMLU-Redux scores, triples from the proxy estimator.

use super::{estimate_triple, BackboneProfile, BaselineUsage, Catalog, ModelType};
use crate::error::CatalogError;

pub const REASONING_TYPE_PROFILE: &str = "Reasoning mode: the model thinks step by step before it \
answers. Expect long completions, high token spend and slow responses.";
pub const CONVENTIONAL_TYPE_PROFILE: &str = "Conventional mode: direct answers without an explicit \
reasoning phase. Short completions, cheap and quick to respond.";

/// Conventional-model usage per query assumed for the fixture.
pub const QWEN_BASELINE_USAGE: BaselineUsage = BaselineUsage {
    tokens_in: 300.0,
    tokens_out: 400.0,
};
pub const QWEN_GAMMA_TASK: f64 = 4.0;

// id, family, reasoning, input price, output price, activated params, perf
const ROWS: &[(&str, &str, bool, f64, f64, f64, f64)] = &[
    ("Qwen3-235B-A22B", "qwen3", false, 2.5, 10.0, 22.0, 0.892),
    ("Qwen3-235B-A22B-thinking", "qwen3", true, 2.5, 10.0, 22.0, 0.927),
    ("Qwen3-32B", "qwen3", false, 1.0, 4.0, 32.0, 0.857),
    ("Qwen3-32B-thinking", "qwen3", true, 1.0, 4.0, 32.0, 0.909),
    ("Qwen3-14B", "qwen3", false, 0.5, 2.0, 14.0, 0.820),
    ("Qwen3-14B-thinking", "qwen3", true, 0.5, 2.0, 14.0, 0.886),
    ("Qwen3-8B", "qwen3", false, 0.25, 1.0, 8.0, 0.795),
    ("Qwen3-8B-thinking", "qwen3", true, 0.25, 1.0, 8.0, 0.875),
    ("Qwen3-1.7B", "qwen3", false, 0.1, 0.4, 1.7, 0.644),
    ("Qwen3-1.7B-thinking", "qwen3", true, 0.1, 0.4, 1.7, 0.739),
    ("Qwen2.5-72B-Instruct", "qwen2.5", false, 4.13, 4.13, 72.0, 0.868),
];

pub fn qwen_mmlu_catalog() -> Result<Catalog, CatalogError> {
    let mut backbones = Vec::with_capacity(ROWS.len());
    for &(id, family, reasoning, input_ptp, output_ptp, act, perf) in ROWS {
        let mut profile = BackboneProfile {
            id: id.to_string(),
            family: family.to_string(),
            model_type: if reasoning {
                ModelType::Reasoning
            } else {
                ModelType::NonReasoning
            },
            input_ptp,
            output_ptp,
            activated_params: Some(act),
            perf_score: perf,
            tok_cost_est: 0.0,
            lat_est: 0.0,
            perf_profile: format!(
                "{id}: {act}B activated parameters. MMLU-Redux accuracy {:.1}.",
                perf * 100.0
            ),
            ptp_profile: format!(
                "Price: {input_ptp} CNY per million input tokens, {output_ptp} CNY per million output tokens."
            ),
            type_profile: if reasoning {
                REASONING_TYPE_PROFILE
            } else {
                CONVENTIONAL_TYPE_PROFILE
            }
            .to_string(),
        };
        let t = estimate_triple(&profile, &[], QWEN_BASELINE_USAGE, QWEN_GAMMA_TASK)?;
        profile.tok_cost_est = t.tok_cost;
        profile.lat_est = t.lat;
        backbones.push(profile);
    }
    Catalog::new(backbones)
}
