//! Deterministic synthetic backbones for offline training and tests.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{whitespace_tokens, Backend, NodeRequest, NodeResponse};
use crate::error::{Error, ExecutionError};

/// Accuracy added per correct upstream message.
pub const UPSTREAM_BOOST: f64 = 0.05;
const BOOST_CAP: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBackbone {
    pub backbone_id: String,
    /// Accuracy per difficulty band; bands split [0, 1] evenly.
    pub base_accuracy: Vec<f64>,
    pub mean_out_tokens: f64,
    /// Output-length multiplier, above 1 for reasoning models.
    #[serde(default = "one")]
    pub gamma_task: f64,
    pub per_token_latency: f64,
    pub fixed_overhead: f64,
}

fn one() -> f64 {
    1.0
}

pub fn band_index(difficulty: f64, bands: usize) -> usize {
    ((difficulty.clamp(0.0, 1.0) * bands as f64) as usize).min(bands.saturating_sub(1))
}

impl SyntheticBackbone {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |why: String| Err(Error::Config(format!("synthetic backbone `{}`: {why}", self.backbone_id)));
        if self.base_accuracy.is_empty() {
            return bad("no accuracy bands".into());
        }
        if let Some(a) = self.base_accuracy.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("accuracy {a} outside [0, 1]"));
        }
        for (name, v) in [
            ("mean_out_tokens", self.mean_out_tokens),
            ("gamma_task", self.gamma_task),
            ("per_token_latency", self.per_token_latency),
            ("fixed_overhead", self.fixed_overhead),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Success probability after the upstream boost. Boosting never pushes
    /// past the cap, but an accuracy already above it is kept.
    pub fn accuracy(&self, difficulty: f64, upstream_correct: usize) -> f64 {
        let base = self.base_accuracy[band_index(difficulty, self.base_accuracy.len())];
        if upstream_correct == 0 {
            return base;
        }
        base.max((base + UPSTREAM_BOOST * upstream_correct as f64).min(BOOST_CAP))
    }

    pub fn simulate(
        &self,
        prompt: &str,
        difficulty: f64,
        upstream_correct: usize,
        reference: &str,
        seed: u64,
    ) -> NodeResponse {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = self.mean_out_tokens * self.gamma_task;
        let tokens_out = Poisson::new(mean).expect("validated mean").sample(&mut rng) as u64;
        let correct = rng.random::<f64>() < self.accuracy(difficulty, upstream_correct);
        let tokens_in = whitespace_tokens(prompt);
        let answer = if correct {
            reference.to_string()
        } else {
            format!("not-{reference}")
        };
        let filler = tokens_out.saturating_sub(2) as usize;
        let mut text = "step ".repeat(filler);
        text.push_str("ANSWER: ");
        text.push_str(&answer);
        NodeResponse {
            tokens_in,
            tokens_out,
            text,
            latency: self.fixed_overhead + self.per_token_latency * (tokens_in + tokens_out) as f64,
            usage_estimated: false,
            attempts: 1,
        }
    }
}

pub fn load_synthetic_backbones(path: &Path) -> Result<Vec<SyntheticBackbone>, Error> {
    let text = std::fs::read_to_string(path)?;
    let list: Vec<SyntheticBackbone> = serde_json::from_str(&text)?;
    for b in &list {
        b.validate()?;
    }
    Ok(list)
}

#[derive(Debug, Clone, Default)]
pub struct Simulator {
    backbones: BTreeMap<String, SyntheticBackbone>,
}

impl Simulator {
    pub fn new(list: Vec<SyntheticBackbone>) -> Result<Self, Error> {
        let mut backbones = BTreeMap::new();
        for b in list {
            b.validate()?;
            if backbones.contains_key(&b.backbone_id) {
                return Err(Error::Config(format!("duplicate synthetic backbone `{}`", b.backbone_id)));
            }
            backbones.insert(b.backbone_id.clone(), b);
        }
        Ok(Self { backbones })
    }

    pub fn get(&self, id: &str) -> Option<&SyntheticBackbone> {
        self.backbones.get(id)
    }
}

impl Backend for Simulator {
    fn complete(&self, req: &NodeRequest<'_>) -> Result<NodeResponse, ExecutionError> {
        let b = self
            .backbones
            .get(req.backbone_id)
            .ok_or_else(|| ExecutionError::InvalidInstance(format!("no synthetic model for `{}`", req.backbone_id)))?;
        Ok(b.simulate(req.prompt, req.difficulty, req.upstream_correct, req.reference, req.seed))
    }
}
