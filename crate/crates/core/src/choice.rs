//! Discrete decision sources. Every draw is keyed by a label such as
//! `"pool"`, `"match/<role>"`, `"gate/<role>"` or `"edge/<a>/<b>"`, so a
//! decision depends only on the seed and its label, never on call order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Stable 64-bit seed for `label` under `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let digest = keyed_digest(seed, label);
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

fn keyed_digest(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

pub fn keyed_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(keyed_digest(seed, label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Index(usize),
    Bit(bool),
}

pub trait Chooser {
    /// Picks an index from `probs` (a distribution; zero entries are masked).
    fn categorical(&mut self, label: &str, probs: &[f64]) -> usize;
    /// Keep decision for a Bernoulli with success probability `p`.
    fn bernoulli(&mut self, label: &str, p: f64) -> bool;
}

/// Largest probability, ties to the lower index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Seeded sampling. Bernoulli draws use the Gumbel-Sigmoid trick with a
/// straight-through hard threshold: keep iff `logit(p) + L > 0` with
/// logistic noise `L`, which keeps with probability exactly `p` at any
/// temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampler {
    pub seed: u64,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl Chooser for Sampler {
    fn categorical(&mut self, label: &str, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let u: f64 = keyed_rng(self.seed, label).random::<f64>() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p <= 0.0 {
                continue;
            }
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
        last_positive
    }

    fn bernoulli(&mut self, label: &str, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        let u: f64 = keyed_rng(self.seed, label).random_range(f64::EPSILON..1.0);
        let noise = u.ln() - (-u).ln_1p();
        let logit = p.ln() - (-p).ln_1p();
        logit + noise > 0.0
    }
}

/// Deterministic evaluation mode: argmax, and keep iff `p ≥ 0.5`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Greedy;

impl Chooser for Greedy {
    fn categorical(&mut self, _label: &str, probs: &[f64]) -> usize {
        argmax(probs)
    }

    fn bernoulli(&mut self, _label: &str, p: f64) -> bool {
        p >= 0.5
    }
}

/// Uniform decisions that ignore the policy: uniform over the unmasked
/// entries, fair coins for bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomChooser {
    pub seed: u64,
}

impl Chooser for RandomChooser {
    fn categorical(&mut self, label: &str, probs: &[f64]) -> usize {
        let allowed: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
        if allowed.is_empty() {
            return 0;
        }
        allowed[keyed_rng(self.seed, label).random_range(0..allowed.len())]
    }

    fn bernoulli(&mut self, label: &str, _p: f64) -> bool {
        keyed_rng(self.seed, label).random_bool(0.5)
    }
}

/// Wraps a chooser and records every decision by label.
#[derive(Debug, Clone)]
pub struct Recorder<C> {
    pub inner: C,
    pub log: BTreeMap<String, Choice>,
}

impl<C: Chooser> Recorder<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: BTreeMap::new(),
        }
    }
}

impl<C: Chooser> Chooser for Recorder<C> {
    fn categorical(&mut self, label: &str, probs: &[f64]) -> usize {
        let i = self.inner.categorical(label, probs);
        self.log.insert(label.to_string(), Choice::Index(i));
        i
    }

    fn bernoulli(&mut self, label: &str, p: f64) -> bool {
        let b = self.inner.bernoulli(label, p);
        self.log.insert(label.to_string(), Choice::Bit(b));
        b
    }
}

/// Replays recorded decisions; labels missing from the log fall back to
/// [`Greedy`] and are counted in `misses`.
#[derive(Debug, Clone, Default)]
pub struct Replay {
    pub log: BTreeMap<String, Choice>,
    pub misses: usize,
}

impl Replay {
    pub fn new(log: BTreeMap<String, Choice>) -> Self {
        Self { log, misses: 0 }
    }
}

impl Chooser for Replay {
    fn categorical(&mut self, label: &str, probs: &[f64]) -> usize {
        match self.log.get(label) {
            Some(Choice::Index(i)) if *i < probs.len() => *i,
            _ => {
                self.misses += 1;
                argmax(probs)
            }
        }
    }

    fn bernoulli(&mut self, label: &str, p: f64) -> bool {
        match self.log.get(label) {
            Some(Choice::Bit(b)) => *b,
            _ => {
                self.misses += 1;
                p >= 0.5
            }
        }
    }
}
