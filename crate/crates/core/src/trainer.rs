//! Episode loop: decide, execute, score, and take one policy-gradient step
//! per query.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::choice::{derive_seed, keyed_rng, Chooser, Greedy, RandomChooser, Sampler};
use crate::dataset::Query;
use crate::diffcore::{Graph, ParameterStore, Tensor, Var};
use crate::embedding::EmbeddingStore;
use crate::error::Error;
use crate::executor::{execute_mas, Backend, Checker, EpisodeResult};
use crate::policy::{forward, init_params, DecisionSettings, DecisionTrace, PolicyContext};
use crate::selector::{
    pool_distribution, sample_pool, DifficultyEstimate, DifficultyHead, DifficultySource, StubEstimator,
    DEFAULT_BUCKET_TEMPERATURE,
};

pub const DEFAULT_LAMBDA_LEN: f64 = 0.2;
pub const BASELINE_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    #[default]
    RunningMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_tok: f64,
    pub lambda_lat: f64,
    pub lambda_len: f64,
    pub delta: f64,
    /// Highest selectable pool index.
    pub upper_bound: usize,
    pub bucket_temperature: f64,
    pub lr: f64,
    pub clip: Option<f64>,
    pub episodes: usize,
    pub seed: u64,
    pub baseline: BaselineKind,
    /// Score failed executions with perf 0 instead of aborting.
    pub skip_failures: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_tok: 0.0,
            lambda_lat: 0.0,
            lambda_len: DEFAULT_LAMBDA_LEN,
            delta: 0.0,
            upper_bound: 3,
            bucket_temperature: DEFAULT_BUCKET_TEMPERATURE,
            lr: 0.1,
            clip: Some(5.0),
            episodes: 40,
            seed: 0,
            baseline: BaselineKind::RunningMean,
            skip_failures: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let nonneg = [
            ("lambda_tok", self.lambda_tok),
            ("lambda_lat", self.lambda_lat),
            ("lambda_len", self.lambda_len),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.bucket_temperature > 0.0) {
            return Err(Error::Config("bucket_temperature must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        Ok(())
    }

    pub fn settings(&self) -> DecisionSettings {
        DecisionSettings {
            upper_bound: self.upper_bound,
            bucket_temperature: self.bucket_temperature,
        }
    }
}

pub fn reward(perf: f64, tok: f64, lat: f64, cfg: &TrainConfig) -> f64 {
    perf - cfg.lambda_tok * tok - cfg.lambda_lat * lat
}

/// `-(R - b) log p + λ_len Pen_len` with the baseline held constant.
pub fn loss(g: &mut Graph, r: f64, baseline: f64, log_p_total: Var, pen_len: Var, lambda_len: f64) -> Result<Var, Error> {
    let pg = g.scale(log_p_total, -(r - baseline));
    let pen = g.scale(pen_len, lambda_len);
    Ok(g.add(pg, pen)?)
}

/// Where per-query difficulty comes from.
#[derive(Debug, Clone)]
pub enum DifficultyModel {
    /// Use the dataset label, falling back to the stub.
    Labels(StubEstimator),
    Stub(StubEstimator),
    Head(DifficultyHead),
}

impl Default for DifficultyModel {
    fn default() -> Self {
        DifficultyModel::Labels(StubEstimator::default())
    }
}

impl DifficultyModel {
    pub fn estimate(&self, q: &Query, embedding: &Tensor, delta: f64) -> Result<DifficultyEstimate, Error> {
        Ok(match self {
            DifficultyModel::Labels(stub) => match q.difficulty {
                Some(d) => DifficultyEstimate::new(d, delta, DifficultySource::Label),
                None => DifficultyEstimate::new(stub.estimate(&q.text), delta, DifficultySource::Stub),
            },
            DifficultyModel::Stub(stub) => DifficultyEstimate::new(stub.estimate(&q.text), delta, DifficultySource::Stub),
            DifficultyModel::Head(head) => {
                let e = crate::embedding::Embedding::new(embedding.data().to_vec());
                DifficultyEstimate::new(head.predict(&e)?, delta, DifficultySource::Head)
            }
        })
    }
}

/// Everything an episode needs besides parameters.
#[derive(Clone, Copy)]
pub struct Environment<'a> {
    pub catalog: &'a Catalog,
    pub ctx: &'a PolicyContext,
    pub embeddings: &'a EmbeddingStore,
    pub backend: &'a dyn Backend,
    pub checker: &'a dyn Checker,
    pub difficulty: &'a DifficultyModel,
}

/// Outcome of executing one decision, with failures folded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub perf: f64,
    pub tok_cost: f64,
    pub latency: f64,
    pub failure: Option<String>,
    pub result: Option<EpisodeResult>,
}

pub struct Rollout {
    pub graph: Graph,
    pub log_p_total: Var,
    pub pen_len: Var,
    pub trace: DecisionTrace,
    pub difficulty: DifficultyEstimate,
    pub outcome: Outcome,
}

pub fn rollout(
    env: Environment<'_>,
    params: &ParameterStore,
    query: &Query,
    cfg: &TrainConfig,
    chooser: &mut dyn Chooser,
    exec_seed: u64,
) -> Result<Rollout, Error> {
    let emb = env.embeddings.encode_text(&query.text)?;
    let q = Tensor::column(emb.values().to_vec());
    let difficulty = env.difficulty.estimate(query, &q, cfg.delta)?;
    let mut g = Graph::new();
    let fw = forward(&mut g, params, env.ctx, &q, difficulty, cfg.settings(), chooser)?;
    let instance = fw.trace.instance(&env.ctx.templates);
    let outcome = match execute_mas(&instance, query, difficulty.d, env.catalog, env.backend, env.checker, exec_seed) {
        Ok(r) => Outcome {
            perf: r.perf,
            tok_cost: r.tok_cost,
            latency: r.latency,
            failure: None,
            result: Some(r),
        },
        Err(e) if cfg.skip_failures => {
            log::warn!("query {}: execution failed: {e}", query.id);
            let p = e.partial().cloned().unwrap_or_default();
            Outcome {
                perf: 0.0,
                tok_cost: p.tok_cost,
                latency: p.latency,
                failure: Some(e.to_string()),
                result: None,
            }
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Rollout {
        graph: g,
        log_p_total: fw.log_p_total,
        pen_len: fw.pen_len,
        trace: fw.trace,
        difficulty,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub query_id: String,
    pub pool: usize,
    pub agents: usize,
    pub edges: usize,
    pub reward: f64,
    pub baseline: f64,
    pub perf: f64,
    pub tok_cost: f64,
    pub latency: f64,
    pub log_p_total: f64,
    pub pen_len: f64,
    pub loss: f64,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Runs `cfg.episodes` single-query updates, cycling through the dataset in
/// a freshly shuffled order each pass.
pub fn train(
    env: Environment<'_>,
    dataset: &[Query],
    params: &mut ParameterStore,
    cfg: &TrainConfig,
) -> Result<Vec<EpisodeRecord>, Error> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training dataset is empty".into()));
    }
    let mut log = Vec::with_capacity(cfg.episodes);
    let mut order: Vec<usize> = Vec::new();
    let mut baseline = 0.0;
    for ep in 0..cfg.episodes {
        let pass = ep / dataset.len();
        if ep % dataset.len() == 0 {
            order = (0..dataset.len()).collect();
            order.shuffle(&mut keyed_rng(cfg.seed, &format!("pass/{pass}")));
        }
        let query = &dataset[order[ep % dataset.len()]];
        let ep_seed = derive_seed(cfg.seed, &format!("episode/{ep}"));
        let mut chooser = Sampler::new(derive_seed(ep_seed, "policy"));
        let mut ro = rollout(env, params, query, cfg, &mut chooser, derive_seed(ep_seed, "exec"))?;
        let r = reward(ro.outcome.perf, ro.outcome.tok_cost, ro.outcome.latency, cfg);
        let b = match cfg.baseline {
            BaselineKind::None => 0.0,
            BaselineKind::RunningMean => baseline,
        };
        let l = loss(&mut ro.graph, r, b, ro.log_p_total, ro.pen_len, cfg.lambda_len)?;
        let loss_value = ro.graph.scalar_value(l);
        params.zero_grads();
        ro.graph.backward(l, params)?;
        let step = params.sgd_step(cfg.lr, cfg.clip);
        baseline = BASELINE_MOMENTUM * baseline + (1.0 - BASELINE_MOMENTUM) * r;
        log.push(EpisodeRecord {
            episode: ep,
            query_id: query.id.clone(),
            pool: ro.trace.pool.index,
            agents: ro.trace.topology.retained.len(),
            edges: ro.trace.topology.edges.len(),
            reward: r,
            baseline: b,
            perf: ro.outcome.perf,
            tok_cost: ro.outcome.tok_cost,
            latency: ro.outcome.latency,
            log_p_total: ro.trace.log_p_total,
            pen_len: ro.trace.pen_len,
            loss: loss_value,
            grad_norm: step.grad_norm,
            failure: ro.outcome.failure,
        });
    }
    Ok(log)
}

pub fn write_jsonl<T: Serialize>(mut w: impl Write, records: &[T]) -> Result<(), Error> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Most likely pool and backbones, keep when `p ≥ 0.5`.
    #[default]
    Argmax,
    /// Uniform decisions that ignore the policy.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub pool: usize,
    pub agents: usize,
    pub edges: usize,
    pub difficulty: f64,
    pub perf: f64,
    pub tok_cost: f64,
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub queries: usize,
    pub mean_perf: f64,
    pub total_tok_cost: f64,
    pub mean_tok_cost: f64,
    pub mean_latency: f64,
    pub mean_pool: f64,
}

impl EvalSummary {
    pub fn from_records(records: &[EvalRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let total_tok_cost: f64 = records.iter().map(|r| r.tok_cost).sum();
        Self {
            queries: records.len(),
            mean_perf: records.iter().map(|r| r.perf).sum::<f64>() / n,
            total_tok_cost,
            mean_tok_cost: total_tok_cost / n,
            mean_latency: records.iter().map(|r| r.latency).sum::<f64>() / n,
            mean_pool: records.iter().map(|r| r.pool as f64).sum::<f64>() / n,
        }
    }
}

/// Evaluates every query with read-only parameters, spread over `workers`
/// threads. Records come back in dataset order.
pub fn evaluate(
    env: Environment<'_>,
    dataset: &[Query],
    params: &ParameterStore,
    cfg: &TrainConfig,
    mode: EvalMode,
    workers: usize,
) -> Result<(Vec<EvalRecord>, EvalSummary), Error> {
    cfg.validate()?;
    let run = |i: usize, q: &Query| -> Result<EvalRecord, Error> {
        let seed = derive_seed(cfg.seed, &format!("eval/{i}"));
        let mut random = RandomChooser { seed: derive_seed(seed, "random") };
        let mut greedy = Greedy;
        let chooser: &mut dyn Chooser = match mode {
            EvalMode::Argmax => &mut greedy,
            EvalMode::Random => &mut random,
        };
        let ro = rollout(env, params, q, cfg, chooser, derive_seed(seed, "exec"))?;
        Ok(EvalRecord {
            query_id: q.id.clone(),
            pool: ro.trace.pool.index,
            agents: ro.trace.topology.retained.len(),
            edges: ro.trace.topology.edges.len(),
            difficulty: ro.difficulty.d,
            perf: ro.outcome.perf,
            tok_cost: ro.outcome.tok_cost,
            latency: ro.outcome.latency,
            failure: ro.outcome.failure,
        })
    };
    let workers = workers.clamp(1, dataset.len().max(1));
    let chunk = dataset.len().div_ceil(workers).max(1);
    let mut records = Vec::with_capacity(dataset.len());
    std::thread::scope(|s| -> Result<(), Error> {
        let handles: Vec<_> = dataset
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let run = &run;
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, q)| run(c * chunk + j, q))
                        .collect::<Result<Vec<_>, Error>>()
                })
            })
            .collect();
        for h in handles {
            records.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(())
    })?;
    let summary = EvalSummary::from_records(&records);
    Ok((records, summary))
}

/// Two-armed reduction: only the pool choice is learned, the reward is 1
/// for the better arm and 0 otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub episodes: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub bucket_temperature: f64,
    pub d_eff: f64,
    pub better_arm: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub baseline: BaselineKind,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            lr: 0.1,
            clip: Some(5.0),
            bucket_temperature: DEFAULT_BUCKET_TEMPERATURE,
            d_eff: 0.5,
            better_arm: 1,
            embed_dim: 4,
            hidden: 4,
            baseline: BaselineKind::RunningMean,
        }
    }
}

/// Probability of the better arm before each episode and after the last.
pub fn pool_bandit(cfg: &BanditConfig, seed: u64) -> Result<Vec<f64>, Error> {
    let mut params = init_params(cfg.embed_dim, cfg.hidden, 2, seed);
    let mut rng = keyed_rng(seed, "bandit/pools");
    let inputs: Vec<Tensor> = (0..2)
        .map(|_| Tensor::column((0..3 * cfg.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    // equal costs: the arms differ only in reward
    let curve = [0.0, 0.0];
    let prob = |params: &ParameterStore| -> Result<f64, Error> {
        let mut g = Graph::new();
        let dist = pool_distribution(&mut g, params, &inputs, &curve, cfg.d_eff, 1, cfg.bucket_temperature)?;
        Ok(dist.probs[cfg.better_arm])
    };
    let mut trajectory = Vec::with_capacity(cfg.episodes + 1);
    let mut baseline = 0.0;
    for ep in 0..cfg.episodes {
        trajectory.push(prob(&params)?);
        let mut g = Graph::new();
        let dist = pool_distribution(&mut g, &params, &inputs, &curve, cfg.d_eff, 1, cfg.bucket_temperature)?;
        let mut chooser = Sampler::new(derive_seed(seed, &format!("bandit/{ep}")));
        let (dec, log_p) = sample_pool(&mut g, &dist, cfg.d_eff, cfg.d_eff, &mut chooser)?;
        let r = if dec.index == cfg.better_arm { 1.0 } else { 0.0 };
        let b = match cfg.baseline {
            BaselineKind::None => 0.0,
            BaselineKind::RunningMean => baseline,
        };
        let l = g.scale(log_p, -(r - b));
        params.zero_grads();
        g.backward(l, &mut params)?;
        params.sgd_step(cfg.lr, cfg.clip);
        baseline = BASELINE_MOMENTUM * baseline + (1.0 - BASELINE_MOMENTUM) * r;
    }
    trajectory.push(prob(&params)?);
    Ok(trajectory)
}
