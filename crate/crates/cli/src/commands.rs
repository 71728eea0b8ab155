use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mas_budget::catalog::{build_pool_set, Catalog, PoolSet, PoolingOptions};
use mas_budget::dataset::{load_dataset, save_dataset};
use mas_budget::diffcore::ParameterStore;
use mas_budget::embedding::EmbeddingStore;
use mas_budget::executor::{
    load_synthetic_backbones, Backend, ExactMatch, RemoteBackend, RemoteConfig, Simulator,
};
use mas_budget::mas::{load_templates, Admissible};
use mas_budget::metrics::{
    auc, perf_at_budget, upper_envelope, write_frontier_csv, BudgetKind, Extension, FrontierRow, HullMode,
};
use mas_budget::policy::{init_params, PolicyContext};
use mas_budget::selector::StubEstimator;
use mas_budget::synth::{run_ladder, synthetic_suite, LadderOptions};
use mas_budget::trainer::{
    evaluate, train, write_jsonl, DifficultyModel, Environment, EvalMode, EvalSummary, TrainConfig,
};

use crate::config::{DifficultyKind, RunConfig};
use crate::manifest::Manifest;

const CHECKPOINT: &str = "checkpoint.bin";
const CONFIG: &str = "config.json";

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text).with_context(|| format!("writing {}", dir.join(name).display()))
}

fn pretty(v: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(out: &Path, seed: u64, n_train: usize, n_eval: usize) -> Result<()> {
    create_dir(out)?;
    let suite = synthetic_suite(seed, n_train, n_eval)?;
    suite.catalog.save(&out.join("catalog.json"))?;
    write_text(out, "synthetic_backbones.json", &pretty(&suite.backbones)?)?;
    write_text(out, "templates.json", &pretty(&suite.templates)?)?;
    save_dataset(&out.join("train.jsonl"), &suite.train)?;
    save_dataset(&out.join("eval.jsonl"), &suite.eval)?;
    let mut run = RunConfig {
        catalog: Some(out.join("catalog.json")),
        templates: Some(out.join("templates.json")),
        synthetic_backbones: Some(out.join("synthetic_backbones.json")),
        dataset: Some(out.join("train.jsonl")),
        ..RunConfig::default()
    };
    run.train.seed = seed;
    write_text(out, "run.json", &run.to_json())?;
    let mut m = Manifest::new("synth", serde_json::json!({"seed": seed, "train": n_train, "eval": n_eval}))?;
    for f in ["catalog.json", "synthetic_backbones.json", "templates.json", "train.jsonl", "eval.jsonl", "run.json"] {
        m.output(out, f)?;
    }
    m.write(out)?;
    println!("wrote synthetic suite ({n_train} train, {n_eval} eval queries) to {}", out.display());
    Ok(())
}

pub fn pools(catalog_path: &Path, out: &Path, opts: PoolingOptions) -> Result<()> {
    let catalog = Catalog::load(catalog_path)?;
    let set = build_pool_set(&catalog, opts)?;
    create_dir(out)?;
    set.save(&out.join("pools.json"))?;
    let mut summary = String::new();
    for (i, p) in set.pools.iter().enumerate() {
        let mean_perf = p
            .members
            .iter()
            .filter_map(|id| catalog.get(id))
            .map(|b| b.perf_score)
            .sum::<f64>()
            / p.members.len().max(1) as f64;
        summary.push_str(&format!(
            "pool {i}: cost position {:.3}, mean perf {:.3}, medoid {}\n  members: {}\n",
            set.cost_curve[i],
            mean_perf,
            p.medoid,
            p.members.join(", ")
        ));
    }
    let dropped: Vec<&str> = catalog
        .backbones
        .iter()
        .map(|b| b.id.as_str())
        .filter(|id| !set.pools.iter().any(|p| p.members.iter().any(|m| m == id)))
        .collect();
    if !dropped.is_empty() {
        summary.push_str(&format!("not pooled: {}\n", dropped.join(", ")));
    }
    write_text(out, "pools.txt", &summary)?;
    print!("{summary}");
    let mut m = Manifest::new(
        "pools",
        serde_json::json!({"k": opts.k, "min_size": opts.min_size, "max_size": opts.max_size, "seed": opts.seed}),
    )?;
    m.input(catalog_path)?;
    m.output(out, "pools.json")?;
    m.output(out, "pools.txt")?;
    m.write(out)
}

/// Loaded inputs shared by train and eval.
struct Loaded {
    catalog: Catalog,
    ctx: PolicyContext,
    store: EmbeddingStore,
    backend: Box<dyn Backend>,
    difficulty: DifficultyModel,
}

fn load_inputs(cfg: &RunConfig) -> Result<Loaded> {
    let catalog = Catalog::load(cfg.require(&cfg.catalog, "catalog")?)?;
    let templates = load_templates(cfg.require(&cfg.templates, "templates")?)?;
    let pools = match &cfg.pools {
        Some(p) => PoolSet::load(p)?,
        None => build_pool_set(&catalog, PoolingOptions { seed: cfg.train.seed, ..PoolingOptions::default() })?,
    };
    let admissible = match &cfg.admissible {
        Some(p) => Some(Admissible::load(p, &templates)?),
        None => None,
    };
    let store = match &cfg.embeddings {
        Some(p) => {
            let (store, warnings) = EmbeddingStore::load(p)?;
            for w in &warnings {
                log::warn!("embeddings: {w:?}");
            }
            store
        }
        None => EmbeddingStore::fallback(cfg.embed_dim),
    };
    let ctx = PolicyContext::new(templates, pools, &catalog, &store, admissible)?;
    let backend: Box<dyn Backend> = match (&cfg.synthetic_backbones, &cfg.remote) {
        (Some(p), _) => Box::new(Simulator::new(load_synthetic_backbones(p)?)?),
        (None, Some(p)) => {
            let text = std::fs::read_to_string(p)?;
            let rc: RemoteConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            Box::new(RemoteBackend::from_env(rc))
        }
        (None, None) => bail!("no backend: pass --synthetic-backbones or --remote"),
    };
    let stub = StubEstimator { seed: cfg.train.seed, ..StubEstimator::default() };
    let difficulty = match cfg.difficulty {
        DifficultyKind::Labels => DifficultyModel::Labels(stub),
        DifficultyKind::Stub => DifficultyModel::Stub(stub),
    };
    Ok(Loaded { catalog, ctx, store, backend, difficulty })
}

fn input_paths(cfg: &RunConfig) -> Vec<PathBuf> {
    [
        &cfg.catalog,
        &cfg.pools,
        &cfg.templates,
        &cfg.admissible,
        &cfg.embeddings,
        &cfg.synthetic_backbones,
        &cfg.remote,
        &cfg.dataset,
    ]
    .into_iter()
    .flatten()
    .cloned()
    .collect()
}

pub fn train_cmd(mut cfg: RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let dataset = load_dataset(cfg.require(&cfg.dataset, "dataset")?)?;
    let inputs = input_paths(&cfg);
    let l = load_inputs(&cfg)?;
    create_dir(out)?;
    if cfg.pools.is_none() {
        let p = out.join("pools.json");
        l.ctx.pools.save(&p)?;
        cfg.pools = Some(p);
    }
    let env = Environment {
        catalog: &l.catalog,
        ctx: &l.ctx,
        embeddings: &l.store,
        backend: l.backend.as_ref(),
        checker: &ExactMatch,
        difficulty: &l.difficulty,
    };
    let mut params = init_params(l.store.dim(), cfg.hidden, l.ctx.agent_count(), cfg.train.seed);
    let log = train(env, &dataset, &mut params, &cfg.train)?;
    params.save(&out.join(CHECKPOINT))?;
    let mut f = BufWriter::new(File::create(out.join("train_log.jsonl"))?);
    write_jsonl(&mut f, &log)?;
    f.flush()?;
    write_text(out, CONFIG, &cfg.to_json())?;

    let mut m = Manifest::new("train", &cfg)?;
    m.inputs(&inputs)?;
    for name in [CONFIG, CHECKPOINT, "train_log.jsonl"] {
        m.output(out, name)?;
    }
    if out.join("pools.json").exists() {
        m.output(out, "pools.json")?;
    }
    m.write(out)?;
    let n = log.len().max(1) as f64;
    println!(
        "trained {} episodes: mean reward {:.4}, mean perf {:.4}; checkpoint in {}",
        log.len(),
        log.iter().map(|r| r.reward).sum::<f64>() / n,
        log.iter().map(|r| r.perf).sum::<f64>() / n,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub dataset: String,
    pub mode: EvalMode,
    pub settings: TrainConfig,
    pub summary: EvalSummary,
}

pub fn eval_cmd(
    run: &Path,
    dataset_override: Option<&Path>,
    mode: EvalMode,
    method: Option<String>,
    workers: Option<usize>,
    out: &Path,
) -> Result<()> {
    let cfg_path = run.join(CONFIG);
    let ckpt = run.join(CHECKPOINT);
    if !ckpt.exists() {
        bail!("no checkpoint at {}", ckpt.display());
    }
    let mut cfg = RunConfig::load(&cfg_path)?;
    if let Some(d) = dataset_override {
        cfg.dataset = Some(d.to_path_buf());
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let dataset_path = cfg.require(&cfg.dataset, "dataset")?.to_path_buf();
    let dataset = load_dataset(&dataset_path)?;
    let l = load_inputs(&cfg)?;
    let params = ParameterStore::load(&ckpt, cfg.train.seed)?;
    let env = Environment {
        catalog: &l.catalog,
        ctx: &l.ctx,
        embeddings: &l.store,
        backend: l.backend.as_ref(),
        checker: &ExactMatch,
        difficulty: &l.difficulty,
    };
    let (records, summary) = evaluate(env, &dataset, &params, &cfg.train, mode, cfg.workers)?;
    create_dir(out)?;
    let mut f = BufWriter::new(File::create(out.join("records.jsonl"))?);
    write_jsonl(&mut f, &records)?;
    f.flush()?;
    let report = EvalReport {
        method: method.unwrap_or_else(|| match mode {
            EvalMode::Argmax => "configurator".into(),
            EvalMode::Random => "random".into(),
        }),
        dataset: dataset_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        mode,
        settings: cfg.train.clone(),
        summary: summary.clone(),
    };
    write_text(out, "summary.json", &pretty(&report)?)?;
    let mut m = Manifest::new("eval", serde_json::json!({"run": run, "mode": mode, "config": cfg}))?;
    m.input(&cfg_path)?;
    m.input(&ckpt)?;
    m.inputs(&input_paths(&cfg))?;
    m.output(out, "records.jsonl")?;
    m.output(out, "summary.json")?;
    m.write(out)?;
    println!(
        "{} queries: mean perf {:.4}, total cost {:.6}, mean latency {:.3}s",
        summary.queries, summary.mean_perf, summary.total_tok_cost, summary.mean_latency
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FrontierOptions {
    pub base_method: Option<String>,
    pub window_tok: Option<f64>,
    pub window_lat: Option<f64>,
    pub tok_budgets: Vec<f64>,
    pub lat_budgets: Vec<f64>,
    pub hull: HullMode,
    pub extension: Extension,
}

#[derive(Debug, Serialize)]
struct AucRow {
    method: String,
    dataset: String,
    kind: BudgetKind,
    window: f64,
    auc: f64,
}

pub fn frontier_cmd(results: &[PathBuf], opts: &FrontierOptions, out: &Path) -> Result<()> {
    if results.is_empty() {
        bail!("frontier needs at least one results file");
    }
    let mut by_method: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    for p in results {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        by_method.entry(r.method.clone()).or_default().push(r);
    }
    let dataset = by_method.values().flatten().next().map(|r| r.dataset.clone()).unwrap_or_default();
    let point = |r: &EvalReport, kind: BudgetKind| match kind {
        BudgetKind::TokenCost => (r.summary.total_tok_cost, r.summary.mean_perf),
        BudgetKind::Latency => (r.summary.mean_latency, r.summary.mean_perf),
    };

    let mut rows = Vec::new();
    let mut aucs = Vec::new();
    let mut pab = String::from("method,kind,budget,performance\n");
    for kind in [BudgetKind::TokenCost, BudgetKind::Latency] {
        // base point: the chosen method's most expensive run
        let base = match &opts.base_method {
            Some(m) => {
                let runs = by_method.get(m).with_context(|| format!("base method `{m}` not among the results"))?;
                runs.iter().map(|r| point(r, kind)).max_by(|a, b| a.0.total_cmp(&b.0))
            }
            None => None,
        };
        let explicit = match kind {
            BudgetKind::TokenCost => opts.window_tok,
            BudgetKind::Latency => opts.window_lat,
        };
        let window = explicit.or(base.map(|b| b.0)).unwrap_or_else(|| {
            by_method.values().flatten().map(|r| point(r, kind).0).fold(0.0, f64::max)
        });
        if !(window > 0.0) {
            bail!("{} window is not positive", kind.as_str());
        }
        let budgets = match kind {
            BudgetKind::TokenCost => &opts.tok_budgets,
            BudgetKind::Latency => &opts.lat_budgets,
        };
        let budgets: Vec<f64> = if budgets.is_empty() {
            (1..=4).map(|i| window * i as f64 / 4.0).collect()
        } else {
            budgets.clone()
        };
        for (method, runs) in &by_method {
            let pts: Vec<(f64, f64)> = runs.iter().map(|r| point(r, kind)).collect();
            let env = upper_envelope(&pts, kind, opts.hull);
            for &(b, p) in &env.points {
                rows.push(FrontierRow { kind, budget: b, performance: p, method: method.clone(), dataset: dataset.clone() });
            }
            aucs.push(AucRow {
                method: method.clone(),
                dataset: dataset.clone(),
                kind,
                window,
                auc: auc(&env, window, base, opts.extension)?,
            });
            for &b in &budgets {
                pab.push_str(&format!("{method},{},{b},{}\n", kind.as_str(), perf_at_budget(&env, b)));
            }
        }
    }
    create_dir(out)?;
    let mut f = BufWriter::new(File::create(out.join("frontier.csv"))?);
    write_frontier_csv(&mut f, &rows)?;
    f.flush()?;
    write_text(out, "pab.csv", &pab)?;
    write_text(out, "auc.json", &pretty(&aucs)?)?;
    for a in &aucs {
        println!("{:<20} {:<10} window {:<12.6} AUC {:.6}", a.method, a.kind.as_str(), a.window, a.auc);
    }
    let mut m = Manifest::new(
        "frontier",
        serde_json::json!({
            "base_method": opts.base_method, "window_tok": opts.window_tok, "window_lat": opts.window_lat,
            "hull": opts.hull, "extension": opts.extension,
        }),
    )?;
    m.inputs(results)?;
    for name in ["frontier.csv", "pab.csv", "auc.json"] {
        m.output(out, name)?;
    }
    m.write(out)
}

pub fn ladder_cmd(seeds: u64, opts: LadderOptions, out: &Path) -> Result<()> {
    create_dir(out)?;
    let mut runs = Vec::new();
    for seed in 0..seeds {
        let r = run_ladder(seed, &opts)?;
        println!(
            "seed {seed}: costs [{}], AUC {:.6} vs random {:.6}",
            r.trained.iter().map(|p| format!("{:.5}", p.summary.mean_tok_cost)).collect::<Vec<_>>().join(", "),
            r.auc_trained,
            r.auc_random
        );
        runs.push(r);
    }
    write_text(out, "ladder.json", &pretty(&runs)?)?;
    let mut m = Manifest::new("ladder", serde_json::json!({"seeds": seeds, "options": opts}))?;
    m.output(out, "ladder.json")?;
    m.write(out)
}
