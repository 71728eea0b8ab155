//! Run configuration: file paths plus training settings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use mas_budget::trainer::{BaselineKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyKind {
    /// Dataset labels, stub estimate when missing.
    #[default]
    Labels,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub pools: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub admissible: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub synthetic_backbones: Option<PathBuf>,
    pub remote: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub difficulty: DifficultyKind,
    pub workers: usize,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            pools: None,
            templates: None,
            admissible: None,
            embeddings: None,
            synthetic_backbones: None,
            remote: None,
            dataset: None,
            embed_dim: mas_budget::embedding::DEFAULT_FALLBACK_DIM,
            hidden: mas_budget::policy::DEFAULT_HIDDEN,
            difficulty: DifficultyKind::Labels,
            workers: 4,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        match field {
            Some(p) => Ok(p.as_path()),
            None => bail!("missing `{name}`: pass --{} or set it in the config file", name.replace('_', "-")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.embed_dim == 0 || self.hidden == 0 {
            bail!("embed_dim and hidden must be positive");
        }
        for (name, p) in [
            ("catalog", &self.catalog),
            ("pools", &self.pools),
            ("templates", &self.templates),
            ("admissible", &self.admissible),
            ("embeddings", &self.embeddings),
            ("synthetic_backbones", &self.synthetic_backbones),
            ("remote", &self.remote),
            ("dataset", &self.dataset),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name} file {} does not exist", p.display());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    None,
    RunningMean,
}

/// Flags mirroring [`RunConfig`]; anything given overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON run configuration to start from
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub pools: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// JSON list of [from_role, to_role] pairs
    #[arg(long)]
    pub admissible: Option<PathBuf>,
    /// Precomputed embeddings (JSONL); the hash encoder is used otherwise
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Simulated backbones; selects the simulator backend
    #[arg(long)]
    pub synthetic_backbones: Option<PathBuf>,
    /// Remote endpoint config; selects the chat-completions backend
    #[arg(long)]
    pub remote: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, value_enum)]
    pub difficulty: Option<DifficultyKind>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub lambda_tok: Option<f64>,
    #[arg(long)]
    pub lambda_lat: Option<f64>,
    #[arg(long)]
    pub lambda_len: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Highest selectable pool index (0-based)
    #[arg(long)]
    pub upper_bound: Option<usize>,
    #[arg(long)]
    pub bucket_temperature: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { c.$field = Some(v.clone()); } )* };
        }
        set!(catalog, pools, templates, admissible, embeddings, synthetic_backbones, remote, dataset);
        if let Some(v) = self.embed_dim {
            c.embed_dim = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        if let Some(v) = self.difficulty {
            c.difficulty = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        let t = &mut c.train;
        macro_rules! train {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { t.$field = v; } )* };
        }
        train!(lambda_tok, lambda_lat, lambda_len, delta, upper_bound, bucket_temperature, lr, episodes, seed);
        if let Some(b) = self.baseline {
            t.baseline = match b {
                BaselineArg::None => BaselineKind::None,
                BaselineArg::RunningMean => BaselineKind::RunningMean,
            };
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_fixed_point() {
        let mut c = RunConfig::default();
        c.catalog = Some("a/catalog.json".into());
        c.train.lambda_tok = 10.0;
        let once = c.to_json();
        let back: RunConfig = serde_json::from_str(&once).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json(), once);
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        let mut base = RunConfig::default();
        base.train.episodes = 7;
        base.train.seed = 3;
        std::fs::write(&p, base.to_json()).unwrap();
        let args = RunArgs {
            config: Some(p),
            seed: Some(9),
            ..Default::default()
        };
        let c = args.resolve().unwrap();
        assert_eq!(c.train.episodes, 7);
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"catalogue": "x"}"#).is_err());
    }
}
