//! Backbone catalog: (perf, token cost, latency) estimation, Pareto
//! filtering, k-medoids pooling, pool balancing and the pool cost curve.

mod fixture;
mod kmedoids;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CatalogError;

pub use fixture::{
    qwen_mmlu_catalog, CONVENTIONAL_TYPE_PROFILE, QWEN_BASELINE_USAGE, QWEN_GAMMA_TASK,
    REASONING_TYPE_PROFILE,
};
pub use kmedoids::{cluster_pools, Clustering};

pub const CATALOG_SCHEMA_VERSION: u32 = 1;
pub const POOLSET_SCHEMA_VERSION: u32 = 1;
/// Latency proxy when no calibration exists: seconds per billion activated
/// parameters, plus a fixed overhead.
pub const LATENCY_PER_BILLION: f64 = 0.05;
pub const LATENCY_OVERHEAD: f64 = 1.0;
pub const DEFAULT_POOL_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    Reasoning,
    NonReasoning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneProfile {
    pub id: String,
    pub family: String,
    pub model_type: ModelType,
    /// CNY per million input tokens.
    pub input_ptp: f64,
    /// CNY per million output tokens.
    pub output_ptp: f64,
    /// Billions.
    #[serde(default)]
    pub activated_params: Option<f64>,
    pub perf_score: f64,
    /// CNY per query.
    pub tok_cost_est: f64,
    /// Seconds per query.
    pub lat_est: f64,
    pub perf_profile: String,
    pub ptp_profile: String,
    pub type_profile: String,
}

impl BackboneProfile {
    pub fn triple(&self) -> Triple {
        Triple {
            perf: self.perf_score,
            tok_cost: self.tok_cost_est,
            lat: self.lat_est,
        }
    }

    /// Money for one call with the given usage.
    pub fn call_cost(&self, tokens_in: u64, tokens_out: u64) -> f64 {
        (tokens_in as f64 * self.input_ptp + tokens_out as f64 * self.output_ptp) / 1e6
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let bad = |reason: &str| {
            Err(CatalogError::InvalidProfile {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if !(self.input_ptp >= 0.0 && self.output_ptp >= 0.0) {
            return bad("prices must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.perf_score) {
            return bad("perf_score must lie in [0, 1]");
        }
        if !(self.tok_cost_est > 0.0 && self.tok_cost_est.is_finite()) {
            return bad("tok_cost_est must be positive");
        }
        if !(self.lat_est > 0.0 && self.lat_est.is_finite()) {
            return bad("lat_est must be positive");
        }
        if let Some(a) = self.activated_params {
            if !(a > 0.0 && a.is_finite()) {
                return bad("activated_params must be positive");
            }
        }
        Ok(())
    }
}

/// One calibration query run against a backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub backbone_id: String,
    pub query_id: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub wall_latency: f64,
    pub correct: bool,
}

/// Expected usage of a conventional model on the task, used when a backbone
/// has no calibration samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineUsage {
    pub tokens_in: f64,
    pub tokens_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub perf: f64,
    pub tok_cost: f64,
    pub lat: f64,
}

/// Estimates a backbone's triple. Calibration samples for `profile.id`
/// take precedence over the usage and latency proxies.
pub fn estimate_triple(
    profile: &BackboneProfile,
    samples: &[CalibrationSample],
    baseline: BaselineUsage,
    gamma_task: f64,
) -> Result<Triple, CatalogError> {
    if !(gamma_task >= 1.0 && gamma_task.is_finite()) {
        return Err(CatalogError::InvalidArgument(format!(
            "gamma_task must be >= 1, got {gamma_task}"
        )));
    }
    let own: Vec<&CalibrationSample> = samples
        .iter()
        .filter(|s| s.backbone_id == profile.id)
        .collect();
    if own.is_empty() {
        let act = profile
            .activated_params
            .ok_or_else(|| CatalogError::InvalidProfile {
                id: profile.id.clone(),
                reason: "no calibration samples and no activated_params".into(),
            })?;
        let out = match profile.model_type {
            ModelType::Reasoning => baseline.tokens_out * gamma_task,
            ModelType::NonReasoning => baseline.tokens_out,
        };
        return Ok(Triple {
            perf: profile.perf_score,
            tok_cost: (baseline.tokens_in * profile.input_ptp + out * profile.output_ptp) / 1e6,
            lat: LATENCY_PER_BILLION * act + LATENCY_OVERHEAD,
        });
    }
    let n = own.len() as f64;
    let tok_cost = own
        .iter()
        .map(|s| profile.call_cost(s.tokens_in, s.tokens_out))
        .sum::<f64>()
        / n;
    let lat = own.iter().map(|s| s.wall_latency).sum::<f64>() / n;
    Ok(Triple {
        perf: profile.perf_score,
        tok_cost,
        lat,
    })
}

fn dominates(a: &Triple, b: &Triple) -> bool {
    a.perf >= b.perf
        && a.tok_cost <= b.tok_cost
        && a.lat <= b.lat
        && (a.perf > b.perf || a.tok_cost < b.tok_cost || a.lat < b.lat)
}

/// Ids not dominated by any other entry (higher perf, lower cost and
/// latency are better).
pub fn pareto_filter(triples: &BTreeMap<String, Triple>) -> BTreeSet<String> {
    triples
        .iter()
        .filter(|(id, t)| {
            !triples
                .iter()
                .any(|(other, o)| other != *id && dominates(o, t))
        })
        .map(|(id, _)| id.clone())
        .collect()
}

/// `[perf, ln tok_cost, ln lat]`.
pub fn feature_vector(triple: &Triple) -> Result<[f64; 3], CatalogError> {
    if !(triple.tok_cost > 0.0 && triple.lat > 0.0) {
        return Err(CatalogError::InvalidArgument(format!(
            "feature vector needs positive cost and latency, got {} and {}",
            triple.tok_cost, triple.lat
        )));
    }
    Ok([triple.perf, triple.tok_cost.ln(), triple.lat.ln()])
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    pub medoid: String,
    /// Sorted by distance to the medoid, then id.
    pub members: Vec<String>,
}

fn sort_by_distance(ids: &mut [String], center: &[f64; 3], features: &BTreeMap<String, [f64; 3]>) {
    ids.sort_by(|a, b| {
        let da = distance(&features[a], center);
        let db = distance(&features[b], center);
        da.total_cmp(&db).then_with(|| a.cmp(b))
    });
}

/// Trims pools above `max_size` (farthest from the medoid first) and fills
/// pools below `min_size` with the nearest outside backbones. A supplemented
/// backbone stays in its original pool too.
pub fn balance_pools(
    pools: &[Pool],
    features: &BTreeMap<String, [f64; 3]>,
    min_size: usize,
    max_size: usize,
) -> Result<Vec<Pool>, CatalogError> {
    if min_size == 0 || min_size > max_size {
        return Err(CatalogError::InfeasibleBounds(format!(
            "need 1 <= min_size <= max_size, got [{min_size}, {max_size}]"
        )));
    }
    if min_size > features.len() {
        return Err(CatalogError::InfeasibleBounds(format!(
            "min_size {min_size} exceeds the {} available backbones",
            features.len()
        )));
    }
    let mut out = Vec::with_capacity(pools.len());
    for pool in pools {
        let center = features
            .get(&pool.medoid)
            .ok_or_else(|| CatalogError::UnknownBackbone(pool.medoid.clone()))?;
        let mut members = pool.members.clone();
        for m in &members {
            if !features.contains_key(m) {
                return Err(CatalogError::UnknownBackbone(m.clone()));
            }
        }
        sort_by_distance(&mut members, center, features);
        members.truncate(max_size);
        if members.len() < min_size {
            let mut outside: Vec<String> = features
                .keys()
                .filter(|id| !members.contains(id))
                .cloned()
                .collect();
            sort_by_distance(&mut outside, center, features);
            let need = min_size - members.len();
            members.extend(outside.into_iter().take(need));
        }
        out.push(Pool {
            medoid: pool.medoid.clone(),
            members,
        });
    }
    Ok(out)
}

/// Min-max scaled mean log token cost per pool, or the linear `p/(P−1)`
/// curve when that is not strictly increasing.
pub fn cost_curve(pools: &[Pool], triples: &BTreeMap<String, Triple>) -> Result<Vec<f64>, CatalogError> {
    let p = pools.len();
    if p <= 1 {
        return Ok(vec![0.0; p]);
    }
    let mut means = Vec::with_capacity(p);
    for pool in pools {
        let mut sum = 0.0;
        for id in &pool.members {
            let t = triples
                .get(id)
                .ok_or_else(|| CatalogError::UnknownBackbone(id.clone()))?;
            sum += feature_vector(t)?[1];
        }
        means.push(sum / pool.members.len().max(1) as f64);
    }
    Ok(curve_from_means(&means))
}

pub(crate) fn curve_from_means(means: &[f64]) -> Vec<f64> {
    let p = means.len();
    if p <= 1 {
        return vec![0.0; p];
    }
    let lo = means[0];
    let hi = means[p - 1];
    let increasing = means.windows(2).all(|w| w[1] > w[0]);
    if increasing && hi > lo {
        let scaled: Vec<f64> = means.iter().map(|m| (m - lo) / (hi - lo)).collect();
        if scaled.windows(2).all(|w| w[1] > w[0]) {
            return scaled;
        }
    }
    (0..p).map(|i| i as f64 / (p - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub schema_version: u32,
    pub backbones: Vec<BackboneProfile>,
}

impl Catalog {
    pub fn new(backbones: Vec<BackboneProfile>) -> Result<Self, CatalogError> {
        let c = Self {
            schema_version: CATALOG_SCHEMA_VERSION,
            backbones,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(CatalogError::Schema {
                found: self.schema_version,
                expected: CATALOG_SCHEMA_VERSION,
            });
        }
        let mut seen = BTreeSet::new();
        for b in &self.backbones {
            b.validate()?;
            if !seen.insert(b.id.as_str()) {
                return Err(CatalogError::DuplicateId(b.id.clone()));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&BackboneProfile> {
        self.backbones.iter().find(|b| b.id == id)
    }

    pub fn triples(&self) -> BTreeMap<String, Triple> {
        self.backbones
            .iter()
            .map(|b| (b.id.clone(), b.triple()))
            .collect()
    }

    /// Re-derives every stored triple with [`estimate_triple`].
    pub fn recalibrate(
        &mut self,
        samples: &[CalibrationSample],
        baseline: BaselineUsage,
        gamma_task: f64,
    ) -> Result<(), CatalogError> {
        for b in &mut self.backbones {
            let t = estimate_triple(b, samples, baseline, gamma_task)?;
            b.tok_cost_est = t.tok_cost;
            b.lat_est = t.lat;
        }
        self.validate()
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, CatalogError> {
        let c: Catalog = serde_json::from_str(text).map_err(|e| CatalogError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Pools ordered weak to strong with their cost curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSet {
    pub schema_version: u32,
    pub pools: Vec<Pool>,
    pub cost_curve: Vec<f64>,
}

impl PoolSet {
    pub fn new(pools: Vec<Pool>, cost_curve: Vec<f64>) -> Result<Self, CatalogError> {
        let s = Self {
            schema_version: POOLSET_SCHEMA_VERSION,
            pools,
            cost_curve,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.pools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pools.is_empty()
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        if self.schema_version != POOLSET_SCHEMA_VERSION {
            return Err(CatalogError::Schema {
                found: self.schema_version,
                expected: POOLSET_SCHEMA_VERSION,
            });
        }
        if self.pools.is_empty() {
            return Err(CatalogError::InvalidArgument("pool set has no pools".into()));
        }
        if let Some(i) = self.pools.iter().position(|p| p.members.is_empty()) {
            return Err(CatalogError::InvalidArgument(format!("pool {i} is empty")));
        }
        if self.cost_curve.len() != self.pools.len() {
            return Err(CatalogError::InvalidArgument(format!(
                "cost curve has {} entries for {} pools",
                self.cost_curve.len(),
                self.pools.len()
            )));
        }
        let bounded = self.cost_curve.iter().all(|c| (0.0..=1.0).contains(c));
        let increasing = self.cost_curve.windows(2).all(|w| w[1] > w[0]);
        if !bounded || !increasing {
            return Err(CatalogError::InvalidArgument(
                "cost curve must be strictly increasing within [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Checks every member against the catalog.
    pub fn check_members(&self, catalog: &Catalog) -> Result<(), CatalogError> {
        for pool in &self.pools {
            for id in &pool.members {
                if catalog.get(id).is_none() {
                    return Err(CatalogError::UnknownBackbone(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self, CatalogError> {
        let s: PoolSet = serde_json::from_str(text).map_err(|e| CatalogError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool set serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Options for [`build_pool_set`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolingOptions {
    pub k: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
}

impl Default for PoolingOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_POOL_COUNT,
            min_size: 3,
            max_size: 3,
            seed: 0,
        }
    }
}

/// Pareto filter, k-medoids, balancing and cost curve over the catalog's
/// stored triples. `k` is capped at the number of Pareto survivors.
pub fn build_pool_set(catalog: &Catalog, opts: PoolingOptions) -> Result<PoolSet, CatalogError> {
    let triples = catalog.triples();
    if triples.is_empty() {
        return Err(CatalogError::TooFewBackbones { k: opts.k, n: 0 });
    }
    let survivors = pareto_filter(&triples);
    let mut features = BTreeMap::new();
    for id in &survivors {
        features.insert(id.clone(), feature_vector(&triples[id])?);
    }
    let k = opts.k.min(features.len());
    let clustering = cluster_pools(&features, k, opts.seed)?;
    let min_size = opts.min_size.min(features.len());
    let max_size = opts.max_size.max(min_size);
    let pools = balance_pools(&clustering.pools, &features, min_size, max_size)?;
    let curve = cost_curve(&pools, &triples)?;
    PoolSet::new(pools, curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(perf: f64, tok_cost: f64, lat: f64) -> Triple {
        Triple { perf, tok_cost, lat }
    }

    fn profile(id: &str, model_type: ModelType, act: Option<f64>) -> BackboneProfile {
        BackboneProfile {
            id: id.into(),
            family: "qwen3".into(),
            model_type,
            input_ptp: 1.0,
            output_ptp: 4.0,
            activated_params: act,
            perf_score: 0.857,
            tok_cost_est: 1.0,
            lat_est: 1.0,
            perf_profile: "p".into(),
            ptp_profile: "q".into(),
            type_profile: "r".into(),
        }
    }

    fn sample(id: &str, tin: u64, tout: u64, lat: f64) -> CalibrationSample {
        CalibrationSample {
            backbone_id: id.into(),
            query_id: "q0".into(),
            tokens_in: tin,
            tokens_out: tout,
            wall_latency: lat,
            correct: true,
        }
    }

    const BASE: BaselineUsage = BaselineUsage {
        tokens_in: 0.0,
        tokens_out: 500.0,
    };

    #[test]
    fn one_sample_cost_from_prices() {
        let p = profile("Qwen3-32B", ModelType::NonReasoning, Some(32.0));
        let tr = estimate_triple(&p, &[sample("Qwen3-32B", 1000, 500, 2.0)], BASE, 2.0).unwrap();
        assert!((tr.tok_cost - 0.003).abs() < 1e-15);
        assert_eq!(tr.lat, 2.0);
        assert_eq!(tr.perf, 0.857);
    }

    #[test]
    fn zero_token_sample() {
        let p = profile("m", ModelType::NonReasoning, None);
        let tr = estimate_triple(&p, &[sample("m", 0, 0, 0.7)], BASE, 2.0).unwrap();
        assert_eq!(tr.tok_cost, 0.0);
        assert_eq!(tr.lat, 0.7);
    }

    #[test]
    fn reasoning_output_scaled_by_gamma() {
        let p = profile("m", ModelType::Reasoning, Some(8.0));
        let tr = estimate_triple(&p, &[], BASE, 2.0).unwrap();
        // 1000 expected output tokens at 4 CNY per million
        assert!((tr.tok_cost - 1000.0 * 4.0 / 1e6).abs() < 1e-15);
        assert!((tr.lat - (0.05 * 8.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn foreign_samples_are_ignored() {
        let p = profile("m", ModelType::NonReasoning, None);
        let err = estimate_triple(&p, &[sample("other", 1, 1, 1.0)], BASE, 2.0).unwrap_err();
        assert!(matches!(err, CatalogError::InvalidProfile { .. }));
    }

    #[test]
    fn pareto_drops_dominated() {
        let m: BTreeMap<_, _> = [("A".to_string(), t(0.8, 1.0, 10.0)), ("B".to_string(), t(0.7, 1.2, 12.0))].into();
        assert_eq!(pareto_filter(&m), BTreeSet::from(["A".to_string()]));
        let one: BTreeMap<_, _> = [("X".to_string(), t(0.1, 1.0, 1.0))].into();
        assert_eq!(pareto_filter(&one).len(), 1);
    }

    #[test]
    fn equal_triples_both_survive() {
        let m: BTreeMap<_, _> = [("A".to_string(), t(0.5, 1.0, 1.0)), ("B".to_string(), t(0.5, 1.0, 1.0))].into();
        assert_eq!(pareto_filter(&m).len(), 2);
    }

    #[test]
    fn feature_vector_values() {
        assert_eq!(feature_vector(&t(0.5, 1.0, 1.0)).unwrap(), [0.5, 0.0, 0.0]);
        let e = std::f64::consts::E;
        let f = feature_vector(&t(0.9, e, e * e)).unwrap();
        assert!((f[1] - 1.0).abs() < 1e-15 && (f[2] - 2.0).abs() < 1e-15);
        let f = feature_vector(&t(0.8, 0.003, 12.5)).unwrap();
        assert!((f[1] - (-5.809142990314028)).abs() < 1e-12);
        assert!((f[2] - 2.5257286443082556).abs() < 1e-12);
        assert!(feature_vector(&t(0.8, 0.0, 1.0)).is_err());
    }

    fn line_features(xs: &[(&str, f64)]) -> BTreeMap<String, [f64; 3]> {
        xs.iter().map(|(id, x)| (id.to_string(), [*x, 0.0, 0.0])).collect()
    }

    #[test]
    fn downsample_removes_farthest() {
        let f = line_features(&[("m", 0.0), ("a", 1.0), ("b", -2.0), ("c", 3.0), ("d", 0.5)]);
        let pool = Pool {
            medoid: "m".into(),
            members: vec!["a".into(), "b".into(), "c".into(), "d".into(), "m".into()],
        };
        let out = balance_pools(&[pool], &f, 1, 3).unwrap();
        // distances: m 0, d 0.5, a 1, b 2, c 3
        assert_eq!(out[0].members, vec!["m", "d", "a"]);
    }

    #[test]
    fn supplement_copies_nearest() {
        let f = line_features(&[("m", 0.0), ("x", 5.0), ("y", -1.5), ("z", 1.0), ("w", 9.0)]);
        let pools = vec![
            Pool { medoid: "m".into(), members: vec!["m".into()] },
            Pool { medoid: "x".into(), members: vec!["x".into(), "y".into(), "z".into(), "w".into()] },
        ];
        let out = balance_pools(&pools, &f, 3, 4).unwrap();
        assert_eq!(out[0].members, vec!["m", "z", "y"]);
        assert_eq!(out[1].members.len(), 4);
    }

    #[test]
    fn in_bounds_pools_unchanged() {
        let f = line_features(&[("a", 0.0), ("b", 1.0), ("c", 2.0)]);
        let pools = vec![
            Pool { medoid: "a".into(), members: vec!["a".into(), "b".into()] },
            Pool { medoid: "c".into(), members: vec!["c".into()] },
        ];
        assert_eq!(balance_pools(&pools, &f, 1, 2).unwrap(), pools);
    }

    #[test]
    fn infeasible_bounds() {
        let f = line_features(&[("a", 0.0)]);
        let pools = vec![Pool { medoid: "a".into(), members: vec!["a".into()] }];
        assert!(balance_pools(&pools, &f, 3, 2).is_err());
        assert!(balance_pools(&pools, &f, 2, 2).is_err());
    }

    #[test]
    fn cost_curves() {
        assert_eq!(curve_from_means(&[-6.0, -5.0, -4.0, -3.0]), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(curve_from_means(&[-3.0, -5.0, -4.0, -6.0]), vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        assert_eq!(curve_from_means(&[1.0]), vec![0.0]);
        let pools = vec![
            Pool { medoid: "a".into(), members: vec!["a".into()] },
            Pool { medoid: "b".into(), members: vec!["b".into(), "c".into()] },
        ];
        let tr: BTreeMap<_, _> = [
            ("a".to_string(), t(0.1, 0.001, 1.0)),
            ("b".to_string(), t(0.2, 0.002, 1.0)),
            ("c".to_string(), t(0.3, 0.008, 1.0)),
        ]
        .into();
        assert_eq!(cost_curve(&pools, &tr).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn catalog_json_round_trip_bit_exact() {
        let mut b = profile("m", ModelType::Reasoning, Some(1.7));
        b.tok_cost_est = 0.1 + 0.2;
        b.lat_est = 1.0 / 3.0;
        b.perf_score = 0.7390000000000001;
        let c = Catalog::new(vec![b.clone(), profile("n", ModelType::NonReasoning, None)]).unwrap();
        let back = Catalog::from_json(&c.to_json(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.backbones[0].tok_cost_est.to_bits(), b.tok_cost_est.to_bits());
    }

    #[test]
    fn catalog_rejects_duplicates_and_bad_fields() {
        let p = profile("m", ModelType::Reasoning, None);
        assert!(matches!(Catalog::new(vec![p.clone(), p.clone()]), Err(CatalogError::DuplicateId(_))));
        let mut bad = p;
        bad.perf_score = 1.5;
        assert!(Catalog::new(vec![bad]).is_err());
        let err = Catalog::from_json("{\"schema_version\":2,\"backbones\":[]}", "x").unwrap_err();
        assert!(matches!(err, CatalogError::Schema { found: 2, .. }));
    }

    #[test]
    fn single_backbone_gives_one_singleton_pool() {
        let mut p = profile("solo", ModelType::NonReasoning, Some(8.0));
        p.tok_cost_est = 0.001;
        let c = Catalog::new(vec![p]).unwrap();
        let set = build_pool_set(&c, PoolingOptions::default()).unwrap();
        assert_eq!(set.pools.len(), 1);
        assert_eq!(set.pools[0].members, vec!["solo"]);
        assert_eq!(set.cost_curve, vec![0.0]);
    }

    /// Pairwise domination check written out per coordinate.
    fn brute_pareto(items: &[(String, Triple)]) -> BTreeSet<String> {
        let mut keep = BTreeSet::new();
        for (i, (id, a)) in items.iter().enumerate() {
            let mut dominated = false;
            for (j, (_, b)) in items.iter().enumerate() {
                if i == j {
                    continue;
                }
                let no_worse = b.perf >= a.perf && b.tok_cost <= a.tok_cost && b.lat <= a.lat;
                let better = b.perf != a.perf || b.tok_cost != a.tok_cost || b.lat != a.lat;
                if no_worse && better {
                    dominated = true;
                }
            }
            if !dominated {
                keep.insert(id.clone());
            }
        }
        keep
    }

    proptest! {
        #[test]
        fn pareto_matches_brute_force(vals in proptest::collection::vec((0u8..5, 1u8..5, 1u8..5), 1..=8)) {
            let items: Vec<(String, Triple)> = vals
                .iter()
                .enumerate()
                .map(|(i, (p, c, l))| (format!("m{i}"), t(*p as f64 / 4.0, *c as f64, *l as f64)))
                .collect();
            let map: BTreeMap<_, _> = items.iter().cloned().collect();
            let got = pareto_filter(&map);
            prop_assert!(!got.is_empty());
            prop_assert_eq!(got, brute_pareto(&items));
        }

        #[test]
        fn balanced_sizes_within_bounds(xs in proptest::collection::vec(-5.0f64..5.0, 3..12), lo in 1usize..3, extra in 0usize..3) {
            let f: BTreeMap<String, [f64; 3]> =
                xs.iter().enumerate().map(|(i, x)| (format!("b{i:02}"), [*x, 0.0, 0.0])).collect();
            let k = 2.min(f.len());
            let cl = cluster_pools(&f, k, 1).unwrap();
            let out = balance_pools(&cl.pools, &f, lo, lo + extra).unwrap();
            for p in &out {
                prop_assert!(p.members.len() >= lo && p.members.len() <= lo + extra);
            }
        }

        #[test]
        fn curve_strictly_increasing(means in proptest::collection::vec(-10.0f64..0.0, 1..6)) {
            let c = curve_from_means(&means);
            prop_assert!(c.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(c[0], 0.0);
        }
    }
}
