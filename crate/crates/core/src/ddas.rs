//! Difficulty-aware sampling over embedding clusters.
//!
//! Items (pages or elements) carry a precomputed embedding, an optional
//! difficulty tier and an invalid flag. Sampling runs in three steps:
//!
//! 1. [`kmeans`] clusters the embeddings (k-means++ seeding, Lloyd updates).
//! 2. [`cluster_weights`] scores each cluster as
//!    `|c|^alpha * (beta_E f_E + beta_M f_M + beta_H f_H)`, zeroing clusters
//!    whose invalid fraction exceeds `gamma`, and normalizes.
//! 3. [`sample_plan`] turns weights into integer quotas (largest remainder,
//!    spilling quota that a small cluster cannot absorb) and draws items
//!    within each cluster without replacement, weighted by tier.
//!
//! The sublinear size exponent downsamples large clusters; Medium and Hard
//! items are upweighted. Every step is deterministic given its seed. Running
//! the same steps on a page pool and then on an element pool gives the
//! two-level variant.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::DifficultyTier;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdasError {
    #[error("k must be positive")]
    ZeroK,
    #[error("k = {k} exceeds the {n} items available")]
    KTooLarge { k: usize, n: usize },
    #[error("item {item} has dimension {found}, expected {expected}")]
    DimensionMismatch { item: String, expected: usize, found: usize },
    #[error("item {0} has a non-finite vector entry")]
    NonFinite(String),
    #[error("item {0} has neither a tier nor the invalid flag")]
    MissingTier(String),
    #[error("every cluster was filtered out")]
    AllClustersFiltered,
    #[error("cluster model covers {model} items but {given} were supplied")]
    ItemCountMismatch { model: usize, given: usize },
    #[error("invalid parameter: {0}")]
    BadParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub item_id: String,
    pub vector: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<DifficultyTier>,
    #[serde(default)]
    pub invalid: bool,
}

impl EmbeddedItem {
    pub fn new(item_id: impl Into<String>, vector: Vec<f64>, tier: Option<DifficultyTier>) -> Self {
        Self { item_id: item_id.into(), vector, tier, invalid: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self { k: 8, seed: 0, max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster of each item, in input order.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments.iter().enumerate().filter(move |(_, &c)| c == cluster).map(|(i, _)| i)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &c in &self.assignments {
            s[c] += 1;
        }
        s
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn validate_items(items: &[EmbeddedItem]) -> Result<usize, DdasError> {
    let dim = items.first().map_or(0, |i| i.vector.len());
    for it in items {
        if it.vector.len() != dim {
            return Err(DdasError::DimensionMismatch {
                item: it.item_id.clone(),
                expected: dim,
                found: it.vector.len(),
            });
        }
        if it.vector.iter().any(|v| !v.is_finite()) {
            return Err(DdasError::NonFinite(it.item_id.clone()));
        }
    }
    Ok(dim)
}

/// k-means++ initialization followed by Lloyd iterations until the largest
/// centroid shift drops below `tol` or `max_iter` is reached. A cluster that
/// empties is re-seeded at the point farthest from its centroid. Distance ties
/// go to the lower cluster index.
pub fn kmeans(items: &[EmbeddedItem], params: &KMeansParams) -> Result<ClusterModel, DdasError> {
    let KMeansParams { k, seed, max_iter, tol } = *params;
    if k == 0 {
        return Err(DdasError::ZeroK);
    }
    if k > items.len() {
        return Err(DdasError::KTooLarge { k, n: items.len() });
    }
    validate_items(items)?;
    let points: Vec<&[f64]> = items.iter().map(|i| i.vector.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > r {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            0
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(&points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }

    let mut assignments = vec![0usize; points.len()];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let assigned: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let inertia: f64 = assigned.iter().map(|a| a.1).sum();
        if let Some(&prev) = history.last() {
            debug_assert!(inertia <= prev + 1e-9 * prev.max(1.0), "inertia rose from {prev} to {inertia}");
        }
        history.push(inertia);
        for (slot, a) in assignments.iter_mut().zip(&assigned) {
            *slot = a.0;
        }

        let dim = centroids[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(b.cmp(&a)))
                    .expect("k <= n leaves a free point");
                taken[far] = true;
                points[far].to_vec()
            };
            shift = shift.max(dist2(&centroids[c], &next).sqrt());
            centroids[c] = next;
        }
        if shift < tol {
            break;
        }
    }
    let inertia = points.iter().zip(&assignments).map(|(p, &c)| dist2(p, &centroids[c])).sum();
    Ok(ClusterModel { k, seed, centroids, assignments, inertia, inertia_history: history, iterations })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightParams {
    pub alpha: f64,
    pub beta_easy: f64,
    pub beta_medium: f64,
    pub beta_hard: f64,
    pub gamma: f64,
    /// Multiplies raw weight by `1 + bonus * H(f) / ln 3`; 0 disables it.
    pub diversity_bonus: f64,
}

impl Default for WeightParams {
    fn default() -> Self {
        Self { alpha: 0.5, beta_easy: 0.5, beta_medium: 2.0, beta_hard: 1.5, gamma: 0.5, diversity_bonus: 0.0 }
    }
}

impl WeightParams {
    pub fn validate(&self) -> Result<(), DdasError> {
        let bad = |m: &str| Err(DdasError::BadParam(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be a non-negative number");
        }
        if [self.beta_easy, self.beta_medium, self.beta_hard].iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return bad("tier betas must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.diversity_bonus >= 0.0 && self.diversity_bonus.is_finite()) {
            return bad("diversity_bonus must be non-negative");
        }
        Ok(())
    }

    pub fn beta(&self, tier: DifficultyTier) -> f64 {
        match tier {
            DifficultyTier::Easy => self.beta_easy,
            DifficultyTier::Medium => self.beta_medium,
            DifficultyTier::Hard => self.beta_hard,
        }
    }
}

fn check_model(model: &ClusterModel, items: &[EmbeddedItem]) -> Result<(), DdasError> {
    if model.assignments.len() != items.len() {
        return Err(DdasError::ItemCountMismatch { model: model.assignments.len(), given: items.len() });
    }
    Ok(())
}

/// Normalized sampling weight of every cluster.
pub fn cluster_weights(
    model: &ClusterModel,
    items: &[EmbeddedItem],
    params: &WeightParams,
) -> Result<Vec<f64>, DdasError> {
    params.validate()?;
    check_model(model, items)?;
    if let Some(it) = items.iter().find(|i| i.tier.is_none() && !i.invalid) {
        return Err(DdasError::MissingTier(it.item_id.clone()));
    }
    let mut raw = vec![0.0; model.k];
    for (c, w) in raw.iter_mut().enumerate() {
        let members: Vec<&EmbeddedItem> = model.members(c).map(|i| &items[i]).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let invalid = members.iter().filter(|m| m.invalid).count() as f64 / n;
        if invalid > params.gamma {
            continue;
        }
        let frac = |t| members.iter().filter(|m| !m.invalid && m.tier == Some(t)).count() as f64 / n;
        let f = [frac(DifficultyTier::Easy), frac(DifficultyTier::Medium), frac(DifficultyTier::Hard)];
        let mix = params.beta_easy * f[0] + params.beta_medium * f[1] + params.beta_hard * f[2];
        let mut value = n.powf(params.alpha) * mix;
        if params.diversity_bonus > 0.0 {
            let valid: f64 = f.iter().sum();
            if valid > 0.0 {
                let h: f64 = f.iter().filter(|&&p| p > 0.0).map(|&p| -(p / valid) * (p / valid).ln()).sum();
                value *= 1.0 + params.diversity_bonus * h / 3f64.ln();
            }
        }
        *w = value;
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(DdasError::AllClustersFiltered);
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Integer quotas proportional to `weights`, summing to `target`, never
/// exceeding `capacity`. Largest remainders take the leftover units (ties to
/// the lower index); quota a cluster cannot absorb is redistributed.
pub fn allocate_quotas(weights: &[f64], capacity: &[usize], target: usize) -> Vec<usize> {
    let mut quotas = vec![0usize; weights.len()];
    let mut active: Vec<usize> = (0..weights.len()).filter(|&c| weights[c] > 0.0 && capacity[c] > 0).collect();
    let mut remaining = target.min(active.iter().map(|&c| capacity[c]).sum());
    while remaining > 0 && !active.is_empty() {
        let total: f64 = active.iter().map(|&c| weights[c]).sum();
        let ideal: Vec<f64> = active.iter().map(|&c| remaining as f64 * weights[c] / total).collect();
        let mut share: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
        let left = remaining - share.iter().sum::<usize>().min(remaining);
        let mut order: Vec<usize> = (0..active.len()).collect();
        order.sort_by(|&a, &b| (ideal[b] - ideal[b].floor()).total_cmp(&(ideal[a] - ideal[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().cycle().take(left) {
            share[i] += 1;
        }
        let over: Vec<usize> = (0..active.len()).filter(|&i| share[i] > capacity[active[i]] - quotas[active[i]]).collect();
        if over.is_empty() {
            for (i, &c) in active.iter().enumerate() {
                quotas[c] += share[i];
            }
            remaining = 0;
        } else {
            for &i in &over {
                let c = active[i];
                let room = capacity[c] - quotas[c];
                quotas[c] += room;
                remaining -= room;
            }
            let full: Vec<usize> = over.iter().map(|&i| active[i]).collect();
            active.retain(|c| !full.contains(c));
        }
    }
    quotas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub budget: usize,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub quotas: Vec<usize>,
    /// Selected item ids, grouped by cluster in draw order.
    pub included: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// One output row per item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRow {
    pub item_id: String,
    pub cluster: usize,
    pub included: bool,
}

impl SamplingPlan {
    pub fn rows(&self, model: &ClusterModel, items: &[EmbeddedItem]) -> Vec<PlanRow> {
        let chosen: std::collections::HashSet<&str> = self.included.iter().map(String::as_str).collect();
        items
            .iter()
            .zip(&model.assignments)
            .map(|(it, &c)| PlanRow { item_id: it.item_id.clone(), cluster: c, included: chosen.contains(it.item_id.as_str()) })
            .collect()
    }
}

/// Draw `min(budget, eligible pool)` items. Invalid items and items in
/// zero-weight clusters are never drawn.
pub fn sample_plan(
    model: &ClusterModel,
    items: &[EmbeddedItem],
    weights: &[f64],
    budget: usize,
    seed: u64,
    params: &WeightParams,
) -> Result<SamplingPlan, DdasError> {
    params.validate()?;
    check_model(model, items)?;
    if budget == 0 {
        return Err(DdasError::BadParam("budget must be at least 1".into()));
    }
    if weights.len() != model.k {
        return Err(DdasError::BadParam(format!("{} weights for {} clusters", weights.len(), model.k)));
    }
    let pools: Vec<Vec<usize>> = (0..model.k)
        .map(|c| if weights[c] > 0.0 { model.members(c).filter(|&i| !items[i].invalid).collect() } else { Vec::new() })
        .collect();
    let capacity: Vec<usize> = pools.iter().map(Vec::len).collect();
    let pool_size: usize = capacity.iter().sum();
    let mut warnings = Vec::new();
    if budget > pool_size {
        let msg = format!("budget {budget} exceeds the eligible pool of {pool_size}; taking the whole pool");
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    let quotas = allocate_quotas(weights, &capacity, budget);

    let mut included = Vec::new();
    for (c, pool) in pools.iter().enumerate() {
        if quotas[c] == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        // Weighted sampling without replacement: keep the largest ln(u) / w.
        let mut keyed: Vec<(f64, usize)> = pool
            .iter()
            .map(|&i| {
                let w = items[i].tier.map_or(params.beta_easy, |t| params.beta(t));
                let u = 1.0 - rng.random::<f64>();
                (u.ln() / w, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        included.extend(keyed.iter().take(quotas[c]).map(|&(_, i)| items[i].item_id.clone()));
    }
    Ok(SamplingPlan { budget, seed, weights: weights.to_vec(), quotas, included, warnings })
}
