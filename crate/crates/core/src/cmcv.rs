//! Cross-model consistency verification.
//!
//! Several heterogeneous models parse the same sample. Their pairwise
//! agreement, anchored on a target model, decides a difficulty tier:
//!
//! * **Easy**: the target agrees with at least one external model (`>= tau`).
//! * **Medium**: the target disagrees with every external model, but some pair
//!   of external models agrees. Their consensus is a usable pseudo-label.
//! * **Hard**: no such agreement.
//!
//! With more than three models the same rules apply over all external models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contentsim::{formula_similarity, text_similarity};
use crate::protocol::table_tree;
use crate::tableteds::teds_trees;
use crate::types::DifficultyTier;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmcvError {
    #[error("consistency needs at least 3 models, got {0}")]
    DegenerateMatrix(usize),
    #[error("pairwise matrix is not square")]
    NotSquare,
    #[error("target index {index} out of range for {len} models")]
    BadTarget { index: usize, len: usize },
    #[error("threshold {0} must lie in (0, 1]")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Text,
    Formula,
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub model: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOutputSet {
    pub sample_id: String,
    pub task: Task,
    pub outputs: Vec<ModelOutput>,
    #[serde(default)]
    pub target_index: usize,
}

/// Agreement threshold per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub text: f64,
    pub formula: f64,
    pub table: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { text: 0.95, formula: 0.90, table: 0.90 }
    }
}

impl Thresholds {
    pub fn for_task(&self, task: Task) -> f64 {
        match task {
            Task::Text => self.text,
            Task::Formula => self.formula,
            Task::Table => self.table,
        }
    }

    pub fn validate(&self) -> Result<(), CmcvError> {
        for t in [self.text, self.formula, self.table] {
            check_tau(t)?;
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<(), CmcvError> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(CmcvError::BadThreshold(tau))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRecord {
    pub sample_id: String,
    pub tier: DifficultyTier,
    pub pairwise: Vec<Vec<f64>>,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// Symmetric similarity matrix with unit diagonal. For tables, a model whose
/// output does not parse gets 0 against every other model.
pub fn pairwise_consistency(set: &ModelOutputSet) -> Vec<Vec<f64>> {
    let k = set.outputs.len();
    let trees: Vec<_> = match set.task {
        Task::Table => set.outputs.iter().map(|o| table_tree(&o.content).ok()).collect(),
        _ => Vec::new(),
    };
    let mut m = vec![vec![1.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&set.outputs[i].content, &set.outputs[j].content);
            let s = match set.task {
                Task::Text => text_similarity(a, b),
                Task::Formula => formula_similarity(a, b),
                Task::Table => match (&trees[i], &trees[j]) {
                    (Some(x), Some(y)) => teds_trees(x, y, false),
                    _ => 0.0,
                },
            };
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    m
}

/// Tier of the sample from its pairwise matrix.
pub fn classify_difficulty(
    pairwise: &[Vec<f64>],
    target_index: usize,
    tau: f64,
) -> Result<DifficultyTier, CmcvError> {
    let k = pairwise.len();
    if k < 3 {
        return Err(CmcvError::DegenerateMatrix(k));
    }
    if pairwise.iter().any(|r| r.len() != k) {
        return Err(CmcvError::NotSquare);
    }
    if target_index >= k {
        return Err(CmcvError::BadTarget { index: target_index, len: k });
    }
    check_tau(tau)?;
    let externals: Vec<usize> = (0..k).filter(|&e| e != target_index).collect();
    if externals.iter().any(|&e| pairwise[target_index][e] >= tau) {
        return Ok(DifficultyTier::Easy);
    }
    let consensus = externals
        .iter()
        .enumerate()
        .any(|(n, &a)| externals[n + 1..].iter().any(|&b| pairwise[a][b] >= tau));
    Ok(if consensus { DifficultyTier::Medium } else { DifficultyTier::Hard })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierCounts {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

impl TierCounts {
    pub fn add(&mut self, tier: DifficultyTier) {
        match tier {
            DifficultyTier::Easy => self.easy += 1,
            DifficultyTier::Medium => self.medium += 1,
            DifficultyTier::Hard => self.hard += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.easy + self.medium + self.hard
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub records: Vec<ConsistencyRecord>,
    pub counts: TierCounts,
}

/// Classify every sample. Samples that cannot be assessed (fewer than three
/// models, bad target index) are Hard with a diagnostic. Records come back
/// sorted by sample id.
pub fn stratify_manifest(samples: &[ModelOutputSet], thresholds: &Thresholds) -> Stratification {
    let mut records: Vec<ConsistencyRecord> = samples
        .par_iter()
        .map(|s| {
            let pairwise = pairwise_consistency(s);
            let tau = thresholds.for_task(s.task);
            let (tier, diagnostic) = match classify_difficulty(&pairwise, s.target_index, tau) {
                Ok(t) => (t, None),
                Err(e) => (DifficultyTier::Hard, Some(e.to_string())),
            };
            ConsistencyRecord { sample_id: s.sample_id.clone(), tier, pairwise, threshold: tau, diagnostic }
        })
        .collect();
    records.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let mut counts = TierCounts::default();
    for r in &records {
        counts.add(r.tier);
    }
    tracing::info!(easy = counts.easy, medium = counts.medium, hard = counts.hard, "stratified samples");
    Stratification { records, counts }
}
