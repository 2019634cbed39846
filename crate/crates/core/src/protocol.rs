//! Tiered benchmark evaluation: per-page scoring, manifest and prediction
//! ingestion, tier means and the overall score.
//!
//! Per page, text-like elements are matched with [`mgam`](crate::mgam) using
//! text similarity (predicted tables are also offered as plain text), display
//! formulas with formula similarity, and tables are paired by minimum
//! `1 - TEDS-S`. Headers, footers and ignored regions never count.
//!
//! Tier means are unweighted over the pages on which a category occurs, and
//!
//! ```text
//! overall = ((1 - text_edit) * 100 + formula * 100 + teds * 100) / 3
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contentsim::reading_order_edit;
use crate::extract::{extract_markdown_elements, ExtractError};
use crate::mgam::{hungarian, mgam_match_units, MatchResult, MgamParams, PredUnit, SimFn};
use crate::otsl::{otsl_to_html, parse_otsl};
use crate::tableteds::{parse_html_table, table_to_text, teds_trees, TableTree};
use crate::types::{Category, DocElement};

/// Page counts of the official split.
pub const OFFICIAL_BASE_PAGES: usize = 1355;
pub const OFFICIAL_HARD_PAGES: usize = 296;
pub const OFFICIAL_FULL_PAGES: usize = OFFICIAL_BASE_PAGES + OFFICIAL_HARD_PAGES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("{name} = {value} is outside [0, 1]")]
    RangeError { name: &'static str, value: f64 },
    #[error("line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("duplicate page id {0}")]
    DuplicatePage(String),
    #[error("page {page}: ground-truth table {element} does not parse: {message}")]
    CorruptGroundTruth { page: String, element: String, message: String },
    #[error("expected {expected} {tier} pages, found {found}")]
    TierCount { tier: TierLabel, expected: usize, found: usize },
    #[error("unknown tier {0:?}; expected base, hard or full")]
    UnknownTier(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TierLabel {
    Base,
    Hard,
    Full,
}

impl TierLabel {
    pub fn includes(self, page: PageTier) -> bool {
        match self {
            TierLabel::Full => true,
            TierLabel::Base => page == PageTier::Base,
            TierLabel::Hard => page == PageTier::Hard,
        }
    }
}

impl fmt::Display for TierLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TierLabel::Base => "base",
            TierLabel::Hard => "hard",
            TierLabel::Full => "full",
        })
    }
}

impl FromStr for TierLabel {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(TierLabel::Base),
            "hard" => Ok(TierLabel::Hard),
            "full" => Ok(TierLabel::Full),
            _ => Err(ProtocolError::UnknownTier(s.to_string())),
        }
    }
}

/// Split a page belongs to. Full is the union of both.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageTier {
    #[default]
    Base,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageManifestEntry {
    pub page_id: String,
    #[serde(default)]
    pub tier: PageTier,
    pub gt_elements: Vec<DocElement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<PageManifestEntry>,
}

fn lines_of(jsonl: &str) -> impl Iterator<Item = (usize, &str)> {
    jsonl
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

impl Manifest {
    /// Build and validate: page ids unique and every ground-truth table
    /// parseable.
    pub fn new(entries: Vec<PageManifestEntry>) -> Result<Self, ProtocolError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.page_id.as_str()) {
                return Err(ProtocolError::DuplicatePage(e.page_id.clone()));
            }
            for el in e.gt_elements.iter().filter(|el| el.category == Category::Table) {
                table_tree(&el.content).map_err(|message| ProtocolError::CorruptGroundTruth {
                    page: e.page_id.clone(),
                    element: el.id.clone(),
                    message,
                })?;
            }
        }
        Ok(Self { entries })
    }

    pub fn from_jsonl(jsonl: &str) -> Result<Self, ProtocolError> {
        let mut entries = Vec::new();
        for (line, text) in lines_of(jsonl) {
            let mut entry: PageManifestEntry = serde_json::from_str(text)
                .map_err(|e| ProtocolError::BadRecord { line, message: e.to_string() })?;
            for el in &mut entry.gt_elements {
                if el.page_id.is_empty() {
                    el.page_id = entry.page_id.clone();
                }
            }
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn page_count(&self, tier: TierLabel) -> usize {
        self.entries.iter().filter(|e| tier.includes(e.tier)).count()
    }

    /// Check the page counts of the official split.
    pub fn validate_official(&self) -> Result<(), ProtocolError> {
        for (tier, expected) in [
            (TierLabel::Base, OFFICIAL_BASE_PAGES),
            (TierLabel::Hard, OFFICIAL_HARD_PAGES),
            (TierLabel::Full, OFFICIAL_FULL_PAGES),
        ] {
            let found = self.page_count(tier);
            if found != expected {
                return Err(ProtocolError::TierCount { tier, expected, found });
            }
        }
        Ok(())
    }
}

/// A model's output for one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PagePrediction {
    Markdown { markdown: String },
    Elements { elements: Vec<DocElement> },
}

impl PagePrediction {
    /// Elements of the prediction. An unclosed table keeps the text before it
    /// and turns the remainder into one (unparseable) table element.
    pub fn elements(&self) -> (Vec<DocElement>, Vec<String>) {
        match self {
            PagePrediction::Elements { elements } => (elements.clone(), Vec::new()),
            PagePrediction::Markdown { markdown } => match extract_markdown_elements(markdown) {
                Ok(els) => (els, Vec::new()),
                Err(ExtractError::UnclosedTable(at)) => {
                    let mut els = extract_markdown_elements(&markdown[..at]).unwrap_or_default();
                    let idx = els.len() as u32;
                    els.push(DocElement::new(idx.to_string(), Category::Table, &markdown[at..], idx));
                    (els, vec![format!("prediction has an unclosed <table> at byte {at}")])
                }
                Err(e) => (Vec::new(), vec![format!("prediction could not be parsed: {e}")]),
            },
        }
    }
}

#[derive(Deserialize)]
struct PredictionRecord {
    page_id: String,
    #[serde(flatten)]
    body: PagePrediction,
}

pub type Predictions = BTreeMap<String, PagePrediction>;

/// Parse prediction JSONL, one `{page_id, markdown}` or
/// `{page_id, elements}` object per line. Later lines win on duplicates.
pub fn predictions_from_jsonl(jsonl: &str) -> Result<Predictions, ProtocolError> {
    let mut out = Predictions::new();
    for (line, text) in lines_of(jsonl) {
        let rec: PredictionRecord = serde_json::from_str(text)
            .map_err(|e| ProtocolError::BadRecord { line, message: e.to_string() })?;
        if out.insert(rec.page_id.clone(), rec.body).is_some() {
            tracing::warn!(page = %rec.page_id, "duplicate prediction, keeping the later one");
        }
    }
    Ok(out)
}

/// Parse table content given as HTML or as an OTSL stream.
pub fn table_tree(content: &str) -> Result<TableTree, String> {
    let t = content.trim_start();
    let is_otsl = ["<fcel>", "<ecel>", "<lcel>", "<ucel>", "<xcel>", "<nl>"]
        .iter()
        .any(|tok| t.starts_with(tok));
    if is_otsl {
        let table = parse_otsl(t).map_err(|e| e.to_string())?;
        parse_html_table(&otsl_to_html(&table)).map_err(|e| e.to_string())
    } else {
        parse_html_table(content).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCounts {
    pub gt_text: usize,
    pub gt_formula: usize,
    pub gt_table: usize,
    pub pred_text: usize,
    pub pred_formula: usize,
    pub pred_table: usize,
}

/// Scores for one page. A field is `None` when the ground truth has no
/// element of that kind; such pages are left out of the tier mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageScore {
    pub page_id: String,
    pub text_edit: Option<f64>,
    pub formula_score: Option<f64>,
    pub teds: Option<f64>,
    pub teds_s: Option<f64>,
    pub read_order_edit: Option<f64>,
    pub counts: ElementCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub mgam: MgamParams,
}

fn scorable(els: &[DocElement], pred: impl Fn(Category) -> bool) -> Vec<&DocElement> {
    let mut v: Vec<&DocElement> = els.iter().filter(|e| pred(e.category)).collect();
    v.sort_by_key(|e| e.order_index);
    v
}

/// Ground-truth id to the order key of the prediction it was matched with.
type OrderLinks = Vec<(usize, u32)>;

struct TextOutcome {
    result: MatchResult,
    /// Units offered to the matcher, each tagged with its source element.
    sources: Vec<usize>,
}

fn match_text(
    gt: &[&DocElement],
    text_preds: &[&DocElement],
    tables: &[(&DocElement, Option<TableTree>)],
    with_tables: bool,
    params: &MgamParams,
) -> TextOutcome {
    // Sources index into text_preds first, then tables.
    let mut items: Vec<(u32, PredUnit, usize)> = text_preds
        .iter()
        .enumerate()
        .map(|(i, e)| (e.order_index, PredUnit::new(e.content.as_str()), i))
        .collect();
    if with_tables {
        for (k, (el, tree)) in tables.iter().enumerate() {
            if let Some(tree) = tree {
                items.push((el.order_index, PredUnit::optional(table_to_text(tree)), text_preds.len() + k));
            }
        }
    }
    items.sort_by_key(|(order, _, src)| (*order, *src));
    let units: Vec<PredUnit> = items.iter().map(|(_, u, _)| u.clone()).collect();
    let sources = items.iter().map(|(_, _, s)| *s).collect();
    let gts: Vec<&str> = gt.iter().map(|e| e.content.as_str()).collect();
    TextOutcome { result: mgam_match_units(&units, &gts, SimFn::TextSim, params), sources }
}

/// Score one page. Never fails: malformed predictions degrade to zero scores
/// with diagnostics.
pub fn evaluate_page(gt: &[DocElement], pred: &[DocElement], opts: &EvalOptions) -> PageScore {
    let mut diagnostics = Vec::new();
    let gt_text = scorable(gt, Category::is_text_like);
    let gt_formula = scorable(gt, |c| c == Category::Formula);
    let gt_table = scorable(gt, |c| c == Category::Table);
    let pred_text = scorable(pred, Category::is_text_like);
    let pred_formula = scorable(pred, |c| c == Category::Formula);
    let pred_table = scorable(pred, |c| c == Category::Table);
    let counts = ElementCounts {
        gt_text: gt_text.len(),
        gt_formula: gt_formula.len(),
        gt_table: gt_table.len(),
        pred_text: pred_text.len(),
        pred_formula: pred_formula.len(),
        pred_table: pred_table.len(),
    };

    let parsed_tables: Vec<(&DocElement, Option<TableTree>)> = pred_table
        .iter()
        .map(|el| match table_tree(&el.content) {
            Ok(t) => (*el, Some(t)),
            Err(e) => {
                diagnostics.push(format!("predicted table {} is unparseable: {e}", el.id));
                (*el, None)
            }
        })
        .collect();

    let mut links: OrderLinks = Vec::new();
    let mut consumed = vec![false; parsed_tables.len()];
    let mut text_edit = None;
    if !gt_text.is_empty() {
        let plain = match_text(&gt_text, &pred_text, &parsed_tables, false, &opts.mgam);
        let outcome = if parsed_tables.iter().any(|(_, t)| t.is_some()) {
            let fallback = match_text(&gt_text, &pred_text, &parsed_tables, true, &opts.mgam);
            if fallback.result.chosen.aggregate > plain.result.chosen.aggregate {
                fallback
            } else {
                plain
            }
        } else {
            plain
        };
        let order_of = |src: usize| -> u32 {
            if src < pred_text.len() {
                pred_text[src].order_index
            } else {
                parsed_tables[src - pred_text.len()].0.order_index
            }
        };
        for pair in &outcome.result.chosen.pairs {
            let srcs: Vec<usize> = pair.block.origins.iter().map(|&o| outcome.sources[o]).collect();
            for &s in &srcs {
                if s >= pred_text.len() {
                    consumed[s - pred_text.len()] = true;
                }
            }
            let key = srcs.iter().map(|&s| order_of(s)).min().expect("block covers a unit");
            links.push((gt_index(gt, gt_text[pair.gt_index]), key));
        }
        if outcome.result.approximate {
            diagnostics.push("text matching used beam search".to_string());
        }
        text_edit = Some(1.0 - outcome.result.chosen.aggregate);
    }

    let mut formula_score = None;
    if !gt_formula.is_empty() {
        let units: Vec<PredUnit> = pred_formula.iter().map(|e| PredUnit::new(e.content.as_str())).collect();
        let gts: Vec<&str> = gt_formula.iter().map(|e| e.content.as_str()).collect();
        let r = mgam_match_units(&units, &gts, SimFn::FormulaSim, &opts.mgam);
        for pair in &r.chosen.pairs {
            let key = pair.block.origins.iter().map(|&o| pred_formula[o].order_index).min().unwrap();
            links.push((gt_index(gt, gt_formula[pair.gt_index]), key));
        }
        if r.approximate {
            diagnostics.push("formula matching used beam search".to_string());
        }
        formula_score = Some(r.chosen.aggregate);
    }

    let (mut teds, mut teds_s) = (None, None);
    if !gt_table.is_empty() {
        let gt_trees: Vec<Option<TableTree>> = gt_table
            .iter()
            .map(|el| match table_tree(&el.content) {
                Ok(t) => Some(t),
                Err(e) => {
                    diagnostics.push(format!("ground-truth table {} is unparseable: {e}", el.id));
                    None
                }
            })
            .collect();
        let avail: Vec<usize> = (0..parsed_tables.len()).filter(|&k| !consumed[k]).collect();
        let cost: Vec<Vec<f64>> = gt_trees
            .iter()
            .map(|g| {
                avail
                    .iter()
                    .map(|&k| match (g, &parsed_tables[k].1) {
                        (Some(g), Some(p)) => 1.0 - teds_trees(g, p, true),
                        _ => 1.0,
                    })
                    .collect()
            })
            .collect();
        let mut sum = (0.0, 0.0);
        for (gi, pk) in hungarian(&cost).expect("costs are finite") {
            let k = avail[pk];
            if let (Some(g), Some(p)) = (&gt_trees[gi], &parsed_tables[k].1) {
                sum.0 += teds_trees(g, p, false);
                sum.1 += teds_trees(g, p, true);
                links.push((gt_index(gt, gt_table[gi]), parsed_tables[k].0.order_index));
            }
        }
        let n = gt_table.len() as f64;
        teds = Some(sum.0 / n);
        teds_s = Some(sum.1 / n);
    }

    let mut scored: Vec<&DocElement> = gt_text.iter().chain(&gt_formula).chain(&gt_table).copied().collect();
    scored.sort_by_key(|e| e.order_index);
    let read_order_edit = (!scored.is_empty()).then(|| {
        let gt_order: Vec<&str> = scored.iter().map(|e| e.id.as_str()).collect();
        links.sort_by_key(|&(g, key)| (key, gt[g].order_index));
        let pred_order: Vec<&str> = links.iter().map(|&(g, _)| gt[g].id.as_str()).collect();
        reading_order_edit(&gt_order, &pred_order)
    });

    PageScore {
        page_id: gt.first().map(|e| e.page_id.clone()).unwrap_or_default(),
        text_edit,
        formula_score,
        teds,
        teds_s,
        read_order_edit,
        counts,
        diagnostics,
    }
}

fn gt_index(gt: &[DocElement], el: &DocElement) -> usize {
    gt.iter().position(|g| std::ptr::eq(g, el)).expect("element belongs to the page")
}

/// Overall benchmark score on a 0 to 100 scale.
pub fn overall_score(text_edit: f64, formula: f64, teds: f64) -> Result<f64, ProtocolError> {
    for (name, value) in [("text_edit", text_edit), ("formula", formula), ("teds", teds)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(ProtocolError::RangeError { name, value });
        }
    }
    Ok(((1.0 - text_edit) * 100.0 + formula * 100.0 + teds * 100.0) / 3.0)
}

/// Tier-level aggregate for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model_name: String,
    pub tier: TierLabel,
    pub page_count: usize,
    pub text_edit: Option<f64>,
    pub formula: Option<f64>,
    pub teds: Option<f64>,
    pub teds_s: Option<f64>,
    pub read_order: Option<f64>,
    /// Present when text, formula and table means all exist.
    pub overall: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pages: Vec<PageScore>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl BenchmarkReport {
    /// Aggregate page scores (in manifest order).
    pub fn from_pages(model_name: &str, tier: TierLabel, pages: Vec<PageScore>) -> Self {
        let text_edit = mean(pages.iter().map(|p| p.text_edit));
        let formula = mean(pages.iter().map(|p| p.formula_score));
        let teds = mean(pages.iter().map(|p| p.teds));
        let overall = match (text_edit, formula, teds) {
            (Some(t), Some(f), Some(b)) => overall_score(t, f, b).ok(),
            _ => None,
        };
        Self {
            model_name: model_name.to_string(),
            tier,
            page_count: pages.len(),
            text_edit,
            formula,
            teds,
            teds_s: mean(pages.iter().map(|p| p.teds_s)),
            read_order: mean(pages.iter().map(|p| p.read_order_edit)),
            overall,
            warnings: Vec::new(),
            pages,
        }
    }

    /// One-row markdown table in the usual column order.
    pub fn to_markdown(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", v * 100.0));
        let frac = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
        format!(
            "| Model | Overall | Text Edit | Formula | Table TEDS | Table TEDS-S | Read Order Edit |\n\
             |---|---|---|---|---|---|---|\n\
             | {} | {} | {} | {} | {} | {} | {} |\n",
            self.model_name,
            self.overall.map_or("-".to_string(), |v| format!("{v:.2}")),
            frac(self.text_edit),
            pct(self.formula),
            pct(self.teds),
            pct(self.teds_s),
            frac(self.read_order),
        )
    }
}

/// Evaluate every manifest page in `tier` on `jobs` worker threads. Missing
/// predictions count as empty pages; predictions for unknown pages are
/// reported as warnings. The result does not depend on `jobs`.
pub fn evaluate_manifest(
    manifest: &Manifest,
    predictions: &Predictions,
    tier: TierLabel,
    model_name: &str,
    opts: &EvalOptions,
    jobs: usize,
) -> Result<BenchmarkReport, ProtocolError> {
    let known: HashSet<&str> = manifest.entries.iter().map(|e| e.page_id.as_str()).collect();
    let mut warnings = Vec::new();
    for id in predictions.keys().filter(|id| !known.contains(id.as_str())) {
        tracing::warn!(page = %id, "prediction for unknown page ignored");
        warnings.push(format!("prediction for unknown page {id} ignored"));
    }
    let entries: Vec<&PageManifestEntry> = manifest.entries.iter().filter(|e| tier.includes(e.tier)).collect();
    let run = |e: &&PageManifestEntry| {
        let (pred, diag) = predictions.get(&e.page_id).map(PagePrediction::elements).unwrap_or_default();
        let mut score = evaluate_page(&e.gt_elements, &pred, opts);
        score.page_id = e.page_id.clone();
        score.diagnostics.splice(0..0, diag);
        score
    };
    let pages: Vec<PageScore> = if jobs <= 1 {
        entries.iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ProtocolError::Pool(e.to_string()))?
            .install(|| entries.par_iter().map(run).collect())
    };
    let mut report = BenchmarkReport::from_pages(model_name, tier, pages);
    report.warnings = warnings;
    Ok(report)
}
