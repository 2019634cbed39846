//! Document assembly: rejoining paragraphs split by layout detection and
//! stitching tables continued across a page break.
//!
//! The merge judgments themselves come from outside (a model or an
//! annotator). This module proposes candidates with cheap rules and applies
//! supplied decisions deterministically.

use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contentsim::text_similarity;
use crate::protocol::table_tree;
use crate::tableteds::{TableCell, TableTree};
use crate::types::{Category, DocElement};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("merge label ({0}, {1}) does not name adjacent elements")]
    NonAdjacentLabel(String, String),
    #[error("column mismatch: upper has {upper} columns, lower {lower}, {decisions} decisions")]
    ColumnMismatch { upper: usize, lower: usize, decisions: usize },
    #[error("boundary row of a table has spanned cells; per-column decisions need a plain row")]
    SpannedBoundary,
    #[error("table {id}: {message}")]
    BadTable { id: String, message: String },
    #[error("unknown table {0}")]
    UnknownTable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeLabel {
    pub boundary: (String, String),
    #[serde(alias = "decision")]
    pub merge: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnDecisionList {
    /// 0 concatenates the column into the upper row, 1 keeps it as its own row.
    pub decisions: Vec<u8>,
}

impl ColumnDecisionList {
    pub fn new(decisions: Vec<u8>) -> Self {
        Self { decisions }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDecision {
    pub upper_id: String,
    pub lower_id: String,
    pub decisions: ColumnDecisionList,
}

/// One line of a decisions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decision {
    Paragraph(MergeLabel),
    Table(TableDecision),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblyParams {
    /// Header similarity at or above which a lower table counts as repeating
    /// the upper header.
    pub header_similarity: f64,
    pub min_paragraph_chars: usize,
}

impl Default for AssemblyParams {
    fn default() -> Self {
        Self { header_similarity: 0.9, min_paragraph_chars: 20 }
    }
}

const TERMINAL: &[char] = &['.', '!', '?', '。', '！', '？', '；'];

static NUMBERING: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"^(?:(?:\d+|[ivxlcdmIVXLCDM]+|[A-Za-z]|[一二三四五六七八九十]+)[.)、．]|\(\d+\)|（\d+）|[•◦▪▫●○■□‣⁃·*\-\x{2013}\x{2014}])",
    )
    .expect("numbering pattern")
});

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x2E80..=0x2FDF | 0x3000..=0x30FF | 0x3100..=0x312F | 0x31A0..=0x31FF
        | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

/// How two fragments are joined at a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Joint {
    /// Drop the trailing hyphen of the left side and join directly.
    DropHyphen,
    Space,
    Direct,
}

pub fn joint(left: &str, right: &str, hyphenate: bool) -> Joint {
    let (Some(l), Some(r)) = (left.chars().next_back(), right.chars().next()) else {
        return Joint::Direct;
    };
    if hyphenate && l == '-' {
        let before = left.chars().rev().nth(1);
        if before.is_some_and(char::is_alphabetic) && r.is_alphabetic() {
            return Joint::DropHyphen;
        }
    }
    if l.is_whitespace() || r.is_whitespace() || is_cjk(l) || is_cjk(r) {
        Joint::Direct
    } else {
        Joint::Space
    }
}

fn join(left: &str, right: &str, hyphenate: bool) -> String {
    match joint(left, right, hyphenate) {
        Joint::DropHyphen => format!("{}{}", &left[..left.len() - 1], right),
        Joint::Space => format!("{left} {right}"),
        Joint::Direct => format!("{left}{right}"),
    }
}

/// Whether the boundary between `a` and `b` is worth sending for a merge
/// judgment. Any rule hit rejects the pair.
pub fn paragraph_merge_filter(a: &DocElement, b: &DocElement) -> bool {
    paragraph_merge_filter_with(a, b, &AssemblyParams::default())
}

pub fn paragraph_merge_filter_with(a: &DocElement, b: &DocElement, params: &AssemblyParams) -> bool {
    let flowing = |e: &DocElement| matches!(e.category, Category::Text | Category::ListItem);
    if !flowing(a) || !flowing(b) {
        return false;
    }
    let left = a.content.trim_end();
    if left.ends_with(TERMINAL) {
        return false;
    }
    if NUMBERING.is_match(b.content.trim_start()) {
        return false;
    }
    left.chars().count() >= params.min_paragraph_chars
}

/// Adjacent pairs of `elements` that pass the rule filter.
pub fn paragraph_merge_candidates(elements: &[DocElement], params: &AssemblyParams) -> Vec<(String, String)> {
    elements
        .windows(2)
        .filter(|w| paragraph_merge_filter_with(&w[0], &w[1], params))
        .map(|w| (w[0].id.clone(), w[1].id.clone()))
        .collect()
}

/// Merge elements joined by positive labels. `elements` is in reading order;
/// each label must name a consecutive pair. Chains collapse into the first
/// element of the chain, which keeps its id and order index.
pub fn apply_paragraph_merges(elements: &[DocElement], labels: &[MergeLabel]) -> Result<Vec<DocElement>, AssemblyError> {
    let position: HashMap<&str, usize> = elements.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let mut joins = vec![false; elements.len()];
    for label in labels {
        let (a, b) = &label.boundary;
        let pa = position.get(a.as_str());
        let pb = position.get(b.as_str());
        match (pa, pb) {
            (Some(&i), Some(&j)) if j == i + 1 => joins[j] |= label.merge,
            _ => return Err(AssemblyError::NonAdjacentLabel(a.clone(), b.clone())),
        }
    }
    let mut out: Vec<DocElement> = Vec::with_capacity(elements.len());
    for (i, e) in elements.iter().enumerate() {
        match out.last_mut() {
            Some(prev) if joins[i] => prev.content = join(&prev.content, &e.content, true),
            _ => out.push(e.clone()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCandidate {
    pub upper_page: usize,
    pub upper_id: String,
    pub lower_page: usize,
    pub lower_id: String,
}

fn first_row_text(t: &TableTree) -> Vec<&str> {
    t.rows.first().map(|r| r.iter().map(|c| c.content.as_str()).collect()).unwrap_or_default()
}

fn header_similarity(upper: &TableTree, lower: &TableTree) -> f64 {
    let (a, b) = (first_row_text(upper), first_row_text(lower));
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    let total: f64 = a.iter().zip(&b).map(|(x, y)| text_similarity(x, y)).sum();
    total / n as f64
}

/// Pairs (last table of page i, first table of page i+1) with equal column
/// counts whose lower table does not open with a repeat of the upper header.
pub fn table_merge_candidates(pages: &[Vec<DocElement>], params: &AssemblyParams) -> Vec<TableCandidate> {
    let parse = |e: &DocElement| match table_tree(&e.content) {
        Ok(t) => Some(t),
        Err(msg) => {
            tracing::warn!(table = %e.id, "skipping unparseable table: {msg}");
            None
        }
    };
    let mut out = Vec::new();
    for (i, pair) in pages.windows(2).enumerate() {
        let upper = pair[0].iter().rev().find(|e| e.category == Category::Table);
        let lower = pair[1].iter().find(|e| e.category == Category::Table);
        let (Some(ue), Some(le)) = (upper, lower) else { continue };
        let (Some(ut), Some(lt)) = (parse(ue), parse(le)) else { continue };
        if ut.grid_width() != lt.grid_width() || header_similarity(&ut, &lt) >= params.header_similarity {
            continue;
        }
        out.push(TableCandidate { upper_page: i, upper_id: ue.id.clone(), lower_page: i + 1, lower_id: le.id.clone() });
    }
    out
}

/// Stitch `lower` under `upper` following one decision per column.
///
/// 0-columns of the lower table's first row are appended to the same column
/// of the upper table's last row. If any column is 1, those cells form a new
/// row (empty in 0-columns). The remaining lower rows follow unchanged.
pub fn apply_column_decisions(upper: &TableTree, lower: &TableTree, d: &ColumnDecisionList) -> Result<TableTree, AssemblyError> {
    let width = upper.grid_width();
    if lower.grid_width() != width || d.decisions.len() != width {
        return Err(AssemblyError::ColumnMismatch { upper: width, lower: lower.grid_width(), decisions: d.decisions.len() });
    }
    let mut rows = upper.rows.clone();
    if d.decisions.iter().all(|&x| x != 0) || lower.rows.is_empty() {
        rows.extend(lower.rows.iter().cloned());
        return Ok(TableTree::from_rows(rows));
    }
    let plain = |r: Option<&Vec<TableCell>>| r.is_some_and(|r| r.len() == width && r.iter().all(|c| c.colspan == 1 && c.rowspan == 1));
    if !plain(rows.last()) || !plain(lower.rows.first()) {
        return Err(AssemblyError::SpannedBoundary);
    }
    let first = &lower.rows[0];
    let last = rows.last_mut().expect("checked above");
    let mut carried = Vec::with_capacity(width);
    for (j, &dj) in d.decisions.iter().enumerate() {
        if dj == 0 {
            last[j].content = join(&last[j].content, &first[j].content, false);
            carried.push(TableCell::new(""));
        } else {
            carried.push(first[j].clone());
        }
    }
    if d.decisions.iter().any(|&x| x != 0) {
        rows.push(carried);
    }
    rows.extend(lower.rows[1..].iter().cloned());
    Ok(TableTree::from_rows(rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblyPage {
    pub page_id: String,
    pub elements: Vec<DocElement>,
}

/// Apply every decision to a document given as ordered pages. Paragraph
/// labels act within a page; table decisions fold the lower table into the
/// upper one (following earlier folds) and drop the lower element.
pub fn assemble_document(pages: &[AssemblyPage], decisions: &[Decision]) -> Result<Vec<AssemblyPage>, AssemblyError> {
    let mut labels_by_page: BTreeMap<usize, Vec<MergeLabel>> = BTreeMap::new();
    let page_of: HashMap<&str, usize> = pages
        .iter()
        .enumerate()
        .flat_map(|(p, page)| page.elements.iter().map(move |e| (e.id.as_str(), p)))
        .collect();
    let mut tables = Vec::new();
    for d in decisions {
        match d {
            Decision::Paragraph(l) => {
                let (a, b) = &l.boundary;
                match (page_of.get(a.as_str()), page_of.get(b.as_str())) {
                    (Some(pa), Some(pb)) if pa == pb => labels_by_page.entry(*pa).or_default().push(l.clone()),
                    _ => return Err(AssemblyError::NonAdjacentLabel(a.clone(), b.clone())),
                }
            }
            Decision::Table(t) => tables.push(t),
        }
    }
    let mut out = Vec::with_capacity(pages.len());
    for (p, page) in pages.iter().enumerate() {
        let labels = labels_by_page.remove(&p).unwrap_or_default();
        out.push(AssemblyPage { page_id: page.page_id.clone(), elements: apply_paragraph_merges(&page.elements, &labels)? });
    }

    let locate = |out: &[AssemblyPage], id: &str| {
        out.iter().enumerate().find_map(|(p, page)| page.elements.iter().position(|e| e.id == id).map(|i| (p, i)))
    };
    tables.sort_by_key(|t| page_of.get(t.lower_id.as_str()).copied().unwrap_or(usize::MAX));
    let mut folded: HashMap<String, String> = HashMap::new();
    for t in tables {
        let mut upper_id = t.upper_id.clone();
        while let Some(next) = folded.get(&upper_id) {
            upper_id = next.clone();
        }
        let (up, ui) = locate(&out, &upper_id).ok_or_else(|| AssemblyError::UnknownTable(t.upper_id.clone()))?;
        let (lp, li) = locate(&out, &t.lower_id).ok_or_else(|| AssemblyError::UnknownTable(t.lower_id.clone()))?;
        let parse = |e: &DocElement| {
            table_tree(&e.content).map_err(|message| AssemblyError::BadTable { id: e.id.clone(), message })
        };
        let upper = parse(&out[up].elements[ui])?;
        let lower = parse(&out[lp].elements[li])?;
        let merged = apply_column_decisions(&upper, &lower, &t.decisions)?;
        out[up].elements[ui].content = merged.to_html();
        out[lp].elements.remove(li);
        folded.insert(t.lower_id.clone(), upper_id);
    }
    Ok(out)
}
