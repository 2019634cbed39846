//! HTML tables as ordered labeled trees, tree edit distance, TEDS and TEDS-S.
//!
//! A table parses into `table -> tr -> (td|th)`. `thead`/`tbody`/`tfoot`
//! wrappers are flattened away. Cell content is the decoded, whitespace
//! collapsed text of the cell with `<img …>` tags kept verbatim.
//!
//! The edit distance is the Zhang–Shasha ordered-tree dynamic program with
//! unit insert/delete, unit rename for label or span mismatches, and a
//! normalized content edit distance for otherwise identical cells.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contentsim::edit_distance;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("no <table> element found")]
    NoTableFound,
    #[error("<{0}> is never closed")]
    UnclosedTag(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCell {
    /// `th` rather than `td`.
    pub header: bool,
    pub colspan: u32,
    pub rowspan: u32,
    pub content: String,
}

impl TableCell {
    pub fn new(content: impl Into<String>) -> Self {
        Self { header: false, colspan: 1, rowspan: 1, content: content.into() }
    }

    pub fn with_span(mut self, colspan: u32, rowspan: u32) -> Self {
        self.colspan = colspan.max(1);
        self.rowspan = rowspan.max(1);
        self
    }

    pub fn header(mut self) -> Self {
        self.header = true;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableTree {
    pub rows: Vec<Vec<TableCell>>,
}

impl TableTree {
    pub fn from_rows(rows: Vec<Vec<TableCell>>) -> Self {
        Self { rows }
    }

    /// Rows of plain content strings, every cell unspanned.
    pub fn from_strings<S: AsRef<str>>(rows: &[Vec<S>]) -> Self {
        Self {
            rows: rows
                .iter()
                .map(|r| r.iter().map(|c| TableCell::new(c.as_ref())).collect())
                .collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.rows.len() + self.rows.iter().map(Vec::len).sum::<usize>()
    }

    pub fn cell_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Logical column count: width of the occupancy grid once colspans and
    /// rowspans are laid out.
    pub fn grid_width(&self) -> usize {
        let mut carry: Vec<u32> = Vec::new();
        let mut width = 0;
        for row in &self.rows {
            let mut col = 0;
            let mut next = carry.iter().map(|&r| r.saturating_sub(1)).collect::<Vec<_>>();
            for cell in row {
                while col < carry.len() && carry[col] > 0 {
                    col += 1;
                }
                let end = col + cell.colspan as usize;
                if next.len() < end {
                    next.resize(end, 0);
                }
                for slot in &mut next[col..end] {
                    *slot = cell.rowspan - 1;
                }
                col = end;
            }
            let occupied = carry.iter().rposition(|&r| r > 0).map_or(0, |p| p + 1);
            width = width.max(col).max(occupied);
            carry = next;
        }
        width
    }

    pub fn to_html(&self) -> String {
        let mut out = String::from("<table>");
        for row in &self.rows {
            out.push_str("<tr>");
            for cell in row {
                let tag = if cell.header { "th" } else { "td" };
                out.push('<');
                out.push_str(tag);
                if cell.colspan > 1 {
                    out.push_str(&format!(" colspan=\"{}\"", cell.colspan));
                }
                if cell.rowspan > 1 {
                    out.push_str(&format!(" rowspan=\"{}\"", cell.rowspan));
                }
                out.push('>');
                out.push_str(&escape_cell_text(&cell.content));
                out.push_str("</");
                out.push_str(tag);
                out.push('>');
            }
            out.push_str("</tr>");
        }
        out.push_str("</table>");
        out
    }
}

static IMG_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<img\b[^>]*>").unwrap());
static SPAN_ATTR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)\b(colspan|rowspan)\s*=\s*["']?\s*([^"'\s>]*)"#).unwrap()
});

/// HTML-escape `&`, `<`, `>` while leaving `<img …>` tags intact.
pub fn escape_cell_text(s: &str) -> String {
    let esc = |t: &str| t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut out = String::with_capacity(s.len());
    let mut last = 0;
    for m in IMG_TAG.find_iter(s) {
        out.push_str(&esc(&s[last..m.start()]));
        out.push_str(m.as_str());
        last = m.end();
    }
    out.push_str(&esc(&s[last..]));
    out
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(p) = rest.find('&') {
        out.push_str(&rest[..p]);
        rest = &rest[p..];
        let semi = rest[..rest.len().min(12)].find(';');
        let decoded = semi.and_then(|q| {
            let name = &rest[1..q];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ if name.starts_with("#x") || name.starts_with("#X") => {
                    u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
                }
                _ if name.starts_with('#') => name[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            ch.map(|c| (c, q + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug)]
enum Piece<'a> {
    Text(&'a str),
    /// Lowercased name, closing flag, raw tag text.
    Tag(String, bool, &'a str),
}

fn tokenize(html: &str) -> Result<Vec<Piece<'_>>, TableError> {
    let mut out = Vec::new();
    let mut rest = html;
    while let Some(p) = rest.find('<') {
        if p > 0 {
            out.push(Piece::Text(&rest[..p]));
        }
        rest = &rest[p..];
        if rest.starts_with("<!--") {
            let end = rest.find("-->").map_or(rest.len(), |e| e + 3);
            rest = &rest[end..];
            continue;
        }
        let closing = rest[1..].starts_with('/');
        let name_start = if closing { 2 } else { 1 };
        let name: String = rest[name_start..]
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if name.is_empty() {
            out.push(Piece::Text(&rest[..1]));
            rest = &rest[1..];
            continue;
        }
        let end = rest.find('>').ok_or_else(|| TableError::UnclosedTag(name.clone()))?;
        out.push(Piece::Tag(name, closing, &rest[..=end]));
        rest = &rest[end + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    Ok(out)
}

fn span_attrs(tag: &str) -> (u32, u32) {
    let (mut colspan, mut rowspan) = (1, 1);
    for cap in SPAN_ATTR.captures_iter(tag) {
        let v = cap[2].parse::<u32>().ok().filter(|&v| v >= 1).unwrap_or(1);
        if cap[1].eq_ignore_ascii_case("colspan") {
            colspan = v;
        } else {
            rowspan = v;
        }
    }
    (colspan, rowspan)
}

fn finish_cell(raw: &str) -> String {
    decode_entities(raw).split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parse the first `<table>` in `html`.
///
/// Cells and rows may be implicitly closed by the next `td`/`th`/`tr` or by
/// `</table>`; a cell opened outside any row starts an implicit row. Markup
/// inside a cell is dropped except `<img …>`; `<br>` becomes a space. A nested
/// table inside a cell contributes only its text.
pub fn parse_html_table(html: &str) -> Result<TableTree, TableError> {
    let pieces = tokenize(html)?;
    let start = pieces
        .iter()
        .position(|p| matches!(p, Piece::Tag(n, false, _) if n == "table"))
        .ok_or(TableError::NoTableFound)?;

    let mut rows: Vec<Vec<TableCell>> = Vec::new();
    let mut in_row = false;
    let mut cell: Option<(TableCell, String)> = None;
    let mut nested = 0usize;

    let close_cell = |cell: &mut Option<(TableCell, String)>, rows: &mut Vec<Vec<TableCell>>| {
        if let Some((mut c, raw)) = cell.take() {
            c.content = finish_cell(&raw);
            rows.last_mut().expect("cell inside a row").push(c);
        }
    };

    for piece in &pieces[start + 1..] {
        match piece {
            Piece::Text(t) => {
                if let Some((_, raw)) = cell.as_mut() {
                    raw.push_str(t);
                }
            }
            Piece::Tag(name, closing, raw_tag) => {
                if let Some((_, raw)) = cell.as_mut().filter(|_| nested > 0) {
                    match (name.as_str(), closing) {
                        ("table", false) => nested += 1,
                        ("table", true) => nested -= 1,
                        ("img", false) => raw.push_str(raw_tag),
                        ("br", _) | ("td" | "th" | "tr", _) => raw.push(' '),
                        _ => {}
                    }
                    continue;
                }
                match (name.as_str(), *closing) {
                    ("table", false) if cell.is_some() => nested += 1,
                    ("table", true) => {
                        close_cell(&mut cell, &mut rows);
                        return Ok(TableTree { rows });
                    }
                    ("tr", false) => {
                        close_cell(&mut cell, &mut rows);
                        rows.push(Vec::new());
                        in_row = true;
                    }
                    ("tr", true) => {
                        close_cell(&mut cell, &mut rows);
                        in_row = false;
                    }
                    ("td" | "th", false) => {
                        close_cell(&mut cell, &mut rows);
                        if !in_row {
                            rows.push(Vec::new());
                            in_row = true;
                        }
                        let (colspan, rowspan) = span_attrs(raw_tag);
                        let c = TableCell {
                            header: name == "th",
                            colspan,
                            rowspan,
                            content: String::new(),
                        };
                        cell = Some((c, String::new()));
                    }
                    ("td" | "th", true) => close_cell(&mut cell, &mut rows),
                    ("img", false) => {
                        if let Some((_, raw)) = cell.as_mut() {
                            raw.push_str(raw_tag);
                        }
                    }
                    ("br", _) => {
                        if let Some((_, raw)) = cell.as_mut() {
                            raw.push(' ');
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    Err(TableError::UnclosedTag("table".to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Table,
    Row,
    /// Index into the tree's flattened cell list.
    Cell(usize),
}

/// Postorder view of a tree for the keyroot dynamic program.
struct Postorder<'a> {
    labels: Vec<Label>,
    /// Leftmost leaf descendant of each node, in postorder indices.
    lld: Vec<usize>,
    keyroots: Vec<usize>,
    cells: Vec<&'a TableCell>,
}

impl<'a> Postorder<'a> {
    fn new(t: &'a TableTree) -> Self {
        let mut labels = Vec::with_capacity(t.node_count());
        let mut lld = Vec::with_capacity(t.node_count());
        let mut cells = Vec::with_capacity(t.cell_count());
        for row in &t.rows {
            let row_start = labels.len();
            for cell in row {
                lld.push(labels.len());
                labels.push(Label::Cell(cells.len()));
                cells.push(cell);
            }
            lld.push(row_start);
            labels.push(Label::Row);
        }
        lld.push(0);
        labels.push(Label::Table);

        // A keyroot is the highest node for each distinct leftmost leaf.
        let n = labels.len();
        let mut seen = vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[lld[i]] {
                seen[lld[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Self { labels, lld, keyroots, cells }
    }
}

fn content_cost(a: &str, b: &str) -> f64 {
    if a == b {
        return 0.0;
    }
    let longest = a.chars().count().max(b.chars().count());
    edit_distance(a, b) as f64 / longest as f64
}

/// Ordered tree edit distance between two tables.
pub fn tree_edit_distance(a: &TableTree, b: &TableTree, structure_only: bool) -> f64 {
    let ta = Postorder::new(a);
    let tb = Postorder::new(b);
    let (n, m) = (ta.labels.len(), tb.labels.len());

    let mut content_memo = vec![f64::NAN; if structure_only { 0 } else { ta.cells.len() * tb.cells.len() }];
    let mut rename = |i: usize, j: usize| -> f64 {
        match (ta.labels[i], tb.labels[j]) {
            (Label::Table, Label::Table) | (Label::Row, Label::Row) => 0.0,
            (Label::Cell(x), Label::Cell(y)) => {
                let (cx, cy) = (ta.cells[x], tb.cells[y]);
                if cx.header != cy.header || cx.colspan != cy.colspan || cx.rowspan != cy.rowspan {
                    1.0
                } else if structure_only {
                    0.0
                } else {
                    let slot = &mut content_memo[x * tb.cells.len() + y];
                    if slot.is_nan() {
                        *slot = content_cost(&cx.content, &cy.content);
                    }
                    *slot
                }
            }
            _ => 1.0,
        }
    };

    let mut treedist = vec![0.0f64; n * m];
    let mut fd = vec![0.0f64; (n + 1) * (m + 1)];
    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.lld[i], tb.lld[j]);
            let (rows, cols) = (i - li + 2, j - lj + 2);
            let at = |x: usize, y: usize| x * cols + y;
            fd[at(0, 0)] = 0.0;
            for x in 1..rows {
                fd[at(x, 0)] = fd[at(x - 1, 0)] + 1.0;
            }
            for y in 1..cols {
                fd[at(0, y)] = fd[at(0, y - 1)] + 1.0;
            }
            for x in 1..rows {
                let i1 = li + x - 1;
                for y in 1..cols {
                    let j1 = lj + y - 1;
                    let del = fd[at(x - 1, y)] + 1.0;
                    let ins = fd[at(x, y - 1)] + 1.0;
                    if ta.lld[i1] == li && tb.lld[j1] == lj {
                        let ren = fd[at(x - 1, y - 1)] + rename(i1, j1);
                        let d = del.min(ins).min(ren);
                        fd[at(x, y)] = d;
                        treedist[i1 * m + j1] = d;
                    } else {
                        let p = ta.lld[i1] - li;
                        let q = tb.lld[j1] - lj;
                        let sub = fd[at(p, q)] + treedist[i1 * m + j1];
                        fd[at(x, y)] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    treedist[(n - 1) * m + (m - 1)]
}

/// TEDS-style similarity of two parsed trees.
pub fn teds_trees(gt: &TableTree, pred: &TableTree, structure_only: bool) -> f64 {
    let longest = gt.node_count().max(pred.node_count()) as f64;
    1.0 - tree_edit_distance(gt, pred, structure_only) / longest
}

/// A score plus an optional note explaining a degraded result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub diagnostic: Option<String>,
}

fn teds_html(gt_html: &str, pred_html: &str, structure_only: bool) -> Result<Scored, TableError> {
    let gt = parse_html_table(gt_html)?;
    Ok(match parse_html_table(pred_html) {
        Ok(pred) => Scored { score: teds_trees(&gt, &pred, structure_only), diagnostic: None },
        Err(e) => Scored { score: 0.0, diagnostic: Some(format!("unparseable predicted table: {e}")) },
    })
}

/// Content-aware TEDS. A ground-truth parse failure is an error; a predicted
/// parse failure scores 0 with a diagnostic.
pub fn teds(gt_html: &str, pred_html: &str) -> Result<Scored, TableError> {
    teds_html(gt_html, pred_html, false)
}

/// Structure-only TEDS.
pub fn teds_s(gt_html: &str, pred_html: &str) -> Result<Scored, TableError> {
    teds_html(gt_html, pred_html, true)
}

/// Row-major plain text: cells joined by spaces, rows by newlines, empty
/// cells and rows skipped.
pub fn table_to_text(tree: &TableTree) -> String {
    tree.rows
        .iter()
        .filter_map(|row| {
            let cells: Vec<&str> = row
                .iter()
                .map(|c| c.content.as_str())
                .filter(|c| !c.is_empty())
                .collect();
            (!cells.is_empty()).then(|| cells.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}
