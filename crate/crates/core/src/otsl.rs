//! OTSL table token streams.
//!
//! A stream is a flat sequence of cell tokens, each followed by its raw text,
//! with `<nl>` closing a row:
//!
//! | token    | meaning                               |
//! |----------|---------------------------------------|
//! | `<fcel>` | cell with content                     |
//! | `<ecel>` | empty cell                            |
//! | `<lcel>` | merged with the cell to the left      |
//! | `<ucel>` | merged with the cell above            |
//! | `<xcel>` | merged both left and up               |
//! | `<nl>`   | end of row                            |
//!
//! The parsed model keeps every byte of the input (raw cell text, whitespace
//! around row breaks) so that [`OtslTable::serialize`] reproduces the
//! original stream exactly. [`OtslCell::content`] gives the trimmed text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tableteds::escape_cell_text;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OtslError {
    #[error("OTSL stream is empty")]
    EmptyStream,
    #[error("text outside any cell at byte {0}")]
    StrayContent(usize),
    #[error("placeholder {0} has no entry in the placeholder map")]
    UnknownPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Filled,
    Empty,
    Left,
    Up,
    Cross,
}

impl CellKind {
    pub fn token(self) -> &'static str {
        match self {
            CellKind::Filled => "<fcel>",
            CellKind::Empty => "<ecel>",
            CellKind::Left => "<lcel>",
            CellKind::Up => "<ucel>",
            CellKind::Cross => "<xcel>",
        }
    }

    fn is_origin(self) -> bool {
        matches!(self, CellKind::Filled | CellKind::Empty)
    }
}

const NL: &str = "<nl>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtslCell {
    pub kind: CellKind,
    /// Text between this token and the next, untrimmed.
    pub raw: String,
}

impl OtslCell {
    pub fn new(kind: CellKind, raw: impl Into<String>) -> Self {
        Self { kind, raw: raw.into() }
    }

    pub fn content(&self) -> &str {
        self.raw.trim()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtslRow {
    pub cells: Vec<OtslCell>,
    /// Row closed by `<nl>`; only the final row may be open.
    pub terminated: bool,
    /// Whitespace after `<nl>` and before the next token.
    pub trailing: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OtslTable {
    /// Whitespace before the first token.
    pub leading: String,
    pub rows: Vec<OtslRow>,
}

/// Placeholder name (the `NAME` in `<|NAME|>`) to image id.
pub type PlaceholderMap = BTreeMap<String, String>;

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<\|([A-Za-z0-9_.\-]+)\|>").unwrap());
static FOREIGN_TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(ched|rhed|srow|[a-z]cel)>").unwrap());

fn next_token(s: &str) -> Option<(usize, Option<CellKind>, usize)> {
    let mut from = 0;
    while let Some(p) = s[from..].find('<') {
        let at = from + p;
        let rest = &s[at..];
        for kind in [CellKind::Filled, CellKind::Empty, CellKind::Left, CellKind::Up, CellKind::Cross] {
            if rest.starts_with(kind.token()) {
                return Some((at, Some(kind), kind.token().len()));
            }
        }
        if rest.starts_with(NL) {
            return Some((at, None, NL.len()));
        }
        from = at + 1;
    }
    None
}

/// Parse a token stream. Inline LaTeX and any other text inside cells is kept
/// verbatim.
pub fn parse_otsl(stream: &str) -> Result<OtslTable, OtslError> {
    if stream.trim().is_empty() {
        return Err(OtslError::EmptyStream);
    }
    let mut table = OtslTable::default();
    let mut row = OtslRow::default();
    let mut pos = 0;
    // Text after the last token belongs to the current cell, or to the
    // preceding gap when no cell is open.
    let mut cell_open = false;
    loop {
        let found = next_token(&stream[pos..]);
        let end = found.map_or(stream.len(), |(at, _, _)| pos + at);
        let text = &stream[pos..end];
        if cell_open {
            row.cells.last_mut().expect("open cell").raw = text.to_string();
        } else if !text.trim().is_empty() {
            let offset = text.len() - text.trim_start().len();
            return Err(OtslError::StrayContent(pos + offset));
        } else if let Some(prev) = table.rows.last_mut().filter(|_| row.cells.is_empty()) {
            prev.trailing = text.to_string();
        } else {
            table.leading = text.to_string();
        }
        let Some((_, kind, len)) = found else {
            break;
        };
        pos = end + len;
        match kind {
            Some(kind) => {
                row.cells.push(OtslCell::new(kind, ""));
                cell_open = true;
            }
            None => {
                row.terminated = true;
                table.rows.push(std::mem::take(&mut row));
                cell_open = false;
            }
        }
    }
    if !row.cells.is_empty() {
        table.rows.push(row);
    }
    for cell in table.rows.iter().flat_map(|r| &r.cells) {
        if let Some(m) = FOREIGN_TOKEN.find(&cell.raw) {
            tracing::warn!(token = m.as_str(), "unsupported OTSL token kept as cell text");
        }
    }
    Ok(table)
}

impl OtslTable {
    /// Canonical table: every row terminated, no surrounding whitespace.
    pub fn from_cells(rows: Vec<Vec<OtslCell>>) -> Self {
        Self {
            leading: String::new(),
            rows: rows
                .into_iter()
                .map(|cells| OtslRow { cells, terminated: true, trailing: String::new() })
                .collect(),
        }
    }

    pub fn serialize(&self) -> String {
        let mut out = self.leading.clone();
        for row in &self.rows {
            for cell in &row.cells {
                out.push_str(cell.kind.token());
                out.push_str(&cell.raw);
            }
            if row.terminated {
                out.push_str(NL);
            }
            out.push_str(&row.trailing);
        }
        out
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.iter().map(|r| r.cells.len()).max().unwrap_or(0)
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&OtslCell> {
        self.rows.get(row)?.cells.get(col)
    }

    fn kind_at(&self, row: usize, col: usize) -> CellKind {
        self.cell(row, col).map_or(CellKind::Empty, |c| c.kind)
    }
}

/// Emit an HTML table. Merge tokens become `colspan`/`rowspan` on their
/// origin cell; merge tokens with no origin become empty cells; short rows
/// are padded with empty cells.
pub fn otsl_to_html(table: &OtslTable) -> String {
    let (h, w) = (table.rows.len(), table.width());
    let mut covered = vec![vec![false; w]; h];
    let mut out = String::from("<table>");
    for r in 0..h {
        out.push_str("<tr>");
        for c in 0..w {
            if covered[r][c] {
                continue;
            }
            let kind = table.kind_at(r, c);
            if !kind.is_origin() {
                out.push_str("<td></td>");
                continue;
            }
            let colspan = 1 + (c + 1..w)
                .take_while(|&k| table.kind_at(r, k) == CellKind::Left && !covered[r][k])
                .count();
            let rowspan = 1 + (r + 1..h)
                .take_while(|&k| table.kind_at(k, c) == CellKind::Up)
                .count();
            for row in covered.iter_mut().skip(r).take(rowspan) {
                for slot in row.iter_mut().skip(c).take(colspan) {
                    *slot = true;
                }
            }
            out.push_str("<td");
            if colspan > 1 {
                let _ = write!(out, " colspan=\"{colspan}\"");
            }
            if rowspan > 1 {
                let _ = write!(out, " rowspan=\"{rowspan}\"");
            }
            out.push('>');
            if let Some(cell) = table.cell(r, c) {
                out.push_str(&escape_cell_text(cell.content()));
            }
            out.push_str("</td>");
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>");
    out
}

/// Replace every `<|NAME|>` placeholder with `<img id="…"/>`. The map may be
/// keyed by `NAME` or by the full `<|NAME|>` token.
pub fn restore_placeholders(table: &OtslTable, map: &PlaceholderMap) -> Result<OtslTable, OtslError> {
    let mut out = table.clone();
    for cell in out.rows.iter_mut().flat_map(|r| r.cells.iter_mut()) {
        if !cell.raw.contains("<|") {
            continue;
        }
        let mut missing = None;
        let replaced = PLACEHOLDER.replace_all(&cell.raw, |caps: &regex::Captures| {
            let token = &caps[0];
            match map.get(&caps[1]).or_else(|| map.get(token)) {
                Some(id) => format!("<img id=\"{id}\"/>"),
                None => {
                    missing.get_or_insert_with(|| token.to_string());
                    token.to_string()
                }
            }
        });
        if let Some(token) = missing {
            return Err(OtslError::UnknownPlaceholder(token));
        }
        cell.raw = replaced.into_owned();
    }
    Ok(out)
}
