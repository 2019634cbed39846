//! Parsers that turn raw model output into ordered [`DocElement`] lists:
//! layout token streams, markdown documents and image-analysis field blocks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BBox, BoxError, Category, DocElement, Rotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExtractError {
    #[error("malformed layout descriptor on line {0}")]
    MalformedDescriptor(usize),
    #[error("invalid box on line {line}: {source}")]
    InvalidBox { line: usize, source: BoxError },
    #[error("<table> opened at byte {0} is never closed")]
    UnclosedTable(usize),
    #[error("image analysis block is missing the {0} field")]
    MissingField(&'static str),
}

const BOX_START: &str = "<|box_start|>";
const BOX_END: &str = "<|box_end|>";
const REF_START: &str = "<|ref_start|>";
const REF_END: &str = "<|ref_end|>";

/// Remove `<|…|>` tokens that are neither descriptor delimiters nor rotation
/// tokens, warning about each one.
fn strip_unknown_tokens(line: &str, line_no: usize) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(start) = rest.find("<|") {
        let Some(len) = rest[start..].find("|>") else {
            break;
        };
        let token = &rest[start..start + len + 2];
        out.push_str(&rest[..start]);
        let known = [BOX_START, BOX_END, REF_START, REF_END].contains(&token)
            || Rotation::from_token(token).is_some();
        if known {
            out.push_str(token);
        } else {
            tracing::warn!(line = line_no, token, "skipping unknown layout token");
        }
        rest = &rest[start + token.len()..];
    }
    out.push_str(rest);
    out
}

fn between<'a>(s: &'a str, open: &str, close: &str) -> Option<(&'a str, usize)> {
    let a = s.find(open)? + open.len();
    let b = a + s[a..].find(close)?;
    Some((&s[a..b], b + close.len()))
}

fn parse_descriptor(raw: &str, line_no: usize) -> Result<(BBox, Category, Rotation), ExtractError> {
    let line = strip_unknown_tokens(raw, line_no);
    let malformed = || ExtractError::MalformedDescriptor(line_no);
    let (coords, after_box) = between(&line, BOX_START, BOX_END).ok_or_else(malformed)?;
    let (label, after_ref) = between(&line[after_box..], REF_START, REF_END).ok_or_else(malformed)?;
    let nums = coords
        .split_whitespace()
        .map(|t| t.parse::<i64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| malformed())?;
    let [x1, y1, x2, y2] = nums[..] else {
        return Err(malformed());
    };
    let bbox = BBox::new(x1, y1, x2, y2)
        .map_err(|source| ExtractError::InvalidBox { line: line_no, source })?;
    let tail = &line[after_box + after_ref..];
    let rotation = match tail.trim() {
        "" => Rotation::Up,
        t => Rotation::from_token(t).ok_or_else(malformed)?,
    };
    Ok((bbox, Category::from_label(label), rotation))
}

/// Parse a newline-delimited layout descriptor stream of the form
/// `<|box_start|>x1 y1 x2 y2<|box_end|><|ref_start|>label<|ref_end|><|rotate_up|>`.
///
/// Blank lines are skipped. Line numbers in errors are 1-based.
pub fn parse_layout_tokens(raw: &str) -> Result<Vec<DocElement>, ExtractError> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (bbox, category, rotation) = parse_descriptor(line, i + 1)?;
        let idx = out.len() as u32;
        let mut el = DocElement::new(idx.to_string(), category, "", idx).with_bbox(bbox);
        el.rotation = rotation;
        out.push(el);
    }
    Ok(out)
}

/// Serialize elements back into the layout token grammar, one line per
/// element. Elements without a box are skipped.
pub fn serialize_layout_tokens(elements: &[DocElement]) -> String {
    let mut lines = Vec::with_capacity(elements.len());
    for el in elements {
        let Some(b) = el.bbox else {
            tracing::warn!(id = %el.id, "element has no box, not serialized");
            continue;
        };
        lines.push(format!(
            "{BOX_START}{:03} {:03} {:03} {:03}{BOX_END}{REF_START}{}{REF_END}{}",
            b.x1(),
            b.y1(),
            b.x2(),
            b.y2(),
            el.category.label(),
            el.rotation.token()
        ));
    }
    lines.join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Construct {
    Table,
    Math(&'static str, &'static str),
}

const MATH_DELIMS: &[(&str, &str)] = &[
    ("$$", "$$"),
    ("\\[", "\\]"),
    ("\\begin{equation}", "\\end{equation}"),
    ("\\begin{equation*}", "\\end{equation*}"),
    ("\\begin{align}", "\\end{align}"),
    ("\\begin{align*}", "\\end{align*}"),
];

fn is_table_open(lower: &str, at: usize) -> bool {
    lower[at..].starts_with("<table")
        && matches!(
            lower.as_bytes().get(at + 6),
            Some(b'>' | b'/' | b' ' | b'\t' | b'\n' | b'\r')
        )
}

/// Earliest construct opener at or after `from`.
fn next_opener(src: &str, lower: &str, from: usize) -> Option<(usize, Construct)> {
    let mut best: Option<(usize, Construct)> = None;
    let mut consider = |pos: usize, c: Construct| {
        if best.is_none_or(|(b, _)| pos < b) {
            best = Some((pos, c));
        }
    };
    let mut t = from;
    while let Some(p) = lower[t..].find("<table") {
        if is_table_open(lower, t + p) {
            consider(t + p, Construct::Table);
            break;
        }
        t += p + 6;
    }
    for &(open, close) in MATH_DELIMS {
        if let Some(p) = src[from..].find(open) {
            consider(from + p, Construct::Math(open, close));
        }
    }
    best
}

/// End byte (exclusive) of the table opened at `start`, honouring nesting.
fn table_end(lower: &str, start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut pos = start;
    loop {
        let next_close = lower[pos..].find("</table").map(|p| pos + p);
        let mut next_open = None;
        let mut t = pos;
        while let Some(p) = lower[t..].find("<table") {
            if is_table_open(lower, t + p) {
                next_open = Some(t + p);
                break;
            }
            t += p + 6;
        }
        match (next_open, next_close) {
            (Some(o), Some(c)) if o < c => {
                depth += 1;
                pos = o + 6;
            }
            (Some(o), None) => {
                depth += 1;
                pos = o + 6;
            }
            (_, Some(c)) => {
                let gt = c + lower[c..].find('>')?;
                depth = depth.saturating_sub(1);
                pos = gt + 1;
                if depth == 0 {
                    return Some(pos);
                }
            }
            (None, None) => return None,
        }
    }
}

fn push_paragraphs(text: &str, out: &mut Vec<DocElement>) {
    let mut para = String::new();
    let flush = |para: &mut String, out: &mut Vec<DocElement>| {
        let t = para.trim();
        if !t.is_empty() {
            let idx = out.len() as u32;
            out.push(DocElement::new(idx.to_string(), Category::Text, t, idx));
        }
        para.clear();
    };
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            flush(&mut para, out);
        } else {
            para.push_str(line);
        }
    }
    flush(&mut para, out);
}

/// Split a markdown document into Text, Formula and Table elements in
/// document order.
///
/// HTML tables (case-insensitive, nested tables kept inside the outer one)
/// become Table elements holding the full `<table>…</table>` markup. Display
/// math in `$$…$$`, `\[…\]`, `equation` or `align` environments becomes a
/// Formula element holding the trimmed body. Everything else is split at
/// blank lines into Text elements. Inline math stays in its paragraph.
pub fn extract_markdown_elements(markdown: &str) -> Result<Vec<DocElement>, ExtractError> {
    let lower = markdown.to_ascii_lowercase();
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut search = 0;
    while let Some((at, construct)) = next_opener(markdown, &lower, search) {
        match construct {
            Construct::Table => {
                let end = table_end(&lower, at).ok_or(ExtractError::UnclosedTable(at))?;
                push_paragraphs(&markdown[text_start..at], &mut out);
                let idx = out.len() as u32;
                out.push(DocElement::new(
                    idx.to_string(),
                    Category::Table,
                    &markdown[at..end],
                    idx,
                ));
                text_start = end;
                search = end;
            }
            Construct::Math(open, close) => {
                let body_start = at + open.len();
                match markdown[body_start..].find(close) {
                    Some(p) => {
                        push_paragraphs(&markdown[text_start..at], &mut out);
                        let idx = out.len() as u32;
                        let body = markdown[body_start..body_start + p].trim();
                        out.push(DocElement::new(idx.to_string(), Category::Formula, body, idx));
                        text_start = body_start + p + close.len();
                        search = text_start;
                    }
                    None => {
                        tracing::warn!(delimiter = open, "unclosed display math kept as text");
                        search = body_start;
                    }
                }
            }
        }
    }
    push_paragraphs(&markdown[text_start..], &mut out);
    Ok(out)
}

/// Structured fields of an image-analysis response.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAnalysis {
    pub class: String,
    pub sub_class: String,
    pub caption: String,
    pub content: String,
}

fn field(raw: &str, name: &'static str) -> Result<String, ExtractError> {
    let open = format!("<|{name}_start|>");
    let close = format!("<|{name}_end|>");
    between(raw, &open, &close)
        .map(|(s, _)| s.trim().to_string())
        .ok_or(ExtractError::MissingField(name))
}

/// Extract the class, sub-class, caption and content fields. Inner text is
/// kept verbatim apart from surrounding whitespace.
pub fn parse_image_analysis(raw: &str) -> Result<ImageAnalysis, ExtractError> {
    Ok(ImageAnalysis {
        class: field(raw, "class")?,
        sub_class: field(raw, "sub_class")?,
        caption: field(raw, "caption")?,
        content: field(raw, "content")?,
    })
}
