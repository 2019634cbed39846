//! Similarity kernels: text normalization, Levenshtein distance, reading-order
//! distance, LaTeX tokenization and the tokenized formula similarity.
//!
//! The formula score is a proxy for rendering-based formula metrics. It
//! compares canonicalized LaTeX token streams with a normalized edit
//! distance, so formulas that differ only in spacing commands, `\left`/`\right`
//! sizing, `\dfrac` vs `\frac`, `\mathrm{}` wrappers or line-break commands
//! score as identical.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// NFC-compose, strip markdown emphasis markers, collapse whitespace runs and
/// trim.
pub fn normalize_text(s: &str) -> String {
    let composed: String = s.nfc().collect();
    let stripped = composed.replace("**", "").replace("__", "").replace('*', "");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    rapidfuzz::distance::levenshtein::distance(a.chars(), b.chars())
}

/// Levenshtein distance over arbitrary token sequences (unit costs).
pub fn sequence_edit_distance<T: Eq + Hash>(a: &[T], b: &[T]) -> usize {
    let mut ids: HashMap<&T, u32> = HashMap::new();
    let mut intern = |t| {
        let next = ids.len() as u32;
        *ids.entry(t).or_insert(next)
    };
    let a: Vec<u32> = a.iter().map(&mut intern).collect();
    let b: Vec<u32> = b.iter().map(&mut intern).collect();
    rapidfuzz::distance::levenshtein::distance(a.iter().copied(), b.iter().copied())
}

fn normalized_similarity(distance: usize, len_a: usize, len_b: usize) -> f64 {
    let longest = len_a.max(len_b);
    if longest == 0 {
        1.0
    } else {
        1.0 - distance as f64 / longest as f64
    }
}

/// `1 - edit_distance / max(len)` over normalized strings; 1 when both are
/// empty after normalization.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_text(a), normalize_text(b));
    normalized_text_similarity(&a, &b)
}

/// [`text_similarity`] for strings that are already normalized.
pub(crate) fn normalized_text_similarity(a: &str, b: &str) -> f64 {
    if a == b {
        return 1.0;
    }
    let (la, lb) = (a.chars().count(), b.chars().count());
    normalized_similarity(edit_distance(a, b), la, lb)
}

/// Normalized token-level edit distance between the ground-truth id order and
/// the order induced by matched predictions. Unmatched ids are simply absent
/// from `gt_ids_in_pred_order`. Both empty gives 0.
pub fn reading_order_edit<S: AsRef<str>>(
    gt_ids_in_gt_order: &[S],
    gt_ids_in_pred_order: &[S],
) -> f64 {
    let a: Vec<&str> = gt_ids_in_gt_order.iter().map(AsRef::as_ref).collect();
    let b: Vec<&str> = gt_ids_in_pred_order.iter().map(AsRef::as_ref).collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    sequence_edit_distance(&a, &b) as f64 / longest as f64
}

/// Tokenized LaTeX source.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatexTokenStream {
    pub tokens: Vec<String>,
}

impl LatexTokenStream {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn concat(&self) -> String {
        self.tokens.concat()
    }
}

/// Greedy left-to-right tokenizer.
///
/// * `\` followed by ASCII letters is one command token (`\frac`).
/// * `\` followed by any other non-whitespace char is a two-char token (`\\`, `\,`).
/// * A `\` followed by whitespace or end of input is a lone `\` token.
/// * ASCII digit runs are one token.
/// * Whitespace is dropped; every other char is its own token.
pub fn tokenize_latex(s: &str) -> LatexTokenStream {
    let chars: Vec<char> = s.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\\' {
            let start = i;
            i += 1;
            if i < chars.len() && chars[i].is_ascii_alphabetic() {
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
            } else if i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            tokens.push(c.to_string());
            i += 1;
        }
    }
    LatexTokenStream { tokens }
}

const DROPPED_COMMANDS: &[&str] = &[
    "\\,", "\\;", "\\quad", "\\qquad", "\\\\", "\\newline", "\\cr",
];

fn strip_display_delimiters(s: &str) -> &str {
    let t = s.trim();
    for (open, close) in [("\\[", "\\]"), ("$$", "$$"), ("\\(", "\\)")] {
        if t.len() >= open.len() + close.len() && t.starts_with(open) && t.ends_with(close) {
            return t[open.len()..t.len() - close.len()].trim();
        }
    }
    t
}

/// Apply the equivalence rewrites to a token slice.
fn rewrite_tokens(tokens: &[String], out: &mut Vec<String>) {
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        match t {
            "\\dfrac" => out.push("\\frac".to_string()),
            "\\left" | "\\right" => {}
            "\\mathrm" => {
                if tokens.get(i + 1).map(String::as_str) == Some("{") {
                    if let Some(close) = matching_brace(tokens, i + 1) {
                        rewrite_tokens(&tokens[i + 2..close], out);
                        i = close + 1;
                        continue;
                    }
                }
            }
            _ if DROPPED_COMMANDS.contains(&t) => {}
            _ => out.push(tokens[i].clone()),
        }
        i += 1;
    }
}

fn matching_brace(tokens: &[String], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    for (k, t) in tokens.iter().enumerate().skip(open) {
        match t.as_str() {
            "{" => depth += 1,
            "}" => {
                depth -= 1;
                if depth == 0 {
                    return Some(k);
                }
            }
            _ => {}
        }
    }
    None
}

/// Tokens after outer display delimiters are removed and the equivalence
/// rewrites are applied.
pub fn canonical_formula_tokens(s: &str) -> Vec<String> {
    let raw = tokenize_latex(strip_display_delimiters(s));
    let mut out = Vec::with_capacity(raw.len());
    rewrite_tokens(&raw.tokens, &mut out);
    out
}

/// `1 - token_edit_distance / max(token count)` over canonical token streams.
pub fn formula_similarity(a: &str, b: &str) -> f64 {
    let (ta, tb) = (canonical_formula_tokens(a), canonical_formula_tokens(b));
    canonical_token_similarity(&ta, &tb)
}

pub(crate) fn canonical_token_similarity(ta: &[String], tb: &[String]) -> f64 {
    if ta == tb {
        return 1.0;
    }
    normalized_similarity(sequence_edit_distance(ta, tb), ta.len(), tb.len())
}
