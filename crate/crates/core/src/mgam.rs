//! Multi-granularity adaptive matching between predicted and ground-truth
//! elements.
//!
//! Only the prediction side is re-segmented. Three candidate matchings are
//! built and the one with the highest aggregate score wins:
//!
//! 1. predictions as given, paired to ground truth by minimum-cost assignment
//!    on `1 - sim`;
//! 2. predictions split at line-break delimiters (`\\`, `\newline`, `\cr`,
//!    plus literal newlines for text), then assigned the same way;
//! 3. every partition of the split fragments into contiguous blocks, each
//!    block the concatenation of its fragments, best partition kept.
//!
//! Stage 3 is enumerated exactly while the number of free gaps is at most
//! [`MgamParams::exact_gap_limit`]; past that a beam search over merge/split
//! decisions is used and the result is flagged approximate.
//!
//! The aggregate score of a matching is the length-weighted mean similarity
//! over ground truth, with unmatched prediction blocks added to the
//! denominator:
//!
//! ```text
//! S = sum_j w_j * s_j / (sum_all_gt w_j + sum_unmatched_pred w_p),   w = max(1, chars)
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contentsim::{
    canonical_formula_tokens, canonical_token_similarity, normalize_text,
    normalized_text_similarity,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MgamError {
    #[error("cost matrix contains a non-finite entry at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("cost matrix row {0} has length {1}, expected {2}")]
    RaggedMatrix(usize, usize, usize),
}

/// Minimum-cost one-to-one assignment over `min(rows, cols)` pairs.
///
/// Equivalent to solving the square problem padded with a constant cost, with
/// padded pairs dropped. Empty input gives an empty assignment. Pairs are
/// returned sorted by row.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>, MgamError> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    for (i, r) in cost.iter().enumerate() {
        if r.len() != cols {
            return Err(MgamError::RaggedMatrix(i, r.len(), cols));
        }
        if let Some(j) = r.iter().position(|c| !c.is_finite()) {
            return Err(MgamError::NonFiniteCost(i, j));
        }
    }
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let a = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };

    // Potentials-based shortest augmenting path, 1-indexed with a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Which similarity kernel a match uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimFn {
    TextSim,
    FormulaSim,
}

impl SimFn {
    pub fn sim(self, a: &str, b: &str) -> f64 {
        match self {
            SimFn::TextSim => crate::contentsim::text_similarity(a, b),
            SimFn::FormulaSim => crate::contentsim::formula_similarity(a, b),
        }
    }

    fn prepare(self, s: &str) -> Prepared {
        match self {
            SimFn::TextSim => {
                let n = normalize_text(s);
                let len = n.chars().count();
                Prepared::Text(n, len)
            }
            SimFn::FormulaSim => Prepared::Formula(canonical_formula_tokens(s)),
        }
    }
}

enum Prepared {
    Text(String, usize),
    Formula(Vec<String>),
}

impl Prepared {
    fn len(&self) -> usize {
        match self {
            Prepared::Text(_, n) => *n,
            Prepared::Formula(t) => t.len(),
        }
    }

    fn sim(&self, other: &Prepared) -> f64 {
        match (self, other) {
            (Prepared::Text(a, _), Prepared::Text(b, _)) => normalized_text_similarity(a, b),
            (Prepared::Formula(a), Prepared::Formula(b)) => canonical_token_similarity(a, b),
            _ => unreachable!("mixed similarity kernels"),
        }
    }

    /// Upper bound on `sim` from lengths alone.
    fn sim_bound(&self, other: &Prepared) -> f64 {
        let (a, b) = (self.len(), other.len());
        if a.max(b) == 0 {
            1.0
        } else {
            a.min(b) as f64 / a.max(b) as f64
        }
    }
}

/// Aggregation weight of a piece of content.
pub fn content_weight(s: &str) -> f64 {
    s.trim().chars().count().max(1) as f64
}

/// Length-weighted similarity over ground truth with unmatched-prediction
/// penalty. `gt_indices[k]` was matched with similarity `pair_sims[k]`.
/// Both sides empty gives 1.
pub fn aggregate_score<S: AsRef<str>, T: AsRef<str>>(
    gt_indices: &[usize],
    pair_sims: &[f64],
    gts: &[S],
    unmatched_pred_blocks: &[T],
) -> f64 {
    let gt_w: Vec<f64> = gts.iter().map(|g| content_weight(g.as_ref())).collect();
    let pred_w: f64 = unmatched_pred_blocks.iter().map(|p| content_weight(p.as_ref())).sum();
    weighted_aggregate(gt_indices.iter().zip(pair_sims).map(|(&g, &s)| (gt_w[g], s)), gt_w.iter().sum(), pred_w)
}

fn weighted_aggregate(pairs: impl Iterator<Item = (f64, f64)>, gt_total: f64, unmatched_pred: f64) -> f64 {
    let den = gt_total + unmatched_pred;
    if den == 0.0 {
        return 1.0;
    }
    pairs.map(|(w, s)| w * s).sum::<f64>() / den
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Glue {
    None,
    Space,
}

/// One fine-grained prediction unit.
#[derive(Debug, Clone)]
struct Fragment {
    text: String,
    origin: usize,
    /// Separator to the previous fragment of the same origin.
    glue: Glue,
    optional: bool,
}

/// Split one prediction into trimmed fragments, recording whether whitespace
/// stood between consecutive fragments.
fn split_one(s: &str, newlines: bool) -> Vec<(String, Glue)> {
    let bytes = s.as_bytes();
    let mut pieces: Vec<&str> = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => {
                let next = bytes.get(i + 1).copied();
                if next == Some(b'\\') {
                    pieces.push(&s[start..i]);
                    i += 2;
                    start = i;
                } else if next.is_some_and(|c| c.is_ascii_alphabetic()) {
                    let mut j = i + 1;
                    while j < bytes.len() && bytes[j].is_ascii_alphabetic() {
                        j += 1;
                    }
                    if matches!(&s[i + 1..j], "newline" | "cr") {
                        pieces.push(&s[start..i]);
                        start = j;
                    }
                    i = j;
                } else {
                    i += 1;
                }
            }
            b'\n' if newlines => {
                pieces.push(&s[start..=i]);
                i += 1;
                start = i;
            }
            _ => i += 1,
        }
    }
    pieces.push(&s[start..]);

    let mut out = Vec::new();
    let mut pending_space = false;
    for piece in pieces {
        let trimmed = piece.trim();
        if trimmed.is_empty() {
            pending_space |= !piece.is_empty();
            continue;
        }
        if piece.starts_with(char::is_whitespace) {
            pending_space = true;
        }
        let glue = if pending_space { Glue::Space } else { Glue::None };
        out.push((trimmed.to_string(), glue));
        pending_space = piece.ends_with(char::is_whitespace);
    }
    out
}

/// Split predictions at `\\`, `\newline`, `\cr` and, for text, newlines.
/// Empty fragments are dropped; `origin[k]` is the source prediction of
/// `fine[k]`.
pub fn split_predictions<S: AsRef<str>>(preds: &[S], task: SimFn) -> (Vec<String>, Vec<usize>) {
    let mut fine = Vec::new();
    let mut origin = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (text, _) in split_one(p.as_ref(), task == SimFn::TextSim) {
            fine.push(text);
            origin.push(i);
        }
    }
    (fine, origin)
}

/// A prediction offered to the matcher. Optional units (for example a table
/// rendered as text) are never split or merged, and are not penalized when
/// left unmatched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredUnit {
    pub content: String,
    pub optional: bool,
}

impl PredUnit {
    pub fn new(content: impl Into<String>) -> Self {
        Self { content: content.into(), optional: false }
    }

    pub fn optional(content: impl Into<String>) -> Self {
        Self { content: content.into(), optional: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MgamParams {
    /// Largest number of free gaps enumerated exactly in stage 3.
    pub exact_gap_limit: usize,
    pub beam_width: usize,
    /// Pairs involving an optional block below this similarity are discarded.
    pub optional_min_sim: f64,
}

impl Default for MgamParams {
    fn default() -> Self {
        Self { exact_gap_limit: 12, beam_width: 64, optional_min_sim: 0.5 }
    }
}

/// A contiguous run of stage units merged into one prediction block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Half-open unit range within the stage's unit list.
    pub start: usize,
    pub end: usize,
    /// Indices of the input predictions covered, ascending.
    pub origins: Vec<usize>,
    pub content: String,
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub block: Block,
    pub gt_index: usize,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub stage: u8,
    pub pairs: Vec<MatchPair>,
    pub unmatched_blocks: Vec<Block>,
    pub aggregate: f64,
    pub approximate: bool,
}

impl MatchCandidate {
    pub fn pair_sims(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.sim).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub chosen: MatchCandidate,
    pub all_stage_scores: [f64; 3],
    pub unmatched_gt: Vec<usize>,
    /// Unmatched non-optional blocks of the chosen candidate.
    pub unmatched_pred_blocks: Vec<Block>,
    pub approximate: bool,
}

struct SpanInfo {
    content: String,
    prepared: Prepared,
    weight: f64,
    optional: bool,
    origins: Vec<usize>,
    /// Similarity to each ground truth, NaN until computed.
    sims: Vec<f64>,
}

struct Matcher<'a> {
    gts: Vec<Prepared>,
    gt_weight: Vec<f64>,
    gt_total: f64,
    sim: SimFn,
    params: &'a MgamParams,
}

impl<'a> Matcher<'a> {
    fn new<T: AsRef<str>>(gts: &[T], sim: SimFn, params: &'a MgamParams) -> Self {
        let gt_weight: Vec<f64> = gts.iter().map(|g| content_weight(g.as_ref())).collect();
        Self {
            gts: gts.iter().map(|g| sim.prepare(g.as_ref())).collect(),
            gt_total: gt_weight.iter().sum(),
            gt_weight,
            sim,
            params,
        }
    }
}

/// Units of one stage plus a memo of span similarities.
struct Stage<'m> {
    units: Vec<Fragment>,
    matcher: &'m Matcher<'m>,
    memo: HashMap<(usize, usize), SpanInfo>,
}

impl<'m> Stage<'m> {
    fn new(units: Vec<Fragment>, matcher: &'m Matcher<'m>) -> Self {
        Self { units, matcher, memo: HashMap::new() }
    }

    fn span(&mut self, s: usize, e: usize) -> &mut SpanInfo {
        let units = &self.units;
        let matcher = self.matcher;
        self.memo.entry((s, e)).or_insert_with(|| {
            let mut content = String::new();
            let mut origins = Vec::new();
            for k in s..e {
                let u = &units[k];
                if k > s {
                    let same = units[k - 1].origin == u.origin;
                    if !same || u.glue == Glue::Space {
                        content.push(' ');
                    }
                }
                content.push_str(&u.text);
                if origins.last() != Some(&u.origin) {
                    origins.push(u.origin);
                }
            }
            let prepared = matcher.sim.prepare(&content);
            SpanInfo {
                weight: content_weight(&content),
                optional: units[s..e].iter().all(|u| u.optional),
                sims: vec![f64::NAN; matcher.gts.len()],
                content,
                prepared,
                origins,
            }
        })
    }

    fn sim(&mut self, s: usize, e: usize, g: usize) -> f64 {
        let gt = &self.matcher.gts[g];
        let info = self.memo.get_mut(&(s, e)).expect("span prepared");
        if info.sims[g].is_nan() {
            info.sims[g] = info.prepared.sim(gt);
        }
        info.sims[g]
    }

    /// Score a partition exactly.
    fn evaluate(&mut self, blocks: &[(usize, usize)], stage: u8) -> MatchCandidate {
        let gcount = self.matcher.gts.len();
        let mut cost = Vec::with_capacity(blocks.len());
        for &(s, e) in blocks {
            self.span(s, e);
            cost.push((0..gcount).map(|g| 1.0 - self.sim(s, e, g)).collect::<Vec<_>>());
        }
        let assignment = hungarian(&cost).expect("similarities are finite");
        let min_opt = self.matcher.params.optional_min_sim;
        let mut matched = vec![false; blocks.len()];
        let mut pairs = Vec::new();
        for (b, g) in assignment {
            let (s, e) = blocks[b];
            let sim = 1.0 - cost[b][g];
            let info = &self.memo[&(s, e)];
            if sim <= 0.0 || (info.optional && sim < min_opt) {
                continue;
            }
            matched[b] = true;
            pairs.push(MatchPair { block: block_of(info, s, e), gt_index: g, sim });
        }
        let mut unmatched_blocks = Vec::new();
        let mut penalty = 0.0;
        for (b, &(s, e)) in blocks.iter().enumerate() {
            if !matched[b] {
                let info = &self.memo[&(s, e)];
                if !info.optional {
                    penalty += info.weight;
                }
                unmatched_blocks.push(block_of(info, s, e));
            }
        }
        pairs.sort_by_key(|p| p.gt_index);
        let gw = &self.matcher.gt_weight;
        let aggregate = weighted_aggregate(
            pairs.iter().map(|p| (gw[p.gt_index], p.sim)),
            self.matcher.gt_total,
            penalty,
        );
        MatchCandidate { stage, pairs, unmatched_blocks, aggregate, approximate: false }
    }

    fn forced_split(&self, gap: usize) -> bool {
        self.units[gap - 1].optional || self.units[gap].optional
    }

    fn stage3(&mut self) -> MatchCandidate {
        let n = self.units.len();
        if n == 0 {
            return self.evaluate(&[], 3);
        }
        let free: Vec<usize> = (1..n).filter(|&g| !self.forced_split(g)).collect();
        if free.len() <= self.matcher.params.exact_gap_limit {
            self.stage3_exact(&free)
        } else {
            let mut c = self.stage3_beam();
            c.approximate = true;
            c
        }
    }

    fn stage3_exact(&mut self, free: &[usize]) -> MatchCandidate {
        let n = self.units.len();
        let mut best: Option<MatchCandidate> = None;
        let mut blocks = Vec::with_capacity(n);
        for mask in 0u64..(1u64 << free.len()) {
            blocks.clear();
            let mut start = 0;
            for gap in 1..n {
                let split = match free.iter().position(|&f| f == gap) {
                    Some(bit) => mask & (1 << bit) == 0,
                    None => true,
                };
                if split {
                    blocks.push((start, gap));
                    start = gap;
                }
            }
            blocks.push((start, n));
            let cand = self.evaluate(&blocks, 3);
            if best.as_ref().is_none_or(|b| cand.aggregate > b.aggregate) {
                best = Some(cand);
            }
        }
        best.expect("at least one partition")
    }

    /// Separable surrogate of a block's contribution: best over ground truth
    /// of matched weight minus the unmatched share of the block.
    fn gain(&mut self, s: usize, e: usize) -> f64 {
        let (weight, optional) = {
            let info = self.span(s, e);
            (info.weight, info.optional)
        };
        let gw = self.matcher.gt_weight.clone();
        let score = |w: f64, sim: f64| {
            if optional {
                w * sim
            } else {
                w * sim - weight * (1.0 - sim)
            }
        };
        let mut order: Vec<(f64, usize)> = {
            let info = &self.memo[&(s, e)];
            (0..gw.len())
                .map(|g| (score(gw[g], info.prepared.sim_bound(&self.matcher.gts[g])), g))
                .collect()
        };
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut best = if optional { 0.0 } else { -weight };
        for (bound, g) in order {
            if bound <= best {
                break;
            }
            best = best.max(score(gw[g], self.sim(s, e, g)));
        }
        best
    }

    fn stage3_beam(&mut self) -> MatchCandidate {
        #[derive(Clone)]
        struct State {
            cuts: Vec<usize>,
            open: usize,
            closed: f64,
        }
        let n = self.units.len();
        let width = self.matcher.params.beam_width.max(1);
        let cap = 2.0 * self.matcher.gt_weight.iter().copied().fold(1.0, f64::max);
        let mut prefix = vec![0.0f64; n + 1];
        for (k, u) in self.units.iter().enumerate() {
            prefix[k + 1] = prefix[k] + u.text.chars().count() as f64;
        }

        let mut beam = vec![State { cuts: Vec::new(), open: 0, closed: 0.0 }];
        for gap in 1..n {
            let mut next: Vec<State> = Vec::with_capacity(beam.len() * 2);
            let forced = self.forced_split(gap);
            for st in &beam {
                let g = self.gain(st.open, gap);
                let mut cuts = st.cuts.clone();
                cuts.push(st.open);
                next.push(State { cuts, open: gap, closed: st.closed + g });
                let merged_len = prefix[gap + 1] - prefix[st.open];
                if !forced && merged_len <= cap {
                    next.push(st.clone());
                }
            }
            // States sharing an open block have identical futures under the
            // surrogate, so only the best of each survives.
            let mut by_open: HashMap<usize, State> = HashMap::new();
            for st in next {
                match by_open.get(&st.open) {
                    Some(cur) if cur.closed >= st.closed => {}
                    _ => {
                        by_open.insert(st.open, st);
                    }
                }
            }
            let mut ranked: Vec<(f64, State)> = by_open
                .into_values()
                .map(|st| (st.closed + self.gain(st.open, gap + 1), st))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.open.cmp(&b.1.open)));
            ranked.truncate(width);
            beam = ranked.into_iter().map(|(_, st)| st).collect();
        }

        let mut best: Option<MatchCandidate> = None;
        for st in beam {
            let mut starts = st.cuts;
            starts.push(st.open);
            let blocks: Vec<(usize, usize)> = starts
                .iter()
                .enumerate()
                .map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(n)))
                .collect();
            let cand = self.evaluate(&blocks, 3);
            if best.as_ref().is_none_or(|b| cand.aggregate > b.aggregate) {
                best = Some(cand);
            }
        }
        best.expect("beam is never empty")
    }
}

fn block_of(info: &SpanInfo, start: usize, end: usize) -> Block {
    Block {
        start,
        end,
        origins: info.origins.clone(),
        content: info.content.clone(),
        optional: info.optional,
    }
}

/// Match plain prediction strings against ground truth with default limits.
pub fn mgam_match<S: AsRef<str>, T: AsRef<str>>(preds: &[S], gts: &[T], sim: SimFn) -> MatchResult {
    let units: Vec<PredUnit> = preds.iter().map(|p| PredUnit::new(p.as_ref())).collect();
    mgam_match_units(&units, gts, sim, &MgamParams::default())
}

/// Full matcher over prediction units.
pub fn mgam_match_units<T: AsRef<str>>(
    preds: &[PredUnit],
    gts: &[T],
    sim: SimFn,
    params: &MgamParams,
) -> MatchResult {
    let matcher = Matcher::new(gts, sim, params);

    let coarse: Vec<Fragment> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| Fragment { text: p.content.clone(), origin: i, glue: Glue::Space, optional: p.optional })
        .collect();
    let mut fine = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        if p.optional {
            fine.push(Fragment { text: p.content.clone(), origin: i, glue: Glue::Space, optional: true });
            continue;
        }
        for (text, glue) in split_one(&p.content, sim == SimFn::TextSim) {
            fine.push(Fragment { text, origin: i, glue, optional: false });
        }
    }

    let s1 = {
        let mut stage = Stage::new(coarse, &matcher);
        let blocks: Vec<(usize, usize)> = (0..preds.len()).map(|i| (i, i + 1)).collect();
        stage.evaluate(&blocks, 1)
    };
    let mut stage = Stage::new(fine, &matcher);
    let s2 = {
        let blocks: Vec<(usize, usize)> = (0..stage.units.len()).map(|i| (i, i + 1)).collect();
        stage.evaluate(&blocks, 2)
    };
    let s3 = stage.stage3();
    let approximate = s3.approximate;

    let scores = [s1.aggregate, s2.aggregate, s3.aggregate];
    let mut chosen = s1;
    for cand in [s2, s3] {
        if cand.aggregate > chosen.aggregate {
            chosen = cand;
        }
    }
    let mut matched_gt = vec![false; gts.len()];
    for p in &chosen.pairs {
        matched_gt[p.gt_index] = true;
    }
    MatchResult {
        unmatched_gt: (0..gts.len()).filter(|&g| !matched_gt[g]).collect(),
        unmatched_pred_blocks: chosen.unmatched_blocks.iter().filter(|b| !b.optional).cloned().collect(),
        all_stage_scores: scores,
        approximate,
        chosen,
    }
}
