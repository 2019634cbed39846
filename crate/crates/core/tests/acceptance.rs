//! Acceptance suite. Each check prints one PASS or FAIL line; the process
//! exits non-zero when any check fails. Oracles here are written
//! independently of the library code they check.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use docbench::assembly::{apply_column_decisions, apply_paragraph_merges, ColumnDecisionList, MergeLabel};
use docbench::cmcv::{classify_difficulty, stratify_manifest, ModelOutput, ModelOutputSet, Task, Thresholds, TierCounts};
use docbench::contentsim::edit_distance;
use docbench::ddas::{cluster_weights, kmeans, sample_plan, EmbeddedItem, KMeansParams, WeightParams};
use docbench::extract::parse_layout_tokens;
use docbench::mgam::{hungarian, mgam_match, SimFn};
use docbench::otsl::{otsl_to_html, parse_otsl};
use docbench::protocol::{
    evaluate_manifest, overall_score, predictions_from_jsonl, EvalOptions, Manifest, PageManifestEntry, PageTier,
    TierLabel,
};
use docbench::tableteds::{teds_trees, tree_edit_distance, TableCell, TableTree};
use docbench::{Category, DifficultyTier, DocElement};

type Check = Result<String, String>;
type Named = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, elapsed: Duration) -> Check {
    ensure!(elapsed < limit, "took {elapsed:.2?}, limit {limit:?}");
    Ok(format!("{elapsed:.2?}"))
}

// Published scores

const PUBLISHED: &str = include_str!("data/published_scores.csv");

fn aggregation_fidelity() -> Check {
    let start = Instant::now();
    let mut per_split = std::collections::BTreeMap::new();
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for line in PUBLISHED.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        ensure!(f.len() == 6, "bad row {line}");
        let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("{line}: {e}"));
        let (overall, te, formula, teds) = (num(2)?, num(3)?, num(4)?, num(5)?);
        let got = overall_score(te, formula / 100.0, teds / 100.0).map_err(|e| e.to_string())?;
        let dev = (got - overall).abs();
        ensure!(dev <= 0.05, "{} {}: computed {got:.3}, published {overall}", f[0], f[1]);
        worst = worst.max(dev);
        *per_split.entry(f[0].to_string()).or_insert(0) += 1;
        rows.push((f[0].to_string(), overall, got));
    }
    ensure!(
        per_split.get("full") == Some(&21) && per_split.get("base") == Some(&26) && per_split.get("hard") == Some(&26),
        "row counts {per_split:?}"
    );
    // Anchor rows, keyed by split and published score.
    for (split, published) in [("full", 95.69), ("full", 95.15), ("full", 93.20), ("hard", 94.08)] {
        let got = rows.iter().find(|r| r.0 == split && r.1 == published).map(|r| r.2);
        ensure!(got.is_some_and(|g| (g - published).abs() <= 0.05), "anchor {split} {published}: {got:?}");
    }
    within(Duration::from_secs(1), start.elapsed())?;
    Ok(format!("73 rows, max deviation {worst:.3}, {:.2?}", start.elapsed()))
}

// Tier arithmetic

fn stub_entry(i: usize, tier: PageTier) -> PageManifestEntry {
    PageManifestEntry {
        page_id: format!("page_{i:05}"),
        tier,
        gt_elements: vec![DocElement::new("0", Category::Text, "body", 0)],
        image_path: None,
    }
}

fn tier_arithmetic() -> Check {
    let build = |base: usize, hard: usize| {
        let entries = (0..base)
            .map(|i| stub_entry(i, PageTier::Base))
            .chain((base..base + hard).map(|i| stub_entry(i, PageTier::Hard)))
            .collect();
        Manifest::new(entries).map_err(|e| e.to_string())
    };
    let m = build(1355, 296)?;
    m.validate_official().map_err(|e| e.to_string())?;
    let counts = (m.page_count(TierLabel::Base), m.page_count(TierLabel::Hard), m.page_count(TierLabel::Full));
    ensure!(counts == (1355, 296, 1651), "counts {counts:?}");
    ensure!(build(1354, 296)?.validate_official().is_err(), "short base tier accepted");
    ensure!(build(1355, 297)?.validate_official().is_err(), "long hard tier accepted");
    Ok("1355 + 296 = 1651".into())
}

// Split invariance

const WORDS: &[&str] = &["alpha", "budget", "river", "stone", "signal", "quiet", "table", "north", "value", "mark"];
const SYMBOLS: &[&str] = &["x", "y_{1}", "\\alpha", "+", "=", "2", "\\frac{a}{b}", "-", "k^{2}", "\\sum_{i}"];

fn split_invariance() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut multi = 0;
    for case in 0..500 {
        let formula = rng.random_bool(0.5);
        let n = rng.random_range(1..=12);
        let vocab = if formula { SYMBOLS } else { WORDS };
        let lines: Vec<String> = (0..n)
            .map(|_| (0..rng.random_range(1..=4)).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" "))
            .collect();
        let delim = if formula { " \\\\ " } else { "\n" };
        let gt = lines.join(delim);
        let preds = lines.clone();
        let sim = if formula { SimFn::FormulaSim } else { SimFn::TextSim };
        let r = mgam_match(&preds, &[gt.as_str()], sim);
        ensure!(r.chosen.aggregate == 1.0, "case {case}: aggregate {} for {preds:?}", r.chosen.aggregate);
        if n >= 2 {
            multi += 1;
            ensure!(r.all_stage_scores[0] < 1.0, "case {case}: direct matching already scores 1.0");
        }
    }
    within(Duration::from_secs(30), start.elapsed())?;
    Ok(format!("500 cases ({multi} multi-fragment), {:.2?}", start.elapsed()))
}

// Hungarian

fn best_assignment(cost: &[Vec<f64>]) -> f64 {
    let (r, c) = (cost.len(), cost[0].len());
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, transpose: bool) {
        let (rows, cols) = if transpose { (cost[0].len(), cost.len()) } else { (cost.len(), cost[0].len()) };
        if row == rows {
            *best = best.min(acc);
            return;
        }
        for col in 0..cols {
            if !used[col] {
                used[col] = true;
                let v = if transpose { cost[col][row] } else { cost[row][col] };
                go(cost, row + 1, used, acc + v, best, transpose);
                used[col] = false;
            }
        }
    }
    let transpose = r > c;
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; r.max(c)], 0.0, &mut best, transpose);
    best
}

fn hungarian_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let (r, c) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let cost: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0..50) as f64).collect()).collect();
        let pairs = hungarian(&cost).map_err(|e| e.to_string())?;
        ensure!(pairs.len() == r.min(c), "case {case}: {} pairs for {r}x{c}", pairs.len());
        let rows: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
        let cols: HashSet<usize> = pairs.iter().map(|p| p.1).collect();
        ensure!(rows.len() == pairs.len() && cols.len() == pairs.len(), "case {case}: not one-to-one");
        let total: f64 = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
        let best = best_assignment(&cost);
        ensure!(total == best, "case {case}: cost {total}, optimum {best}");
    }
    Ok("1000 matrices up to 7x7".into())
}

// Tree edit distance

fn random_cell(rng: &mut ChaCha8Rng) -> TableCell {
    let len = rng.random_range(0..=3);
    let text: String = (0..len).map(|_| ['a', 'b', 'c'][rng.random_range(0..3)]).collect();
    let mut cell = TableCell::new(text).with_span(rng.random_range(1..=2), if rng.random_bool(0.2) { 2 } else { 1 });
    if rng.random_bool(0.2) {
        cell = cell.header();
    }
    cell
}

fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> TableTree {
    let rows = rng.random_range(1..=3.min(max_nodes - 1));
    let mut budget = max_nodes - 1 - rows;
    let mut out = Vec::new();
    for _ in 0..rows {
        let n = rng.random_range(0..=budget.min(4));
        budget -= n;
        out.push((0..n).map(|_| random_cell(rng)).collect());
    }
    TableTree::from_rows(out)
}

#[derive(Clone)]
enum Node<'a> {
    Table,
    Row,
    Cell(&'a TableCell),
}

struct Flat<'a> {
    nodes: Vec<Node<'a>>,
    parent: Vec<Option<usize>>,
}

fn flatten(t: &TableTree) -> Flat<'_> {
    let mut nodes = vec![Node::Table];
    let mut parent = vec![None];
    for row in &t.rows {
        let r = nodes.len();
        nodes.push(Node::Row);
        parent.push(Some(0));
        for cell in row {
            nodes.push(Node::Cell(cell));
            parent.push(Some(r));
        }
    }
    Flat { nodes, parent }
}

fn is_ancestor(f: &Flat, a: usize, mut d: usize) -> bool {
    while let Some(p) = f.parent[d] {
        if p == a {
            return true;
        }
        d = p;
    }
    false
}

fn levenshtein(a: &str, b: &str) -> usize {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + usize::from(a[i - 1] != b[j - 1]));
        }
        prev = cur;
    }
    prev[b.len()]
}

fn relabel(x: &Node, y: &Node, structure_only: bool) -> f64 {
    match (x, y) {
        (Node::Table, Node::Table) | (Node::Row, Node::Row) => 0.0,
        (Node::Cell(a), Node::Cell(b)) => {
            if a.header != b.header || a.colspan != b.colspan || a.rowspan != b.rowspan {
                1.0
            } else if structure_only || a.content == b.content {
                0.0
            } else {
                let longest = a.content.chars().count().max(b.content.chars().count());
                levenshtein(&a.content, &b.content) as f64 / longest as f64
            }
        }
        _ => 1.0,
    }
}

/// Minimum over every valid ordered-tree mapping of relabel costs plus one
/// per unmapped node on either side.
fn exhaustive_tree_distance(a: &TableTree, b: &TableTree, structure_only: bool) -> f64 {
    let (fa, fb) = (flatten(a), flatten(b));
    let (na, nb) = (fa.nodes.len(), fb.nodes.len());
    let mut best = f64::INFINITY;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    fn search(
        i: usize,
        fa: &Flat,
        fb: &Flat,
        pairs: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut f64,
        so: bool,
    ) {
        let (na, nb) = (fa.nodes.len(), fb.nodes.len());
        if i == na {
            let total = acc + (na - pairs.len()) as f64 + (nb - pairs.len()) as f64;
            *best = best.min(total);
            return;
        }
        search(i + 1, fa, fb, pairs, acc, best, so);
        let from = pairs.last().map_or(0, |p| p.1 + 1);
        for j in from..nb {
            if pairs.iter().all(|&(p, q)| is_ancestor(fa, p, i) == is_ancestor(fb, q, j)) {
                pairs.push((i, j));
                search(i + 1, fa, fb, pairs, acc + relabel(&fa.nodes[i], &fb.nodes[j], so), best, so);
                pairs.pop();
            }
        }
    }
    search(0, &fa, &fb, &mut pairs, 0.0, &mut best, structure_only);
    debug_assert!(best <= (na + nb) as f64);
    best
}

fn teds_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..300 {
        let size = rng.random_range(2..=7);
        let a = random_tree(&mut rng, size);
        let size = rng.random_range(2..=7);
        let b = random_tree(&mut rng, size);
        for so in [true, false] {
            let got = tree_edit_distance(&a, &b, so);
            let want = exhaustive_tree_distance(&a, &b, so);
            ensure!((got - want).abs() < 1e-9, "case {case} (structure_only={so}): {got} vs {want}");
        }
    }
    for case in 0..1000 {
        let size = rng.random_range(2..=20);
        let a = random_tree(&mut rng, size);
        let size = rng.random_range(2..=20);
        let b = random_tree(&mut rng, size);
        ensure!(teds_trees(&a, &a, false) == 1.0 && teds_trees(&a, &a, true) == 1.0, "fuzz {case}: self score below 1");
        let (t, s) = (teds_trees(&a, &b, false), teds_trees(&a, &b, true));
        ensure!(s >= t - 1e-12, "fuzz {case}: structure score {s} below content score {t}");
    }
    Ok("300 exhaustive pairs, 1000 fuzzed pairs".into())
}

// Edit distance axioms

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', ' ', 'é', '中', '文'];
    (0..rng.random_range(0..=12)).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn edit_distance_axioms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..10_000 {
        let (a, b, c) = (random_string(&mut rng), random_string(&mut rng), random_string(&mut rng));
        let (ab, ba, bc, ac) = (edit_distance(&a, &b), edit_distance(&b, &a), edit_distance(&b, &c), edit_distance(&a, &c));
        ensure!(ab == ba, "case {case}: asymmetric on {a:?} {b:?}");
        ensure!(edit_distance(&a, &a) == 0, "case {case}: d(a, a) != 0");
        ensure!((ab == 0) == (a == b), "case {case}: zero distance between distinct strings");
        ensure!(ac <= ab + bc, "case {case}: triangle inequality fails");
        ensure!(ab == levenshtein(&a, &b), "case {case}: {ab} differs from the reference {}", levenshtein(&a, &b));
    }
    Ok("10000 triples".into())
}

// Difficulty tiers

fn sym(k: usize, entries: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; k]; k];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(i, j, v) in entries {
        m[i][j] = v;
        m[j][i] = v;
    }
    m
}

fn tier_rule(m: &[Vec<f64>], target: usize, tau: f64) -> DifficultyTier {
    let k = m.len();
    if (0..k).any(|j| j != target && m[target][j] >= tau) {
        return DifficultyTier::Easy;
    }
    let agree = m.iter().enumerate().any(|(i, row)| {
        i != target && row.iter().enumerate().any(|(j, &v)| j > i && j != target && v >= tau)
    });
    if agree {
        DifficultyTier::Medium
    } else {
        DifficultyTier::Hard
    }
}

fn cmcv_rules() -> Check {
    let tau = 0.9;
    let cases = [
        (sym(3, &[(0, 1, 0.97), (0, 2, 0.95), (1, 2, 0.96)]), DifficultyTier::Easy),
        (sym(3, &[(0, 1, 0.40), (0, 2, 0.35), (1, 2, 0.97)]), DifficultyTier::Medium),
        (sym(3, &[(0, 1, 0.40), (0, 2, 0.35), (1, 2, 0.30)]), DifficultyTier::Hard),
    ];
    for (m, want) in &cases {
        let got = classify_difficulty(m, 0, tau).map_err(|e| e.to_string())?;
        ensure!(got == *want, "fixture expected {want:?}, got {got:?}");
    }

    let base = "The committee approved the annual budget after a long debate";
    let other = "Rainfall totals were far below the seasonal average this year";
    let third = "Quantum dots emit light at wavelengths set by their size";
    let set = |id: String, texts: [&str; 3]| ModelOutputSet {
        sample_id: id,
        task: Task::Text,
        outputs: texts.iter().enumerate().map(|(i, t)| ModelOutput { model: format!("m{i}"), content: t.to_string() }).collect(),
        target_index: 0,
    };
    let mut samples = Vec::new();
    samples.extend((0..4).map(|i| set(format!("e{i}"), [base, base, other])));
    samples.extend((0..3).map(|i| set(format!("m{i}"), [base, other, other])));
    samples.extend((0..3).map(|i| set(format!("h{i}"), [base, other, third])));
    let counts = stratify_manifest(&samples, &Thresholds::default()).counts;
    ensure!(counts == TierCounts { easy: 4, medium: 3, hard: 3 }, "stratified counts {counts:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..5000 {
        let k = rng.random_range(3..=5);
        let mut entries = Vec::new();
        for i in 0..k {
            for j in i + 1..k {
                entries.push((i, j, if rng.random_bool(0.3) { 1.0 } else { rng.random::<f64>() }));
            }
        }
        let m = sym(k, &entries);
        let target = rng.random_range(0..k);
        let tau = 1.0 - rng.random::<f64>();
        let got = classify_difficulty(&m, target, tau).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(got == tier_rule(&m, target, tau), "case {case}: {got:?} disagrees with the rule");
    }
    Ok("3 fixtures, 4/3/3 set, 5000 random matrices".into())
}

// Sampling

fn blob_items(rng: &mut ChaCha8Rng, n: usize, dim: usize, invalid_rate: f64) -> Vec<EmbeddedItem> {
    let tiers = [DifficultyTier::Easy, DifficultyTier::Medium, DifficultyTier::Hard];
    (0..n)
        .map(|i| {
            let centre = (i % 4) as f64 * 10.0;
            let mut it = EmbeddedItem::new(
                format!("item{i:04}"),
                (0..dim).map(|_| centre + rng.random::<f64>()).collect(),
                Some(tiers[rng.random_range(0..3)]),
            );
            it.invalid = rng.random_bool(invalid_rate);
            it
        })
        .collect()
}

fn ddas_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let items = blob_items(&mut rng, 500, 6, 0.05);
    let params = WeightParams::default();
    let run = || -> Result<String, String> {
        let model = kmeans(&items, &KMeansParams { k: 8, seed: 42, ..Default::default() }).map_err(|e| e.to_string())?;
        let w = cluster_weights(&model, &items, &params).map_err(|e| e.to_string())?;
        let plan = sample_plan(&model, &items, &w, 100, 42, &params).map_err(|e| e.to_string())?;
        serde_json::to_string(&(model, plan)).map_err(|e| e.to_string())
    };
    ensure!(run()? == run()?, "fixed-seed runs differ");

    let mut configs = 0;
    while configs < 100 {
        let n = rng.random_range(10..=200);
        let dim = rng.random_range(1..=5);
        let items = blob_items(&mut rng, n, dim, 0.1);
        let k = rng.random_range(1..=10.min(n));
        let seed = rng.random::<u64>();
        let model = kmeans(&items, &KMeansParams { k, seed, ..Default::default() }).map_err(|e| e.to_string())?;
        let Ok(w) = cluster_weights(&model, &items, &params) else { continue };
        let pool = items.iter().zip(&model.assignments).filter(|(it, &c)| !it.invalid && w[c] > 0.0).count();
        if pool == 0 {
            continue;
        }
        let budget = rng.random_range(1..=pool);
        let plan = sample_plan(&model, &items, &w, budget, seed, &params).map_err(|e| e.to_string())?;
        let total: usize = plan.quotas.iter().sum();
        ensure!(total == budget && plan.included.len() == budget, "config {configs}: quotas {total}, drawn {}, budget {budget}", plan.included.len());
        let unique: HashSet<&String> = plan.included.iter().collect();
        ensure!(unique.len() == budget, "config {configs}: duplicate draws");
        configs += 1;
    }

    let mut pair = Vec::new();
    for (c, tier) in [DifficultyTier::Easy, DifficultyTier::Medium].into_iter().enumerate() {
        for i in 0..10 {
            pair.push(EmbeddedItem::new(format!("c{c}_{i}"), vec![c as f64 * 50.0, i as f64 * 0.01], Some(tier)));
        }
    }
    let model = kmeans(&pair, &KMeansParams { k: 2, seed: 1, ..Default::default() }).map_err(|e| e.to_string())?;
    let w = cluster_weights(&model, &pair, &params).map_err(|e| e.to_string())?;
    let (easy, medium) = (w[model.assignments[0]], w[model.assignments[10]]);
    ensure!(easy < medium, "all-easy weight {easy} not below all-medium {medium}");
    Ok(format!("deterministic, 100 configurations conserve quota, easy {easy:.2} < medium {medium:.2}"))
}

// OTSL

const OTSL_EXAMPLE: &str = include_str!("data/table.otsl");

fn random_stream(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    let rows = rng.random_range(1..=5);
    for r in 0..rows {
        for _ in 0..rng.random_range(1..=6) {
            match rng.random_range(0..5) {
                0 => {
                    s.push_str("<fcel>");
                    let len = rng.random_range(0..=6);
                    s.extend((0..len).map(|_| ['a', '1', ' ', '.', '中', '\\'][rng.random_range(0..6)]));
                }
                1 => s.push_str("<ecel>"),
                2 => s.push_str("<lcel>"),
                3 => s.push_str("<ucel>"),
                _ => s.push_str("<xcel>"),
            }
        }
        if r + 1 < rows || rng.random_bool(0.5) {
            s.push_str("<nl>");
            if rng.random_bool(0.5) {
                s.push('\n');
            }
        }
    }
    s
}

fn otsl_round_trip() -> Check {
    let t = parse_otsl(OTSL_EXAMPLE).map_err(|e| e.to_string())?;
    ensure!(t.rows.len() == 2 && t.rows.iter().all(|r| r.cells.len() == 8), "example shape {}x{}", t.rows.len(), t.width());
    ensure!(t.serialize() == OTSL_EXAMPLE, "example does not re-serialize byte for byte");
    let html = otsl_to_html(&t);
    ensure!(html.matches("<tr>").count() == 2 && html.matches("<td>").count() == 16, "example html {html}");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let s = random_stream(&mut rng);
        let t = parse_otsl(&s).map_err(|e| format!("case {case}: {e} on {s:?}"))?;
        ensure!(t.serialize() == s, "case {case}: {s:?} re-serialized as {:?}", t.serialize());
        let again = parse_otsl(&t.serialize()).map_err(|e| e.to_string())?;
        ensure!(again == t, "case {case}: reparse differs");
    }
    Ok("example 2x8, 1000 fuzzed streams".into())
}

// Layout tokens

const LAYOUT_EXAMPLE: &str = "\
<|box_start|>705 112 899 146<|box_end|><|ref_start|>header<|ref_end|><|rotate_up|>
<|box_start|>030 343 132 397<|box_end|><|ref_start|>title<|ref_end|><|rotate_up|>
<|box_start|>212 330 491 382<|box_end|><|ref_start|>title<|ref_end|><|rotate_up|>
<|box_start|>214 389 767 441<|box_end|><|ref_start|>title<|ref_end|><|rotate_up|>
<|box_start|>219 494 359 523<|box_end|><|ref_start|>text<|ref_end|><|rotate_up|>
<|box_start|>654 940 907 975<|box_end|><|ref_start|>footer<|ref_end|><|rotate_up|>
";

fn layout_parsing() -> Check {
    let els = parse_layout_tokens(LAYOUT_EXAMPLE).map_err(|e| e.to_string())?;
    let cats: Vec<Category> = els.iter().map(|e| e.category).collect();
    use Category::*;
    ensure!(cats == [Header, Title, Title, Title, Text, Footer], "categories {cats:?}");
    let want: [[u16; 4]; 6] = [
        [705, 112, 899, 146],
        [30, 343, 132, 397],
        [212, 330, 491, 382],
        [214, 389, 767, 441],
        [219, 494, 359, 523],
        [654, 940, 907, 975],
    ];
    for (e, w) in els.iter().zip(want) {
        let b = e.bbox.ok_or("missing box")?;
        let got = [b.x1(), b.y1(), b.x2(), b.y2()];
        ensure!(got == w, "box {got:?}, expected {w:?}");
    }
    Ok("6 elements".into())
}

// Assembly

fn is_cjk(c: char) -> bool {
    ('\u{4E00}'..='\u{9FFF}').contains(&c) || ('\u{3000}'..='\u{30FF}').contains(&c) || ('\u{FF00}'..='\u{FFEF}').contains(&c)
}

/// Characters added (+1 for a space) or removed (-1 for a dropped hyphen).
fn joint_delta(left: &str, right: &str, hyphenate: bool) -> i64 {
    let (Some(l), Some(r)) = (left.chars().last(), right.chars().next()) else { return 0 };
    let before = left.chars().rev().nth(1);
    if hyphenate && l == '-' && before.is_some_and(char::is_alphabetic) && r.is_alphabetic() {
        return -1;
    }
    if l.is_whitespace() || r.is_whitespace() || is_cjk(l) || is_cjk(r) {
        0
    } else {
        1
    }
}

fn fragment(rng: &mut ChaCha8Rng) -> String {
    let pool: &[&str] = &["exam", "ple", "con-", "tinued", "数据", "集合", " ", "end.", "3", "x"];
    (0..rng.random_range(1..=3)).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

fn char_count<'a>(it: impl IntoIterator<Item = &'a str>) -> i64 {
    it.into_iter().map(|s| s.chars().count() as i64).sum()
}

fn assembly_conservation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for doc in 0..500 {
        let frags: Vec<String> = (0..rng.random_range(1..=12)).map(|_| fragment(&mut rng)).collect();
        let els: Vec<DocElement> =
            frags.iter().enumerate().map(|(i, f)| DocElement::new(format!("e{i}"), Category::Text, f.clone(), i as u32)).collect();
        let merge: Vec<bool> = (0..frags.len()).map(|i| i > 0 && rng.random_bool(0.5)).collect();
        let labels: Vec<MergeLabel> = (1..frags.len())
            .filter(|&i| merge[i])
            .map(|i| MergeLabel { boundary: (format!("e{}", i - 1), format!("e{i}")), merge: true })
            .collect();
        let out = apply_paragraph_merges(&els, &labels).map_err(|e| e.to_string())?;
        let mut expected = char_count(frags.iter().map(String::as_str));
        let mut run = frags[0].clone();
        for i in 1..frags.len() {
            if merge[i] {
                let delta = joint_delta(&run, &frags[i], true);
                expected += delta;
                run = match delta {
                    -1 => format!("{}{}", &run[..run.len() - 1], frags[i]),
                    1 => format!("{run} {}", frags[i]),
                    _ => format!("{run}{}", frags[i]),
                };
            } else {
                run = frags[i].clone();
            }
        }
        let got = char_count(out.iter().map(|e| e.content.as_str()));
        ensure!(got == expected, "doc {doc}: paragraph chars {got}, expected {expected}");
        ensure!(out.len() == els.len() - labels.len(), "doc {doc}: element count");

        let w = rng.random_range(1..=5);
        let grid = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<String>> { (0..n).map(|_| (0..w).map(|_| fragment(rng)).collect()).collect() };
        let (nu, nl) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (up, low) = (grid(&mut rng, nu), grid(&mut rng, nl));
        let decisions: Vec<u8> = (0..w).map(|_| rng.random_range(0..2)).collect();
        let (upper, lower) = (TableTree::from_strings(&up), TableTree::from_strings(&low));
        let merged = apply_column_decisions(&upper, &lower, &ColumnDecisionList::new(decisions.clone())).map_err(|e| e.to_string())?;
        let all_one = decisions.iter().all(|&d| d == 1);
        let seps: i64 = if all_one {
            0
        } else {
            (0..w).filter(|&j| decisions[j] == 0).map(|j| joint_delta(&up[up.len() - 1][j], &low[0][j], false)).sum()
        };
        let total = |rows: &[Vec<String>]| char_count(rows.iter().flatten().map(String::as_str));
        let got: i64 = char_count(merged.rows.iter().flatten().map(|c| c.content.as_str()));
        ensure!(got == total(&up) + total(&low) + seps, "doc {doc}: table chars {got}");
        ensure!(merged.grid_width() == w, "doc {doc}: width {} != {w}", merged.grid_width());
    }
    Ok("500 documents".into())
}

// Throughput

fn synthetic_page(i: usize, rng: &mut ChaCha8Rng) -> (String, String) {
    let tier = if i < 1355 { "base" } else { "hard" };
    let sentence = |rng: &mut ChaCha8Rng| (0..12).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ");
    let mut gt = vec![serde_json::json!({"id": "h", "category": "title", "content": format!("Section {i}"), "order_index": 0})];
    for p in 0..4 {
        gt.push(serde_json::json!({"id": format!("p{p}"), "category": "text", "content": format!("{}. {}.", sentence(rng), sentence(rng)), "order_index": p + 1}));
    }
    gt.push(serde_json::json!({"id": "f", "category": "equation", "content": "\\frac{a+b}{c} = \\sum_{i=1}^{n} x_{i} \\\\ y = 2", "order_index": 5}));
    let table = format!("<table><tr><th>k</th><th>v</th><th>w</th></tr><tr><td>{i}</td><td>2</td><td>3</td></tr><tr><td>a</td><td>b</td><td>c</td></tr></table>");
    gt.push(serde_json::json!({"id": "t", "category": "table", "content": table, "order_index": 6}));
    let mut pred = gt.clone();
    let para = pred[2]["content"].as_str().unwrap_or_default().to_string();
    let (head, tail) = para.split_at(para.find(". ").map_or(para.len(), |k| k + 1));
    pred[2]["content"] = serde_json::json!(head);
    pred.insert(3, serde_json::json!({"id": "split", "category": "text", "content": tail.trim(), "order_index": 2}));
    pred.swap(4, 5);
    let manifest = serde_json::json!({"page_id": format!("page_{i:05}"), "tier": tier, "gt_elements": gt});
    let prediction = serde_json::json!({"page_id": format!("page_{i:05}"), "elements": pred});
    (manifest.to_string(), prediction.to_string())
}

fn throughput() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut gt, mut pred) = (String::new(), String::new());
    for i in 0..1651 {
        let (g, p) = synthetic_page(i, &mut rng);
        gt.push_str(&g);
        gt.push('\n');
        pred.push_str(&p);
        pred.push('\n');
    }
    let start = Instant::now();
    let manifest = Manifest::from_jsonl(&gt).map_err(|e| e.to_string())?;
    manifest.validate_official().map_err(|e| e.to_string())?;
    let preds = predictions_from_jsonl(&pred).map_err(|e| e.to_string())?;
    let report = evaluate_manifest(&manifest, &preds, TierLabel::Full, "stub", &EvalOptions::default(), 1)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!(report.page_count == 1651, "scored {} pages", report.page_count);
    let overall = report.overall.ok_or("no overall score")?;
    within(Duration::from_secs(60), elapsed)?;
    Ok(format!("1651 pages in {elapsed:.2?}, overall {overall:.2}"))
}

fn main() -> ExitCode {
    let checks: [Named; 12] = [
        ("aggregation fidelity", aggregation_fidelity),
        ("tier arithmetic", tier_arithmetic),
        ("split invariance", split_invariance),
        ("hungarian oracle", hungarian_oracle),
        ("teds oracle", teds_oracle),
        ("edit distance axioms", edit_distance_axioms),
        ("difficulty tier rules", cmcv_rules),
        ("sampling determinism and quotas", ddas_checks),
        ("otsl round trip", otsl_round_trip),
        ("layout token parsing", layout_parsing),
        ("assembly conservation", assembly_conservation),
        ("evaluation throughput", throughput),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
