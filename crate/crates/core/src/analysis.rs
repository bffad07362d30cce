//! Attachment scores, significance tests, encoder probing, transfer
//! source ranking and cluster geometry.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::parser::{LanguageInputs, ParserError, ParserParameters};
use crate::treebank::Treebank;
use crate::tsv::{pct, Table};
use crate::typology::{Clustering, TypologyVector, WalsRecord};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("{0}")]
    Argument(String),
    #[error(transparent)]
    Parser(#[from] ParserError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub tokens: usize,
    /// Head correct, per token in treebank order.
    pub arcs: Vec<bool>,
    /// Head and label correct, per token.
    pub labeled: Vec<bool>,
    /// Correct heads per sentence.
    pub sentence_correct: Vec<usize>,
    pub sentence_tokens: Vec<usize>,
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// UAS and LAS over every token, punctuation included.
pub fn evaluate(pred: &Treebank, gold: &Treebank) -> Result<EvalReport, AnalysisError> {
    if pred.sentences.len() != gold.sentences.len() {
        return Err(AnalysisError::Alignment(format!(
            "{} predicted sentences, {} gold",
            pred.sentences.len(),
            gold.sentences.len()
        )));
    }
    let mut report = EvalReport::default();
    for (i, (p, g)) in pred.sentences.iter().zip(&gold.sentences).enumerate() {
        if p.len() != g.len() {
            return Err(AnalysisError::Alignment(format!(
                "sentence {}: {} predicted tokens, {} gold",
                i + 1,
                p.len(),
                g.len()
            )));
        }
        let mut correct = 0;
        for (a, b) in p.tokens.iter().zip(&g.tokens) {
            let head = a.head == b.head;
            correct += head as usize;
            report.arcs.push(head);
            report.labeled.push(head && a.deprel == b.deprel);
        }
        report.sentence_correct.push(correct);
        report.sentence_tokens.push(p.len());
    }
    report.tokens = report.arcs.len();
    report.uas = percent(report.arcs.iter().filter(|&&c| c).count(), report.tokens);
    report.las = percent(report.labeled.iter().filter(|&&c| c).count(), report.tokens);
    Ok(report)
}

/// One line per sentence of space-separated 0/1 flags in token order.
pub fn write_correctness(report: &EvalReport) -> String {
    let mut out = String::new();
    let mut flags = report.arcs.iter();
    for &n in &report.sentence_tokens {
        let line: Vec<&str> = flags
            .by_ref()
            .take(n)
            .map(|&c| if c { "1" } else { "0" })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Inverse of [`write_correctness`]: per-arc flags and sentence lengths.
pub fn read_correctness(text: &str) -> Result<(Vec<bool>, Vec<usize>), AnalysisError> {
    let mut arcs = Vec::new();
    let mut lengths = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut n = 0;
        for flag in line.split_whitespace() {
            arcs.push(match flag {
                "1" => true,
                "0" => false,
                other => {
                    return Err(AnalysisError::Argument(format!(
                        "line {}: expected 0 or 1, found {other}",
                        i + 1
                    )))
                }
            });
            n += 1;
        }
        lengths.push(n);
    }
    Ok((arcs, lengths))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub n_permutations: usize,
    /// `mean(a) - mean(b)` over arcs.
    pub observed_delta: f64,
}

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

/// Two-sided add-one p value of `sum_i d_i` under independent sign flips
/// of each `d_i`.
fn sign_flip(diffs: &[i64], n_perm: usize, seed: u64) -> f64 {
    let observed: i64 = diffs.iter().sum::<i64>().abs();
    let nonzero: Vec<i64> = diffs.iter().copied().filter(|&d| d != 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        let mut total = 0i64;
        for chunk in nonzero.chunks(64) {
            let bits: u64 = rng.gen();
            for (k, &d) in chunk.iter().enumerate() {
                total += if bits >> k & 1 == 1 { d } else { -d };
            }
        }
        if total.abs() >= observed {
            extreme += 1;
        }
    }
    (1 + extreme) as f64 / (1 + n_perm) as f64
}

/// Arc-level paired permutation test.
pub fn paired_permutation_test(
    correct_a: &[bool],
    correct_b: &[bool],
    n_perm: usize,
    seed: u64,
) -> Result<SignificanceResult, AnalysisError> {
    if correct_a.len() != correct_b.len() {
        return Err(AnalysisError::Alignment(format!(
            "{} arcs against {}",
            correct_a.len(),
            correct_b.len()
        )));
    }
    let diffs: Vec<i64> = correct_a
        .iter()
        .zip(correct_b)
        .map(|(&a, &b)| a as i64 - b as i64)
        .collect();
    let n = diffs.len().max(1) as f64;
    Ok(SignificanceResult {
        p_value: sign_flip(&diffs, n_perm, seed),
        n_permutations: n_perm,
        observed_delta: diffs.iter().sum::<i64>() as f64 / n,
    })
}

/// Sentence-level variant: whole sentences' correct-head counts are
/// swapped together.
pub fn sentence_permutation_test(
    a: &EvalReport,
    b: &EvalReport,
    n_perm: usize,
    seed: u64,
) -> Result<SignificanceResult, AnalysisError> {
    if a.sentence_tokens != b.sentence_tokens {
        return Err(AnalysisError::Alignment("sentence lengths differ".into()));
    }
    let diffs: Vec<i64> = a
        .sentence_correct
        .iter()
        .zip(&b.sentence_correct)
        .map(|(&x, &y)| x as i64 - y as i64)
        .collect();
    let n = a.tokens.max(1) as f64;
    Ok(SignificanceResult {
        p_value: sign_flip(&diffs, n_perm, seed),
        n_permutations: n_perm,
        observed_delta: diffs.iter().sum::<i64>() as f64 / n,
    })
}

pub const PROBE_FEATURES: [&str; 6] = ["82A", "83A", "85A", "86A", "87A", "88A"];

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub features: Vec<String>,
    pub split_seed: u64,
    pub epochs: usize,
    pub lr: f64,
    /// Hold out whole languages instead of sentences.
    pub held_out_languages: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            features: PROBE_FEATURES.iter().map(|f| f.to_string()).collect(),
            split_seed: 1,
            epochs: 500,
            lr: 0.1,
            held_out_languages: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeRow {
    pub feature: String,
    pub probe: f64,
    pub majority: f64,
    pub classes: usize,
    pub train: usize,
    pub test: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
}

impl ProbeReport {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["feature", "probe", "majority", "classes", "train", "test"]);
        for r in &self.rows {
            t.push([
                r.feature.clone(),
                pct(r.probe),
                pct(r.majority),
                r.classes.to_string(),
                r.train.to_string(),
                r.test.to_string(),
            ]);
        }
        t
    }
}

/// Multinomial logistic regression by full-batch gradient descent from
/// zero weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticProbe {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LogisticProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, epochs: usize, lr: f64) -> Self {
        let dim = x.first().map_or(0, Vec::len);
        let mut w = vec![vec![0.0; dim]; classes];
        let mut b = vec![0.0; classes];
        let n = x.len().max(1) as f64;
        for _ in 0..epochs {
            let mut gw = vec![vec![0.0; dim]; classes];
            let mut gb = vec![0.0; classes];
            for (xi, &yi) in x.iter().zip(y) {
                let p = softmax(&logits(&w, &b, xi));
                for c in 0..classes {
                    let g = p[c] - (c == yi) as u8 as f64;
                    gb[c] += g;
                    for (gwc, xv) in gw[c].iter_mut().zip(xi) {
                        *gwc += g * xv;
                    }
                }
            }
            for c in 0..classes {
                b[c] -= lr * gb[c] / n;
                for (wv, g) in w[c].iter_mut().zip(&gw[c]) {
                    *wv -= lr * g / n;
                }
            }
        }
        LogisticProbe { weights: w, bias: b }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        crate::parser::argmax(&logits(&self.weights, &self.bias, x))
    }
}

fn logits(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(wc, bc)| bc + wc.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Max-pooled encoder states of every sentence, tagged with its language.
fn sentence_representations(
    params: &ParserParameters,
    treebanks: &[Treebank],
    typologies: &BTreeMap<String, TypologyVector>,
    wals: &BTreeMap<String, WalsRecord>,
) -> Result<Vec<(String, Vec<f64>)>, AnalysisError> {
    let jobs: Vec<(&Treebank, &crate::treebank::Sentence)> = treebanks
        .iter()
        .flat_map(|tb| tb.sentences.iter().filter(|s| !s.is_empty()).map(move |s| (tb, s)))
        .collect();
    jobs.par_iter()
        .map(|(tb, s)| {
            let inputs = LanguageInputs {
                typology: typologies.get(&tb.language),
                wals: wals.get(&tb.language),
            };
            let h = params.encode(s, inputs)?;
            let mut pooled = h[0].clone();
            for row in &h[1..] {
                for (p, v) in pooled.iter_mut().zip(row) {
                    *p = p.max(*v);
                }
            }
            Ok((tb.language.clone(), pooled))
        })
        .collect()
}

fn majority_class(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    // first index among the most frequent
    let mut best = 0;
    for c in 1..classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

/// Probes max-pooled encoder outputs for each sentence's language's WALS
/// values. Languages without a value for a feature are skipped for it.
pub fn probe_encoder(
    params: &ParserParameters,
    treebanks: &[Treebank],
    typologies: &BTreeMap<String, TypologyVector>,
    wals: &BTreeMap<String, WalsRecord>,
    config: &ProbeConfig,
) -> Result<ProbeReport, AnalysisError> {
    let missing: Vec<&str> = treebanks
        .iter()
        .filter(|tb| !wals.contains_key(&tb.language))
        .map(|tb| tb.language.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(AnalysisError::Argument(format!(
            "no WALS record for {}",
            missing.join(", ")
        )));
    }
    let reps = sentence_representations(params, treebanks, typologies, wals)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.split_seed);
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.shuffle(&mut rng);
    let mut languages: Vec<&String> = treebanks.iter().map(|tb| &tb.language).collect();
    languages.sort();
    languages.dedup();
    languages.shuffle(&mut rng);
    let held_out: Vec<&String> = languages[..languages.len() / 5].to_vec();
    let cut = reps.len() * 4 / 5;
    let is_test = |rank: usize, lang: &String| {
        if config.held_out_languages {
            held_out.contains(&lang)
        } else {
            rank >= cut
        }
    };

    let mut rows = Vec::new();
    for feature in &config.features {
        let mut values: Vec<String> = Vec::new();
        let mut train = (Vec::new(), Vec::new());
        let mut test = (Vec::new(), Vec::new());
        for (rank, &i) in order.iter().enumerate() {
            let (lang, x) = &reps[i];
            let Some(value) = wals[lang].get(feature) else {
                continue;
            };
            let label = match values.iter().position(|v| v == value) {
                Some(l) => l,
                None => {
                    values.push(value.to_string());
                    values.len() - 1
                }
            };
            let side = if is_test(rank, lang) { &mut test } else { &mut train };
            side.0.push(x.clone());
            side.1.push(label);
        }
        let classes = values.len();
        let (n_train, n_test) = (train.1.len(), test.1.len());
        if classes <= 1 || n_train == 0 || n_test == 0 {
            if classes > 1 {
                log::warn!("probe {feature}: empty train or test split");
            }
            rows.push(ProbeRow {
                feature: feature.clone(),
                probe: 100.0,
                majority: 100.0,
                classes,
                train: n_train,
                test: n_test,
                degenerate: true,
            });
            continue;
        }
        let maj = majority_class(&train.1, classes);
        let majority = percent(test.1.iter().filter(|&&y| y == maj).count(), n_test);
        let probe = LogisticProbe::fit(&train.0, &train.1, classes, config.epochs, config.lr);
        let hits = test
            .0
            .iter()
            .zip(&test.1)
            .filter(|(x, &y)| probe.predict(x) == y)
            .count();
        rows.push(ProbeRow {
            feature: feature.clone(),
            probe: percent(hits, n_test),
            majority,
            classes,
            train: n_train,
            test: n_test,
            degenerate: false,
        });
    }
    Ok(ProbeReport { rows })
}

/// Highest-scoring source; ties go to the lexicographically first.
pub fn best_by_score(scores: &BTreeMap<String, f64>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (lang, &s) in scores {
        if best.map_or(true, |(_, b)| s > b) {
            best = Some((lang, s));
        }
    }
    best.map(|(l, _)| l.clone())
}

/// Transfer UAS of every source model on `target`, and the oracle best
/// source.
pub fn oracle_best_source(
    models: &BTreeMap<String, ParserParameters>,
    target: &Treebank,
    inputs: LanguageInputs,
) -> Result<(String, BTreeMap<String, f64>), AnalysisError> {
    if models.is_empty() {
        return Err(AnalysisError::Argument("no source models".into()));
    }
    let scores = models
        .par_iter()
        .map(|(lang, model)| {
            let pred = model.parse_treebank(target, inputs)?;
            Ok((lang.clone(), evaluate(&pred, target)?.uas))
        })
        .collect::<Result<BTreeMap<_, _>, AnalysisError>>()?;
    let best = best_by_score(&scores).expect("non-empty");
    Ok((best, scores))
}

/// Candidate sources ordered by distance to `target`, ties by name.
pub fn neighbours<'a>(
    typologies: &'a BTreeMap<String, TypologyVector>,
    target: &str,
    sources: &'a [String],
) -> Result<Vec<&'a String>, AnalysisError> {
    let t = typologies
        .get(target)
        .ok_or_else(|| AnalysisError::Argument(format!("no typology vector for {target}")))?;
    let mut ranked = Vec::new();
    for s in sources.iter().filter(|s| s.as_str() != target) {
        let v = typologies
            .get(s)
            .ok_or_else(|| AnalysisError::Argument(format!("no typology vector for {s}")))?;
        if v.kind != t.kind || v.dim() != t.dim() {
            return Err(AnalysisError::Argument(format!(
                "{s} and {target} have incompatible typology vectors"
            )));
        }
        ranked.push((t.distance(v), s));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(ranked.into_iter().map(|(_, s)| s).collect())
}

/// Percent of targets whose oracle source is among their `k` nearest
/// typological neighbours, per `k`.
pub fn precision_at_k(
    typologies: &BTreeMap<String, TypologyVector>,
    best_source: &BTreeMap<String, String>,
    sources: &[String],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, AnalysisError> {
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for (target, best) in best_source {
        let ranked = neighbours(typologies, target, sources)?;
        for &k in ks {
            if k > ranked.len() {
                log::warn!("P@{k} for {target}: only {} candidates", ranked.len());
            }
            let top = &ranked[..k.min(ranked.len())];
            if top.iter().any(|s| *s == best) {
                *hits.get_mut(&k).expect("seeded") += 1;
            }
        }
    }
    Ok(hits
        .into_iter()
        .map(|(k, h)| (k, percent(h, best_source.len())))
        .collect())
}

pub const DEFAULT_KS: [usize; 4] = [1, 3, 5, 10];

/// Per-language cluster, distance to its centroid and a farthest-in-cluster
/// flag, followed by the full pairwise distance matrix.
pub fn cluster_report(
    clustering: &Clustering,
    typologies: &BTreeMap<String, TypologyVector>,
) -> Result<String, AnalysisError> {
    let mut rows = Vec::new();
    for (lang, &c) in &clustering.assignments {
        let v = typologies
            .get(lang)
            .ok_or_else(|| AnalysisError::Argument(format!("no typology vector for {lang}")))?;
        let d = euclidean(&v.values, &clustering.centroids[c]);
        rows.push((lang, c, d));
    }
    let mut farthest: BTreeMap<usize, f64> = BTreeMap::new();
    for &(_, c, d) in &rows {
        let e = farthest.entry(c).or_insert(d);
        *e = e.max(d);
    }
    let mut table = Table::new(["language", "cluster", "centroid_distance", "farthest"]);
    for &(lang, c, d) in &rows {
        table.push([
            lang.clone(),
            c.to_string(),
            format!("{d:.6}"),
            ((d == farthest[&c]) as u8).to_string(),
        ]);
    }
    let langs: Vec<&String> = rows.iter().map(|r| r.0).collect();
    let mut matrix = Table::new(std::iter::once("language".to_string()).chain(langs.iter().map(|l| l.to_string())));
    for a in &langs {
        let va = &typologies[*a];
        let mut row = vec![a.to_string()];
        row.extend(langs.iter().map(|b| format!("{:.6}", va.distance(&typologies[*b]))));
        matrix.push(row);
    }
    Ok(format!("{}\n{}", table.render(), matrix.render()))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
