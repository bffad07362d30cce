//! Typology representations of languages.
//!
//! Four kinds of vectors are produced here, all living in `[0, 1]^d`:
//!
//! * linguist-annotated WALS values as a k-hot vector,
//! * Liu directionalities, the per-relation proportion of head-first arcs,
//! * surface statistics computed from POS sequences alone,
//! * one-hot K-Means cluster memberships.
//!
//! Corpus-derived WALS values for the word-order features are obtained from
//! the dominance of arc directions in a treebank.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::treebank::{Inventory, Treebank};

#[derive(Debug, Error)]
pub enum TypologyError {
    #[error("feature {feature}: value {value:?} is not in the schema")]
    UnknownValue { feature: String, value: String },
    #[error("feature {0} is not in the schema")]
    UnknownFeature(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Relations whose directionalities make up the Liu vector: the UD v1
/// relations attested in at least 20 languages.
pub const LIU_RELATIONS: [&str; 32] = [
    "cc",
    "conj",
    "case",
    "nsubj",
    "nmod",
    "dobj",
    "mark",
    "advcl",
    "amod",
    "advmod",
    "neg",
    "nummod",
    "xcomp",
    "ccomp",
    "cop",
    "acl",
    "aux",
    "punct",
    "det",
    "appos",
    "iobj",
    "dep",
    "csubj",
    "parataxis",
    "mwe",
    "name",
    "nsubjpass",
    "compound",
    "auxpass",
    "csubjpass",
    "vocative",
    "discourse",
];

/// Word-order features used across the pipeline.
pub const WORD_ORDER_FEATURES: [&str; 7] = ["81A", "82A", "83A", "85A", "86A", "87A", "88A"];

/// Features that can be derived from a parsed corpus.
pub const CORPUS_FEATURES: [&str; 6] = ["82A", "83A", "85A", "86A", "87A", "88A"];

pub const MIXED: &str = "Mixed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TypologyKind {
    Linguistic,
    Directionality,
    Surface,
    ClusterOnehot,
}

impl fmt::Display for TypologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TypologyKind::Linguistic => "LINGUISTIC",
            TypologyKind::Directionality => "DIRECTIONALITY",
            TypologyKind::Surface => "SURFACE",
            TypologyKind::ClusterOnehot => "CLUSTER_ONEHOT",
        })
    }
}

impl FromStr for TypologyKind {
    type Err = TypologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "LINGUISTIC" => Ok(TypologyKind::Linguistic),
            "DIRECTIONALITY" => Ok(TypologyKind::Directionality),
            "SURFACE" => Ok(TypologyKind::Surface),
            "CLUSTER_ONEHOT" => Ok(TypologyKind::ClusterOnehot),
            other => Err(TypologyError::Argument(format!("unknown typology kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypologyVector {
    pub kind: TypologyKind,
    pub values: Vec<f64>,
}

impl TypologyVector {
    pub fn new(kind: TypologyKind, values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        TypologyVector { kind, values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &TypologyVector) -> f64 {
        squared_distance(&self.values, &other.values).sqrt()
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Renders `language<TAB>kind<TAB>v1,v2,...` lines in language order.
/// Values use the shortest representation that parses back exactly.
pub fn write_vectors_tsv(vectors: &BTreeMap<String, TypologyVector>) -> String {
    let mut out = String::new();
    for (lang, v) in vectors {
        let values: Vec<String> = v.values.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&format!("{lang}\t{}\t{}\n", v.kind, values.join(",")));
    }
    out
}

pub fn read_vectors_tsv(text: &str) -> Result<BTreeMap<String, TypologyVector>, TypologyError> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| TypologyError::Format {
            line: i + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(err(format!("expected 3 columns, found {}", cols.len())));
        }
        let kind: TypologyKind = cols[1].parse()?;
        let values = cols[2]
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(e.to_string()))?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(err("component outside [0, 1]".into()));
        }
        out.insert(cols[0].to_string(), TypologyVector { kind, values });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalsSchema {
    pub features: Vec<(String, Vec<String>)>,
}

impl Default for WalsSchema {
    fn default() -> Self {
        let f = |id: &str, values: &[&str]| {
            (
                id.to_string(),
                values.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            )
        };
        WalsSchema {
            features: vec![
                f("81A", &["SOV", "SVO", "VSO", "VOS", "OVS", "OSV", "No dominant order"]),
                f("82A", &["SV", "VS", MIXED]),
                f("83A", &["OV", "VO", MIXED]),
                f("85A", &["Prepositions", "Postpositions"]),
                f("86A", &["Genitive-Noun", "Noun-Genitive", MIXED]),
                f("87A", &["Adjective-Noun", "Noun-Adjective", MIXED]),
                f("88A", &["Demonstrative-Noun", "Noun-Demonstrative", MIXED]),
            ],
        }
    }
}

impl WalsSchema {
    pub fn new(features: Vec<(String, Vec<String>)>) -> Result<Self, TypologyError> {
        for (i, (id, values)) in features.iter().enumerate() {
            if values.is_empty() {
                return Err(TypologyError::Argument(format!("feature {id} has no values")));
            }
            if features[..i].iter().any(|(other, _)| other == id) {
                return Err(TypologyError::Argument(format!("duplicate feature {id}")));
            }
        }
        Ok(WalsSchema { features })
    }

    /// Parses `feature_id,value1|value2|...` lines.
    pub fn parse(text: &str) -> Result<Self, TypologyError> {
        let mut features = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, values) = line.split_once(',').ok_or(TypologyError::Format {
                line: i + 1,
                message: "expected feature_id,value1|value2|...".into(),
            })?;
            features.push((
                id.trim().to_string(),
                values.split('|').map(|v| v.trim().to_string()).collect(),
            ));
        }
        WalsSchema::new(features)
    }

    pub fn render(&self) -> String {
        self.features
            .iter()
            .map(|(id, values)| format!("{id},{}\n", values.join("|")))
            .collect()
    }

    pub fn values(&self, feature: &str) -> Option<&[String]> {
        self.features
            .iter()
            .find(|(id, _)| id == feature)
            .map(|(_, v)| v.as_slice())
    }

    pub fn khot_dim(&self) -> usize {
        self.features.iter().map(|(_, v)| v.len()).sum()
    }
}

/// Per-language categorical assignments. `None` marks a missing value.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WalsRecord {
    pub language: String,
    pub assignments: BTreeMap<String, Option<String>>,
}

impl WalsRecord {
    pub fn new(language: impl Into<String>) -> Self {
        WalsRecord {
            language: language.into(),
            assignments: BTreeMap::new(),
        }
    }

    pub fn with(mut self, feature: &str, value: &str) -> Self {
        self.assignments
            .insert(feature.to_string(), Some(value.to_string()));
        self
    }

    pub fn get(&self, feature: &str) -> Option<&str> {
        self.assignments.get(feature).and_then(|v| v.as_deref())
    }

    pub fn validate(&self, schema: &WalsSchema) -> Result<(), TypologyError> {
        for (feature, value) in &self.assignments {
            let values = schema
                .values(feature)
                .ok_or_else(|| TypologyError::UnknownFeature(feature.clone()))?;
            if let Some(v) = value {
                if !values.contains(v) {
                    return Err(TypologyError::UnknownValue {
                        feature: feature.clone(),
                        value: v.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Reads `language,feature_id,value` CSV (with header). An empty value or
/// `MISSING` records a missing feature.
pub fn read_wals_csv(text: &str) -> Result<BTreeMap<String, WalsRecord>, TypologyError> {
    let mut records: BTreeMap<String, WalsRecord> = BTreeMap::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "language,feature_id,value" => {}
        _ => {
            return Err(TypologyError::Format {
                line: 1,
                message: "expected header `language,feature_id,value`".into(),
            })
        }
    }
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(3, ',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(TypologyError::Format {
                line: i + 1,
                message: "expected language,feature_id,value".into(),
            });
        }
        let value = match cols[2] {
            "" | "MISSING" => None,
            v => Some(v.to_string()),
        };
        records
            .entry(cols[0].to_string())
            .or_insert_with(|| WalsRecord::new(cols[0]))
            .assignments
            .insert(cols[1].to_string(), value);
    }
    Ok(records)
}

pub fn write_wals_csv<'a>(records: impl IntoIterator<Item = &'a WalsRecord>) -> String {
    let mut out = String::from("language,feature_id,value\n");
    for r in records {
        for (f, v) in &r.assignments {
            out.push_str(&format!(
                "{},{},{}\n",
                r.language,
                f,
                v.as_deref().unwrap_or("MISSING")
            ));
        }
    }
    out
}

/// Concatenated one-hot blocks in schema order; missing features give an
/// all-zero block.
pub fn wals_khot(record: &WalsRecord, schema: &WalsSchema) -> Result<TypologyVector, TypologyError> {
    record.validate(schema)?;
    let mut values = Vec::with_capacity(schema.khot_dim());
    for (feature, feature_values) in &schema.features {
        let assigned = record.get(feature);
        values.extend(
            feature_values
                .iter()
                .map(|v| if Some(v.as_str()) == assigned { 1.0 } else { 0.0 }),
        );
    }
    Ok(TypologyVector::new(TypologyKind::Linguistic, values))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivationConfig {
    /// Dominance threshold, in (0.5, 1].
    pub delta: f64,
    pub relation_subset: Vec<String>,
}

impl Default for DerivationConfig {
    fn default() -> Self {
        DerivationConfig {
            delta: 0.75,
            relation_subset: LIU_RELATIONS.iter().map(|r| r.to_string()).collect(),
        }
    }
}

/// Per-relation proportion of arcs whose head precedes the dependent.
/// Relations absent from the treebank get 0.5. ROOT attachments are not
/// arcs between tokens and are ignored.
pub fn liu_directionalities(treebank: &Treebank, cfg: &DerivationConfig) -> TypologyVector {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for arc in treebank.arcs().filter(|a| a.head != 0) {
        let entry = counts.entry(arc.deprel).or_default();
        if arc.head_first() {
            entry.0 += 1;
        }
        entry.1 += 1;
    }
    let values = cfg
        .relation_subset
        .iter()
        .map(|rel| match counts.get(rel.as_str()) {
            Some(&(right, total)) if total > 0 => right as f64 / total as f64,
            _ => 0.5,
        })
        .collect();
    TypologyVector::new(TypologyKind::Directionality, values)
}

pub const SURFACE_WINDOWS: [usize; 4] = [1, 3, 8, 100];

/// Precedence statistics over POS sequences.
///
/// For each window `w` and ordered tag pair `(p, q)` the component is
/// `(left + 1) / (left + right + 2)` where `left` counts occurrences of `p`
/// before `q` within distance `w` and `right` counts `q` before `p`. These
/// are followed by the per-tag sentence-initial and sentence-final
/// frequencies. Layout: `windows × |P| × |P|` then `|P|` initial then `|P|`
/// final.
pub fn surface_statistics(
    treebank: &Treebank,
    inventory: &Inventory,
    windows: &[usize],
) -> TypologyVector {
    let p = inventory.upos.len();
    let mut values = Vec::with_capacity(p * p * windows.len() + 2 * p);
    let tagged: Vec<Vec<usize>> = treebank
        .sentences
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .filter_map(|t| inventory.pos_index(&t.upos))
                .collect()
        })
        .collect();
    for &w in windows {
        let mut before = vec![0u64; p * p];
        for tags in &tagged {
            for (a, &ta) in tags.iter().enumerate() {
                for &tb in tags.iter().skip(a + 1).take(w) {
                    before[ta * p + tb] += 1;
                }
            }
        }
        for x in 0..p {
            for y in 0..p {
                let left = before[x * p + y] as f64;
                let right = before[y * p + x] as f64;
                values.push((left + 1.0) / (left + right + 2.0));
            }
        }
    }
    let nonempty: Vec<&Vec<usize>> = tagged.iter().filter(|t| !t.is_empty()).collect();
    let total = nonempty.len().max(1) as f64;
    let mut initial = vec![0.0; p];
    let mut last = vec![0.0; p];
    for tags in &nonempty {
        initial[tags[0]] += 1.0;
        last[*tags.last().unwrap()] += 1.0;
    }
    values.extend(initial.iter().map(|c| c / total));
    values.extend(last.iter().map(|c| c / total));
    TypologyVector::new(TypologyKind::Surface, values)
}

/// Arc selection and value naming for one corpus-derivable feature.
#[derive(Clone, Copy, Debug)]
pub struct CorpusRule {
    pub feature: &'static str,
    relations: &'static [&'static str],
    heads: &'static [&'static str],
    modifiers: &'static [&'static str],
    /// Value when head-first arcs dominate.
    pub right_value: &'static str,
    /// Value when head-last arcs dominate.
    pub left_value: &'static str,
    /// Features without a mixed value split at 0.5.
    pub has_mixed: bool,
}

impl CorpusRule {
    fn matches(&self, deprel: &str, head: Option<&str>, modifier: &str) -> bool {
        let Some(head) = head else { return false };
        (self.relations.is_empty() || self.relations.contains(&deprel))
            && (self.heads.is_empty() || self.heads.contains(&head))
            && self.modifiers.contains(&modifier)
    }

    /// Classifies a head-first/head-last arc count pair.
    pub fn classify(&self, right: usize, left: usize, delta: f64) -> Option<&'static str> {
        let total = right + left;
        if total == 0 {
            return None;
        }
        let ratio = right as f64 / total as f64;
        Some(if !self.has_mixed {
            if ratio >= 0.5 {
                self.right_value
            } else {
                self.left_value
            }
        } else if ratio > delta {
            self.right_value
        } else if ratio < 1.0 - delta {
            self.left_value
        } else {
            MIXED
        })
    }
}

pub const CORPUS_RULES: [CorpusRule; 6] = [
    CorpusRule {
        feature: "82A",
        relations: &["nsubj", "csubj"],
        heads: &["VERB"],
        modifiers: &["NOUN", "PRON"],
        right_value: "VS",
        left_value: "SV",
        has_mixed: true,
    },
    CorpusRule {
        feature: "83A",
        relations: &["dobj", "iobj"],
        heads: &["VERB"],
        modifiers: &["NOUN", "PRON"],
        right_value: "VO",
        left_value: "OV",
        has_mixed: true,
    },
    CorpusRule {
        feature: "85A",
        relations: &[],
        heads: &["NOUN", "PRON"],
        modifiers: &["ADP"],
        right_value: "Postpositions",
        left_value: "Prepositions",
        has_mixed: false,
    },
    CorpusRule {
        feature: "86A",
        relations: &[],
        heads: &["NOUN"],
        modifiers: &["NOUN"],
        right_value: "Noun-Genitive",
        left_value: "Genitive-Noun",
        has_mixed: true,
    },
    CorpusRule {
        feature: "87A",
        relations: &[],
        heads: &["NOUN"],
        modifiers: &["ADJ"],
        right_value: "Noun-Adjective",
        left_value: "Adjective-Noun",
        has_mixed: true,
    },
    CorpusRule {
        feature: "88A",
        relations: &["det"],
        heads: &[],
        modifiers: &["DET"],
        right_value: "Noun-Demonstrative",
        left_value: "Demonstrative-Noun",
        has_mixed: true,
    },
];

pub fn corpus_rule(feature: &str) -> Option<&'static CorpusRule> {
    CORPUS_RULES.iter().find(|r| r.feature == feature)
}

/// Head-first and head-last arc counts per corpus-derivable feature.
pub fn corpus_direction_counts(treebank: &Treebank) -> BTreeMap<&'static str, (usize, usize)> {
    let mut counts: BTreeMap<&'static str, (usize, usize)> =
        CORPUS_RULES.iter().map(|r| (r.feature, (0, 0))).collect();
    for arc in treebank.arcs() {
        for rule in &CORPUS_RULES {
            if rule.matches(arc.deprel, arc.head_upos, arc.dep_upos) {
                let c = counts.get_mut(rule.feature).unwrap();
                if arc.head_first() {
                    c.0 += 1;
                } else {
                    c.1 += 1;
                }
            }
        }
    }
    counts
}

/// WALS word-order values read off the dominant arc directions of a
/// treebank. Features without matching arcs are missing.
pub fn corpus_wals(treebank: &Treebank, cfg: &DerivationConfig) -> WalsRecord {
    let counts = corpus_direction_counts(treebank);
    let mut record = WalsRecord::new(treebank.language.clone());
    for rule in &CORPUS_RULES {
        let (right, left) = counts[rule.feature];
        record.assignments.insert(
            rule.feature.to_string(),
            rule.classify(right, left, cfg.delta).map(str::to_string),
        );
    }
    record
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchOutcome {
    Match,
    Mismatch,
    Undefined,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchSummary {
    pub per_feature: BTreeMap<String, MatchOutcome>,
}

impl MatchSummary {
    /// `None` when no feature is defined in both records.
    pub fn accuracy(&self) -> Option<f64> {
        let defined = self
            .per_feature
            .values()
            .filter(|o| **o != MatchOutcome::Undefined)
            .count();
        let matches = self
            .per_feature
            .values()
            .filter(|o| **o == MatchOutcome::Match)
            .count();
        (defined > 0).then(|| matches as f64 / defined as f64)
    }
}

pub fn match_accuracy(a: &WalsRecord, b: &WalsRecord) -> MatchSummary {
    let features: std::collections::BTreeSet<&String> =
        a.assignments.keys().chain(b.assignments.keys()).collect();
    let per_feature = features
        .into_iter()
        .map(|f| {
            let outcome = match (a.get(f), b.get(f)) {
                (Some(x), Some(y)) if x == y => MatchOutcome::Match,
                (Some(_), Some(_)) => MatchOutcome::Mismatch,
                _ => MatchOutcome::Undefined,
            };
            (f.clone(), outcome)
        })
        .collect();
    MatchSummary { per_feature }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignments: BTreeMap<String, usize>,
    pub onehots: BTreeMap<String, TypologyVector>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's algorithm on squared Euclidean distance with `restarts`
/// independently seeded initialisations; the lowest-inertia run wins (ties
/// go to the earliest restart).
pub fn kmeans_cluster(
    vectors: &BTreeMap<String, TypologyVector>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> Result<Clustering, TypologyError> {
    let languages: Vec<&String> = vectors.keys().collect();
    let points: Vec<&[f64]> = vectors.values().map(|v| v.values.as_slice()).collect();
    if k == 0 || k > points.len() {
        return Err(TypologyError::Argument(format!(
            "k = {k} must be in 1..={}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(TypologyError::Argument("vectors differ in dimension".into()));
    }

    let mut best: Option<LloydRun> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let init: Vec<Vec<f64>> = sample(&mut rng, points.len(), k)
            .into_iter()
            .map(|i| points[i].to_vec())
            .collect();
        let run = lloyd(&points, init);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.unwrap();

    let assignments = languages
        .iter()
        .zip(&best.assignment)
        .map(|(l, &c)| ((*l).clone(), c))
        .collect::<BTreeMap<_, _>>();
    let onehots = assignments
        .iter()
        .map(|(l, &c)| {
            let mut v = vec![0.0; k];
            v[c] = 1.0;
            (l.clone(), TypologyVector::new(TypologyKind::ClusterOnehot, v))
        })
        .collect();
    Ok(Clustering {
        assignments,
        onehots,
        centroids: best.centroids,
        inertia: best.inertia,
        history: best.history,
    })
}

struct LloydRun {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    history: Vec<f64>,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> LloydRun {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        // empty clusters take the point farthest from its centroid
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&i, &j| {
                        let di = squared_distance(points[i], &centroids[assignment[i]]);
                        let dj = squared_distance(points[j], &centroids[assignment[j]]);
                        di.partial_cmp(&dj).unwrap().then(j.cmp(&i))
                    });
                if let Some(i) = far {
                    counts[assignment[i]] -= 1;
                    assignment[i] = c;
                    counts[c] = 1;
                    centroids[c] = points[i].to_vec();
                }
            }
        }
        history.push(inertia(points, &centroids, &assignment));
        // assignment step
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        let changed = next != assignment;
        assignment = next;
        if !changed {
            break;
        }
    }
    let inertia = inertia(points, &centroids, &assignment);
    history.push(inertia);
    LloydRun {
        assignment,
        centroids,
        inertia,
        history,
    }
}

fn inertia(points: &[&[f64]], centroids: &[Vec<f64>], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| squared_distance(p, &centroids[c]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treebank::{synth_mirror_pair, Sentence};

    fn toy_schema() -> WalsSchema {
        WalsSchema::new(vec![(
            "82A".into(),
            vec!["SV".into(), "VS".into(), "Mixed".into()],
        )])
        .unwrap()
    }

    #[test]
    fn khot_one_hot_block() {
        let v = wals_khot(&WalsRecord::new("x").with("82A", "SV"), &toy_schema()).unwrap();
        assert_eq!(v.values, vec![1.0, 0.0, 0.0]);
        assert_eq!(v.kind, TypologyKind::Linguistic);
    }

    #[test]
    fn khot_missing_block_is_zero() {
        let mut r = WalsRecord::new("x");
        r.assignments.insert("82A".into(), None);
        assert_eq!(wals_khot(&r, &toy_schema()).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn khot_rejects_unknown_value() {
        let err = wals_khot(&WalsRecord::new("x").with("82A", "XY"), &toy_schema()).unwrap_err();
        assert!(err.to_string().contains("82A") && err.to_string().contains("XY"));
    }

    #[test]
    fn khot_dimension_twenty() {
        let counts = [3usize, 3, 2, 3, 3, 3, 3];
        let features: Vec<(String, Vec<String>)> = WORD_ORDER_FEATURES
            .iter()
            .zip(counts)
            .map(|(f, c)| (f.to_string(), (0..c).map(|i| format!("v{i}")).collect()))
            .collect();
        let schema = WalsSchema::new(features).unwrap();
        let mut record = WalsRecord::new("x");
        for f in WORD_ORDER_FEATURES {
            record = record.with(f, "v1");
        }
        let v = wals_khot(&record, &schema).unwrap();
        assert_eq!(v.dim(), 20);
        assert_eq!(v.values.iter().sum::<f64>(), 7.0);
    }

    #[test]
    fn schema_round_trip() {
        let schema = WalsSchema::default();
        assert_eq!(WalsSchema::parse(&schema.render()).unwrap(), schema);
    }

    #[test]
    fn wals_csv_round_trip() {
        let mut r = WalsRecord::new("ar").with("82A", "SV").with("81A", "VSO");
        r.assignments.insert("85A".into(), None);
        let text = write_wals_csv([&r]);
        let back = read_wals_csv(&text).unwrap();
        assert_eq!(back["ar"], r);
    }

    fn fixture_three_nsubj() -> Treebank {
        // two head-first nsubj arcs, one head-last
        let s1 = Sentence::from_parts(&["VERB", "PRON"], &[0, 1], &["root", "nsubj"]);
        let s2 = Sentence::from_parts(&["VERB", "NOUN"], &[0, 1], &["root", "nsubj"]);
        let s3 = Sentence::from_parts(&["NOUN", "ADJ", "VERB"], &[3, 1, 0], &["nsubj", "amod", "root"]);
        Treebank::new("x", vec![s1, s2, s3])
    }

    #[test]
    fn directionality_examples() {
        let cfg = DerivationConfig::default();
        let v = liu_directionalities(&fixture_three_nsubj(), &cfg);
        let idx = |r: &str| cfg.relation_subset.iter().position(|x| x == r).unwrap();
        assert!((v.values[idx("nsubj")] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(v.values[idx("vocative")], 0.5);
        assert_eq!(v.dim(), 32);

        let left_amod = Treebank::new(
            "y",
            vec![Sentence::from_parts(&["ADJ", "NOUN"], &[2, 0], &["amod", "root"])],
        );
        assert_eq!(liu_directionalities(&left_amod, &cfg).values[idx("amod")], 0.0);
    }

    #[test]
    fn surface_two_token_example() {
        let inv = Inventory::ud_v1();
        let tb = Treebank::new(
            "x",
            vec![Sentence::from_parts(&["NOUN", "VERB"], &[2, 0], &["nsubj", "root"])],
        );
        let v = surface_statistics(&tb, &inv, &SURFACE_WINDOWS);
        assert_eq!(v.dim(), 1190);
        let p = inv.upos.len();
        let noun = inv.pos_index("NOUN").unwrap();
        let verb = inv.pos_index("VERB").unwrap();
        assert!((v.values[noun * p + verb] - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.values[verb * p + noun] - 1.0 / 3.0).abs() < 1e-12);
        let initial = 4 * p * p;
        assert_eq!(v.values[initial + noun], 1.0);
        assert_eq!(v.values[initial + p + verb], 1.0);
        assert!(v.values[..initial].iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn corpus_rules_follow_arrow_convention() {
        // ADP before its NOUN head: head-last arc.
        let pre = Treebank::new(
            "x",
            vec![Sentence::from_parts(&["ADP", "NOUN"], &[2, 0], &["case", "root"]); 3],
        );
        assert_eq!(corpus_wals(&pre, &DerivationConfig::default()).get("85A"), Some("Prepositions"));
        assert_eq!(
            corpus_wals(&pre.reversed(), &DerivationConfig::default()).get("85A"),
            Some("Postpositions")
        );
        // nothing matches 82A
        assert_eq!(corpus_wals(&pre, &DerivationConfig::default()).get("82A"), None);
    }

    #[test]
    fn published_counts_classify_as_mixed() {
        let rule = corpus_rule("82A").unwrap();
        assert_eq!(rule.classify(4875, 2489, 0.75), Some(MIXED));
        assert_eq!(rule.classify(13925, 32510, 0.75), Some(MIXED));
        assert_eq!(rule.classify(10, 0, 0.75), Some("VS"));
        assert_eq!(rule.classify(0, 10, 0.75), Some("SV"));
    }

    #[test]
    fn corpus_wals_invariant_to_order_and_duplication() {
        let (a, b) = synth_mirror_pair(60, 10, 4);
        let cfg = DerivationConfig::default();
        for tb in [a, b] {
            let base = corpus_wals(&tb, &cfg);
            let mut shuffled = tb.clone();
            shuffled.sentences.reverse();
            assert_eq!(corpus_wals(&shuffled, &cfg), base);
            let mut doubled = tb.clone();
            doubled.sentences.extend(tb.sentences.clone());
            assert_eq!(corpus_wals(&doubled, &cfg), base);
        }
    }

    #[test]
    fn match_accuracy_cases() {
        let a = WalsRecord::new("ar").with("82A", "SV").with("83A", "VO");
        assert_eq!(match_accuracy(&a, &a).accuracy(), Some(1.0));
        let b = WalsRecord::new("ar").with("82A", "Mixed").with("83A", "VO");
        let m = match_accuracy(&a, &b);
        assert_eq!(m.per_feature["82A"], MatchOutcome::Mismatch);
        assert_eq!(m.accuracy(), Some(0.5));
        assert_eq!(m, match_accuracy(&b, &a));
        let mut empty = WalsRecord::new("ar");
        empty.assignments.insert("82A".into(), None);
        assert_eq!(match_accuracy(&a, &empty).accuracy(), None);
    }

    fn vecs(points: &[(&str, &[f64])]) -> BTreeMap<String, TypologyVector> {
        points
            .iter()
            .map(|(l, v)| (l.to_string(), TypologyVector::new(TypologyKind::Linguistic, v.to_vec())))
            .collect()
    }

    #[test]
    fn kmeans_k_equals_n() {
        let v = vecs(&[("a", &[0.0, 1.0]), ("b", &[1.0, 0.0]), ("c", &[1.0, 1.0])]);
        let c = kmeans_cluster(&v, 3, 10, 1).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut ids: Vec<usize> = c.assignments.values().copied().collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn kmeans_recovers_separated_groups() {
        let v = vecs(&[
            ("a1", &[0.0, 0.0]),
            ("a2", &[0.0, 0.0]),
            ("a3", &[0.1, 0.0]),
            ("b1", &[1.0, 1.0]),
            ("b2", &[1.0, 1.0]),
            ("b3", &[0.9, 1.0]),
        ]);
        let c = kmeans_cluster(&v, 2, 10, 9).unwrap();
        assert_eq!(c.assignments["a1"], c.assignments["a3"]);
        assert_eq!(c.assignments["b1"], c.assignments["b3"]);
        assert_ne!(c.assignments["a1"], c.assignments["b1"]);
        assert_eq!(c, kmeans_cluster(&v, 2, 10, 9).unwrap());
        for oh in c.onehots.values() {
            assert_eq!(oh.dim(), 2);
            assert_eq!(oh.values.iter().sum::<f64>(), 1.0);
        }
        assert!(kmeans_cluster(&v, 7, 10, 9).is_err());
    }

    #[test]
    fn vectors_tsv_round_trip() {
        let v = vecs(&[("a", &[0.1, 0.7]), ("b", &[1.0 / 3.0, 0.0])]);
        assert_eq!(read_vectors_tsv(&write_vectors_tsv(&v)).unwrap(), v);
    }
}
