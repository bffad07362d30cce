//! Python bindings: treebanks, typology vectors, decoding, the parser and
//! the evaluation statistics.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use typoparse::analysis::{paired_permutation_test, precision_at_k as p_at_k, DEFAULT_PERMUTATIONS};
use typoparse::parser::{finetune, load_checkpoint, save_checkpoint, Checkpoint, LogRow, Trainer, TrainingData};
use typoparse::treebank::{read_conllu, synth_mirror_pair as synth_pair, to_conllu, truncate, ReadOptions};
use typoparse::typology::{self as typ, DerivationConfig, SURFACE_WINDOWS};
use typoparse::{
    ArcWeights, Inventory, LanguageInputs, ParserConfig, ParserParameters, Sentence, TypologyKind, WalsRecord,
    WalsSchema,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn inventory(schema: &str) -> PyResult<Inventory> {
    match schema {
        "ud1" => Ok(Inventory::ud_v1()),
        "ud2" => Ok(Inventory::ud_v2()),
        other => Err(PyValueError::new_err(format!("unknown schema {other}, expected ud1 or ud2"))),
    }
}

/// A delexicalized treebank.
#[pyclass(name = "Treebank", module = "typoparse_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTreebank {
    inner: typoparse::Treebank,
}

#[pymethods]
impl PyTreebank {
    /// Reads CoNLL-U text. Malformed trees are skipped unless `strict`.
    #[staticmethod]
    #[pyo3(signature = (text, language, schema = "ud1", strict = false))]
    fn from_conllu(text: &str, language: &str, schema: &str, strict: bool) -> PyResult<Self> {
        let options = ReadOptions {
            strict,
            ..ReadOptions::default()
        };
        let (inner, _) = read_conllu(text, language, &inventory(schema)?, options).map_err(value_err)?;
        Ok(PyTreebank { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, language, schema = "ud1", strict = false))]
    fn read(path: &str, language: &str, schema: &str, strict: bool) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_conllu(&text, language, schema, strict)
    }

    /// Builds a treebank from per-sentence `(upos, heads, deprels)` lists.
    #[staticmethod]
    fn from_sentences(language: &str, sentences: Vec<(Vec<String>, Vec<usize>, Vec<String>)>) -> PyResult<Self> {
        let mut out = Vec::with_capacity(sentences.len());
        for (k, (upos, heads, rels)) in sentences.into_iter().enumerate() {
            if upos.len() != heads.len() || heads.len() != rels.len() {
                return Err(PyValueError::new_err(format!("sentence {k}: column lengths differ")));
            }
            let upos: Vec<&str> = upos.iter().map(String::as_str).collect();
            let rels: Vec<&str> = rels.iter().map(String::as_str).collect();
            let s = Sentence::from_parts(&upos, &heads, &rels);
            s.validate().map_err(|e| PyValueError::new_err(format!("sentence {k}: {e}")))?;
            out.push(s);
        }
        Ok(PyTreebank {
            inner: typoparse::Treebank::new(language, out),
        })
    }

    fn to_conllu(&self) -> String {
        to_conllu(&self.inner)
    }

    #[getter]
    fn language(&self) -> String {
        self.inner.language.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.sentences.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Treebank({:?}, {} sentences, {} tokens)",
            self.inner.language,
            self.inner.sentences.len(),
            self.inner.token_count()
        )
    }

    fn token_count(&self) -> usize {
        self.inner.token_count()
    }

    fn heads(&self) -> Vec<Vec<usize>> {
        self.inner.sentences.iter().map(Sentence::heads).collect()
    }

    fn upos(&self) -> Vec<Vec<String>> {
        self.inner
            .sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.upos.clone()).collect())
            .collect()
    }

    fn deprels(&self) -> Vec<Vec<String>> {
        self.inner
            .sentences
            .iter()
            .map(|s| s.tokens.iter().map(|t| t.deprel.clone()).collect())
            .collect()
    }

    /// Token order reversed within every sentence.
    fn reversed(&self) -> Self {
        PyTreebank {
            inner: self.inner.reversed(),
        }
    }

    /// Longest sentence prefix with at most `max_tokens` tokens.
    fn truncate(&self, max_tokens: usize) -> Self {
        PyTreebank {
            inner: truncate(&self.inner, max_tokens),
        }
    }
}

/// Head-final language `A` and head-initial language `B` over shared POS
/// sequences.
#[pyfunction]
#[pyo3(signature = (n_sentences, max_len = 10, seed = 1))]
fn synth_mirror_pair(n_sentences: usize, max_len: usize, seed: u64) -> (PyTreebank, PyTreebank) {
    let (a, b) = synth_pair(n_sentences, max_len, seed);
    (PyTreebank { inner: a }, PyTreebank { inner: b })
}

#[pyclass(name = "TypologyVector", module = "typoparse_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyTypologyVector {
    inner: typoparse::TypologyVector,
}

#[pymethods]
impl PyTypologyVector {
    #[new]
    fn new(kind: &str, values: Vec<f64>) -> PyResult<Self> {
        let kind: TypologyKind = kind.parse().map_err(value_err)?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PyValueError::new_err("components must lie in [0, 1]"));
        }
        Ok(PyTypologyVector {
            inner: typoparse::TypologyVector::new(kind, values),
        })
    }

    #[getter]
    fn kind(&self) -> String {
        self.inner.kind.to_string()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.inner.values.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("TypologyVector({}, dim={})", self.inner.kind, self.inner.dim())
    }

    fn distance(&self, other: &PyTypologyVector) -> f64 {
        self.inner.distance(&other.inner)
    }
}

fn vector(inner: typoparse::TypologyVector) -> PyTypologyVector {
    PyTypologyVector { inner }
}

/// Share of head-first arcs per relation; 0.5 for absent relations.
#[pyfunction]
fn liu_directionalities(treebank: &PyTreebank) -> PyTypologyVector {
    vector(typ::liu_directionalities(&treebank.inner, &DerivationConfig::default()))
}

#[pyfunction]
#[pyo3(signature = (treebank, schema = "ud1"))]
fn surface_statistics(treebank: &PyTreebank, schema: &str) -> PyResult<PyTypologyVector> {
    Ok(vector(typ::surface_statistics(
        &treebank.inner,
        &inventory(schema)?,
        &SURFACE_WINDOWS,
    )))
}

/// WALS word-order values read off a treebank; `None` where no arc
/// matches.
#[pyfunction]
#[pyo3(signature = (treebank, delta = 0.75))]
fn corpus_wals(treebank: &PyTreebank, delta: f64) -> PyResult<BTreeMap<String, Option<String>>> {
    if !(delta > 0.5 && delta <= 1.0) {
        return Err(PyValueError::new_err("delta must be in (0.5, 1]"));
    }
    let cfg = DerivationConfig {
        delta,
        ..DerivationConfig::default()
    };
    Ok(typ::corpus_wals(&treebank.inner, &cfg).assignments)
}

fn record(language: &str, values: &BTreeMap<String, Option<String>>) -> WalsRecord {
    let mut r = WalsRecord::new(language);
    r.assignments = values.clone();
    r
}

/// K-hot encoding of WALS values under the default schema.
#[pyfunction]
fn wals_khot(values: BTreeMap<String, Option<String>>) -> PyResult<PyTypologyVector> {
    let r = record("_", &values);
    typ::wals_khot(&r, &WalsSchema::default()).map(vector).map_err(value_err)
}

/// Returns `(assignments, centroids, inertia)`.
#[pyfunction]
#[pyo3(signature = (vectors, k, restarts = 10, seed = 1))]
fn kmeans(
    vectors: BTreeMap<String, PyRef<'_, PyTypologyVector>>,
    k: usize,
    restarts: usize,
    seed: u64,
) -> PyResult<(BTreeMap<String, usize>, Vec<Vec<f64>>, f64)> {
    let map = vectors.into_iter().map(|(l, v)| (l, v.inner.clone())).collect();
    let c = typ::kmeans_cluster(&map, k, restarts, seed).map_err(value_err)?;
    Ok((c.assignments, c.centroids, c.inertia))
}

fn weights(scores: Vec<Vec<f64>>) -> PyResult<ArcWeights> {
    // rows are heads 0..=n, columns dependents 0..=n; column 0 is unused
    let rows: Vec<Vec<f64>> = scores.into_iter().map(|r| r.into_iter().skip(1).collect()).collect();
    ArcWeights::from_rows(&rows).map_err(value_err)
}

/// Maximum spanning arborescence of a `(n+1) x (n+1)` score matrix indexed
/// `[head][dependent]`; returns the head of each of tokens `1..=n`.
#[pyfunction]
fn cle_mst(scores: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    typoparse::cle_mst(&weights(scores)?).map_err(value_err)
}

/// Exhaustive search, for small `n`.
#[pyfunction]
fn brute_force_mst(scores: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    typoparse::brute_force_mst(&weights(scores)?).map_err(value_err)
}

/// UAS and LAS in percent plus per-arc head correctness.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, pred: &PyTreebank, gold: &PyTreebank) -> PyResult<Bound<'py, PyDict>> {
    let r = typoparse::evaluate(&pred.inner, &gold.inner).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("uas", r.uas)?;
    d.set_item("las", r.las)?;
    d.set_item("tokens", r.tokens)?;
    d.set_item("arcs", r.arcs)?;
    Ok(d)
}

/// Two-sided sign-flip test; returns `(p_value, observed_delta)`.
#[pyfunction]
#[pyo3(signature = (a, b, n_permutations = DEFAULT_PERMUTATIONS, seed = 1))]
fn permutation_test(a: Vec<bool>, b: Vec<bool>, n_permutations: usize, seed: u64) -> PyResult<(f64, f64)> {
    let r = paired_permutation_test(&a, &b, n_permutations, seed).map_err(value_err)?;
    Ok((r.p_value, r.observed_delta))
}

#[pyfunction]
fn precision_at_k(
    vectors: BTreeMap<String, PyRef<'_, PyTypologyVector>>,
    best_source: BTreeMap<String, String>,
    sources: Vec<String>,
    ks: Vec<usize>,
) -> PyResult<BTreeMap<usize, f64>> {
    let map = vectors.into_iter().map(|(l, v)| (l, v.inner.clone())).collect();
    p_at_k(&map, &best_source, &sources, &ks).map_err(value_err)
}

/// Side inputs handed in from Python, keyed by language.
struct Side {
    typology: BTreeMap<String, typoparse::TypologyVector>,
    wals: BTreeMap<String, WalsRecord>,
}

impl Side {
    fn new(
        typologies: Option<BTreeMap<String, PyRef<'_, PyTypologyVector>>>,
        wals: Option<BTreeMap<String, BTreeMap<String, Option<String>>>>,
    ) -> Self {
        Side {
            typology: typologies
                .unwrap_or_default()
                .into_iter()
                .map(|(l, v)| (l, v.inner.clone()))
                .collect(),
            wals: wals
                .unwrap_or_default()
                .iter()
                .map(|(l, v)| (l.clone(), record(l, v)))
                .collect(),
        }
    }
}

/// The biaffine parser. Keyword arguments override configuration fields
/// (`lstm_hidden=32`, `typology_mode="INPUT_FEATURE"`, ...).
#[pyclass(name = "Parser", module = "typoparse_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyParser {
    inner: ParserParameters,
}

#[pymethods]
impl PyParser {
    #[new]
    #[pyo3(signature = (typology_dim = 0, schema = "ud1", **config))]
    fn new(py: Python<'_>, typology_dim: usize, schema: &str, config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let config: ParserConfig = match config {
            Some(c) => {
                let json: String = py.import("json")?.call_method1("dumps", (c,))?.extract()?;
                serde_json::from_str(&json).map_err(value_err)?
            }
            None => ParserConfig::default(),
        };
        let inner = ParserParameters::init(config, inventory(schema)?, typology_dim, None).map_err(value_err)?;
        Ok(PyParser { inner })
    }

    /// Resolved configuration as JSON.
    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    #[getter]
    fn typology_dim(&self) -> usize {
        self.inner.typology_dim
    }

    fn parameter_count(&self) -> usize {
        self.inner.params.iter().map(|(_, t)| t.data().len()).sum()
    }

    /// Trains with early stopping on `dev`; keeps the best-dev weights and
    /// returns the log as `(update, loss, dev_uas)` rows.
    #[pyo3(signature = (train, dev = Vec::new(), typologies = None, wals = None))]
    fn train(
        &mut self,
        py: Python<'_>,
        train: Vec<PyRef<'_, PyTreebank>>,
        dev: Vec<PyRef<'_, PyTreebank>>,
        typologies: Option<BTreeMap<String, PyRef<'_, PyTypologyVector>>>,
        wals: Option<BTreeMap<String, BTreeMap<String, Option<String>>>>,
    ) -> PyResult<Vec<(u64, f64, Option<f64>)>> {
        let side = Side::new(typologies, wals);
        let data = TrainingData {
            train: train.iter().map(|t| t.inner.clone()).collect(),
            dev: dev.iter().map(|t| t.inner.clone()).collect(),
            typologies: side.typology,
            wals: side.wals,
            ..TrainingData::default()
        };
        let params = self.inner.clone();
        let (best, log) = py
            .detach(move || -> Result<_, typoparse::parser::ParserError> {
                let mut trainer = Trainer::new(params, data)?;
                trainer.run()?;
                Ok((trainer.best_parameters(), trainer.state.log))
            })
            .map_err(value_err)?;
        self.inner = best;
        Ok(log
            .into_iter()
            .map(|LogRow { update, loss, dev_uas }| (update, loss, dev_uas))
            .collect())
    }

    #[pyo3(signature = (treebank, typology = None, wals = None))]
    fn parse(
        &self,
        treebank: &PyTreebank,
        typology: Option<PyRef<'_, PyTypologyVector>>,
        wals: Option<BTreeMap<String, Option<String>>>,
    ) -> PyResult<PyTreebank> {
        let wals = wals.map(|w| record(&treebank.inner.language, &w));
        let inputs = LanguageInputs {
            typology: typology.as_ref().map(|t| &t.inner),
            wals: wals.as_ref(),
        };
        let inner = self.inner.parse_treebank(&treebank.inner, inputs).map_err(value_err)?;
        Ok(PyTreebank { inner })
    }

    /// A fine-tuned copy: `steps` SGD updates over the first ten sentences.
    #[pyo3(signature = (target, steps = 100, lr = 0.01, typology = None, wals = None))]
    fn finetune(
        &self,
        target: &PyTreebank,
        steps: usize,
        lr: f64,
        typology: Option<PyRef<'_, PyTypologyVector>>,
        wals: Option<BTreeMap<String, Option<String>>>,
    ) -> PyResult<PyParser> {
        let wals = wals.map(|w| record(&target.inner.language, &w));
        let inputs = LanguageInputs {
            typology: typology.as_ref().map(|t| &t.inner),
            wals: wals.as_ref(),
        };
        let out = finetune(&self.inner, &target.inner, inputs, steps, lr).map_err(value_err)?;
        Ok(PyParser { inner: out.params })
    }

    fn to_bytes(&self) -> Vec<u8> {
        save_checkpoint(&Checkpoint::new(self.inner.clone()))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        let cp = load_checkpoint(data, None).map_err(value_err)?;
        Ok(PyParser { inner: cp.parameters })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    /// Loads a checkpoint, refusing one built for a different label schema.
    #[staticmethod]
    #[pyo3(signature = (path, schema = "ud1"))]
    fn load(path: &str, schema: &str) -> PyResult<Self> {
        let data = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let cp = load_checkpoint(&data, Some(&inventory(schema)?)).map_err(value_err)?;
        Ok(PyParser { inner: cp.parameters })
    }
}

#[pymodule]
fn typoparse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTreebank>()?;
    m.add_class::<PyTypologyVector>()?;
    m.add_class::<PyParser>()?;
    m.add_function(wrap_pyfunction!(synth_mirror_pair, m)?)?;
    m.add_function(wrap_pyfunction!(liu_directionalities, m)?)?;
    m.add_function(wrap_pyfunction!(surface_statistics, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_wals, m)?)?;
    m.add_function(wrap_pyfunction!(wals_khot, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(cle_mst, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_mst, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(permutation_test, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    Ok(())
}
