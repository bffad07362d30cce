//! Experiment configuration read from TOML.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use typoparse::{ParserConfig, TypologyKind};

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root holding `{lang}/{split}.conllu`.
    pub treebank_dir: Option<PathBuf>,
    /// Linguist WALS values, `language,feature_id,value`.
    pub wals_csv: Option<PathBuf>,
    /// UPOS and relation inventories; UD v1 when absent.
    pub pos_schema: Option<PathBuf>,
    pub wals_schema: Option<PathBuf>,
    /// Vector kind fed to the input-feature component.
    pub typology_kind: TypologyKind,
    /// Precomputed vectors; derived from treebanks or WALS when absent.
    pub typology_vectors: Option<PathBuf>,
    pub cluster_k: usize,
    pub cluster_restarts: usize,
    /// Vectors the cluster one-hots are computed from.
    pub cluster_source: TypologyKind,
    pub train_languages: Vec<String>,
    /// Defaults to the training languages.
    pub dev_languages: Vec<String>,
    pub test_languages: Vec<String>,
    pub aux_languages: Vec<String>,
    /// Fail on a malformed tree instead of skipping the sentence.
    pub strict: bool,
    pub out: PathBuf,
    pub seed: u64,
    pub parser: ParserConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            treebank_dir: None,
            wals_csv: None,
            pos_schema: None,
            wals_schema: None,
            typology_kind: TypologyKind::Directionality,
            typology_vectors: None,
            cluster_k: 5,
            cluster_restarts: 10,
            cluster_source: TypologyKind::Linguistic,
            train_languages: Vec::new(),
            dev_languages: Vec::new(),
            test_languages: Vec::new(),
            aux_languages: Vec::new(),
            strict: false,
            out: PathBuf::from("out"),
            seed: 1,
            parser: ParserConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses `text`, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.treebank_dir,
            &mut self.wals_csv,
            &mut self.pos_schema,
            &mut self.wals_schema,
            &mut self.typology_vectors,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
        join(&mut self.out);
    }

    /// Applies `--seed`: the experiment seed also seeds the parser.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.parser.seed = seed;
    }

    pub fn dev_languages(&self) -> &[String] {
        if self.dev_languages.is_empty() {
            &self.train_languages
        } else {
            &self.dev_languages
        }
    }

    /// Every language named anywhere, sorted and deduplicated.
    pub fn all_languages(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self
            .train_languages
            .iter()
            .chain(self.dev_languages())
            .chain(&self.test_languages)
            .chain(&self.aux_languages)
            .collect();
        set.into_iter().cloned().collect()
    }

    pub fn treebank_path(&self, language: &str, split: &str) -> Option<PathBuf> {
        self.treebank_dir
            .as_ref()
            .map(|d| d.join(language).join(format!("{split}.conllu")))
    }

    /// Problems that hold regardless of the command.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let paths = [
            ("treebank_dir", &self.treebank_dir),
            ("wals_csv", &self.wals_csv),
            ("pos_schema", &self.pos_schema),
            ("wals_schema", &self.wals_schema),
            ("typology_vectors", &self.typology_vectors),
        ];
        for (key, path) in paths {
            if let Some(p) = path {
                if !p.exists() {
                    problems.push(format!("{key}: {} does not exist", p.display()));
                }
            }
        }
        let test: BTreeSet<&String> = self.test_languages.iter().collect();
        for lang in &self.train_languages {
            if test.contains(lang) {
                problems.push(format!("{lang} is both a training and a test language"));
            }
        }
        for (key, langs) in [
            ("train_languages", &self.train_languages),
            ("dev_languages", &self.dev_languages),
            ("test_languages", &self.test_languages),
            ("aux_languages", &self.aux_languages),
        ] {
            let mut seen = BTreeSet::new();
            for l in langs {
                if !seen.insert(l) {
                    problems.push(format!("{key}: {l} listed twice"));
                }
            }
        }
        if self.cluster_k == 0 {
            problems.push("cluster_k must be positive".into());
        }
        problems.extend(self.parser.validate().into_iter().map(|p| format!("parser: {p}")));
        problems
    }

    /// Checks that `{lang}/{split}.conllu` exists for each language.
    pub fn require_treebanks(&self, languages: &[String], split: &str, problems: &mut Vec<String>) {
        match &self.treebank_dir {
            None => problems.push("treebank_dir is not set".into()),
            Some(_) => {
                for lang in languages {
                    let path = self.treebank_path(lang, split).expect("dir set");
                    if !path.exists() {
                        problems.push(format!("missing treebank {}", path.display()));
                    }
                }
            }
        }
    }

    /// Whether vectors of `kind` can be produced from what is configured.
    pub fn can_supply(&self, kind: TypologyKind) -> bool {
        if self.typology_vectors.is_some() && kind == self.typology_kind {
            return true;
        }
        match kind {
            TypologyKind::Linguistic => self.wals_csv.is_some(),
            TypologyKind::Directionality | TypologyKind::Surface => self.treebank_dir.is_some(),
            TypologyKind::ClusterOnehot => {
                self.cluster_source != TypologyKind::ClusterOnehot && self.can_supply(self.cluster_source)
            }
        }
    }

    /// Side inputs the parser's typology mode needs.
    pub fn require_parser_inputs(&self, problems: &mut Vec<String>) {
        let mode = self.parser.typology_mode;
        if mode.uses_input_feature() && !self.can_supply(self.typology_kind) {
            problems.push(format!(
                "typology_mode {} needs {} vectors: set typology_vectors or the inputs they derive from",
                mode_name(mode),
                self.typology_kind
            ));
        }
        if mode.uses_selective_sharing() && self.wals_csv.is_none() {
            problems.push(format!("typology_mode {} needs wals_csv", mode_name(mode)));
        }
    }
}

pub fn mode_name(mode: typoparse::TypologyMode) -> String {
    toml::Value::try_from(mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{mode:?}"))
}
