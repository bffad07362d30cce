//! Loading treebanks, schemas and typology vectors named by a config,
//! and writing outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use typoparse::parser::{load_checkpoint, LanguageInputs};
use typoparse::treebank::{read_conllu, ReadOptions};
use typoparse::typology::{
    kmeans_cluster, liu_directionalities, read_vectors_tsv, read_wals_csv, surface_statistics, wals_khot,
    DerivationConfig, SURFACE_WINDOWS,
};
use typoparse::{
    Inventory, ParserParameters, Treebank, TypologyKind, TypologyMode, TypologyVector, WalsRecord,
    WalsSchema,
};

use crate::config::{ExperimentConfig, SPLITS};

pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub inventory: Inventory,
    pub schema: WalsSchema,
    /// The command line, echoed into manifests.
    pub argv: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    arguments: &'a [String],
    config: &'a ExperimentConfig,
}

/// Side inputs for one language, owned so they outlive a borrow of the
/// maps they came from.
#[derive(Default)]
pub struct SideInputs {
    pub typologies: BTreeMap<String, TypologyVector>,
    pub wals: BTreeMap<String, WalsRecord>,
}

impl SideInputs {
    pub fn get(&self, language: &str) -> LanguageInputs<'_> {
        LanguageInputs {
            typology: self.typologies.get(language),
            wals: self.wals.get(language),
        }
    }
}

impl Workspace {
    pub fn new(cfg: ExperimentConfig, argv: Vec<String>) -> Result<Self> {
        let inventory = match &cfg.pos_schema {
            Some(p) => Inventory::from_schema_text(&read(p)?).with_context(|| p.display().to_string())?,
            None => Inventory::ud_v1(),
        };
        let schema = match &cfg.wals_schema {
            Some(p) => WalsSchema::parse(&read(p)?).with_context(|| p.display().to_string())?,
            None => WalsSchema::default(),
        };
        Ok(Workspace {
            cfg,
            inventory,
            schema,
            argv,
        })
    }

    pub fn out(&self) -> &Path {
        &self.cfg.out
    }

    pub fn write(&self, relative: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.cfg.out.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    /// `manifest.toml` echoing the resolved configuration.
    pub fn write_manifest(&self, command: &str) -> Result<()> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            arguments: &self.argv,
            config: &self.cfg,
        };
        let text = toml::to_string(&manifest).context("serializing manifest")?;
        self.write("manifest.toml", text)?;
        Ok(())
    }

    pub fn treebank(&self, language: &str, split: &str) -> Result<Treebank> {
        let path = self
            .cfg
            .treebank_path(language, split)
            .ok_or_else(|| anyhow!("treebank_dir is not set"))?;
        read_treebank(&path, language, &self.inventory, self.cfg.strict)
    }

    /// The training split if present, otherwise the first split found.
    /// Typology is measured on this.
    pub fn typology_treebank(&self, language: &str) -> Result<Treebank> {
        for split in SPLITS {
            if let Some(path) = self.cfg.treebank_path(language, split) {
                if path.exists() {
                    if split != "train" {
                        warn!("{language}: no training split, measuring typology on {split}");
                    }
                    return self.treebank(language, split);
                }
            }
        }
        bail!("{language}: no treebank to derive typology from")
    }

    /// Linguist WALS records; empty when no CSV is configured.
    pub fn wals(&self) -> Result<BTreeMap<String, WalsRecord>> {
        match &self.cfg.wals_csv {
            Some(p) => read_wals_csv(&read(p)?).with_context(|| p.display().to_string()),
            None => Ok(BTreeMap::new()),
        }
    }

    /// Vectors of `kind` for `languages`, read from `typology_vectors` when
    /// it holds that kind and derived otherwise.
    pub fn typologies(&self, kind: TypologyKind, languages: &[String]) -> Result<BTreeMap<String, TypologyVector>> {
        if let (Some(path), true) = (&self.cfg.typology_vectors, kind == self.cfg.typology_kind) {
            let all = read_vectors_tsv(&read(path)?).with_context(|| path.display().to_string())?;
            let mut out = BTreeMap::new();
            let mut missing = Vec::new();
            for lang in languages {
                match all.get(lang) {
                    Some(v) if v.kind != kind => bail!("{}: {lang} has kind {}, not {kind}", path.display(), v.kind),
                    Some(v) => {
                        out.insert(lang.clone(), v.clone());
                    }
                    None => missing.push(lang.as_str()),
                }
            }
            if !missing.is_empty() {
                bail!("{}: no vectors for {}", path.display(), missing.join(", "));
            }
            return Ok(out);
        }
        self.derive(kind, languages)
    }

    pub fn derive(&self, kind: TypologyKind, languages: &[String]) -> Result<BTreeMap<String, TypologyVector>> {
        let mut out = BTreeMap::new();
        match kind {
            TypologyKind::Linguistic => {
                let wals = self.wals()?;
                for lang in languages {
                    let record = match wals.get(lang) {
                        Some(r) => r.clone(),
                        None => {
                            warn!("{lang}: no WALS entries, using a zero block");
                            WalsRecord::new(lang.as_str())
                        }
                    };
                    for (f, _) in &self.schema.features {
                        if wals.contains_key(lang) && record.get(f).is_none() {
                            warn!("{lang}: WALS {f} missing, zero block");
                        }
                    }
                    out.insert(lang.clone(), wals_khot(&record, &self.schema)?);
                }
            }
            TypologyKind::Directionality | TypologyKind::Surface => {
                let cfg = DerivationConfig::default();
                for lang in languages {
                    let tb = self.typology_treebank(lang)?;
                    let v = if kind == TypologyKind::Directionality {
                        liu_directionalities(&tb, &cfg)
                    } else {
                        surface_statistics(&tb, &self.inventory, &SURFACE_WINDOWS)
                    };
                    out.insert(lang.clone(), v);
                }
            }
            TypologyKind::ClusterOnehot => {
                let source = self.cfg.cluster_source;
                if source == TypologyKind::ClusterOnehot {
                    bail!("cluster_source cannot itself be CLUSTER_ONEHOT");
                }
                // cluster over every configured language so train and test
                // share one partition
                let mut pool = self.cfg.all_languages();
                pool.extend(languages.iter().cloned());
                pool.sort();
                pool.dedup();
                let base = self.typologies(source, &pool)?;
                let clustering = kmeans_cluster(&base, self.cfg.cluster_k, self.cfg.cluster_restarts, self.cfg.seed)?;
                for lang in languages {
                    out.insert(lang.clone(), clustering.onehots[lang].clone());
                }
            }
        }
        Ok(out)
    }

    /// Typology vectors and WALS records a parser in `mode` needs. With
    /// `dim` given the vectors must have that dimension.
    pub fn side_inputs(&self, mode: TypologyMode, dim: Option<usize>, languages: &[String]) -> Result<SideInputs> {
        let mut side = SideInputs::default();
        if mode.uses_input_feature() {
            side.typologies = self.typologies(self.cfg.typology_kind, languages)?;
            if let (Some(v), Some(dim)) = (side.typologies.values().next(), dim) {
                if v.dim() != dim {
                    bail!(
                        "{} vectors have dimension {}, the model expects {dim}",
                        self.cfg.typology_kind,
                        v.dim()
                    );
                }
            }
        }
        if mode.uses_selective_sharing() {
            let wals = self.wals()?;
            let missing: Vec<&str> = languages
                .iter()
                .filter(|l| !wals.contains_key(*l))
                .map(String::as_str)
                .collect();
            if !missing.is_empty() {
                bail!("no WALS record for {}", missing.join(", "));
            }
            side.wals = wals.into_iter().filter(|(l, _)| languages.contains(l)).collect();
        }
        Ok(side)
    }

    pub fn checkpoint(&self, path: &Path) -> Result<ParserParameters> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let cp = load_checkpoint(&bytes, Some(&self.inventory)).with_context(|| path.display().to_string())?;
        Ok(cp.parameters)
    }
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_treebank(path: &Path, language: &str, inventory: &Inventory, strict: bool) -> Result<Treebank> {
    let text = read(path)?;
    let options = ReadOptions {
        strict,
        ..ReadOptions::default()
    };
    let (tb, rejected) =
        read_conllu(&text, language, inventory, options).with_context(|| path.display().to_string())?;
    if !rejected.is_empty() {
        warn!("{}: skipped {} malformed sentences", path.display(), rejected.len());
    }
    Ok(tb)
}
