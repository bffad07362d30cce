use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use typoparse::analysis::{
    cluster_report, paired_permutation_test, precision_at_k, probe_encoder, read_correctness,
    sentence_permutation_test, write_correctness, oracle_best_source, ProbeConfig,
};
use typoparse::parser::{finetune, save_checkpoint, Checkpoint, Trainer, TrainingData};
use typoparse::treebank::{synth_mirror_pair, to_conllu};
use typoparse::tsv::{pct, Table};
use typoparse::typology::{
    corpus_direction_counts, corpus_wals, kmeans_cluster, match_accuracy, read_vectors_tsv, read_wals_csv,
    write_vectors_tsv, write_wals_csv, DerivationConfig, MatchOutcome,
};
use typoparse::{evaluate, EvalReport, ParserConfig, ParserParameters, Treebank, TypologyKind, TypologyMode};

use crate::config::{mode_name, ExperimentConfig};
use crate::workspace::{read, read_treebank, SideInputs, Workspace};
use crate::{
    invalid, ClusterArgs, Cli, Command, DeriveArgs, EvaluateArgs, Failure, FinetuneArgs, MatchArgs, ProbeArgs,
    SynthArgs, TrainArgs, TransferArgs, TypologyCommand,
};

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(invalid)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let mut problems = cfg.validate();
    check(&cli.command, &cfg, &mut problems);
    if !problems.is_empty() {
        return Err(Failure::Invalid(problems));
    }
    let ws = Workspace::new(cfg, std::env::args().skip(1).collect())?;
    match &cli.command {
        Command::Typology(TypologyCommand::Derive(a)) => derive(&ws, a),
        Command::Typology(TypologyCommand::Cluster(a)) => cluster(&ws, a),
        Command::Typology(TypologyCommand::Match(a)) => match_tables(&ws, a),
        Command::Train(a) => train(&ws, a),
        Command::Evaluate(a) => evaluate_cmd(&ws, a),
        Command::Finetune(a) => finetune_cmd(&ws, a),
        Command::Transfer(a) => transfer(&ws, a),
        Command::Probe(a) => probe(&ws, a),
        Command::Synth(a) => synth(&ws, a),
    }
}

fn or_default(given: &[String], fallback: &[String]) -> Vec<String> {
    if given.is_empty() {
        fallback.to_vec()
    } else {
        given.to_vec()
    }
}

fn require_file(key: &str, path: &Path, problems: &mut Vec<String>) {
    if !path.exists() {
        problems.push(format!("{key}: {} does not exist", path.display()));
    }
}

fn model_path(given: &Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    given.clone().unwrap_or_else(|| cfg.out.join("model.ckpt"))
}

/// Command-specific checks, all collected before anything runs.
fn check(command: &Command, cfg: &ExperimentConfig, problems: &mut Vec<String>) {
    match command {
        Command::Typology(TypologyCommand::Derive(a)) => {
            let langs = or_default(&a.languages, &cfg.all_languages());
            if langs.is_empty() {
                problems.push("no languages to derive typology for".into());
            }
            if cfg.treebank_dir.is_none() {
                problems.push("treebank_dir is not set".into());
            }
            if !(a.delta > 0.5 && a.delta <= 1.0) {
                problems.push(format!("delta = {} must be in (0.5, 1]", a.delta));
            }
        }
        Command::Typology(TypologyCommand::Cluster(a)) => {
            match &a.vectors {
                Some(p) => require_file("--vectors", p, problems),
                None => {
                    if cfg.all_languages().is_empty() {
                        problems.push("no languages to cluster".into());
                    }
                    if !cfg.can_supply(cfg.cluster_source) {
                        problems.push(format!("cannot produce {} vectors to cluster", cfg.cluster_source));
                    }
                }
            }
            if a.k == Some(0) {
                problems.push("--k must be positive".into());
            }
        }
        Command::Typology(TypologyCommand::Match(a)) => {
            match a.reference.as_ref().or(cfg.wals_csv.as_ref()) {
                Some(p) => require_file("--reference", p, problems),
                None => problems.push("no reference WALS table: pass --reference or set wals_csv".into()),
            }
            let predicted = a
                .predicted
                .clone()
                .unwrap_or_else(|| cfg.out.join("typology").join("corpus_wals.csv"));
            require_file("--predicted", &predicted, problems);
        }
        Command::Train(a) => {
            if cfg.train_languages.is_empty() {
                problems.push("train_languages is empty".into());
            }
            cfg.require_treebanks(&cfg.train_languages, "train", problems);
            cfg.require_treebanks(cfg.dev_languages(), "dev", problems);
            cfg.require_treebanks(&cfg.aux_languages, "train", problems);
            cfg.require_parser_inputs(problems);
            if let Some(p) = &a.resume {
                require_file("--resume", p, problems);
            }
            if a.stop_after == Some(0) {
                problems.push("--stop-after must be positive".into());
            }
        }
        Command::Evaluate(a) => {
            let langs = or_default(&a.languages, &cfg.test_languages);
            if langs.is_empty() {
                problems.push("no languages to evaluate: set test_languages or pass --languages".into());
            }
            cfg.require_treebanks(&langs, &a.split, problems);
            match &a.predictions {
                Some(dir) => {
                    for l in &langs {
                        require_file("--predictions", &dir.join(format!("{l}.conllu")), problems);
                    }
                }
                None => require_file("--checkpoint", &model_path(&a.checkpoint, cfg), problems),
            }
            if let Some(dir) = &a.baseline {
                for l in &langs {
                    require_file("--baseline", &dir.join(format!("{l}.txt")), problems);
                }
            }
            if a.permutations == 0 {
                problems.push("--permutations must be positive".into());
            }
        }
        Command::Finetune(a) => {
            let max = typoparse::parser::FINETUNE_SENTENCES;
            if a.n_sentences == 0 || a.n_sentences > max {
                problems.push(format!("--n-sentences = {} must be in 1..={max}", a.n_sentences));
            }
            match a.language.as_ref().or(cfg.test_languages.first()) {
                Some(lang) => {
                    let lang = std::slice::from_ref(lang);
                    cfg.require_treebanks(lang, &a.tune_split, problems);
                    cfg.require_treebanks(lang, &a.eval_split, problems);
                }
                None => problems.push("no target: pass --language or set test_languages".into()),
            }
            require_file("--checkpoint", &model_path(&a.checkpoint, cfg), problems);
            if !(a.lr > 0.0) {
                problems.push("--lr must be positive".into());
            }
        }
        Command::Transfer(a) => {
            if !a.models.is_dir() {
                problems.push(format!("--models: {} is not a directory", a.models.display()));
            }
            let targets = or_default(&a.targets, &cfg.test_languages);
            if targets.is_empty() {
                problems.push("no targets: set test_languages or pass --targets".into());
            }
            cfg.require_treebanks(&targets, &a.split, problems);
            for p in &a.vectors {
                require_file("--vectors", p, problems);
            }
            if a.ks.is_empty() || a.ks.contains(&0) {
                problems.push("--ks must be positive".into());
            }
        }
        Command::Probe(a) => {
            let langs = probe_languages(a, cfg);
            if langs.is_empty() {
                problems.push("no languages to probe".into());
            }
            if cfg.wals_csv.is_none() {
                problems.push("probing needs wals_csv".into());
            }
            cfg.require_treebanks(&langs, &a.split, problems);
            require_file("--checkpoint", &model_path(&a.checkpoint, cfg), problems);
        }
        Command::Synth(a) => {
            if a.sentences == 0 || a.max_len == 0 {
                problems.push("--sentences and --max-len must be positive".into());
            }
        }
    }
}

fn kind_file(kind: TypologyKind) -> String {
    format!("typology/{}.tsv", kind.to_string().to_lowercase())
}

fn ratio(a: usize, b: usize) -> String {
    if a + b == 0 {
        "NA".into()
    } else {
        format!("{:.3}", a as f64 / (a + b) as f64)
    }
}

fn derive(ws: &Workspace, a: &DeriveArgs) -> Outcome {
    let langs = or_default(&a.languages, &ws.cfg.all_languages());
    for kind in [TypologyKind::Linguistic, TypologyKind::Directionality, TypologyKind::Surface] {
        let vectors = ws.derive(kind, &langs)?;
        ws.write(kind_file(kind), write_vectors_tsv(&vectors))?;
    }
    let cfg = DerivationConfig {
        delta: a.delta,
        ..DerivationConfig::default()
    };
    let mut records = Vec::new();
    let mut counts = Table::new(["language", "feature", "head_first", "head_last", "ratio", "value"]);
    for lang in &langs {
        let tb = ws.typology_treebank(lang)?;
        let record = corpus_wals(&tb, &cfg);
        for (feature, (first, last)) in corpus_direction_counts(&tb) {
            counts.push([
                lang.clone(),
                feature.to_string(),
                first.to_string(),
                last.to_string(),
                ratio(first, last),
                record.get(feature).unwrap_or("NA").to_string(),
            ]);
        }
        records.push(record);
    }
    ws.write("typology/corpus_wals.csv", write_wals_csv(&records))?;
    ws.write("typology/corpus_counts.tsv", counts.render())?;
    ws.write_manifest("typology derive")?;
    Ok(())
}

fn cluster(ws: &Workspace, a: &ClusterArgs) -> Outcome {
    let vectors = match &a.vectors {
        Some(p) => read_vectors_tsv(&read(p)?).with_context(|| p.display().to_string())?,
        None => ws.typologies(ws.cfg.cluster_source, &ws.cfg.all_languages())?,
    };
    let k = a.k.unwrap_or(ws.cfg.cluster_k);
    let restarts = a.restarts.unwrap_or(ws.cfg.cluster_restarts);
    let clustering = kmeans_cluster(&vectors, k, restarts, ws.cfg.seed)?;
    let mut table = Table::new(["language", "cluster"]);
    for (lang, c) in &clustering.assignments {
        table.push([lang.clone(), c.to_string()]);
    }
    ws.write("typology/clusters.tsv", table.render())?;
    ws.write(kind_file(TypologyKind::ClusterOnehot), write_vectors_tsv(&clustering.onehots))?;
    ws.write("typology/cluster_report.tsv", cluster_report(&clustering, &vectors)?)?;
    info!("K-Means inertia {:.6}", clustering.inertia);
    ws.write_manifest("typology cluster")?;
    Ok(())
}

#[derive(Default)]
struct Tally {
    matched: usize,
    mismatched: usize,
    undefined: usize,
}

impl Tally {
    fn add(&mut self, outcome: MatchOutcome) {
        match outcome {
            MatchOutcome::Match => self.matched += 1,
            MatchOutcome::Mismatch => self.mismatched += 1,
            MatchOutcome::Undefined => self.undefined += 1,
        }
    }

    fn row(&self, key: &str) -> [String; 5] {
        let defined = self.matched + self.mismatched;
        let accuracy = if defined == 0 {
            "NA".into()
        } else {
            pct(100.0 * self.matched as f64 / defined as f64)
        };
        [
            key.to_string(),
            self.matched.to_string(),
            self.mismatched.to_string(),
            self.undefined.to_string(),
            accuracy,
        ]
    }
}

fn match_tables(ws: &Workspace, a: &MatchArgs) -> Outcome {
    let reference_path = a.reference.clone().or(ws.cfg.wals_csv.clone()).expect("checked");
    let predicted_path = a
        .predicted
        .clone()
        .unwrap_or_else(|| ws.out().join("typology").join("corpus_wals.csv"));
    let reference = read_wals_csv(&read(&reference_path)?).with_context(|| reference_path.display().to_string())?;
    let predicted = read_wals_csv(&read(&predicted_path)?).with_context(|| predicted_path.display().to_string())?;
    let mut by_feature: BTreeMap<String, Tally> = BTreeMap::new();
    let mut by_language = Table::new(["language", "match", "mismatch", "undefined", "accuracy"]);
    for (lang, p) in &predicted {
        let Some(r) = reference.get(lang) else {
            warn!("{lang}: not in {}", reference_path.display());
            continue;
        };
        let summary = match_accuracy(r, p);
        let mut tally = Tally::default();
        for (feature, &outcome) in &summary.per_feature {
            by_feature.entry(feature.clone()).or_default().add(outcome);
            tally.add(outcome);
        }
        by_language.push(tally.row(lang));
    }
    let mut table = Table::new(["feature", "match", "mismatch", "undefined", "accuracy"]);
    for (feature, tally) in &by_feature {
        table.push(tally.row(feature));
    }
    ws.write("typology/match.tsv", table.render())?;
    ws.write("typology/match_languages.tsv", by_language.render())?;
    ws.write_manifest("typology match")?;
    Ok(())
}

fn load_all(ws: &Workspace, languages: &[String], split: &str) -> anyhow::Result<Vec<Treebank>> {
    languages.iter().map(|l| ws.treebank(l, split)).collect()
}

fn train(ws: &Workspace, a: &TrainArgs) -> Outcome {
    let cfg = &ws.cfg;
    let train = load_all(ws, &cfg.train_languages, "train")?;
    let dev = load_all(ws, cfg.dev_languages(), "dev")?;
    let aux = load_all(ws, &cfg.aux_languages, "train")?;
    let languages: Vec<String> = train
        .iter()
        .chain(&dev)
        .chain(&aux)
        .map(|tb| tb.language.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mode = cfg.parser.typology_mode;
    let side = ws.side_inputs(mode, None, &languages)?;
    if mode.uses_input_feature() {
        ws.write("typology_inputs.tsv", write_vectors_tsv(&side.typologies))?;
    }
    let typology_dim = side.typologies.values().next().map_or(0, |v| v.dim());
    let data = TrainingData {
        train,
        aux,
        dev,
        typologies: side.typologies,
        wals: side.wals,
    };
    let mut trainer = match &a.resume {
        Some(path) => {
            let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            let cp = typoparse::parser::load_checkpoint(&bytes, Some(&ws.inventory))
                .with_context(|| path.display().to_string())?;
            if cp.parameters.config != cfg.parser {
                return Err(invalid(format!(
                    "{} was trained under a different [parser] configuration",
                    path.display()
                )));
            }
            info!("resuming at update {}", cp.trainer.as_ref().map_or(0, |t| t.state.updates));
            Trainer::from_checkpoint(cp, data)?
        }
        None => {
            let schema = mode.uses_selective_sharing().then(|| ws.schema.clone());
            let params = ParserParameters::init(cfg.parser.clone(), ws.inventory.clone(), typology_dim, schema)?;
            Trainer::new(params, data)?
        }
    };
    let chunk = cfg.parser.eval_every.max(1);
    let mut budget = a.stop_after.unwrap_or(u64::MAX);
    loop {
        let n = chunk.min(budget);
        let done = trainer.run_for(n)?;
        budget -= n;
        ws.write("last.ckpt", save_checkpoint(&trainer.checkpoint()))?;
        if let Some(row) = trainer.state.log.last() {
            info!(
                "update {} loss {:.4} dev UAS {}",
                row.update,
                row.loss,
                row.dev_uas.map_or_else(|| "NA".into(), pct)
            );
        }
        if done || budget == 0 {
            break;
        }
    }
    ws.write("train_log.tsv", trainer.log_tsv())?;
    ws.write("model.ckpt", save_checkpoint(&Checkpoint::new(trainer.best_parameters())))?;
    if !trainer.state.finished {
        info!("stopped at update {}; continue with --resume", trainer.state.updates);
    }
    ws.write_manifest("train")?;
    Ok(())
}

fn evaluate_cmd(ws: &Workspace, a: &EvaluateArgs) -> Outcome {
    let langs = or_default(&a.languages, &ws.cfg.test_languages);
    let model = match &a.predictions {
        Some(_) => None,
        None => Some(ws.checkpoint(&model_path(&a.checkpoint, &ws.cfg))?),
    };
    let side = match &model {
        Some(m) => ws.side_inputs(m.mode(), Some(m.typology_dim), &langs)?,
        None => SideInputs::default(),
    };
    let mut header = vec!["language", "tokens", "uas", "las"];
    if a.baseline.is_some() {
        header.extend(["baseline_uas", "delta", "p_value"]);
    }
    let mut table = Table::new(header);
    let (mut uas, mut las, mut base, mut tokens) = (0.0, 0.0, 0.0, 0);
    for lang in &langs {
        let gold = ws.treebank(lang, &a.split)?;
        let pred = match (&model, &a.predictions) {
            (Some(m), _) => {
                let pred = m.parse_treebank(&gold, side.get(lang))?;
                ws.write(format!("predictions/{lang}.conllu"), to_conllu(&pred))?;
                pred
            }
            (None, Some(dir)) => read_treebank(&dir.join(format!("{lang}.conllu")), lang, &ws.inventory, true)?,
            (None, None) => unreachable!("checked"),
        };
        let report = evaluate(&pred, &gold).with_context(|| format!("{lang}: predictions do not align"))?;
        ws.write(format!("correctness/{lang}.txt"), write_correctness(&report))?;
        let mut row = vec![lang.clone(), report.tokens.to_string(), pct(report.uas), pct(report.las)];
        if let Some(dir) = &a.baseline {
            let path = dir.join(format!("{lang}.txt"));
            let (arcs, lengths) = read_correctness(&read(&path)?).with_context(|| path.display().to_string())?;
            let result = if a.sentence_level {
                sentence_permutation_test(&report, &baseline_report(arcs.clone(), lengths), a.permutations, ws.cfg.seed)
            } else {
                paired_permutation_test(&report.arcs, &arcs, a.permutations, ws.cfg.seed)
            }
            .with_context(|| format!("{lang}: baseline {}", path.display()))?;
            let b = 100.0 * arcs.iter().filter(|&&c| c).count() as f64 / arcs.len().max(1) as f64;
            base += b;
            row.extend([pct(b), pct(100.0 * result.observed_delta), format!("{:.6}", result.p_value)]);
        }
        uas += report.uas;
        las += report.las;
        tokens += report.tokens;
        table.push(row);
    }
    let n = langs.len() as f64;
    let mut row = vec!["average".to_string(), tokens.to_string(), pct(uas / n), pct(las / n)];
    if a.baseline.is_some() {
        row.extend([pct(base / n), pct(uas / n - base / n), "NA".into()]);
    }
    table.push(row);
    ws.write("eval.tsv", table.render())?;
    ws.write_manifest("evaluate")?;
    Ok(())
}

fn baseline_report(arcs: Vec<bool>, lengths: Vec<usize>) -> EvalReport {
    let mut flags = arcs.iter();
    let sentence_correct = lengths
        .iter()
        .map(|&n| flags.by_ref().take(n).filter(|&&c| c).count())
        .collect();
    EvalReport {
        tokens: arcs.len(),
        arcs,
        sentence_correct,
        sentence_tokens: lengths,
        ..EvalReport::default()
    }
}

fn finetune_cmd(ws: &Workspace, a: &FinetuneArgs) -> Outcome {
    let lang = a
        .language
        .clone()
        .or_else(|| ws.cfg.test_languages.first().cloned())
        .expect("checked");
    let model = ws.checkpoint(&model_path(&a.checkpoint, &ws.cfg))?;
    let side = ws.side_inputs(model.mode(), Some(model.typology_dim), std::slice::from_ref(&lang))?;
    let inputs = side.get(&lang);
    let tune = ws.treebank(&lang, &a.tune_split)?;
    let sentences: Vec<_> = tune
        .sentences
        .into_iter()
        .filter(|s| !s.is_empty())
        .take(a.n_sentences)
        .collect();
    if sentences.len() < a.n_sentences {
        warn!("{lang}: only {} sentences to fine-tune on", sentences.len());
    }
    let tune = Treebank::new(lang.clone(), sentences);
    let gold = ws.treebank(&lang, &a.eval_split)?;
    let before = evaluate(&model.parse_treebank(&gold, inputs)?, &gold)?;
    let outcome = finetune(&model, &tune, inputs, a.steps, a.lr)?;
    let after = evaluate(&outcome.params.parse_treebank(&gold, inputs)?, &gold)?;
    ws.write("finetuned.ckpt", save_checkpoint(&Checkpoint::new(outcome.params)))?;
    let mut table = Table::new(["language", "sentences", "updates", "pre_uas", "post_uas", "pre_las", "post_las"]);
    table.push([
        lang.clone(),
        outcome.sentences.to_string(),
        outcome.updates.to_string(),
        pct(before.uas),
        pct(after.uas),
        pct(before.las),
        pct(after.las),
    ]);
    ws.write("finetune.tsv", table.render())?;
    let mut losses = Table::new(["update", "loss"]);
    for (i, l) in outcome.losses.iter().enumerate() {
        losses.push([(i + 1).to_string(), format!("{l:.6}")]);
    }
    ws.write("finetune_loss.tsv", losses.render())?;
    info!("{lang}: UAS {} -> {}", pct(before.uas), pct(after.uas));
    ws.write_manifest("finetune")?;
    Ok(())
}

/// `{lang}.ckpt` files in `dir`, keyed by language.
fn source_models(ws: &Workspace, dir: &Path) -> anyhow::Result<BTreeMap<String, ParserParameters>> {
    let mut models = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ckpt") {
            continue;
        }
        let lang = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("{}: unusable file name", path.display()))?
            .to_string();
        models.insert(lang, ws.checkpoint(&path)?);
    }
    Ok(models)
}

fn transfer(ws: &Workspace, a: &TransferArgs) -> Outcome {
    let models = source_models(ws, &a.models)?;
    if models.len() < 2 {
        return Err(invalid(format!(
            "{} holds {} source models, at least 2 are needed",
            a.models.display(),
            models.len()
        )));
    }
    let sources: Vec<String> = models.keys().cloned().collect();
    let targets = or_default(&a.targets, &ws.cfg.test_languages);
    let modes: Vec<TypologyMode> = models.values().map(ParserParameters::mode).collect();
    let mode = match (
        modes.iter().any(|m| m.uses_input_feature()),
        modes.iter().any(|m| m.uses_selective_sharing()),
    ) {
        (false, false) => TypologyMode::None,
        (true, false) => TypologyMode::InputFeature,
        (false, true) => TypologyMode::SelectiveSharing,
        (true, true) => TypologyMode::Both,
    };
    let side = ws.side_inputs(mode, None, &targets)?;

    let mut oracle = Table::new(
        ["target", "best_source"]
            .into_iter()
            .map(str::to_string)
            .chain(sources.iter().cloned()),
    );
    let mut best = BTreeMap::new();
    for target in &targets {
        let gold = ws.treebank(target, &a.split)?;
        let (winner, scores) = oracle_best_source(&models, &gold, side.get(target))?;
        let mut row = vec![target.clone(), winner.clone()];
        row.extend(scores.values().map(|&s| pct(s)));
        oracle.push(row);
        best.insert(target.clone(), winner);
    }
    ws.write("oracle.tsv", oracle.render())?;

    let mut pool: Vec<String> = sources.iter().chain(&targets).cloned().collect();
    pool.sort();
    pool.dedup();
    let mut typologies: Vec<(TypologyKind, BTreeMap<String, _>)> = Vec::new();
    if a.vectors.is_empty() {
        let mut kinds = vec![TypologyKind::Directionality, TypologyKind::Surface];
        if ws.cfg.can_supply(TypologyKind::Linguistic) {
            kinds.insert(0, TypologyKind::Linguistic);
        }
        let cluster_pool = ws.cfg.all_languages().into_iter().chain(pool.iter().cloned()).collect::<BTreeSet<_>>();
        if ws.cfg.can_supply(TypologyKind::ClusterOnehot) && ws.cfg.cluster_k <= cluster_pool.len() {
            kinds.push(TypologyKind::ClusterOnehot);
        }
        for kind in kinds {
            typologies.push((kind, ws.typologies(kind, &pool)?));
        }
    } else {
        for path in &a.vectors {
            let v = read_vectors_tsv(&read(path)?).with_context(|| path.display().to_string())?;
            let kind = v
                .values()
                .next()
                .map(|t| t.kind)
                .ok_or_else(|| anyhow!("{}: no vectors", path.display()))?;
            typologies.push((kind, v));
        }
    }
    let mut table = Table::new(std::iter::once("typology".to_string()).chain(a.ks.iter().map(|k| format!("P@{k}"))));
    for (kind, vectors) in &typologies {
        let p = precision_at_k(vectors, &best, &sources, &a.ks)?;
        let mut row = vec![kind.to_string()];
        row.extend(a.ks.iter().map(|k| pct(p[k])));
        table.push(row);
    }
    ws.write("transfer.tsv", table.render())?;
    ws.write_manifest("transfer")?;
    Ok(())
}

fn probe_languages(a: &ProbeArgs, cfg: &ExperimentConfig) -> Vec<String> {
    if !a.languages.is_empty() {
        return a.languages.clone();
    }
    let set: BTreeSet<&String> = cfg.train_languages.iter().chain(&cfg.test_languages).collect();
    set.into_iter().cloned().collect()
}

fn probe(ws: &Workspace, a: &ProbeArgs) -> Outcome {
    let langs = probe_languages(a, &ws.cfg);
    let wals = ws.wals()?;
    let missing: Vec<&str> = langs
        .iter()
        .filter(|l| !wals.contains_key(*l))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Failure::Runtime(anyhow!("no WALS coverage for {}", missing.join(", "))));
    }
    let model = ws.checkpoint(&model_path(&a.checkpoint, &ws.cfg))?;
    let side = ws.side_inputs(model.mode(), Some(model.typology_dim), &langs)?;
    let treebanks = load_all(ws, &langs, &a.split)?;
    let config = ProbeConfig {
        split_seed: ws.cfg.seed,
        epochs: a.epochs,
        held_out_languages: a.held_out_languages,
        ..ProbeConfig::default()
    };
    let report = probe_encoder(&model, &treebanks, &side.typologies, &wals, &config)?;
    for row in report.rows.iter().filter(|r| r.degenerate) {
        warn!("{}: a single class among the probed languages", row.feature);
    }
    ws.write("probe.tsv", report.to_table().render())?;
    ws.write_manifest("probe")?;
    Ok(())
}

/// Languages `A` and `C` are strictly head-final, `B` and `D` strictly
/// head-initial; the toy config trains on the first pair and tests on the
/// second.
fn synth(ws: &Workspace, a: &SynthArgs) -> Outcome {
    let seed = ws.cfg.seed;
    let dev_n = (a.sentences / 3).max(1);
    let splits = [
        ("train", a.sentences, seed),
        ("dev", dev_n, seed.wrapping_add(1)),
        ("test", dev_n, seed.wrapping_add(2)),
    ];
    let mut records = Vec::new();
    for (pair, offset) in [(["A", "B"], 0u64), (["C", "D"], 1000)] {
        for (split, n, s) in splits {
            let (head_final, head_initial) = synth_mirror_pair(n, a.max_len, s.wrapping_add(offset));
            for (lang, tb) in pair.iter().zip([head_final, head_initial]) {
                let tb = Treebank::new(*lang, tb.sentences);
                if split == "train" {
                    records.push(corpus_wals(&tb, &DerivationConfig::default()));
                }
                ws.write(format!("treebanks/{lang}/{split}.conllu"), to_conllu(&tb))?;
            }
        }
    }
    ws.write("wals.csv", write_wals_csv(&records))?;
    let toy = ExperimentConfig {
        treebank_dir: Some("treebanks".into()),
        wals_csv: Some("wals.csv".into()),
        typology_kind: a.kind,
        cluster_k: 2,
        cluster_source: TypologyKind::Directionality,
        train_languages: vec!["A".into(), "B".into()],
        test_languages: vec!["C".into(), "D".into()],
        out: "run".into(),
        seed,
        parser: toy_parser(seed),
        ..ExperimentConfig::default()
    };
    let text = toml::to_string(&toy).context("serializing config")?;
    ws.write("experiment.toml", text)?;
    info!(
        "typology_mode {} toy config in {}",
        mode_name(toy.parser.typology_mode),
        ws.out().join("experiment.toml").display()
    );
    ws.write_manifest("synth")?;
    Ok(())
}

fn toy_parser(seed: u64) -> ParserConfig {
    ParserConfig {
        pos_embed_dim: 16,
        lstm_layers: 1,
        lstm_hidden: 32,
        arc_mlp_dim: 32,
        rel_mlp_dim: 16,
        typology_mode: TypologyMode::InputFeature,
        typology_mlp_hidden: 8,
        typology_out_dim: 8,
        dropout: 0.0,
        batch_tokens: 100,
        max_updates: 2000,
        eval_every: 250,
        patience: 100,
        seed,
        ..ParserConfig::default()
    }
}
