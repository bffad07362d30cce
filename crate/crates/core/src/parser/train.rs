use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{LanguageInputs, ParserParameters};
use super::ParserError;
use crate::autodiff::{Adam, AdamConfig, Gradients, Params, Sgd};
use crate::treebank::{truncate, Sentence, Treebank};
use crate::typology::{TypologyVector, WalsRecord};

/// Draws a language index with probability proportional to its weight.
#[derive(Clone, Debug)]
pub struct LanguageSampler {
    dist: WeightedIndex<f64>,
}

impl LanguageSampler {
    pub fn new(token_counts: &[usize]) -> Result<Self, ParserError> {
        let weights: Vec<f64> = token_counts.iter().map(|&c| c as f64).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| ParserError::Argument(format!("language sampler: {e}")))?;
        Ok(LanguageSampler { dist })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// Treebanks and per-language side information for one training run.
#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    pub train: Vec<Treebank>,
    /// Auxiliary (synthetic) treebanks mixed in at `1 - gd_real_prob`.
    pub aux: Vec<Treebank>,
    pub dev: Vec<Treebank>,
    pub typologies: BTreeMap<String, TypologyVector>,
    pub wals: BTreeMap<String, WalsRecord>,
}

impl TrainingData {
    pub fn inputs(&self, language: &str) -> LanguageInputs<'_> {
        LanguageInputs {
            typology: self.typologies.get(language),
            wals: self.wals.get(language),
        }
    }

    fn check(&self, params: &ParserParameters) -> Result<(), ParserError> {
        if self.train.iter().all(Treebank::is_empty) {
            return Err(ParserError::Argument("no training sentences".into()));
        }
        let mode = params.mode();
        let mut missing = Vec::new();
        for tb in self.train.iter().chain(&self.aux).chain(&self.dev) {
            if mode.uses_input_feature() && !self.typologies.contains_key(&tb.language) {
                missing.push(format!("typology vector for {}", tb.language));
            }
            if mode.uses_selective_sharing() && !self.wals.contains_key(&tb.language) {
                missing.push(format!("WALS record for {}", tb.language));
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ParserError::Argument(format!("missing {}", missing.join(", "))))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub update: u64,
    /// Mean per-token training loss since the previous row.
    pub loss: f64,
    pub dev_uas: Option<f64>,
}

/// Everything besides tensors needed to continue a run exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub updates: u64,
    pub best_dev_uas: Option<f64>,
    pub best_update: u64,
    pub stale_evals: usize,
    pub finished: bool,
    pub loss_sum: f64,
    pub loss_tokens: usize,
    pub log: Vec<LogRow>,
}

/// Multilingual training loop: proportional language sampling,
/// single-language batches, Adam, dev-UAS early stopping.
pub struct Trainer {
    pub params: ParserParameters,
    pub adam: Adam,
    pub state: TrainerState,
    /// Parameters at the best dev evaluation so far.
    pub best: Option<Params>,
    data: TrainingData,
    sampler: LanguageSampler,
    aux_sampler: Option<LanguageSampler>,
}

fn uas(pred: &Treebank, gold: &Treebank) -> f64 {
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, g) in pred.sentences.iter().zip(&gold.sentences) {
        for (a, b) in p.tokens.iter().zip(&g.tokens) {
            correct += (a.head == b.head) as usize;
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

impl Trainer {
    /// Training treebanks are cut to `max_train_tokens` first.
    pub fn new(params: ParserParameters, mut data: TrainingData) -> Result<Self, ParserError> {
        data.check(&params)?;
        let cap = params.config.max_train_tokens;
        data.train = data.train.iter().map(|tb| truncate(tb, cap)).collect();
        data.aux = data.aux.iter().map(|tb| truncate(tb, cap)).collect();
        let counts: Vec<usize> = data.train.iter().map(Treebank::token_count).collect();
        let sampler = LanguageSampler::new(&counts)?;
        let aux_counts: Vec<usize> = data.aux.iter().map(Treebank::token_count).collect();
        let aux_sampler = if aux_counts.iter().any(|&c| c > 0) {
            Some(LanguageSampler::new(&aux_counts)?)
        } else {
            None
        };
        let adam = Adam::new(
            &params.params,
            AdamConfig {
                lr: params.config.lr,
                ..AdamConfig::default()
            },
        );
        Ok(Trainer {
            params,
            adam,
            state: TrainerState::default(),
            best: None,
            data,
            sampler,
            aux_sampler,
        })
    }

    /// Continues a saved run; `data` must be the data it started with.
    pub fn resume(
        params: ParserParameters,
        adam: Adam,
        state: TrainerState,
        best: Option<Params>,
        data: TrainingData,
    ) -> Result<Self, ParserError> {
        if adam.m.len() != params.params.len() {
            return Err(ParserError::Checkpoint("optimizer state does not match parameters".into()));
        }
        let mut trainer = Trainer::new(params, data)?;
        trainer.adam = adam;
        trainer.state = state;
        trainer.best = best;
        Ok(trainer)
    }

    pub fn data(&self) -> &TrainingData {
        &self.data
    }

    /// The batch of update `update`: a language, then consecutive
    /// sentences from a random start until `batch_tokens` would be
    /// exceeded. Depends only on the seed and the update index.
    fn batch(&self, update: u64) -> (&Treebank, Vec<&Sentence>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.config.seed);
        rng.set_stream(update);
        let use_aux = match &self.aux_sampler {
            Some(_) => rng.gen::<f64>() >= self.params.config.gd_real_prob,
            None => false,
        };
        let tb = match (&self.aux_sampler, use_aux) {
            (Some(s), true) => &self.data.aux[s.sample(&mut rng)],
            _ => &self.data.train[self.sampler.sample(&mut rng)],
        };
        let count = tb.sentences.len();
        let start = rng.gen_range(0..count);
        let mut batch = Vec::new();
        let mut tokens = 0;
        for k in 0..count {
            let s = &tb.sentences[(start + k) % count];
            if !batch.is_empty() && tokens + s.len() > self.params.config.batch_tokens {
                break;
            }
            tokens += s.len();
            batch.push(s);
        }
        (tb, batch, rng)
    }

    /// One Adam update; returns the batch's mean per-token loss.
    pub fn step(&mut self) -> Result<f64, ParserError> {
        let update = self.state.updates;
        let (tb, batch, mut rng) = self.batch(update);
        let seeds: Vec<u64> = batch.iter().map(|_| rng.gen()).collect();
        let inputs = self.data.inputs(&tb.language);
        let chunk = rayon::current_num_threads().max(1);
        let mut grads = Gradients::zeros_like(&self.params.params);
        let mut loss = 0.0;
        let mut tokens = 0;
        for (sentences, seeds) in batch.chunks(chunk).zip(seeds.chunks(chunk)) {
            let parts: Vec<Result<(f64, Gradients), ParserError>> = sentences
                .par_iter()
                .zip(seeds)
                .map(|(s, &seed)| self.params.sentence_gradients(s, inputs, Some(seed)))
                .collect();
            for (part, s) in parts.into_iter().zip(sentences) {
                let (l, g) = part?;
                loss += l;
                tokens += s.len();
                grads.accumulate(&g);
            }
        }
        grads.scale(1.0 / tokens as f64);
        self.adam.step(&mut self.params.params, &grads);
        self.state.updates += 1;
        self.state.loss_sum += loss;
        self.state.loss_tokens += tokens;
        if self.state.updates % self.params.config.eval_every == 0 {
            self.evaluate()?;
        }
        Ok(loss / tokens as f64)
    }

    /// Mean UAS over the dev treebanks, or `None` without dev data.
    pub fn dev_uas(&self) -> Result<Option<f64>, ParserError> {
        dev_uas(&self.params, &self.data)
    }

    /// Dev evaluation, log row and early-stopping bookkeeping.
    pub fn evaluate(&mut self) -> Result<Option<f64>, ParserError> {
        let score = self.dev_uas()?;
        let loss = if self.state.loss_tokens == 0 {
            0.0
        } else {
            self.state.loss_sum / self.state.loss_tokens as f64
        };
        self.state.log.push(LogRow {
            update: self.state.updates,
            loss,
            dev_uas: score,
        });
        self.state.loss_sum = 0.0;
        self.state.loss_tokens = 0;
        if let Some(score) = score {
            if self.state.best_dev_uas.map_or(true, |b| score > b) {
                self.state.best_dev_uas = Some(score);
                self.state.best_update = self.state.updates;
                self.state.stale_evals = 0;
                self.best = Some(self.params.params.clone());
            } else {
                self.state.stale_evals += 1;
                if self.state.stale_evals >= self.params.config.patience {
                    log::info!(
                        "early stop at update {}: best dev UAS {:.2} at {}",
                        self.state.updates,
                        self.state.best_dev_uas.unwrap_or(0.0),
                        self.state.best_update
                    );
                    self.state.finished = true;
                }
            }
        }
        Ok(score)
    }

    /// Steps until early stopping or `max_updates`, at most `limit` more
    /// updates. Returns whether the run is complete.
    pub fn run_for(&mut self, limit: u64) -> Result<bool, ParserError> {
        let max = self.params.config.max_updates;
        let mut done = 0;
        while !self.state.finished && self.state.updates < max && done < limit {
            self.step()?;
            done += 1;
        }
        if !self.state.finished && self.state.updates >= max {
            if self.state.updates % self.params.config.eval_every != 0 || self.state.log.is_empty() {
                self.evaluate()?;
            }
            self.state.finished = true;
        }
        Ok(self.state.finished)
    }

    pub fn run(&mut self) -> Result<(), ParserError> {
        self.run_for(u64::MAX).map(|_| ())
    }

    /// Best-dev parameters, or the current ones when no dev data was
    /// given.
    pub fn best_parameters(&self) -> ParserParameters {
        let mut out = self.params.clone();
        if let Some(best) = &self.best {
            out.params = best.clone();
        }
        out
    }

    pub fn log_tsv(&self) -> String {
        let mut table = crate::tsv::Table::new(["update", "loss", "dev_uas"]);
        for row in &self.state.log {
            table.push([
                row.update.to_string(),
                format!("{:.6}", row.loss),
                row.dev_uas.map_or_else(|| "NA".to_string(), crate::tsv::pct),
            ]);
        }
        table.render()
    }
}

pub(crate) fn dev_uas(params: &ParserParameters, data: &TrainingData) -> Result<Option<f64>, ParserError> {
    if data.dev.is_empty() {
        return Ok(None);
    }
    let scores: Vec<f64> = data
        .dev
        .par_iter()
        .map(|tb| {
            let pred = params.parse_treebank(tb, data.inputs(&tb.language))?;
            Ok(uas(&pred, tb))
        })
        .collect::<Result<_, ParserError>>()?;
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub params: ParserParameters,
    pub updates: usize,
    pub sentences: usize,
    /// Mean per-token loss at each update, before the step.
    pub losses: Vec<f64>,
}

/// Number of target sentences fine-tuning uses.
pub const FINETUNE_SENTENCES: usize = 10;

/// `steps` SGD updates, one sentence each, cycling through the first ten
/// target sentences in order. No dropout and no early stopping.
pub fn finetune(
    params: &ParserParameters,
    target: &Treebank,
    inputs: LanguageInputs,
    steps: usize,
    lr: f64,
) -> Result<FinetuneOutcome, ParserError> {
    let sentences: Vec<&Sentence> = target.sentences.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(ParserError::Argument("fine-tuning needs at least one sentence".into()));
    }
    if sentences.len() > FINETUNE_SENTENCES {
        log::warn!(
            "fine-tuning uses the first {FINETUNE_SENTENCES} of {} sentences",
            sentences.len()
        );
    }
    let sentences = &sentences[..sentences.len().min(FINETUNE_SENTENCES)];
    let sgd = Sgd { lr };
    let mut out = params.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let s = sentences[step % sentences.len()];
        let (loss, mut grads) = out.sentence_gradients(s, inputs, None)?;
        grads.scale(1.0 / s.len() as f64);
        sgd.step(&mut out.params, &grads);
        losses.push(loss / s.len() as f64);
    }
    Ok(FinetuneOutcome {
        params: out,
        updates: steps,
        sentences: sentences.len(),
        losses,
    })
}
