use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ParserConfig, TypologyMode};
use super::features::SelectiveFeatures;
use super::ParserError;
use crate::autodiff::{
    affine, bilstm, BiLstmLayer, Gradients, LstmWeights, ParamId, Params, Tape, Tensor, Var,
};
use crate::decode::{cle_mst, cle_mst_single_root, ArcWeights};
use crate::treebank::{Inventory, Sentence, Token, Treebank};
use crate::typology::{TypologyVector, WalsRecord, WalsSchema};

/// Per-language side inputs of the parser.
#[derive(Clone, Copy, Debug, Default)]
pub struct LanguageInputs<'a> {
    pub typology: Option<&'a TypologyVector>,
    pub wals: Option<&'a WalsRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Mlp {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    pos_embed: ParamId,
    lstm: Vec<BiLstmLayer>,
    arc_head: Mlp,
    arc_dep: Mlp,
    rel_head: Mlp,
    rel_dep: Mlp,
    arc_u: ParamId,
    arc_b: ParamId,
    rel_u: ParamId,
    rel_u_head: ParamId,
    rel_u_dep: ParamId,
    rel_b: ParamId,
    typology: Option<(ParamId, ParamId, ParamId)>,
    selective: Option<ParamId>,
}

/// Scores of one sentence: `arc.get(i, j)` is head `i` for dependent `j`;
/// `rel[j-1][r]` is relation `r` of `j` under its chosen head.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrices {
    pub arc: ArcWeights,
    pub rel: Vec<Vec<f64>>,
}

/// All trainable tensors of the parser plus what is needed to interpret
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParserParameters {
    pub config: ParserConfig,
    pub inventory: Inventory,
    /// Length of the typology vector fed to the encoder MLP; 0 when the
    /// mode has no input feature.
    pub typology_dim: usize,
    pub wals_schema: Option<WalsSchema>,
    pub params: Params,
    features: Option<SelectiveFeatures>,
    ids: Ids,
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

enum Init {
    Glorot,
    Uniform(f64),
    Zeros,
    LstmBias(usize),
}

fn init_tensor(seed: u64, name: &str, shape: &[usize], init: Init) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(name));
    let n: usize = shape.iter().product();
    let data = match init {
        Init::Zeros => vec![0.0; n],
        Init::Glorot => {
            let (rows, cols) = (shape[0], shape.get(1).copied().unwrap_or(1));
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
        }
        Init::Uniform(limit) => (0..n).map(|_| rng.gen_range(-limit..limit)).collect(),
        Init::LstmBias(hidden) => (0..n)
            .map(|i| if (hidden..2 * hidden).contains(&i) { 1.0 } else { 0.0 })
            .collect(),
    };
    Tensor::new(shape.to_vec(), data)
}

fn need(params: &Params, name: &str, shape: &[usize]) -> Result<ParamId, ParserError> {
    let id = params
        .id(name)
        .ok_or_else(|| ParserError::Checkpoint(format!("missing tensor {name}")))?;
    let got = params.get(id).shape();
    if got != shape {
        return Err(ParserError::Checkpoint(format!(
            "tensor {name} has shape {got:?}, expected {shape:?}"
        )));
    }
    Ok(id)
}

fn lstm_name(layer: usize, dir: &str, part: &str) -> String {
    format!("lstm.{layer}.{dir}.{part}")
}

/// Shapes of every tensor, in registration order.
fn layout(
    config: &ParserConfig,
    inventory: &Inventory,
    typology_dim: usize,
    selective_dim: usize,
) -> Vec<(String, Vec<usize>, Init)> {
    let c = config;
    let p = inventory.upos.len();
    let r = inventory.deprel.len();
    let h2 = 2 * c.lstm_hidden;
    let mut out = vec![("pos_embed".to_string(), vec![p + 1, c.pos_embed_dim], Init::Glorot)];
    let input_feature = c.typology_mode.uses_input_feature();
    for l in 0..c.lstm_layers {
        let input = if l == 0 {
            c.pos_embed_dim + if input_feature { c.typology_out_dim } else { 0 }
        } else {
            h2
        };
        let bound = 1.0 / (c.lstm_hidden as f64).sqrt();
        for dir in ["fwd", "bwd"] {
            out.push((
                lstm_name(l, dir, "w"),
                vec![4 * c.lstm_hidden, input + c.lstm_hidden],
                Init::Uniform(bound),
            ));
            out.push((
                lstm_name(l, dir, "b"),
                vec![4 * c.lstm_hidden],
                Init::LstmBias(c.lstm_hidden),
            ));
        }
    }
    for (name, dim) in [
        ("arc_head", c.arc_mlp_dim),
        ("arc_dep", c.arc_mlp_dim),
        ("rel_head", c.rel_mlp_dim),
        ("rel_dep", c.rel_mlp_dim),
    ] {
        out.push((format!("mlp.{name}.w"), vec![dim, h2], Init::Glorot));
        out.push((format!("mlp.{name}.b"), vec![dim], Init::Zeros));
    }
    let (a, d) = (c.arc_mlp_dim, c.rel_mlp_dim);
    out.push(("biaffine.arc.U".into(), vec![a, a], Init::Zeros));
    out.push(("biaffine.arc.b".into(), vec![a], Init::Zeros));
    out.push(("biaffine.rel.U".into(), vec![r * d, d], Init::Zeros));
    out.push(("biaffine.rel.u_head".into(), vec![r, d], Init::Zeros));
    out.push(("biaffine.rel.u_dep".into(), vec![r, d], Init::Zeros));
    out.push(("biaffine.rel.b".into(), vec![r], Init::Zeros));
    if input_feature {
        let (hm, o) = (c.typology_mlp_hidden, c.typology_out_dim);
        out.push(("typology.w1".into(), vec![hm, typology_dim], Init::Glorot));
        out.push(("typology.b".into(), vec![hm], Init::Zeros));
        out.push(("typology.w2".into(), vec![o, hm], Init::Glorot));
    }
    if c.typology_mode.uses_selective_sharing() {
        out.push(("selective.v".into(), vec![selective_dim], Init::Zeros));
    }
    out
}

impl ParserParameters {
    /// Fresh parameters. Each tensor draws from its own generator seeded by
    /// `config.seed` and its name, so adding a tensor never perturbs the
    /// others.
    pub fn init(
        config: ParserConfig,
        inventory: Inventory,
        typology_dim: usize,
        wals_schema: Option<WalsSchema>,
    ) -> Result<Self, ParserError> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(ParserError::Config(problems));
        }
        let wals_schema = Self::schema_for(&config, wals_schema);
        let selective_dim = Self::selective_dim(&wals_schema);
        let mut params = Params::new();
        for (name, shape, init) in layout(&config, &inventory, typology_dim, selective_dim) {
            let t = init_tensor(config.seed, &name, &shape, init);
            params.insert(name, t);
        }
        Self::from_params(config, inventory, typology_dim, wals_schema, params)
    }

    fn schema_for(config: &ParserConfig, schema: Option<WalsSchema>) -> Option<WalsSchema> {
        if config.typology_mode.uses_selective_sharing() {
            Some(schema.unwrap_or_default())
        } else {
            None
        }
    }

    fn selective_dim(schema: &Option<WalsSchema>) -> usize {
        schema.as_ref().map_or(0, |s| SelectiveFeatures::new(s).dim())
    }

    /// Wraps an existing tensor store, checking every expected name and
    /// shape.
    pub fn from_params(
        config: ParserConfig,
        inventory: Inventory,
        typology_dim: usize,
        wals_schema: Option<WalsSchema>,
        params: Params,
    ) -> Result<Self, ParserError> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(ParserError::Config(problems));
        }
        let mode = config.typology_mode;
        if mode.uses_input_feature() && typology_dim == 0 {
            return Err(ParserError::Argument(
                "input-feature mode needs a non-empty typology vector".into(),
            ));
        }
        let wals_schema = Self::schema_for(&config, wals_schema);
        let features = wals_schema.as_ref().map(SelectiveFeatures::new);
        let selective_dim = features.as_ref().map_or(0, SelectiveFeatures::dim);
        let expected = layout(&config, &inventory, typology_dim, selective_dim);
        if params.len() != expected.len() {
            return Err(ParserError::Checkpoint(format!(
                "{} tensors, expected {}",
                params.len(),
                expected.len()
            )));
        }
        for (name, shape, _) in &expected {
            need(&params, name, shape)?;
        }
        let id = |name: &str| params.id(name).expect("checked above");
        let mlp = |name: &str| Mlp {
            w: id(&format!("mlp.{name}.w")),
            b: id(&format!("mlp.{name}.b")),
        };
        let lstm = (0..config.lstm_layers)
            .map(|l| {
                let dir = |d: &str| LstmWeights {
                    w: id(&lstm_name(l, d, "w")),
                    b: id(&lstm_name(l, d, "b")),
                    hidden: config.lstm_hidden,
                };
                BiLstmLayer {
                    forward: dir("fwd"),
                    backward: dir("bwd"),
                }
            })
            .collect();
        let ids = Ids {
            pos_embed: id("pos_embed"),
            lstm,
            arc_head: mlp("arc_head"),
            arc_dep: mlp("arc_dep"),
            rel_head: mlp("rel_head"),
            rel_dep: mlp("rel_dep"),
            arc_u: id("biaffine.arc.U"),
            arc_b: id("biaffine.arc.b"),
            rel_u: id("biaffine.rel.U"),
            rel_u_head: id("biaffine.rel.u_head"),
            rel_u_dep: id("biaffine.rel.u_dep"),
            rel_b: id("biaffine.rel.b"),
            typology: mode
                .uses_input_feature()
                .then(|| (id("typology.w1"), id("typology.b"), id("typology.w2"))),
            selective: mode.uses_selective_sharing().then(|| id("selective.v")),
        };
        Ok(ParserParameters {
            config,
            inventory,
            typology_dim,
            wals_schema,
            params,
            features,
            ids,
        })
    }

    pub fn mode(&self) -> TypologyMode {
        self.config.typology_mode
    }

    pub fn selective_features(&self) -> Option<&SelectiveFeatures> {
        self.features.as_ref()
    }

    /// Same weights re-interpreted under `mode`: tensors the new mode lacks
    /// are dropped (the first LSTM layer loses its Φ columns); tensors it
    /// adds are freshly initialized.
    pub fn with_mode(&self, mode: TypologyMode, typology_dim: usize) -> Result<Self, ParserError> {
        let mut config = self.config.clone();
        config.typology_mode = mode;
        let schema = Self::schema_for(&config, self.wals_schema.clone());
        let typology_dim = if mode.uses_input_feature() { typology_dim } else { 0 };
        let fresh = Self::init(config.clone(), self.inventory.clone(), typology_dim, schema.clone())?;
        let embed = self.config.pos_embed_dim;
        let hidden = self.config.lstm_hidden;
        let mut params = Params::new();
        for (name, t) in fresh.params.iter() {
            let Some(old) = self.params.by_name(name) else {
                params.insert(name, t.clone());
                continue;
            };
            let value = if old.shape() == t.shape() {
                old.clone()
            } else if name.starts_with("lstm.0.") && name.ends_with(".w") {
                // keep the embedding and recurrent columns, drop or add the
                // typology block in between
                let mut data = Vec::with_capacity(t.len());
                for row in 0..t.rows() {
                    let (o, f) = (old.row(row), t.row(row));
                    data.extend_from_slice(&o[..embed]);
                    let extra = t.cols() - embed - hidden;
                    if extra > 0 {
                        data.extend_from_slice(&f[embed..embed + extra]);
                    }
                    data.extend_from_slice(&o[o.len() - hidden..]);
                }
                Tensor::new(t.shape().to_vec(), data)
            } else {
                t.clone()
            };
            params.insert(name, value);
        }
        Self::from_params(config, self.inventory.clone(), typology_dim, schema, params)
    }

    fn pos_indices(&self, sentence: &Sentence) -> Result<Vec<usize>, ParserError> {
        sentence
            .tokens
            .iter()
            .map(|t| {
                self.inventory
                    .pos_index(&t.upos)
                    .ok_or_else(|| ParserError::Label(t.upos.clone()))
            })
            .collect()
    }

    fn rel_indices(&self, sentence: &Sentence) -> Result<Vec<usize>, ParserError> {
        sentence
            .tokens
            .iter()
            .map(|t| {
                self.inventory
                    .normalize_rel(&t.deprel)
                    .and_then(|r| self.inventory.rel_index(r))
                    .ok_or_else(|| ParserError::Label(t.deprel.clone()))
            })
            .collect()
    }

    fn phi(&self, tape: &mut Tape, inputs: LanguageInputs) -> Result<Option<Var>, ParserError> {
        let Some((w1, b, w2)) = self.ids.typology else {
            return Ok(None);
        };
        let t = inputs.typology.ok_or_else(|| {
            ParserError::Argument("typology vector required in input-feature mode".into())
        })?;
        if t.dim() != self.typology_dim {
            return Err(ParserError::Autodiff(crate::autodiff::AutodiffError::Shape {
                op: "typology_mlp",
                detail: format!("typology dim {} but W1 expects {}", t.dim(), self.typology_dim),
            }));
        }
        let x = tape.constant(Tensor::vector(t.values.clone()));
        let (w1, b, w2) = (tape.param(w1), tape.param(b), tape.param(w2));
        let hidden = affine(tape, x, w1, b)?;
        let hidden = tape.tanh(hidden)?;
        Ok(Some(tape.matvec(w2, hidden)?))
    }

    /// Contextual vectors `h_0..h_n`; `h_0` belongs to the ROOT
    /// pseudo-token.
    pub fn encode_vars(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        inputs: LanguageInputs,
    ) -> Result<Vec<Var>, ParserError> {
        let pos = self.pos_indices(sentence)?;
        let phi = self.phi(tape, inputs)?;
        let table = tape.param(self.ids.pos_embed);
        let root = self.inventory.upos.len();
        let mut xs = Vec::with_capacity(pos.len() + 1);
        for idx in std::iter::once(root).chain(pos) {
            let e = tape.embedding_lookup(table, idx)?;
            let e = tape.dropout(e, self.config.dropout)?;
            xs.push(match phi {
                Some(phi) => tape.concat(&[e, phi])?,
                None => e,
            });
        }
        Ok(bilstm(tape, &xs, &self.ids.lstm, self.config.dropout)?)
    }

    /// Encoder outputs `h_1..h_n` in evaluation mode.
    pub fn encode(&self, sentence: &Sentence, inputs: LanguageInputs) -> Result<Vec<Vec<f64>>, ParserError> {
        let mut tape = Tape::new(&self.params);
        let h = self.encode_vars(&mut tape, sentence, inputs)?;
        Ok(h[1..].iter().map(|&v| tape.value(v).data().to_vec()).collect())
    }

    fn mlp(&self, tape: &mut Tape, x: Var, m: Mlp) -> Result<Var, ParserError> {
        let (w, b) = (tape.param(m.w), tape.param(m.b));
        let y = affine(tape, x, w, b)?;
        Ok(tape.tanh(y)?)
    }

    /// Arc logits `[n, n+1]`, dependent-major, plus the relation MLP
    /// outputs for all positions (`[n+1, d]` heads, `[n, d]` dependents).
    fn arc_and_rel_inputs(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        inputs: LanguageInputs,
    ) -> Result<(Var, Var, Var), ParserError> {
        let n = sentence.len();
        let features = match (&self.features, self.ids.selective) {
            (Some(f), Some(_)) => {
                let wals = inputs.wals.ok_or_else(|| {
                    ParserError::Argument("WALS record required in selective-sharing mode".into())
                })?;
                Some(f.sentence(sentence, wals))
            }
            _ => None,
        };
        let h = self.encode_vars(tape, sentence, inputs)?;
        let all = tape.stack_rows(&h)?;
        let deps: Vec<usize> = (1..=n).collect();
        let words = tape.gather_rows(all, &deps)?;
        let arc_head = self.mlp(tape, all, self.ids.arc_head)?;
        let arc_dep = self.mlp(tape, words, self.ids.arc_dep)?;
        let (u, b) = (tape.param(self.ids.arc_u), tape.param(self.ids.arc_b));
        let z = affine(tape, arc_dep, u, b)?;
        let mut arcs = tape.matmul_nt(z, arc_head)?;
        if let (Some(cells), Some(v)) = (features, self.ids.selective) {
            let v = tape.param(v);
            let bias = tape.feature_bias(v, n, n + 1, cells)?;
            arcs = tape.add(arcs, bias)?;
        }
        let rel_head = self.mlp(tape, all, self.ids.rel_head)?;
        let rel_dep = self.mlp(tape, words, self.ids.rel_dep)?;
        Ok((arcs, rel_head, rel_dep))
    }

    fn rel_scores(&self, tape: &mut Tape, rel_head: Var, rel_dep: Var, heads: &[usize]) -> Result<Var, ParserError> {
        let hg = tape.gather_rows(rel_head, heads)?;
        let u = tape.param(self.ids.rel_u);
        let bil = tape.bilinear(hg, rel_dep, u)?;
        let uh = tape.param(self.ids.rel_u_head);
        let lin_h = tape.matmul_nt(hg, uh)?;
        let ud = tape.param(self.ids.rel_u_dep);
        let lin_d = tape.matmul_nt(rel_dep, ud)?;
        let s = tape.add(bil, lin_h)?;
        let s = tape.add(s, lin_d)?;
        let b = tape.param(self.ids.rel_b);
        Ok(tape.add_row(s, b)?)
    }

    /// Summed head and label cross entropy of one gold sentence.
    pub fn loss_var(
        &self,
        tape: &mut Tape,
        sentence: &Sentence,
        inputs: LanguageInputs,
    ) -> Result<Var, ParserError> {
        let heads = sentence.heads();
        let rels = self.rel_indices(sentence)?;
        let (arcs, rel_head, rel_dep) = self.arc_and_rel_inputs(tape, sentence, inputs)?;
        let exclude: Vec<Option<usize>> = (1..=sentence.len()).map(Some).collect();
        let arc_loss = tape.cross_entropy_rows(arcs, &heads, &exclude)?;
        let rel = self.rel_scores(tape, rel_head, rel_dep, &heads)?;
        let rel_loss = tape.cross_entropy_rows(rel, &rels, &vec![None; rels.len()])?;
        Ok(tape.add(arc_loss, rel_loss)?)
    }

    /// Evaluation-mode loss of one sentence, summed over its tokens.
    pub fn loss(&self, sentence: &Sentence, inputs: LanguageInputs) -> Result<f64, ParserError> {
        let mut tape = Tape::new(&self.params);
        let l = self.loss_var(&mut tape, sentence, inputs)?;
        Ok(tape.value(l).item())
    }

    /// Summed loss and gradients of one sentence. `dropout_seed` switches
    /// the tape to training mode.
    pub fn sentence_gradients(
        &self,
        sentence: &Sentence,
        inputs: LanguageInputs,
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Gradients), ParserError> {
        let mut tape = match dropout_seed {
            Some(seed) => Tape::training(&self.params, seed),
            None => Tape::new(&self.params),
        };
        let l = self.loss_var(&mut tape, sentence, inputs)?;
        let loss = tape.value(l).item();
        Ok((loss, tape.backward(l)?))
    }

    /// Arc scores with the chosen heads' relation scores. Heads come from
    /// the decoder unless `heads` is given.
    pub fn scores(
        &self,
        sentence: &Sentence,
        inputs: LanguageInputs,
        heads: Option<&[usize]>,
    ) -> Result<(ScoreMatrices, Vec<usize>), ParserError> {
        let n = sentence.len();
        if n == 0 {
            return Err(ParserError::Argument("empty sentence".into()));
        }
        let mut tape = Tape::new(&self.params);
        let (arcs, rel_head, rel_dep) = self.arc_and_rel_inputs(&mut tape, sentence, inputs)?;
        let s = tape.value(arcs);
        let mut w = vec![0.0; (n + 1) * n];
        for dep in 1..=n {
            for head in 0..=n {
                w[head * n + dep - 1] = s.at(dep - 1, head);
            }
        }
        let arc = ArcWeights::new(n, w)?;
        let heads = match heads {
            Some(h) => h.to_vec(),
            None if self.config.single_root => cle_mst_single_root(&arc)?,
            None => cle_mst(&arc)?,
        };
        let rel = self.rel_scores(&mut tape, rel_head, rel_dep, &heads)?;
        let rt = tape.value(rel);
        let rel = (0..n).map(|j| rt.row(j).to_vec()).collect();
        Ok((ScoreMatrices { arc, rel }, heads))
    }

    /// Predicted tree: decoded heads and the best relation under each.
    pub fn parse(&self, sentence: &Sentence, inputs: LanguageInputs) -> Result<Sentence, ParserError> {
        let (scores, heads) = self.scores(sentence, inputs, None)?;
        let tokens = sentence
            .tokens
            .iter()
            .zip(heads)
            .zip(&scores.rel)
            .map(|((t, head), row)| {
                let best = argmax(row);
                Token::new(t.index, &t.upos, head, &self.inventory.deprel[best])
            })
            .collect();
        Ok(Sentence::new(tokens))
    }

    pub fn parse_treebank(&self, treebank: &Treebank, inputs: LanguageInputs) -> Result<Treebank, ParserError> {
        let sentences = treebank
            .sentences
            .iter()
            .map(|s| self.parse(s, inputs))
            .collect::<Result<_, _>>()?;
        Ok(Treebank::new(treebank.language.clone(), sentences))
    }
}

/// First index of the maximum.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}
