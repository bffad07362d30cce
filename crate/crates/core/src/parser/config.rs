use serde::{Deserialize, Serialize};

/// How typology enters the parser.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TypologyMode {
    #[default]
    None,
    /// `Φ = W2 tanh(W1 T + b)` concatenated to every BiLSTM input.
    InputFeature,
    /// Learned bias `vᵀ f_ij` on arc scores from WALS feature templates.
    SelectiveSharing,
    Both,
}

impl TypologyMode {
    pub fn uses_input_feature(self) -> bool {
        matches!(self, TypologyMode::InputFeature | TypologyMode::Both)
    }

    pub fn uses_selective_sharing(self) -> bool {
        matches!(self, TypologyMode::SelectiveSharing | TypologyMode::Both)
    }
}

impl std::str::FromStr for TypologyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "NONE" => Ok(TypologyMode::None),
            "INPUT_FEATURE" => Ok(TypologyMode::InputFeature),
            "SELECTIVE_SHARING" => Ok(TypologyMode::SelectiveSharing),
            "BOTH" => Ok(TypologyMode::Both),
            other => Err(format!("unknown typology mode {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParserConfig {
    pub pos_embed_dim: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub arc_mlp_dim: usize,
    pub rel_mlp_dim: usize,
    pub typology_mode: TypologyMode,
    pub typology_mlp_hidden: usize,
    pub typology_out_dim: usize,
    pub dropout: f64,
    pub batch_tokens: usize,
    pub max_updates: u64,
    pub lr: f64,
    /// Probability of drawing a batch from a real treebank when an
    /// auxiliary pool is present.
    pub gd_real_prob: f64,
    /// Treebanks are cut to this many tokens before training.
    pub max_train_tokens: usize,
    /// Updates between dev evaluations.
    pub eval_every: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Force exactly one ROOT child at decode time.
    pub single_root: bool,
    pub seed: u64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            pos_embed_dim: 100,
            lstm_layers: 3,
            lstm_hidden: 400,
            arc_mlp_dim: 500,
            rel_mlp_dim: 100,
            typology_mode: TypologyMode::None,
            typology_mlp_hidden: 128,
            typology_out_dim: 32,
            dropout: 0.33,
            batch_tokens: 500,
            max_updates: 200_000,
            lr: 1e-3,
            gd_real_prob: 0.2,
            max_train_tokens: 500_000,
            eval_every: 1000,
            patience: 20,
            single_root: false,
            seed: 1,
        }
    }
}

impl ParserConfig {
    /// Every violated constraint, in field order.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let positive = [
            ("pos_embed_dim", self.pos_embed_dim),
            ("lstm_layers", self.lstm_layers),
            ("lstm_hidden", self.lstm_hidden),
            ("arc_mlp_dim", self.arc_mlp_dim),
            ("rel_mlp_dim", self.rel_mlp_dim),
            ("batch_tokens", self.batch_tokens),
            ("max_train_tokens", self.max_train_tokens),
        ];
        for (name, value) in positive {
            if value == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.typology_mode.uses_input_feature()
            && (self.typology_mlp_hidden == 0 || self.typology_out_dim == 0)
        {
            problems.push("typology MLP dimensions must be positive in input-feature mode".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.gd_real_prob) {
            problems.push(format!("gd_real_prob {} outside [0, 1]", self.gd_real_prob));
        }
        if !(self.lr > 0.0) {
            problems.push("lr must be positive".into());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be positive".into());
        }
        problems
    }
}
