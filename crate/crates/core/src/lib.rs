//! Typology-augmented cross-lingual delexicalized dependency parsing.
//!
//! The crate is organised bottom-up:
//!
//! * [`treebank`]: CoNLL-U ingest, delexicalization, truncation and the
//!   synthetic mirror-pair fixture.
//! * [`typology`]: WALS k-hot vectors, Liu directionalities, surface
//!   statistics, corpus-derived WALS values and K-Means cluster one-hots.
//! * [`autodiff`]: a small reverse-mode tape with the operators the parser
//!   needs, plus Adam and SGD.
//! * [`decode`]: Chu-Liu-Edmonds maximum spanning arborescence.
//! * [`parser`]: the biaffine parser with input-feature and
//!   selective-sharing typology injection, training and fine-tuning.
//! * [`analysis`]: attachment scores, permutation tests, probing,
//!   transferability and cluster geometry reports.

pub mod analysis;
pub mod autodiff;
pub mod decode;
pub mod parser;
pub mod treebank;
pub mod tsv;
pub mod typology;

pub use analysis::{evaluate, EvalReport, ProbeReport, SignificanceResult};
pub use decode::{brute_force_mst, cle_mst, ArcWeights};
pub use parser::{LanguageInputs, ParserConfig, ParserParameters, TypologyMode};
pub use treebank::{Inventory, Sentence, Token, Treebank};
pub use typology::{TypologyKind, TypologyVector, WalsRecord, WalsSchema};
