//! Delexicalized universal-dependency treebanks.
//!
//! Only the index, UPOS tag, head and relation columns survive ingest. The
//! remaining CoNLL-U columns can optionally be kept verbatim so that a file
//! can be written back out unchanged.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Universal POS tags of UD v1.
pub const UD1_UPOS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

/// Universal dependency relations of UD v1.
pub const UD1_DEPREL: [&str; 40] = [
    "acl",
    "advcl",
    "advmod",
    "amod",
    "appos",
    "aux",
    "auxpass",
    "case",
    "cc",
    "ccomp",
    "compound",
    "conj",
    "cop",
    "csubj",
    "csubjpass",
    "dep",
    "det",
    "discourse",
    "dislocated",
    "dobj",
    "expl",
    "foreign",
    "goeswith",
    "iobj",
    "list",
    "mark",
    "mwe",
    "name",
    "neg",
    "nmod",
    "nsubj",
    "nsubjpass",
    "nummod",
    "parataxis",
    "punct",
    "remnant",
    "reparandum",
    "root",
    "vocative",
    "xcomp",
];

#[derive(Debug, Error)]
pub enum TreebankError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence {sentence} (starting at line {line}): {message}")]
    Tree {
        sentence: usize,
        line: usize,
        message: String,
    },
    #[error("schema: {0}")]
    Schema(String),
}

/// Closed POS and relation label sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inventory {
    pub upos: Vec<String>,
    pub deprel: Vec<String>,
}

impl Default for Inventory {
    fn default() -> Self {
        Inventory::ud_v1()
    }
}

impl Inventory {
    pub fn ud_v1() -> Self {
        Inventory {
            upos: UD1_UPOS.iter().map(|s| s.to_string()).collect(),
            deprel: UD1_DEPREL.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// UD v2 renames CONJ to CCONJ and replaces a handful of relations.
    pub fn ud_v2() -> Self {
        let mut inv = Inventory::ud_v1();
        for tag in inv.upos.iter_mut() {
            if tag == "CONJ" {
                *tag = "CCONJ".to_string();
            }
        }
        inv.deprel.retain(|r| {
            !matches!(
                r.as_str(),
                "auxpass" | "csubjpass" | "dobj" | "mwe" | "name" | "neg" | "nsubjpass" | "remnant"
            )
        });
        for extra in ["aux:pass", "clf", "csubj:pass", "fixed", "flat", "nsubj:pass", "obj", "obl", "orphan"] {
            inv.deprel.push(extra.to_string());
        }
        inv.deprel.sort();
        inv
    }

    /// Parses a schema file: a `[upos]` section and a `[deprel]` section,
    /// one label per line. Blank lines and `#` comments are ignored.
    pub fn from_schema_text(text: &str) -> Result<Self, TreebankError> {
        let mut upos = Vec::new();
        let mut deprel = Vec::new();
        let mut section: Option<&mut Vec<String>> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line {
                "[upos]" => section = Some(&mut upos),
                "[deprel]" => section = Some(&mut deprel),
                label => match section.as_mut() {
                    Some(list) => {
                        if list.iter().any(|l| l == label) {
                            return Err(TreebankError::Schema(format!(
                                "line {}: duplicate label {label}",
                                lineno + 1
                            )));
                        }
                        list.push(label.to_string())
                    }
                    None => {
                        return Err(TreebankError::Schema(format!(
                            "line {}: label outside of a [upos]/[deprel] section",
                            lineno + 1
                        )))
                    }
                },
            }
        }
        if upos.is_empty() || deprel.is_empty() {
            return Err(TreebankError::Schema(
                "both [upos] and [deprel] sections must be non-empty".into(),
            ));
        }
        Ok(Inventory { upos, deprel })
    }

    pub fn to_schema_text(&self) -> String {
        let mut out = String::from("[upos]\n");
        for t in &self.upos {
            out.push_str(t);
            out.push('\n');
        }
        out.push_str("\n[deprel]\n");
        for r in &self.deprel {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn pos_index(&self, tag: &str) -> Option<usize> {
        self.upos.iter().position(|t| t == tag)
    }

    pub fn rel_index(&self, rel: &str) -> Option<usize> {
        self.deprel.iter().position(|r| r == rel)
    }

    /// Maps a possibly subtyped label (`nmod:poss`) onto the inventory.
    pub fn normalize_rel<'a>(&self, rel: &'a str) -> Option<&'a str> {
        if self.rel_index(rel).is_some() {
            return Some(rel);
        }
        let base = rel.split(':').next().unwrap_or(rel);
        self.rel_index(base).map(|_| base)
    }

    pub fn pos_hash(&self) -> String {
        hash_labels(&self.upos)
    }

    pub fn rel_hash(&self) -> String {
        hash_labels(&self.deprel)
    }
}

fn hash_labels(labels: &[String]) -> String {
    let mut hasher = Sha256::new();
    for l in labels {
        hasher.update(l.as_bytes());
        hasher.update(b"\n");
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    /// 1-based position.
    pub index: usize,
    pub upos: String,
    /// 0 is the artificial ROOT.
    pub head: usize,
    pub deprel: String,
    /// Original ten columns, kept only when requested at ingest.
    pub raw: Option<Vec<String>>,
}

impl Token {
    pub fn new(index: usize, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            index,
            upos: upos.to_string(),
            head,
            deprel: deprel.to_string(),
            raw: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    /// Builds a sentence from parallel tag/head/label slices.
    pub fn from_parts(upos: &[&str], heads: &[usize], deprels: &[&str]) -> Self {
        let tokens = upos
            .iter()
            .zip(heads)
            .zip(deprels)
            .enumerate()
            .map(|(i, ((p, &h), r))| Token::new(i + 1, p, h, r))
            .collect();
        Sentence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn upos(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.upos.as_str()).collect()
    }

    /// Checks contiguous indices and that heads form a tree rooted at 0.
    pub fn validate(&self) -> Result<(), String> {
        validate_heads(&self.heads()).and_then(|_| {
            for (i, t) in self.tokens.iter().enumerate() {
                if t.index != i + 1 {
                    return Err(format!("token index {} at position {}", t.index, i + 1));
                }
            }
            Ok(())
        })
    }
}

/// BFS from ROOT over a 1-based head array (`heads[j-1]` is the head of `j`).
pub fn validate_heads(heads: &[usize]) -> Result<(), String> {
    let n = heads.len();
    let mut children = vec![Vec::new(); n + 1];
    for (j, &h) in heads.iter().enumerate() {
        let dep = j + 1;
        if h > n {
            return Err(format!("token {dep} has head {h} beyond sentence length {n}"));
        }
        if h == dep {
            return Err(format!("token {dep} is its own head"));
        }
        children[h].push(dep);
    }
    let mut seen = vec![false; n + 1];
    seen[0] = true;
    let mut queue = VecDeque::from([0]);
    while let Some(node) = queue.pop_front() {
        for &c in &children[node] {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(unreached) => Err(format!(
            "token {unreached} is not reachable from ROOT (cycle in head structure)"
        )),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Treebank {
    pub language: String,
    pub sentences: Vec<Sentence>,
}

impl Treebank {
    pub fn new(language: impl Into<String>, sentences: Vec<Sentence>) -> Self {
        Treebank {
            language: language.into(),
            sentences,
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Every arc as `(head, dependent, head_upos, dep_upos, deprel)`; the
    /// head tag is `None` for ROOT.
    pub fn arcs(&self) -> impl Iterator<Item = Arc<'_>> {
        self.sentences.iter().flat_map(|s| {
            s.tokens.iter().map(move |t| Arc {
                head: t.head,
                dependent: t.index,
                head_upos: if t.head == 0 {
                    None
                } else {
                    Some(s.tokens[t.head - 1].upos.as_str())
                },
                dep_upos: t.upos.as_str(),
                deprel: t.deprel.as_str(),
            })
        })
    }

    /// Same sentences with every arc mirrored: token `i` becomes `n+1-i`.
    pub fn reversed(&self) -> Treebank {
        let sentences = self
            .sentences
            .iter()
            .map(|s| {
                let n = s.len();
                let mut tokens: Vec<Token> = s
                    .tokens
                    .iter()
                    .rev()
                    .map(|t| Token {
                        index: n + 1 - t.index,
                        upos: t.upos.clone(),
                        head: if t.head == 0 { 0 } else { n + 1 - t.head },
                        deprel: t.deprel.clone(),
                        raw: None,
                    })
                    .collect();
                tokens.sort_by_key(|t| t.index);
                Sentence { tokens }
            })
            .collect();
        Treebank::new(self.language.clone(), sentences)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Arc<'a> {
    pub head: usize,
    pub dependent: usize,
    pub head_upos: Option<&'a str>,
    pub dep_upos: &'a str,
    pub deprel: &'a str,
}

impl Arc<'_> {
    pub fn head_first(&self) -> bool {
        self.head < self.dependent
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReadOptions {
    /// Keep all ten columns for faithful re-serialization.
    pub keep_raw: bool,
    /// Fail the whole file on a tree violation instead of dropping the
    /// sentence.
    pub strict: bool,
}

/// A sentence dropped at ingest because its heads do not form a tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub sentence: usize,
    pub line: usize,
    pub message: String,
}

/// Strict CoNLL-U ingest: a malformed tree fails the whole file.
pub fn parse_conllu(
    text: &str,
    language: &str,
    inventory: &Inventory,
) -> Result<Treebank, TreebankError> {
    read_conllu(
        text,
        language,
        inventory,
        ReadOptions {
            strict: true,
            ..Default::default()
        },
    )
    .map(|(tb, _)| tb)
}

/// CoNLL-U ingest. In lenient mode sentences violating the tree invariant
/// are skipped, logged and reported back.
pub fn read_conllu(
    text: &str,
    language: &str,
    inventory: &Inventory,
    options: ReadOptions,
) -> Result<(Treebank, Vec<Rejected>), TreebankError> {
    let mut sentences = Vec::new();
    let mut rejected = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut start_line = 1;
    let mut sentence_no = 0;

    let finish = |tokens: Vec<Token>,
                      start_line: usize,
                      sentences: &mut Vec<Sentence>,
                      rejected: &mut Vec<Rejected>,
                      sentence_no: &mut usize|
     -> Result<(), TreebankError> {
        if tokens.is_empty() {
            return Ok(());
        }
        *sentence_no += 1;
        let sentence = Sentence { tokens };
        match sentence.validate() {
            Ok(()) => sentences.push(sentence),
            Err(message) if options.strict => {
                return Err(TreebankError::Tree {
                    sentence: *sentence_no,
                    line: start_line,
                    message,
                })
            }
            Err(message) => {
                log::warn!(
                    "{language}: dropping sentence {} (line {start_line}): {message}",
                    *sentence_no
                );
                rejected.push(Rejected {
                    sentence: *sentence_no,
                    line: start_line,
                    message,
                });
            }
        }
        Ok(())
    };

    for (lineno, raw_line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(
                std::mem::take(&mut current),
                start_line,
                &mut sentences,
                &mut rejected,
                &mut sentence_no,
            )?;
            continue;
        }
        if current.is_empty() {
            start_line = lineno;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(TreebankError::Parse {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        // multiword ranges and empty nodes
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let parse_err = |message: String| TreebankError::Parse {
            line: lineno,
            message,
        };
        let index: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(format!("bad token index {:?}", cols[0])))?;
        if index == 0 {
            return Err(parse_err("token index must be >= 1".into()));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| parse_err(format!("bad head {:?}", cols[6])))?;
        let upos = cols[3];
        if inventory.pos_index(upos).is_none() {
            return Err(parse_err(format!("POS tag {upos:?} not in inventory")));
        }
        let deprel = inventory
            .normalize_rel(cols[7])
            .ok_or_else(|| parse_err(format!("relation {:?} not in inventory", cols[7])))?;
        current.push(Token {
            index,
            upos: upos.to_string(),
            head,
            deprel: deprel.to_string(),
            raw: options
                .keep_raw
                .then(|| cols.iter().map(|c| c.to_string()).collect()),
        });
    }
    finish(
        current,
        start_line,
        &mut sentences,
        &mut rejected,
        &mut sentence_no,
    )?;

    Ok((Treebank::new(language, sentences), rejected))
}

/// Writes CoNLL-U. Tokens without raw columns get `_` placeholders.
pub fn to_conllu(treebank: &Treebank) -> String {
    let mut out = String::new();
    for sentence in &treebank.sentences {
        for t in &sentence.tokens {
            match &t.raw {
                Some(raw) => {
                    let mut cols = raw.clone();
                    cols[0] = t.index.to_string();
                    cols[3] = t.upos.clone();
                    cols[6] = t.head.to_string();
                    cols[7] = t.deprel.clone();
                    out.push_str(&cols.join("\t"));
                }
                None => {
                    let _ = write!(
                        out,
                        "{}\t_\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                        t.index, t.upos, t.head, t.deprel
                    );
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Longest sentence prefix with at most `max_tokens` tokens. Sentences are
/// never split.
pub fn truncate(treebank: &Treebank, max_tokens: usize) -> Treebank {
    assert!(max_tokens > 0, "max_tokens must be positive");
    let mut total = 0;
    let mut keep = 0;
    for s in &treebank.sentences {
        if total + s.len() > max_tokens {
            break;
        }
        total += s.len();
        keep += 1;
    }
    if keep == 0 && !treebank.sentences.is_empty() {
        log::warn!(
            "{}: first sentence ({} tokens) exceeds the {max_tokens}-token budget; treebank is empty",
            treebank.language,
            treebank.sentences[0].len()
        );
    }
    Treebank::new(
        treebank.language.clone(),
        treebank.sentences[..keep].to_vec(),
    )
}

/// Tags of the mirror-pair grammar with their attachment rank. A token
/// attaches to the nearest token of strictly higher rank on the head side,
/// else to the sentence root.
const MIRROR_TAGS: [(&str, u8, u32); 8] = [
    ("VERB", 4, 3),
    ("NOUN", 3, 4),
    ("PRON", 3, 2),
    ("ADJ", 2, 2),
    ("NUM", 2, 1),
    ("DET", 1, 2),
    ("ADP", 1, 2),
    ("ADV", 1, 1),
];

fn mirror_label(dep: &str, head: Option<&str>) -> &'static str {
    match (dep, head) {
        (_, None) => "root",
        ("VERB", _) => "ccomp",
        ("NOUN", Some("VERB")) => "dobj",
        ("PRON", Some("VERB")) => "nsubj",
        ("NOUN", _) | ("PRON", _) => "nmod",
        ("ADJ", _) => "amod",
        ("NUM", _) => "nummod",
        ("DET", _) => "det",
        ("ADP", _) => "case",
        _ => "advmod",
    }
}

fn mirror_sentence(tags: &[&str], head_initial: bool) -> Sentence {
    let n = tags.len();
    let rank = |t: &str| MIRROR_TAGS.iter().find(|m| m.0 == t).map(|m| m.1).unwrap();
    let root = if head_initial { 1 } else { n };
    let mut heads = vec![0usize; n];
    for j in 1..=n {
        if j == root {
            continue;
        }
        let r = rank(tags[j - 1]);
        let candidates: Box<dyn Iterator<Item = usize>> = if head_initial {
            Box::new((1..j).rev())
        } else {
            Box::new(j + 1..=n)
        };
        let mut head = root;
        for c in candidates {
            if rank(tags[c - 1]) > r {
                head = c;
                break;
            }
        }
        heads[j - 1] = head;
    }
    let labels: Vec<&str> = (0..n)
        .map(|j| {
            let h = heads[j];
            mirror_label(tags[j], (h != 0).then(|| tags[h - 1]))
        })
        .collect();
    Sentence::from_parts(tags, &heads, &labels)
}

/// Two synthetic languages sharing POS sequences but with mirrored
/// attachment: `A` is strictly head-final, `B` strictly head-initial.
pub fn synth_mirror_pair(n_sentences: usize, max_len: usize, seed: u64) -> (Treebank, Treebank) {
    assert!(n_sentences >= 1 && max_len >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_weight: u32 = MIRROR_TAGS.iter().map(|m| m.2).sum();
    let mut a = Vec::with_capacity(n_sentences);
    let mut b = Vec::with_capacity(n_sentences);
    for _ in 0..n_sentences {
        let len = rng.gen_range(2..=max_len);
        let tags: Vec<&str> = (0..len)
            .map(|_| {
                let mut x = rng.gen_range(0..total_weight);
                MIRROR_TAGS
                    .iter()
                    .find(|m| {
                        if x < m.2 {
                            true
                        } else {
                            x -= m.2;
                            false
                        }
                    })
                    .unwrap()
                    .0
            })
            .collect();
        a.push(mirror_sentence(&tags, false));
        b.push(mirror_sentence(&tags, true));
    }
    (Treebank::new("A", a), Treebank::new("B", b))
}
