//! Arc-factored selective-sharing features.
//!
//! Each template conjoins the arc direction, the target language's value
//! for one WALS feature and an indicator on the head and modifier tags.

use crate::treebank::Sentence;
use crate::typology::{WalsRecord, WalsSchema};

/// `(WALS feature, head tag, modifier tag)` per template.
pub const TEMPLATES: [(&str, &str, &str); 5] = [
    ("81A", "VERB", "NOUN"),
    ("81A", "VERB", "PRON"),
    ("85A", "NOUN", "ADP"),
    ("86A", "PRON", "ADP"),
    ("87A", "NOUN", "ADJ"),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Head after the modifier.
    Left = 0,
    /// Head before the modifier.
    Right = 1,
}

#[derive(Clone, Debug, PartialEq)]
struct Template {
    feature: String,
    head: String,
    modifier: String,
    values: Vec<String>,
    offset: usize,
}

/// Feature layout: for each template a block of `2 * |V_f|` indicators,
/// direction-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectiveFeatures {
    templates: Vec<Template>,
    dim: usize,
}

impl SelectiveFeatures {
    /// Templates whose WALS feature is absent from the schema are dropped.
    pub fn new(schema: &WalsSchema) -> Self {
        let mut templates = Vec::new();
        let mut offset = 0;
        for (feature, head, modifier) in TEMPLATES {
            let Some(values) = schema.values(feature) else {
                log::warn!("selective sharing: WALS schema lacks {feature}; template dropped");
                continue;
            };
            templates.push(Template {
                feature: feature.to_string(),
                head: head.to_string(),
                modifier: modifier.to_string(),
                values: values.to_vec(),
                offset,
            });
            offset += 2 * values.len();
        }
        SelectiveFeatures {
            templates,
            dim: offset,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Active feature indices of the arc `head -> dependent` (1-based
    /// token positions). ROOT arcs and missing WALS values activate
    /// nothing.
    pub fn arc(&self, sentence: &Sentence, wals: &WalsRecord, head: usize, dependent: usize) -> Vec<usize> {
        if head == 0 || head == dependent {
            return Vec::new();
        }
        let hp = &sentence.tokens[head - 1].upos;
        let mp = &sentence.tokens[dependent - 1].upos;
        let direction = if head < dependent {
            Direction::Right
        } else {
            Direction::Left
        };
        self.templates
            .iter()
            .filter(|t| &t.head == hp && &t.modifier == mp)
            .filter_map(|t| {
                let value = wals.get(&t.feature)?;
                let v = t.values.iter().position(|x| x == value)?;
                Some(t.offset + direction as usize * t.values.len() + v)
            })
            .collect()
    }

    /// Dependent-major cells: entry `(j-1) * (n+1) + i` holds the features
    /// of head `i` for dependent `j`.
    pub fn sentence(&self, sentence: &Sentence, wals: &WalsRecord) -> Vec<Vec<usize>> {
        let n = sentence.len();
        let mut cells = Vec::with_capacity(n * (n + 1));
        for dep in 1..=n {
            for head in 0..=n {
                cells.push(self.arc(sentence, wals, head, dep));
            }
        }
        cells
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verb_noun_right_arc_has_one_feature() {
        let schema = WalsSchema::default();
        let feats = SelectiveFeatures::new(&schema);
        // 7 + 7 + 2 + 3 + 3 values, two directions each
        assert_eq!(feats.dim(), 2 * (7 + 7 + 2 + 3 + 3));
        let s = Sentence::from_parts(&["VERB", "NOUN"], &[0, 1], &["root", "dobj"]);
        let wals = WalsRecord::new("x").with("81A", "SOV");
        let active = feats.arc(&s, &wals, 1, 2);
        assert_eq!(active, vec![7]); // RIGHT block starts at 7, SOV is value 0
        assert_eq!(feats.arc(&s, &wals, 2, 1), Vec::<usize>::new());
        assert!(feats.arc(&s, &wals, 0, 1).is_empty());
    }

    #[test]
    fn missing_value_activates_nothing() {
        let feats = SelectiveFeatures::new(&WalsSchema::default());
        let s = Sentence::from_parts(&["NOUN", "ADJ"], &[0, 1], &["root", "amod"]);
        assert!(feats.arc(&s, &WalsRecord::new("x"), 1, 2).is_empty());
        let w = WalsRecord::new("x").with("87A", "Noun-Adjective");
        assert_eq!(feats.arc(&s, &w, 1, 2).len(), 1);
    }

    #[test]
    fn at_most_one_feature_per_template() {
        let feats = SelectiveFeatures::new(&WalsSchema::default());
        let s = Sentence::from_parts(
            &["PRON", "ADP", "NOUN", "ADP", "VERB", "NOUN", "ADJ"],
            &[5, 1, 5, 3, 0, 5, 6],
            &["nsubj", "case", "dobj", "case", "root", "dobj", "amod"],
        );
        let w = WalsRecord::new("x")
            .with("81A", "SVO")
            .with("85A", "Prepositions")
            .with("86A", "Noun-Genitive")
            .with("87A", "Noun-Adjective");
        for cell in feats.sentence(&s, &w) {
            assert!(cell.len() <= 1);
        }
    }
}
