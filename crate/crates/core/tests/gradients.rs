mod common;

use common::{op_cases, FD_TOLERANCE};

#[test]
fn every_operator_matches_finite_differences() {
    for case in op_cases() {
        let (err, at) = case.check();
        println!("{:<24} {err:.2e} {at}", case.name);
        assert!(err < FD_TOLERANCE, "{}: relative error {err:e} at {at}", case.name);
    }
}

mod parser_loss {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use typoparse::parser::{LanguageInputs, ParserConfig, ParserParameters, TypologyMode};
    use typoparse::treebank::{Inventory, Sentence};
    use typoparse::typology::{TypologyKind, TypologyVector, WalsRecord};

    use super::common::{fd_check, FD_TOLERANCE};

    fn check(mode: TypologyMode, dropout_seed: Option<u64>) {
        let config = ParserConfig {
            pos_embed_dim: 3,
            lstm_layers: 1,
            lstm_hidden: 3,
            arc_mlp_dim: 4,
            rel_mlp_dim: 2,
            typology_mode: mode,
            typology_mlp_hidden: 3,
            typology_out_dim: 2,
            dropout: if dropout_seed.is_some() { 0.3 } else { 0.0 },
            ..ParserConfig::default()
        };
        let mut model = ParserParameters::init(config, Inventory::ud_v1(), 2, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(mode as u64 + 40);
        let ids: Vec<_> = model.params.ids().collect();
        for id in ids {
            for x in model.params.get_mut(id).data_mut() {
                *x = rng.gen_range(-0.6..0.6);
            }
        }
        let s = Sentence::from_parts(&["NOUN", "ADP", "VERB"], &[3, 1, 0], &["nsubj", "case", "root"]);
        let t = TypologyVector::new(TypologyKind::ClusterOnehot, vec![0.0, 1.0]);
        let w = WalsRecord::new("x").with("81A", "SOV").with("85A", "Postpositions");
        let inputs = LanguageInputs { typology: Some(&t), wals: Some(&w) };
        let (_, grads) = model.sentence_gradients(&s, inputs, dropout_seed).unwrap();
        let (err, at) = fd_check(&model.params, &grads, |p| {
            let mut m = model.clone();
            m.params = p.clone();
            m.sentence_gradients(&s, inputs, dropout_seed).unwrap().0
        });
        println!("{mode:?} dropout={dropout_seed:?} {err:.2e} {at}");
        assert!(err < FD_TOLERANCE, "{mode:?}: {err:e} at {at}");
    }

    #[test]
    fn every_mode_matches_finite_differences() {
        for mode in [
            TypologyMode::None,
            TypologyMode::InputFeature,
            TypologyMode::SelectiveSharing,
            TypologyMode::Both,
        ] {
            check(mode, None);
        }
    }

    #[test]
    fn dropout_masks_are_part_of_the_function() {
        check(TypologyMode::Both, Some(3));
    }
}
