//! Finite-difference checks of full REL, EXT and ABS forward passes in f64.

use facetrank::corpus::{Document, FacetKind};
use facetrank::models::abs::{abs_loss, AbsModel};
use facetrank::models::ext::{ext_logits, ExtModel};
use facetrank::models::rel::{rel_logit, RelModel};
use facetrank::wordpiece::Vocab;
use facetrank_nn::gradcheck::grad_check;
use facetrank_nn::{DecoderConfig, EncoderConfig, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn vocab() -> Vocab {
    Vocab::with_reserved(["braf", "melanoma", "tumor", "cells", "x"].map(String::from))
}

fn tiny(vocab: &Vocab) -> EncoderConfig {
    EncoderConfig {
        layers: 1,
        model_dim: 8,
        heads: 2,
        ffn_dim: 12,
        max_positions: 24,
        vocab_size: vocab.len(),
        segment_count: 2,
    }
}

fn doc() -> Document {
    Document {
        id: "d".into(),
        title: "braf melanoma".into(),
        abstract_text: "tumor cells x. melanoma braf cells.".into(),
        mesh_codes: vec![],
        keywords: vec![],
    }
}

/// Moves weights off the small init so gradients are not vanishingly small.
fn perturbed(store: &ParamStore<f32>, seed: u64) -> ParamStore<f64> {
    let mut s = store.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = s.ids().collect();
    for id in ids {
        for v in s.get_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    s
}

#[test]
fn rel_block_weighted_bce() {
    let m = RelModel::new(vocab(), tiny(&vocab()), 3).unwrap();
    let packed = m.pack(&doc(), &["melanoma".into(), "braf".into()]).unwrap();
    let store = perturbed(&m.store, 30);
    for label in [true, false] {
        let report = grad_check(
            |g| {
                let z = rel_logit(g, &m.encoder, &m.head, &packed).unwrap();
                g.weighted_bce(z, &[label], &[true], 0.15, 1.0)
            },
            &store,
            EPS,
            None,
        );
        assert!(report.checked > 500);
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}

#[test]
fn ext_block_weighted_bce() {
    let m = ExtModel::new(vocab(), tiny(&vocab()), 4).unwrap();
    let input = m.doc_input(&doc());
    let n = input.tokens.len();
    let labels: Vec<bool> = (0..n).map(|i| i % 3 == 1).collect();
    let mask: Vec<bool> = (0..n).map(|i| i > 0).collect();
    let store = perturbed(&m.store, 40);
    let report = grad_check(
        |g| {
            let z = ext_logits(g, &m.encoder, &m.head, &input.tokens, &input.segments).unwrap();
            g.weighted_bce(z, &labels, &mask, 0.075, 1.0)
        },
        &store,
        EPS,
        None,
    );
    assert!(report.checked > 500);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn abs_block_cross_entropy() {
    let v = vocab();
    let target_vocab = Vocab::with_reserved(["braf", "melanoma", "v600e"].map(String::from));
    let dec = DecoderConfig {
        layers: 1,
        model_dim: 8,
        heads: 2,
        ffn_dim: 12,
        target_vocab_size: target_vocab.len(),
        embed_dim: 6,
        max_target_len: 5,
    };
    let m = AbsModel::new(v.clone(), tiny(&v), target_vocab, dec, 5).unwrap();
    let source = m.source(&doc());
    let sig = FacetKind::GeneticVariation.signal();
    let target = m.target_ids(&["braf".into(), "v600e".into()]);
    let store = perturbed(&m.store, 50);
    let report = grad_check(
        |g| {
            abs_loss(
                g, &m.encoder, &m.decoder, &source, sig.bos_id, &target, sig.eos_id,
            )
            .unwrap()
        },
        &store,
        EPS,
        None,
    );
    assert!(report.checked > 1000);
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}
