//! Document/query relevance classifier on the leading CLS vector.

use std::path::Path;

use facetrank_nn::transformer::Linear;
use facetrank_nn::{sigmoid, Encoder, EncoderConfig, Graph, ParamStore, Real, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    binary_counts, bind_head, init_head, read_bundle, split_validation, text_pieces, write_bundle,
    LogRow, OptimiserState, Prf, TrainConfig, TrainState, Trainer,
};
use crate::corpus::{Document, PatientCase, RelExample};
use crate::error::{Error, Result};
use crate::index::RankedList;
use crate::wordpiece::{Vocab, CLS, PAD, SEP};

pub const KIND: &str = "rel";

/// Packed encoder input: `CLS d1 SEP d2 SEP ... q1 q2 q3 SEP`.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedInput {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Append `n` padding positions.
    pub fn padded(&self, n: usize) -> Self {
        let mut p = self.clone();
        p.tokens.extend(std::iter::repeat_n(PAD, n));
        p.segments.extend(std::iter::repeat_n(0, n));
        p.mask.extend(std::iter::repeat_n(false, n));
        p
    }
}

/// Pack sentence piece ids. Document sentences each end with SEP; query
/// sentences are concatenated and end with a single SEP. Segment ids
/// alternate per sentence across both parts. Trailing document sentences
/// are dropped (the last kept one possibly cut) to fit `max_len`; if the cut
/// leaves a single free slot it is padded.
pub fn pack_rel_ids(
    doc: &[Vec<usize>],
    query: &[Vec<usize>],
    max_len: usize,
) -> Result<PackedInput> {
    let query: Vec<&Vec<usize>> = query.iter().filter(|s| !s.is_empty()).collect();
    let q_len: usize = query.iter().map(|s| s.len()).sum::<usize>() + 1;
    if 1 + q_len > max_len {
        return Err(Error::Invalid(format!(
            "query needs {} tokens, more than max_len {max_len}",
            1 + q_len
        )));
    }
    let mut tokens = vec![CLS];
    let mut segments = vec![0];
    let mut group = 0;
    let mut truncated = false;
    for sent in doc.iter().filter(|s| !s.is_empty()) {
        let free = max_len - tokens.len() - q_len;
        let seg = group % 2;
        if sent.len() < free {
            tokens.extend_from_slice(sent);
        } else {
            truncated = true;
            if free < 2 {
                break;
            }
            tokens.extend_from_slice(&sent[..free - 1]);
        }
        tokens.push(SEP);
        segments.resize(tokens.len(), seg);
        group += 1;
        if truncated {
            break;
        }
    }
    for (i, sent) in query.iter().enumerate() {
        tokens.extend_from_slice(sent);
        segments.resize(tokens.len(), (group + i) % 2);
    }
    tokens.push(SEP);
    segments.push((group + query.len().max(1) - 1) % 2);
    let mut mask = vec![true; tokens.len()];
    if truncated {
        while tokens.len() < max_len {
            tokens.push(PAD);
            segments.push(0);
            mask.push(false);
        }
    }
    Ok(PackedInput {
        tokens,
        segments,
        mask,
    })
}

pub fn pack_rel_input(
    vocab: &Vocab,
    doc: &Document,
    query_sentences: &[String],
    max_len: usize,
) -> Result<PackedInput> {
    let d: Vec<Vec<usize>> = doc
        .sentences()
        .iter()
        .map(|s| text_pieces(vocab, s))
        .collect();
    let q: Vec<Vec<usize>> = query_sentences
        .iter()
        .map(|s| text_pieces(vocab, s))
        .collect();
    pack_rel_ids(&d, &q, max_len)
}

/// Logit of the CLS position, `[1, 1]`.
pub fn rel_logit<T: Real>(
    g: &mut Graph<'_, T>,
    encoder: &Encoder,
    head: &Linear,
    packed: &PackedInput,
) -> Result<Var> {
    let out = encoder.forward(g, &packed.tokens, &packed.segments)?;
    let cls = g.gather(out.hidden, &[0]);
    Ok(head.forward(g, cls))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RelMeta {
    kind: String,
    vocab: Vocab,
    encoder: EncoderConfig,
    max_len: usize,
    train: TrainState,
}

pub struct RelModel {
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub head: Linear,
    pub store: ParamStore<f32>,
    pub max_len: usize,
    pub optimiser: Option<OptimiserState>,
}

impl RelModel {
    pub fn new(vocab: Vocab, config: EncoderConfig, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Invalid(format!(
                "encoder vocab {} != vocabulary {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(config, "encoder.", &mut store, &mut rng)?;
        let head = init_head(&mut store, "rel.head", config.model_dim, 1, &mut rng);
        Ok(Self {
            vocab,
            encoder,
            head,
            store,
            max_len: config.max_positions,
            optimiser: None,
        })
    }

    pub fn pack(&self, doc: &Document, query_sentences: &[String]) -> Result<PackedInput> {
        pack_rel_input(&self.vocab, doc, query_sentences, self.max_len)
    }

    pub fn logit(&self, packed: &PackedInput) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let v = rel_logit(&mut g, &self.encoder, &self.head, packed)?;
        Ok(g.value(v).item() as f64)
    }

    /// Matching probability in [0, 1].
    pub fn score(&self, packed: &PackedInput) -> Result<f64> {
        Ok(sigmoid(self.logit(packed)?))
    }

    pub fn score_doc(&self, doc: &Document, query_sentences: &[String]) -> Result<f64> {
        self.score(&self.pack(doc, query_sentences)?)
    }

    /// Thresholded P/R/F1 over packed, labelled inputs.
    pub fn evaluate(&self, data: &[(PackedInput, bool)]) -> Result<Prf> {
        evaluate_with(&self.store, &self.encoder, &self.head, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let state = self
            .optimiser
            .as_ref()
            .map(|o| o.state.clone())
            .unwrap_or_default();
        let meta = RelMeta {
            kind: KIND.into(),
            vocab: self.vocab.clone(),
            encoder: self.encoder.config,
            max_len: self.max_len,
            train: state,
        };
        let extra = self
            .optimiser
            .as_ref()
            .map(|o| o.moments.clone())
            .unwrap_or_default();
        write_bundle(path.as_ref(), &meta, &self.store, &extra)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let ckpt = read_bundle(path)?;
        let mut meta: RelMeta = serde_json::from_str(&ckpt.meta)?;
        if meta.kind != KIND {
            return Err(Error::parse(
                path,
                0,
                format!("expected a {KIND} checkpoint, found {}", meta.kind),
            ));
        }
        meta.vocab.reindex();
        let mut model = Self::new(meta.vocab, meta.encoder, 0)?;
        ckpt.restore_into(&mut model.store)?;
        model.max_len = meta.max_len;
        model.head = bind_head(&model.store, "rel.head", meta.encoder.model_dim, 1)?;
        model.optimiser = OptimiserState::from_checkpoint(&ckpt, meta.train);
        Ok(model)
    }
}

fn evaluate_with(
    store: &ParamStore<f32>,
    encoder: &Encoder,
    head: &Linear,
    data: &[(PackedInput, bool)],
) -> Result<Prf> {
    let preds: Vec<Result<(bool, bool)>> = data
        .par_iter()
        .map(|(p, y)| {
            let mut g = Graph::new(store);
            let z = rel_logit(&mut g, encoder, head, p)?;
            Ok((g.value(z).item() > 0.0, *y))
        })
        .collect();
    let (tp, fp, fn_) = binary_counts(preds.into_iter().collect::<Result<Vec<_>>>()?);
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Candidates ordered by matching probability, doc id breaking ties.
pub fn rel_rank(
    topic: &PatientCase,
    candidates: &[&Document],
    model: &RelModel,
) -> Result<RankedList> {
    let query = topic.query_sentences();
    let scored: Vec<Result<(String, f64)>> = candidates
        .par_iter()
        .map(|d| Ok((d.id.clone(), model.score_doc(d, &query)?)))
        .collect();
    Ok(RankedList::from_scores(
        topic.topic_id.clone(),
        scored.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// Outcome of a training run: the log and the final validation metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub train: Prf,
    pub validation: Option<Prf>,
    pub final_loss: f64,
}

/// Train (or continue training) with class-weighted BCE on the CLS logit.
pub fn train_rel(
    model: &mut RelModel,
    examples: &[RelExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Invalid("no REL training examples".into()));
    }
    let packed: Vec<Result<(PackedInput, bool)>> = examples
        .par_iter()
        .map(|e| Ok((model.pack(&e.doc, &e.query_sentences)?, e.label)))
        .collect();
    let packed = packed.into_iter().collect::<Result<Vec<_>>>()?;
    let (train, val) = split_validation(&packed, cfg.val_fraction, cfg.seed);
    let mut trainer = Trainer::new(cfg, &model.store)?;
    if let Some(saved) = &model.optimiser {
        trainer.resume(&model.store, saved)?;
    }
    let (encoder, head) = (model.encoder.clone(), model.head);
    let (w0, w1) = (cfg.w0, cfg.w1);
    trainer.run(
        &mut model.store,
        &train,
        |g, (p, y)| {
            let z = rel_logit(g, &encoder, &head, p)?;
            Ok(g.weighted_bce(z, &[*y], &[true], w0, w1))
        },
        |store| {
            if val.is_empty() {
                return Ok(None);
            }
            evaluate_with(store, &encoder, &head, &val).map(Some)
        },
    )?;
    model.optimiser = Some(trainer.snapshot(&model.store));
    let final_loss = trainer.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    let validation = trainer.log.iter().rev().find_map(|r| r.val);
    Ok(TrainReport {
        train: model.evaluate(&train)?,
        validation,
        final_loss,
        log: trainer.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(n: usize, base: usize) -> Vec<usize> {
        (0..n).map(|i| 20 + base + i).collect()
    }

    #[test]
    fn alternating_segments_over_five_groups() {
        let p = pack_rel_ids(
            &[ids(2, 0), ids(3, 10)],
            &[ids(1, 20), ids(2, 30), ids(1, 40)],
            64,
        )
        .unwrap();
        assert_eq!(p.tokens[0], CLS);
        // CLS a a SEP | b b b SEP | q1 | q2 q2 | q3 SEP
        assert_eq!(p.segments, vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 1, 1, 0, 0]);
        assert_eq!(p.tokens.iter().filter(|t| **t == SEP).count(), 3);
        assert_eq!(*p.tokens.last().unwrap(), SEP);
    }

    #[test]
    fn long_doc_is_cut_to_exact_length() {
        let p = pack_rel_ids(&[ids(30, 0), ids(30, 100)], &[ids(3, 200)], 40).unwrap();
        assert_eq!(p.len(), 40);
        assert_eq!(&p.tokens[36..], &[220, 221, 222, SEP][..]);
        assert!(pack_rel_ids(&[], &[ids(10, 0)], 11).is_err());
        assert_eq!(
            pack_rel_ids(&[], &[ids(9, 0)], 11).unwrap().tokens.len(),
            11
        );
    }

    #[test]
    fn query_has_no_inner_separators() {
        let p = pack_rel_ids(&[ids(2, 0)], &[ids(2, 20), ids(2, 30)], 64).unwrap();
        let q = &p.tokens[4..];
        assert_eq!(q.iter().filter(|t| **t == SEP).count(), 1);
    }

    proptest! {
        #[test]
        fn packing_invariants(doc in prop::collection::vec(1usize..20, 0..8), query in prop::collection::vec(1usize..6, 1..4), max_len in 8usize..80) {
            let d: Vec<Vec<usize>> = doc.iter().enumerate().map(|(i, n)| ids(*n, 100 * i)).collect();
            let q: Vec<Vec<usize>> = query.iter().enumerate().map(|(i, n)| ids(*n, 1000 + 10 * i)).collect();
            let q_total: usize = query.iter().sum();
            match pack_rel_ids(&d, &q, max_len) {
                Err(_) => prop_assert!(q_total + 2 > max_len),
                Ok(p) => {
                    prop_assert!(p.len() <= max_len);
                    prop_assert_eq!(p.tokens[0], CLS);
                    prop_assert_eq!(p.tokens.len(), p.segments.len());
                    let real: Vec<usize> = p.tokens.iter().zip(&p.mask).filter(|(_, m)| **m).map(|(t, _)| *t).collect();
                    prop_assert_eq!(*real.last().unwrap(), SEP);
                    // The query survives intact at the end.
                    let tail: Vec<usize> = q.concat();
                    prop_assert_eq!(&real[real.len() - 1 - tail.len()..real.len() - 1], &tail[..]);
                    // Segments flip exactly at sentence boundaries.
                    let doc_seps = real.iter().filter(|t| **t == SEP).count() - 1;
                    let groups = doc_seps + q.len();
                    let mut flips = 0;
                    for w in p.segments[..real.len()].windows(2) {
                        if w[0] != w[1] { flips += 1; }
                    }
                    prop_assert_eq!(flips, groups - 1);
                    let total_doc: usize = doc.iter().map(|n| n + 1).sum();
                    if 1 + total_doc + q_total + 1 > max_len {
                        prop_assert_eq!(p.len(), max_len);
                    }
                }
            }
        }
    }

    fn tiny_model() -> RelModel {
        let vocab = Vocab::with_reserved(["alpha", "beta", "gamma", "delta"].map(String::from));
        let cfg = EncoderConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            max_positions: 32,
            vocab_size: vocab.len(),
            segment_count: 2,
        };
        RelModel::new(vocab, cfg, 3).unwrap()
    }

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            title: String::new(),
            abstract_text: text.into(),
            mesh_codes: vec![],
            keywords: vec![],
        }
    }

    #[test]
    fn padding_leaves_score_unchanged() {
        let m = tiny_model();
        let p = m
            .pack(&doc("a", "alpha beta. gamma."), &["delta".into()])
            .unwrap();
        let s = m.score(&p).unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert!((s - m.score(&p.padded(5)).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn rank_is_sorted_and_batch_invariant() {
        let m = tiny_model();
        let topic = PatientCase {
            topic_id: "1".into(),
            disease: "alpha".into(),
            gene: "beta".into(),
            demographics: String::new(),
            mesh_terms: vec![],
            keywords: vec![],
        };
        let docs = [
            doc("x", "alpha gamma."),
            doc("y", "beta beta."),
            doc("z", "delta."),
        ];
        let refs: Vec<&Document> = docs.iter().collect();
        let ranked = rel_rank(&topic, &refs, &m).unwrap();
        assert_eq!(ranked.len(), 3);
        assert!(ranked.entries.windows(2).all(|w| w[0].1 >= w[1].1));
        for (id, s) in &ranked.entries {
            let d = docs.iter().find(|d| &d.id == id).unwrap();
            assert_eq!(*s, m.score_doc(d, &topic.query_sentences()).unwrap());
        }
        assert_eq!(rel_rank(&topic, &refs[..1], &m).unwrap().entries[0].0, "x");
    }

    #[test]
    fn checkpoint_round_trip_restores_scores() {
        let m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rel.ckpt");
        m.save(&path).unwrap();
        let back = RelModel::load(&path).unwrap();
        let p = m.pack(&doc("a", "alpha beta."), &["gamma".into()]).unwrap();
        assert_eq!(m.score(&p).unwrap(), back.score(&p).unwrap());
        assert_eq!(super::super::bundle_kind(&path).unwrap(), "rel");
    }
}
