//! Token-level query-term classifier over a document; its encoder seeds ABS.

use std::path::Path;

use facetrank_nn::transformer::Linear;
use facetrank_nn::{sigmoid, Encoder, EncoderConfig, Graph, ParamStore, Real, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rel::TrainReport;
use super::{
    binary_counts, bind_head, doc_input, init_head, read_bundle, split_validation, write_bundle,
    DocInput, OptimiserState, Prf, TrainConfig, TrainState, Trainer,
};
use crate::corpus::{doc_words, Document, ExtExample};
use crate::error::{Error, Result};
use crate::wordpiece::{is_reserved, merge_pieces, Vocab, PAD};

pub const KIND: &str = "ext";

/// Per-position logits with their token strings. Position 0 is CLS and is
/// never selected.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenScores {
    pub tokens: Vec<String>,
    pub logits: Vec<f64>,
    /// Token ids, used to recognise specials.
    pub ids: Vec<usize>,
}

/// `[len, 1]` logits for every position.
pub fn ext_logits<T: Real>(
    g: &mut Graph<'_, T>,
    encoder: &Encoder,
    head: &Linear,
    tokens: &[usize],
    segments: &[usize],
) -> Result<Var> {
    let out = encoder.forward(g, tokens, segments)?;
    Ok(head.forward(g, out.hidden))
}

/// Labelled training input: piece labels come from their word.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtInput {
    pub input: DocInput,
    pub labels: Vec<bool>,
    /// Positions that count towards loss and metrics (not CLS, not PAD).
    pub mask: Vec<bool>,
}

fn ext_input(vocab: &Vocab, ex: &ExtExample, max_len: usize) -> ExtInput {
    let input = doc_input(vocab, &ex.tokens, &ex.sentence_ids, max_len);
    let labels = input
        .word_of
        .iter()
        .map(|w| w.is_some_and(|w| ex.labels[w]))
        .collect();
    let mask = input
        .tokens
        .iter()
        .zip(&input.word_of)
        .map(|(t, w)| w.is_some() && *t != PAD)
        .collect();
    ExtInput {
        input,
        labels,
        mask,
    }
}

/// Words whose first piece scores above `threshold` (after sigmoid), in
/// order of first occurrence, without duplicates or special tokens.
pub fn select_keywords(scores: &TokenScores, threshold: f64) -> Vec<String> {
    let pieces: Vec<String> = scores.tokens.clone();
    let mut out: Vec<String> = Vec::new();
    for (word, first) in merge_pieces(&pieces) {
        if is_reserved(scores.ids[first]) || word.is_empty() {
            continue;
        }
        if sigmoid(scores.logits[first]) > threshold && !out.contains(&word) {
            out.push(word);
        }
    }
    out
}

/// CSV of `position,token,score` with the sigmoid score of every position.
pub fn export_token_heatmap(scores: &TokenScores, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["position", "token", "score"])?;
    for (i, (t, z)) in scores.tokens.iter().zip(&scores.logits).enumerate() {
        w.write_record([i.to_string(), t.clone(), format!("{:.6}", sigmoid(*z))])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ExtMeta {
    kind: String,
    vocab: Vocab,
    encoder: EncoderConfig,
    max_len: usize,
    train: TrainState,
}

pub struct ExtModel {
    pub vocab: Vocab,
    pub encoder: Encoder,
    pub head: Linear,
    pub store: ParamStore<f32>,
    pub max_len: usize,
    pub optimiser: Option<OptimiserState>,
}

impl ExtModel {
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
        let head = init_head(&mut store, "ext.head", config.model_dim, 1, &mut rng);
        Ok(Self {
            vocab,
            encoder,
            head,
            store,
            max_len: config.max_positions,
            optimiser: None,
        })
    }

    pub fn doc_input(&self, doc: &Document) -> DocInput {
        let (words, sents) = doc_words(doc);
        doc_input(&self.vocab, &words, &sents, self.max_len)
    }

    /// Scores for an explicit input. Fails on over-length input.
    pub fn forward(&self, tokens: &[usize], segments: &[usize]) -> Result<TokenScores> {
        let mut g = Graph::new(&self.store);
        let z = ext_logits(&mut g, &self.encoder, &self.head, tokens, segments)?;
        let logits = g.value(z).data().iter().map(|v| *v as f64).collect();
        let names = tokens
            .iter()
            .map(|t| self.vocab.token(*t).to_string())
            .collect();
        Ok(TokenScores {
            tokens: names,
            logits,
            ids: tokens.to_vec(),
        })
    }

    pub fn score_doc(&self, doc: &Document) -> Result<TokenScores> {
        let input = self.doc_input(doc);
        self.forward(&input.tokens, &input.segments)
    }

    pub fn keywords(&self, doc: &Document, threshold: f64) -> Result<Vec<String>> {
        Ok(select_keywords(&self.score_doc(doc)?, threshold))
    }

    /// Token-level P/R/F1 at the 0.5 threshold.
    pub fn evaluate(&self, data: &[ExtInput]) -> Result<Prf> {
        evaluate_with(&self.store, &self.encoder, &self.head, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = ExtMeta {
            kind: KIND.into(),
            vocab: self.vocab.clone(),
            encoder: self.encoder.config,
            max_len: self.max_len,
            train: self
                .optimiser
                .as_ref()
                .map(|o| o.state.clone())
                .unwrap_or_default(),
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
        let mut meta: ExtMeta = serde_json::from_str(&ckpt.meta)?;
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
        model.head = bind_head(&model.store, "ext.head", meta.encoder.model_dim, 1)?;
        model.optimiser = OptimiserState::from_checkpoint(&ckpt, meta.train);
        Ok(model)
    }
}

fn evaluate_with(
    store: &ParamStore<f32>,
    encoder: &Encoder,
    head: &Linear,
    data: &[ExtInput],
) -> Result<Prf> {
    let per: Vec<Result<(usize, usize, usize)>> = data
        .par_iter()
        .map(|x| {
            let mut g = Graph::new(store);
            let z = ext_logits(&mut g, encoder, head, &x.input.tokens, &x.input.segments)?;
            let logits = g.value(z).data().to_vec();
            Ok(binary_counts(
                logits
                    .iter()
                    .zip(&x.labels)
                    .zip(&x.mask)
                    .filter(|(_, m)| **m)
                    .map(|((z, y), _)| (*z > 0.0, *y)),
            ))
        })
        .collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for r in per {
        let (a, b, c) = r?;
        tp += a;
        fp += b;
        fn_ += c;
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Class-weighted BCE averaged over the document's non-special positions.
pub fn train_ext(
    model: &mut ExtModel,
    examples: &[ExtExample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Invalid("no EXT training examples".into()));
    }
    let inputs: Vec<ExtInput> = examples
        .iter()
        .map(|e| ext_input(&model.vocab, e, model.max_len))
        .filter(|x| x.mask.iter().any(|m| *m))
        .collect();
    let (train, val) = split_validation(&inputs, cfg.val_fraction, cfg.seed);
    let mut trainer = Trainer::new(cfg, &model.store)?;
    if let Some(saved) = &model.optimiser {
        trainer.resume(&model.store, saved)?;
    }
    let (encoder, head) = (model.encoder.clone(), model.head);
    let (w0, w1) = (cfg.w0, cfg.w1);
    trainer.run(
        &mut model.store,
        &train,
        |g, x| {
            let z = ext_logits(g, &encoder, &head, &x.input.tokens, &x.input.segments)?;
            Ok(g.weighted_bce(z, &x.labels, &x.mask, w0, w1))
        },
        |store| {
            if val.is_empty() {
                Ok(None)
            } else {
                evaluate_with(store, &encoder, &head, &val).map(Some)
            }
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

/// Labelled inputs for external evaluation.
pub fn ext_inputs(model: &ExtModel, examples: &[ExtExample]) -> Vec<ExtInput> {
    examples
        .iter()
        .map(|e| ext_input(&model.vocab, e, model.max_len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wordpiece::CLS;

    fn scores(tokens: &[&str], logits: &[f64]) -> TokenScores {
        let ids = tokens
            .iter()
            .map(|t| if *t == "[CLS]" { CLS } else { 100 })
            .collect();
        TokenScores {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            logits: logits.to_vec(),
            ids,
        }
    }

    #[test]
    fn selection_rules() {
        let s = scores(
            &["[CLS]", "braf", "v600", "##e", "braf", "tumor"],
            &[9.0, 3.0, 2.0, -9.0, 4.0, -1.0],
        );
        assert_eq!(select_keywords(&s, 0.5), vec!["braf", "v600e"]);
        assert_eq!(select_keywords(&s, 0.0), vec!["braf", "v600e", "tumor"]);
        let low = scores(&["[CLS]", "a", "b"], &[-10.0, -10.0, -10.0]);
        assert!(select_keywords(&low, 0.5).is_empty());
        let again = select_keywords(&s, 0.5);
        assert_eq!(again, select_keywords(&s, 0.5));
    }

    fn tiny() -> ExtModel {
        let vocab = Vocab::with_reserved(["alpha", "beta", "gamma"].map(String::from));
        let cfg = EncoderConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            max_positions: 16,
            vocab_size: vocab.len(),
            segment_count: 2,
        };
        ExtModel::new(vocab, cfg, 5).unwrap()
    }

    #[test]
    fn forward_shape_and_heatmap() {
        let m = tiny();
        let doc = Document {
            id: "d".into(),
            title: "alpha beta".into(),
            abstract_text: "gamma alpha.".into(),
            mesh_codes: vec![],
            keywords: vec![],
        };
        let s = m.score_doc(&doc).unwrap();
        assert_eq!(s.tokens.len(), 5);
        assert_eq!(s.logits.len(), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("heat.csv");
        export_token_heatmap(&s, &path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 5);
        for row in rows {
            let v: f64 = row[2].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
        let long: Vec<usize> = vec![5; 17];
        assert!(m.forward(&long, &vec![0; 17]).is_err());
    }

    #[test]
    fn labels_follow_words() {
        let vocab = Vocab::with_reserved(["a", "##b", "c"].map(String::from));
        let ex = ExtExample {
            doc_id: "d".into(),
            tokens: vec!["ab".into(), "c".into()],
            sentence_ids: vec![0, 1],
            labels: vec![true, false],
        };
        let x = ext_input(&vocab, &ex, 16);
        assert_eq!(x.labels, vec![false, true, true, false]);
        assert_eq!(x.mask, vec![false, true, true, true]);
    }
}
