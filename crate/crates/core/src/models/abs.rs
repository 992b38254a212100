//! Facet-conditioned pseudo-query generator: EXT-initialised encoder, causal
//! decoder over a word+entity vocabulary, beam search with penalties.

use std::collections::HashMap;
use std::path::Path;

use facetrank_nn::transformer::mean_heads;
use facetrank_nn::{
    log_softmax, CrossMemory, Decoder, DecoderCache, DecoderConfig, Encoder, EncoderConfig, Graph,
    ParamStore, Real, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beam::{beam_search, greedy, BeamConfig, BeamHypothesis};
use super::ext::ExtModel;
use super::{
    doc_input, read_bundle, split_validation, write_bundle, DocInput, LogRow, OptimiserState, Prf,
    TrainConfig, TrainState, Trainer,
};
use crate::corpus::{doc_words, entity_token, mesh_names, AbsExample, Document, FacetKind};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::text::{is_word_token, word_tokens};
use crate::wordpiece::{is_reserved, Vocab, BOS_BASE, CLS, EOS_BASE, PAD, RESERVED, SEP, UNK};

pub const KIND: &str = "abs";

/// Reserved slots, then every target token, then word tokens of the
/// documents and all known entity tokens, most frequent first, capped at
/// `max_size`.
pub fn build_target_vocab(examples: &[AbsExample], docs: &[Document], max_size: usize) -> Vocab {
    let mut extra: Vec<String> = Vec::new();
    for e in examples {
        extra.extend(e.target_tokens.iter().cloned());
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for d in docs {
        for w in word_tokens(&d.text()) {
            if is_word_token(&w) {
                *counts.entry(w).or_default() += 1;
            }
        }
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    extra.extend(words.into_iter().map(|(w, _)| w));
    let mut entities: Vec<String> = mesh_names().keys().map(|c| entity_token(c)).collect();
    entities.sort();
    extra.extend(entities);
    let mut v = Vocab::with_reserved(extra);
    if v.len() > max_size.max(RESERVED) {
        let keep = v.tokens()[..max_size.max(RESERVED)].to_vec();
        v = Vocab::from_tokens(keep);
    }
    v
}

/// Teacher-forced NLL summed over target positions. `target` excludes bos
/// and eos; the decoder sees `bos target` and predicts `target eos`.
pub fn abs_loss<T: Real>(
    g: &mut Graph<'_, T>,
    encoder: &Encoder,
    decoder: &Decoder,
    source: &DocInput,
    bos: usize,
    target: &[usize],
    eos: usize,
) -> Result<Var> {
    let enc = encoder.forward(g, &source.tokens, &source.segments)?;
    let mut inputs = Vec::with_capacity(target.len() + 1);
    inputs.push(bos);
    inputs.extend_from_slice(target);
    let outputs: Vec<Option<usize>> = target.iter().copied().chain([eos]).map(Some).collect();
    let out = decoder.forward(g, &inputs, enc.hidden, &source.tokens)?;
    Ok(g.cross_entropy(out.logits, &outputs))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct AbsMeta {
    kind: String,
    vocab: Vocab,
    target_vocab: Vocab,
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    max_len: usize,
    train: TrainState,
}

pub struct AbsModel {
    pub vocab: Vocab,
    pub target_vocab: Vocab,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub store: ParamStore<f32>,
    pub max_len: usize,
    pub optimiser: Option<OptimiserState>,
}

/// Encoded source kept for repeated decoder steps.
pub struct Memory {
    pub hidden: Tensor<f32>,
    pub source: DocInput,
    cross: CrossMemory<f32>,
}

impl Memory {
    pub fn source_mask(&self) -> Vec<bool> {
        self.source.tokens.iter().map(|t| *t != PAD).collect()
    }
}

impl AbsModel {
    /// Freshly initialised encoder and decoder.
    pub fn new(
        vocab: Vocab,
        enc: EncoderConfig,
        target_vocab: Vocab,
        dec: DecoderConfig,
        seed: u64,
    ) -> Result<Self> {
        if enc.vocab_size != vocab.len() || dec.target_vocab_size != target_vocab.len() {
            return Err(Error::Invalid(
                "model vocab sizes disagree with the vocabularies".into(),
            ));
        }
        if enc.model_dim != dec.model_dim {
            return Err(Error::Invalid(format!(
                "encoder width {} != decoder width {}",
                enc.model_dim, dec.model_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(enc, "encoder.", &mut store, &mut rng)?;
        let decoder = Decoder::init(dec, "decoder.", &mut store, &mut rng)?;
        Ok(Self {
            vocab,
            target_vocab,
            encoder,
            decoder,
            store,
            max_len: enc.max_positions,
            optimiser: None,
        })
    }

    /// Encoder weights copied from a trained EXT model; decoder fresh.
    pub fn from_ext(
        ext: &ExtModel,
        target_vocab: Vocab,
        dec: DecoderConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut m = Self::new(
            ext.vocab.clone(),
            ext.encoder.config,
            target_vocab,
            dec,
            seed,
        )?;
        let copied = m.store.copy_prefix_from(&ext.store, "encoder.")?;
        if copied == 0 {
            return Err(Error::Invalid(
                "EXT checkpoint has no encoder parameters".into(),
            ));
        }
        m.max_len = ext.max_len;
        Ok(m)
    }

    /// Overwrite target embeddings with table vectors where available.
    /// Returns the number of rows initialised.
    pub fn init_target_embeddings(&mut self, table: &EmbeddingTable) -> Result<usize> {
        let dim = self.decoder.config.embed_dim;
        if table.dim() != dim {
            return Err(Error::Invalid(format!(
                "embedding dim {} != decoder embed dim {dim}",
                table.dim()
            )));
        }
        let mut n = 0;
        let tokens = self.target_vocab.tokens().to_vec();
        let emb = self.store.get_mut(self.decoder.token_emb);
        for (i, tok) in tokens.iter().enumerate().skip(RESERVED) {
            if let Some(v) = table.vector(tok) {
                emb.data_mut()[i * dim..(i + 1) * dim].copy_from_slice(&v);
                n += 1;
            }
        }
        Ok(n)
    }

    pub fn source(&self, doc: &Document) -> DocInput {
        let (words, sents) = doc_words(doc);
        doc_input(&self.vocab, &words, &sents, self.max_len)
    }

    pub fn target_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .map(|t| self.target_vocab.word_id(t))
            .collect()
    }

    pub fn memory(&self, source: DocInput) -> Result<Memory> {
        let mut g = Graph::new(&self.store);
        let out = self
            .encoder
            .forward(&mut g, &source.tokens, &source.segments)?;
        let hidden = g.value(out.hidden).clone();
        let cross = self
            .decoder
            .cross_memory(&self.store, &hidden, &source.tokens)?;
        Ok(Memory {
            hidden,
            source,
            cross,
        })
    }

    /// Incremental version of [`AbsModel::step`] for search: decoder states
    /// are cached per prefix, so each call costs one position.
    pub fn stepper<'a>(
        &'a self,
        memory: &'a Memory,
    ) -> impl FnMut(&[usize]) -> Result<(Vec<f64>, Vec<f64>)> + 'a {
        let mut caches: HashMap<Vec<usize>, DecoderCache<f32>> = HashMap::new();
        move |prefix: &[usize]| {
            let (last, parent) = prefix
                .split_last()
                .ok_or_else(|| Error::Invalid("empty prefix".into()))?;
            let mut cache = match caches.get(parent) {
                Some(c) => c.clone(),
                None => {
                    let mut c = DecoderCache::default();
                    for &t in parent {
                        c = self.decoder.step(&self.store, &c, t, &memory.cross)?.cache;
                    }
                    c
                }
            };
            let out = self
                .decoder
                .step(&self.store, &cache, *last, &memory.cross)?;
            cache = out.cache;
            caches.insert(prefix.to_vec(), cache);
            let row: Vec<f64> = out.logits.iter().map(|v| *v as f64).collect();
            let heads = out.cross_attention.last().expect("at least one layer");
            let mut attn = vec![0.0f64; memory.source.tokens.len()];
            for h in heads {
                for (a, v) in attn.iter_mut().zip(h.data()) {
                    *a += *v as f64;
                }
            }
            let inv = 1.0 / heads.len() as f64;
            attn.iter_mut().for_each(|a| *a *= inv);
            Ok((log_softmax(&row), attn))
        }
    }

    /// Next-token log-probabilities after `prefix` and the final layer's
    /// head-averaged cross-attention row for the last prefix position.
    pub fn step(&self, memory: &Memory, prefix: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut g = Graph::new(&self.store);
        let mem = g.input(memory.hidden.clone());
        let out = self
            .decoder
            .forward(&mut g, prefix, mem, &memory.source.tokens)?;
        let logits = g.value(out.logits);
        let last = logits.rows() - 1;
        let row: Vec<f64> = logits.row(last).iter().map(|v| *v as f64).collect();
        let attn = mean_heads(&g, out.cross_attention.last().expect("at least one layer"));
        let attn_row = attn.row(last).iter().map(|v| *v as f64).collect();
        Ok((log_softmax(&row), attn_row))
    }

    /// Ids never generated for `facet`: specials, every bos and the other
    /// facets' eos.
    pub fn banned_for(facet: FacetKind) -> Vec<usize> {
        let mut banned = vec![PAD, UNK, CLS, SEP];
        banned.extend(BOS_BASE..BOS_BASE + FacetKind::ALL.len());
        banned.extend(
            (EOS_BASE..EOS_BASE + FacetKind::ALL.len()).filter(|e| *e != facet.signal().eos_id),
        );
        banned
    }

    fn check_facet_ids(&self) -> Result<()> {
        if self.target_vocab.len() < RESERVED {
            return Err(Error::Invalid(
                "target vocabulary lacks the reserved facet ids".into(),
            ));
        }
        Ok(())
    }

    pub fn beam(
        &self,
        memory: &Memory,
        facet: FacetKind,
        cfg: &BeamConfig,
    ) -> Result<Vec<BeamHypothesis>> {
        self.check_facet_ids()?;
        let sig = facet.signal();
        beam_search(
            self.stepper(memory),
            sig.bos_id,
            sig.eos_id,
            &Self::banned_for(facet),
            &memory.source_mask(),
            cfg,
        )
    }

    /// Hypothesis ids to tokens, with bos/eos and reserved ids dropped.
    pub fn strip(&self, tokens: &[usize]) -> Vec<String> {
        tokens
            .iter()
            .filter(|t| !is_reserved(**t))
            .map(|t| self.target_vocab.token(*t).to_string())
            .collect()
    }

    /// Per-facet token lists: the two best finished hypotheses merged,
    /// first hypothesis order, then unseen tokens of the second.
    pub fn generate(
        &self,
        doc: &Document,
        facets: &[FacetKind],
        cfg: &BeamConfig,
    ) -> Result<Vec<(FacetKind, Vec<String>)>> {
        let memory = self.memory(self.source(doc))?;
        let mut out = Vec::with_capacity(facets.len());
        for &facet in facets {
            let hyps = self.beam(&memory, facet, cfg)?;
            let mut merged: Vec<String> = Vec::new();
            for h in hyps.iter().take(2) {
                for tok in self.strip(&h.tokens) {
                    if !merged.contains(&tok) {
                        merged.push(tok);
                    }
                }
            }
            out.push((facet, merged));
        }
        Ok(out)
    }

    /// Teacher-forced NLL and predicted-token count over examples.
    pub fn nll(&self, examples: &[AbsExample]) -> Result<(f64, usize)> {
        let parts: Vec<Result<(f64, usize)>> = examples
            .par_iter()
            .map(|e| {
                let source = self.source(&e.doc);
                let sig = e.facet.signal();
                let target = self.target_ids(&e.target_tokens);
                let mut g = Graph::new(&self.store);
                let loss = abs_loss(
                    &mut g,
                    &self.encoder,
                    &self.decoder,
                    &source,
                    sig.bos_id,
                    &target,
                    sig.eos_id,
                )?;
                Ok((g.value(loss).item() as f64, target.len() + 1))
            })
            .collect();
        let mut total = (0.0, 0);
        for p in parts {
            let (l, n) = p?;
            total.0 += l;
            total.1 += n;
        }
        Ok(total)
    }

    /// `exp(NLL / tokens)` under teacher forcing, eos included.
    pub fn perplexity(&self, examples: &[AbsExample]) -> Result<f64> {
        let (nll, n) = self.nll(examples)?;
        Ok(if n == 0 { 1.0 } else { (nll / n as f64).exp() })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = AbsMeta {
            kind: KIND.into(),
            vocab: self.vocab.clone(),
            target_vocab: self.target_vocab.clone(),
            encoder: self.encoder.config,
            decoder: self.decoder.config,
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
        let mut meta: AbsMeta = serde_json::from_str(&ckpt.meta)?;
        if meta.kind != KIND {
            return Err(Error::parse(
                path,
                0,
                format!("expected a {KIND} checkpoint, found {}", meta.kind),
            ));
        }
        meta.vocab.reindex();
        meta.target_vocab.reindex();
        let mut m = Self::new(meta.vocab, meta.encoder, meta.target_vocab, meta.decoder, 0)?;
        ckpt.restore_into(&mut m.store)?;
        m.max_len = meta.max_len;
        m.optimiser = OptimiserState::from_checkpoint(&ckpt, meta.train);
        Ok(m)
    }
}

/// CSV of head-averaged final-layer cross-attention for the best
/// hypothesis: header `target` then one column per source piece, one row
/// per generated step.
pub fn export_cross_attention(
    model: &AbsModel,
    doc: &Document,
    facet: FacetKind,
    cfg: &BeamConfig,
    path: impl AsRef<Path>,
) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let memory = model.memory(model.source(doc))?;
    let best = model
        .beam(&memory, facet, cfg)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Invalid("no hypothesis to export".into()))?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["target".to_string()];
    header.extend(
        memory
            .source
            .tokens
            .iter()
            .map(|t| model.vocab.token(*t).to_string()),
    );
    w.write_record(&header)?;
    for (i, row) in best.attention.iter().enumerate() {
        let mut rec = vec![model.target_vocab.token(best.tokens[i + 1]).to_string()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(best.attention)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbsReport {
    pub log: Vec<LogRow>,
    pub train_perplexity: f64,
    pub validation: Option<Prf>,
    pub final_loss: f64,
}

/// Most validation examples decoded per evaluation.
const VAL_DECODE_CAP: usize = 32;

struct Prepared {
    source: DocInput,
    facet: FacetKind,
    target: Vec<usize>,
}

fn greedy_prf(
    model_parts: (&ParamStore<f32>, &Encoder, &Decoder, &Vocab),
    data: &[Prepared],
    cfg: &BeamConfig,
) -> Result<Prf> {
    let (store, encoder, decoder, target_vocab) = model_parts;
    let shim = AbsModel {
        vocab: Vocab::from_tokens(Vec::new()),
        target_vocab: target_vocab.clone(),
        encoder: encoder.clone(),
        decoder: decoder.clone(),
        store: store.clone(),
        max_len: encoder.config.max_positions,
        optimiser: None,
    };
    let counts: Vec<Result<(usize, usize, usize)>> = data
        .par_iter()
        .take(VAL_DECODE_CAP)
        .map(|p| {
            let memory = shim.memory(p.source.clone())?;
            let sig = p.facet.signal();
            let mask = memory.source_mask();
            let h = greedy(
                shim.stepper(&memory),
                sig.bos_id,
                sig.eos_id,
                &AbsModel::banned_for(p.facet),
                &mask,
                cfg,
            )?;
            let pred: Vec<usize> = h.tokens.into_iter().filter(|t| !is_reserved(*t)).collect();
            let tp = pred.iter().filter(|t| p.target.contains(t)).count();
            let hit = p.target.iter().filter(|t| pred.contains(t)).count();
            Ok((tp, pred.len() - tp, p.target.len() - hit))
        })
        .collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in counts {
        let (a, b, c) = c?;
        tp += a;
        fp += b;
        fn_ += c;
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

/// Teacher-forced training; encoder and decoder use separate learning
/// rates when `cfg.encoder_lr` is set. Validation decodes greedily and
/// reports token-set P/R/F1 against the targets.
pub fn train_abs(
    model: &mut AbsModel,
    examples: &[AbsExample],
    cfg: &TrainConfig,
    beam: &BeamConfig,
) -> Result<AbsReport> {
    model.check_facet_ids()?;
    if examples.is_empty() {
        return Err(Error::Invalid("no ABS training examples".into()));
    }
    let max_target = model.decoder.config.max_target_len;
    if let Some(e) = examples.iter().find(|e| e.target_tokens.len() > max_target) {
        return Err(Error::Invalid(format!(
            "target for doc {} exceeds {max_target} tokens",
            e.doc.id
        )));
    }
    let (train_ex, val_ex) = split_validation(examples, cfg.val_fraction, cfg.seed);
    let prep = |e: &AbsExample| Prepared {
        source: model.source(&e.doc),
        facet: e.facet,
        target: model.target_ids(&e.target_tokens),
    };
    let train: Vec<Prepared> = train_ex.iter().map(prep).collect();
    let val: Vec<Prepared> = val_ex.iter().map(prep).collect();
    let mut trainer = Trainer::new(cfg, &model.store)?;
    if let Some(saved) = &model.optimiser {
        trainer.resume(&model.store, saved)?;
    }
    let (encoder, decoder) = (model.encoder.clone(), model.decoder.clone());
    let target_vocab = model.target_vocab.clone();
    trainer.run(
        &mut model.store,
        &train,
        |g, p| {
            let sig = p.facet.signal();
            abs_loss(
                g, &encoder, &decoder, &p.source, sig.bos_id, &p.target, sig.eos_id,
            )
        },
        |store| {
            if val.is_empty() {
                return Ok(None);
            }
            greedy_prf((store, &encoder, &decoder, &target_vocab), &val, beam).map(Some)
        },
    )?;
    model.optimiser = Some(trainer.snapshot(&model.store));
    let final_loss = trainer.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    let validation = trainer.log.iter().rev().find_map(|r| r.val);
    Ok(AbsReport {
        train_perplexity: model.perplexity(&train_ex)?,
        validation,
        final_loss,
        log: trainer.log,
    })
}
