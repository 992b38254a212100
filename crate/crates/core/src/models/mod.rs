//! REL, EXT and ABS models plus the training loop and checkpoint bundles
//! they share.

pub mod abs;
pub mod beam;
pub mod ext;
pub mod rel;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use facetrank_nn::checkpoint::{read_checkpoint, save_store, Checkpoint};
use facetrank_nn::transformer::Linear;
use facetrank_nn::{
    Adam, AdamConfig, Gradients, Graph, ParamStore, PlateauMode, PlateauScheduler, Real, Tensor,
    Var,
};
use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::index_tokens;
use crate::wordpiece::{Vocab, CLS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Learning rate for everything outside the encoder group.
    pub lr: f64,
    /// Separate encoder learning rate (ABS only).
    pub encoder_lr: Option<f64>,
    pub w0: f64,
    pub w1: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub val_fraction: f64,
    pub eval_every: u64,
    pub log_every: u64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    /// Threads computing per-example gradients. Results are reduced in a
    /// fixed order, so the count does not change the outcome.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 12,
            lr: 1e-3,
            encoder_lr: None,
            w0: 1.0,
            w1: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            val_fraction: 0.2,
            eval_every: 200,
            log_every: 50,
            plateau_factor: 0.1,
            plateau_patience: 2,
            seed: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn rel() -> Self {
        Self {
            w0: 0.15,
            ..Self::default()
        }
    }

    pub fn ext() -> Self {
        Self {
            w0: 0.075,
            ..Self::default()
        }
    }

    pub fn abs() -> Self {
        Self {
            encoder_lr: Some(1e-4),
            ..Self::default()
        }
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.w0 <= 0.0 || self.w1 <= 0.0 || self.lr <= 0.0 {
            return Err(Error::Invalid(
                "batch size, class weights and lr must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Invalid(format!(
                "val_fraction {} outside [0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Precision, recall and F1 from confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        Self {
            precision: p,
            recall: r,
            f1,
        }
    }
}

/// Confusion counts of thresholded predictions.
pub fn binary_counts(pred: impl IntoIterator<Item = (bool, bool)>) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, y) in pred {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub val: Option<Prf>,
}

pub fn write_training_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss", "lr", "val_P", "val_R", "val_F1"])?;
    for r in rows {
        let (p, rc, f) = match r.val {
            Some(v) => (
                format!("{:.6}", v.precision),
                format!("{:.6}", v.recall),
                format!("{:.6}", v.f1),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            r.step.to_string(),
            format!("{:.6}", r.loss),
            format!("{:e}", r.lr),
            p,
            rc,
            f,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shuffle with `seed` and hold out `fraction` (rounded down) for validation.
pub fn split_validation<E: Clone>(items: &[E], fraction: f64, seed: u64) -> (Vec<E>, Vec<E>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_val = ((items.len() as f64) * fraction).floor() as usize;
    let n_val = if n_val >= items.len() { 0 } else { n_val };
    let val = order[..n_val].iter().map(|&i| items[i].clone()).collect();
    let train = order[n_val..].iter().map(|&i| items[i].clone()).collect();
    (train, val)
}

/// Batch indices for one step; a pure function of (seed, step) so resumed
/// runs draw the same batches.
fn batch_indices(seed: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut idx = sample(&mut rng, n, batch.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Optimiser position carried by checkpoints so training can resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    /// Product of all plateau reductions applied so far.
    pub lr_scale: f64,
}

/// Step counter, lr scale and Adam moments saved alongside parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimiserState {
    pub state: TrainState,
    pub moments: Vec<(String, Tensor<f32>)>,
}

impl OptimiserState {
    pub(crate) fn from_checkpoint(ckpt: &Checkpoint<f32>, state: TrainState) -> Option<Self> {
        let moments: Vec<_> = ckpt
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with("adam."))
            .cloned()
            .collect();
        (!moments.is_empty()).then_some(Self { state, moments })
    }
}

pub(crate) struct Trainer<'a> {
    pub cfg: &'a TrainConfig,
    pub adam: Adam<f32>,
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, store: &ParamStore<f32>) -> Result<Self> {
        cfg.validate()?;
        let mut adam = Adam::new(store, cfg.lr, cfg.adam_config());
        if let Some(enc) = cfg.encoder_lr {
            adam = adam.with_group("encoder.", enc);
        }
        Ok(Self {
            cfg,
            adam,
            state: TrainState {
                step: 0,
                lr_scale: 1.0,
            },
            log: Vec::new(),
        })
    }

    /// Restore optimiser moments and the step counter from a bundle.
    pub fn resume(&mut self, store: &ParamStore<f32>, saved: &OptimiserState) -> Result<()> {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (_, name, t) in store.iter() {
            let get = |kind: &str| {
                let key = format!("adam.{kind}.{name}");
                saved
                    .moments
                    .iter()
                    .find(|(n, _)| *n == key)
                    .map(|(_, x)| x)
                    .filter(|x| x.shape() == t.shape())
                    .cloned()
                    .ok_or_else(|| {
                        Error::Invalid(format!("checkpoint lacks optimiser state for {name}"))
                    })
            };
            m.push(get("m")?);
            v.push(get("v")?);
        }
        self.adam.set_moments(m, v);
        self.adam.set_steps(saved.state.step);
        self.adam.scale_lr(saved.state.lr_scale);
        self.state = saved.state.clone();
        Ok(())
    }

    pub fn snapshot(&self, store: &ParamStore<f32>) -> OptimiserState {
        let (m, v) = self.adam.moments();
        let mut moments = Vec::with_capacity(2 * m.len());
        for ((_, name, _), (mt, vt)) in store.iter().zip(m.iter().zip(v)) {
            moments.push((format!("adam.m.{name}"), mt.clone()));
            moments.push((format!("adam.v.{name}"), vt.clone()));
        }
        OptimiserState {
            state: self.state.clone(),
            moments,
        }
    }

    /// Run until `cfg.steps` total steps. `loss_fn` builds one example's
    /// loss; the batch loss is the mean. `validate` is called every
    /// `eval_every` steps and at the end.
    pub fn run<E, L, V>(
        &mut self,
        store: &mut ParamStore<f32>,
        train: &[E],
        loss_fn: L,
        mut validate: V,
    ) -> Result<()>
    where
        E: Sync,
        L: Fn(&mut Graph<'_, f32>, &E) -> Result<Var> + Sync,
        V: FnMut(&ParamStore<f32>) -> Result<Option<Prf>>,
    {
        if train.is_empty() {
            return Err(Error::Invalid("no training examples".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers.max(1))
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?;
        let mut sched = PlateauScheduler::new(
            self.cfg.plateau_factor,
            self.cfg.plateau_patience,
            PlateauMode::Max,
        );
        let mut window = (0.0, 0usize);
        while self.state.step < self.cfg.steps {
            let step = self.state.step + 1;
            let idx = batch_indices(self.cfg.seed, step, train.len(), self.cfg.batch_size);
            let frozen: &ParamStore<f32> = store;
            let one = |i: &usize| -> Result<(f64, Gradients<f32>)> {
                let mut g = Graph::new(frozen);
                let loss = loss_fn(&mut g, &train[*i])?;
                Ok((g.value(loss).item().as_f64(), g.backward(loss)))
            };
            let results: Vec<Result<(f64, Gradients<f32>)>> = if self.cfg.workers > 1 {
                pool.install(|| idx.par_iter().map(one).collect())
            } else {
                idx.iter().map(one).collect()
            };
            let mut total = 0.0;
            let mut acc: Option<Gradients<f32>> = None;
            for r in results {
                let (loss, grads) = r?;
                total += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for id in frozen.ids() {
                            if let Some(t) = grads.get(id) {
                                a.accumulate(id, t.clone());
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("nonempty batch");
            grads.scale(1.0 / idx.len() as f64);
            self.adam.step(store, &grads);
            self.state.step = step;
            let loss = total / idx.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Invalid(format!("loss diverged at step {step}")));
            }
            window.0 += loss;
            window.1 += 1;
            let eval_now = (self.cfg.eval_every > 0 && step % self.cfg.eval_every == 0)
                || step == self.cfg.steps;
            let log_now = eval_now || (self.cfg.log_every > 0 && step % self.cfg.log_every == 0);
            if log_now {
                let val = if eval_now { validate(store)? } else { None };
                if let Some(v) = val {
                    let mult = sched.observe(v.f1);
                    if mult != 1.0 {
                        self.adam.scale_lr(mult);
                        self.state.lr_scale *= mult;
                        log::info!("step {step}: validation F1 plateaued, lr scaled by {mult}");
                    }
                }
                let row = LogRow {
                    step,
                    loss: window.0 / window.1 as f64,
                    lr: self.adam.default_lr,
                    val,
                };
                log::info!("step {} loss {:.5} lr {:e}", row.step, row.loss, row.lr);
                self.log.push(row);
                window = (0.0, 0);
            }
        }
        Ok(())
    }
}

/// Scalar-per-row linear head `[dim] -> [out]`.
pub(crate) fn init_head(
    store: &mut ParamStore<f32>,
    name: &str,
    dim: usize,
    out: usize,
    rng: &mut dyn RngCore,
) -> Linear {
    Linear {
        w: store.add_normal(
            format!("{name}.weight"),
            &[dim, out],
            facetrank_nn::params::INIT_STD,
            rng,
        ),
        b: store.add_const(format!("{name}.bias"), &[out], 0.0),
    }
}

pub(crate) fn bind_head<T: Real>(
    store: &ParamStore<T>,
    name: &str,
    dim: usize,
    out: usize,
) -> Result<Linear> {
    Ok(Linear {
        w: store.expect(&format!("{name}.weight"), &[dim, out])?,
        b: store.expect(&format!("{name}.bias"), &[out])?,
    })
}

/// Wordpiece ids of one text span (index tokenizer, then greedy pieces).
pub fn text_pieces(vocab: &Vocab, text: &str) -> Vec<usize> {
    index_tokens(text)
        .iter()
        .flat_map(|w| vocab.word_pieces(w))
        .collect()
}

/// Encoder input for a document without SEP markers: CLS then the pieces of
/// every word, segments alternating per sentence, cut at `max_len`.
#[derive(Clone, Debug, PartialEq)]
pub struct DocInput {
    pub tokens: Vec<usize>,
    pub segments: Vec<usize>,
    /// Index of the source word for each position (`None` for CLS).
    pub word_of: Vec<Option<usize>>,
}

pub fn doc_input(
    vocab: &Vocab,
    words: &[String],
    sentence_ids: &[usize],
    max_len: usize,
) -> DocInput {
    let mut tokens = vec![CLS];
    let mut segments = vec![0];
    let mut word_of = vec![None];
    'outer: for (w, (word, s)) in words.iter().zip(sentence_ids).enumerate() {
        for p in vocab.word_pieces(word) {
            if tokens.len() >= max_len {
                break 'outer;
            }
            tokens.push(p);
            segments.push(s % 2);
            word_of.push(Some(w));
        }
    }
    DocInput {
        tokens,
        segments,
        word_of,
    }
}

/// Write a bundle: JSON meta, parameters, then optimiser moments.
pub(crate) fn write_bundle(
    path: &Path,
    meta: &impl Serialize,
    store: &ParamStore<f32>,
    extra: &[(String, Tensor<f32>)],
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string(meta)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    save_store(&mut w, &json, store, extra)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_bundle(path: &Path) -> Result<Checkpoint<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file)).map_err(|e| match e {
        facetrank_nn::NnError::Io(io) => Error::io(path, io),
        other => Error::parse(path, 0, other.to_string()),
    })
}

/// Peek at the `kind` field of a bundle's meta.
pub fn bundle_kind(path: impl AsRef<Path>) -> Result<String> {
    let ckpt = read_bundle(path.as_ref())?;
    let v: serde_json::Value = serde_json::from_str(&ckpt.meta)?;
    v.get("kind")
        .and_then(|k| k.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::parse(path.as_ref(), 0, "checkpoint meta has no kind"))
}
