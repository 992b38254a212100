//! End-to-end run on synthetic data: train every model on a subset of
//! topics, rerank the held-out topics and score the runs.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use facetrank_nn::{DecoderConfig, EncoderConfig};
use serde::Serialize;

use crate::corpus::{
    build_training_examples, save_run, Document, Examples, ModelKind, PatientCase,
};
use crate::embed::{corpus_lines, mesh_lexicon, train_embeddings, EmbedConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricReport};
use crate::index::{InvertedIndex, RankedList};
use crate::models::abs::{build_target_vocab, train_abs, AbsModel};
use crate::models::ext::{train_ext, ExtModel};
use crate::models::rel::{train_rel, RelModel};
use crate::models::TrainConfig;
use crate::rerank::{rerank_topics, Models, RerankConfig};
use crate::synth::{generate_synthetic, SyntheticData, VocabSpec};
use crate::wordpiece::Vocab;

/// Encoder vocabulary from document text and topic queries.
pub fn encoder_vocab(corpus: &[Document], topics: &[PatientCase], max_size: usize) -> Vocab {
    let texts: Vec<String> = corpus
        .iter()
        .map(Document::text)
        .chain(topics.iter().map(|t| t.query_sentences().join(" ")))
        .collect();
    Vocab::train_wordpiece(texts.iter().map(String::as_str), 1, max_size)
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_docs: usize,
    pub n_topics: usize,
    pub train_topics: usize,
    pub vocab_size: usize,
    pub target_vocab_size: usize,
    pub rel: TrainConfig,
    pub ext: TrainConfig,
    pub abs: TrainConfig,
    pub embed: EmbedConfig,
    pub rerank: RerankConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_docs: 2000,
            n_topics: 20,
            train_topics: 16,
            vocab_size: 5000,
            target_vocab_size: 5000,
            rel: TrainConfig::rel(),
            ext: TrainConfig {
                steps: 1000,
                ..TrainConfig::ext()
            },
            abs: TrainConfig {
                steps: 1000,
                ..TrainConfig::abs()
            },
            embed: EmbedConfig::default(),
            rerank: RerankConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub rel_s: f64,
    pub ext_s: f64,
    pub embed_s: f64,
    pub abs_s: f64,
    pub rerank_s: f64,
}

pub struct ExperimentResult {
    pub baseline: MetricReport,
    pub rel: MetricReport,
    pub rel_abs: MetricReport,
    pub runs: Vec<(String, Vec<RankedList>)>,
    pub timings: Timings,
}

fn examples(data: &SyntheticData, topics: &[PatientCase], kind: ModelKind) -> Result<Examples> {
    Ok(build_training_examples(topics, &data.qrels, &data.corpus, kind)?.examples)
}

/// Generate, train, rerank and evaluate. Run files go to `out_dir` when set.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentResult> {
    if cfg.train_topics == 0 || cfg.train_topics >= cfg.n_topics {
        return Err(Error::Invalid(format!(
            "need 0 < train topics ({}) < topics ({})",
            cfg.train_topics, cfg.n_topics
        )));
    }
    let spec = VocabSpec::default();
    let data = generate_synthetic(cfg.seed, cfg.n_docs, cfg.n_topics, &spec)?;
    let (train_t, test_t) = data.topics.split_at(cfg.train_topics);
    let vocab = encoder_vocab(&data.corpus, train_t, cfg.vocab_size);
    let index = InvertedIndex::build(&data.corpus)?;

    let t = Instant::now();
    let Examples::Rel(rel_ex) = examples(&data, train_t, ModelKind::Rel)? else {
        unreachable!()
    };
    let mut rel = RelModel::new(vocab.clone(), EncoderConfig::desk(vocab.len()), cfg.seed)?;
    let report = train_rel(&mut rel, &rel_ex, &cfg.rel)?;
    log::info!(
        "REL train {:?} validation {:?}",
        report.train,
        report.validation
    );
    let rel_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let Examples::Ext(ext_ex) = examples(&data, train_t, ModelKind::Ext)? else {
        unreachable!()
    };
    let mut ext = ExtModel::new(vocab.clone(), EncoderConfig::desk(vocab.len()), cfg.seed)?;
    let report = train_ext(&mut ext, &ext_ex, &cfg.ext)?;
    log::info!(
        "EXT train {:?} validation {:?}",
        report.train,
        report.validation
    );
    let ext_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mut lexicon = mesh_lexicon();
    lexicon.extend(spec.lexicon());
    let table = train_embeddings(&corpus_lines(&data.corpus, &lexicon), &cfg.embed)?;
    let embed_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let Examples::Abs(abs_ex) = examples(&data, train_t, ModelKind::Abs)? else {
        unreachable!()
    };
    let target_vocab = build_target_vocab(&abs_ex, &data.corpus, cfg.target_vocab_size);
    let dec = DecoderConfig::desk(target_vocab.len(), table.dim());
    let mut abs = AbsModel::from_ext(&ext, target_vocab, dec, cfg.seed)?;
    abs.init_target_embeddings(&table)?;
    let report = train_abs(&mut abs, &abs_ex, &cfg.abs, &cfg.rerank.beam)?;
    log::info!(
        "ABS perplexity {:.3} validation {:?}",
        report.train_perplexity,
        report.validation
    );
    let abs_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let models = Models {
        rel: Some(&rel),
        ext: Some(&ext),
        abs: Some(&abs),
        table: Some(&table),
    };
    let mut runs = Vec::new();
    let mut reports: HashMap<&str, MetricReport> = HashMap::new();
    for (tag, use_rel, use_abs) in [
        ("bm25", false, false),
        ("rel", true, false),
        ("rel_abs", true, true),
    ] {
        let rc = RerankConfig {
            use_rel,
            use_abs,
            ..cfg.rerank.clone()
        };
        let lists: Vec<RankedList> = rerank_topics(test_t, &index, &data.corpus, &models, &rc)?
            .into_iter()
            .map(|r| r.ranked)
            .collect();
        if let Some(dir) = out_dir {
            save_run(dir.join(format!("{tag}.run")), &lists, tag)?;
        }
        reports.insert(tag, evaluate(tag, &lists, &data.qrels)?);
        runs.push((tag.to_string(), lists));
    }
    let rerank_s = t.elapsed().as_secs_f64();
    let mut take = |k| reports.remove(k).expect("all runs evaluated");
    Ok(ExperimentResult {
        baseline: take("bm25"),
        rel: take("rel"),
        rel_abs: take("rel_abs"),
        runs,
        timings: Timings {
            rel_s,
            ext_s,
            embed_s,
            abs_s,
            rerank_s,
        },
    })
}
