use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use facetrank::corpus::{
    build_training_examples, load_corpus, load_qrels, load_run, load_topics, save_run,
    write_corpus, write_qrels, write_topics, Document, Examples, FacetKind, ModelKind,
};
use facetrank::embed::{corpus_lines, mesh_lexicon, train_embeddings, EmbedConfig, EmbeddingTable};
use facetrank::eval::{compare_runs, format_comparison_table, write_comparison_csv};
use facetrank::experiment::encoder_vocab;
use facetrank::index::{Bm25Params, InvertedIndex, RankedList};
use facetrank::models::abs::{build_target_vocab, export_cross_attention, train_abs, AbsModel};
use facetrank::models::beam::BeamConfig;
use facetrank::models::ext::{export_token_heatmap, train_ext, ExtModel};
use facetrank::models::rel::{train_rel, RelModel};
use facetrank::models::{write_training_log, LogRow, TrainConfig};
use facetrank::rerank::{first_stage, rerank_topics, write_debug, Models, RerankConfig};
use facetrank::synth::{generate_synthetic, VocabSpec};
use facetrank::Error;
use facetrank_nn::{DecoderConfig, EncoderConfig};

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

const INDEX_FILE: &str = "index.bin";

pub fn dispatch(cli: Cli) -> Result<()> {
    let training = matches!(cli.command, Command::Train(_) | Command::EmbedTrain(_));
    let workers = cli.workers.unwrap_or(if training { 1 } else { 0 });
    // 0 lets rayon pick one thread per core. Ignore a pool that already exists.
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .ok();
    match cli.command {
        Command::Index(a) => index(a),
        Command::Search(a) => search(a),
        Command::Synth(a) => synth(a),
        Command::EmbedTrain(a) | Command::Train(TrainCommand::Embed(a)) => embed(a),
        Command::Train(TrainCommand::Rel(a)) => train_rel_cmd(a, cli.workers.unwrap_or(1)),
        Command::Train(TrainCommand::Ext(a)) => train_ext_cmd(a, cli.workers.unwrap_or(1)),
        Command::Train(TrainCommand::Abs(a)) => train_abs_cmd(a, cli.workers.unwrap_or(1)),
        Command::Rerank(a) => rerank(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
    }
}

fn index_file(dir: &Path) -> PathBuf {
    dir.join(INDEX_FILE)
}

fn index(a: IndexArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let idx = InvertedIndex::build_with(&corpus, Bm25Params { k1: a.k1, b: a.b })?;
    std::fs::create_dir_all(&a.index).map_err(|e| Error::io(&a.index, e))?;
    idx.save(index_file(&a.index))?;
    log::info!(
        "indexed {} documents into {}",
        idx.num_docs(),
        a.index.display()
    );
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let idx = InvertedIndex::load(index_file(&a.index))?;
    let topics = load_topics(&a.topics)?;
    let cfg = RerankConfig {
        first_stage_k: a.k,
        use_mlt: a.mlt,
        mlt_terms: a.mlt_terms,
        mlt_docs: a.mlt_docs,
        ..RerankConfig::default()
    };
    let lists: Vec<RankedList> = topics
        .iter()
        .map(|t| first_stage(&idx, t, &cfg))
        .collect::<facetrank::Result<_>>()?;
    save_run(&a.out, &lists, &a.tag)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let data = generate_synthetic(a.seed, a.docs, a.topic_count, &VocabSpec::default())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_corpus(a.out.join("corpus.jsonl"), &data.corpus)?;
    write_topics(a.out.join("topics.jsonl"), &data.topics)?;
    write_qrels(a.out.join("qrels.txt"), &data.qrels)?;
    log::info!(
        "wrote {} documents and {} topics to {}",
        data.corpus.len(),
        data.topics.len(),
        a.out.display()
    );
    Ok(())
}

/// `surface<TAB>code` per line; blank lines and `#` comments skipped.
fn read_lexicon(path: &Path) -> Result<HashMap<String, String>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (surface, code) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected surface<TAB>code"))?;
        out.insert(surface.trim().to_lowercase(), code.trim().to_string());
    }
    Ok(out)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mut lexicon = mesh_lexicon();
    lexicon.extend(VocabSpec::default().lexicon());
    if let Some(p) = &a.lexicon {
        lexicon.extend(read_lexicon(p)?);
    }
    let cfg = EmbedConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        min_n: a.min_n,
        max_n: a.max_n,
        buckets: a.buckets,
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        ..EmbedConfig::default()
    };
    let table = train_embeddings(&corpus_lines(&corpus, &lexicon), &cfg)?;
    table.save(&a.out)?;
    log::info!(
        "saved {} vectors of dim {} to {}",
        table.len(),
        table.dim(),
        a.out.display()
    );
    Ok(())
}

struct TrainInputs {
    corpus: Vec<Document>,
    examples: Examples,
}

fn train_inputs(a: &ModelTrainArgs, kind: ModelKind) -> Result<TrainInputs> {
    let corpus = load_corpus(&a.corpus)?;
    let topics = load_topics(&a.topics)?;
    let qrels = load_qrels(&a.qrels)?;
    let set = build_training_examples(&topics, &qrels, &corpus, kind)?;
    if set.skipped > 0 {
        log::warn!(
            "skipped {} judgments whose documents are missing from the corpus",
            set.skipped
        );
    }
    log::info!("{} training examples", set.examples.len());
    Ok(TrainInputs {
        corpus,
        examples: set.examples,
    })
}

fn train_config(a: &ModelTrainArgs, base: TrainConfig, done: u64, workers: usize) -> TrainConfig {
    TrainConfig {
        steps: done + a.steps,
        batch_size: a.batch,
        lr: a.lr,
        w0: a.w0.unwrap_or(base.w0),
        w1: a.w1,
        beta1: a.beta1,
        beta2: a.beta2,
        val_fraction: a.val_fraction,
        eval_every: a.eval_every,
        plateau_factor: a.plateau_factor,
        plateau_patience: a.plateau_patience,
        seed: a.seed,
        workers,
        ..base
    }
}

fn encoder_config(a: &ModelTrainArgs, vocab_len: usize) -> EncoderConfig {
    let mut c = match a.profile {
        Profile::Full => EncoderConfig::full(vocab_len),
        Profile::Desk => EncoderConfig::desk(vocab_len),
    };
    if let Some(m) = a.max_tokens {
        c.max_positions = m;
    }
    c
}

fn new_vocab(a: &ModelTrainArgs, corpus: &[Document]) -> Result<facetrank::wordpiece::Vocab> {
    let topics = load_topics(&a.topics)?;
    Ok(encoder_vocab(corpus, &topics, a.vocab_size))
}

fn saved_step(opt: &Option<facetrank::models::OptimiserState>) -> u64 {
    opt.as_ref().map_or(0, |o| o.state.step)
}

fn finish_log(a: &ModelTrainArgs, rows: &[LogRow]) -> Result<()> {
    let path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    write_training_log(&path, rows)?;
    Ok(())
}

fn train_rel_cmd(a: ModelTrainArgs, workers: usize) -> Result<()> {
    let TrainInputs {
        corpus,
        examples: Examples::Rel(ex),
    } = train_inputs(&a, ModelKind::Rel)?
    else {
        unreachable!("REL examples requested")
    };
    let mut model = match &a.resume {
        Some(p) => RelModel::load(p)?,
        None => {
            let vocab = new_vocab(&a, &corpus)?;
            let cfg = encoder_config(&a, vocab.len());
            RelModel::new(vocab, cfg, a.seed)?
        }
    };
    let cfg = train_config(
        &a,
        TrainConfig::rel(),
        saved_step(&model.optimiser),
        workers,
    );
    let report = train_rel(&mut model, &ex, &cfg)?;
    log::info!(
        "train F1 {:.4} validation {:?}",
        report.train.f1,
        report.validation.map(|v| v.f1)
    );
    model.save(&a.out)?;
    finish_log(&a, &report.log)
}

fn train_ext_cmd(a: ModelTrainArgs, workers: usize) -> Result<()> {
    let TrainInputs {
        corpus,
        examples: Examples::Ext(ex),
    } = train_inputs(&a, ModelKind::Ext)?
    else {
        unreachable!("EXT examples requested")
    };
    let mut model = match &a.resume {
        Some(p) => ExtModel::load(p)?,
        None => {
            let vocab = new_vocab(&a, &corpus)?;
            let cfg = encoder_config(&a, vocab.len());
            ExtModel::new(vocab, cfg, a.seed)?
        }
    };
    let cfg = train_config(
        &a,
        TrainConfig::ext(),
        saved_step(&model.optimiser),
        workers,
    );
    let report = train_ext(&mut model, &ex, &cfg)?;
    log::info!(
        "train F1 {:.4} validation {:?}",
        report.train.f1,
        report.validation.map(|v| v.f1)
    );
    model.save(&a.out)?;
    finish_log(&a, &report.log)
}

fn beam_config(b: &BeamArgs) -> BeamConfig {
    BeamConfig {
        beam: b.beam,
        alpha: b.alpha,
        beta: b.beta,
        max_len: b.max_target + 1,
    }
}

fn train_abs_cmd(a: AbsTrainArgs, workers: usize) -> Result<()> {
    let c = &a.common;
    if c.resume.is_none() && a.ext.is_none() {
        return Err(CliError::Usage(
            "ABS initialises its encoder from an EXT checkpoint; pass --ext".into(),
        ));
    }
    let TrainInputs {
        corpus,
        examples: Examples::Abs(ex),
    } = train_inputs(c, ModelKind::Abs)?
    else {
        unreachable!("ABS examples requested")
    };
    let mut model = match (&c.resume, &a.ext) {
        (Some(p), _) => AbsModel::load(p)?,
        (None, Some(ext_path)) => {
            let ext = ExtModel::load(ext_path)?;
            let table = a
                .embeddings
                .as_ref()
                .map(EmbeddingTable::load)
                .transpose()?;
            let embed_dim = table
                .as_ref()
                .map_or(EmbedConfig::default().dim, |t| t.dim());
            let target_vocab = build_target_vocab(&ex, &corpus, a.target_vocab_size);
            let dec = match c.profile {
                Profile::Full => DecoderConfig::full(target_vocab.len(), embed_dim),
                Profile::Desk => DecoderConfig::desk(target_vocab.len(), embed_dim),
            };
            let mut m = AbsModel::from_ext(&ext, target_vocab, dec, c.seed)?;
            if let Some(t) = &table {
                let n = m.init_target_embeddings(t)?;
                log::info!(
                    "initialised {n} target embeddings from {}",
                    a.embeddings.as_ref().unwrap().display()
                );
            }
            m
        }
        (None, None) => unreachable!("checked above"),
    };
    let base = TrainConfig {
        encoder_lr: Some(a.encoder_lr),
        ..TrainConfig::abs()
    };
    let cfg = train_config(c, base, saved_step(&model.optimiser), workers);
    let report = train_abs(&mut model, &ex, &cfg, &beam_config(&a.beam))?;
    log::info!(
        "train perplexity {:.4} validation {:?}",
        report.train_perplexity,
        report.validation.map(|v| v.f1)
    );
    model.save(&c.out)?;
    finish_log(c, &report.log)
}

fn rerank(a: RerankArgs) -> Result<()> {
    let use_rel = !a.no_rel;
    let use_abs = !a.no_abs;
    let use_ext = !a.no_ext;
    if use_rel && a.rel.is_none() {
        return Err(CliError::Usage(
            "REL fusion needs --rel (or pass --no-rel)".into(),
        ));
    }
    if use_abs && a.abs.is_none() && !(use_ext && a.ext.is_some()) {
        return Err(CliError::Usage(
            "pseudo-query fusion needs --abs or --ext (or pass --no-abs)".into(),
        ));
    }
    if (use_rel || use_abs) && a.corpus.is_none() {
        return Err(CliError::Usage("model fusion needs --corpus".into()));
    }
    let idx = InvertedIndex::load(index_file(&a.index))?;
    let topics = load_topics(&a.topics)?;
    let corpus = a
        .corpus
        .as_ref()
        .map(load_corpus)
        .transpose()?
        .unwrap_or_default();
    let rel = if use_rel {
        a.rel.as_ref().map(RelModel::load).transpose()?
    } else {
        None
    };
    let ext = if use_abs && use_ext {
        a.ext.as_ref().map(ExtModel::load).transpose()?
    } else {
        None
    };
    let abs = if use_abs {
        a.abs.as_ref().map(AbsModel::load).transpose()?
    } else {
        None
    };
    let table = if use_abs {
        a.embeddings
            .as_ref()
            .map(EmbeddingTable::load)
            .transpose()?
    } else {
        None
    };
    let models = Models {
        rel: rel.as_ref(),
        ext: ext.as_ref(),
        abs: abs.as_ref(),
        table: table.as_ref(),
    };
    let cfg = RerankConfig {
        first_stage_k: a.k,
        rrf_k: a.rrf_k,
        use_rel,
        use_abs,
        use_ext,
        use_mlt: a.mlt,
        keyword_threshold: a.keyword_threshold,
        beam: beam_config(&a.beam),
        ..RerankConfig::default()
    };
    let results = rerank_topics(&topics, &idx, &corpus, &models, &cfg)?;
    if let Some(dir) = &a.debug_dir {
        write_debug(dir, &results)?;
    }
    let lists: Vec<RankedList> = results.into_iter().map(|r| r.ranked).collect();
    save_run(&a.out, &lists, &a.tag)?;
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let qrels = load_qrels(&a.qrels)?;
    let runs = a
        .runs
        .iter()
        .map(|p| load_run(p).map(|r| (r.tag, r.lists)))
        .collect::<facetrank::Result<Vec<_>>>()?;
    let rows = compare_runs(&runs, &qrels)?;
    print!("{}", format_comparison_table(&rows));
    if let Some(p) = &a.csv {
        let f = File::create(p).map_err(|e| Error::io(p, e))?;
        write_comparison_csv(f, &rows)?;
    }
    Ok(())
}

fn find_doc(corpus: Vec<Document>, id: &str) -> Result<Document> {
    corpus.into_iter().find(|d| d.id == id).ok_or_else(|| {
        Error::Unknown {
            kind: "document",
            value: id.into(),
        }
        .into()
    })
}

fn export(a: ExportCommand) -> Result<()> {
    match a {
        ExportCommand::Heatmap {
            ext,
            corpus,
            doc,
            out,
        } => {
            let model = ExtModel::load(&ext)?;
            let doc = find_doc(load_corpus(&corpus)?, &doc)?;
            export_token_heatmap(&model.score_doc(&doc)?, &out)?;
        }
        ExportCommand::Attention {
            abs,
            corpus,
            doc,
            facet,
            out,
            beam,
        } => {
            let facet: FacetKind = facet.parse()?;
            let model = AbsModel::load(&abs)?;
            let doc = find_doc(load_corpus(&corpus)?, &doc)?;
            export_cross_attention(&model, &doc, facet, &beam_config(&beam), &out)?;
        }
    }
    Ok(())
}
