//! Pseudo-query scoring and reciprocal rank fusion over first-stage
//! candidates.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, FacetKind, PatientCase};
use crate::embed::{s_cos, EmbeddingTable};
use crate::error::{Error, Result};
use crate::index::{edismax_terms, InvertedIndex, RankedList};
use crate::models::abs::AbsModel;
use crate::models::beam::BeamConfig;
use crate::models::ext::ExtModel;
use crate::models::rel::RelModel;
use crate::text::is_word_token;
use crate::wordpiece::reserved_tokens;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoQuery {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

/// Facet outputs in facet order, then EXT keywords; first occurrence wins.
/// Reserved tokens and pure punctuation are dropped.
pub fn build_pseudo_query(
    doc_id: &str,
    facets: &[(FacetKind, Vec<String>)],
    keywords: &[String],
) -> PseudoQuery {
    let reserved: HashSet<String> = reserved_tokens().into_iter().collect();
    let mut ordered: Vec<&(FacetKind, Vec<String>)> = facets.iter().collect();
    ordered.sort_by_key(|(f, _)| f.index());
    let mut seen = HashSet::new();
    let mut tokens = Vec::new();
    for tok in ordered.iter().flat_map(|(_, t)| t.iter()).chain(keywords) {
        if reserved.contains(tok) || !is_word_token(tok) {
            continue;
        }
        if seen.insert(tok.clone()) {
            tokens.push(tok.clone());
        }
    }
    PseudoQuery {
        doc_id: doc_id.to_string(),
        tokens,
    }
}

/// Share of distinct query tokens present in the pseudo-query.
pub fn rouge1_recall(query: &[String], pseudo: &[String]) -> f64 {
    let q: HashSet<&str> = query.iter().map(String::as_str).collect();
    if q.is_empty() {
        log::warn!("ROUGE-1 recall of an empty query");
        return 0.0;
    }
    let p: HashSet<&str> = pseudo.iter().map(String::as_str).collect();
    q.intersection(&p).count() as f64 / q.len() as f64
}

pub const DEFAULT_RRF_K: f64 = 60.0;

/// `score(d) = sum over lists of 1 / (k + rank)`, ranks 1-based. Per-document
/// terms are summed smallest first, so the result does not depend on list
/// order.
pub fn rrf_fuse(lists: &[&RankedList], k: f64) -> Result<RankedList> {
    let first = lists
        .first()
        .ok_or_else(|| Error::Invalid("fusion needs at least one list".into()))?;
    if k <= 0.0 {
        return Err(Error::Invalid(format!(
            "fusion constant {k} must be positive"
        )));
    }
    if let Some(l) = lists.iter().find(|l| l.topic_id != first.topic_id) {
        return Err(Error::Invalid(format!(
            "cannot fuse topic {} with topic {}",
            first.topic_id, l.topic_id
        )));
    }
    let mut terms: HashMap<&str, Vec<f64>> = HashMap::new();
    for l in lists {
        for (i, (d, _)) in l.entries.iter().enumerate() {
            terms
                .entry(d.as_str())
                .or_default()
                .push(1.0 / (k + (i + 1) as f64));
        }
    }
    let entries = terms
        .into_iter()
        .map(|(d, mut v)| {
            v.sort_by(f64::total_cmp);
            (d.to_string(), v.iter().sum())
        })
        .collect();
    Ok(RankedList::from_scores(first.topic_id.clone(), entries))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub first_stage_k: usize,
    pub rrf_k: f64,
    pub use_rel: bool,
    pub use_abs: bool,
    pub use_ext: bool,
    pub use_mlt: bool,
    pub mlt_terms: usize,
    pub mlt_docs: usize,
    pub facets: Vec<FacetKind>,
    pub keyword_threshold: f64,
    pub beam: BeamConfig,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            first_stage_k: 500,
            rrf_k: DEFAULT_RRF_K,
            use_rel: true,
            use_abs: true,
            use_ext: true,
            use_mlt: false,
            mlt_terms: 10,
            mlt_docs: 10,
            facets: FacetKind::ALL.to_vec(),
            keyword_threshold: 0.5,
            beam: BeamConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Default)]
pub struct Models<'a> {
    pub rel: Option<&'a RelModel>,
    pub ext: Option<&'a ExtModel>,
    pub abs: Option<&'a AbsModel>,
    pub table: Option<&'a EmbeddingTable>,
}

/// One candidate's ranks and scores under each signal (1-based ranks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateDebug {
    pub doc_id: String,
    pub ranks: BTreeMap<String, usize>,
    pub scores: BTreeMap<String, f64>,
    pub pseudo_query: Vec<String>,
    pub fused_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicDebug {
    pub topic_id: String,
    pub query_tokens: Vec<String>,
    pub candidates: Vec<CandidateDebug>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicResult {
    pub ranked: RankedList,
    pub debug: TopicDebug,
}

/// First-stage candidates for a topic, optionally expanded with MLT terms.
pub fn first_stage(
    index: &InvertedIndex,
    topic: &PatientCase,
    cfg: &RerankConfig,
) -> Result<RankedList> {
    let base = index.edismax_search(topic, cfg.first_stage_k)?;
    if !cfg.use_mlt {
        return Ok(base);
    }
    let mut terms = edismax_terms(topic);
    terms.extend(index.mlt_expand(&base, &terms, cfg.mlt_terms, cfg.mlt_docs));
    index.search_terms(&topic.topic_id, &terms, cfg.first_stage_k)
}

/// Pseudo-query of one document from ABS summaries and EXT keywords.
pub fn pseudo_query_for(
    doc: &Document,
    models: &Models<'_>,
    cfg: &RerankConfig,
) -> Result<PseudoQuery> {
    let facets = match (cfg.use_abs, models.abs) {
        (true, Some(abs)) => abs.generate(doc, &cfg.facets, &cfg.beam)?,
        _ => Vec::new(),
    };
    let keywords = match (cfg.use_ext, models.ext) {
        (true, Some(ext)) => ext.keywords(doc, cfg.keyword_threshold)?,
        _ => Vec::new(),
    };
    Ok(build_pseudo_query(&doc.id, &facets, &keywords))
}

fn needs_pseudo(cfg: &RerankConfig) -> bool {
    cfg.use_abs
}

fn check_models(models: &Models<'_>, cfg: &RerankConfig) -> Result<()> {
    if cfg.use_rel && models.rel.is_none() {
        return Err(Error::Invalid(
            "REL fusion requested without a REL checkpoint".into(),
        ));
    }
    if cfg.use_abs && models.abs.is_none() && !(cfg.use_ext && models.ext.is_some()) {
        return Err(Error::Invalid(
            "pseudo-query fusion requested without ABS or EXT checkpoints".into(),
        ));
    }
    Ok(())
}

fn ranks_of(list: &RankedList) -> HashMap<String, (usize, f64)> {
    list.entries
        .iter()
        .enumerate()
        .map(|(i, (d, s))| (d.clone(), (i + 1, *s)))
        .collect()
}

/// Rerank one topic's candidates given precomputed pseudo-queries.
pub fn rerank_with(
    topic: &PatientCase,
    bm25: RankedList,
    docs: &HashMap<&str, &Document>,
    pseudo: &HashMap<String, PseudoQuery>,
    models: &Models<'_>,
    cfg: &RerankConfig,
) -> Result<TopicResult> {
    let query_tokens = topic.query_tokens();
    let mut lists: Vec<(&str, RankedList)> = Vec::new();
    if bm25.is_empty() {
        log::warn!(
            "topic {}: first stage returned no candidates",
            topic.topic_id
        );
    }
    // Documents are only needed when a model reads them.
    let candidates: Vec<&Document> = if cfg.use_rel || needs_pseudo(cfg) {
        bm25.doc_ids()
            .map(|d| {
                docs.get(d)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("candidate {d} missing from corpus")))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    if cfg.use_rel && !candidates.is_empty() {
        let rel = models
            .rel
            .ok_or_else(|| Error::Invalid("REL model missing".into()))?;
        lists.push((
            "rel",
            crate::models::rel::rel_rank(topic, &candidates, rel)?,
        ));
    }
    if needs_pseudo(cfg) && !candidates.is_empty() {
        let pq = |d: &Document| {
            pseudo
                .get(&d.id)
                .map(|p| p.tokens.as_slice())
                .unwrap_or(&[])
        };
        let rouge = candidates
            .iter()
            .map(|d| (d.id.clone(), rouge1_recall(&query_tokens, pq(d))))
            .collect();
        lists.push((
            "rouge",
            RankedList::from_scores(topic.topic_id.clone(), rouge),
        ));
        match models.table {
            Some(table) => {
                let cos = candidates
                    .iter()
                    .map(|d| (d.id.clone(), s_cos(&query_tokens, pq(d), table)))
                    .collect();
                lists.push((
                    "s_cos",
                    RankedList::from_scores(topic.topic_id.clone(), cos),
                ));
            }
            None => log::warn!("no embedding table; s_cos ranking skipped"),
        }
    }
    let ranked = if lists.is_empty() {
        bm25.clone()
    } else {
        let mut all: Vec<&RankedList> = vec![&bm25];
        all.extend(lists.iter().map(|(_, l)| l));
        rrf_fuse(&all, cfg.rrf_k)?
    };
    let mut signals = vec![("bm25", ranks_of(&bm25))];
    signals.extend(lists.iter().map(|(n, l)| (*n, ranks_of(l))));
    let fused = ranks_of(&ranked);
    let candidates = ranked
        .doc_ids()
        .map(|d| {
            let mut ranks = BTreeMap::new();
            let mut scores = BTreeMap::new();
            for (name, table) in &signals {
                if let Some((r, s)) = table.get(d) {
                    ranks.insert(name.to_string(), *r);
                    scores.insert(name.to_string(), *s);
                }
            }
            CandidateDebug {
                doc_id: d.to_string(),
                ranks,
                scores,
                pseudo_query: pseudo.get(d).map(|p| p.tokens.clone()).unwrap_or_default(),
                fused_rank: fused[d].0,
            }
        })
        .collect();
    Ok(TopicResult {
        ranked,
        debug: TopicDebug {
            topic_id: topic.topic_id.clone(),
            query_tokens,
            candidates,
        },
    })
}

/// Full pipeline over topics: first stage, pseudo-queries for every
/// distinct candidate (computed once), per-topic fusion.
pub fn rerank_topics(
    topics: &[PatientCase],
    index: &InvertedIndex,
    corpus: &[Document],
    models: &Models<'_>,
    cfg: &RerankConfig,
) -> Result<Vec<TopicResult>> {
    check_models(models, cfg)?;
    let docs: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let firsts: Vec<RankedList> = topics
        .iter()
        .map(|t| first_stage(index, t, cfg))
        .collect::<Result<_>>()?;
    let mut pseudo: HashMap<String, PseudoQuery> = HashMap::new();
    if needs_pseudo(cfg) {
        let ids: BTreeSet<&str> = firsts.iter().flat_map(|l| l.doc_ids()).collect();
        let wanted: Vec<&Document> = ids
            .iter()
            .map(|d| {
                docs.get(d)
                    .copied()
                    .ok_or_else(|| Error::Invalid(format!("candidate {d} missing from corpus")))
            })
            .collect::<Result<_>>()?;
        log::info!("generating pseudo-queries for {} documents", wanted.len());
        let built: Vec<Result<PseudoQuery>> = wanted
            .par_iter()
            .map(|d| pseudo_query_for(d, models, cfg))
            .collect();
        for p in built {
            let p = p?;
            pseudo.insert(p.doc_id.clone(), p);
        }
    }
    topics
        .par_iter()
        .zip(firsts)
        .map(|(t, bm25)| rerank_with(t, bm25, &docs, &pseudo, models, cfg))
        .collect()
}

/// One JSON file per topic under `dir`.
pub fn write_debug(dir: impl AsRef<Path>, results: &[TopicResult]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in results {
        let path = dir.join(format!("{}.json", r.debug.topic_id));
        let text = serde_json::to_string_pretty(&r.debug)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
