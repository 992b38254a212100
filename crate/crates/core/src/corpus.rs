//! Documents, patient cases, relevance judgments and run files, plus the
//! construction of training examples for the three models.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::RankedList;
use crate::text::{index_tokens, split_sentences, word_tokens};
use crate::wordpiece::{BOS_BASE, EOS_BASE};

pub const ENTITY_PREFIX: &str = "emesh_";
pub const MAX_TARGET_LEN: usize = 50;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub mesh_codes: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl Document {
    /// Title as the first sentence, then the abstract split into sentences.
    pub fn sentences(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.title.trim().is_empty() {
            out.push(self.title.trim().to_string());
        }
        out.extend(split_sentences(&self.abstract_text));
        out
    }

    pub fn text(&self) -> String {
        format!("{} {}", self.title, self.abstract_text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientCase {
    pub topic_id: String,
    pub disease: String,
    pub gene: String,
    #[serde(default)]
    pub demographics: String,
    #[serde(default)]
    pub mesh_terms: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
}

impl PatientCase {
    /// The query sentences fed to the matching model. MeSH terms are left out.
    pub fn query_sentences(&self) -> Vec<String> {
        [&self.disease, &self.gene, &self.demographics]
            .into_iter()
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().to_string())
            .collect()
    }

    /// Distinct word tokens of the disease, gene and demographics facets.
    pub fn query_tokens(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in [&self.disease, &self.gene, &self.demographics] {
            for t in word_tokens(s) {
                if crate::text::is_word_token(&t) && seen.insert(t.clone()) {
                    out.push(t);
                }
            }
        }
        out
    }
}

/// topic id → doc id → grade.
pub type Qrels = BTreeMap<String, BTreeMap<String, u8>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FacetKind {
    Disease = 0,
    GeneticVariation = 1,
    Demographics = 2,
    MeshTerms = 3,
    Keywords = 4,
}

impl FacetKind {
    pub const ALL: [FacetKind; 5] = [
        FacetKind::Disease,
        FacetKind::GeneticVariation,
        FacetKind::Demographics,
        FacetKind::MeshTerms,
        FacetKind::Keywords,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn signal(self) -> FacetSignal {
        FacetSignal {
            facet: self,
            bos_id: BOS_BASE + self.index(),
            eos_id: EOS_BASE + self.index(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FacetKind::Disease => "disease",
            FacetKind::GeneticVariation => "gene",
            FacetKind::Demographics => "demographics",
            FacetKind::MeshTerms => "mesh",
            FacetKind::Keywords => "keywords",
        }
    }
}

impl fmt::Display for FacetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FacetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(i) = s.parse::<usize>() {
            return Self::from_index(i).ok_or_else(|| Error::Unknown {
                kind: "facet",
                value: s.into(),
            });
        }
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "facet",
                value: s.into(),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FacetSignal {
    pub facet: FacetKind,
    pub bos_id: usize,
    pub eos_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelExample {
    pub doc: Document,
    pub query_sentences: Vec<String>,
    pub label: bool,
}

/// Document words (index tokenizer) with their sentence number and whether
/// each occurs in the paired query.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtExample {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub sentence_ids: Vec<usize>,
    pub labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbsExample {
    pub doc: Document,
    pub facet: FacetKind,
    pub target_tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Rel,
    Ext,
    Abs,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rel" => Ok(ModelKind::Rel),
            "ext" => Ok(ModelKind::Ext),
            "abs" => Ok(ModelKind::Abs),
            _ => Err(Error::Unknown {
                kind: "model kind",
                value: s.into(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Examples {
    Rel(Vec<RelExample>),
    Ext(Vec<ExtExample>),
    Abs(Vec<AbsExample>),
}

impl Examples {
    pub fn len(&self) -> usize {
        match self {
            Examples::Rel(v) => v.len(),
            Examples::Ext(v) => v.len(),
            Examples::Abs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Examples plus the number of judged doc ids missing from the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSet {
    pub examples: Examples,
    pub skipped: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, reader: impl Read) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_corpus(path: &Path, reader: impl Read) -> Result<Vec<Document>> {
    let docs: Vec<Document> = read_jsonl(path, reader)?;
    let mut seen = HashSet::new();
    for d in &docs {
        if d.id.is_empty() {
            return Err(Error::Invalid("document with empty id".into()));
        }
        if !seen.insert(d.id.as_str()) {
            return Err(Error::DuplicateId(d.id.clone()));
        }
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    parse_corpus(path, open(path)?)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    write_jsonl(path.as_ref(), docs)
}

pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<PatientCase>> {
    let path = path.as_ref();
    read_jsonl(path, open(path)?)
}

pub fn write_topics(path: impl AsRef<Path>, topics: &[PatientCase]) -> Result<()> {
    write_jsonl(path.as_ref(), topics)
}

pub fn parse_qrels(path: &Path, reader: impl Read) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 4 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 4 fields, found {}", f.len()),
            ));
        }
        let grade: u8 =
            f[3].parse().ok().filter(|g| *g <= 2).ok_or_else(|| {
                Error::parse(path, i + 1, format!("grade {:?} not in 0..=2", f[3]))
            })?;
        q.entry(f[0].to_string())
            .or_default()
            .insert(f[2].to_string(), grade);
    }
    Ok(q)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels(path, open(path)?)
}

pub fn write_qrels(path: impl AsRef<Path>, qrels: &Qrels) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for (topic, docs) in qrels {
        for (doc, grade) in docs {
            writeln!(w, "{topic} 0 {doc} {grade}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// TREC run lines: `topic Q0 doc rank score tag`.
pub fn write_run(w: &mut impl Write, lists: &[RankedList], tag: &str) -> std::io::Result<()> {
    for list in lists {
        for (rank, (doc, score)) in list.entries.iter().enumerate() {
            writeln!(
                w,
                "{} Q0 {} {} {:.6} {}",
                list.topic_id,
                doc,
                rank + 1,
                score,
                tag
            )?;
        }
    }
    Ok(())
}

pub fn save_run(path: impl AsRef<Path>, lists: &[RankedList], tag: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_run(&mut w, lists, tag)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// A parsed run file: ranked lists in order of first appearance, and the tag
/// of the first line.
#[derive(Clone, Debug, PartialEq)]
pub struct Run {
    pub tag: String,
    pub lists: Vec<RankedList>,
}

pub fn parse_run(path: &Path, reader: impl Read) -> Result<Run> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(usize, String, f64)>> = HashMap::new();
    let mut tag = String::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        if f.len() != 6 {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected 6 fields, found {}", f.len()),
            ));
        }
        let rank: usize = f[3]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, "bad rank"))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, "bad score"))?;
        if tag.is_empty() {
            tag = f[5].to_string();
        }
        if !rows.contains_key(f[0]) {
            order.push(f[0].to_string());
        }
        rows.entry(f[0].to_string())
            .or_default()
            .push((rank, f[2].to_string(), score));
    }
    let lists = order
        .into_iter()
        .map(|topic| {
            let mut r = rows.remove(&topic).unwrap_or_default();
            r.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            RankedList {
                topic_id: topic,
                entries: r.into_iter().map(|(_, d, s)| (d, s)).collect(),
            }
        })
        .collect();
    Ok(Run { tag, lists })
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    parse_run(path, open(path)?)
}

static MESH_NAMES: OnceLock<HashMap<String, String>> = OnceLock::new();

/// Bundled MeSH code → preferred name table.
pub fn mesh_names() -> &'static HashMap<String, String> {
    MESH_NAMES.get_or_init(|| {
        include_str!("../data/mesh_names.tsv")
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .map(|(c, n)| (c.trim().to_string(), n.trim().to_string()))
            .collect()
    })
}

/// Preferred name of a MeSH code, or the code itself when unknown.
pub fn mesh_preferred_name(code: &str) -> String {
    mesh_names()
        .get(code)
        .cloned()
        .unwrap_or_else(|| code.to_string())
}

/// Entity token for a MeSH code, e.g. `D018281` → `emesh_d018281`.
pub fn entity_token(code: &str) -> String {
    format!("{ENTITY_PREFIX}{}", code.to_lowercase())
}

/// Target words for one facet of a (topic, document) pair.
pub fn facet_target(facet: FacetKind, topic: &PatientCase, doc: &Document) -> Vec<String> {
    match facet {
        FacetKind::Disease => word_tokens(&topic.disease),
        FacetKind::GeneticVariation => word_tokens(&topic.gene),
        FacetKind::Demographics => word_tokens(&topic.demographics),
        FacetKind::MeshTerms => topic.mesh_terms.iter().map(|c| entity_token(c)).collect(),
        FacetKind::Keywords => {
            let phrases: Vec<String> = if doc.keywords.is_empty() {
                doc.mesh_codes
                    .iter()
                    .map(|c| mesh_preferred_name(c))
                    .collect()
            } else {
                doc.keywords.clone()
            };
            phrases.iter().flat_map(|p| word_tokens(p)).collect()
        }
    }
}

/// Case-folded index tokens appearing anywhere in the topic's facets.
pub fn query_vocabulary(topic: &PatientCase) -> HashSet<String> {
    let mut texts = vec![
        topic.disease.as_str(),
        topic.gene.as_str(),
        topic.demographics.as_str(),
    ];
    texts.extend(topic.keywords.iter().map(String::as_str));
    texts.into_iter().flat_map(index_tokens).collect()
}

/// Words of a document (index tokenizer) with their sentence number.
pub fn doc_words(doc: &Document) -> (Vec<String>, Vec<usize>) {
    let mut words = Vec::new();
    let mut sents = Vec::new();
    for (s, sentence) in doc.sentences().iter().enumerate() {
        for w in index_tokens(sentence) {
            words.push(w);
            sents.push(s);
        }
    }
    (words, sents)
}

pub fn ext_example(topic: &PatientCase, doc: &Document) -> ExtExample {
    let vocab = query_vocabulary(topic);
    let (tokens, sentence_ids) = doc_words(doc);
    let labels = tokens.iter().map(|t| vocab.contains(t)).collect();
    ExtExample {
        doc_id: doc.id.clone(),
        tokens,
        sentence_ids,
        labels,
    }
}

/// Build examples for one model from judged (topic, document) pairs.
/// Judged ids absent from the corpus are skipped and counted.
pub fn build_training_examples(
    topics: &[PatientCase],
    qrels: &Qrels,
    corpus: &[Document],
    kind: ModelKind,
) -> Result<ExampleSet> {
    let by_id: HashMap<&str, &Document> = corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut skipped = 0;
    let mut rel = Vec::new();
    let mut ext = Vec::new();
    let mut abs = Vec::new();
    for topic in topics {
        let Some(judged) = qrels.get(&topic.topic_id) else {
            continue;
        };
        for (doc_id, &grade) in judged {
            let Some(doc) = by_id.get(doc_id.as_str()) else {
                skipped += 1;
                continue;
            };
            let relevant = grade >= 1;
            match kind {
                ModelKind::Rel => rel.push(RelExample {
                    doc: (*doc).clone(),
                    query_sentences: topic.query_sentences(),
                    label: relevant,
                }),
                ModelKind::Ext if relevant => ext.push(ext_example(topic, doc)),
                ModelKind::Abs if relevant => {
                    for facet in FacetKind::ALL {
                        let target = facet_target(facet, topic, doc);
                        if target.is_empty() {
                            continue;
                        }
                        if target.len() > MAX_TARGET_LEN {
                            return Err(Error::Invalid(format!(
                                "{} target for topic {} doc {} has {} tokens (max {MAX_TARGET_LEN})",
                                facet,
                                topic.topic_id,
                                doc_id,
                                target.len()
                            )));
                        }
                        abs.push(AbsExample {
                            doc: (*doc).clone(),
                            facet,
                            target_tokens: target,
                        });
                    }
                }
                _ => {}
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} judged documents not found in the corpus");
    }
    let examples = match kind {
        ModelKind::Rel => Examples::Rel(rel),
        ModelKind::Ext => Examples::Ext(ext),
        ModelKind::Abs => Examples::Abs(abs),
    };
    Ok(ExampleSet { examples, skipped })
}
