//! Two-field inverted index with BM25 scoring, a disjunction-max query over
//! the fields, more-like-this expansion, and a binary snapshot format.
//!
//! Snapshot layout (little endian):
//!
//! ```text
//! magic    b"FRIDX\0\0\0"
//! version  u32 (= 1)
//! k1, b    f64, f64
//! n_docs   u64, then per doc: u32 byte length + UTF-8 id
//! lengths  per field (title, abstract): n_docs × u32
//! n_terms  u64, then per term: u32 byte length + UTF-8 term
//! postings per field, per term: u32 count, then count × (u32 doc, u32 tf)
//! ```

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, PatientCase};
use crate::error::{Error, Result};
use crate::text::index_tokens;

const MAGIC: &[u8; 8] = b"FRIDX\0\0\0";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    Title = 0,
    Abstract = 1,
}

impl Field {
    pub const ALL: [Field; 2] = [Field::Title, Field::Abstract];

    fn text(self, doc: &Document) -> &str {
        match self {
            Field::Title => &doc.title,
            Field::Abstract => &doc.abstract_text,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Ordered `(doc id, score)` pairs for one topic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub topic_id: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    /// Sort by score descending, then doc id ascending.
    pub fn from_scores(topic_id: impl Into<String>, mut entries: Vec<(String, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self {
            topic_id: topic_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(d, _)| d.as_str())
    }

    /// 1-based rank of every document.
    pub fn ranks(&self) -> HashMap<&str, usize> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (d, _))| (d.as_str(), i + 1))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct FieldIndex {
    postings: Vec<Vec<(u32, u32)>>,
    lengths: Vec<u32>,
    avg_len: f64,
}

impl FieldIndex {
    fn finish(postings: Vec<Vec<(u32, u32)>>, lengths: Vec<u32>) -> Self {
        let avg_len = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
        };
        Self {
            postings,
            lengths,
            avg_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedIndex {
    pub params: Bm25Params,
    doc_ids: Vec<String>,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    fields: [FieldIndex; 2],
}

impl InvertedIndex {
    pub fn build(corpus: &[Document]) -> Result<Self> {
        Self::build_with(corpus, Bm25Params::default())
    }

    pub fn build_with(corpus: &[Document], params: Bm25Params) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Invalid("cannot index an empty corpus".into()));
        }
        let mut terms: Vec<String> = Vec::new();
        let mut term_ids: HashMap<String, u32> = HashMap::new();
        let mut postings: [Vec<Vec<(u32, u32)>>; 2] = [Vec::new(), Vec::new()];
        let mut lengths: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
        for (d, doc) in corpus.iter().enumerate() {
            for field in Field::ALL {
                let toks = index_tokens(field.text(doc));
                lengths[field as usize].push(toks.len() as u32);
                let mut tf: HashMap<u32, u32> = HashMap::new();
                for t in toks {
                    let id = *term_ids.entry(t.clone()).or_insert_with(|| {
                        terms.push(t);
                        for p in postings.iter_mut() {
                            p.push(Vec::new());
                        }
                        (terms.len() - 1) as u32
                    });
                    *tf.entry(id).or_default() += 1;
                }
                for (id, c) in tf {
                    postings[field as usize][id as usize].push((d as u32, c));
                }
            }
        }
        let [pt, pa] = postings;
        let [lt, la] = lengths;
        Ok(Self {
            params,
            doc_ids: corpus.iter().map(|d| d.id.clone()).collect(),
            terms,
            term_ids,
            fields: [FieldIndex::finish(pt, lt), FieldIndex::finish(pa, la)],
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, ord: usize) -> &str {
        &self.doc_ids[ord]
    }

    pub fn doc_ordinal(&self, id: &str) -> Option<usize> {
        self.doc_ids.iter().position(|d| d == id)
    }

    pub fn avg_len(&self, field: Field) -> f64 {
        self.fields[field as usize].avg_len
    }

    pub fn doc_len(&self, field: Field, doc: usize) -> u32 {
        self.fields[field as usize].lengths[doc]
    }

    /// Postings of `term` in `field`, sorted by doc ordinal.
    pub fn postings(&self, field: Field, term: &str) -> &[(u32, u32)] {
        match self.term_ids.get(term) {
            Some(&id) => &self.fields[field as usize].postings[id as usize],
            None => &[],
        }
    }

    pub fn df(&self, field: Field, term: &str) -> usize {
        self.postings(field, term).len()
    }

    pub fn tf(&self, field: Field, term: &str, doc: usize) -> u32 {
        let p = self.postings(field, term);
        match p.binary_search_by_key(&(doc as u32), |e| e.0) {
            Ok(i) => p[i].1,
            Err(_) => 0,
        }
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.num_docs() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_score(&self, idf: f64, tf: u32, len: u32, avg_len: f64) -> f64 {
        if tf == 0 {
            return 0.0;
        }
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if avg_len > 0.0 {
            len as f64 / avg_len
        } else {
            1.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    /// BM25 contribution of one term in one field of one document.
    pub fn bm25_score(&self, field: Field, term: &str, doc: usize) -> f64 {
        let tf = self.tf(field, term, doc);
        let idf = self.idf(self.df(field, term));
        self.term_score(idf, tf, self.doc_len(field, doc), self.avg_len(field))
    }

    /// Sum over the distinct query terms of the best per-field BM25 score.
    /// Only documents matching at least one term are returned.
    pub fn search_terms(&self, topic_id: &str, terms: &[String], k: usize) -> Result<RankedList> {
        if terms.is_empty() {
            return Err(Error::Invalid(format!("topic {topic_id}: empty query")));
        }
        let mut seen = HashSet::new();
        let mut scores = vec![0.0f64; self.num_docs()];
        let mut best = vec![0.0f64; self.num_docs()];
        let mut touched: Vec<u32> = Vec::new();
        for term in terms.iter().filter(|t| seen.insert(t.as_str())) {
            for field in Field::ALL {
                let f = &self.fields[field as usize];
                let post = self.postings(field, term);
                let idf = self.idf(post.len());
                for &(d, tf) in post {
                    let s = self.term_score(idf, tf, f.lengths[d as usize], f.avg_len);
                    if best[d as usize] == 0.0 {
                        touched.push(d);
                    }
                    if s > best[d as usize] {
                        best[d as usize] = s;
                    }
                }
            }
            for &d in &touched {
                scores[d as usize] += best[d as usize];
                best[d as usize] = 0.0;
            }
            touched.clear();
        }
        let entries: Vec<(String, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > 0.0)
            .map(|(d, s)| (self.doc_ids[d].clone(), *s))
            .collect();
        let mut list = RankedList::from_scores(topic_id, entries);
        list.truncate(k);
        Ok(list)
    }

    /// Top-`k` first-stage candidates for a patient case.
    pub fn edismax_search(&self, case: &PatientCase, k: usize) -> Result<RankedList> {
        self.search_terms(&case.topic_id, &edismax_terms(case), k)
    }

    fn doc_terms(&self) -> Vec<Vec<(u32, u32)>> {
        let mut fwd: Vec<Vec<(u32, u32)>> = vec![Vec::new(); self.num_docs()];
        for f in &self.fields {
            for (t, post) in f.postings.iter().enumerate() {
                for &(d, tf) in post {
                    fwd[d as usize].push((t as u32, tf));
                }
            }
        }
        fwd
    }

    /// The `n_terms` highest TF-IDF terms over the top `n_docs` seed results,
    /// with tf summed over fields and seed documents and document frequency
    /// counted over either field. Query terms are excluded.
    pub fn mlt_expand(
        &self,
        seed: &RankedList,
        query_terms: &[String],
        n_terms: usize,
        n_docs: usize,
    ) -> Vec<String> {
        if n_terms == 0 {
            return Vec::new();
        }
        let exclude: HashSet<&str> = query_terms.iter().map(String::as_str).collect();
        let fwd = self.doc_terms();
        let mut tf: HashMap<u32, u64> = HashMap::new();
        for id in seed.doc_ids().take(n_docs) {
            let Some(d) = self.doc_ordinal(id) else {
                continue;
            };
            for &(t, c) in &fwd[d] {
                *tf.entry(t).or_default() += c as u64;
            }
        }
        let mut scored: Vec<(&str, f64)> = tf
            .into_iter()
            .filter(|(t, _)| !exclude.contains(self.terms[*t as usize].as_str()))
            .map(|(t, c)| {
                let mut docs: HashSet<u32> = HashSet::new();
                for f in &self.fields {
                    docs.extend(f.postings[t as usize].iter().map(|e| e.0));
                }
                (
                    self.terms[t as usize].as_str(),
                    c as f64 * self.idf(docs.len()),
                )
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        scored
            .into_iter()
            .take(n_terms)
            .map(|(t, _)| t.to_string())
            .collect()
    }

    pub fn write_snapshot(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.params.k1.to_le_bytes())?;
        w.write_all(&self.params.b.to_le_bytes())?;
        w.write_all(&(self.doc_ids.len() as u64).to_le_bytes())?;
        for id in &self.doc_ids {
            write_str(w, id)?;
        }
        for f in &self.fields {
            for l in &f.lengths {
                w.write_all(&l.to_le_bytes())?;
            }
        }
        w.write_all(&(self.terms.len() as u64).to_le_bytes())?;
        for t in &self.terms {
            write_str(w, t)?;
        }
        for f in &self.fields {
            for post in &f.postings {
                w.write_all(&(post.len() as u32).to_le_bytes())?;
                for &(d, tf) in post {
                    w.write_all(&d.to_le_bytes())?;
                    w.write_all(&tf.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("index snapshot: {m}"));
        let io = |e: std::io::Error| Error::Invalid(format!("index snapshot: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(r).map_err(io)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let k1 = read_f64(r).map_err(io)?;
        let b = read_f64(r).map_err(io)?;
        let n = read_u64(r).map_err(io)? as usize;
        let doc_ids = (0..n)
            .map(|_| read_str(r))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        let mut lengths = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for l in lengths.iter_mut() {
            for _ in 0..n {
                l.push(read_u32(r).map_err(io)?);
            }
        }
        let nt = read_u64(r).map_err(io)? as usize;
        let terms = (0..nt)
            .map(|_| read_str(r))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(io)?;
        let mut postings: [Vec<Vec<(u32, u32)>>; 2] =
            [Vec::with_capacity(nt), Vec::with_capacity(nt)];
        for p in postings.iter_mut() {
            for _ in 0..nt {
                let c = read_u32(r).map_err(io)? as usize;
                let mut post = Vec::with_capacity(c);
                for _ in 0..c {
                    let d = read_u32(r).map_err(io)?;
                    let tf = read_u32(r).map_err(io)?;
                    if d as usize >= n {
                        return Err(bad("posting doc out of range"));
                    }
                    post.push((d, tf));
                }
                p.push(post);
            }
        }
        let term_ids = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let [pt, pa] = postings;
        let [lt, la] = lengths;
        Ok(Self {
            params: Bm25Params { k1, b },
            doc_ids,
            terms,
            term_ids,
            fields: [FieldIndex::finish(pt, lt), FieldIndex::finish(pa, la)],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_snapshot(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r =
            std::io::BufReader::new(std::fs::File::open(path).map_err(|e| Error::io(path, e))?);
        Self::read_snapshot(&mut r)
    }
}

/// Distinct index tokens of the disease, gene and demographics facets.
pub fn edismax_terms(case: &PatientCase) -> Vec<String> {
    let mut seen = HashSet::new();
    [&case.disease, &case.gene, &case.demographics]
        .into_iter()
        .flat_map(|s| index_tokens(s))
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let n = read_u32(r)? as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, title: &str, abs: &str) -> Document {
        Document {
            id: id.into(),
            title: title.into(),
            abstract_text: abs.into(),
            mesh_codes: vec![],
            keywords: vec![],
        }
    }

    fn case(disease: &str) -> PatientCase {
        PatientCase {
            topic_id: "t".into(),
            disease: disease.into(),
            gene: String::new(),
            demographics: String::new(),
            mesh_terms: vec![],
            keywords: vec![],
        }
    }

    #[test]
    fn postings_count_tf() {
        let idx = InvertedIndex::build(&[doc("1", "a b a", "c")]).unwrap();
        assert_eq!(idx.postings(Field::Title, "a"), &[(0, 2)]);
        assert!(idx.postings(Field::Title, "zzz").is_empty());
        assert_eq!(idx.num_docs(), 1);
        assert!(InvertedIndex::build(&[]).is_err());
    }

    #[test]
    fn bm25_hand_value() {
        // N=2, df=1, tf=1, len=avglen: idf·(k1+1)/(1+k1) = idf = ln(1 + 1.5/1.5) = ln 2.
        let idx = InvertedIndex::build(&[doc("1", "x", "q"), doc("2", "y", "q")]).unwrap();
        let s = idx.bm25_score(Field::Title, "x", 0);
        assert!((s - 2f64.ln()).abs() < 1e-12);
        assert_eq!(idx.bm25_score(Field::Title, "x", 1), 0.0);
    }

    #[test]
    fn bm25_increases_with_tf() {
        let idx = InvertedIndex::build(&[
            doc("1", "x y y y", ""),
            doc("2", "x x y y", ""),
            doc("3", "z z z z", ""),
        ])
        .unwrap();
        assert!(idx.bm25_score(Field::Title, "x", 1) > idx.bm25_score(Field::Title, "x", 0));
    }

    #[test]
    fn search_returns_matches_in_order() {
        let docs = vec![
            doc("a", "melanoma", "x y"),
            doc("b", "x", "melanoma y z w v"),
            doc("c", "y", "z"),
        ];
        let idx = InvertedIndex::build(&docs).unwrap();
        let r = idx.edismax_search(&case("Melanoma"), 500).unwrap();
        assert_eq!(r.doc_ids().collect::<Vec<_>>(), vec!["a", "b"]);
        assert!(idx.edismax_search(&case("!!"), 10).is_err());
    }

    #[test]
    fn mlt_prefers_frequent_terms() {
        let idx = InvertedIndex::build(&[doc("1", "x x y", ""), doc("2", "z", "")]).unwrap();
        let seed = RankedList {
            topic_id: "t".into(),
            entries: vec![("1".into(), 1.0)],
        };
        assert_eq!(idx.mlt_expand(&seed, &["y".into()], 5, 1), vec!["x"]);
        assert!(idx.mlt_expand(&seed, &[], 0, 1).is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let docs = vec![
            doc("a", "melanoma braf", "x y"),
            doc("b", "x", "melanoma y z"),
        ];
        let idx = InvertedIndex::build(&docs).unwrap();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        let back = InvertedIndex::read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        buf[0] = b'X';
        assert!(InvertedIndex::read_snapshot(&mut buf.as_slice()).is_err());
    }
}
