//! Joint word and entity-code embeddings: a skip-gram trainer with negative
//! sampling and hashed character n-grams, the text vector format, and the
//! cosine-based query similarity.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{entity_token, mesh_names, Document, ENTITY_PREFIX};
use crate::error::{Error, Result};
use crate::text::word_tokens;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_count: usize,
    pub seed: u64,
    pub entity_prefix: String,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            window: 5,
            negatives: 5,
            min_n: 3,
            max_n: 6,
            buckets: 20_000,
            epochs: 5,
            lr: 0.05,
            min_count: 1,
            seed: 1,
            entity_prefix: ENTITY_PREFIX.to_string(),
        }
    }
}

/// Hashed character n-gram vectors used to compose vectors for words.
#[derive(Clone, Debug, PartialEq)]
pub struct Subwords {
    pub min_n: usize,
    pub max_n: usize,
    pub buckets: usize,
    pub vectors: Vec<f32>,
}

impl Subwords {
    fn ids(&self, word: &str) -> Vec<usize> {
        ngram_buckets(word, self.min_n, self.max_n, self.buckets)
    }
}

fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for b in s.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Bucket ids of the character n-grams of `<word>`.
pub fn ngram_buckets(word: &str, min_n: usize, max_n: usize, buckets: usize) -> Vec<usize> {
    if buckets == 0 {
        return Vec::new();
    }
    let chars: Vec<char> = format!("<{word}>").chars().collect();
    let mut out = Vec::new();
    for n in min_n..=max_n {
        if n > chars.len() {
            break;
        }
        for start in 0..=chars.len() - n {
            if n == chars.len() {
                continue;
            }
            let g: String = chars[start..start + n].iter().collect();
            out.push(fnv1a(&g) as usize % buckets);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f32>,
    pub entity_prefix: String,
    pub subwords: Option<Subwords>,
}

impl EmbeddingTable {
    pub fn new(
        tokens: Vec<String>,
        dim: usize,
        vectors: Vec<f32>,
        entity_prefix: &str,
    ) -> Result<Self> {
        if dim == 0 || vectors.len() != tokens.len() * dim {
            return Err(Error::Invalid(format!(
                "{} tokens do not fit {} values of dim {dim}",
                tokens.len(),
                vectors.len()
            )));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            tokens,
            index,
            dim,
            vectors,
            entity_prefix: entity_prefix.to_string(),
            subwords: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_entity(&self, token: &str) -> bool {
        token.starts_with(&self.entity_prefix)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Stored vector, or the mean of the token's n-gram vectors when it is
    /// out of vocabulary and subwords are available.
    pub fn vector(&self, token: &str) -> Option<Vec<f32>> {
        if let Some(&i) = self.index.get(token) {
            return Some(self.row(i).to_vec());
        }
        let sw = self.subwords.as_ref()?;
        if self.is_entity(token) {
            return None;
        }
        let ids = sw.ids(token);
        if ids.is_empty() {
            return None;
        }
        let mut v = vec![0f32; self.dim];
        for b in &ids {
            for (x, y) in v
                .iter_mut()
                .zip(&sw.vectors[b * self.dim..(b + 1) * self.dim])
            {
                *x += y;
            }
        }
        let n = ids.len() as f32;
        v.iter_mut().for_each(|x| *x /= n);
        Some(v)
    }

    /// The `k` tokens with highest cosine to `token`, excluding itself.
    pub fn nearest(&self, token: &str, k: usize) -> Vec<(String, f64)> {
        let Some(v) = self.vector(token) else {
            return Vec::new();
        };
        let mut scored: Vec<(String, f64)> = (0..self.len())
            .filter(|&i| self.tokens[i] != token)
            .map(|i| (self.tokens[i].clone(), cosine(&v, self.row(i))))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    fn subwords_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".subwords");
        PathBuf::from(p)
    }

    /// Write `count dim` then `token v1 .. vD` lines with 9 significant
    /// digits. Subword vectors, when present, go to `<path>.subwords`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let wrap = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(wrap)?);
        writeln!(w, "{} {}", self.len(), self.dim).map_err(wrap)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write_row(&mut w, t, self.row(i)).map_err(wrap)?;
        }
        w.flush().map_err(wrap)?;
        if let Some(sw) = &self.subwords {
            let sp = Self::subwords_path(path);
            let wrap = |e| Error::io(&sp, e);
            let mut w = BufWriter::new(File::create(&sp).map_err(wrap)?);
            writeln!(w, "{} {} {} {}", sw.buckets, self.dim, sw.min_n, sw.max_n).map_err(wrap)?;
            for b in 0..sw.buckets {
                write_row(
                    &mut w,
                    &b.to_string(),
                    &sw.vectors[b * self.dim..(b + 1) * self.dim],
                )
                .map_err(wrap)?;
            }
            w.flush().map_err(wrap)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (tokens, dim, vectors) = read_vectors(path)?;
        let mut table = Self::new(tokens, dim, vectors, ENTITY_PREFIX)?;
        let sp = Self::subwords_path(path);
        if sp.exists() {
            let f = File::open(&sp).map_err(|e| Error::io(&sp, e))?;
            let mut lines = BufReader::new(f).lines();
            let header = lines
                .next()
                .transpose()
                .map_err(|e| Error::io(&sp, e))?
                .unwrap_or_default();
            let h: Vec<usize> = header
                .split_whitespace()
                .filter_map(|x| x.parse().ok())
                .collect();
            if h.len() != 4 || h[1] != dim {
                return Err(Error::parse(
                    &sp,
                    1,
                    "expected header `buckets dim min_n max_n`",
                ));
            }
            let mut vectors = Vec::with_capacity(h[0] * dim);
            for (i, line) in lines.enumerate() {
                let line = line.map_err(|e| Error::io(&sp, e))?;
                let (_, v) = parse_row(&line, dim).map_err(|m| Error::parse(&sp, i + 2, m))?;
                vectors.extend(v);
            }
            if vectors.len() != h[0] * dim {
                return Err(Error::parse(&sp, 1, "bucket count mismatch"));
            }
            table.subwords = Some(Subwords {
                min_n: h[2],
                max_n: h[3],
                buckets: h[0],
                vectors,
            });
        }
        Ok(table)
    }
}

fn write_row(w: &mut impl Write, token: &str, v: &[f32]) -> std::io::Result<()> {
    write!(w, "{token}")?;
    for x in v {
        write!(w, " {x:.8e}")?;
    }
    writeln!(w)
}

fn parse_row(line: &str, dim: usize) -> std::result::Result<(String, Vec<f32>), String> {
    let mut parts = line.split_whitespace();
    let token = parts.next().ok_or("empty line")?.to_string();
    let v: Vec<f32> = parts
        .map(|x| x.parse::<f32>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if v.len() != dim {
        return Err(format!("expected {dim} values, found {}", v.len()));
    }
    Ok((token, v))
}

fn read_vectors(path: &Path) -> Result<(Vec<String>, usize, Vec<f32>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    let h: Vec<usize> = header
        .split_whitespace()
        .filter_map(|x| x.parse().ok())
        .collect();
    if h.len() != 2 || h[1] == 0 {
        return Err(Error::parse(path, 1, "expected header `count dim`"));
    }
    let (count, dim) = (h[0], h[1]);
    let mut tokens: Vec<String> = Vec::with_capacity(count);
    let mut vectors: Vec<f32> = Vec::with_capacity(count * dim);
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (token, v) = parse_row(&line, dim).map_err(|m| Error::parse(path, i + 2, m))?;
        if let Some(&j) = seen.get(&token) {
            log::warn!(
                "{}:{}: duplicate token {token:?}, keeping the last vector",
                path.display(),
                i + 2
            );
            vectors[j * dim..(j + 1) * dim].copy_from_slice(&v);
            continue;
        }
        seen.insert(token.clone(), tokens.len());
        tokens.push(token);
        vectors.extend(v);
    }
    if tokens.len() != count {
        log::warn!(
            "{}: header declares {count} tokens, found {}",
            path.display(),
            tokens.len()
        );
    }
    Ok((tokens, dim, vectors))
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Mean over query tokens of the best cosine against any pseudo-query token.
/// Tokens without a vector count as zero vectors.
pub fn s_cos(query: &[String], pseudo: &[String], table: &EmbeddingTable) -> f64 {
    if query.is_empty() || pseudo.is_empty() {
        return 0.0;
    }
    let pv: Vec<Option<Vec<f32>>> = pseudo.iter().map(|t| table.vector(t)).collect();
    let mut total = 0.0;
    for y in query {
        let Some(ey) = table.vector(y) else { continue };
        let best = pv
            .iter()
            .map(|x| x.as_ref().map_or(0.0, |ex| cosine(&ey, ex)))
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    total / query.len() as f64
}

/// Append the entity token of every lexicon match right after the word.
pub fn annotate(tokens: &[String], lexicon: &HashMap<String, String>) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        out.push(t.clone());
        if let Some(code) = lexicon.get(t) {
            out.push(entity_token(code));
        }
    }
    out
}

/// Lowercased single-word MeSH preferred names mapped to their codes.
pub fn mesh_lexicon() -> HashMap<String, String> {
    mesh_names()
        .iter()
        .filter_map(|(code, name)| {
            let words = word_tokens(name);
            (words.len() == 1).then(|| (words[0].clone(), code.clone()))
        })
        .collect()
}

/// One annotated token line per title and abstract sentence.
pub fn corpus_lines(docs: &[Document], lexicon: &HashMap<String, String>) -> Vec<Vec<String>> {
    docs.iter()
        .flat_map(|d| d.sentences())
        .map(|s| annotate(&word_tokens(&s), lexicon))
        .filter(|l| !l.is_empty())
        .collect()
}

struct Sampler {
    table: Vec<u32>,
}

impl Sampler {
    fn new(counts: &[u64]) -> Self {
        const SIZE: usize = 1_000_000;
        let z: f64 = counts.iter().map(|&c| (c as f64).powf(0.75)).sum();
        let mut table = Vec::with_capacity(SIZE);
        for (i, &c) in counts.iter().enumerate() {
            let n = ((c as f64).powf(0.75) / z * SIZE as f64).ceil() as usize;
            table.extend(std::iter::repeat_n(i as u32, n));
        }
        Self { table }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        self.table[rng.random_range(0..self.table.len())] as usize
    }
}

/// Skip-gram with negative sampling. The input representation of a word is
/// the mean of its whole-token vector and its n-gram vectors; entity tokens
/// use the whole-token vector only. Single threaded and deterministic.
pub fn train_embeddings(lines: &[Vec<String>], cfg: &EmbedConfig) -> Result<EmbeddingTable> {
    if cfg.dim == 0 {
        return Err(Error::Invalid("embedding dim must be positive".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for l in lines {
        for t in l {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c as usize >= cfg.min_count)
        .collect();
    if vocab.is_empty() {
        return Err(Error::Invalid("empty embedding corpus".into()));
    }
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (*t, i))
        .collect();
    let v = vocab.len();
    let d = cfg.dim;
    let nb = if cfg.max_n >= cfg.min_n && cfg.min_n > 0 {
        cfg.buckets
    } else {
        0
    };
    let inputs: Vec<Vec<usize>> = vocab
        .iter()
        .enumerate()
        .map(|(i, (t, _))| {
            let mut rows = vec![i];
            if !t.starts_with(&cfg.entity_prefix) {
                rows.extend(
                    ngram_buckets(t, cfg.min_n, cfg.max_n, nb)
                        .into_iter()
                        .map(|b| v + b),
                );
            }
            rows
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / d as f32;
    let mut w_in: Vec<f32> = (0..(v + nb) * d)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let mut w_out = vec![0f32; v * d];
    let sampler = Sampler::new(&vocab.iter().map(|(_, c)| *c).collect::<Vec<_>>());

    let ids: Vec<Vec<usize>> = lines
        .iter()
        .map(|l| {
            l.iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect()
        })
        .collect();
    let total: usize = ids.iter().map(Vec::len).sum::<usize>() * cfg.epochs.max(1);
    let mut processed = 0usize;
    let mut hidden = vec![0f32; d];
    let mut grad = vec![0f32; d];
    for _ in 0..cfg.epochs {
        for line in &ids {
            for (pos, &center) in line.iter().enumerate() {
                let lr =
                    (cfg.lr * (1.0 - processed as f64 / total as f64)).max(cfg.lr * 1e-4) as f32;
                processed += 1;
                let rows = &inputs[center];
                hidden.iter_mut().for_each(|x| *x = 0.0);
                for &r in rows {
                    for (h, x) in hidden.iter_mut().zip(&w_in[r * d..(r + 1) * d]) {
                        *h += x;
                    }
                }
                let inv = 1.0 / rows.len() as f32;
                hidden.iter_mut().for_each(|x| *x *= inv);
                let span = rng.random_range(1..=cfg.window.max(1));
                let lo = pos.saturating_sub(span);
                let hi = (pos + span).min(line.len() - 1);
                for ctx in lo..=hi {
                    if ctx == pos {
                        continue;
                    }
                    grad.iter_mut().for_each(|x| *x = 0.0);
                    let target = line[ctx];
                    for n in 0..=cfg.negatives {
                        let (out, label) = if n == 0 {
                            (target, 1.0f32)
                        } else {
                            let s = sampler.draw(&mut rng);
                            if s == target {
                                continue;
                            }
                            (s, 0.0)
                        };
                        let wo = &mut w_out[out * d..(out + 1) * d];
                        let score: f32 = hidden.iter().zip(wo.iter()).map(|(a, b)| a * b).sum();
                        let g = lr * (label - 1.0 / (1.0 + (-score).exp()));
                        for k in 0..d {
                            grad[k] += g * wo[k];
                            wo[k] += g * hidden[k];
                        }
                    }
                    for &r in rows {
                        for (x, g) in w_in[r * d..(r + 1) * d].iter_mut().zip(&grad) {
                            *x += g;
                        }
                    }
                }
            }
        }
    }

    let mut vectors = vec![0f32; v * d];
    for (i, rows) in inputs.iter().enumerate() {
        let out = &mut vectors[i * d..(i + 1) * d];
        for &r in rows {
            for (o, x) in out.iter_mut().zip(&w_in[r * d..(r + 1) * d]) {
                *o += x;
            }
        }
        let inv = 1.0 / rows.len() as f32;
        out.iter_mut().for_each(|x| *x *= inv);
    }
    let tokens = vocab.iter().map(|(t, _)| t.to_string()).collect();
    let mut table = EmbeddingTable::new(tokens, d, vectors, &cfg.entity_prefix)?;
    if nb > 0 {
        table.subwords = Some(Subwords {
            min_n: cfg.min_n,
            max_n: cfg.max_n,
            buckets: nb,
            vectors: w_in[v * d..].to_vec(),
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn owned(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn toy_table() -> EmbeddingTable {
        let tokens = owned(&["a", "b", "c", "d", "e", "emesh_d000001"]);
        let vectors = vec![
            1.0, 0.0, 0.0, //
            0.6, 0.8, 0.0, //
            0.0, 1.0, 0.0, //
            -1.0, 0.2, 0.3, //
            0.0, 0.0, 0.0, //
            0.1, 0.2, 0.9,
        ];
        EmbeddingTable::new(tokens, 3, vectors, ENTITY_PREFIX).unwrap()
    }

    #[test]
    fn s_cos_identity_and_pairs() {
        let t = toy_table();
        let q = owned(&["a", "b", "c"]);
        assert!((s_cos(&q, &q, &t) - 1.0).abs() < 1e-12);
        let c = cosine(t.row(1), t.row(0));
        assert!((s_cos(&owned(&["a", "b"]), &owned(&["a"]), &t) - (1.0 + c) / 2.0).abs() < 1e-12);
        assert_eq!(s_cos(&q, &[], &t), 0.0);
        assert_eq!(s_cos(&owned(&["zzz"]), &owned(&["a"]), &t), 0.0);
    }

    #[test]
    fn s_cos_ignores_duplicates_and_order() {
        let t = toy_table();
        let q = owned(&["a", "d"]);
        let x = s_cos(&q, &owned(&["b", "c", "emesh_d000001"]), &t);
        let y = s_cos(&q, &owned(&["emesh_d000001", "c", "b", "c"]), &t);
        assert_eq!(x, y);
    }

    #[test]
    fn zero_vector_cosine() {
        let t = toy_table();
        assert_eq!(cosine(t.row(4), t.row(0)), 0.0);
        assert!((cosine(t.row(3), t.row(3)) - 1.0).abs() < 1e-12);
        assert!(t.is_entity("emesh_d000001"));
        assert!(!t.is_entity("mesh"));
    }

    #[test]
    fn save_load_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        let mut t = toy_table();
        t.vectors[0] = 0.1234567891f32;
        t.vectors[1] = -3.3333333e-7;
        t.save(&p).unwrap();
        let back = EmbeddingTable::load(&p).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn load_errors_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, "2 3\na 1 2 3\nb 4 5 6\n").unwrap();
        assert_eq!(EmbeddingTable::load(&p).unwrap().len(), 2);
        std::fs::write(&p, "2 3\na 1 2 3\nb 4 5\n").unwrap();
        assert!(matches!(
            EmbeddingTable::load(&p),
            Err(Error::Parse { line: 3, .. })
        ));
        std::fs::write(&p, "2 3\na 1 2 3\na 4 5 6\n").unwrap();
        let t = EmbeddingTable::load(&p).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.vector("a").unwrap(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn ngrams_skip_entities_and_whole_word() {
        let b = ngram_buckets("ab", 3, 6, 1000);
        // "<ab>" has 3-grams "<ab", "ab>" and the 4-gram is the whole token.
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn annotate_appends_codes() {
        let lex: HashMap<String, String> = [("aspirin".to_string(), "D001241".to_string())].into();
        assert_eq!(
            annotate(&owned(&["take", "aspirin"]), &lex),
            owned(&["take", "aspirin", "emesh_d001241"])
        );
    }

    /// 200 lines of random filler; each line carries one drug with its code
    /// appended.
    fn toy_corpus() -> Vec<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let filler: Vec<String> = (0..60).map(|i| format!("f{i}")).collect();
        let drugs = [
            ("aspirin", "emesh_d001241"),
            ("warfarin", "emesh_d014859"),
            ("cisplatin", "emesh_d002945"),
        ];
        (0..200)
            .map(|i| {
                let mut l: Vec<String> = (0..10)
                    .map(|_| filler[rng.random_range(0..filler.len())].clone())
                    .collect();
                let (drug, code) = drugs[i % drugs.len()];
                let at = rng.random_range(0..=l.len());
                l.insert(at, drug.into());
                l.insert(at + 1, code.into());
                l
            })
            .collect()
    }

    #[test]
    fn entity_is_near_its_word() {
        let cfg = EmbedConfig {
            epochs: 50,
            buckets: 2000,
            ..EmbedConfig::default()
        };
        let t = train_embeddings(&toy_corpus(), &cfg).unwrap();
        assert!(t.contains("aspirin") && t.contains("emesh_d001241"));
        let top: Vec<String> = t.nearest("aspirin", 3).into_iter().map(|x| x.0).collect();
        assert!(top.contains(&"emesh_d001241".to_string()), "{top:?}");
    }

    #[test]
    fn deterministic_and_errors() {
        let cfg = EmbedConfig {
            dim: 8,
            epochs: 1,
            buckets: 100,
            ..EmbedConfig::default()
        };
        let a = train_embeddings(&toy_corpus(), &cfg).unwrap();
        let b = train_embeddings(&toy_corpus(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(train_embeddings(&[], &cfg).is_err());
        assert!(train_embeddings(&toy_corpus(), &EmbedConfig { dim: 0, ..cfg }).is_err());
        assert!(a.vector("aspirins").is_some());
        assert!(a.vector("emesh_unknown").is_none());
    }
}
