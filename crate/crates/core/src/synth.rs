//! Deterministic synthetic corpus, topics and graded judgments with planted
//! disease and gene terms.
//!
//! Grading rule for topic (disease D, gene G with synonym S): a document is
//! grade 2 if it contains D and G, grade 1 if it contains D and S, else 0.
//! Each topic gets planted relevant documents plus lexical distractors
//! (D alone at high frequency, G alone at high frequency, D with another
//! gene). The judged pool adds zero-grade documents until the share of
//! zeros reaches `negative_ratio`.

use std::collections::{BTreeMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, PatientCase, Qrels};
use crate::error::{Error, Result};
use crate::text::index_tokens;

#[derive(Clone, Debug, PartialEq)]
pub struct DiseaseSpec {
    pub name: String,
    pub code: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneSpec {
    pub name: String,
    pub synonym: String,
    pub code: String,
}

/// Term pools and per-topic document counts.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabSpec {
    pub diseases: Vec<DiseaseSpec>,
    pub genes: Vec<GeneSpec>,
    pub filler: Vec<String>,
    pub grade2_per_topic: usize,
    pub grade1_per_topic: usize,
    pub disease_only_per_topic: usize,
    pub gene_only_per_topic: usize,
    pub cross_gene_per_topic: usize,
    pub negative_ratio: f64,
}

const DISEASES: &[(&str, &str)] = &[
    ("melanoma", "D008545"),
    ("glioblastoma", "D005909"),
    ("cholangiocarcinoma", "D018281"),
    ("mesothelioma", "D008654"),
    ("neuroblastoma", "D009447"),
    ("osteosarcoma", "D012516"),
    ("retinoblastoma", "D012175"),
    ("medulloblastoma", "D008527"),
    ("lymphoma", "D008223"),
    ("leukemia", "D007938"),
    ("adenocarcinoma", "D000230"),
    ("liposarcoma", "D008080"),
];

const GENES: &[(&str, &str, &str)] = &[
    ("erbb2", "her2", "D018719"),
    ("egfr", "erbb1", "D066246"),
    ("alk", "cd246", "D000077548"),
    ("kras", "kras2", "D016283"),
    ("braf", "rafb1", "D048493"),
    ("tp53", "p53", "D016159"),
    ("met", "hgfr", "D019859"),
    ("pten", "mmac1", "D051059"),
];

const FILLER: &str = "analysis cohort patients study results clinical treatment response therapy \
    expression tumor cells growth survival outcome trial dose risk factor level marker sample \
    tissue biopsy imaging stage grade lesion primary metastatic advanced early invasive \
    protein pathway signaling receptor kinase inhibitor mutation variant allele sequencing \
    genomic profile mechanism activity function binding domain regulation transcription \
    significant associated increased decreased observed reported compared measured \
    evaluated identified detected performed confirmed suggested showed found \
    median mean ratio rate interval follow months years baseline group control \
    randomized prospective retrospective multicenter phase novel potential targeted \
    combined adjuvant chemotherapy radiation surgery resection recurrence progression \
    toxicity adverse events tolerated efficacy safety benefit overall free \
    diagnosis prognosis screening population incidence prevalence frequency \
    model assay culture line xenograft vitro vivo antibody staining \
    this we these our here both among within between during after before";

const DEMOGRAPHIC_SEX: &[&str] = &["male", "female"];

impl Default for VocabSpec {
    fn default() -> Self {
        Self {
            diseases: DISEASES
                .iter()
                .map(|(n, c)| DiseaseSpec {
                    name: n.to_string(),
                    code: c.to_string(),
                })
                .collect(),
            genes: GENES
                .iter()
                .map(|(n, s, c)| GeneSpec {
                    name: n.to_string(),
                    synonym: s.to_string(),
                    code: c.to_string(),
                })
                .collect(),
            filler: FILLER.split_whitespace().map(str::to_string).collect(),
            grade2_per_topic: 3,
            grade1_per_topic: 6,
            disease_only_per_topic: 8,
            gene_only_per_topic: 8,
            cross_gene_per_topic: 4,
            negative_ratio: 0.87,
        }
    }
}

impl VocabSpec {
    fn planted_per_topic(&self) -> usize {
        self.grade2_per_topic
            + self.grade1_per_topic
            + self.disease_only_per_topic
            + self.gene_only_per_topic
            + self.cross_gene_per_topic
    }

    /// Smallest plan that still yields five relevant documents per topic.
    fn minimal(&self) -> Self {
        Self {
            grade2_per_topic: 2,
            grade1_per_topic: 3,
            disease_only_per_topic: 2,
            gene_only_per_topic: 2,
            cross_gene_per_topic: 1,
            ..self.clone()
        }
    }

    /// Surface form → MeSH code for every planted term, synonyms included.
    pub fn lexicon(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .diseases
            .iter()
            .map(|d| (d.name.clone(), d.code.clone()))
            .collect();
        for g in &self.genes {
            out.push((g.name.clone(), g.code.clone()));
            out.push((g.synonym.clone(), g.code.clone()));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<Document>,
    pub topics: Vec<PatientCase>,
    pub qrels: Qrels,
}

struct DocPlan {
    title_terms: Vec<String>,
    body_terms: Vec<String>,
    codes: Vec<String>,
    keywords: Vec<String>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &'a [String]) -> &'a str {
    words.choose(rng).expect("nonempty filler")
}

fn sentence(rng: &mut ChaCha8Rng, filler: &[String], planted: &[String]) -> String {
    let n = rng.random_range(6..=11);
    let mut words: Vec<String> = (0..n).map(|_| pick(rng, filler).to_string()).collect();
    for t in planted {
        let at = rng.random_range(0..=words.len());
        words.insert(at, t.clone());
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        s = first.to_uppercase() + &s[1..];
    }
    s.push('.');
    s
}

fn demographics(rng: &mut ChaCha8Rng) -> String {
    format!(
        "{}-year-old {}",
        rng.random_range(25..=80),
        DEMOGRAPHIC_SEX.choose(rng).expect("nonempty")
    )
}

fn render(rng: &mut ChaCha8Rng, spec: &VocabSpec, plan: DocPlan, id: String) -> Document {
    let mut title_words: Vec<String> = (0..rng.random_range(4..=7))
        .map(|_| pick(rng, &spec.filler).to_string())
        .collect();
    for t in &plan.title_terms {
        let at = rng.random_range(0..=title_words.len());
        title_words.insert(at, t.clone());
    }
    let mut title = title_words.join(" ");
    if let Some(first) = title.get(0..1) {
        title = first.to_uppercase() + &title[1..];
    }
    let n_sent = rng.random_range(3..=5);
    let mut per_sentence: Vec<Vec<String>> = vec![Vec::new(); n_sent];
    for t in plan.body_terms {
        let s = rng.random_range(0..n_sent);
        per_sentence[s].push(t);
    }
    let mut sentences: Vec<String> = per_sentence
        .iter()
        .map(|p| sentence(rng, &spec.filler, p))
        .collect();
    if rng.random_bool(0.3) {
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, format!("The patient was a {}.", demographics(rng)));
    }
    Document {
        id,
        title,
        abstract_text: sentences.join(" "),
        mesh_codes: plan.codes,
        keywords: plan.keywords,
    }
}

fn repeat(term: &str, n: usize) -> Vec<String> {
    vec![term.to_string(); n]
}

/// Deterministic synthetic benchmark. Topics are distinct (disease, gene)
/// pairs, arranged so that diseases and genes recur across topics.
pub fn generate_synthetic(
    seed: u64,
    n_docs: usize,
    n_topics: usize,
    spec: &VocabSpec,
) -> Result<SyntheticData> {
    if n_topics == 0 || n_docs < 10 * n_topics {
        return Err(Error::Invalid(format!(
            "need n_docs >= 10 * n_topics (got {n_docs} docs, {n_topics} topics)"
        )));
    }
    let (nd, ng) = (spec.diseases.len(), spec.genes.len());
    if nd == 0 || ng == 0 || spec.filler.is_empty() {
        return Err(Error::Invalid("vocabulary pools must be nonempty".into()));
    }
    let pairs_cap = nd * ng / gcd(nd, ng).max(1);
    if n_topics > pairs_cap.min(nd * ng) {
        return Err(Error::Invalid(format!(
            "at most {} distinct topics with these pools",
            pairs_cap.min(nd * ng)
        )));
    }
    let plan_spec = if spec.planted_per_topic() * n_topics <= n_docs {
        spec.clone()
    } else {
        spec.minimal()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diseases = spec.diseases.clone();
    let mut genes = spec.genes.clone();
    diseases.shuffle(&mut rng);
    genes.shuffle(&mut rng);

    let topic_terms: Vec<(usize, usize)> = (0..n_topics).map(|t| (t % nd, t % ng)).collect();
    let topics: Vec<PatientCase> = topic_terms
        .iter()
        .enumerate()
        .map(|(t, &(d, g))| PatientCase {
            topic_id: (t + 1).to_string(),
            disease: capitalize(&diseases[d].name),
            gene: genes[g].name.to_uppercase(),
            demographics: demographics(&mut rng),
            mesh_terms: vec![diseases[d].code.clone(), genes[g].code.clone()],
            keywords: vec![],
        })
        .collect();

    let mut plans: Vec<DocPlan> = Vec::with_capacity(n_docs);
    let keywords_for =
        |rng: &mut ChaCha8Rng, d: Option<&DiseaseSpec>, g: Option<&str>| -> Vec<String> {
            if !rng.random_bool(0.5) {
                return Vec::new();
            }
            let mut k: Vec<String> = d.map(|d| capitalize(&d.name)).into_iter().collect();
            k.extend(g.map(|g| g.to_uppercase()));
            k
        };
    for &(d, g) in &topic_terms {
        let dis = &diseases[d];
        let gene = &genes[g];
        for _ in 0..plan_spec.grade2_per_topic {
            let in_title = rng.random_bool(0.5);
            let mut body = repeat(&dis.name, rng.random_range(1..=2));
            body.extend(repeat(&gene.name, rng.random_range(1..=2)));
            let title_terms = if in_title {
                vec![dis.name.clone()]
            } else {
                vec![]
            };
            let keywords = keywords_for(&mut rng, Some(dis), Some(&gene.name));
            plans.push(DocPlan {
                title_terms,
                body_terms: body,
                codes: vec![dis.code.clone(), gene.code.clone()],
                keywords,
            });
        }
        for _ in 0..plan_spec.grade1_per_topic {
            let mut body = vec![dis.name.clone()];
            body.extend(repeat(&gene.synonym, rng.random_range(1..=2)));
            let keywords = keywords_for(&mut rng, Some(dis), Some(&gene.synonym));
            plans.push(DocPlan {
                title_terms: vec![],
                body_terms: body,
                codes: vec![dis.code.clone(), gene.code.clone()],
                keywords,
            });
        }
        for _ in 0..plan_spec.disease_only_per_topic {
            let body = repeat(&dis.name, rng.random_range(3..=5));
            let title_terms = if rng.random_bool(0.5) {
                vec![dis.name.clone()]
            } else {
                vec![]
            };
            let keywords = keywords_for(&mut rng, Some(dis), None);
            plans.push(DocPlan {
                title_terms,
                body_terms: body,
                codes: vec![dis.code.clone()],
                keywords,
            });
        }
        for _ in 0..plan_spec.gene_only_per_topic {
            let body = repeat(&gene.name, rng.random_range(3..=5));
            let title_terms = if rng.random_bool(0.5) {
                vec![gene.name.clone()]
            } else {
                vec![]
            };
            let other = pick_other(&mut rng, &diseases, d);
            let keywords = keywords_for(&mut rng, None, Some(&gene.name));
            let mut plan = DocPlan {
                title_terms,
                body_terms: body,
                codes: vec![gene.code.clone()],
                keywords,
            };
            // Half of these mention a different disease.
            if rng.random_bool(0.5) {
                plan.body_terms.push(other.name.clone());
                plan.codes.push(other.code.clone());
            }
            plans.push(plan);
        }
        for _ in 0..plan_spec.cross_gene_per_topic {
            let other = pick_other(&mut rng, &genes, g);
            let term = if rng.random_bool(0.5) {
                other.name.clone()
            } else {
                other.synonym.clone()
            };
            let body = vec![dis.name.clone(), term.clone()];
            let keywords = keywords_for(&mut rng, Some(dis), Some(&term));
            plans.push(DocPlan {
                title_terms: vec![],
                body_terms: body,
                codes: vec![dis.code.clone(), other.code.clone()],
                keywords,
            });
        }
    }
    while plans.len() < n_docs {
        // Background: sometimes one pool term, never a disease with a gene.
        let mut plan = DocPlan {
            title_terms: vec![],
            body_terms: vec![],
            codes: vec![],
            keywords: vec![],
        };
        match rng.random_range(0..4) {
            0 => {
                let dis = diseases.choose(&mut rng).expect("nonempty");
                plan.body_terms.push(dis.name.clone());
                plan.codes.push(dis.code.clone());
            }
            1 => {
                let gene = genes.choose(&mut rng).expect("nonempty");
                let term = if rng.random_bool(0.5) {
                    &gene.name
                } else {
                    &gene.synonym
                };
                plan.body_terms.push(term.clone());
                plan.codes.push(gene.code.clone());
            }
            _ => {}
        }
        plans.push(plan);
    }
    plans.shuffle(&mut rng);
    let width = n_docs.to_string().len();
    let corpus: Vec<Document> = plans
        .into_iter()
        .enumerate()
        .map(|(i, plan)| {
            let id = format!("s{:0width$}", i + 1);
            render(&mut rng, spec, plan, id)
        })
        .collect();

    let qrels = judge(
        &mut rng,
        &corpus,
        &topics,
        &topic_terms,
        &diseases,
        &genes,
        spec.negative_ratio,
    );
    Ok(SyntheticData {
        corpus,
        topics,
        qrels,
    })
}

fn judge(
    rng: &mut ChaCha8Rng,
    corpus: &[Document],
    topics: &[PatientCase],
    topic_terms: &[(usize, usize)],
    diseases: &[DiseaseSpec],
    genes: &[GeneSpec],
    negative_ratio: f64,
) -> Qrels {
    let words: Vec<HashSet<String>> = corpus
        .iter()
        .map(|d| index_tokens(&d.text()).into_iter().collect())
        .collect();
    let mut qrels = Qrels::new();
    for (topic, &(d, g)) in topics.iter().zip(topic_terms) {
        let (dis, gene) = (&diseases[d], &genes[g]);
        let mut judged: BTreeMap<String, u8> = BTreeMap::new();
        let mut near: Vec<usize> = Vec::new();
        let mut far: Vec<usize> = Vec::new();
        for (i, w) in words.iter().enumerate() {
            let has_d = w.contains(&dis.name);
            let has_g = w.contains(&gene.name);
            let has_s = w.contains(&gene.synonym);
            let grade = match (has_d, has_g, has_s) {
                (true, true, _) => 2,
                (true, false, true) => 1,
                _ => 0,
            };
            if grade > 0 {
                judged.insert(corpus[i].id.clone(), grade);
            } else if has_d || has_g || has_s {
                near.push(i);
            } else {
                far.push(i);
            }
        }
        let relevant = judged.len() as f64;
        let zeros = (relevant * negative_ratio / (1.0 - negative_ratio)).round() as usize;
        near.shuffle(rng);
        far.shuffle(rng);
        for i in near.into_iter().chain(far).take(zeros) {
            judged.insert(corpus[i].id.clone(), 0);
        }
        qrels.insert(topic.topic_id.clone(), judged);
    }
    qrels
}

fn pick_other<'a, T>(rng: &mut ChaCha8Rng, pool: &'a [T], not: usize) -> &'a T {
    if pool.len() == 1 {
        return &pool[0];
    }
    let mut i = rng.random_range(0..pool.len() - 1);
    if i >= not {
        i += 1;
    }
    &pool[i]
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticData {
        generate_synthetic(7, 400, 8, &VocabSpec::default()).unwrap()
    }

    #[test]
    fn deterministic() {
        assert_eq!(small(), small());
        assert_ne!(
            small().corpus,
            generate_synthetic(8, 400, 8, &VocabSpec::default())
                .unwrap()
                .corpus
        );
    }

    #[test]
    fn grades_follow_rule() {
        let data = small();
        let spec = VocabSpec::default();
        let syn: std::collections::HashMap<&str, &str> = spec
            .genes
            .iter()
            .map(|g| (g.name.as_str(), g.synonym.as_str()))
            .collect();
        for topic in &data.topics {
            let d = topic.disease.to_lowercase();
            let g = topic.gene.to_lowercase();
            let s = syn[g.as_str()];
            let judged = &data.qrels[&topic.topic_id];
            for doc in &data.corpus {
                let w: HashSet<String> = index_tokens(&doc.text()).into_iter().collect();
                let expected = if w.contains(&d) && w.contains(&g) {
                    2
                } else if w.contains(&d) && w.contains(s) {
                    1
                } else {
                    0
                };
                let got = judged.get(&doc.id).copied().unwrap_or(0);
                assert_eq!(got, expected, "topic {} doc {}", topic.topic_id, doc.id);
            }
            assert!(judged.values().filter(|g| **g >= 1).count() >= 5);
        }
    }

    #[test]
    fn negative_share_near_target() {
        let data = generate_synthetic(3, 2000, 20, &VocabSpec::default()).unwrap();
        let all: Vec<u8> = data
            .qrels
            .values()
            .flat_map(|m| m.values().copied())
            .collect();
        let zeros = all.iter().filter(|g| **g == 0).count() as f64 / all.len() as f64;
        assert!((zeros - 0.87).abs() <= 0.05, "{zeros}");
    }

    #[test]
    fn precondition() {
        assert!(generate_synthetic(1, 99, 10, &VocabSpec::default()).is_err());
        assert!(generate_synthetic(1, 100, 10, &VocabSpec::default()).is_ok());
    }

    #[test]
    fn topics_are_distinct_pairs() {
        let data = generate_synthetic(1, 2000, 20, &VocabSpec::default()).unwrap();
        let pairs: HashSet<(String, String)> = data
            .topics
            .iter()
            .map(|t| (t.disease.clone(), t.gene.clone()))
            .collect();
        assert_eq!(pairs.len(), 20);
    }
}
