//! Memorisation sets shared by the overfit and acceptance tests.
#![allow(dead_code)]

use facetrank::corpus::{
    ext_example, AbsExample, Document, ExtExample, FacetKind, PatientCase, RelExample,
};
use facetrank::models::abs::{build_target_vocab, train_abs, AbsModel, AbsReport};
use facetrank::models::beam::BeamConfig;
use facetrank::models::ext::{train_ext, ExtModel};
use facetrank::models::rel::{train_rel, RelModel, TrainReport};
use facetrank::models::TrainConfig;
use facetrank::wordpiece::Vocab;
use facetrank_nn::{DecoderConfig, EncoderConfig};

pub const DISEASES: [&str; 5] = ["melanoma", "glioma", "sarcoma", "lymphoma", "carcinoma"];
pub const GENES: [&str; 4] = ["braf", "kras", "egfr", "alk"];
const FILLER: [&str; 12] = [
    "cells", "patients", "response", "cohort", "trial", "therapy", "growth", "signal", "survival",
    "dose", "marker", "tissue",
];

pub fn doc(i: usize, disease: &str, gene: &str) -> Document {
    let f = |k: usize| FILLER[(i * 5 + k) % FILLER.len()];
    Document {
        id: format!("d{i:02}"),
        title: format!("{disease} {} {}", f(0), f(1)),
        abstract_text: format!("{} {gene} {}. {} {} {}.", f(2), f(3), f(4), f(5), disease),
        mesh_codes: vec![],
        keywords: vec![],
    }
}

pub fn case(i: usize, disease: &str, gene: &str) -> PatientCase {
    PatientCase {
        topic_id: format!("t{i}"),
        disease: disease.into(),
        gene: gene.into(),
        demographics: String::new(),
        mesh_terms: vec![],
        keywords: vec![],
    }
}

/// 20 (doc, query) pairs: even indices match the query, odd ones swap in
/// another disease and gene.
pub fn pairs() -> Vec<(Document, PatientCase, bool)> {
    (0..20)
        .map(|i| {
            let (d, g) = (DISEASES[i % 5], GENES[i % 4]);
            let pos = i % 2 == 0;
            let (dd, dg) = if pos {
                (d, g)
            } else {
                (DISEASES[(i + 2) % 5], GENES[(i + 1) % 4])
            };
            (doc(i, dd, dg), case(i, d, g), pos)
        })
        .collect()
}

pub fn vocab() -> Vocab {
    let texts: Vec<String> = pairs()
        .iter()
        .map(|(d, c, _)| format!("{} {}", d.text(), c.query_sentences().join(" ")))
        .collect();
    Vocab::train_wordpiece(texts.iter().map(String::as_str), 1, 500)
}

fn overfit_cfg(base: TrainConfig, steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        val_fraction: 0.0,
        eval_every: steps,
        log_every: 100,
        ..base
    }
}

pub fn rel_examples() -> Vec<RelExample> {
    pairs()
        .into_iter()
        .map(|(doc, c, label)| RelExample {
            doc,
            query_sentences: c.query_sentences(),
            label,
        })
        .collect()
}

pub fn overfit_rel(steps: u64) -> (RelModel, TrainReport) {
    let v = vocab();
    let mut m = RelModel::new(v.clone(), EncoderConfig::desk(v.len()), 11).unwrap();
    let r = train_rel(
        &mut m,
        &rel_examples(),
        &overfit_cfg(TrainConfig::rel(), steps),
    )
    .unwrap();
    (m, r)
}

pub fn ext_examples() -> Vec<(ExtExample, PatientCase, Document)> {
    pairs()
        .into_iter()
        .map(|(d, c, _)| (ext_example(&c, &d), c, d))
        .collect()
}

pub fn overfit_ext(steps: u64) -> (ExtModel, TrainReport) {
    let v = vocab();
    let mut m = ExtModel::new(v.clone(), EncoderConfig::desk(v.len()), 12).unwrap();
    let ex: Vec<ExtExample> = ext_examples().into_iter().map(|(e, _, _)| e).collect();
    let r = train_ext(&mut m, &ex, &overfit_cfg(TrainConfig::ext(), steps)).unwrap();
    (m, r)
}

/// Ten (doc, facet) examples whose targets are the doc's disease or gene.
pub fn abs_examples() -> Vec<AbsExample> {
    pairs()
        .into_iter()
        .take(10)
        .enumerate()
        .map(|(i, (doc, c, _))| {
            let facet = if i % 2 == 0 {
                FacetKind::Disease
            } else {
                FacetKind::GeneticVariation
            };
            let target = if facet == FacetKind::Disease {
                c.disease.clone()
            } else {
                c.gene.clone()
            };
            AbsExample {
                doc,
                facet,
                target_tokens: vec![target],
            }
        })
        .collect()
}

pub fn overfit_abs(steps: u64) -> (AbsModel, AbsReport, Vec<AbsExample>) {
    let v = vocab();
    let ex = abs_examples();
    let docs: Vec<Document> = ex.iter().map(|e| e.doc.clone()).collect();
    let tv = build_target_vocab(&ex, &docs, 200);
    let dec = DecoderConfig::desk(tv.len(), 32);
    let mut m = AbsModel::new(v.clone(), EncoderConfig::desk(v.len()), tv, dec, 13).unwrap();
    let cfg = overfit_cfg(
        TrainConfig {
            lr: 1e-3,
            encoder_lr: Some(1e-3),
            ..TrainConfig::abs()
        },
        steps,
    );
    let beam = BeamConfig {
        max_len: 4,
        ..BeamConfig::default()
    };
    let r = train_abs(&mut m, &ex, &cfg, &beam).unwrap();
    (m, r, ex)
}
