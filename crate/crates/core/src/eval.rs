//! P@k, R-Prec and run comparison reports.

use std::io::Write;

use serde::Serialize;

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::index::RankedList;

fn judged<'a>(
    ranked: &RankedList,
    qrels: &'a Qrels,
) -> Result<&'a std::collections::BTreeMap<String, u8>> {
    qrels
        .get(&ranked.topic_id)
        .ok_or_else(|| Error::Invalid(format!("topic {} missing from qrels", ranked.topic_id)))
}

fn relevant_in_top(
    ranked: &RankedList,
    grades: &std::collections::BTreeMap<String, u8>,
    k: usize,
) -> usize {
    ranked
        .doc_ids()
        .take(k)
        .filter(|d| grades.get(*d).is_some_and(|g| *g >= 1))
        .count()
}

/// Relevant documents among the top `k`, divided by `k`.
pub fn p_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    let grades = judged(ranked, qrels)?;
    if k == 0 {
        return Ok(0.0);
    }
    Ok(relevant_in_top(ranked, grades, k) as f64 / k as f64)
}

/// Precision at rank R (the topic's relevant count). `None` when R is 0.
pub fn r_prec(ranked: &RankedList, qrels: &Qrels) -> Result<Option<f64>> {
    let grades = judged(ranked, qrels)?;
    let r = grades.values().filter(|g| **g >= 1).count();
    if r == 0 {
        return Ok(None);
    }
    Ok(Some(relevant_in_top(ranked, grades, r) as f64 / r as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicMetrics {
    pub topic_id: String,
    pub p_at_10: f64,
    pub r_prec: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub run_tag: String,
    pub topics: Vec<TopicMetrics>,
    pub mean_p_at_10: f64,
    pub mean_r_prec: f64,
}

impl MetricReport {
    pub fn topic_count(&self) -> usize {
        self.topics.len()
    }
}

/// Per-topic and mean metrics. R-Prec means skip topics without relevant
/// documents.
pub fn evaluate(tag: &str, lists: &[RankedList], qrels: &Qrels) -> Result<MetricReport> {
    let mut topics = Vec::with_capacity(lists.len());
    for l in lists {
        topics.push(TopicMetrics {
            topic_id: l.topic_id.clone(),
            p_at_10: p_at_k(l, qrels, 10)?,
            r_prec: r_prec(l, qrels)?,
        });
    }
    let mean_p_at_10 = mean(topics.iter().map(|t| t.p_at_10));
    let mean_r_prec = mean(topics.iter().filter_map(|t| t.r_prec));
    Ok(MetricReport {
        run_tag: tag.to_string(),
        topics,
        mean_p_at_10,
        mean_r_prec,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run_tag: String,
    pub mean_r_prec: f64,
    pub mean_p_at_10: f64,
}

/// One row per run, sorted by mean P@10 descending (ties by tag).
pub fn compare_runs(
    runs: &[(String, Vec<RankedList>)],
    qrels: &Qrels,
) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::with_capacity(runs.len());
    for (tag, lists) in runs {
        let r = evaluate(tag, lists, qrels)?;
        rows.push(ComparisonRow {
            run_tag: tag.clone(),
            mean_r_prec: r.mean_r_prec,
            mean_p_at_10: r.mean_p_at_10,
        });
    }
    rows.sort_by(|a, b| {
        b.mean_p_at_10
            .total_cmp(&a.mean_p_at_10)
            .then_with(|| a.run_tag.cmp(&b.run_tag))
    });
    Ok(rows)
}

/// CSV with header `run_tag,mean_r_prec,mean_p_at_10`.
pub fn write_comparison_csv(w: impl Write, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["run_tag", "mean_r_prec", "mean_p_at_10"])?;
    for r in rows {
        out.write_record([
            r.run_tag.clone(),
            format!("{:.4}", r.mean_r_prec),
            format!("{:.4}", r.mean_p_at_10),
        ])?;
    }
    out.flush().map_err(|e| Error::Invalid(e.to_string()))
}

pub fn format_comparison_table(rows: &[ComparisonRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.run_tag.len())
        .max()
        .unwrap_or(0)
        .max("run".len());
    let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "run", "R-Prec", "P@10");
    for r in rows {
        s.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}\n",
            r.run_tag, r.mean_r_prec, r.mean_p_at_10
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(topic: &str, docs: &[&str]) -> RankedList {
        let n = docs.len();
        RankedList {
            topic_id: topic.into(),
            entries: docs
                .iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), (n - i) as f64))
                .collect(),
        }
    }

    fn qrels(topic: &str, rel: &[(&str, u8)]) -> Qrels {
        let mut q = Qrels::new();
        q.insert(
            topic.into(),
            rel.iter().map(|(d, g)| (d.to_string(), *g)).collect(),
        );
        q
    }

    #[test]
    fn precision_counts() {
        let q = qrels("1", &[("a", 1), ("b", 2), ("c", 0), ("d", 1), ("e", 2)]);
        let docs = ["a", "x", "b", "y", "d", "z", "e", "w", "c", "v", "extra"];
        assert_eq!(p_at_k(&list("1", &docs), &q, 10).unwrap(), 0.4);
        assert_eq!(p_at_k(&list("1", &[]), &q, 10).unwrap(), 0.0);
        assert!(p_at_k(&list("2", &docs), &q, 10).is_err());
    }

    #[test]
    fn r_prec_rules() {
        let q = qrels("1", &[("a", 1), ("b", 2), ("c", 1), ("d", 1)]);
        assert_eq!(
            r_prec(&list("1", &["a", "x", "b", "y"]), &q).unwrap(),
            Some(0.5)
        );
        assert_eq!(
            r_prec(&list("1", &["d", "c", "b", "a"]), &q).unwrap(),
            Some(1.0)
        );
        assert_eq!(r_prec(&list("1", &["a"]), &q).unwrap(), Some(0.25));
        let none = qrels("1", &[("a", 0)]);
        assert_eq!(r_prec(&list("1", &["a"]), &none).unwrap(), None);
    }

    #[test]
    fn comparison_sorted_and_csv() {
        let q = qrels("1", &[("a", 1)]);
        let runs = vec![
            ("low".to_string(), vec![list("1", &["x", "a"])]),
            ("high".to_string(), vec![list("1", &["a"])]),
        ];
        let rows = compare_runs(&runs, &q).unwrap();
        assert_eq!(rows[0].run_tag, "high");
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("run_tag,mean_r_prec,mean_p_at_10\nhigh,1.0000,0.1000\n"));
        assert!(format_comparison_table(&rows).contains("high"));
    }
}
