//! Beam search scored by `logprob / lp(Y) + cp(X, Y)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to accumulated attention inside the coverage log.
pub const COVERAGE_FLOOR: f64 = 1e-9;

/// `((5 + len) / 6)^alpha`; exactly 1 for `len == 1`.
pub fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

/// `beta * sum_j ln(min(sum_i p[i][j], 1))` over source positions with
/// `source_mask[j]`. Zero coverage is clamped to [`COVERAGE_FLOOR`].
pub fn coverage_penalty(attention: &[Vec<f64>], source_mask: &[bool], beta: f64) -> f64 {
    let mut acc = vec![0.0; source_mask.len()];
    for row in attention {
        for (a, p) in acc.iter_mut().zip(row) {
            *a += p;
        }
    }
    beta * coverage_sum(&acc, source_mask)
}

fn coverage_sum(acc: &[f64], source_mask: &[bool]) -> f64 {
    acc.iter()
        .zip(source_mask)
        .filter(|(_, m)| **m)
        .map(|(a, _)| a.min(1.0).max(COVERAGE_FLOOR).ln())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Generated tokens (eos included) after which a hypothesis stops.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            alpha: 0.4,
            beta: 0.4,
            max_len: crate::corpus::MAX_TARGET_LEN + 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Facet bos followed by the generated ids.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    /// One averaged cross-attention row per generated token.
    pub attention: Vec<Vec<f64>>,
    pub finished: bool,
    pub score: f64,
}

impl BeamHypothesis {
    /// Generated length `|Y|` (bos excluded).
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sequence score `logprob / lp(|Y|) + cp`.
pub fn hypothesis_score(
    logprob: f64,
    attention: &[Vec<f64>],
    source_mask: &[bool],
    cfg: &BeamConfig,
) -> f64 {
    logprob / length_penalty(attention.len(), cfg.alpha)
        + coverage_penalty(attention, source_mask, cfg.beta)
}

/// Higher score first, then lexicographically smaller token ids.
pub fn rank_order(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_tokens.cmp(b_tokens))
}

struct Live {
    tokens: Vec<usize>,
    logprob: f64,
    attention: Vec<Vec<f64>>,
    coverage: Vec<f64>,
}

struct Candidate {
    parent: usize,
    token: usize,
    logprob: f64,
    score: f64,
}

/// Beam search from `bos`. `step(prefix)` returns log-probabilities over the
/// target vocabulary for the next token and the cross-attention row of the
/// prefix's last position. Each round keeps the `beam` best extensions
/// overall; those ending in `eos` (or reaching `max_len`) are finished and
/// leave the beam. The search stops when the beam is empty or no live
/// hypothesis can still beat the best finished one. Finished hypotheses are
/// returned best first.
pub fn beam_search<F>(
    mut step: F,
    bos: usize,
    eos: usize,
    banned: &[usize],
    source_mask: &[bool],
    cfg: &BeamConfig,
) -> Result<Vec<BeamHypothesis>>
where
    F: FnMut(&[usize]) -> Result<(Vec<f64>, Vec<f64>)>,
{
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(Error::Invalid("beam and max_len must be at least 1".into()));
    }
    let mut live = vec![Live {
        tokens: vec![bos],
        logprob: 0.0,
        attention: Vec::new(),
        coverage: vec![0.0; source_mask.len()],
    }];
    let mut finished: Vec<BeamHypothesis> = Vec::new();
    for t in 1..=cfg.max_len {
        let lp = length_penalty(t, cfg.alpha);
        let mut rows = Vec::with_capacity(live.len());
        let mut cands = Vec::new();
        for (pi, h) in live.iter().enumerate() {
            let (logprobs, attn) = step(&h.tokens)?;
            if attn.len() != source_mask.len() {
                return Err(Error::Invalid(format!(
                    "attention row has {} entries, source has {}",
                    attn.len(),
                    source_mask.len()
                )));
            }
            let coverage: Vec<f64> = h.coverage.iter().zip(&attn).map(|(c, a)| c + a).collect();
            let cp = cfg.beta * coverage_sum(&coverage, source_mask);
            for (tok, l) in logprobs.iter().enumerate() {
                if tok == bos || banned.contains(&tok) || !l.is_finite() {
                    continue;
                }
                let logprob = h.logprob + l;
                cands.push(Candidate {
                    parent: pi,
                    token: tok,
                    logprob,
                    score: logprob / lp + cp,
                });
            }
            rows.push((attn, coverage));
        }
        let key = |c: &Candidate| {
            let mut v = live[c.parent].tokens.clone();
            v.push(c.token);
            v
        };
        cands.sort_by(|a, b| rank_order(a.score, &key(a), b.score, &key(b)));
        cands.truncate(cfg.beam);
        let mut next = Vec::with_capacity(cands.len());
        for c in cands {
            let parent = &live[c.parent];
            let (row, coverage) = &rows[c.parent];
            let mut tokens = parent.tokens.clone();
            tokens.push(c.token);
            let mut attention = parent.attention.clone();
            attention.push(row.clone());
            if c.token == eos || t == cfg.max_len {
                finished.push(BeamHypothesis {
                    tokens,
                    logprob: c.logprob,
                    attention,
                    finished: true,
                    score: c.score,
                });
            } else {
                next.push(Live {
                    tokens,
                    logprob: c.logprob,
                    attention,
                    coverage: coverage.clone(),
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // No continuation can score above logprob / lp(max_len) since
        // logprob only falls and cp <= 0.
        let best = finished
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let bound = live
            .iter()
            .map(|h| h.logprob / length_penalty(cfg.max_len, cfg.alpha))
            .fold(f64::NEG_INFINITY, f64::max);
        if best >= bound {
            break;
        }
    }
    finished.sort_by(|a, b| rank_order(a.score, &a.tokens, b.score, &b.tokens));
    Ok(finished)
}

/// Greedy decoding: always extend with the single best next token.
pub fn greedy<F>(
    step: F,
    bos: usize,
    eos: usize,
    banned: &[usize],
    source_mask: &[bool],
    cfg: &BeamConfig,
) -> Result<BeamHypothesis>
where
    F: FnMut(&[usize]) -> Result<(Vec<f64>, Vec<f64>)>,
{
    let one = BeamConfig { beam: 1, ..*cfg };
    beam_search(step, bos, eos, banned, source_mask, &one)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::Invalid("decoding produced no hypothesis".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn penalties_closed_form() {
        assert_eq!(length_penalty(1, 0.4), 1.0);
        assert!((length_penalty(5, 0.4) - (10.0f64 / 6.0).powf(0.4)).abs() < 1e-12);
        assert!((length_penalty(5, 0.4) - 1.2267).abs() < 1e-4);
        assert!((1..20).all(|n| length_penalty(n + 1, 0.4) > length_penalty(n, 0.4)));
        let full = vec![vec![1.0, 1.5], vec![0.2, 0.0]];
        assert_eq!(coverage_penalty(&full, &[true, true], 0.4), 0.0);
        let half = vec![vec![0.5, 1.0]];
        assert!((coverage_penalty(&half, &[true, true], 0.4) - 0.4 * 0.5f64.ln()).abs() < 1e-12);
        assert!((coverage_penalty(&half, &[true, true], 0.4) + 0.2773).abs() < 1e-4);
        // Masked positions are ignored; zero coverage is clamped.
        assert_eq!(
            coverage_penalty(&[vec![1.0, 0.0]], &[true, false], 0.4),
            0.0
        );
        assert!(
            (coverage_penalty(&[vec![1.0, 0.0]], &[true, true], 1.0) - COVERAGE_FLOOR.ln()).abs()
                < 1e-9
        );
    }

    /// Table-driven toy model: next-token distribution depends on the last
    /// token and the prefix length; attention on the prefix length.
    struct Toy {
        logits: Vec<Vec<f64>>,
        attn: Vec<Vec<f64>>,
        vocab: usize,
    }

    impl Toy {
        fn new(seed: u64, vocab: usize, src: usize) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = (0..vocab * 8)
                .map(|_| (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let attn = (0..8)
                .map(|_| {
                    let raw: Vec<f64> = (0..src).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|x| x / s).collect()
                })
                .collect();
            Self {
                logits,
                attn,
                vocab,
            }
        }

        fn step(&self, prefix: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
            let last = *prefix.last().unwrap();
            let row = &self.logits[(prefix.len() % 8) * self.vocab + last];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            Ok((
                row.iter().map(|x| x - lse).collect(),
                self.attn[prefix.len() % 8].clone(),
            ))
        }
    }

    fn exhaustive(
        toy: &Toy,
        bos: usize,
        eos: usize,
        banned: &[usize],
        mask: &[bool],
        cfg: &BeamConfig,
    ) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut stack = vec![(vec![bos], 0.0, Vec::<Vec<f64>>::new())];
        while let Some((tokens, lp, att)) = stack.pop() {
            let (logprobs, row) = toy.step(&tokens).unwrap();
            for tok in 0..toy.vocab {
                if tok == bos || banned.contains(&tok) {
                    continue;
                }
                let mut t2 = tokens.clone();
                t2.push(tok);
                let mut a2 = att.clone();
                a2.push(row.clone());
                let l2 = lp + logprobs[tok];
                if tok == eos || a2.len() == cfg.max_len {
                    let s = hypothesis_score(l2, &a2, mask, cfg);
                    let better = match &best {
                        None => true,
                        Some((bt, bs)) => rank_order(s, &t2, *bs, bt) == Ordering::Less,
                    };
                    if better {
                        best = Some((t2, s));
                    }
                } else {
                    stack.push((t2, l2, a2));
                }
            }
        }
        best.unwrap()
    }

    #[test]
    fn wide_beam_matches_exhaustive_search() {
        let cfg = BeamConfig {
            beam: 64,
            alpha: 0.4,
            beta: 0.4,
            max_len: 4,
        };
        for seed in 0..10 {
            let toy = Toy::new(seed, 6, 3);
            let mask = [true; 3];
            let hyps = beam_search(|p| toy.step(p), 1, 2, &[0], &mask, &cfg).unwrap();
            let (tokens, score) = exhaustive(&toy, 1, 2, &[0], &mask, &cfg);
            assert_eq!(hyps[0].tokens, tokens, "seed {seed}");
            assert!((hyps[0].score - score).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_one_is_greedy() {
        let cfg = BeamConfig {
            beam: 1,
            alpha: 0.4,
            beta: 0.4,
            max_len: 6,
        };
        for seed in 0..10 {
            let toy = Toy::new(seed, 6, 3);
            let mask = [true; 3];
            let mut tokens = vec![1];
            loop {
                let (lp, _) = toy.step(&tokens).unwrap();
                let next = (2..6)
                    .max_by(|a, b| lp[*a].total_cmp(&lp[*b]).then(b.cmp(a)))
                    .unwrap();
                tokens.push(next);
                if next == 2 || tokens.len() - 1 == cfg.max_len {
                    break;
                }
            }
            let hyps = beam_search(|p| toy.step(p), 1, 2, &[0], &mask, &cfg).unwrap();
            assert_eq!(hyps.len(), 1);
            assert_eq!(hyps[0].tokens, tokens, "seed {seed}");
        }
    }

    #[test]
    fn hypotheses_start_with_bos_and_track_attention() {
        let toy = Toy::new(3, 6, 4);
        let cfg = BeamConfig {
            beam: 4,
            alpha: 0.4,
            beta: 0.4,
            max_len: 4,
        };
        let hyps = beam_search(|p| toy.step(p), 1, 2, &[0], &[true; 4], &cfg).unwrap();
        assert!(!hyps.is_empty());
        for h in &hyps {
            assert_eq!(h.tokens[0], 1);
            assert_eq!(h.attention.len(), h.len());
            assert!(h.finished);
            assert!(*h.tokens.last().unwrap() == 2 || h.len() == cfg.max_len);
        }
        assert!(hyps.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
