//! Candidate scoring, top-X selection and the precision / recall / success
//! evaluation harness with its random baseline.

mod dataset;
mod score;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    degrade, load_dataset, mock_corpus_scores, percentile, synthetic_dataset, write_dataset, CandidateVariant,
    CharacterSet, EvalDataset, LabeledCandidate,
};
pub use score::{connected_components, heuristic_score, HeuristicScorer, ScoreBreakdown, ScoreWeights, Scorer};

#[derive(Debug, Error)]
pub enum RankError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no score for {} candidate(s), first {:?}", .0.len(), .0.first())]
    MissingScores(Vec<String>),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("io: {0}")]
    Io(String),
    #[error("scorer: {0}")]
    Scorer(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub character: String,
    /// Higher is better.
    pub score: f64,
    pub label: Option<bool>,
}

/// Highest scores first, equal scores by ascending id; at most `x` items.
pub fn select_top_x(candidates: &[Candidate], x: usize) -> Vec<Candidate> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    sorted.truncate(x);
    sorted
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopXRow {
    pub x: usize,
    /// Percentages.
    pub precision: f64,
    pub recall: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopXReport {
    pub method: String,
    pub rows: Vec<TopXRow>,
    /// Set for randomized reports.
    pub n_iterations: Option<usize>,
}

impl TopXReport {
    pub fn row(&self, x: usize) -> Option<&TopXRow> {
        self.rows.iter().find(|r| r.x == x)
    }
}

struct Tally {
    selected: usize,
    selected_pos: usize,
    succeeded: usize,
}

impl Tally {
    fn row(&self, x: usize, total_pos: usize, chars: usize) -> TopXRow {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        TopXRow {
            x,
            precision: pct(self.selected_pos, self.selected),
            recall: pct(self.selected_pos, total_pos),
            success_rate: pct(self.succeeded, chars),
        }
    }
}

/// Micro-averaged precision and recall over every selected candidate, and
/// the share of characters that kept at least one positive.
pub fn evaluate_topx(
    dataset: &EvalDataset,
    scores: &HashMap<String, f64>,
    xs: &[usize],
) -> Result<TopXReport, RankError> {
    let missing: Vec<String> = dataset
        .characters
        .iter()
        .flat_map(|c| c.candidates.iter())
        .filter(|c| !scores.contains_key(&c.id))
        .map(|c| c.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(RankError::MissingScores(missing));
    }
    let ranked: Vec<Vec<bool>> = dataset
        .characters
        .iter()
        .map(|set| {
            let cands: Vec<Candidate> = set
                .candidates
                .iter()
                .map(|c| Candidate {
                    id: c.id.clone(),
                    character: set.character.clone(),
                    score: scores[&c.id],
                    label: Some(c.label),
                })
                .collect();
            select_top_x(&cands, cands.len())
                .into_iter()
                .map(|c| c.label == Some(true))
                .collect()
        })
        .collect();
    let total_pos = dataset.positive_count();
    let rows = xs
        .iter()
        .map(|&x| {
            let mut t = Tally {
                selected: 0,
                selected_pos: 0,
                succeeded: 0,
            };
            for labels in &ranked {
                let top = &labels[..x.min(labels.len())];
                let pos = top.iter().filter(|&&l| l).count();
                t.selected += top.len();
                t.selected_pos += pos;
                t.succeeded += (pos > 0) as usize;
            }
            t.row(x, total_pos, ranked.len())
        })
        .collect();
    Ok(TopXReport {
        method: "ranking".into(),
        rows,
        n_iterations: None,
    })
}

/// Means over `n_iterations` draws of X candidates per character chosen
/// uniformly without replacement.
pub fn random_baseline(dataset: &EvalDataset, xs: &[usize], n_iterations: usize, seed: u64) -> TopXReport {
    let n_iterations = n_iterations.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total_pos = dataset.positive_count();
    let chars = dataset.characters.len();
    let mut sums = vec![(0.0, 0.0, 0.0); xs.len()];
    for _ in 0..n_iterations {
        for (k, &x) in xs.iter().enumerate() {
            let mut t = Tally {
                selected: 0,
                selected_pos: 0,
                succeeded: 0,
            };
            for set in &dataset.characters {
                let n = set.candidates.len();
                let take = x.min(n);
                let pos = rand::seq::index::sample(&mut rng, n, take)
                    .iter()
                    .filter(|&i| set.candidates[i].label)
                    .count();
                t.selected += take;
                t.selected_pos += pos;
                t.succeeded += (pos > 0) as usize;
            }
            let r = t.row(x, total_pos, chars);
            sums[k].0 += r.precision;
            sums[k].1 += r.recall;
            sums[k].2 += r.success_rate;
        }
    }
    let inv = 1.0 / n_iterations as f64;
    TopXReport {
        method: "random".into(),
        rows: xs
            .iter()
            .zip(sums)
            .map(|(&x, (p, r, s))| TopXRow {
                x,
                precision: p * inv,
                recall: r * inv,
                success_rate: s * inv,
            })
            .collect(),
        n_iterations: Some(n_iterations),
    }
}

/// Aligned text table: one block of p / r / s rows per report, one
/// column per X.
pub fn format_reports(reports: &[&TopXReport]) -> String {
    let xs: Vec<usize> = reports
        .first()
        .map(|r| r.rows.iter().map(|r| r.x).collect())
        .unwrap_or_default();
    let w = reports.iter().map(|r| r.method.len() + 2).max().unwrap_or(0).max(10);
    let mut out = format!("{:<w$}{:<8}", "Methods", "Metric");
    for x in &xs {
        out.push_str(&format!("{:>8}", format!("Top{x}")));
    }
    out.push('\n');
    for rep in reports {
        for (i, (metric, pick)) in [
            ("p", (|r: &TopXRow| r.precision) as fn(&TopXRow) -> f64),
            ("r", |r: &TopXRow| r.recall),
            ("s", |r: &TopXRow| r.success_rate),
        ]
        .into_iter()
        .enumerate()
        {
            let name = if i == 0 { capitalize(&rep.method) } else { String::new() };
            out.push_str(&format!("{name:<w$}{metric:<8}"));
            for x in &xs {
                let v = rep.row(*x).map(pick).unwrap_or(f64::NAN);
                out.push_str(&format!("{v:>8.1}"));
            }
            out.push('\n');
        }
    }
    for rep in reports {
        if let Some(n) = rep.n_iterations {
            out.push_str(&format!("{} rows average {n} iterations\n", capitalize(&rep.method)));
        }
    }
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, score: f64) -> Candidate {
        Candidate {
            id: id.into(),
            character: "a".into(),
            score,
            label: None,
        }
    }

    #[test]
    fn top_x_orders_and_breaks_ties() {
        let c = vec![cand("b", 1.0), cand("a", 1.0), cand("c", 2.0), cand("d", 0.5)];
        let ids: Vec<String> = select_top_x(&c, 3).into_iter().map(|c| c.id).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(select_top_x(&c, 10).len(), 4);
    }

    #[test]
    fn oracle_counts_on_two_positive_sets() {
        let ds = synthetic_dataset(20, 10, 2, 0);
        let scores: HashMap<String, f64> = ds
            .characters
            .iter()
            .flat_map(|c| c.candidates.iter())
            .map(|c| (c.id.clone(), c.label as u8 as f64))
            .collect();
        let rep = evaluate_topx(&ds, &scores, &[1, 2, 5]).unwrap();
        let r2 = rep.row(2).unwrap();
        assert_eq!((r2.precision, r2.recall, r2.success_rate), (100.0, 100.0, 100.0));
        assert_eq!(rep.row(5).unwrap().precision, 40.0);
        assert_eq!(rep.row(1).unwrap().precision, rep.row(1).unwrap().success_rate);
        let mut partial = scores.clone();
        partial.remove(&ds.characters[0].candidates[0].id);
        assert!(matches!(
            evaluate_topx(&ds, &partial, &[1]),
            Err(RankError::MissingScores(_))
        ));
    }

    #[test]
    fn table_has_a_column_per_x() {
        let ds = synthetic_dataset(4, 5, 1, 1);
        let rep = random_baseline(&ds, &[1, 2], 10, 3);
        let text = format_reports(&[&rep]);
        assert!(text.starts_with("Methods   Metric"));
        assert!(text.contains("Top1") && text.contains("Top2"));
        assert_eq!(text.lines().count(), 5);
    }
}
