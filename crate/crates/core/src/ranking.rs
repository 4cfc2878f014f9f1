//! Ranked recommendation results shared by the CNN ranker and the baseline.

use serde::{Deserialize, Serialize};

use crate::corpus::{ClusterView, Corpus};
use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    /// 1-based.
    pub rank: usize,
    pub class_id: usize,
    pub cluster_id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api: Option<ClusterView>,
}

/// Anything that scores every class for a processed query.
pub trait Ranker: Send + Sync {
    fn num_classes(&self) -> usize;

    /// One score per class; higher is better.
    fn scores(&self, query: &TokenSequence) -> Result<Vec<f64>>;
}

/// Classes ordered by descending score, ties by ascending class id.
pub fn order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// 1-based position `gold` would take in [`order`].
pub fn gold_rank(scores: &[f64], gold: usize) -> usize {
    let g = scores[gold];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s.total_cmp(&g).is_gt() || (s.total_cmp(&g).is_eq() && j < gold))
        .count()
}

pub fn check_k(k: usize, classes: usize) -> Result<()> {
    if k == 0 || k > classes {
        return Err(Error::KOutOfRange { k, max: classes });
    }
    Ok(())
}

pub fn top_k(scores: &[f64], class_index: &[String], k: usize) -> Result<Vec<RankedResult>> {
    check_k(k, scores.len())?;
    Ok(order(scores)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, c)| RankedResult {
            rank: i + 1,
            class_id: c,
            cluster_id: class_index[c].clone(),
            score: scores[c],
            api: None,
        })
        .collect())
}

/// Fills the displayable cluster fields from the corpus.
pub fn render(results: &mut [RankedResult], corpus: &Corpus) {
    for r in results {
        if r.class_id < corpus.num_classes() {
            r.api = Some(corpus.cluster_view(r.class_id));
        }
    }
}
