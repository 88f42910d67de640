use crate::analogy::ScoredCandidate;
use crate::error::{Error, Result};
use crate::text::WhType;

/// One question's candidates in ranked order, with gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub question_id: String,
    pub wh_type: WhType,
    /// Best first; `index` points into `labels`.
    pub entries: Vec<ScoredCandidate>,
    /// Gold label per candidate, in original candidate order.
    pub labels: Vec<bool>,
}

impl RankedList {
    pub fn ranked_labels(&self) -> Vec<bool> {
        self.entries.iter().map(|e| self.labels[e.index]).collect()
    }
}

/// `1 / rank` of the first positive (1-based), or `None` without positives.
pub fn reciprocal_rank(ranked_labels: &[bool]) -> Option<f64> {
    ranked_labels
        .iter()
        .position(|&l| l)
        .map(|i| 1.0 / (i + 1) as f64)
}

/// Mean of precision@rank over the ranks holding positives.
pub fn average_precision(ranked_labels: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &l) in ranked_labels.iter().enumerate() {
        if l {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

fn mean_of(lists: &[RankedList], f: fn(&[bool]) -> Option<f64>, what: &str) -> Result<f64> {
    if lists.is_empty() {
        return Err(Error::Domain(format!("{what} of an empty question set")));
    }
    let mut total = 0.0;
    for l in lists {
        total += f(&l.ranked_labels()).ok_or_else(|| {
            Error::Contract(format!("question {} has no correct candidate", l.question_id))
        })?;
    }
    Ok(total / lists.len() as f64)
}

pub fn mrr(lists: &[RankedList]) -> Result<f64> {
    mean_of(lists, reciprocal_rank, "MRR")
}

pub fn map(lists: &[RankedList]) -> Result<f64> {
    mean_of(lists, average_precision, "MAP")
}
