use crate::error::{Error, Result};

/// Fake-class scores with ground-truth labels for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub source_name: String,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>, source_name: impl Into<String>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.is_empty() {
            return Err(Error::Dataset("no scored samples".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("label {bad} is not 0 or 1")));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score".into()));
        }
        Ok(Self {
            scores,
            labels,
            source_name: source_name.into(),
        })
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Percentage of samples whose prediction `score ≥ threshold` (fake) matches
/// the label.
pub fn accuracy(set: &ScoredSet, threshold: f64) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Dataset("accuracy of an empty set".into()));
    }
    let correct = set
        .scores
        .iter()
        .zip(&set.labels)
        .filter(|(&s, &l)| (s >= threshold) == (l == 1))
        .count();
    Ok(100.0 * correct as f64 / set.len() as f64)
}

/// Ranking by descending score, ties by ascending original index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mean of the precision at each positive of the ranking, as a percentage.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let positives = set.positives();
    if positives == 0 || positives == set.len() {
        return Err(Error::Dataset(format!(
            "average precision of '{}' needs both classes",
            set.source_name
        )));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(&set.scores).iter().enumerate() {
        if set.labels[i] == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(100.0 * sum / positives as f64)
}
