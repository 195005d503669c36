//! k-nearest-neighbor classification over frozen features.
//!
//! Distances default to cosine (`1 - cosine similarity`), matching the
//! cosine geometry the prototype scores are trained in; Euclidean is
//! available behind the same interface. Among the `k` nearest support
//! points the majority label wins; a tied vote falls back to the single
//! nearest neighbor's label, which makes `k = 2` with distinct neighbor
//! labels behave exactly like 1-NN.

use super::FeatureRecord;
use crate::error::{Result, SfeError};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    Euclidean,
}

impl Default for Metric {
    fn default() -> Self {
        Metric::Cosine
    }
}

impl std::str::FromStr for Metric {
    type Err = SfeError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(SfeError::Param(format!(
                "unknown metric `{other}`; use cosine or euclidean"
            ))),
        }
    }
}

/// Distance between two feature vectors, accumulated in f64 so the
/// ordering is reproducible regardless of feature magnitudes.
pub(crate) fn distance(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => {
            let mut dot = 0.0f64;
            let mut na = 0.0f64;
            let mut nb = 0.0f64;
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (x as f64, y as f64);
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na <= 0.0 || nb <= 0.0 {
                // A zero vector has no direction; treat it as orthogonal
                // to everything so it never wins a neighborhood.
                return 1.0;
            }
            1.0 - dot / (na.sqrt() * nb.sqrt())
        }
        Metric::Euclidean => {
            let mut acc = 0.0f64;
            for (&x, &y) in a.iter().zip(b) {
                let d = x as f64 - y as f64;
                acc += d * d;
            }
            acc.sqrt()
        }
    }
}

/// Classification result for a query set.
#[derive(Clone, Debug)]
pub struct KnnOutcome {
    /// Predicted label per query, in query order.
    pub predicted: Vec<String>,
    /// Fraction correct over the queries that carry labels; `None` when
    /// no query is labeled.
    pub accuracy: Option<f64>,
    pub n_correct: usize,
    pub n_labeled_queries: usize,
}

/// Classify each query by majority vote among its `k` nearest support
/// points (ties to the nearest neighbor). Every support record must be
/// labeled; feature dimensions must agree everywhere.
pub fn knn_classify(
    support: &[FeatureRecord],
    query: &[FeatureRecord],
    k: u32,
    metric: Metric,
) -> Result<KnnOutcome> {
    if support.is_empty() {
        return Err(SfeError::Protocol("k-NN needs a non-empty support set".into()));
    }
    if k == 0 {
        return Err(SfeError::Param("k must be >= 1".into()));
    }
    if k as usize > support.len() {
        return Err(SfeError::Param(format!(
            "k = {k} exceeds the support size {}",
            support.len()
        )));
    }
    let d = support[0].z.len();
    for r in support.iter().chain(query) {
        if r.z.len() != d {
            return Err(SfeError::Structure(format!(
                "feature `{}` has {} dims, support has {d}",
                r.id,
                r.z.len()
            )));
        }
        if !r.z.iter().all(|v| v.is_finite()) {
            return Err(SfeError::InvalidData(format!("feature `{}` is not finite", r.id)));
        }
    }
    for r in support {
        if r.label.is_none() {
            return Err(SfeError::Protocol(format!(
                "support record `{}` has no label",
                r.id
            )));
        }
    }

    let k = k as usize;
    let mut predicted = Vec::with_capacity(query.len());
    let mut n_correct = 0usize;
    let mut n_labeled = 0usize;
    for q in query {
        // Stable total order: distance first, then support index, so equal
        // distances resolve the same way on every platform.
        let mut order: Vec<(f64, usize)> = support
            .iter()
            .enumerate()
            .map(|(i, s)| (distance(&q.z, &s.z, metric), i))
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));

        let mut votes: BTreeMap<&str, usize> = BTreeMap::new();
        for &(_, i) in &order[..k] {
            *votes.entry(support[i].label.as_deref().expect("validated")).or_insert(0) += 1;
        }
        let best = votes.values().copied().max().expect("k >= 1");
        let tied = votes.values().filter(|&&c| c == best).count() > 1;
        let label = if tied {
            support[order[0].1].label.as_deref().expect("validated")
        } else {
            votes
                .iter()
                .find(|(_, &c)| c == best)
                .map(|(&l, _)| l)
                .expect("a max exists")
        };
        if let Some(truth) = &q.label {
            n_labeled += 1;
            if truth == label {
                n_correct += 1;
            }
        }
        predicted.push(label.to_string());
    }
    let accuracy = (n_labeled > 0).then(|| n_correct as f64 / n_labeled as f64);
    Ok(KnnOutcome { predicted, accuracy, n_correct, n_labeled_queries: n_labeled })
}
