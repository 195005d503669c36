//! Few-shot evaluation protocol: seeded support/query splits and the
//! accuracy-versus-shots curve.

use super::knn::{knn_classify, Metric};
use super::FeatureRecord;
use crate::error::{Result, SfeError};
use crate::rng::{self, Prng};
use std::collections::BTreeMap;

/// A labeled support set and its complementary query set, both sorted.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FewShotSplit {
    pub shots_per_class: u32,
    pub seed: u64,
    pub support: Vec<String>,
    pub query: Vec<String>,
}

/// Sample `shots` ids per class without replacement (all of a class if it
/// is smaller); everything else labeled becomes the query. Unlabeled
/// records take part in neither. The draw depends only on the seed and
/// the set of labeled ids, not on record order.
pub fn make_split(records: &[FeatureRecord], shots: u32, seed: u64) -> Result<FewShotSplit> {
    if shots == 0 {
        return Err(SfeError::Param("shots must be >= 1".into()));
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(SfeError::DuplicateId(r.id.clone()));
        }
        if let Some(label) = &r.label {
            by_class.entry(label).or_default().push(&r.id);
        }
    }
    if by_class.is_empty() {
        return Err(SfeError::Protocol(
            "cannot build a few-shot split from unlabeled records".into(),
        ));
    }
    let mut rng = Prng::from_tags(seed, &[rng::tags::SPLIT]);
    let mut support = Vec::new();
    let mut query = Vec::new();
    for ids in by_class.values_mut() {
        ids.sort_unstable();
        let take = (shots as usize).min(ids.len());
        let picked = rng.sample_indices(ids.len(), take);
        let picked: std::collections::BTreeSet<usize> = picked.into_iter().collect();
        for (i, id) in ids.iter().enumerate() {
            if picked.contains(&i) {
                support.push(id.to_string());
            } else {
                query.push(id.to_string());
            }
        }
    }
    support.sort_unstable();
    query.sort_unstable();
    Ok(FewShotSplit { shots_per_class: shots, seed, support, query })
}

/// One row of the accuracy-versus-shots table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub shots: u32,
    pub mean_acc: f64,
    pub std_acc: f64,
}

/// For each shot count, run `repeats` independent splits (seeded
/// `seed + r`), classify the queries with k-NN, and aggregate mean and
/// population standard deviation of the accuracy.
pub fn few_shot_curve(
    features: &[FeatureRecord],
    shot_list: &[u32],
    repeats: u32,
    k: u32,
    metric: Metric,
    seed: u64,
) -> Result<Vec<CurveRow>> {
    if repeats == 0 {
        return Err(SfeError::Param("repeats must be >= 1".into()));
    }
    if shot_list.is_empty() {
        return Err(SfeError::Param("shot_list must not be empty".into()));
    }
    let index: BTreeMap<&str, &FeatureRecord> =
        features.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut rows = Vec::with_capacity(shot_list.len());
    for &shots in shot_list {
        let mut accs = Vec::with_capacity(repeats as usize);
        for r in 0..repeats as u64 {
            let split = make_split(features, shots, seed + r)?;
            let support: Vec<FeatureRecord> =
                split.support.iter().map(|id| index[id.as_str()].clone()).collect();
            let query: Vec<FeatureRecord> =
                split.query.iter().map(|id| index[id.as_str()].clone()).collect();
            if query.is_empty() {
                return Err(SfeError::Protocol(format!(
                    "shots = {shots} consumes every labeled record; nothing left to query"
                )));
            }
            let outcome = knn_classify(&support, &query, k, metric)?;
            let acc = outcome.accuracy.ok_or_else(|| {
                SfeError::Protocol("query set carries no labels to score against".into())
            })?;
            accs.push(acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
        rows.push(CurveRow { shots, mean_acc: mean, std_acc: var.sqrt() });
    }
    Ok(rows)
}
