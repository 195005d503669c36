//! Frozen-feature evaluation: feature extraction over a manifest, the
//! few-shot k-NN protocol, a PCA baseline, and 2-D projection.
//!
//! Training never sees labels; everything here operates on features from
//! a frozen encoder (or the PCA baseline) plus whatever labels the
//! manifest carries. [`FeatureRecord`] is the unit of exchange: the
//! feature CSV written by extraction is what every downstream command
//! consumes.

mod knn;
mod pca;
mod split;
mod tsne;

pub use knn::{knn_classify, KnnOutcome, Metric};
pub use pca::{bilinear_resize, jacobi_eigen, pca_baseline, pca_project};
pub use split::{few_shot_curve, make_split, CurveRow, FewShotSplit};
pub use tsne::{project_2d, Projection2d, TsneOptions};

use crate::encoder::{extract_feature, ModelParams};
use crate::error::{Result, SfeError};
use crate::sar_data::{log_normalize, DatasetManifest};
use rayon::prelude::*;
use std::io::Write as _;
use std::path::Path;

/// One sample's feature vector with its identity and optional label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: Option<String>,
    pub z: Vec<f32>,
}

impl FeatureRecord {
    pub fn new(id: impl Into<String>, label: Option<String>, z: Vec<f32>) -> Self {
        FeatureRecord { id: id.into(), label, z }
    }
}

/// Extraction result: records in manifest order, plus the entries that
/// had to be skipped and why.
#[derive(Debug)]
pub struct ExtractOutcome {
    pub records: Vec<FeatureRecord>,
    pub skipped: Vec<(String, String)>,
}

/// Run the frozen encoder over every manifest entry (no masks, full
/// views). Per-sample failures are collected and skipped; more than 10%
/// of the dataset failing aborts the whole extraction.
pub fn extract_all(
    manifest: &DatasetManifest,
    params: &ModelParams<f32>,
) -> Result<ExtractOutcome> {
    if manifest.is_empty() {
        return Err(SfeError::EmptyDataset("manifest has no entries".into()));
    }
    // Images are independent, so they fan out across the rayon pool; the
    // indexed collect keeps manifest order, and each image's arithmetic
    // is sequential, so output bytes do not depend on the thread count.
    let results: Vec<Result<Vec<f32>>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            manifest
                .load_entry(entry)
                .and_then(|slc| log_normalize(&slc))
                .and_then(|amp| extract_feature(&amp, params))
        })
        .collect();
    let mut records = Vec::with_capacity(manifest.len());
    let mut skipped = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        match result {
            Ok(z) => records.push(FeatureRecord::new(&entry.id, entry.label.clone(), z)),
            Err(e) => skipped.push((entry.id.clone(), e.to_string())),
        }
    }
    if skipped.len() * 10 > manifest.len() {
        return Err(SfeError::Protocol(format!(
            "{} of {} entries failed to extract (over the 10% limit); first failure: {} ({})",
            skipped.len(),
            manifest.len(),
            skipped[0].0,
            skipped[0].1
        )));
    }
    Ok(ExtractOutcome { records, skipped })
}

fn check_csv_field(kind: &str, value: &str) -> Result<()> {
    if value.contains(',') || value.contains('\n') || value.contains('\r') {
        return Err(SfeError::InvalidData(format!(
            "{kind} `{value}` contains a comma or newline and cannot be stored in CSV"
        )));
    }
    Ok(())
}

/// Write records as CSV: header `id,label,z0..z{d-1}`, values printed
/// with 9 significant digits (lossless for f32).
pub fn save_features(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(SfeError::EmptyDataset("no feature records to save".into()));
    }
    let d = records[0].z.len();
    let file = std::fs::File::create(path).map_err(|e| SfeError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut run = || -> std::io::Result<()> {
        write!(w, "id,label")?;
        for i in 0..d {
            write!(w, ",z{i}")?;
        }
        writeln!(w)?;
        for r in records {
            write!(w, "{},{}", r.id, r.label.as_deref().unwrap_or(""))?;
            for v in &r.z {
                write!(w, ",{v:.8e}")?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    for r in records {
        check_csv_field("id", &r.id)?;
        if let Some(l) = &r.label {
            check_csv_field("label", l)?;
        }
        if r.z.len() != d {
            return Err(SfeError::Structure(format!(
                "feature `{}` has {} dims, first record has {d}",
                r.id,
                r.z.len()
            )));
        }
        if !r.z.iter().all(|v| v.is_finite()) {
            return Err(SfeError::InvalidData(format!("feature `{}` is not finite", r.id)));
        }
    }
    run().map_err(|e| SfeError::io(path, e))
}

/// Read a feature CSV written by [`save_features`].
pub fn load_features(path: &Path) -> Result<Vec<FeatureRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| SfeError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| SfeError::InvalidData(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" || cols[2] != "z0" {
        return Err(SfeError::InvalidData(format!(
            "{}: not a feature CSV (header starts `{}`)",
            path.display(),
            &header[..header.len().min(40)]
        )));
    }
    let d = cols.len() - 2;
    let mut records = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(SfeError::InvalidData(format!(
                "{} line {}: {} fields, expected {}",
                path.display(),
                lineno + 1,
                fields.len(),
                d + 2
            )));
        }
        let mut z = Vec::with_capacity(d);
        for f in &fields[2..] {
            let v: f32 = f.parse().map_err(|_| {
                SfeError::InvalidData(format!(
                    "{} line {}: `{f}` is not a float",
                    path.display(),
                    lineno + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(SfeError::InvalidData(format!(
                    "{} line {}: non-finite feature value",
                    path.display(),
                    lineno + 1
                )));
            }
            z.push(v);
        }
        let label = if fields[1].is_empty() { None } else { Some(fields[1].to_string()) };
        records.push(FeatureRecord::new(fields[0], label, z));
    }
    if records.is_empty() {
        return Err(SfeError::EmptyDataset(format!("{}: no data rows", path.display())));
    }
    Ok(records)
}

/// Write a few-shot curve as CSV: `shots,mean_acc,std_acc`.
pub fn save_curve(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut out = String::from("shots,mean_acc,std_acc\n");
    for r in rows {
        out.push_str(&format!("{},{:.6},{:.6}\n", r.shots, r.mean_acc, r.std_acc));
    }
    std::fs::write(path, out).map_err(|e| SfeError::io(path, e))
}

/// Read back a curve CSV written by [`save_curve`].
pub fn load_curve(path: &Path) -> Result<Vec<CurveRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| SfeError::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("shots,mean_acc,std_acc") => {}
        other => {
            return Err(SfeError::InvalidData(format!(
                "{}: expected curve header `shots,mean_acc,std_acc`, got {:?}",
                path.display(),
                other.unwrap_or("")
            )));
        }
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = (|| {
            let [shots, mean, std]: [&str; 3] = fields.as_slice().try_into().ok()?;
            Some(CurveRow {
                shots: shots.parse().ok()?,
                mean_acc: mean.parse().ok()?,
                std_acc: std.parse().ok()?,
            })
        })();
        match parsed {
            Some(row) => rows.push(row),
            None => {
                return Err(SfeError::InvalidData(format!(
                    "{}: line {} is not a curve row: `{line}`",
                    path.display(),
                    lineno + 2
                )));
            }
        }
    }
    Ok(rows)
}

/// Write a 2-D projection as CSV: `id,label,x,y`. Labels come from the
/// records the projection was computed on.
pub fn save_projection(
    path: &Path,
    proj: &Projection2d,
    labels: &std::collections::BTreeMap<String, String>,
) -> Result<()> {
    let mut out = String::from("id,label,x,y\n");
    for (id, x, y) in &proj.points {
        check_csv_field("id", id)?;
        let label = labels.get(id).map(String::as_str).unwrap_or("");
        check_csv_field("label", label)?;
        out.push_str(&format!("{id},{label},{x:.6},{y:.6}\n"));
    }
    std::fs::write(path, out).map_err(|e| SfeError::io(path, e))
}
