//! Dataset manifests: a deterministic index of samples on disk.
//!
//! Synthetic samples live as SFET pairs (`<id>.real.sfet` +
//! `<id>.imag.sfet`); MSTAR chips keep their original Phoenix files; raw
//! amplitude tensors are single `.sfet` files (imaginary part taken as
//! zero). Labels come from the file itself when it carries one (MSTAR
//! `TargetType=`), then from the first-level subdirectory under the scan
//! root, else the sample is unlabeled.

use super::mstar::{ingest_mstar, looks_like_mstar};
use super::{SampleMeta, SlcImage, Source};
use crate::error::{Result, SfeError};
use crate::mat::Mat;
use crate::sfet;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's base directory.
    pub path: PathBuf,
    pub label: Option<String>,
    pub source: Source,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub class_counts: BTreeMap<String, usize>,
    /// Directory entry paths are relative to. Set on load/build, not stored.
    #[serde(skip)]
    base: PathBuf,
}

impl DatasetManifest {
    /// Build from entries: sorts by id, rejects duplicates, tallies classes.
    pub fn from_entries(mut entries: Vec<ManifestEntry>, base: PathBuf) -> Result<Self> {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        for w in entries.windows(2) {
            if w[0].id == w[1].id {
                return Err(SfeError::DuplicateId(w[0].id.clone()));
            }
        }
        let mut class_counts = BTreeMap::new();
        for e in &entries {
            if let Some(l) = &e.label {
                *class_counts.entry(l.clone()).or_insert(0) += 1;
            }
        }
        Ok(DatasetManifest { entries, class_counts, base })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base(&self) -> &Path {
        &self.base
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> Vec<&str> {
        self.class_counts.keys().map(|s| s.as_str()).collect()
    }

    pub fn entry_path(&self, e: &ManifestEntry) -> PathBuf {
        self.base.join(&e.path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| SfeError::Json { path: path.into(), msg: e.to_string() })?;
        std::fs::write(path, json + "\n").map_err(|e| SfeError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SfeError::io(path, e))?;
        let parsed: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| SfeError::Json { path: path.into(), msg: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        // Re-derive instead of trusting the file: catches hand-edited
        // manifests with duplicate ids or stale counts.
        let rebuilt = Self::from_entries(parsed.entries, base)?;
        if rebuilt.class_counts != parsed.class_counts {
            return Err(SfeError::InvalidData(format!(
                "{}: stored class counts disagree with entries",
                path.display()
            )));
        }
        Ok(rebuilt)
    }

    /// Load the SLC sample behind an entry. The manifest's id/label/source
    /// override whatever metadata the file itself carries.
    pub fn load_entry(&self, e: &ManifestEntry) -> Result<SlcImage> {
        let path = self.entry_path(e);
        let name = path.to_string_lossy();
        let mut img = if name.ends_with(".real.sfet") {
            let real = sfet::read_mat_f32(&path)?;
            let imag_path = PathBuf::from(name.replace(".real.sfet", ".imag.sfet"));
            let imag = sfet::read_mat_f32(&imag_path)?;
            SlcImage::new(real, imag, SampleMeta::new(&e.id, e.label.clone(), e.source))?
        } else if name.ends_with(".sfet") {
            // Amplitude-only tensor: treat as zero-phase SLC.
            let real = sfet::read_mat_f32(&path)?;
            let imag = Mat::zeros(real.rows(), real.cols());
            SlcImage::new(real, imag, SampleMeta::new(&e.id, e.label.clone(), e.source))?
        } else {
            ingest_mstar(&path)?
        };
        img.meta.id = e.id.clone();
        img.meta.class_label = e.label.clone();
        img.meta.source = e.source;
        Ok(img)
    }
}

fn walk_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = std::fs::read_dir(dir).map_err(|e| SfeError::io(dir, e))?;
    let mut items: Vec<PathBuf> = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| SfeError::io(dir, e))?;
        items.push(entry.path());
    }
    items.sort();
    for p in items {
        if p.is_dir() {
            walk_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// First-level subdirectory of `root` containing `path`, if any.
fn subdir_label(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let mut comps = rel.components();
    let first = comps.next()?;
    // Only a label if there is at least one more component (i.e. `first`
    // is a directory, not the file itself).
    comps.next()?;
    Some(first.as_os_str().to_string_lossy().into_owned())
}

/// Scan a directory tree into a manifest.
///
/// Ingestible files: `*.real.sfet` (+ required `*.imag.sfet` sibling),
/// bare `*.sfet` amplitude tensors, and Phoenix-format files (sniffed by
/// header). Everything else — including `manifest.json` itself — is
/// ignored. Scanning is deterministic: files are visited in sorted order
/// and entries end up sorted by id.
pub fn build_manifest(dir: &Path) -> Result<DatasetManifest> {
    if !dir.is_dir() {
        return Err(SfeError::Param(format!("{} is not a directory", dir.display())));
    }
    let mut files = Vec::new();
    walk_files(dir, &mut files)?;

    let mut entries = Vec::new();
    for path in &files {
        let name = match path.file_name() {
            Some(n) => n.to_string_lossy().into_owned(),
            None => continue,
        };
        let rel = path.strip_prefix(dir).unwrap_or(path).to_path_buf();
        if let Some(stem) = name.strip_suffix(".real.sfet") {
            let sibling = path.with_file_name(format!("{stem}.imag.sfet"));
            if !sibling.is_file() {
                return Err(SfeError::InvalidData(format!(
                    "{}: missing imaginary-part sibling {}",
                    path.display(),
                    sibling.display()
                )));
            }
            entries.push(ManifestEntry {
                id: stem.to_string(),
                path: rel,
                label: subdir_label(dir, path),
                source: Source::Synthetic,
            });
        } else if name.ends_with(".imag.sfet") {
            continue; // handled with its .real sibling
        } else if name.ends_with(".sfet") {
            entries.push(ManifestEntry {
                id: name.trim_end_matches(".sfet").to_string(),
                path: rel,
                label: subdir_label(dir, path),
                source: Source::Raw,
            });
        } else if looks_like_mstar(path) {
            let label = ingest_mstar(path)
                .ok()
                .and_then(|img| img.meta.class_label)
                .or_else(|| subdir_label(dir, path));
            entries.push(ManifestEntry {
                id: name,
                path: rel,
                label,
                source: Source::Mstar,
            });
        }
    }
    if entries.is_empty() {
        return Err(SfeError::EmptyDataset(format!(
            "no ingestible samples under {}",
            dir.display()
        )));
    }
    DatasetManifest::from_entries(entries, dir.to_path_buf())
}
