//! Run configuration: one JSON document wiring every module's knobs
//! together.
//!
//! Parsing is strict — unknown keys are errors, reported with their JSON
//! path (`$.train.lr.base` style) so typos like `trian` cannot silently
//! fall back to defaults. A resolved copy (all defaults filled in, the
//! master seed fanned out) is written into the output directory at run
//! start, so any run can be reproduced from its own artifacts.

use crate::augment::AugmentConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Result, SfeError};
use crate::evaluate::{Metric, TsneOptions};
use crate::objective::LossConfig;
use crate::trainer::{FitConfig, TrainConfig};
use std::path::{Path, PathBuf};

/// Name of the resolved-config file written into `output_dir`.
pub const RESOLVED_CONFIG_FILE: &str = "run_config.json";

/// Where the training/evaluation data lives.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory containing `manifest.json` and the image files
    /// it references.
    pub dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { dir: PathBuf::from("data") }
    }
}

impl DataConfig {
    pub fn manifest_path(&self) -> PathBuf {
        self.dir.join("manifest.json")
    }

    pub fn validate(&self) -> Result<()> {
        if self.dir.as_os_str().is_empty() {
            return Err(SfeError::Param("data.dir must not be empty".into()));
        }
        Ok(())
    }
}

/// Frozen-feature evaluation knobs: few-shot k-NN protocol, the PCA
/// baseline, and the 2-D projection.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Neighbor count for the k-NN classifier.
    pub knn_k: u32,
    /// Feature-space distance for k-NN.
    pub metric: Metric,
    /// Support sizes (labels per class) evaluated along the few-shot curve.
    pub shots: Vec<u32>,
    /// Random label subsets averaged per shot count.
    pub repeats: u32,
    /// Seed for support/query splits.
    pub split_seed: u64,
    /// Square side images are resampled to before the PCA baseline.
    pub pca_resize: u32,
    /// Number of principal components kept by the baseline.
    pub pca_dim: u32,
    pub tsne: TsneOptions,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            knn_k: 2,
            metric: Metric::Cosine,
            shots: vec![1, 2, 5, 10],
            repeats: 5,
            split_seed: 42,
            pca_resize: 150,
            pca_dim: 128,
            tsne: TsneOptions::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knn_k == 0 {
            return Err(SfeError::Param("eval.knn_k must be at least 1".into()));
        }
        if self.shots.is_empty() {
            return Err(SfeError::Param("eval.shots must not be empty".into()));
        }
        if self.shots.contains(&0) {
            return Err(SfeError::Param("eval.shots entries must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(SfeError::Param("eval.repeats must be at least 1".into()));
        }
        if self.pca_resize == 0 {
            return Err(SfeError::Param("eval.pca_resize must be at least 1".into()));
        }
        if self.pca_dim == 0 {
            return Err(SfeError::Param("eval.pca_dim must be at least 1".into()));
        }
        self.tsne.validate()
    }
}

/// The full run configuration: `{data, augment, encoder, loss, train,
/// eval}` plus the output directory and an optional master seed.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Directory all run artifacts are written under.
    pub output_dir: PathBuf,
    /// When set, overrides every per-module seed so one knob pins the
    /// whole run; leave unset to control the per-module seeds directly.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            augment: AugmentConfig::default(),
            encoder: EncoderConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            output_dir: PathBuf::from("run"),
            seed: None,
        }
    }
}

impl RunConfig {
    /// Strictly parses `path`. Violations are reported with a `$.`-rooted
    /// JSON path — an unknown key `trian` at the top level comes back as
    /// `$.trian`.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| SfeError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let cfg: RunConfig =
            serde_path_to_error::deserialize(de).map_err(|e| SfeError::Config {
                path: json_path(&e.path().to_string()),
                msg: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.fit_config().validate()?;
        self.eval.validate()?;
        if self.output_dir.as_os_str().is_empty() {
            return Err(SfeError::Param("output_dir must not be empty".into()));
        }
        Ok(())
    }

    /// Copy with the master seed (when present) fanned out to every
    /// per-module seed. Idempotent, so re-running from a resolved config
    /// reproduces the original run exactly.
    pub fn resolved(&self) -> RunConfig {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.augment.rng_seed = seed;
            out.train.seed = seed;
            out.eval.split_seed = seed;
            out.eval.tsne.seed = seed;
        }
        out
    }

    /// The trainer-facing slice of the (resolved) configuration.
    pub fn fit_config(&self) -> FitConfig {
        let r = self.resolved();
        FitConfig { augment: r.augment, encoder: r.encoder, loss: r.loss, train: r.train }
    }

    /// Writes the resolved configuration into `output_dir` for
    /// provenance and returns the file path.
    pub fn save_resolved(&self) -> Result<PathBuf> {
        let resolved = self.resolved();
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| SfeError::io(&self.output_dir, e))?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(&resolved).map_err(|e| SfeError::Json {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| SfeError::io(&path, e))?;
        Ok(path)
    }
}

/// `serde_path_to_error` prints dotted paths (`train.lr.base`) and `.`
/// for the document root; artifacts and error messages use the rooted
/// `$.`-form instead.
fn json_path(track: &str) -> String {
    if track == "." {
        "$".to_string()
    } else {
        format!("$.{track}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn write_cfg(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("run.json");
        std::fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn empty_document_is_all_defaults() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig::load(&write_cfg(dir.path(), "{}")).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.eval.knn_k, 2);
        assert_eq!(cfg.eval.pca_resize, 150);
        assert_eq!(cfg.encoder.n_prototypes, 256);
    }

    #[test]
    fn unknown_top_level_key_reports_rooted_path() {
        let dir = tempdir().unwrap();
        let err = RunConfig::load(&write_cfg(dir.path(), r#"{"trian": {}}"#)).unwrap_err();
        match err {
            SfeError::Config { path, msg } => {
                assert_eq!(path, "$.trian");
                assert!(msg.contains("unknown field `trian`"), "msg: {msg}");
            }
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn nested_violations_report_full_path() {
        let dir = tempdir().unwrap();
        let err = RunConfig::load(&write_cfg(
            dir.path(),
            r#"{"train": {"lr": {"bse": 0.1}}}"#,
        ))
        .unwrap_err();
        match err {
            SfeError::Config { path, .. } => assert_eq!(path, "$.train.lr.bse"),
            other => panic!("expected Config error, got {other:?}"),
        }
        let err = RunConfig::load(&write_cfg(
            dir.path(),
            r#"{"eval": {"knn_k": "two"}}"#,
        ))
        .unwrap_err();
        match err {
            SfeError::Config { path, msg } => {
                assert_eq!(path, "$.eval.knn_k");
                assert!(msg.contains("invalid type"), "msg: {msg}");
            }
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn master_seed_fans_out_and_is_idempotent() {
        let cfg = RunConfig { seed: Some(7), ..RunConfig::default() };
        let resolved = cfg.resolved();
        assert_eq!(resolved.train.seed, 7);
        assert_eq!(resolved.augment.rng_seed, 7);
        assert_eq!(resolved.eval.split_seed, 7);
        assert_eq!(resolved.eval.tsne.seed, 7);
        assert_eq!(resolved.resolved(), resolved);
        // Without a master seed the per-module seeds stand.
        let cfg = RunConfig { seed: None, ..RunConfig::default() };
        assert_eq!(cfg.resolved(), cfg);
    }

    #[test]
    fn resolved_copy_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.seed = Some(99);
        cfg.output_dir = dir.path().join("out");
        cfg.eval.shots = vec![1, 10];
        let path = cfg.save_resolved().unwrap();
        assert_eq!(path.file_name().unwrap(), RESOLVED_CONFIG_FILE);
        let reread = RunConfig::load(&path).unwrap();
        assert_eq!(reread, cfg.resolved());
        // A second save from the reread config is byte-identical.
        let first = std::fs::read(&path).unwrap();
        let mut again = reread.clone();
        again.output_dir = cfg.output_dir.clone();
        again.save_resolved().unwrap();
        let second = std::fs::read(&path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn validation_rejects_bad_eval_settings() {
        let mut cfg = RunConfig::default();
        cfg.eval.shots = vec![];
        assert!(matches!(cfg.validate(), Err(SfeError::Param(_))));
        cfg = RunConfig::default();
        cfg.eval.knn_k = 0;
        assert!(matches!(cfg.validate(), Err(SfeError::Param(_))));
        cfg = RunConfig::default();
        cfg.eval.shots = vec![1, 0];
        assert!(matches!(cfg.validate(), Err(SfeError::Param(_))));
        cfg = RunConfig::default();
        cfg.eval.tsne.perplexity = -1.0;
        assert!(matches!(cfg.validate(), Err(SfeError::Param(_))));
    }

    #[test]
    fn validation_covers_cross_module_constraints() {
        // Local crop smaller than a patch after subband subsampling is a
        // trainer-level constraint and must surface through RunConfig.
        let mut cfg = RunConfig::default();
        cfg.augment.local_crop = 8;
        cfg.augment.subband_fraction = 0.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn metric_parses_snake_case_names() {
        let dir = tempdir().unwrap();
        let cfg = RunConfig::load(&write_cfg(
            dir.path(),
            r#"{"eval": {"metric": "euclidean"}}"#,
        ))
        .unwrap();
        assert_eq!(cfg.eval.metric, Metric::Euclidean);
        assert!(RunConfig::load(&write_cfg(dir.path(), r#"{"eval": {"metric": "cosin"}}"#))
            .is_err());
    }
}
