//! Subcommand implementations: thin wrappers over the core library that
//! handle paths, print what they wrote, and nothing else.

use crate::{
    CurveArgs, EvalKnnArgs, EvalPcaArgs, ExtractArgs, IngestMstarArgs, ProjectArgs, SynthArgs,
    TrainArgs,
};
use sarsfe_core::config::RunConfig;
use sarsfe_core::error::{Result, SfeError};
use sarsfe_core::evaluate::{
    extract_all, few_shot_curve, load_curve, load_features, pca_baseline, project_2d, save_curve,
    save_features, save_projection, CurveRow, Metric, TsneOptions,
};
use sarsfe_core::rng::{self, key_mix};
use sarsfe_core::sar_data::{
    build_manifest, generate_synthetic, DatasetManifest, ManifestEntry, Source, NUM_CLASSES,
};
use sarsfe_core::sfet;
use sarsfe_core::svg::{line_chart, scatter_chart, ChartOptions, ScatterPoint, Series};
use sarsfe_core::trainer::{fit, load_checkpoint, read_checkpoint_config, StartPoint};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Which of the two trained networks a command reads weights from.
#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ModelChoice {
    /// The EMA teacher — the encoder the pipeline evaluates.
    Teacher,
    /// The gradient-trained student.
    Student,
}

/// Apply `--threads` (or the `SARSFE_THREADS` fallback) to the global
/// worker pool before any work runs.
pub fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SARSFE_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                SfeError::Param(format!("SARSFE_THREADS=`{v}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(SfeError::Param("thread count must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| SfeError::Protocol(format!("worker pool already configured: {e}")))
}

fn wrote(path: &Path) {
    println!("wrote {}", path.display());
}

fn load_manifest_dir(dir: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(&dir.join("manifest.json"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| SfeError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| SfeError::io(path, e))
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.classes == 0 || args.classes > NUM_CLASSES {
        return Err(SfeError::Param(format!(
            "--classes {} outside 1..={NUM_CLASSES}",
            args.classes
        )));
    }
    if args.per_class == 0 {
        return Err(SfeError::EmptyDataset(
            "--per-class 0 would generate an empty dataset".into(),
        ));
    }
    if args.out.exists() {
        let mut entries = std::fs::read_dir(&args.out).map_err(|e| SfeError::io(&args.out, e))?;
        if entries.next().is_some() && !args.force {
            return Err(SfeError::Param(format!(
                "{} exists and is not empty; pass --force to write into it",
                args.out.display()
            )));
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| SfeError::io(&args.out, e))?;

    let mut entries = Vec::new();
    for c in 0..args.classes {
        let label = format!("class_{c}");
        let class_dir = args.out.join(&label);
        std::fs::create_dir_all(&class_dir).map_err(|e| SfeError::io(&class_dir, e))?;
        for i in 0..args.per_class {
            let id = format!("{label}_{i:04}");
            let seed = key_mix(args.seed, &[rng::tags::SYNTH, c as u64, i as u64]);
            let img = generate_synthetic(c, args.size, seed)?;
            sfet::write_mat_f32(&class_dir.join(format!("{id}.real.sfet")), img.real())?;
            sfet::write_mat_f32(&class_dir.join(format!("{id}.imag.sfet")), img.imag())?;
            entries.push(ManifestEntry {
                path: PathBuf::from(&label).join(format!("{id}.real.sfet")),
                id,
                label: Some(label.clone()),
                source: Source::Synthetic,
            });
        }
    }
    let n = entries.len();
    let manifest = DatasetManifest::from_entries(entries, args.out.clone())?;
    let manifest_path = args.out.join("manifest.json");
    manifest.save(&manifest_path)?;
    println!(
        "wrote {n} image pairs ({} classes x {} samples, {}x{}) under {}",
        args.classes, args.per_class, args.size.0, args.size.1,
        args.out.display()
    );
    wrote(&manifest_path);
    Ok(())
}

pub fn ingest_mstar(args: IngestMstarArgs) -> Result<()> {
    let manifest = build_manifest(&args.input)?;
    if manifest.is_empty() {
        return Err(SfeError::EmptyDataset(format!(
            "no ingestible files under {}",
            args.input.display()
        )));
    }
    let out = args.out.unwrap_or_else(|| args.input.join("manifest.json"));
    // Entry paths are relative to the manifest's directory, so it must
    // live at the scan root.
    let same_root = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .is_none_or(|p| match (p.canonicalize(), args.input.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        });
    if !same_root {
        return Err(SfeError::Param(format!(
            "--out {} is outside the scanned directory; entry paths would not resolve",
            out.display()
        )));
    }
    for (label, count) in &manifest.class_counts {
        println!("{label}: {count}");
    }
    println!("total: {} samples, {} classes", manifest.len(), manifest.classes().len());
    manifest.save(&out)?;
    wrote(&out);
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let resolved_path = cfg.save_resolved()?;
    wrote(&resolved_path);

    let manifest = DatasetManifest::load(&cfg.data.manifest_path())?;
    let images = manifest
        .entries
        .iter()
        .map(|e| manifest.load_entry(e))
        .collect::<Result<Vec<_>>>()?;
    let fit_cfg = cfg.fit_config();
    let start = match args.resume {
        Some(dir) => StartPoint::Resume(Box::new(load_checkpoint(&dir, &fit_cfg)?)),
        None => StartPoint::Init,
    };
    let report = fit(&images, &fit_cfg, &cfg.output_dir, start)?;
    println!(
        "trained {} steps; final loss {:.6} (l_sim {:.6}, r {:.6})",
        report.steps,
        report.final_loss.total,
        report.final_loss.similarity,
        report.final_loss.entropy
    );
    wrote(&report.metrics_path);
    wrote(&report.checkpoint_dir);
    Ok(())
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    let fit_cfg = read_checkpoint_config(&args.checkpoint)?;
    let ckpt = load_checkpoint(&args.checkpoint, &fit_cfg)?;
    let params = match args.model {
        ModelChoice::Teacher => &ckpt.teacher,
        ModelChoice::Student => &ckpt.student,
    };
    let manifest = load_manifest_dir(&args.data)?;
    let outcome = extract_all(&manifest, params)?;
    for (id, err) in &outcome.skipped {
        eprintln!("warning: skipped {id}: {err}");
    }
    save_features(&args.out, &outcome.records)?;
    println!("extracted {} features ({} skipped)", outcome.records.len(), outcome.skipped.len());
    wrote(&args.out);
    Ok(())
}

pub fn eval_knn(args: EvalKnnArgs) -> Result<()> {
    let metric = Metric::from_str(&args.metric)?;
    let records = load_features(&args.features)?;
    let rows = few_shot_curve(&records, &args.shots, args.repeats, args.k, metric, args.seed)?;
    for row in &rows {
        println!(
            "{} shots: {:.4} mean accuracy (std {:.4}, {} repeats)",
            row.shots, row.mean_acc, row.std_acc, args.repeats
        );
    }
    save_curve(&args.out, &rows)?;
    wrote(&args.out);
    if let Some(svg_path) = args.svg {
        let text = curve_svg(
            &[(format!("k-NN k={}", args.k), rows)],
            &format!("Few-shot accuracy ({} repeats)", args.repeats),
        )?;
        write_text(&svg_path, &text)?;
        wrote(&svg_path);
    }
    Ok(())
}

pub fn eval_pca(args: EvalPcaArgs) -> Result<()> {
    let manifest = load_manifest_dir(&args.data)?;
    let records = pca_baseline(&manifest, args.resize, args.dim)?;
    save_features(&args.out, &records)?;
    println!(
        "computed {}-component PCA features for {} images resampled to {}x{}",
        args.dim,
        records.len(),
        args.resize,
        args.resize
    );
    wrote(&args.out);
    Ok(())
}

pub fn project(args: ProjectArgs) -> Result<()> {
    let records = load_features(&args.features)?;
    let opts = TsneOptions {
        perplexity: args.perplexity,
        iters: args.iters,
        learning_rate: args.learning_rate,
        seed: args.seed,
    };
    let proj = project_2d(&records, &opts)?;
    let labels: BTreeMap<String, String> = records
        .iter()
        .filter_map(|r| r.label.clone().map(|l| (r.id.clone(), l)))
        .collect();
    save_projection(&args.out, &proj, &labels)?;
    println!("projected {} points; final KL {:.4}", proj.points.len(), proj.final_kl);
    wrote(&args.out);

    let svg_path = args.svg.unwrap_or_else(|| args.out.with_extension("svg"));
    let points: Vec<ScatterPoint> = proj
        .points
        .iter()
        .map(|(id, x, y)| ScatterPoint { x: *x, y: *y, label: labels.get(id).cloned() })
        .collect();
    let chart_opts = ChartOptions {
        title: "2-D feature projection".into(),
        x_label: "t-SNE 1".into(),
        y_label: "t-SNE 2".into(),
        ..ChartOptions::default()
    };
    write_text(&svg_path, &scatter_chart(&points, &chart_opts)?)?;
    wrote(&svg_path);
    Ok(())
}

pub fn curve(args: CurveArgs) -> Result<()> {
    let mut curves = Vec::new();
    for input in &args.inputs {
        let Some((name, path)) = input.split_once('=') else {
            return Err(SfeError::Param(format!(
                "--input `{input}` is not of the form name=path"
            )));
        };
        curves.push((name.to_string(), load_curve(Path::new(path))?));
    }
    let text = curve_svg(&curves, &args.title)?;
    write_text(&args.out, &text)?;
    wrote(&args.out);
    Ok(())
}

fn curve_svg(curves: &[(String, Vec<CurveRow>)], title: &str) -> Result<String> {
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, rows)| Series {
            name: name.clone(),
            points: rows.iter().map(|r| (r.shots as f64, r.mean_acc)).collect(),
            whiskers: Some(rows.iter().map(|r| r.std_acc).collect()),
        })
        .collect();
    let opts = ChartOptions {
        title: title.into(),
        x_label: "labels per class".into(),
        y_label: "accuracy".into(),
        ..ChartOptions::default()
    };
    line_chart(&series, &opts)
}
