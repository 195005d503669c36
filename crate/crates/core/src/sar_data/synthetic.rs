//! Synthetic SLC scene generator.
//!
//! Produces fully developed speckle over a class-specific reflectivity
//! map: a constant clutter floor plus a constellation of point
//! scatterers whose local geometry identifies the class. Scatterers are
//! grouped into compact clusters (filled disks) whose radius is the class
//! signature — 1, 2, 3, or 5 pixels for classes 0-3 — stamped at seeded
//! random positions, so class identity lives in local scatterer scale
//! rather than in absolute position or total brightness. Cluster scale is
//! robust under single-look speckle: individual pixels fluctuate wildly,
//! but the bright-pixel count of a cluster concentrates near its area.
//!
//! Per-class pixel budgets are matched (about 160-200 bright pixels per
//! 64x64 scene) and cluster counts scale with image area, leaving local
//! scale as the only reliable discriminating cue.
//!
//! Under the fully developed speckle model each pixel is circular
//! complex Gaussian,
//!
//! ```text
//! z = sqrt(sigma / 2) * (g_re + i g_im),   g ~ N(0, 1) iid
//! ```
//!
//! so `E|z|^2 = sigma` and the intensity is exponential with
//! `var / mean^2 = 1` — the single-look speckle signature.
//!
//! Draws are counter-based: each pixel's Gaussians are keyed by
//! `(seed, class, row, col)` and motif placement by its own
//! `(seed, class)` stream, so the same arguments always produce the
//! same scene, pixel for pixel.

use super::{SampleMeta, SlcImage, Source};
use crate::error::{Result, SfeError};
use crate::mat::Mat;
use crate::rng::{self, keyed_gauss_pair, Prng};

pub const NUM_CLASSES: u32 = 4;

/// Background reflectivity; scatterer peaks sit at `PEAK_GAIN` times this
/// (30 dB target-to-clutter ratio, in the range of real SAR targets).
pub const CLUTTER_FLOOR: f32 = 1.0;
const PEAK_GAIN: f64 = 1000.0;

/// Stream tag separating motif placement from the per-pixel speckle draws.
const PLACEMENT_STREAM: u64 = 0x504c_4143; // "PLAC"

/// Scatterer-cluster radius per class: the discriminating scale ladder.
const CLASS_RADIUS: [i64; NUM_CLASSES as usize] = [1, 2, 3, 5];

/// Pixel offsets of one motif instance relative to its top-left anchor,
/// plus the motif's bounding box: a filled disk of the class radius.
fn motif(class_id: u32) -> (Vec<(usize, usize)>, (usize, usize)) {
    let radius = CLASS_RADIUS[class_id as usize];
    let box_side = (2 * radius + 1) as usize;
    let mut cells = Vec::new();
    for r in 0..box_side as i64 {
        for c in 0..box_side as i64 {
            if (r - radius).pow(2) + (c - radius).pow(2) <= radius * radius {
                cells.push((r as usize, c as usize));
            }
        }
    }
    (cells, (box_side, box_side))
}

/// Motif count for a class at the reference 64x64 size; scaled by area.
/// Counts balance per-class pixel budgets (162-203 bright px at 64x64),
/// so total brightness is not a class cue — only cluster scale is.
fn base_count(class_id: u32) -> f64 {
    match class_id {
        0 => 38.0, // 38 x  5 px = 190
        1 => 15.0, // 15 x 13 px = 195
        2 => 7.0,  //  7 x 29 px = 203
        3 => 2.0,  //  2 x 81 px = 162
        _ => unreachable!("validated by callers"),
    }
}

fn check_args(class_id: u32, (h, w): (usize, usize)) -> Result<()> {
    if class_id >= NUM_CLASSES {
        return Err(SfeError::Param(format!(
            "class_id {class_id} outside 0..{NUM_CLASSES}"
        )));
    }
    if h < 16 || w < 16 {
        return Err(SfeError::Param(format!(
            "synthetic size {h}x{w} below the 16x16 minimum"
        )));
    }
    Ok(())
}

/// Deterministic noise-free reflectivity map for a class. Exposed so tests
/// can check scene geometry without speckle in the way. The same
/// `(class_id, size, seed)` always yields the same map.
pub fn reflectivity_map(class_id: u32, size: (usize, usize), seed: u64) -> Result<Mat<f32>> {
    check_args(class_id, size)?;
    let (h, w) = size;
    let peak = (CLUTTER_FLOOR as f64 * PEAK_GAIN) as f32;
    let area_scale = (h * w) as f64 / (64.0 * 64.0);
    let count = (base_count(class_id) * area_scale).round().max(1.0) as u64;
    let mut rng = Prng::from_tags(seed, &[rng::tags::SYNTH, class_id as u64, PLACEMENT_STREAM]);
    let mut map = Mat::filled(h, w, CLUTTER_FLOOR);
    let (cells, (bh, bw)) = motif(class_id);
    // Anchors sit on an 8-px lattice (the sensor's range/azimuth
    // resolution cells), each cluster in its own cell so budgets hold
    // exactly. Which cells are occupied is what varies between samples.
    let lattice = 8usize;
    let (rows, cols) = ((h - bh) / lattice + 1, (w - bw) / lattice + 1);
    let count = (count as usize).min(rows * cols);
    for cell in rng.sample_indices(rows * cols, count) {
        let (r0, c0) = (lattice * (cell / cols), lattice * (cell % cols));
        for &(dr, dc) in &cells {
            map[(r0 + dr, c0 + dc)] = peak;
        }
    }
    Ok(map)
}

/// Generate one speckled SLC scene.
pub fn generate_synthetic(class_id: u32, size: (usize, usize), seed: u64) -> Result<SlcImage> {
    let sigma = reflectivity_map(class_id, size, seed)?;
    let (h, w) = size;
    let mut real = Mat::zeros(h, w);
    let mut imag = Mat::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let (g_re, g_im) =
                keyed_gauss_pair(seed, &[rng::tags::SYNTH, class_id as u64, r as u64, c as u64]);
            let scale = (sigma[(r, c)] as f64 / 2.0).sqrt();
            real[(r, c)] = (scale * g_re) as f32;
            imag[(r, c)] = (scale * g_im) as f32;
        }
    }
    let meta = SampleMeta {
        id: format!("class_{class_id}_{seed:016x}"),
        class_label: Some(format!("class_{class_id}")),
        source: Source::Synthetic,
        seed: Some(seed),
    };
    SlcImage::new(real, imag, meta)
}
