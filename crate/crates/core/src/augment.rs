//! SAR-specific augmentations and multi-view assembly.
//!
//! One source SLC sample becomes a [`ViewSet`]:
//!
//! ```text
//!               +-- multilook despeckle --> global crop --------------> teacher view
//! SLC sample ---+
//!               +-- log normalize --> crop --> (subband?) --> shift --> student view x (1 + n_local)
//!                                                                       each with a patch mask
//! ```
//!
//! The teacher sees one clean global view; students see one global and
//! `n_local` local crops, each independently subsampled in the frequency
//! domain with probability 1/2, mean-shifted, and assigned a random patch
//! mask. All randomness comes from the caller's [`Prng`] in a documented
//! draw order (per view: crop row, crop col, subband coin, shift delta,
//! mask), so a reseeded stream reproduces the exact view set.

use crate::error::{Result, SfeError};
use crate::mat::Mat;
use crate::rng::Prng;
use crate::sar_data::{
    log_normalize, multilook_despeckle, reflect_index, AmplitudeImage, SlcImage,
};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Side of the global (teacher and first student) crop.
    pub global_crop: u32,
    /// Side of the local student crops.
    pub local_crop: u32,
    /// Number of local student views.
    pub n_local: u32,
    /// Spectral fraction kept per axis by subband subsampling.
    pub subband_fraction: f32,
    /// Fraction of patches dropped from each student view.
    pub mask_ratio: f32,
    /// Mean shift is drawn uniformly from [-mean_shift_range, +mean_shift_range].
    pub mean_shift_range: f32,
    /// Boxcar looks for the teacher's despeckled view.
    pub despeckle_looks: u32,
    /// Stream seed when augmenting outside the trainer.
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            global_crop: 64,
            local_crop: 32,
            n_local: 3,
            subband_fraction: 0.5,
            mask_ratio: 0.5,
            mean_shift_range: 0.2,
            despeckle_looks: 3,
            rng_seed: 42,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.global_crop == 0 || self.local_crop == 0 {
            return Err(SfeError::Param("crop sizes must be >= 1".into()));
        }
        if self.local_crop > self.global_crop {
            return Err(SfeError::Param(format!(
                "local crop {} larger than global crop {}",
                self.local_crop, self.global_crop
            )));
        }
        if !(self.subband_fraction > 0.0 && self.subband_fraction <= 1.0) {
            return Err(SfeError::Param(format!(
                "subband_fraction {} outside (0, 1]",
                self.subband_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(SfeError::Param(format!(
                "mask_ratio {} outside [0, 1)",
                self.mask_ratio
            )));
        }
        if !(0.0..=0.5).contains(&self.mean_shift_range) {
            return Err(SfeError::Param(format!(
                "mean_shift_range {} outside [0, 0.5]",
                self.mean_shift_range
            )));
        }
        if self.despeckle_looks == 0 {
            return Err(SfeError::Param("despeckle_looks must be >= 1".into()));
        }
        Ok(())
    }
}

/// One augmented training unit: a clean teacher view plus masked student
/// views. `student_masks[i]` has one flag per patch of `student_views[i]`
/// (true = dropped).
#[derive(Clone, Debug)]
pub struct ViewSet {
    pub teacher_view: AmplitudeImage,
    pub student_views: Vec<AmplitudeImage>,
    pub student_masks: Vec<Vec<bool>>,
    /// Human-readable description of how each view was produced, for
    /// debugging augmentation pipelines. Index 0 is the teacher.
    pub provenance: Vec<String>,
}

/// Square crop to `size x size`. Oversized axes crop at a uniformly random
/// offset; undersized axes are mirror-padded symmetrically (centered, left
/// bias on odd padding). Draw order: row offset, then column offset; an
/// axis draws even when only one position is valid, so the stream advances
/// the same way for every image of a given size.
pub fn crop(img: &AmplitudeImage, size: u32, rng: &mut Prng) -> AmplitudeImage {
    let s = size as usize;
    let (h, w) = img.shape();
    let src = img.data();

    enum Axis {
        Offset(usize),
        Pad(usize),
    }
    let mut plan = |n: usize| {
        if n >= s {
            Axis::Offset(rng.below((n - s + 1) as u64) as usize)
        } else {
            Axis::Pad((s - n) / 2)
        }
    };
    let rows = plan(h);
    let cols = plan(w);
    let index = |axis: &Axis, i: usize, n: usize| -> usize {
        match axis {
            Axis::Offset(o) => o + i,
            Axis::Pad(p) => reflect_index(i as isize - *p as isize, n),
        }
    };
    let data = Mat::from_fn(s, s, |r, c| src[(index(&rows, r, h), index(&cols, c, w))]);
    AmplitudeImage::new(data, img.meta.clone()).expect("crop preserves [0,1] range")
}

/// 2-D FFT in place on row-major data; `inverse` applies the conjugate
/// transform. Neither direction normalizes.
fn fft_2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft =
        if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    row_fft.process(buf);
    // Columns: transpose, run rows, transpose back.
    let mut t = vec![Complex64::default(); buf.len()];
    for r in 0..h {
        for c in 0..w {
            t[c * h + r] = buf[r * w + c];
        }
    }
    let col_fft =
        if inverse { planner.plan_fft_inverse(h) } else { planner.plan_fft_forward(h) };
    col_fft.process(&mut t);
    for r in 0..h {
        for c in 0..w {
            buf[r * w + c] = t[c * h + r];
        }
    }
}

fn subband_dims(h: usize, w: usize, rho: f32) -> Result<(usize, usize)> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(SfeError::Param(format!("subband fraction {rho} outside (0, 1]")));
    }
    let hh = (rho as f64 * h as f64).ceil() as usize;
    let ww = (rho as f64 * w as f64).ceil() as usize;
    Ok((hh.max(1).min(h), ww.max(1).min(w)))
}

/// Crop the centered spectral block and inverse-transform at the reduced
/// size. Shared by the amplitude and SLC variants. Input is row-major
/// complex; output is `h' x w'` complex, scaled so a constant image keeps
/// its value (the kept block loses `(h'w')/(hw)` of the sample count, and
/// the DC gain compensation restores the original mean level).
fn spectral_crop(
    input: Vec<Complex64>,
    h: usize,
    w: usize,
    hh: usize,
    ww: usize,
) -> Vec<Complex64> {
    let mut buf = input;
    fft_2d(&mut buf, h, w, false);

    // fftshift: DC moves to (h/2, w/2); crop the centered h' x w' block;
    // ifftshift it back for the inverse transform. Folded into one
    // index mapping: kept[r][c] (already unshifted) comes from the source
    // frequency ((r + h'/2) % h' adjusted into the shifted frame).
    let (ch, cw) = (h / 2, w / 2);
    let (r0, c0) = (ch - hh / 2, cw - ww / 2);
    let mut kept = vec![Complex64::default(); hh * ww];
    for r in 0..hh {
        // Position r0+r in the shifted spectrum came from source row
        // (r0 + r - h/2) mod h; destination after ifftshift is
        // (r + h'/2) mod h' ... inverted: dest row d reads shifted row
        // (d + h'/2) mod h'.
        let shifted_r = (r + hh / 2) % hh; // row in the cropped, shifted block
        let src_r = (r0 + shifted_r + h - ch) % h;
        for c in 0..ww {
            let shifted_c = (c + ww / 2) % ww;
            let src_c = (c0 + shifted_c + w - cw) % w;
            kept[r * ww + c] = buf[src_r * w + src_c];
        }
    }
    fft_2d(&mut kept, hh, ww, true);
    // Inverse normalization (1/h'w') x DC compensation (h'w'/hw) = 1/(hw).
    let scale = 1.0 / (h as f64 * w as f64);
    for v in &mut kept {
        *v *= scale;
    }
    kept
}

/// Frequency-domain subsampling of an amplitude view: keep the centered
/// `ceil(rho*h) x ceil(rho*w)` spectral block and resynthesize at that
/// size. Output magnitudes are clipped to [0, 1] (resynthesis can
/// overshoot slightly near edges).
pub fn subband_subsample(img: &AmplitudeImage, rho: f32) -> Result<AmplitudeImage> {
    let (h, w) = img.shape();
    let (hh, ww) = subband_dims(h, w, rho)?;
    let input: Vec<Complex64> =
        img.data().as_slice().iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
    let out = spectral_crop(input, h, w, hh, ww);
    let data = Mat::from_vec(
        hh,
        ww,
        out.iter().map(|z| (z.norm() as f32).clamp(0.0, 1.0)).collect(),
    );
    AmplitudeImage::new(data, img.meta.clone())
}

/// SLC variant of [`subband_subsample`]: same spectral crop applied to the
/// complex signal itself, preserving phase structure. No range clipping.
pub fn subband_subsample_slc(img: &SlcImage, rho: f32) -> Result<SlcImage> {
    let (h, w) = img.shape();
    let (hh, ww) = subband_dims(h, w, rho)?;
    let input: Vec<Complex64> = img
        .real()
        .as_slice()
        .iter()
        .zip(img.imag().as_slice())
        .map(|(&re, &im)| Complex64::new(re as f64, im as f64))
        .collect();
    let out = spectral_crop(input, h, w, hh, ww);
    let real = Mat::from_vec(hh, ww, out.iter().map(|z| z.re as f32).collect());
    let imag = Mat::from_vec(hh, ww, out.iter().map(|z| z.im as f32).collect());
    SlcImage::new(real, imag, img.meta.clone())
}

/// Random patch mask: exactly `floor(ratio * p)` of `p` patches dropped,
/// uniform over subsets. `true` marks a dropped patch.
pub fn patch_mask(p: u32, ratio: f32, rng: &mut Prng) -> Result<Vec<bool>> {
    if p == 0 {
        return Err(SfeError::Param("patch count must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&ratio) {
        return Err(SfeError::Param(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let k = (ratio as f64 * p as f64).floor() as usize;
    let mut mask = vec![false; p as usize];
    for i in rng.sample_indices(p as usize, k) {
        mask[i] = true;
    }
    Ok(mask)
}

/// Add a single uniform draw from [-delta_max, +delta_max] to every pixel,
/// clamping back into [0, 1]. Simulates global backscatter level changes.
pub fn mean_shift(img: &AmplitudeImage, delta_max: f32, rng: &mut Prng) -> Result<AmplitudeImage> {
    if !(0.0..=0.5).contains(&delta_max) {
        return Err(SfeError::Param(format!("mean shift range {delta_max} outside [0, 0.5]")));
    }
    let delta = rng.range(-delta_max as f64, delta_max as f64) as f32;
    let data = img.data().map(|v| (v + delta).clamp(0.0, 1.0));
    AmplitudeImage::new(data, img.meta.clone())
}

/// Assemble the full view set for one sample. `patch_size` is the
/// encoder's patch side, needed to size each student view's mask
/// (`floor(h/ps) * floor(w/ps)` patches).
pub fn make_views(
    img: &SlcImage,
    cfg: &AugmentConfig,
    patch_size: u32,
    rng: &mut Prng,
) -> Result<ViewSet> {
    cfg.validate()?;
    if patch_size == 0 {
        return Err(SfeError::Param("patch_size must be >= 1".into()));
    }

    let teacher_base = multilook_despeckle(img, cfg.despeckle_looks)?;
    let teacher_view = crop(&teacher_base, cfg.global_crop, rng);
    let mut provenance =
        vec![format!("teacher: despeckle(looks={}) crop({})", cfg.despeckle_looks, cfg.global_crop)];

    let normalized = log_normalize(img)?;
    let n_views = 1 + cfg.n_local as usize;
    let mut student_views = Vec::with_capacity(n_views);
    let mut student_masks = Vec::with_capacity(n_views);
    for v in 0..n_views {
        let size = if v == 0 { cfg.global_crop } else { cfg.local_crop };
        let mut view = crop(&normalized, size, rng);
        let mut steps = format!("student[{v}]: crop({size})");
        if rng.uniform() < 0.5 {
            view = subband_subsample(&view, cfg.subband_fraction)?;
            steps.push_str(&format!(" subband(rho={})", cfg.subband_fraction));
        }
        view = mean_shift(&view, cfg.mean_shift_range, rng)?;
        steps.push_str(" shift");

        let (vh, vw) = view.shape();
        let p = (vh / patch_size as usize) * (vw / patch_size as usize);
        if p == 0 {
            return Err(SfeError::Param(format!(
                "view {vh}x{vw} smaller than one {patch_size}x{patch_size} patch; \
                 raise local_crop or subband_fraction"
            )));
        }
        let mask = patch_mask(p as u32, cfg.mask_ratio, rng)?;
        steps.push_str(&format!(" mask({}/{p})", mask.iter().filter(|&&m| m).count()));
        provenance.push(steps);
        student_views.push(view);
        student_masks.push(mask);
    }

    Ok(ViewSet { teacher_view, student_views, student_masks, provenance })
}
