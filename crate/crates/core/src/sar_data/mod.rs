//! SAR sample types and radiometric preprocessing.
//!
//! A [`SlcImage`] is a single-look-complex capture: per-pixel complex
//! backscatter whose intensity carries multiplicative speckle. Networks
//! consume [`AmplitudeImage`]s — real-valued, log-compressed, normalized
//! to `[0, 1]` per image:
//!
//! ```text
//! SLC (re, im) --intensity--> |z|^2 --sqrt--> amplitude
//!   amplitude --log(a + 1e-10)--> dynamic-range compressed
//!   compressed --per-image min/max--> [0, 1]
//! ```
//!
//! [`multilook_despeckle`] averages intensity over a boxcar window before
//! the same compression, trading resolution for speckle variance — the
//! teacher branch uses it as a denoised target. Despeckling is pluggable:
//! anything producing an `AmplitudeImage` from an `SlcImage` (a learned
//! denoiser, an adaptive filter) can replace the boxcar without touching
//! callers.

mod manifest;
mod mstar;
mod synthetic;

pub use manifest::{build_manifest, DatasetManifest, ManifestEntry};
pub use mstar::{ingest_mstar, write_mstar};
pub use synthetic::{generate_synthetic, reflectivity_map, CLUTTER_FLOOR, NUM_CLASSES};

use crate::error::{Result, SfeError};
use crate::mat::Mat;

/// Where a sample came from. Affects how its file is parsed and what
/// metadata is trusted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Mstar,
    Raw,
}

#[derive(Clone, Debug)]
pub struct SampleMeta {
    /// Unique within a dataset.
    pub id: String,
    pub class_label: Option<String>,
    pub source: Source,
    /// Generator seed for synthetic samples.
    pub seed: Option<u64>,
}

impl SampleMeta {
    pub fn new(id: impl Into<String>, class_label: Option<String>, source: Source) -> Self {
        SampleMeta { id: id.into(), class_label, source, seed: None }
    }
}

/// Complex-valued SLC sample. Construction enforces matching finite
/// real/imaginary planes of at least 1x1, so downstream code can rely on
/// well-formed inputs.
#[derive(Clone, Debug)]
pub struct SlcImage {
    real: Mat<f32>,
    imag: Mat<f32>,
    pub meta: SampleMeta,
}

impl SlcImage {
    pub fn new(real: Mat<f32>, imag: Mat<f32>, meta: SampleMeta) -> Result<Self> {
        if real.shape() != imag.shape() {
            return Err(SfeError::InvalidData(format!(
                "sample `{}`: real plane {:?} and imaginary plane {:?} disagree",
                meta.id,
                real.shape(),
                imag.shape()
            )));
        }
        if real.rows() == 0 || real.cols() == 0 {
            return Err(SfeError::InvalidData(format!("sample `{}`: empty image", meta.id)));
        }
        if !real.is_finite() || !imag.is_finite() {
            return Err(SfeError::InvalidData(format!(
                "sample `{}`: non-finite pixel values",
                meta.id
            )));
        }
        Ok(SlcImage { real, imag, meta })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.real.shape()
    }
    pub fn real(&self) -> &Mat<f32> {
        &self.real
    }
    pub fn imag(&self) -> &Mat<f32> {
        &self.imag
    }

    /// Per-pixel intensity |z|^2.
    pub fn intensity(&self) -> Mat<f32> {
        self.real.zip_with(&self.imag, |re, im| re * re + im * im)
    }
}

/// Real-valued image with all pixels in `[0, 1]` — the network input space.
#[derive(Clone, Debug)]
pub struct AmplitudeImage {
    data: Mat<f32>,
    pub meta: SampleMeta,
}

impl AmplitudeImage {
    pub fn new(data: Mat<f32>, meta: SampleMeta) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(SfeError::InvalidData(format!("sample `{}`: empty image", meta.id)));
        }
        for &v in data.as_slice() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(SfeError::InvalidData(format!(
                    "sample `{}`: pixel {v} outside [0, 1]",
                    meta.id
                )));
            }
        }
        Ok(AmplitudeImage { data, meta })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.shape()
    }
    pub fn data(&self) -> &Mat<f32> {
        &self.data
    }
}

/// Log-compress an amplitude plane and normalize to [0, 1] per image.
/// Shared tail of [`log_normalize`] and [`multilook_despeckle`].
fn compress_amplitude(amp: Mat<f32>, meta: SampleMeta) -> AmplitudeImage {
    let logged = amp.map(|a| (a + 1e-10).ln());
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in logged.as_slice() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // Constant image: no dynamic range to stretch, define as all zeros.
    let data = if hi == lo {
        Mat::zeros(logged.rows(), logged.cols())
    } else {
        let span = hi - lo;
        logged.map(|v| (v - lo) / span)
    };
    AmplitudeImage { data, meta }
}

/// Compress an SLC sample's dynamic range: `log(|z| + 1e-10)`, then a
/// per-image min/max stretch to `[0, 1]`.
pub fn log_normalize(img: &SlcImage) -> Result<AmplitudeImage> {
    // SlcImage construction guarantees finite pixels; keep the check so the
    // contract holds even for images deserialized through future paths.
    if !img.real().is_finite() || !img.imag().is_finite() {
        return Err(SfeError::InvalidData(format!(
            "sample `{}`: non-finite pixel values",
            img.meta.id
        )));
    }
    let amp = img.intensity().map(|i| i.sqrt());
    Ok(compress_amplitude(amp, img.meta.clone()))
}

/// Boxcar multilook intensity: mean of |z|^2 over a `looks x looks`
/// window at every pixel (stride 1, mirrored edges). Exposed separately
/// from [`multilook_despeckle`] so the variance reduction can be checked
/// before normalization hides it.
pub fn multilook_intensity(img: &SlcImage, looks: u32) -> Result<Mat<f32>> {
    if looks == 0 {
        return Err(SfeError::Param("looks must be >= 1".into()));
    }
    let intensity = img.intensity();
    let (h, w) = intensity.shape();
    let lo = (looks as isize - 1) / 2;
    let hi = looks as isize / 2;
    let norm = 1.0f64 / (looks as f64 * looks as f64);
    let mut out = Mat::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0f64;
            for dr in -lo..=hi {
                let rr = reflect_index(r as isize + dr, h);
                for dc in -lo..=hi {
                    let cc = reflect_index(c as isize + dc, w);
                    acc += intensity[(rr, cc)] as f64;
                }
            }
            out[(r, c)] = (acc * norm) as f32;
        }
    }
    Ok(out)
}

/// Classical multilook despeckling: boxcar-average intensity, take the
/// amplitude, then the same log compression as [`log_normalize`].
/// `looks = 1` reduces to `log_normalize` exactly.
pub fn multilook_despeckle(img: &SlcImage, looks: u32) -> Result<AmplitudeImage> {
    if looks == 1 {
        // Single look averages nothing; use the identical code path so the
        // result is bit-for-bit the plain normalization.
        return log_normalize(img);
    }
    let amp = multilook_intensity(img, looks)?.map(|i| i.sqrt());
    Ok(compress_amplitude(amp, img.meta.clone()))
}

/// Mirror an out-of-range index back into `[0, n)` without repeating the
/// edge sample: for n = 4 the extension is `... 2 1 | 0 1 2 3 | 2 1 ...`.
#[inline]
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}
