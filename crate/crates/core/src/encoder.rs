//! Vision-transformer encoder with a prototype assignment head.
//!
//! An amplitude view is cut into non-overlapping `patch_size` squares
//! (center-trimmed when the sides are not multiples), linearly embedded,
//! tagged with fixed 2-D sinusoidal positions, optionally thinned by a
//! patch mask, prefixed with a class token, and run through pre-norm
//! transformer blocks. The pooled feature `z` passes through a three-layer
//! projection head to `h`, which is scored against a bank of learned
//! prototypes by cosine similarity:
//!
//! ```text
//! s_l = <q_l, h> / (|q_l| |h|)        p = softmax(s / tau)
//! ```
//!
//! Any input of at least one patch per side works; the token count is
//! always `floor(h/ps) * floor(w/ps)` plus the class token.
//!
//! Everything runs on the [`Graph`] tape, so the same code path serves
//! value-only inference (`requires_grad = false`) and training.

use crate::autodiff::{softmax_into, Graph, Var};
use crate::error::{Result, SfeError};
use crate::mat::{Mat, Scalar};
use crate::rng::{self, Prng};
use crate::sar_data::AmplitudeImage;
use crate::sfet;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Pooled feature is the class token after the final norm.
    ClassToken,
    /// Mean of patch tokens (class token excluded).
    MeanPool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub patch_size: u32,
    pub embed_dim: u32,
    pub depth: u32,
    pub n_heads: u32,
    /// Width of the projection head's hidden layers.
    pub head_hidden: u32,
    /// Output dimension of the projection head (prototype space).
    pub proj_dim: u32,
    pub n_prototypes: u32,
    pub pool: PoolMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 8,
            embed_dim: 192,
            depth: 4,
            n_heads: 3,
            head_hidden: 256,
            proj_dim: 256,
            n_prototypes: 256,
            pool: PoolMode::ClassToken,
        }
    }
}

impl EncoderConfig {
    /// Full-scale preset (a ViT-Tiny trunk); the default is the
    /// desk-scale variant with a shallower stack and narrower head.
    pub fn full() -> Self {
        EncoderConfig { depth: 12, head_hidden: 2048, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("n_heads", self.n_heads),
            ("head_hidden", self.head_hidden),
            ("proj_dim", self.proj_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SfeError::Param(format!("{name} must be >= 1")));
            }
        }
        if self.n_prototypes < 2 {
            return Err(SfeError::Param("n_prototypes must be >= 2".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(SfeError::Param(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.embed_dim % 4 != 0 {
            return Err(SfeError::Param(format!(
                "embed_dim {} must be divisible by 4 for 2-D sinusoidal positions",
                self.embed_dim
            )));
        }
        Ok(())
    }

    fn mlp_hidden(&self) -> usize {
        4 * self.embed_dim as usize
    }
}

/// A named parameter tensor. Names are stable and double as checkpoint
/// file stems.
#[derive(Clone, Debug)]
pub struct NamedTensor<T: Scalar> {
    pub name: String,
    pub data: Mat<T>,
}

/// All learnable state of one network (trunk + head + prototypes).
#[derive(Clone, Debug)]
pub struct ModelParams<T: Scalar> {
    pub cfg: EncoderConfig,
    tensors: Vec<NamedTensor<T>>,
}

/// The tensor roster for a config: (name, rows, cols) in fixed order.
fn tensor_specs(cfg: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let d = cfg.embed_dim as usize;
    let ps = cfg.patch_size as usize;
    let hid = cfg.mlp_hidden();
    let hh = cfg.head_hidden as usize;
    let dh = cfg.proj_dim as usize;
    let mut specs = vec![
        ("patch_embed.weight".to_string(), d, ps * ps),
        ("patch_embed.bias".to_string(), 1, d),
        ("cls_token".to_string(), 1, d),
    ];
    for b in 0..cfg.depth {
        specs.push((format!("block{b}.ln1.gamma"), 1, d));
        specs.push((format!("block{b}.ln1.beta"), 1, d));
        specs.push((format!("block{b}.attn.qkv.weight"), 3 * d, d));
        specs.push((format!("block{b}.attn.qkv.bias"), 1, 3 * d));
        specs.push((format!("block{b}.attn.out.weight"), d, d));
        specs.push((format!("block{b}.attn.out.bias"), 1, d));
        specs.push((format!("block{b}.ln2.gamma"), 1, d));
        specs.push((format!("block{b}.ln2.beta"), 1, d));
        specs.push((format!("block{b}.mlp.fc1.weight"), hid, d));
        specs.push((format!("block{b}.mlp.fc1.bias"), 1, hid));
        specs.push((format!("block{b}.mlp.fc2.weight"), d, hid));
        specs.push((format!("block{b}.mlp.fc2.bias"), 1, d));
    }
    specs.push(("norm.gamma".to_string(), 1, d));
    specs.push(("norm.beta".to_string(), 1, d));
    specs.push(("head.fc1.weight".to_string(), hh, d));
    specs.push(("head.fc1.bias".to_string(), 1, hh));
    specs.push(("head.fc2.weight".to_string(), hh, hh));
    specs.push(("head.fc2.bias".to_string(), 1, hh));
    specs.push(("head.fc3.weight".to_string(), dh, hh));
    specs.push(("head.fc3.bias".to_string(), 1, dh));
    specs.push(("prototypes".to_string(), cfg.n_prototypes as usize, dh));
    specs
}

/// Truncated normal: resample anything beyond two standard deviations.
fn trunc_normal<T: Scalar>(std: f64, rng: &mut Prng) -> T {
    loop {
        let g = rng.gauss();
        if g.abs() <= 2.0 {
            return T::from_f64(g * std);
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh initialization: weights and prototypes truncated normal
    /// (std 0.02), biases and norm offsets zero, norm gains one. Each
    /// tensor draws from its own stream, so adding a tensor to the roster
    /// never reshuffles the others.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = Vec::new();
        for (idx, (name, rows, cols)) in tensor_specs(cfg).into_iter().enumerate() {
            let mut rng = Prng::from_tags(seed, &[rng::tags::INIT, idx as u64]);
            let data = if name.ends_with(".bias") || name.ends_with(".beta") {
                Mat::zeros(rows, cols)
            } else if name.ends_with(".gamma") {
                Mat::filled(rows, cols, T::one())
            } else {
                Mat::from_fn(rows, cols, |_, _| trunc_normal(0.02, &mut rng))
            };
            tensors.push(NamedTensor { name, data });
        }
        Ok(ModelParams { cfg: cfg.clone(), tensors })
    }

    pub fn tensors(&self) -> &[NamedTensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> usize {
        self.tensors
            .iter()
            .position(|t| t.name == name)
            .unwrap_or_else(|| panic!("unknown tensor `{name}`"))
    }

    pub fn get(&self, name: &str) -> &Mat<T> {
        &self.tensors[self.index_of(name)].data
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.is_finite())
    }

    /// Total scalar parameter count.
    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn map(&self, f: impl Fn(&Mat<T>) -> Mat<T>) -> Self {
        ModelParams {
            cfg: self.cfg.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { name: t.name.clone(), data: f(&t.data) })
                .collect(),
        }
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            cfg: self.cfg.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { name: t.name.clone(), data: t.data.to_f64() })
                .collect(),
        }
    }

    pub fn to_f32(&self) -> ModelParams<f32> {
        ModelParams {
            cfg: self.cfg.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { name: t.name.clone(), data: t.data.to_f32() })
                .collect(),
        }
    }
}

impl ModelParams<f32> {
    /// Write every tensor as `<prefix>.<name>.sfet` under `dir`.
    pub fn save_dir(&self, dir: &Path, prefix: &str) -> Result<()> {
        for t in &self.tensors {
            sfet::write_mat_f32(&dir.join(format!("{prefix}.{}.sfet", t.name)), &t.data)?;
        }
        Ok(())
    }

    /// Load tensors written by [`ModelParams::save_dir`], validating every
    /// shape against the config's roster.
    pub fn load_dir(dir: &Path, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = Vec::new();
        for (name, rows, cols) in tensor_specs(cfg) {
            let path = dir.join(format!("{prefix}.{name}.sfet"));
            let data = sfet::read_mat_f32(&path)?;
            if data.shape() != (rows, cols) {
                return Err(SfeError::Structure(format!(
                    "{}: expected {rows}x{cols}, found {}x{}",
                    path.display(),
                    data.rows(),
                    data.cols()
                )));
            }
            tensors.push(NamedTensor { name, data });
        }
        Ok(ModelParams { cfg: cfg.clone(), tensors })
    }
}

/// Fixed 2-D sinusoidal position table for a `gh x gw` patch grid.
/// Quarter of the channels each: sin/cos of the row index, sin/cos of the
/// column index, at geometrically spaced frequencies.
fn position_table<T: Scalar>(gh: usize, gw: usize, d: usize) -> Mat<T> {
    let d4 = d / 4;
    let mut out = Mat::zeros(gh * gw, d);
    for r in 0..gh {
        for c in 0..gw {
            let row = out.row_mut(r * gw + c);
            for i in 0..d4 {
                let omega = 1.0 / 10000f64.powf(i as f64 / d4 as f64);
                let (sr, cr) = (r as f64 * omega).sin_cos();
                let (sc, cc) = (c as f64 * omega).sin_cos();
                row[i] = T::from_f64(sr);
                row[d4 + i] = T::from_f64(cr);
                row[2 * d4 + i] = T::from_f64(sc);
                row[3 * d4 + i] = T::from_f64(cc);
            }
        }
    }
    out
}

/// Center-trimmed patch grid for an image: returns (gh, gw, row0, col0).
fn patch_grid(shape: (usize, usize), ps: usize) -> Result<(usize, usize, usize, usize)> {
    let (h, w) = shape;
    let (gh, gw) = (h / ps, w / ps);
    if gh == 0 || gw == 0 {
        return Err(SfeError::Param(format!(
            "image {h}x{w} smaller than one {ps}x{ps} patch"
        )));
    }
    Ok((gh, gw, (h - gh * ps) / 2, (w - gw * ps) / 2))
}

/// Flatten an image into its patch matrix: one row per patch, row-major
/// over the grid, pixels row-major within each patch.
fn patch_matrix<T: Scalar>(img: &AmplitudeImage, ps: usize) -> Result<(Mat<T>, usize, usize)> {
    let (gh, gw, r0, c0) = patch_grid(img.shape(), ps)?;
    let src = img.data();
    let mut m = Mat::zeros(gh * gw, ps * ps);
    for gr in 0..gh {
        for gc in 0..gw {
            let row = m.row_mut(gr * gw + gc);
            for pr in 0..ps {
                for pc in 0..ps {
                    row[pr * ps + pc] =
                        T::from_f64(src[(r0 + gr * ps + pr, c0 + gc * ps + pc)] as f64);
                }
            }
        }
    }
    Ok((m, gh, gw))
}

/// Graph-side parameter handles, aligned with `ModelParams::tensors`.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Put every parameter tensor on the tape. `trainable = false` registers
/// them as constants (teacher, inference).
pub fn register_params<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    trainable: bool,
) -> ParamVars {
    ParamVars {
        vars: params.tensors().iter().map(|t| g.leaf(t.data.clone(), trainable)).collect(),
    }
}

/// Graph handles produced by a full forward pass.
pub struct ForwardVars {
    /// Pooled trunk feature, 1 x embed_dim.
    pub z: Var,
    /// Projection head output, 1 x proj_dim.
    pub h: Var,
    /// Clamped cosine scores, 1 x n_prototypes.
    pub s: Var,
    /// Assignment distribution, 1 x n_prototypes.
    pub p: Var,
    /// Residual-stream output of each block, for numerical-health checks.
    pub block_outs: Vec<Var>,
}

struct P<'a, T: Scalar> {
    params: &'a ModelParams<T>,
    vars: &'a ParamVars,
}

impl<T: Scalar> P<'_, T> {
    fn var(&self, name: &str) -> Var {
        self.vars.vars[self.params.index_of(name)]
    }
}

/// Linear layer `x @ W^T + b` with W stored (out x in).
fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul_nt(x, w);
    g.add_row_broadcast(y, b)
}

/// Build the trunk: patch embed -> positions -> mask -> class token ->
/// transformer blocks -> final norm -> pooled z.
fn trunk_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &P<'_, T>,
    img: &AmplitudeImage,
    mask: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let cfg = &p.params.cfg;
    let ps = cfg.patch_size as usize;
    let d = cfg.embed_dim as usize;
    let (patches, gh, gw) = patch_matrix::<T>(img, ps)?;
    let n_patches = gh * gw;
    if let Some(m) = mask {
        if m.len() != n_patches {
            return Err(SfeError::Structure(format!(
                "mask has {} flags but the {}x{} grid has {n_patches} patches",
                m.len(),
                gh,
                gw
            )));
        }
    }

    let patches = g.constant(patches);
    let w_embed = p.var("patch_embed.weight");
    let b_embed = p.var("patch_embed.bias");
    let mut tokens = linear(g, patches, w_embed, b_embed);
    let pos = g.constant(position_table::<T>(gh, gw, d));
    tokens = g.add(tokens, pos);

    // Drop masked patches after the positional information is attached, so
    // surviving tokens keep their true locations.
    if let Some(m) = mask {
        let kept: Vec<usize> =
            (0..n_patches).filter(|&i| !m[i]).collect();
        if kept.is_empty() {
            return Err(SfeError::Param("mask drops every patch".into()));
        }
        if kept.len() < n_patches {
            tokens = g.gather_rows(tokens, kept);
        }
    }

    let cls = p.var("cls_token");
    let mut x = g.concat_rows(cls, tokens);

    let heads = cfg.n_heads as usize;
    let dh = d / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut block_outs = Vec::with_capacity(cfg.depth as usize);
    for b in 0..cfg.depth {
        let n = |suffix: &str| format!("block{b}.{suffix}");
        // Attention sublayer.
        let ln1 = {
            let gamma = p.var(&n("ln1.gamma"));
            let beta = p.var(&n("ln1.beta"));
            g.layer_norm(x, gamma, beta)
        };
        let qkv = {
            let w = p.var(&n("attn.qkv.weight"));
            let bias = p.var(&n("attn.qkv.bias"));
            linear(g, ln1, w, bias)
        };
        let q = g.slice_cols(qkv, 0, d);
        let k = g.slice_cols(qkv, d, 2 * d);
        let v = g.slice_cols(qkv, 2 * d, 3 * d);
        let mut merged: Option<Var> = None;
        for hd in 0..heads {
            let (lo, hi) = (hd * dh, (hd + 1) * dh);
            let qh = g.slice_cols(q, lo, hi);
            let kh = g.slice_cols(k, lo, hi);
            let vh = g.slice_cols(v, lo, hi);
            let logits = g.matmul_nt(qh, kh);
            let scaled = g.scale(logits, scale);
            let att = g.softmax_rows(scaled);
            let oh = g.matmul(att, vh);
            merged = Some(match merged {
                None => oh,
                Some(acc) => g.concat_cols(acc, oh),
            });
        }
        let merged = merged.expect("n_heads >= 1");
        let projected = {
            let w = p.var(&n("attn.out.weight"));
            let bias = p.var(&n("attn.out.bias"));
            linear(g, merged, w, bias)
        };
        x = g.add(x, projected);

        // MLP sublayer.
        let ln2 = {
            let gamma = p.var(&n("ln2.gamma"));
            let beta = p.var(&n("ln2.beta"));
            g.layer_norm(x, gamma, beta)
        };
        let h1 = {
            let w = p.var(&n("mlp.fc1.weight"));
            let bias = p.var(&n("mlp.fc1.bias"));
            linear(g, ln2, w, bias)
        };
        let h1 = g.gelu(h1);
        let h2 = {
            let w = p.var(&n("mlp.fc2.weight"));
            let bias = p.var(&n("mlp.fc2.bias"));
            linear(g, h1, w, bias)
        };
        x = g.add(x, h2);
        block_outs.push(x);
    }

    let normed = {
        let gamma = p.var("norm.gamma");
        let beta = p.var("norm.beta");
        g.layer_norm(x, gamma, beta)
    };
    let rows = g.value(normed).rows();
    let z = match cfg.pool {
        PoolMode::ClassToken => g.slice_rows(normed, 0, 1),
        PoolMode::MeanPool => {
            let patches_only = g.slice_rows(normed, 1, rows);
            g.mean_rows(patches_only)
        }
    };
    Ok((z, block_outs))
}

/// Full forward on an existing tape.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    vars: &ParamVars,
    img: &AmplitudeImage,
    mask: Option<&[bool]>,
    tau: T,
) -> Result<ForwardVars> {
    if !(tau > T::zero()) {
        return Err(SfeError::Param(format!("temperature {tau} must be > 0")));
    }
    let p = P { params, vars };
    let (z, block_outs) = trunk_graph(g, &p, img, mask)?;
    let h1 = linear(g, z, p.var("head.fc1.weight"), p.var("head.fc1.bias"));
    let h1 = g.gelu(h1);
    let h2 = linear(g, h1, p.var("head.fc2.weight"), p.var("head.fc2.bias"));
    let h2 = g.gelu(h2);
    let h = linear(g, h2, p.var("head.fc3.weight"), p.var("head.fc3.bias"));
    let protos = p.var("prototypes");
    let s = g.cosine_scores(protos, h);
    let scaled = g.scale(s, tau.recip());
    let prob = g.softmax_rows(scaled);
    Ok(ForwardVars { z, h, s, p: prob, block_outs })
}

/// Patch tokens right after embedding, positions, masking and the class
/// token — the encoder's input sequence. Row 0 is the class token;
/// `kept[i]` is the patch-grid index behind row `i + 1`.
#[derive(Clone, Debug)]
pub struct EncodedTokens<T: Scalar> {
    pub tokens: Mat<T>,
    pub kept: Vec<usize>,
    pub grid: (usize, usize),
}

/// Value-level view of the tokenization stage.
pub fn patch_encode<T: Scalar>(
    img: &AmplitudeImage,
    params: &ModelParams<T>,
    mask: Option<&[bool]>,
) -> Result<EncodedTokens<T>> {
    let cfg = &params.cfg;
    let ps = cfg.patch_size as usize;
    let (patches, gh, gw) = patch_matrix::<T>(img, ps)?;
    let n_patches = gh * gw;
    if let Some(m) = mask {
        if m.len() != n_patches {
            return Err(SfeError::Structure(format!(
                "mask has {} flags but the {gh}x{gw} grid has {n_patches} patches",
                m.len()
            )));
        }
    }
    let kept: Vec<usize> = match mask {
        Some(m) => (0..n_patches).filter(|&i| !m[i]).collect(),
        None => (0..n_patches).collect(),
    };
    if kept.is_empty() {
        return Err(SfeError::Param("mask drops every patch".into()));
    }

    let mut g: Graph<T> = Graph::new();
    let patches = g.constant(patches);
    let w = g.constant(params.get("patch_embed.weight").clone());
    let b = g.constant(params.get("patch_embed.bias").clone());
    let embedded = linear(&mut g, patches, w, b);
    let pos = g.constant(position_table::<T>(gh, gw, cfg.embed_dim as usize));
    let mut tokens = g.add(embedded, pos);
    if kept.len() < n_patches {
        tokens = g.gather_rows(tokens, kept.clone());
    }
    let cls = g.constant(params.get("cls_token").clone());
    let all = g.concat_rows(cls, tokens);
    Ok(EncodedTokens { tokens: g.value(all).clone(), kept, grid: (gh, gw) })
}

/// One forward pass, values only.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub z: Vec<T>,
    pub h: Vec<T>,
    pub s: Vec<T>,
    pub p: Vec<T>,
    pub tau: T,
}

/// Run the network on one view. Checks every block output for numerical
/// health and reports the first offender.
pub fn forward<T: Scalar>(
    img: &AmplitudeImage,
    params: &ModelParams<T>,
    mask: Option<&[bool]>,
    tau: T,
) -> Result<Prediction<T>> {
    let mut g: Graph<T> = Graph::new();
    let vars = register_params(&mut g, params, false);
    let fv = forward_graph(&mut g, params, &vars, img, mask, tau)?;
    for (i, &b) in fv.block_outs.iter().enumerate() {
        if !g.value(b).is_finite() {
            return Err(SfeError::Numerical {
                context: format!("block {i} output for sample `{}`", img.meta.id),
            });
        }
    }
    for (name, var) in [("z", fv.z), ("h", fv.h), ("s", fv.s), ("p", fv.p)] {
        if !g.value(var).is_finite() {
            return Err(SfeError::Numerical {
                context: format!("{name} for sample `{}`", img.meta.id),
            });
        }
    }
    Ok(Prediction {
        z: g.value(fv.z).as_slice().to_vec(),
        h: g.value(fv.h).as_slice().to_vec(),
        s: g.value(fv.s).as_slice().to_vec(),
        p: g.value(fv.p).as_slice().to_vec(),
        tau,
    })
}

/// Pooled trunk feature only — the representation used downstream. Skips
/// the projection head entirely.
pub fn extract_feature<T: Scalar>(img: &AmplitudeImage, params: &ModelParams<T>) -> Result<Vec<T>> {
    let mut g: Graph<T> = Graph::new();
    let vars = register_params(&mut g, params, false);
    let p = P { params, vars: &vars };
    let (z, block_outs) = trunk_graph(&mut g, &p, img, None)?;
    for (i, &b) in block_outs.iter().enumerate() {
        if !g.value(b).is_finite() {
            return Err(SfeError::Numerical {
                context: format!("block {i} output for sample `{}`", img.meta.id),
            });
        }
    }
    if !g.value(z).is_finite() {
        return Err(SfeError::Numerical { context: format!("z for sample `{}`", img.meta.id) });
    }
    Ok(g.value(z).as_slice().to_vec())
}

/// Score a projection `h` against a prototype bank without a graph — the
/// reference implementation of the assignment rule, also used by tests.
pub fn prototype_prediction<T: Scalar>(
    h: &[T],
    prototypes: &Mat<T>,
    tau: T,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(tau > T::zero()) {
        return Err(SfeError::Param(format!("temperature {tau} must be > 0")));
    }
    if prototypes.cols() != h.len() {
        return Err(SfeError::Structure(format!(
            "h has dim {} but prototypes are {}-dimensional",
            h.len(),
            prototypes.cols()
        )));
    }
    let floor = T::from_f64(1e-12);
    let hn = crate::mat::dot(h, h).sqrt();
    let n = prototypes.rows();
    let mut s = vec![T::zero(); n];
    for l in 0..n {
        let qn = crate::mat::dot(prototypes.row(l), prototypes.row(l)).sqrt();
        if qn > floor && hn > floor {
            let c = crate::mat::dot(prototypes.row(l), h) / (qn * hn);
            s[l] = c.min(T::one()).max(-T::one());
        }
    }
    let mut p = vec![T::zero(); n];
    let scaled: Vec<T> = s.iter().map(|&v| v / tau).collect();
    softmax_into(&scaled, &mut p);
    Ok((s, p))
}
