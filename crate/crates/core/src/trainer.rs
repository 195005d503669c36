//! Training loop: AdamW on the student, exponential-moving-average
//! updates to the teacher, warmup-plus-cosine learning rate.
//!
//! Every batch is all-or-nothing: gradients, optimizer state and new
//! parameters are computed into scratch buffers, checked for numerical
//! health, and only then committed. A failing step leaves student,
//! teacher and optimizer exactly as they were.
//!
//! Randomness is replayable by construction: the shuffle of epoch `e`
//! and the augmentation stream of image `id` in epoch `e` are pure
//! functions of `(seed, e, id)`, so resuming from a checkpoint at step
//! `s` regenerates the identical remaining schedule.

use crate::augment::{make_views, AugmentConfig, ViewSet};
use crate::encoder::{EncoderConfig, ModelParams};
use crate::error::{Result, SfeError};
use crate::mat::{Mat, Scalar};
use crate::objective::{loss_gradients, LossBreakdown, LossConfig};
use crate::rng::{self, Prng};
use crate::sar_data::SlcImage;
use crate::sfet;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    /// Peak learning rate, reached at the end of warmup.
    pub base: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_frac: f64,
    /// Terminal learning rate of the cosine decay.
    pub floor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 1e-3, warmup_frac: 0.1, floor: 1e-5 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: u32,
    pub lr: LrSchedule,
    /// Teacher EMA momentum; 1 freezes the teacher entirely.
    pub momentum: f64,
    /// Cosine-ramp the momentum from its base value to 1 over training.
    pub momentum_ramp: bool,
    /// Decoupled weight decay, applied to weight matrices and prototypes
    /// but not to biases, norm parameters or the class token.
    pub weight_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: LrSchedule::default(),
            momentum: 0.996,
            momentum_ramp: false,
            weight_decay: 1e-4,
            seed: 42,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(SfeError::Param("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(SfeError::Param("batch_size must be >= 1".into()));
        }
        if !(self.lr.base > 0.0 && self.lr.base.is_finite()) {
            return Err(SfeError::Param(format!("lr.base {} must be > 0", self.lr.base)));
        }
        if !(0.0..=1.0).contains(&self.lr.warmup_frac) {
            return Err(SfeError::Param(format!(
                "lr.warmup_frac {} must lie in [0, 1]",
                self.lr.warmup_frac
            )));
        }
        if !(self.lr.floor >= 0.0 && self.lr.floor <= self.lr.base) {
            return Err(SfeError::Param(format!(
                "lr.floor {} must lie in [0, lr.base]",
                self.lr.floor
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(SfeError::Param(format!(
                "momentum {} must lie in [0, 1]",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(SfeError::Param(format!(
                "weight_decay {} must be finite and >= 0",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Learning rate at `step` (0-based) of `total` steps: linear warmup to
/// `base`, then cosine decay to `floor`.
pub fn lr_at(step: u64, total: u64, lr: &LrSchedule) -> f64 {
    assert!(total > 0, "lr_at needs a positive step count");
    let warmup = (lr.warmup_frac * total as f64).round() as u64;
    if step < warmup {
        return lr.base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    lr.floor + 0.5 * (lr.base - lr.floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Teacher momentum at `step`: constant, or cosine-ramped from the base
/// value up to 1 when `momentum_ramp` is on.
pub fn momentum_at(step: u64, total: u64, cfg: &TrainConfig) -> f64 {
    if !cfg.momentum_ramp {
        return cfg.momentum;
    }
    assert!(total > 0, "momentum_at needs a positive step count");
    let progress = (step as f64 / total as f64).min(1.0);
    1.0 - (1.0 - cfg.momentum) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Teacher update: `t <- m t + (1 - m) s`, elementwise over every tensor.
/// `m = 1` is a true freeze — the teacher is left untouched, bit for bit.
pub fn ema_update<T: Scalar>(
    teacher: &mut ModelParams<T>,
    student: &ModelParams<T>,
    m: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(SfeError::Param(format!("EMA momentum {m} must lie in [0, 1]")));
    }
    if m == 1.0 {
        return Ok(());
    }
    let mt = T::from_f64(m);
    let ms = T::from_f64(1.0 - m);
    for (t, s) in teacher.tensors_mut().iter_mut().zip(student.tensors()) {
        if t.name != s.name || t.data.shape() != s.data.shape() {
            return Err(SfeError::Structure(format!(
                "teacher tensor `{}` does not match student `{}`",
                t.name, s.name
            )));
        }
        for (tv, &sv) in t.data.as_mut_slice().iter_mut().zip(s.data.as_slice()) {
            *tv = tv.mul_add(mt, ms * sv);
        }
    }
    Ok(())
}

/// Decoupled AdamW. Moment buffers align with the model's tensor roster.
pub struct AdamW<T: Scalar> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
}

/// Weight decay applies to weight matrices and the prototype bank only;
/// biases, norm gains/offsets and the class token stay unregularized.
fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name == "prototypes"
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ModelParams<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Mat<T>> =
            params.tensors().iter().map(|t| Mat::zeros(t.data.rows(), t.data.cols())).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. Everything is staged and validated before anything is
    /// committed; on error the parameters and moments are unchanged.
    pub fn step(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &[Mat<T>],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(SfeError::Structure(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        let t = self.t + 1;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let b1 = T::from_f64(self.beta1);
        let b1c = T::from_f64(1.0 - self.beta1);
        let b2 = T::from_f64(self.beta2);
        let b2c = T::from_f64(1.0 - self.beta2);
        let eps = T::from_f64(self.eps);
        let lr_t = T::from_f64(lr);
        let inv_bc1 = T::from_f64(1.0 / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);

        let mut new_m = Vec::with_capacity(self.m.len());
        let mut new_v = Vec::with_capacity(self.v.len());
        let mut new_params = Vec::with_capacity(self.m.len());
        for (i, tensor) in params.tensors().iter().enumerate() {
            if grads[i].shape() != tensor.data.shape() {
                return Err(SfeError::Structure(format!(
                    "gradient {i} is {:?}, tensor `{}` is {:?}",
                    grads[i].shape(),
                    tensor.name,
                    tensor.data.shape()
                )));
            }
            let wd = if decays(&tensor.name) {
                T::from_f64(self.weight_decay)
            } else {
                T::zero()
            };
            let mut m = self.m[i].clone();
            let mut v = self.v[i].clone();
            let mut p = tensor.data.clone();
            for (((pv, mv), vv), &g) in p
                .as_mut_slice()
                .iter_mut()
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
                .zip(grads[i].as_slice())
            {
                *mv = mv.mul_add(b1, b1c * g);
                *vv = vv.mul_add(b2, b2c * g * g);
                let m_hat = *mv * inv_bc1;
                let v_hat = *vv * inv_bc2;
                let update = m_hat / (v_hat.sqrt() + eps) + wd * *pv;
                *pv -= lr_t * update;
            }
            if !p.is_finite() {
                return Err(SfeError::Numerical {
                    context: format!("optimizer update of `{}`", tensor.name),
                });
            }
            new_m.push(m);
            new_v.push(v);
            new_params.push(p);
        }

        // Commit.
        self.t = t;
        self.m = new_m;
        self.v = new_v;
        for (tensor, p) in params.tensors_mut().iter_mut().zip(new_params) {
            tensor.data = p;
        }
        Ok(())
    }
}

impl AdamW<f32> {
    fn save_dir(&self, dir: &Path, params: &ModelParams<f32>) -> Result<()> {
        for (i, t) in params.tensors().iter().enumerate() {
            sfet::write_mat_f32(&dir.join(format!("opt.m.{}.sfet", t.name)), &self.m[i])?;
            sfet::write_mat_f32(&dir.join(format!("opt.v.{}.sfet", t.name)), &self.v[i])?;
        }
        Ok(())
    }

    fn load_dir(dir: &Path, params: &ModelParams<f32>, weight_decay: f64, t: u64) -> Result<Self> {
        let mut opt = AdamW::new(params, weight_decay);
        for (i, tensor) in params.tensors().iter().enumerate() {
            let m = sfet::read_mat_f32(&dir.join(format!("opt.m.{}.sfet", tensor.name)))?;
            let v = sfet::read_mat_f32(&dir.join(format!("opt.v.{}.sfet", tensor.name)))?;
            if m.shape() != tensor.data.shape() || v.shape() != tensor.data.shape() {
                return Err(SfeError::Structure(format!(
                    "optimizer moments for `{}` do not match its shape",
                    tensor.name
                )));
            }
            opt.m[i] = m;
            opt.v[i] = v;
        }
        opt.t = t;
        Ok(opt)
    }
}

/// Everything `fit` needs besides the data.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.encoder.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        // Cross-module: the smallest view must still contain a patch.
        let rho = self.augment.subband_fraction as f64;
        let smallest = (self.augment.local_crop.min(self.augment.global_crop) as f64 * rho).ceil();
        if (smallest as u32) < self.encoder.patch_size {
            return Err(SfeError::Param(format!(
                "subband-subsampled local crop ({smallest}px) falls below one \
                 {}px patch; raise local_crop or subband_fraction",
                self.encoder.patch_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
struct TrainerState {
    step: u64,
    adam_t: u64,
    total_steps: u64,
}

/// Outcome of a training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: u64,
    pub final_loss: LossBreakdown,
    pub metrics_path: PathBuf,
    pub checkpoint_dir: PathBuf,
}

fn write_checkpoint(
    dir: &Path,
    student: &ModelParams<f32>,
    teacher: &ModelParams<f32>,
    opt: &AdamW<f32>,
    state: &TrainerState,
    cfg: &FitConfig,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SfeError::io(dir, e))?;
    student.save_dir(dir, "student")?;
    teacher.save_dir(dir, "teacher")?;
    opt.save_dir(dir, student)?;
    let state_json = serde_json::to_string_pretty(state).expect("state serializes");
    std::fs::write(dir.join("state.json"), state_json)
        .map_err(|e| SfeError::io(&dir.join("state.json"), e))?;
    let cfg_json = serde_json::to_string_pretty(cfg).expect("config serializes");
    std::fs::write(dir.join("config.json"), cfg_json)
        .map_err(|e| SfeError::io(&dir.join("config.json"), e))?;
    Ok(())
}

/// Loaded checkpoint: models, optimizer, and the step to resume from.
pub struct Checkpoint {
    pub student: ModelParams<f32>,
    pub teacher: ModelParams<f32>,
    opt: AdamW<f32>,
    state: TrainerState,
}

/// Read the configuration a checkpoint was written with, so tooling can
/// open a checkpoint without knowing its settings in advance.
pub fn read_checkpoint_config(dir: &Path) -> Result<FitConfig> {
    read_json(&dir.join("config.json"))
}

/// Read a checkpoint directory written during [`fit`]. The stored config
/// must match the one the caller is about to train with.
pub fn load_checkpoint(dir: &Path, cfg: &FitConfig) -> Result<Checkpoint> {
    let cfg_path = dir.join("config.json");
    let stored: FitConfig = read_json(&cfg_path)?;
    if &stored != cfg {
        return Err(SfeError::Config {
            path: "$".into(),
            msg: format!(
                "checkpoint {} was written with a different configuration; \
                 resuming would silently change the run",
                dir.display()
            ),
        });
    }
    let state: TrainerState = read_json(&dir.join("state.json"))?;
    let student = ModelParams::<f32>::load_dir(dir, "student", &cfg.encoder)?;
    let teacher = ModelParams::<f32>::load_dir(dir, "teacher", &cfg.encoder)?;
    let opt = AdamW::load_dir(dir, &student, cfg.train.weight_decay, state.adam_t)?;
    Ok(Checkpoint { student, teacher, opt, state })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| SfeError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| SfeError::Json {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Checkpoint to resume from, produced by [`load_checkpoint`].
pub enum StartPoint {
    /// Fresh models from this seed.
    Init,
    /// Continue a previous run.
    Resume(Box<Checkpoint>),
}

/// Build every view set of one batch. Augmentation streams are keyed by
/// `(seed, epoch, image id)`, independent of batch composition.
fn batch_views(
    images: &[SlcImage],
    indices: &[usize],
    cfg: &FitConfig,
    epoch: u64,
) -> Result<Vec<ViewSet>> {
    indices
        .iter()
        .map(|&ix| {
            let img = &images[ix];
            let mut rng = Prng::from_tags(
                cfg.train.seed,
                &[rng::tags::AUGMENT, epoch, rng::str_tag(&img.meta.id)],
            );
            make_views(img, &cfg.augment, cfg.encoder.patch_size, &mut rng)
        })
        .collect()
}

/// Train a student/teacher pair on `images`, writing `metrics.csv` and
/// checkpoints under `out_dir`. Returns after `train.epochs` full passes.
pub fn fit(
    images: &[SlcImage],
    cfg: &FitConfig,
    out_dir: &Path,
    start: StartPoint,
) -> Result<TrainReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(SfeError::EmptyDataset("no training images".into()));
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for img in images {
            if !seen.insert(img.meta.id.as_str()) {
                return Err(SfeError::DuplicateId(img.meta.id.clone()));
            }
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| SfeError::io(out_dir, e))?;

    let n = images.len();
    let batch = cfg.train.batch_size as usize;
    let steps_per_epoch = n.div_ceil(batch) as u64;
    let total_steps = steps_per_epoch * cfg.train.epochs as u64;

    let (mut student, mut teacher, mut opt, start_step) = match start {
        StartPoint::Init => {
            let student = ModelParams::<f32>::init(&cfg.encoder, cfg.train.seed)?;
            let teacher = student.clone();
            let opt = AdamW::new(&student, cfg.train.weight_decay);
            (student, teacher, opt, 0u64)
        }
        StartPoint::Resume(ckpt) => {
            if ckpt.state.total_steps != total_steps {
                return Err(SfeError::Config {
                    path: "$.train".into(),
                    msg: format!(
                        "checkpoint expects {} total steps, this run has {total_steps} \
                         (dataset size or schedule changed)",
                        ckpt.state.total_steps
                    ),
                });
            }
            (ckpt.student, ckpt.teacher, ckpt.opt, ckpt.state.step)
        }
    };

    // Rebuild the metrics file so its rows end exactly at the resume
    // point: rows from an interrupted run past the checkpoint are
    // dropped (they are regenerated bitwise-identically below), and a
    // fresh run never appends to a stale file.
    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = {
        let mut text = String::from("step,loss,l_sim,r,lr,m\n");
        if start_step > 0 && metrics_path.exists() {
            let old = std::fs::read_to_string(&metrics_path)
                .map_err(|e| SfeError::io(&metrics_path, e))?;
            for line in old.lines().skip(1) {
                let kept = line
                    .split(',')
                    .next()
                    .and_then(|s| s.parse::<u64>().ok())
                    .is_some_and(|s| s <= start_step);
                if kept {
                    text.push_str(line);
                    text.push('\n');
                }
            }
        }
        std::fs::write(&metrics_path, text).map_err(|e| SfeError::io(&metrics_path, e))?;
        let file = std::fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| SfeError::io(&metrics_path, e))?;
        std::io::BufWriter::new(file)
    };

    let mut last_loss = None;
    let mut step = start_step;
    let first_epoch = start_step / steps_per_epoch;
    for epoch in first_epoch..cfg.train.epochs as u64 {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = Prng::from_tags(cfg.train.seed, &[rng::tags::SHUFFLE, epoch]);
        shuffle_rng.shuffle(&mut order);

        let skip = if epoch == first_epoch {
            (start_step % steps_per_epoch) as usize
        } else {
            0
        };
        for (bi, chunk) in order.chunks(batch).enumerate() {
            if bi < skip {
                continue;
            }
            let views = batch_views(images, chunk, cfg, epoch)?;
            let lr = lr_at(step, total_steps, &cfg.train.lr);
            let m = momentum_at(step, total_steps, &cfg.train);
            let (breakdown, grads, _) = loss_gradients(&views, &student, &teacher, &cfg.loss)?;
            opt.step(&mut student, &grads, lr)?;
            ema_update(&mut teacher, &student, m)?;
            step += 1;
            last_loss = Some(breakdown);
            writeln!(
                metrics,
                "{step},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
                breakdown.total, breakdown.similarity, breakdown.entropy, lr, m
            )
            .map_err(|e| SfeError::io(&metrics_path, e))?;
            metrics.flush().map_err(|e| SfeError::io(&metrics_path, e))?;

            let every = cfg.train.checkpoint_every as u64;
            if every > 0 && step % every == 0 && step < total_steps {
                let state = TrainerState { step, adam_t: opt.steps_taken(), total_steps };
                write_checkpoint(
                    &out_dir.join(format!("ckpt_{step}")),
                    &student,
                    &teacher,
                    &opt,
                    &state,
                    cfg,
                )?;
            }
        }
    }

    let final_dir = out_dir.join(format!("ckpt_{step}"));
    let state = TrainerState { step, adam_t: opt.steps_taken(), total_steps };
    write_checkpoint(&final_dir, &student, &teacher, &opt, &state, cfg)?;
    let final_loss = last_loss.ok_or_else(|| {
        SfeError::Structure("training finished without running a single step".into())
    })?;
    Ok(TrainReport { steps: step, final_loss, metrics_path, checkpoint_dir: final_dir })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::PoolMode;
    use crate::sar_data::generate_synthetic;

    #[test]
    fn warmup_rises_linearly_then_cosine_decays_to_floor() {
        let lr = LrSchedule { base: 1e-3, warmup_frac: 0.1, floor: 1e-5 };
        let total = 100;
        // Warmup covers steps 0..10, reaching base at step 9.
        assert!((lr_at(0, total, &lr) - 1e-4).abs() < 1e-12);
        assert!((lr_at(4, total, &lr) - 5e-4).abs() < 1e-12);
        assert!((lr_at(9, total, &lr) - 1e-3).abs() < 1e-12);
        // Cosine start equals base, end equals floor.
        assert!((lr_at(10, total, &lr) - 1e-3).abs() < 1e-12);
        let end = lr_at(total - 1, total, &lr);
        assert!(end >= 1e-5 && end < 3e-5, "end lr {end} should sit near the floor");
        // Monotone decrease after warmup.
        for s in 10..total - 1 {
            assert!(lr_at(s + 1, total, &lr) <= lr_at(s, total, &lr) + 1e-15);
        }
    }

    #[test]
    fn zero_warmup_starts_at_base() {
        let lr = LrSchedule { base: 2e-3, warmup_frac: 0.0, floor: 0.0 };
        assert!((lr_at(0, 50, &lr) - 2e-3).abs() < 1e-12);
    }

    #[test]
    fn momentum_constant_without_ramp_and_ramps_to_one_with() {
        let cfg = TrainConfig { momentum: 0.996, momentum_ramp: false, ..Default::default() };
        assert_eq!(momentum_at(0, 100, &cfg), 0.996);
        assert_eq!(momentum_at(99, 100, &cfg), 0.996);
        let ramp = TrainConfig { momentum_ramp: true, ..cfg };
        assert!((momentum_at(0, 100, &ramp) - 0.996).abs() < 1e-12);
        assert!(momentum_at(100, 100, &ramp) > 0.999999);
        for s in 0..100 {
            assert!(momentum_at(s + 1, 100, &ramp) >= momentum_at(s, 100, &ramp));
        }
    }

    fn tiny_cfg() -> FitConfig {
        FitConfig {
            augment: AugmentConfig {
                global_crop: 16,
                local_crop: 8,
                n_local: 1,
                subband_fraction: 0.5,
                mask_ratio: 0.5,
                mean_shift_range: 0.1,
                despeckle_looks: 3,
                rng_seed: 7,
            },
            encoder: EncoderConfig {
                patch_size: 4,
                embed_dim: 8,
                depth: 1,
                n_heads: 2,
                head_hidden: 8,
                proj_dim: 6,
                n_prototypes: 4,
                pool: PoolMode::ClassToken,
            },
            loss: LossConfig::default(),
            train: TrainConfig {
                epochs: 2,
                batch_size: 2,
                seed: 11,
                weight_decay: 1e-4,
                ..Default::default()
            },
        }
    }

    fn tiny_dataset(n: usize) -> Vec<SlcImage> {
        (0..n)
            .map(|i| generate_synthetic((i % 4) as u32, (24, 24), 500 + i as u64).unwrap())
            .collect()
    }

    #[test]
    fn adamw_single_step_matches_hand_computation() {
        let cfg = EncoderConfig {
            patch_size: 2,
            embed_dim: 4,
            depth: 1,
            n_heads: 1,
            head_hidden: 4,
            proj_dim: 4,
            n_prototypes: 2,
            pool: PoolMode::ClassToken,
        };
        let mut params = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let ti = params.index_of("patch_embed.weight");
        let theta0 = params.tensors()[ti].data[(0, 0)];
        let mut grads: Vec<Mat<f64>> = params
            .tensors()
            .iter()
            .map(|t| Mat::zeros(t.data.rows(), t.data.cols()))
            .collect();
        let g = 0.3;
        grads[ti][(0, 0)] = g;
        let wd = 0.01;
        let lr = 1e-2;
        let mut opt = AdamW::new(&params, wd);
        opt.step(&mut params, &grads, lr).unwrap();

        // By hand, t = 1: m = 0.1 g, v = 0.001 g^2, bias corrections make
        // m_hat = g and v_hat = g^2, so the Adam term is g/(|g| + eps);
        // decay adds wd * theta, both scaled by lr.
        let expect = theta0 - lr * (g / (g.abs() + 1e-8) + wd * theta0);
        let got = params.tensors()[ti].data[(0, 0)];
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
    }

    #[test]
    fn weight_decay_skips_biases_and_norms() {
        let cfg = EncoderConfig {
            patch_size: 2,
            embed_dim: 4,
            depth: 1,
            n_heads: 1,
            head_hidden: 4,
            proj_dim: 4,
            n_prototypes: 2,
            pool: PoolMode::ClassToken,
        };
        let mut params = ModelParams::<f64>::init(&cfg, 2).unwrap();
        let grads: Vec<Mat<f64>> = params
            .tensors()
            .iter()
            .map(|t| Mat::zeros(t.data.rows(), t.data.cols()))
            .collect();
        let before = params.clone();
        let mut opt = AdamW::new(&params, 0.5);
        opt.step(&mut params, &grads, 0.1).unwrap();
        for (b, a) in before.tensors().iter().zip(params.tensors()) {
            if decays(&b.name) {
                // Zero gradient still decays weights: theta * (1 - lr wd).
                for (x, y) in b.data.as_slice().iter().zip(a.data.as_slice()) {
                    assert!((y - x * (1.0 - 0.05)).abs() < 1e-12, "{} decay", b.name);
                }
            } else {
                assert_eq!(b.data.as_slice(), a.data.as_slice(), "{} must not decay", b.name);
            }
        }
    }

    #[test]
    fn non_finite_gradient_leaves_everything_untouched() {
        let cfg = tiny_cfg().encoder;
        let mut params = ModelParams::<f32>::init(&cfg, 3).unwrap();
        let before = params.clone();
        let mut grads: Vec<Mat<f32>> = params
            .tensors()
            .iter()
            .map(|t| Mat::zeros(t.data.rows(), t.data.cols()))
            .collect();
        grads[0][(0, 0)] = f32::INFINITY;
        let mut opt = AdamW::new(&params, 0.0);
        let err = opt.step(&mut params, &grads, 1e-3);
        assert!(matches!(err, Err(SfeError::Numerical { .. })));
        assert_eq!(opt.steps_taken(), 0, "failed step must not advance the optimizer");
        for (b, a) in before.tensors().iter().zip(params.tensors()) {
            assert_eq!(b.data.as_slice(), a.data.as_slice(), "{} modified", b.name);
        }
    }

    #[test]
    fn ema_momentum_one_is_a_bitwise_freeze() {
        let cfg = tiny_cfg().encoder;
        let student = ModelParams::<f32>::init(&cfg, 4).unwrap();
        let mut teacher = ModelParams::<f32>::init(&cfg, 5).unwrap();
        let before = teacher.clone();
        ema_update(&mut teacher, &student, 1.0).unwrap();
        for (b, a) in before.tensors().iter().zip(teacher.tensors()) {
            let bb: &[f32] = b.data.as_slice();
            let aa: &[f32] = a.data.as_slice();
            assert_eq!(
                bb.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                aa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "{} changed under m = 1",
                b.name
            );
        }
    }

    #[test]
    fn ema_momentum_zero_copies_the_student() {
        let cfg = tiny_cfg().encoder;
        let student = ModelParams::<f32>::init(&cfg, 6).unwrap();
        let mut teacher = ModelParams::<f32>::init(&cfg, 7).unwrap();
        ema_update(&mut teacher, &student, 0.0).unwrap();
        for (t, s) in teacher.tensors().iter().zip(student.tensors()) {
            assert_eq!(t.data.as_slice(), s.data.as_slice(), "{} should equal student", t.name);
        }
    }

    #[test]
    fn ema_moves_teacher_toward_student_by_the_right_amount() {
        let cfg = tiny_cfg().encoder;
        let student = ModelParams::<f64>::init(&cfg, 8).unwrap();
        let mut teacher = ModelParams::<f64>::init(&cfg, 9).unwrap();
        let before = teacher.clone();
        let m = 0.996;
        ema_update(&mut teacher, &student, m).unwrap();
        for ((b, a), s) in before.tensors().iter().zip(teacher.tensors()).zip(student.tensors()) {
            for ((&bv, &av), &sv) in
                b.data.as_slice().iter().zip(a.data.as_slice()).zip(s.data.as_slice())
            {
                let expect = m * bv + (1.0 - m) * sv;
                assert!((av - expect).abs() < 1e-15, "{}", b.name);
            }
        }
    }

    #[test]
    fn fit_writes_metrics_and_final_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let images = tiny_dataset(4);
        let cfg = tiny_cfg();
        let report = fit(&images, &cfg, dir.path(), StartPoint::Init).unwrap();
        // 4 images, batch 2, 2 epochs -> 4 steps.
        assert_eq!(report.steps, 4);
        assert!(report.final_loss.total.is_finite());
        let metrics = std::fs::read_to_string(&report.metrics_path).unwrap();
        let lines: Vec<&str> = metrics.lines().collect();
        assert_eq!(lines[0], "step,loss,l_sim,r,lr,m");
        assert_eq!(lines.len(), 5, "header plus one row per step");
        assert!(lines[1].starts_with("1,"));
        assert!(report.checkpoint_dir.join("student.prototypes.sfet").exists());
        assert!(report.checkpoint_dir.join("teacher.cls_token.sfet").exists());
        assert!(report.checkpoint_dir.join("state.json").exists());
    }

    #[test]
    fn fit_is_seed_deterministic() {
        let images = tiny_dataset(4);
        let cfg = tiny_cfg();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r1 = fit(&images, &cfg, d1.path(), StartPoint::Init).unwrap();
        let r2 = fit(&images, &cfg, d2.path(), StartPoint::Init).unwrap();
        assert_eq!(
            std::fs::read_to_string(&r1.metrics_path).unwrap(),
            std::fs::read_to_string(&r2.metrics_path).unwrap(),
            "metrics must be identical run to run"
        );
        let s1 = ModelParams::<f32>::load_dir(&r1.checkpoint_dir, "student", &cfg.encoder).unwrap();
        let s2 = ModelParams::<f32>::load_dir(&r2.checkpoint_dir, "student", &cfg.encoder).unwrap();
        for (a, b) in s1.tensors().iter().zip(s2.tensors()) {
            assert_eq!(a.data.as_slice(), b.data.as_slice(), "{} differs across runs", a.name);
        }
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_exactly() {
        let images = tiny_dataset(4);
        let mut cfg = tiny_cfg();
        cfg.train.epochs = 4;
        cfg.train.checkpoint_every = 4; // one checkpoint at step 4 of 8

        let d_full = tempfile::tempdir().unwrap();
        let full = fit(&images, &cfg, d_full.path(), StartPoint::Init).unwrap();
        assert_eq!(full.steps, 8);

        let d_resumed = tempfile::tempdir().unwrap();
        let ckpt = load_checkpoint(&d_full.path().join("ckpt_4"), &cfg).unwrap();
        let resumed =
            fit(&images, &cfg, d_resumed.path(), StartPoint::Resume(Box::new(ckpt))).unwrap();
        assert_eq!(resumed.steps, 8);

        for prefix in ["student", "teacher"] {
            let a = ModelParams::<f32>::load_dir(&full.checkpoint_dir, prefix, &cfg.encoder)
                .unwrap();
            let b = ModelParams::<f32>::load_dir(&resumed.checkpoint_dir, prefix, &cfg.encoder)
                .unwrap();
            for (x, y) in a.tensors().iter().zip(b.tensors()) {
                assert_eq!(
                    x.data.as_slice(),
                    y.data.as_slice(),
                    "{prefix}.{} diverged after resume",
                    x.name
                );
            }
        }

        // Resuming in the original directory must leave metrics.csv
        // byte-identical to the uninterrupted run: rows past the
        // checkpoint are replaced, not duplicated.
        let full_metrics = std::fs::read(&full.metrics_path).unwrap();
        let ckpt = load_checkpoint(&d_full.path().join("ckpt_4"), &cfg).unwrap();
        let again =
            fit(&images, &cfg, d_full.path(), StartPoint::Resume(Box::new(ckpt))).unwrap();
        assert_eq!(again.steps, 8);
        assert_eq!(std::fs::read(&again.metrics_path).unwrap(), full_metrics);
    }

    #[test]
    fn resume_with_changed_config_is_rejected() {
        let images = tiny_dataset(4);
        let mut cfg = tiny_cfg();
        cfg.train.checkpoint_every = 2;
        let dir = tempfile::tempdir().unwrap();
        fit(&images, &cfg, dir.path(), StartPoint::Init).unwrap();
        let mut other = cfg.clone();
        other.loss.lambda = 0.5;
        let err = load_checkpoint(&dir.path().join("ckpt_2"), &other);
        assert!(matches!(err, Err(SfeError::Config { .. })));
    }

    #[test]
    fn training_reduces_the_loss_on_a_small_problem() {
        // Not a convergence proof, just a sanity check that optimization
        // makes progress: mean loss over the last epoch is below the mean
        // over the first on a learnable toy problem.
        let dir = tempfile::tempdir().unwrap();
        let images = tiny_dataset(8);
        let mut cfg = tiny_cfg();
        cfg.train.epochs = 6;
        cfg.train.batch_size = 4;
        let report = fit(&images, &cfg, dir.path(), StartPoint::Init).unwrap();
        let metrics = std::fs::read_to_string(&report.metrics_path).unwrap();
        let losses: Vec<f64> = metrics
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(losses.len(), 12);
        let first: f64 = losses[..2].iter().sum::<f64>() / 2.0;
        let last: f64 = losses[10..].iter().sum::<f64>() / 2.0;
        assert!(
            last < first,
            "loss should trend down: first epoch {first:.4}, last epoch {last:.4}"
        );
    }
}
