//! Losses, the optimization schedule, the scoring-network training loop,
//! self-distillation, and the gradient checker.
//!
//! The fused-image loss is the mean absolute error between the weighted
//! fusion and the ground truth. The weighting loss is a heteroscedastic
//! negative log-likelihood against the one-hot oracle masks with a total
//! variation smoothness term:
//!
//! ```text
//! L_nll = (1/C) sum_c [ mean(exp(-lv_c) (w_c - w_c^gt)^2)
//!                       + mean(lv_c / 2) + lambda_tv * tv(w_c) ]
//! L = L_nll + lambda_0 * L_fuse
//! ```

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::fusion::{OracleWeights, WeightStack};
use crate::image::ImagePatch;
use crate::nn::tape::{tv_value, NodeId};
use crate::nn::{Adam, DropoutMode, GradSet, ParamSet, Tape, Tensor, UNet};
use crate::noise::{derive_seed, Manifest};
use crate::pool::{run_pool, validate_pool, DenoiserHandle, PoolOutput};
use crate::scorer::{Scorer, ScoringNetConfig};
use crate::{Error, Result};

/// Loss-term configuration, including the ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Weight of the total-variation smoothness term.
    pub lambda_tv: f64,
    /// Weight of the fused-image loss in the total.
    pub lambda_0: f64,
    pub use_nll: bool,
    pub use_fuse: bool,
    /// Freeze the log-variance head at zero inside the likelihood loss.
    pub fix_sigma: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_tv: 0.01,
            lambda_0: 1.0,
            use_nll: true,
            use_fuse: true,
            fix_sigma: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_tv < 0.0 || self.lambda_0 < 0.0 {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        if !self.use_nll && !self.use_fuse {
            return Err(Error::InvalidArgument(
                "at least one of use_nll, use_fuse must be enabled".into(),
            ));
        }
        Ok(())
    }
}

/// Data augmentation switches.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
    pub crop: bool,
    pub mixup: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            rotate: true,
            crop: true,
            mixup: false,
        }
    }
}

/// Optimization schedule (Adam, beta1 0.9 / beta2 0.999; the learning rate
/// halves every `decay_every` epochs down to `lr_floor`).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSchedule {
    pub batch: usize,
    pub patch: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub lr_floor: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            batch: 32,
            patch: 128,
            lr_init: 1e-4,
            lr_decay: 0.5,
            decay_every: 200,
            lr_floor: 1e-6,
            epochs: 2000,
            iters_per_epoch: 100,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// lr(e) = max(lr_init * decay^(e / decay_every), lr_floor)
    pub fn lr_at(&self, epoch: usize) -> f64 {
        (self.lr_init * self.lr_decay.powi((epoch / self.decay_every) as i32)).max(self.lr_floor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.patch == 0 || self.iters_per_epoch == 0 {
            return Err(Error::InvalidArgument(
                "batch, patch and iters_per_epoch must be positive".into(),
            ));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be positive".into()));
        }
        if self.lr_init <= 0.0 || self.lr_floor <= 0.0 {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// How score maps become weighting maps.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Weighting {
    /// Per-pixel softmax across the pool (the standard path).
    Softmax,
    /// Clamp raw scores to [0,1] and renormalize (no softmax).
    Direct,
    /// Tile-average the score maps before the softmax.
    PatchwiseSoftmax(usize),
}

/// Anisotropic total variation of a single-channel map (mean of |dx| + |dy|,
/// forward differences, replicate boundary).
pub fn tv(map: &ImagePatch) -> Result<f64> {
    if map.channels() != 1 {
        return Err(Error::InvalidArgument("tv expects a single-channel map".into()));
    }
    let plane: Vec<f64> = map.data().iter().map(|&v| v as f64).collect();
    Ok(tv_value(&plane, map.height(), map.width()))
}

/// Mean absolute error between the fused image and the ground truth.
pub fn loss_fuse(weights: &WeightStack, results: &PoolOutput, gt: &ImagePatch) -> Result<f64> {
    if results.len() != weights.len() {
        return Err(Error::shape("loss_fuse members", results.len(), weights.len()));
    }
    let images: Vec<Tensor> = results.images().map(Tensor::from_patch).collect();
    let params = ParamSet::default();
    let mut tape = Tape::new(&params);
    let w = tape.constant(weights.to_tensor());
    let fused = tape.fuse_weighted(w, images);
    let loss = tape.l1_loss(fused, Tensor::from_patch(gt));
    Ok(tape.value(loss).scalar_value())
}

/// Negative log-likelihood weighting loss with TV smoothing.
pub fn loss_nll(
    weights: &WeightStack,
    log_var: &[ImagePatch],
    oracle: &OracleWeights,
    lambda_tv: f64,
) -> Result<f64> {
    if log_var.len() != weights.len() || oracle.masks.len() != weights.len() {
        return Err(Error::shape(
            "loss_nll members",
            weights.len(),
            log_var.len().max(oracle.masks.len()),
        ));
    }
    let (h, w) = weights.spatial();
    let mut lv = Tensor::zeros(weights.len(), h, w);
    for (c, m) in log_var.iter().enumerate() {
        if m.shape() != (h, w, 1) {
            return Err(Error::shape(
                "log variance maps",
                format!("{:?}", (h, w, 1usize)),
                format!("{:?}", m.shape()),
            ));
        }
        if !m.data().iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite log variance".into()));
        }
        for (o, &v) in lv.plane_mut(c).iter_mut().zip(m.data()) {
            *o = v as f64;
        }
    }
    let params = ParamSet::default();
    let mut tape = Tape::new(&params);
    let wn = tape.constant(weights.to_tensor());
    let lvn = tape.constant(lv);
    let loss = tape.nll_loss(wn, Some(lvn), oracle.to_target_tensor(), lambda_tv);
    Ok(tape.value(loss).scalar_value())
}

/// Combined loss with terms selected by the config.
pub fn total_loss(
    cfg: &LossConfig,
    weights: &WeightStack,
    log_var: &[ImagePatch],
    oracle: &OracleWeights,
    results: &PoolOutput,
    gt: &ImagePatch,
) -> Result<f64> {
    cfg.validate()?;
    let mut total = 0.0;
    if cfg.use_nll {
        let zeros;
        let lv: &[ImagePatch] = if cfg.fix_sigma {
            let (h, w) = weights.spatial();
            zeros = vec![ImagePatch::splat(h, w, 1, 0.0)?; weights.len()];
            &zeros
        } else {
            log_var
        };
        total += loss_nll(weights, lv, oracle, cfg.lambda_tv)?;
    }
    if cfg.use_fuse {
        total += cfg.lambda_0 * loss_fuse(weights, results, gt)?;
    }
    Ok(total)
}

/// One training sample, already augmented, as graph constants.
struct SampleTensors {
    /// C stacked (noisy, denoised_c) inputs.
    inputs: Vec<Tensor>,
    /// C denoised images.
    images: Vec<Tensor>,
    gt: Tensor,
    /// One-hot oracle masks, (C, H, W).
    target: Tensor,
}

struct LossNodes {
    total: NodeId,
    nll: NodeId,
    fuse: NodeId,
}

/// Builds the per-sample loss graph: C scorer passes with shared parameters,
/// weighting, likelihood and fusion losses.
fn build_scorer_loss(
    tape: &mut Tape<'_>,
    net: &UNet,
    sample: &SampleTensors,
    loss_cfg: &LossConfig,
    weighting: Weighting,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<LossNodes> {
    let c = sample.inputs.len();
    let mut scores = Vec::with_capacity(c);
    let mut log_vars = Vec::with_capacity(c);
    let mut rng = dropout_rng;
    for input in &sample.inputs {
        let x = tape.constant(input.clone());
        let (s, lv) = match rng.as_deref_mut() {
            Some(r) => net.forward(tape, x, DropoutMode::Active(r))?,
            None => net.forward(tape, x, DropoutMode::Disabled)?,
        };
        scores.push(s);
        log_vars.push(lv);
    }
    let (scores, log_vars) = match weighting {
        Weighting::PatchwiseSoftmax(p) => {
            let (_, h, w) = tape.value(scores[0]).shape();
            if p == 0 || h % p != 0 || w % p != 0 {
                return Err(Error::InvalidArgument(format!(
                    "tile {p} does not divide training patch {h}x{w}"
                )));
            }
            (
                scores.iter().map(|&s| tape.tile_average(s, p)).collect::<Vec<_>>(),
                log_vars.iter().map(|&s| tape.tile_average(s, p)).collect::<Vec<_>>(),
            )
        }
        _ => (scores, log_vars),
    };
    let score_stack = tape.stack_channels(scores);
    let weights = match weighting {
        Weighting::Direct => tape.direct_weights(score_stack),
        _ => tape.softmax_channels(score_stack),
    };
    let lv_stack = tape.stack_channels(log_vars);

    let lv_for_nll = if loss_cfg.fix_sigma { None } else { Some(lv_stack) };
    let nll = tape.nll_loss(weights, lv_for_nll, sample.target.clone(), loss_cfg.lambda_tv);
    let fused = tape.fuse_weighted(weights, sample.images.clone());
    let fuse = tape.l1_loss(fused, sample.gt.clone());

    let total = match (loss_cfg.use_nll, loss_cfg.use_fuse) {
        (true, true) => tape.add_scaled(nll, fuse, 1.0, loss_cfg.lambda_0),
        (true, false) => nll,
        (false, true) => tape.add_scaled(fuse, fuse, loss_cfg.lambda_0, 0.0),
        (false, false) => unreachable!("validated"),
    };
    Ok(LossNodes { total, nll, fuse })
}

/// One loss-curve line: epoch, iteration, learning rate, both loss terms
/// and the optimized total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLogEntry {
    pub epoch: usize,
    pub iter: usize,
    pub lr: f64,
    pub loss_nll: f64,
    pub loss_fuse: f64,
    pub total: f64,
}

pub fn write_loss_log(path: impl AsRef<Path>, entries: &[LossLogEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("# epoch iter lr loss_nll loss_fuse total\n");
    for e in entries {
        text.push_str(&format!(
            "{} {} {:e} {:.12e} {:.12e} {:.12e}\n",
            e.epoch, e.iter, e.lr, e.loss_nll, e.loss_fuse, e.total
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Everything produced by a scorer training run.
pub struct ScorerTraining {
    pub scorer: Scorer,
    pub log: Vec<LossLogEntry>,
    pub checkpoint: PathBuf,
}

struct CachedEntry {
    noisy: ImagePatch,
    clean: ImagePatch,
    denoised: Vec<ImagePatch>,
}

fn precompute_pool(pool: &[DenoiserHandle], datasets: &[&Manifest]) -> Result<Vec<CachedEntry>> {
    let mut entries = Vec::new();
    for m in datasets {
        for (id, noisy, clean) in m.load_pairs()? {
            let out = run_pool(pool, &noisy, &id)?;
            entries.push(CachedEntry {
                noisy,
                clean,
                denoised: out.results.into_iter().map(|(_, img)| img).collect(),
            });
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument("training datasets are empty".into()));
    }
    Ok(entries)
}

fn mix_patch(a: &ImagePatch, b: &ImagePatch, lambda: f32) -> Result<ImagePatch> {
    ImagePatch::new(
        a.height(),
        a.width(),
        a.channels(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
            .collect(),
    )
}

struct RawSample {
    noisy: ImagePatch,
    clean: ImagePatch,
    denoised: Vec<ImagePatch>,
}

fn draw_sample(
    cache: &[CachedEntry],
    sched: &TrainSchedule,
    seed: u64,
) -> Result<RawSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entry = &cache[rng.random_range(0..cache.len())];
    let (h, w) = (entry.noisy.height(), entry.noisy.width());
    if h < sched.patch || w < sched.patch {
        return Err(Error::InvalidArgument(format!(
            "dataset patches {h}x{w} smaller than schedule patch {}",
            sched.patch
        )));
    }
    let (y, x) = if sched.augment.crop {
        (
            rng.random_range(0..=h - sched.patch),
            rng.random_range(0..=w - sched.patch),
        )
    } else {
        ((h - sched.patch) / 2, (w - sched.patch) / 2)
    };
    let rot = if sched.augment.rotate {
        rng.random_range(0..4u8)
    } else {
        0
    };
    let flip = sched.augment.flip && rng.random_bool(0.5);

    let transform = |img: &ImagePatch| -> Result<ImagePatch> {
        let mut p = img.crop(y, x, sched.patch, sched.patch)?;
        for _ in 0..rot {
            p = p.rot90();
        }
        if flip {
            p = p.flip_horizontal();
        }
        Ok(p)
    };
    Ok(RawSample {
        noisy: transform(&entry.noisy)?,
        clean: transform(&entry.clean)?,
        denoised: entry.denoised.iter().map(&transform).collect::<Result<Vec<_>>>()?,
    })
}

/// Per-pixel squared error argmin as a one-hot (C,H,W) tensor; ties go to
/// the lowest pool index. Recomputed after augmentation and mixing.
fn oracle_target(denoised: &[ImagePatch], clean: &ImagePatch) -> Tensor {
    let (h, w, ch) = clean.shape();
    let c = denoised.len();
    let mut target = Tensor::zeros(c, h, w);
    for i in 0..h * w {
        let mut best = 0usize;
        let mut best_err = f64::INFINITY;
        for (ci, img) in denoised.iter().enumerate() {
            let mut acc = 0.0f64;
            for k in 0..ch {
                let d = img.data()[i * ch + k] as f64 - clean.data()[i * ch + k] as f64;
                acc += d * d;
            }
            if acc < best_err {
                best_err = acc;
                best = ci;
            }
        }
        target.plane_mut(best)[i] = 1.0;
    }
    target
}

fn to_sample_tensors(raw: &RawSample) -> Result<SampleTensors> {
    Ok(SampleTensors {
        inputs: raw
            .denoised
            .iter()
            .map(|z| Tensor::from_patch_pair(&raw.noisy, z))
            .collect::<Result<Vec<_>>>()?,
        images: raw.denoised.iter().map(Tensor::from_patch).collect(),
        gt: Tensor::from_patch(&raw.clean),
        target: oracle_target(&raw.denoised, &raw.clean),
    })
}

/// Trains the scoring network against a frozen pool.
///
/// Per batch: run the pool on augmented crops, score every (noisy, result)
/// pair with shared parameters, assemble the weighting maps, evaluate the
/// combined loss, and apply one Adam step. Writes a checkpoint and the loss
/// curve into `out_dir`. Deterministic given the schedule seed.
pub fn train_scorer(
    pool: &[DenoiserHandle],
    datasets: &[&Manifest],
    scorer_cfg: ScoringNetConfig,
    loss_cfg: &LossConfig,
    sched: &TrainSchedule,
    weighting: Weighting,
    out_dir: impl AsRef<Path>,
) -> Result<ScorerTraining> {
    validate_pool(pool)?;
    loss_cfg.validate()?;
    sched.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let multiple = 1usize << (scorer_cfg.levels - 1);
    if !sched.patch.is_multiple_of(multiple) {
        return Err(Error::InvalidArgument(format!(
            "training patch {} must be divisible by {multiple}",
            sched.patch
        )));
    }

    let cache = precompute_pool(pool, datasets)?;
    let mut scorer = Scorer::init(scorer_cfg, sched.seed)?;
    let net = scorer.network().clone();
    let mut params = scorer.params.clone();
    let mut adam = Adam::new(&params);
    let mut log = Vec::with_capacity(sched.epochs * sched.iters_per_epoch);
    let ckpt_path = out_dir.join("scorer.ckpt");
    let mixup_beta = rand_distr::Beta::new(1.2, 1.2)
        .map_err(|e| Error::InvalidArgument(format!("mixup beta: {e}")))?;

    for epoch in 0..sched.epochs {
        let lr = sched.lr_at(epoch);
        for iter in 0..sched.iters_per_epoch {
            let global = epoch * sched.iters_per_epoch + iter;

            let mut raws: Vec<RawSample> = (0..sched.batch)
                .map(|b| {
                    draw_sample(
                        &cache,
                        sched,
                        derive_seed(sched.seed, (global * sched.batch + b) as u64),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            if sched.augment.mixup && sched.batch >= 2 {
                let mut mix_rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(sched.seed ^ 0x6d69_7875, global as u64));
                for b in (0..sched.batch - 1).step_by(2) {
                    let lambda = mix_rng.sample(mixup_beta) as f32;
                    let (left, right) = raws.split_at_mut(b + 1);
                    let (a, o) = (&mut left[b], &right[0]);
                    a.noisy = mix_patch(&a.noisy, &o.noisy, lambda)?;
                    a.clean = mix_patch(&a.clean, &o.clean, lambda)?;
                    for (za, zo) in a.denoised.iter_mut().zip(&o.denoised) {
                        *za = mix_patch(za, zo, lambda)?;
                    }
                }
            }
            let samples: Vec<SampleTensors> = raws
                .iter()
                .map(to_sample_tensors)
                .collect::<Result<Vec<_>>>()?;

            let batch_result: Result<Vec<(f64, f64, f64, GradSet)>> = samples
                .par_iter()
                .enumerate()
                .map(|(b, sample)| {
                    let mut grads = GradSet::zeros_like(&params);
                    let mut tape = Tape::new(&params);
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        sched.seed ^ 0x64726f70,
                        (global * sched.batch + b) as u64,
                    ));
                    let nodes =
                        build_scorer_loss(&mut tape, &net, sample, loss_cfg, weighting, Some(&mut rng))?;
                    tape.backward(nodes.total, &mut grads);
                    Ok((
                        tape.value(nodes.nll).scalar_value(),
                        tape.value(nodes.fuse).scalar_value(),
                        tape.value(nodes.total).scalar_value(),
                        grads,
                    ))
                })
                .collect();
            let results = match batch_result {
                Ok(r) => r,
                Err(e) => {
                    // Keep the last finite parameters on disk for post-mortems.
                    scorer.set_params(params);
                    scorer.save(&ckpt_path)?;
                    write_loss_log(out_dir.join("loss_log.txt"), &log)?;
                    return Err(Error::Numerical(format!(
                        "scorer training aborted at epoch {epoch} iter {iter}: {e}; last-good checkpoint at {}",
                        ckpt_path.display()
                    )));
                }
            };

            let mut grads = GradSet::zeros_like(&params);
            let (mut nll_sum, mut fuse_sum, mut total_sum) = (0.0, 0.0, 0.0);
            for (n, f, t, g) in &results {
                nll_sum += n;
                fuse_sum += f;
                total_sum += t;
                grads.add_assign(g);
            }
            let inv = 1.0 / sched.batch as f64;
            grads.scale(inv);
            let entry = LossLogEntry {
                epoch,
                iter,
                lr,
                loss_nll: nll_sum * inv,
                loss_fuse: fuse_sum * inv,
                total: total_sum * inv,
            };
            if !entry.total.is_finite() {
                scorer.set_params(params);
                scorer.save(&ckpt_path)?;
                write_loss_log(out_dir.join("loss_log.txt"), &log)?;
                return Err(Error::Numerical(format!(
                    "scorer training diverged at epoch {epoch} iter {iter}; last-good checkpoint at {}",
                    ckpt_path.display()
                )));
            }
            log.push(entry);
            if let Err(e) = adam.step(&mut params, &grads, lr) {
                scorer.set_params(params);
                scorer.save(&ckpt_path)?;
                write_loss_log(out_dir.join("loss_log.txt"), &log)?;
                return Err(Error::Numerical(format!(
                    "scorer training aborted at epoch {epoch} iter {iter}: {e}; last-good checkpoint at {}",
                    ckpt_path.display()
                )));
            }
        }
    }

    scorer.set_params(params);
    scorer.save(&ckpt_path)?;
    write_loss_log(out_dir.join("loss_log.txt"), &log)?;
    Ok(ScorerTraining {
        scorer,
        log,
        checkpoint: ckpt_path,
    })
}

/// Fine-tuning setup for the distillation stage.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DistillConfig {
    pub iters: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub seed: u64,
}

pub struct DistillOutcome {
    pub best_name: String,
    /// Validation PSNR of the best member before fine-tuning.
    pub pre_psnr: f64,
    pub checkpoint: PathBuf,
}

/// Fine-tunes the best pool member on (noisy, fused) pseudo-pairs built by
/// running the trained scorer over unlabeled noisy images.
///
/// "Best" is the member with the highest validation PSNR; it must be a
/// trainable CNN (classic filters and external results cannot be tuned).
pub fn distill_best(
    pool: &[DenoiserHandle],
    scorer: &Scorer,
    unlabeled: &Manifest,
    validation: &Manifest,
    cfg: &DistillConfig,
    out_checkpoint: impl AsRef<Path>,
) -> Result<DistillOutcome> {
    validate_pool(pool)?;
    let val_pairs = validation.load_pairs()?;
    if val_pairs.is_empty() {
        return Err(Error::InvalidArgument("validation manifest is empty".into()));
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, handle) in pool.iter().enumerate() {
        let mut acc = 0.0;
        for (id, noisy, clean) in &val_pairs {
            let den = handle.denoise(noisy, id)?;
            acc += crate::image::psnr(&den, clean, 1.0)?;
        }
        let mean = acc / val_pairs.len() as f64;
        if best.map(|(_, p)| mean > p).unwrap_or(true) {
            best = Some((i, mean));
        }
    }
    let (best_idx, pre_psnr) = best.expect("non-empty pool");
    let handle = &pool[best_idx];
    let (config, start_params) = handle.cnn_parts().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "best pool member `{}` is {} and cannot be fine-tuned",
            handle.name(),
            handle.kind_name()
        ))
    })?;

    // Pseudo ground truth: the scorer-fused output on each unlabeled image.
    let mut pseudo: Vec<(ImagePatch, ImagePatch)> = Vec::new();
    for (id, noisy, _) in unlabeled.load_pairs()? {
        let out = run_pool(pool, &noisy, &id)?;
        let scores: Vec<ImagePatch> = out
            .results
            .iter()
            .map(|(name, img)| {
                scorer
                    .score(&noisy, img, name, crate::scorer::ScoreMode::Eval)
                    .map(|b| b.score)
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = crate::fusion::softmax_weights(&scores)?;
        let fused = crate::fusion::fuse(&out, &weights)?;
        pseudo.push((noisy, fused));
    }
    if pseudo.is_empty() {
        return Err(Error::InvalidArgument("unlabeled manifest is empty".into()));
    }

    let net = crate::nn::Dncnn::from_params(*config, start_params)?;
    let mut params = start_params.clone();
    let mut adam = Adam::new(&params);
    for iter in 0..cfg.iters {
        let batch: Vec<(Tensor, Tensor)> = (0..cfg.batch)
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    (iter * cfg.batch + b) as u64,
                ));
                let (noisy, fused) = &pseudo[rng.random_range(0..pseudo.len())];
                let y = rng.random_range(0..=noisy.height() - cfg.patch);
                let x = rng.random_range(0..=noisy.width() - cfg.patch);
                Ok((
                    Tensor::from_patch(&noisy.crop(y, x, cfg.patch, cfg.patch)?),
                    Tensor::from_patch(&fused.crop(y, x, cfg.patch, cfg.patch)?),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<(f64, GradSet)> = batch
            .par_iter()
            .map(|(noisy, target)| {
                let mut grads = GradSet::zeros_like(&params);
                let mut tape = Tape::new(&params);
                let input = tape.constant(noisy.clone());
                let (denoised, _) = net.forward(&mut tape, input)?;
                let loss = tape.mse_loss(denoised, target.clone());
                let v = tape.value(loss).scalar_value();
                tape.backward(loss, &mut grads);
                Ok((v, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grads = GradSet::zeros_like(&params);
        let mut loss_sum = 0.0;
        for (v, g) in &results {
            loss_sum += v;
            grads.add_assign(g);
        }
        if !loss_sum.is_finite() {
            return Err(Error::Numerical(format!(
                "distillation diverged at iteration {iter}"
            )));
        }
        grads.scale(1.0 / cfg.batch as f64);
        adam.step(&mut params, &grads, cfg.lr)?;
    }

    let out_checkpoint = out_checkpoint.as_ref();
    crate::nn::Checkpoint::new("denoiser", cfg.seed, params)
        .with_meta("arch", config)?
        .with_meta("distilled_from", &handle.name().to_string())?
        .save(out_checkpoint)?;
    Ok(DistillOutcome {
        best_name: handle.name().to_string(),
        pre_psnr,
        checkpoint: out_checkpoint.to_path_buf(),
    })
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub pass: bool,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Verifies the analytic gradient of the total loss on a tiny network
/// (2 levels, base 4, 8x8 inputs, two pool members) against central finite
/// differences with step 1e-3. Passes when every parameter's error is below
/// `max(1e-6, 1e-3 * magnitude)`.
pub fn gradcheck(loss_cfg: &LossConfig, seed: u64) -> Result<GradcheckReport> {
    gradcheck_impl(loss_cfg, seed, None)
}

pub(crate) fn gradcheck_impl(
    loss_cfg: &LossConfig,
    seed: u64,
    corrupt: Option<(usize, usize, f64)>,
) -> Result<GradcheckReport> {
    loss_cfg.validate()?;
    let cfg = ScoringNetConfig {
        levels: 2,
        base_channels: 4,
        image_channels: 1,
        dropout_rate: 0.1,
        mc_dropout_enabled: true,
    };
    let scorer = Scorer::init(cfg, seed)?;
    let net = scorer.network().clone();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut rand_patch = |lo: f32, hi: f32| -> ImagePatch {
        ImagePatch::new(8, 8, 1, (0..64).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    };
    let clean = rand_patch(0.0, 1.0);
    let noisy = rand_patch(-0.1, 1.1);
    let denoised = vec![rand_patch(0.0, 1.0), rand_patch(0.0, 1.0)];
    let raw = RawSample {
        noisy,
        clean,
        denoised,
    };
    let sample = to_sample_tensors(&raw)?;

    // The dropout mask must be identical across evaluations, so every build
    // seeds the same stream.
    let dropout_seed = derive_seed(seed, 2);
    let eval = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new(params);
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let nodes = build_scorer_loss(
            &mut tape,
            &net,
            &sample,
            loss_cfg,
            Weighting::Softmax,
            Some(&mut rng),
        )?;
        Ok(tape.value(nodes.total).scalar_value())
    };

    let mut analytic = GradSet::zeros_like(&scorer.params);
    {
        let mut tape = Tape::new(&scorer.params);
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let nodes = build_scorer_loss(
            &mut tape,
            &net,
            &sample,
            loss_cfg,
            Weighting::Softmax,
            Some(&mut rng),
        )?;
        tape.backward(nodes.total, &mut analytic);
    }
    if let Some((e, i, delta)) = corrupt {
        analytic.grads[e][i] += delta;
    }

    // Primary step 1e-3. The loss is piecewise linear through ReLU and the
    // L1 term, so a step can straddle a kink and make the central difference
    // wrong even when the analytic gradient is exact; parameters that fail
    // are re-checked with smaller steps before being counted as failures.
    let steps = [1e-3, 1e-4, 1e-5];
    let mut report = GradcheckReport {
        pass: true,
        max_rel_err: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let mut params = scorer.params.clone();
    for e in 0..params.entries.len() {
        for i in 0..params.entries[e].data.len() {
            let an = analytic.grads[e][i];
            let mut best_err = f64::INFINITY;
            let mut best_rel = f64::INFINITY;
            for &h in &steps {
                let orig = params.entries[e].data[i];
                params.entries[e].data[i] = orig + h;
                let fp = eval(&params)?;
                params.entries[e].data[i] = orig - h;
                let fm = eval(&params)?;
                params.entries[e].data[i] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let scale = an.abs().max(numeric.abs());
                let err = (an - numeric).abs();
                let rel = if scale > 1e-6 { err / scale } else { 0.0 };
                if err < best_err {
                    best_err = err;
                    best_rel = rel;
                }
                if err <= (1e-3 * scale).max(1e-6) {
                    break;
                }
            }
            report.checked += 1;
            // Below the absolute floor the relative error is not meaningful.
            let meaningful_rel = if best_err <= 1e-6 { 0.0 } else { best_rel };
            if meaningful_rel > report.max_rel_err {
                report.max_rel_err = meaningful_rel;
                report.worst_param = format!("{}[{i}]", params.entries[e].name);
            }
            if best_err > (1e-3 * an.abs()).max(1e-6) && best_rel > 1e-3 {
                report.pass = false;
            }
        }
    }
    Ok(report)
}
