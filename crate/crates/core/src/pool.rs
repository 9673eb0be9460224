//! The denoiser pool: a uniform interface over classic filters, small
//! trainable CNN denoisers, and precomputed external results loaded from
//! disk. Pool members are frozen at inference; outputs keep the pool's
//! declared order because fusion weights are positional.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::image::{load_png, load_raster, ImagePatch};
use crate::nn::tensor::mirror_index;
use crate::nn::{Adam, Checkpoint, Dncnn, DncnnConfig, GradSet, ParamSet, Tape, Tensor};
use crate::noise::{derive_seed, Manifest};
use crate::{Error, Result};

/// Classic (zero-training) filters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "filter", rename_all = "snake_case")]
pub enum ClassicFilter {
    Identity,
    Gaussian { radius: usize, sigma: f64 },
    Median { radius: usize },
}

/// A named member of the denoiser pool.
#[derive(Debug, Clone)]
pub struct DenoiserHandle {
    name: String,
    kind: HandleKind,
}

#[derive(Debug, Clone)]
enum HandleKind {
    Classic(ClassicFilter),
    TrainedCnn {
        checkpoint: PathBuf,
        config: DncnnConfig,
        params: ParamSet,
    },
    External {
        dir: PathBuf,
    },
}

impl DenoiserHandle {
    pub fn classic(name: impl Into<String>, filter: ClassicFilter) -> DenoiserHandle {
        DenoiserHandle {
            name: name.into(),
            kind: HandleKind::Classic(filter),
        }
    }

    /// Loads a trained CNN denoiser checkpoint eagerly; the handle is
    /// immutable afterwards.
    pub fn trained_cnn(name: impl Into<String>, checkpoint: impl AsRef<Path>) -> Result<DenoiserHandle> {
        let path = checkpoint.as_ref();
        let ckpt = Checkpoint::load(path)?;
        if ckpt.kind != "denoiser" {
            return Err(Error::format(
                path,
                format!("expected a denoiser checkpoint, found `{}`", ckpt.kind),
            ));
        }
        let config: DncnnConfig = ckpt.meta_get("arch")?;
        Ok(DenoiserHandle {
            name: name.into(),
            kind: HandleKind::TrainedCnn {
                checkpoint: path.to_path_buf(),
                config,
                params: ckpt.params,
            },
        })
    }

    /// Results precomputed by an external method, one file per image stem
    /// under `dir` (`<stem>.fras` or `<stem>.png`).
    pub fn external(name: impl Into<String>, dir: impl AsRef<Path>) -> DenoiserHandle {
        DenoiserHandle {
            name: name.into(),
            kind: HandleKind::External {
                dir: dir.as_ref().to_path_buf(),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            HandleKind::Classic(_) => "classic",
            HandleKind::TrainedCnn { .. } => "trained_cnn",
            HandleKind::External { .. } => "external",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self.kind, HandleKind::TrainedCnn { .. })
    }

    /// The checkpoint path backing a trained CNN handle.
    pub fn checkpoint_path(&self) -> Option<&Path> {
        match &self.kind {
            HandleKind::TrainedCnn { checkpoint, .. } => Some(checkpoint),
            _ => None,
        }
    }

    pub fn cnn_parts(&self) -> Option<(&DncnnConfig, &ParamSet)> {
        match &self.kind {
            HandleKind::TrainedCnn { config, params, .. } => Some((config, params)),
            _ => None,
        }
    }

    /// Runs this denoiser on one image. `image_id` resolves external results.
    pub fn denoise(&self, noisy: &ImagePatch, image_id: &str) -> Result<ImagePatch> {
        match &self.kind {
            HandleKind::Classic(f) => Ok(apply_classic(*f, noisy)),
            HandleKind::TrainedCnn { config, params, .. } => denoise_cnn(config, params, noisy),
            HandleKind::External { dir } => {
                let result = resolve_external(dir, image_id)?;
                if !result.same_shape(noisy) {
                    return Err(Error::shape(
                        "external result",
                        format!("{:?}", noisy.shape()),
                        format!("{:?}", result.shape()),
                    ));
                }
                Ok(result)
            }
        }
    }
}

fn resolve_external(dir: &Path, image_id: &str) -> Result<ImagePatch> {
    let fras = dir.join(format!("{image_id}.fras"));
    let png = dir.join(format!("{image_id}.png"));
    match (fras.exists(), png.exists()) {
        (true, true) => Err(Error::InvalidArgument(format!(
            "ambiguous external results for `{image_id}` in {}",
            dir.display()
        ))),
        (true, false) => load_raster(&fras),
        (false, true) => load_png(&png),
        (false, false) => Err(Error::MissingArtifact(format!(
            "no external result for `{image_id}` in {}",
            dir.display()
        ))),
    }
}

/// The pool applied to one noisy image; results in canonical pool order.
#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub noisy: ImagePatch,
    pub results: Vec<(String, ImagePatch)>,
}

impl PoolOutput {
    pub fn images(&self) -> impl Iterator<Item = &ImagePatch> {
        self.results.iter().map(|(_, img)| img)
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

/// Validates that pool member names are unique.
pub fn validate_pool(pool: &[DenoiserHandle]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("denoiser pool is empty".into()));
    }
    let mut names: Vec<&str> = pool.iter().map(|h| h.name()).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != pool.len() {
        return Err(Error::InvalidArgument("duplicate denoiser names in pool".into()));
    }
    Ok(())
}

/// Runs every pool member on `noisy`; members evaluate concurrently but the
/// output order always matches the pool order.
pub fn run_pool(pool: &[DenoiserHandle], noisy: &ImagePatch, image_id: &str) -> Result<PoolOutput> {
    validate_pool(pool)?;
    let results: Vec<(String, ImagePatch)> = pool
        .par_iter()
        .map(|h| h.denoise(noisy, image_id).map(|img| (h.name().to_string(), img)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PoolOutput {
        noisy: noisy.clone(),
        results,
    })
}

/// The default zero-training pool: identity, two Gaussian blurs, two median
/// filters. Deterministic outputs.
pub fn classic_denoisers() -> Vec<DenoiserHandle> {
    vec![
        DenoiserHandle::classic("identity", ClassicFilter::Identity),
        DenoiserHandle::classic(
            "gauss_r1",
            ClassicFilter::Gaussian {
                radius: 1,
                sigma: 0.8,
            },
        ),
        DenoiserHandle::classic(
            "gauss_r2",
            ClassicFilter::Gaussian {
                radius: 2,
                sigma: 1.4,
            },
        ),
        DenoiserHandle::classic("median_r1", ClassicFilter::Median { radius: 1 }),
        DenoiserHandle::classic("median_r2", ClassicFilter::Median { radius: 2 }),
    ]
}

pub fn apply_classic(filter: ClassicFilter, img: &ImagePatch) -> ImagePatch {
    match filter {
        ClassicFilter::Identity => img.clone(),
        ClassicFilter::Gaussian { radius, sigma } => gaussian_blur(img, radius, sigma),
        ClassicFilter::Median { radius } => median_filter(img, radius),
    }
}

/// Separable Gaussian blur with half-sample symmetric (mirror) boundary.
pub fn gaussian_blur(img: &ImagePatch, radius: usize, sigma: f64) -> ImagePatch {
    let taps: Vec<f64> = {
        let mut k: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let sum: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= sum);
        k
    };
    let (h, w, ch) = img.shape();
    let r = radius as isize;
    // Horizontal pass.
    let mut tmp = vec![0.0f64; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &kv) in taps.iter().enumerate() {
                    let sx = mirror_shift(x, i as isize - r, w);
                    acc += kv * img.get(y, sx, c) as f64;
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, &kv) in taps.iter().enumerate() {
                    let sy = mirror_shift(y, i as isize - r, h);
                    acc += kv * tmp[(sy * w + x) * ch + c];
                }
                out.set(y, x, c, acc as f32);
            }
        }
    }
    out
}

#[inline]
fn mirror_shift(pos: usize, delta: isize, n: usize) -> usize {
    let p = pos as isize + delta;
    if p < 0 {
        (-p - 1) as usize
    } else {
        mirror_index(p as usize, n)
    }
}

/// Per-channel median over a (2r+1)^2 window, mirror boundary.
pub fn median_filter(img: &ImagePatch, radius: usize) -> ImagePatch {
    let (h, w, ch) = img.shape();
    let r = radius as isize;
    let mut out = img.clone();
    let mut window = Vec::with_capacity((2 * radius + 1) * (2 * radius + 1));
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                window.clear();
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sy = mirror_shift(y, dy, h);
                        let sx = mirror_shift(x, dx, w);
                        window.push(img.get(sy, sx, c));
                    }
                }
                window.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.set(y, x, c, window[window.len() / 2]);
            }
        }
    }
    out
}

/// Runs a trained CNN denoiser; inference is deterministic.
pub fn denoise_cnn(config: &DncnnConfig, params: &ParamSet, noisy: &ImagePatch) -> Result<ImagePatch> {
    if noisy.channels() != config.channels {
        return Err(Error::shape(
            "cnn denoiser channels",
            config.channels,
            noisy.channels(),
        ));
    }
    let net = Dncnn::from_params(*config, params)?;
    let mut tape = Tape::new(params);
    let input = tape.constant(Tensor::from_patch(noisy));
    let (denoised, _) = net.forward(&mut tape, input)?;
    tape.value(denoised).to_patch()
}

/// Configuration for desk-scale CNN denoiser training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DenoiserTrainConfig {
    pub arch: DncnnConfig,
    pub iters: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Trains a residual CNN denoiser on the manifest's (noisy, clean) pairs and
/// writes a checkpoint. Returns the checkpoint and the per-iteration loss
/// curve. Aborts with a diagnostic if the loss goes non-finite.
pub fn train_cnn_denoiser(
    config: &DenoiserTrainConfig,
    dataset: &Manifest,
    noise_level: f64,
    checkpoint_path: impl AsRef<Path>,
) -> Result<(Checkpoint, Vec<f64>)> {
    if noise_level < 0.0 {
        return Err(Error::InvalidArgument("noise level must be >= 0".into()));
    }
    let pairs = dataset.load_pairs()?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("dataset manifest has no entries".into()));
    }
    let mut params = ParamSet::default();
    let net = Dncnn::init(config.arch, config.seed, &mut params)?;
    let mut adam = Adam::new(&params);
    let mut losses = Vec::with_capacity(config.iters);

    for iter in 0..config.iters {
        let batch: Vec<(Tensor, Tensor)> = (0..config.batch)
            .map(|b| {
                sample_pair(
                    &pairs,
                    config.patch,
                    derive_seed(config.seed, (iter * config.batch + b) as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let results: Vec<(f64, GradSet)> = batch
            .par_iter()
            .map(|(noisy, clean)| {
                let mut grads = GradSet::zeros_like(&params);
                let mut tape = Tape::new(&params);
                let input = tape.constant(noisy.clone());
                let (denoised, _) = net.forward(&mut tape, input)?;
                let loss = tape.mse_loss(denoised, clean.clone());
                let value = tape.value(loss).scalar_value();
                tape.backward(loss, &mut grads);
                Ok((value, grads))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut grads = GradSet::zeros_like(&params);
        let mut loss_sum = 0.0;
        for (v, g) in &results {
            loss_sum += v;
            grads.add_assign(g);
        }
        grads.scale(1.0 / config.batch as f64);
        let loss = loss_sum / config.batch as f64;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "denoiser training diverged at iteration {iter} (loss {loss})"
            )));
        }
        losses.push(loss);
        adam.step(&mut params, &grads, config.lr)?;
    }

    let ckpt = Checkpoint::new("denoiser", config.seed, params)
        .with_meta("arch", &config.arch)?
        .with_meta("noise_level", &noise_level)?;
    ckpt.save(checkpoint_path)?;
    Ok((ckpt, losses))
}

/// Crops a random training pair and applies a random axis-aligned
/// orientation (rotations by 90 degrees and flips).
fn sample_pair(
    pairs: &[(String, ImagePatch, ImagePatch)],
    patch: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (_, noisy, clean) = &pairs[rng.random_range(0..pairs.len())];
    if noisy.height() < patch || noisy.width() < patch {
        return Err(Error::InvalidArgument(format!(
            "dataset patches {}x{} smaller than training patch {patch}",
            noisy.height(),
            noisy.width()
        )));
    }
    let y = rng.random_range(0..=noisy.height() - patch);
    let x = rng.random_range(0..=noisy.width() - patch);
    let orient = rng.random_range(0..8u8);
    let mut n = noisy.crop(y, x, patch, patch)?;
    let mut c = clean.crop(y, x, patch, patch)?;
    for _ in 0..orient % 4 {
        n = n.rot90();
        c = c.rot90();
    }
    if orient >= 4 {
        n = n.flip_horizontal();
        c = c.flip_horizontal();
    }
    Ok((Tensor::from_patch(&n), Tensor::from_patch(&c)))
}
