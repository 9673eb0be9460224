//! The uncertainty scoring network: maps a (noisy, denoised) pair to a
//! per-pixel score map and a per-pixel log-variance map.
//!
//! The log-variance parameterization keeps the likelihood loss stable; the
//! usual standard deviation is `exp(log_variance / 2)`. The uncertainty head
//! only matters during training and is ignored when fusing.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::ImagePatch;
use crate::nn::tape::tile_average_apply;
use crate::nn::{Checkpoint, DropoutMode, ParamSet, Tape, Tensor, UNet, UNetConfig};
use crate::noise::derive_seed;
use crate::{Error, Result};

/// Scoring network hyperparameters.
///
/// The channel count at level `L` is `base_channels * 2^L`; all kernels are
/// 3x3 with two convs per level in both encoder and decoder, and the two
/// heads emit one channel each.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScoringNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    /// Channel count of the images being scored (1 or 3); the network input
    /// is the channel-wise concatenation of noisy and denoised.
    pub image_channels: usize,
    pub dropout_rate: f64,
    /// When false, train-mode passes run without dropout (the "-MC" setup).
    pub mc_dropout_enabled: bool,
}

impl Default for ScoringNetConfig {
    fn default() -> Self {
        ScoringNetConfig {
            levels: 4,
            base_channels: 32,
            image_channels: 3,
            dropout_rate: 0.1,
            mc_dropout_enabled: true,
        }
    }
}

impl ScoringNetConfig {
    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            in_channels: 2 * self.image_channels,
            dropout_rate: if self.mc_dropout_enabled {
                self.dropout_rate
            } else {
                0.0
            },
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.unet_config().parameter_count()
    }
}

/// Score map plus log-variance map for one (noisy, denoised) pair.
#[derive(Debug, Clone)]
pub struct ScoreBundle {
    pub score: ImagePatch,
    pub log_variance: ImagePatch,
    pub denoiser_name: String,
}

/// Deterministic evaluation or stochastic (dropout-active) scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Eval,
    Train { dropout_seed: u64 },
}

/// The scoring network: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub config: ScoringNetConfig,
    pub params: ParamSet,
    net: UNet,
    seed: u64,
}

impl Scorer {
    /// Deterministic initialization: conv weights fan-in-scaled uniform,
    /// biases zero.
    pub fn init(config: ScoringNetConfig, seed: u64) -> Result<Scorer> {
        let mut params = ParamSet::default();
        let net = UNet::init(config.unet_config(), seed, &mut params)?;
        Ok(Scorer {
            config,
            params,
            net,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn network(&self) -> &UNet {
        &self.net
    }

    /// Swaps in updated parameters (training owns the optimization loop).
    pub fn set_params(&mut self, params: ParamSet) {
        self.params = params;
    }

    fn check_pair(&self, noisy: &ImagePatch, denoised: &ImagePatch) -> Result<()> {
        if !noisy.same_shape(denoised) {
            return Err(Error::shape(
                "score inputs",
                format!("{:?}", noisy.shape()),
                format!("{:?}", denoised.shape()),
            ));
        }
        if noisy.channels() != self.config.image_channels {
            return Err(Error::shape(
                "score input channels",
                self.config.image_channels,
                noisy.channels(),
            ));
        }
        Ok(())
    }

    /// Runs the network on one pair. Inputs whose spatial dims are not
    /// divisible by `2^(levels-1)` are mirror-padded and the outputs cropped
    /// back. Eval mode is deterministic; train mode applies dropout driven
    /// by the given seed.
    pub fn score(
        &self,
        noisy: &ImagePatch,
        denoised: &ImagePatch,
        name: &str,
        mode: ScoreMode,
    ) -> Result<ScoreBundle> {
        let (score, log_var) = self.score_maps(noisy, denoised, mode)?;
        Ok(ScoreBundle {
            score: score.to_patch()?,
            log_variance: log_var.to_patch()?,
            denoiser_name: name.to_string(),
        })
    }

    fn score_maps(
        &self,
        noisy: &ImagePatch,
        denoised: &ImagePatch,
        mode: ScoreMode,
    ) -> Result<(Tensor, Tensor)> {
        let (padded_s, padded_lv) = self.score_maps_padded(noisy, denoised, mode)?;
        Ok((
            padded_s.crop_to(noisy.height(), noisy.width()),
            padded_lv.crop_to(noisy.height(), noisy.width()),
        ))
    }

    fn score_maps_padded(
        &self,
        noisy: &ImagePatch,
        denoised: &ImagePatch,
        mode: ScoreMode,
    ) -> Result<(Tensor, Tensor)> {
        self.check_pair(noisy, denoised)?;
        let input = Tensor::from_patch_pair(noisy, denoised)?
            .pad_to_multiple(self.net.config.spatial_multiple());
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(input);
        let (s, lv) = match mode {
            ScoreMode::Eval => self.net.forward(&mut tape, x, DropoutMode::Disabled)?,
            ScoreMode::Train { dropout_seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                self.net.forward(&mut tape, x, DropoutMode::Active(&mut rng))?
            }
        };
        Ok((tape.value(s).clone(), tape.value(lv).clone()))
    }

    /// Patch-level variant: both output maps are averaged over
    /// non-overlapping `patch` x `patch` tiles and broadcast back, yielding
    /// piecewise-constant maps.
    pub fn score_patchwise(
        &self,
        noisy: &ImagePatch,
        denoised: &ImagePatch,
        name: &str,
        patch: usize,
    ) -> Result<ScoreBundle> {
        if patch == 0 {
            return Err(Error::InvalidArgument("tile size must be positive".into()));
        }
        if patch > noisy.height() || patch > noisy.width() {
            return Err(Error::InvalidArgument(format!(
                "tile {patch} larger than image {}x{}",
                noisy.height(),
                noisy.width()
            )));
        }
        let (ps, plv) = self.score_maps_padded(noisy, denoised, ScoreMode::Eval)?;
        if ps.height % patch != 0 || ps.width % patch != 0 {
            return Err(Error::InvalidArgument(format!(
                "tile {patch} does not divide padded dims {}x{}",
                ps.height, ps.width
            )));
        }
        let s = tile_average_apply(&ps, patch).crop_to(noisy.height(), noisy.width());
        let lv = tile_average_apply(&plv, patch).crop_to(noisy.height(), noisy.width());
        Ok(ScoreBundle {
            score: s.to_patch()?,
            log_variance: lv.to_patch()?,
            denoiser_name: name.to_string(),
        })
    }

    /// Averages `samples` stochastic passes (Monte Carlo sampling of the
    /// dropout posterior); mainly for experimentation, eval mode is the
    /// default inference path.
    pub fn score_mc(
        &self,
        noisy: &ImagePatch,
        denoised: &ImagePatch,
        name: &str,
        samples: usize,
        seed: u64,
    ) -> Result<ScoreBundle> {
        if samples == 0 {
            return Err(Error::InvalidArgument("mc_samples must be positive".into()));
        }
        let mut acc_s: Option<Tensor> = None;
        let mut acc_lv: Option<Tensor> = None;
        for k in 0..samples {
            let (s, lv) = self.score_maps(
                noisy,
                denoised,
                ScoreMode::Train {
                    dropout_seed: derive_seed(seed, k as u64),
                },
            )?;
            match (&mut acc_s, &mut acc_lv) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data.iter_mut().zip(&s.data) {
                        *x += y;
                    }
                    for (x, y) in b.data.iter_mut().zip(&lv.data) {
                        *x += y;
                    }
                }
                _ => {
                    acc_s = Some(s);
                    acc_lv = Some(lv);
                }
            }
        }
        let scale = 1.0 / samples as f64;
        let mut s = acc_s.unwrap();
        let mut lv = acc_lv.unwrap();
        s.data.iter_mut().for_each(|v| *v *= scale);
        lv.data.iter_mut().for_each(|v| *v *= scale);
        Ok(ScoreBundle {
            score: s.to_patch()?,
            log_variance: lv.to_patch()?,
            denoiser_name: name.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::new("scorer", self.seed, self.params.clone())
            .with_meta("arch", &self.config)?
            .save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scorer> {
        let path = path.as_ref();
        let ckpt = Checkpoint::load(path)?;
        if ckpt.kind != "scorer" {
            return Err(Error::format(
                path,
                format!("expected a scorer checkpoint, found `{}`", ckpt.kind),
            ));
        }
        let config: ScoringNetConfig = ckpt.meta_get("arch")?;
        // Rebuild the layout, then adopt the stored parameter values.
        let mut scorer = Scorer::init(config, ckpt.seed)?;
        if scorer.params.entries.len() != ckpt.params.entries.len() {
            return Err(Error::format(path, "parameter layout mismatch"));
        }
        for (a, b) in scorer.params.entries.iter().zip(&ckpt.params.entries) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::format(
                    path,
                    format!("parameter layout mismatch at `{}`", b.name),
                ));
            }
        }
        scorer.params = ckpt.params;
        Ok(scorer)
    }
}
