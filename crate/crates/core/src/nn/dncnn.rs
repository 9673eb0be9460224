//! Residual CNN denoiser: a plain conv/ReLU stack that predicts the noise
//! map, which is subtracted from the input. Fully convolutional, so any
//! spatial size works at inference.

use super::params::{init_conv_weight, param_rng, ParamSet};
use super::tape::{NodeId, Tape};
use crate::{Error, Result};

/// Architecture of a trainable denoiser: `depth` 3x3 conv layers of `width`
/// feature maps (ReLU between, linear final layer).
///
/// Depth and width are the scale knobs; the default is the desk-scale
/// setting of eight 32-map layers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DncnnConfig {
    pub depth: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for DncnnConfig {
    fn default() -> Self {
        DncnnConfig {
            depth: 8,
            width: 32,
            channels: 1,
        }
    }
}

impl DncnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidArgument("denoiser depth must be >= 2".into()));
        }
        if self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument("denoiser width/channels must be positive".into()));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        let conv = |out: usize, inp: usize| out * inp * 9 + out;
        conv(self.width, self.channels)
            + (self.depth - 2) * conv(self.width, self.width)
            + conv(self.channels, self.width)
    }
}

#[derive(Debug, Clone)]
pub struct Dncnn {
    pub config: DncnnConfig,
    layers: Vec<(usize, usize)>, // (weight, bias) param indices
}

impl Dncnn {
    pub fn init(config: DncnnConfig, seed: u64, params: &mut ParamSet) -> Result<Dncnn> {
        config.validate()?;
        let mut rng = param_rng(seed);
        let mut layers = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let (out, inp) = if l == 0 {
                (config.width, config.channels)
            } else if l == config.depth - 1 {
                (config.channels, config.width)
            } else {
                (config.width, config.width)
            };
            let weight = params.push(
                format!("layer{l}.weight"),
                vec![out, inp, 3, 3],
                init_conv_weight(&mut rng, out, inp),
            );
            let bias = params.push(format!("layer{l}.bias"), vec![out], vec![0.0; out]);
            layers.push((weight, bias));
        }
        Ok(Dncnn { config, layers })
    }

    /// Re-binds a config to an existing parameter set laid out by
    /// [`Dncnn::init`] (e.g. loaded from a checkpoint).
    pub fn from_params(config: DncnnConfig, params: &ParamSet) -> Result<Dncnn> {
        config.validate()?;
        if params.entries.len() != 2 * config.depth {
            return Err(Error::InvalidArgument(format!(
                "parameter set has {} entries, expected {} for depth {}",
                params.entries.len(),
                2 * config.depth,
                config.depth
            )));
        }
        let layers = (0..config.depth)
            .map(|l| {
                let (w, b) = (2 * l, 2 * l + 1);
                if params.entries[w].name != format!("layer{l}.weight")
                    || params.entries[b].name != format!("layer{l}.bias")
                {
                    return Err(Error::InvalidArgument(format!(
                        "unexpected parameter layout at layer {l}"
                    )));
                }
                Ok((w, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dncnn { config, layers })
    }

    /// Graph from noisy input to the denoised estimate
    /// (`input - predicted_noise`). Returns (denoised, residual) node ids.
    pub fn forward(&self, tape: &mut Tape<'_>, input: NodeId) -> Result<(NodeId, NodeId)> {
        let mut x = input;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            x = tape.conv3x3(x, w, b);
            if !tape.value(x).is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite activation after layer `layer{l}`"
                )));
            }
            if l < self.layers.len() - 1 {
                x = tape.relu(x);
            }
        }
        let denoised = tape.sub(input, x);
        Ok((denoised, x))
    }
}
