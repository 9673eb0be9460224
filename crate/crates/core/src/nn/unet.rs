//! Dual-head U-Net used as the scoring network.
//!
//! `levels` encoder stages of two 3x3 convs each (32 maps at the first
//! level, doubled after every 2x2 max-pool), a decoder that upsamples with
//! nearest-neighbor + conv and merges encoder features through sum skip
//! connections, and two linear 3x3 heads emitting a score map and a
//! log-variance map. A dropout layer follows each ReLU so the network can be
//! sampled stochastically during training.

use rand_chacha::ChaCha8Rng;

use super::params::{init_conv_weight, param_rng, ParamSet};
use super::tape::{NodeId, Tape};
use crate::{Error, Result};

/// Architecture hyperparameters of the scoring U-Net.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UNetConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub dropout_rate: f64,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument("unet needs at least 2 levels".into()));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument("unet channel counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0,1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Channel count at encoder level `l` (base doubled per level).
    pub fn level_channels(&self, l: usize) -> usize {
        self.base_channels << l
    }

    /// Spatial dims must be divisible by this before a forward pass.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Conv layers along the deepest input-to-head path (heads excluded):
    /// two per encoder level plus two per decoder level.
    pub fn deepest_path_convs(&self) -> usize {
        2 * self.levels + 2 * (self.levels - 1)
    }

    /// Closed-form parameter count: sum over declared convs of
    /// `out*in*9 + out`.
    pub fn parameter_count(&self) -> usize {
        let conv = |out: usize, inp: usize| out * inp * 9 + out;
        let mut total = 0;
        for l in 0..self.levels {
            let ch = self.level_channels(l);
            let inp = if l == 0 {
                self.in_channels
            } else {
                self.level_channels(l - 1)
            };
            total += conv(ch, inp) + conv(ch, ch);
        }
        for l in (0..self.levels - 1).rev() {
            let ch = self.level_channels(l);
            total += conv(ch, self.level_channels(l + 1)) + conv(ch, ch);
        }
        total += 2 * conv(1, self.base_channels);
        total
    }
}

/// Parameter indices for one conv layer.
#[derive(Debug, Clone, Copy)]
struct ConvIds {
    weight: usize,
    bias: usize,
}

/// The scoring network: config plus parameter layout.
#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    enc: Vec<[ConvIds; 2]>,
    dec: Vec<[ConvIds; 2]>,
    head_score: ConvIds,
    head_log_var: ConvIds,
}

/// Either a deterministic pass or a stochastic (dropout-active) pass.
pub enum DropoutMode<'r> {
    Disabled,
    Active(&'r mut ChaCha8Rng),
}

impl UNet {
    /// Declares the parameter layout in `params` (appending entries) and
    /// initializes weights fan-in-uniform, biases zero, from `seed`.
    pub fn init(config: UNetConfig, seed: u64, params: &mut ParamSet) -> Result<UNet> {
        config.validate()?;
        let mut rng = param_rng(seed);
        let mut declare = |params: &mut ParamSet, name: String, out: usize, inp: usize| ConvIds {
            weight: params.push(
                format!("{name}.weight"),
                vec![out, inp, 3, 3],
                init_conv_weight(&mut rng, out, inp),
            ),
            bias: params.push(format!("{name}.bias"), vec![out], vec![0.0; out]),
        };

        let mut enc = Vec::new();
        for l in 0..config.levels {
            let ch = config.level_channels(l);
            let inp = if l == 0 {
                config.in_channels
            } else {
                config.level_channels(l - 1)
            };
            enc.push([
                declare(params, format!("enc{l}.conv0"), ch, inp),
                declare(params, format!("enc{l}.conv1"), ch, ch),
            ]);
        }
        let mut dec = Vec::new();
        for l in (0..config.levels - 1).rev() {
            let ch = config.level_channels(l);
            dec.push([
                declare(params, format!("dec{l}.up"), ch, config.level_channels(l + 1)),
                declare(params, format!("dec{l}.conv"), ch, ch),
            ]);
        }
        let head_score = declare(params, "head.score".into(), 1, config.base_channels);
        let head_log_var = declare(params, "head.log_var".into(), 1, config.base_channels);
        Ok(UNet {
            config,
            enc,
            dec,
            head_score,
            head_log_var,
        })
    }

    /// Builds the forward graph on `tape`; returns (score, log_variance)
    /// node ids, each a single-channel map of the input's spatial size.
    ///
    /// Fails with the offending layer name if an activation goes non-finite.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        input: NodeId,
        mut dropout: DropoutMode<'_>,
    ) -> Result<(NodeId, NodeId)> {
        let (_, h, w) = tape.value(input).shape();
        let m = self.config.spatial_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "unet input {h}x{w} not divisible by {m}; pad first"
            )));
        }

        let check = |tape: &Tape<'_>, id: NodeId, layer: &str| -> Result<()> {
            if !tape.value(id).is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite activation after layer `{layer}`"
                )));
            }
            Ok(())
        };
        let rate = self.config.dropout_rate;
        let act = |tape: &mut Tape<'_>, x: NodeId, dropout: &mut DropoutMode<'_>| {
            let r = tape.relu(x);
            match dropout {
                DropoutMode::Active(rng) if rate > 0.0 => tape.dropout(r, rate, rng),
                _ => r,
            }
        };

        let mut skips = Vec::new();
        let mut x = input;
        for (l, convs) in self.enc.iter().enumerate() {
            for (i, c) in convs.iter().enumerate() {
                x = tape.conv3x3(x, c.weight, c.bias);
                check(tape, x, &format!("enc{l}.conv{i}"))?;
                x = act(tape, x, &mut dropout);
            }
            if l < self.config.levels - 1 {
                skips.push(x);
                x = tape.maxpool2(x);
            }
        }
        for (d, convs) in self.dec.iter().enumerate() {
            let l = self.config.levels - 2 - d;
            x = tape.upsample_nearest2(x);
            x = tape.conv3x3(x, convs[0].weight, convs[0].bias);
            check(tape, x, &format!("dec{l}.up"))?;
            x = act(tape, x, &mut dropout);
            x = tape.add(x, skips[l]);
            x = tape.conv3x3(x, convs[1].weight, convs[1].bias);
            check(tape, x, &format!("dec{l}.conv"))?;
            x = act(tape, x, &mut dropout);
        }
        let score = tape.conv3x3(x, self.head_score.weight, self.head_score.bias);
        check(tape, score, "head.score")?;
        let log_var = tape.conv3x3(x, self.head_log_var.weight, self.head_log_var.bias);
        check(tape, log_var, "head.log_var")?;
        Ok((score, log_var))
    }

    /// Indices of the two head layers' parameters (used by tests and by the
    /// fixed-variance ablation).
    pub fn head_param_indices(&self) -> [usize; 4] {
        [
            self.head_score.weight,
            self.head_score.bias,
            self.head_log_var.weight,
            self.head_log_var.bias,
        ]
    }
}
