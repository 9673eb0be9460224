//! Experiment configuration: a TOML file describing the pool, the noise
//! models, the losses and schedule, and the evaluation setup.
//!
//! Relative paths inside a config resolve against the config file's
//! directory. Optional per-section seeds default to streams derived from the
//! top-level seed, so `--seed` reproducibly reshuffles an entire run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fusebench_core::nn::DncnnConfig;
use fusebench_core::noise::{derive_seed, NoiseSpec};
use fusebench_core::pool::{ClassicFilter, DenoiserHandle};
use fusebench_core::scorer::ScoringNetConfig;
use fusebench_core::train::{AugmentConfig, LossConfig, Weighting};
use fusebench_core::{Error, Result};

/// Ablation/variant switch; maps one-to-one onto the published variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The complete method: MC dropout, uncertainty head, both losses.
    Full,
    /// No dropout layers.
    MinusMc,
    /// Log-variance head frozen at zero.
    MinusSigma,
    /// Tile-averaged (patch-level) scores instead of pixel-wise.
    Patchwise,
    /// Weights estimated directly without the softmax.
    DirectWeight,
    /// Fusion loss disabled.
    MinusFuse,
    /// Likelihood loss disabled.
    MinusNll,
    /// Plain network: no dropout and no uncertainty estimation.
    Normal,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Full,
        Variant::MinusMc,
        Variant::MinusSigma,
        Variant::Patchwise,
        Variant::DirectWeight,
        Variant::MinusFuse,
        Variant::MinusNll,
        Variant::Normal,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MinusMc => "minus_mc",
            Variant::MinusSigma => "minus_sigma",
            Variant::Patchwise => "patchwise",
            Variant::DirectWeight => "direct_weight",
            Variant::MinusFuse => "minus_fuse",
            Variant::MinusNll => "minus_nll",
            Variant::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown variant `{s}` (expected one of: {})",
                    Variant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }
}

/// One pool member declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolMemberConfig {
    pub name: String,
    pub kind: String, // classic | trained_cnn | external
    #[serde(default)]
    pub filter: Option<String>, // identity | gaussian | median
    #[serde(default)]
    pub radius: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// AWGN level this member is trained at (`train-pool`).
    #[serde(default)]
    pub train_noise_level: Option<f64>,
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub dir: PathBuf,
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Base directory for synthesized datasets (relative to out_dir).
    #[serde(default = "default_data_dir")]
    pub dir: PathBuf,
    pub patch: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    #[serde(default)]
    pub unlabeled_count: usize,
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NoiseSets {
    #[serde(default)]
    pub train: Vec<NoiseSpec>,
    #[serde(default)]
    pub val: Vec<NoiseSpec>,
    #[serde(default)]
    pub test: Vec<NoiseSpec>,
    #[serde(default)]
    pub unlabeled: Vec<NoiseSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenoiserTrainSection {
    pub depth: usize,
    pub width: usize,
    pub iters: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerSection {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_base_channels")]
    pub base_channels: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_true")]
    pub mc_dropout_enabled: bool,
}

fn default_levels() -> usize {
    4
}
fn default_base_channels() -> usize {
    32
}
fn default_dropout() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            levels: 4,
            base_channels: 32,
            dropout_rate: 0.1,
            mc_dropout_enabled: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSection {
    pub batch: usize,
    pub patch: usize,
    pub lr_init: f64,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: usize,
    #[serde(default = "default_lr_floor")]
    pub lr_floor: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_lr_decay() -> f64 {
    0.5
}
fn default_decay_every() -> usize {
    200
}
fn default_lr_floor() -> f64 {
    1e-6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillSection {
    pub iters: usize,
    pub batch: usize,
    pub patch: usize,
    pub lr: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepSection {
    /// Pool member names added in this order; every prefix is evaluated.
    #[serde(default)]
    pub order: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default = "default_true")]
    pub include_bde: bool,
    #[serde(default = "default_true")]
    pub include_uniform: bool,
    #[serde(default = "default_true")]
    pub include_oracle: bool,
    /// Export per-denoiser weight maps (float raster + heat map).
    #[serde(default)]
    pub export_weights: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            include_bde: true,
            include_uniform: true,
            include_oracle: true,
            export_weights: false,
        }
    }
}

/// Full declarative description of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_variant")]
    pub variant: String,
    #[serde(default = "default_patchwise_tile")]
    pub patchwise_tile: usize,
    #[serde(default)]
    pub corpus: Option<CorpusConfig>,
    pub pool: Vec<PoolMemberConfig>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoiseSets,
    #[serde(default)]
    pub denoiser_train: Option<DenoiserTrainSection>,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub loss: LossSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub distill: Option<DistillSection>,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_variant() -> String {
    "full".to_string()
}
fn default_patchwise_tile() -> usize {
    8
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossSection {
    #[serde(default = "default_lambda_tv")]
    pub lambda_tv: f64,
    #[serde(default = "default_lambda_0")]
    pub lambda_0: f64,
    #[serde(default = "default_true")]
    pub use_nll: bool,
    #[serde(default = "default_true")]
    pub use_fuse: bool,
    #[serde(default)]
    pub fix_sigma: bool,
}

fn default_lambda_tv() -> f64 {
    0.01
}
fn default_lambda_0() -> f64 {
    1.0
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection {
            lambda_tv: 0.01,
            lambda_0: 1.0,
            use_nll: true,
            use_fuse: true,
            fix_sigma: false,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a config file; relative paths are resolved
    /// against the file's directory, and CLI overrides are applied.
    pub fn load(
        path: impl AsRef<Path>,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
        variant_override: Option<String>,
    ) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(out) = out_override {
            cfg.out_dir = out;
        }
        if let Some(v) = variant_override {
            cfg.variant = v;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(c) = &mut self.corpus {
            fix(&mut c.dir);
        }
        for m in &mut self.pool {
            if let Some(ck) = &mut m.checkpoint {
                fix(ck);
            }
            if let Some(d) = &mut m.dir {
                fix(d);
            }
        }
        // Dataset dir is relative to out_dir, not the config location.
        if self.dataset.dir.is_relative() {
            self.dataset.dir = self.out_dir.join(&self.dataset.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool.is_empty() {
            return Err(Error::InvalidArgument("pool: at least one member required".into()));
        }
        let mut names: Vec<&str> = self.pool.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.pool.len() {
            return Err(Error::InvalidArgument("pool: member names must be unique".into()));
        }
        for m in &self.pool {
            match m.kind.as_str() {
                "classic" => {
                    let f = m.filter.as_deref().ok_or_else(|| {
                        Error::InvalidArgument(format!("pool.{}: classic members need `filter`", m.name))
                    })?;
                    match f {
                        "identity" => {}
                        "gaussian" => {
                            if m.radius.is_none() || m.sigma.is_none() {
                                return Err(Error::InvalidArgument(format!(
                                    "pool.{}: gaussian filter needs `radius` and `sigma`",
                                    m.name
                                )));
                            }
                        }
                        "median" => {
                            if m.radius.is_none() {
                                return Err(Error::InvalidArgument(format!(
                                    "pool.{}: median filter needs `radius`",
                                    m.name
                                )));
                            }
                        }
                        other => {
                            return Err(Error::InvalidArgument(format!(
                                "pool.{}: unknown filter `{other}`",
                                m.name
                            )))
                        }
                    }
                }
                // trained_cnn checkpoints default to out_dir/ckpts/dn_<name>.ckpt.
                "trained_cnn" => {}
                "external" => {
                    if m.dir.is_none() {
                        return Err(Error::InvalidArgument(format!(
                            "pool.{}: external members need `dir`",
                            m.name
                        )));
                    }
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "pool.{}: unknown kind `{other}`",
                        m.name
                    )))
                }
            }
        }
        Variant::parse(&self.variant)?;
        if self.variant == "patchwise" && self.patchwise_tile == 0 {
            return Err(Error::InvalidArgument("patchwise_tile must be positive".into()));
        }
        for spec in self
            .noise
            .train
            .iter()
            .chain(&self.noise.val)
            .chain(&self.noise.test)
            .chain(&self.noise.unlabeled)
        {
            spec.validate()?;
        }
        for name in &self.sweep.order {
            if !self.pool.iter().any(|m| &m.name == name) {
                return Err(Error::InvalidArgument(format!(
                    "sweep.order: `{name}` is not a pool member"
                )));
            }
        }
        self.loss_config().validate()?;
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        Variant::parse(&self.variant).expect("validated")
    }

    /// Loss configuration with the variant's ablation switches applied.
    pub fn loss_config(&self) -> LossConfig {
        let mut cfg = LossConfig {
            lambda_tv: self.loss.lambda_tv,
            lambda_0: self.loss.lambda_0,
            use_nll: self.loss.use_nll,
            use_fuse: self.loss.use_fuse,
            fix_sigma: self.loss.fix_sigma,
        };
        match Variant::parse(&self.variant).unwrap_or(Variant::Full) {
            Variant::MinusSigma | Variant::Normal => cfg.fix_sigma = true,
            Variant::MinusFuse => cfg.use_fuse = false,
            Variant::MinusNll => cfg.use_nll = false,
            _ => {}
        }
        cfg
    }

    /// Scoring network configuration with the variant applied.
    pub fn scorer_config(&self, image_channels: usize) -> ScoringNetConfig {
        let mc = match self.variant() {
            Variant::MinusMc | Variant::Normal => false,
            _ => self.scorer.mc_dropout_enabled,
        };
        ScoringNetConfig {
            levels: self.scorer.levels,
            base_channels: self.scorer.base_channels,
            image_channels,
            dropout_rate: self.scorer.dropout_rate,
            mc_dropout_enabled: mc,
        }
    }

    /// How this variant turns scores into weights.
    pub fn weighting(&self) -> Weighting {
        match self.variant() {
            Variant::DirectWeight => Weighting::Direct,
            Variant::Patchwise => Weighting::PatchwiseSoftmax(self.patchwise_tile),
            _ => Weighting::Softmax,
        }
    }

    pub fn train_schedule(&self) -> fusebench_core::train::TrainSchedule {
        fusebench_core::train::TrainSchedule {
            batch: self.schedule.batch,
            patch: self.schedule.patch,
            lr_init: self.schedule.lr_init,
            lr_decay: self.schedule.lr_decay,
            decay_every: self.schedule.decay_every,
            lr_floor: self.schedule.lr_floor,
            epochs: self.schedule.epochs,
            iters_per_epoch: self.schedule.iters_per_epoch,
            augment: self.schedule.augment,
            seed: self.schedule.seed.unwrap_or_else(|| derive_seed(self.seed, 0x5c0)),
        }
    }

    pub fn corpus_seed(&self) -> u64 {
        self.corpus
            .as_ref()
            .and_then(|c| c.seed)
            .unwrap_or_else(|| derive_seed(self.seed, 0xc0))
    }

    pub fn distill_seed(&self) -> u64 {
        self.distill
            .as_ref()
            .and_then(|d| d.seed)
            .unwrap_or_else(|| derive_seed(self.seed, 0xd1))
    }

    /// The scorer checkpoint path for a variant.
    pub fn scorer_checkpoint(&self, variant: Variant) -> PathBuf {
        self.out_dir
            .join("ckpts")
            .join(format!("scorer_{}", variant.name()))
            .join("scorer.ckpt")
    }

    /// The checkpoint path for a trainable pool member.
    pub fn member_checkpoint(&self, member: &PoolMemberConfig) -> PathBuf {
        member
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out_dir.join("ckpts").join(format!("dn_{}.ckpt", member.name)))
    }

    /// Instantiates the pool handles, loading CNN checkpoints.
    pub fn build_pool(&self) -> Result<Vec<DenoiserHandle>> {
        self.pool
            .iter()
            .map(|m| self.build_member(m))
            .collect()
    }

    pub fn build_member(&self, m: &PoolMemberConfig) -> Result<DenoiserHandle> {
        match m.kind.as_str() {
            "classic" => {
                let filter = match m.filter.as_deref().unwrap() {
                    "identity" => ClassicFilter::Identity,
                    "gaussian" => ClassicFilter::Gaussian {
                        radius: m.radius.unwrap(),
                        sigma: m.sigma.unwrap(),
                    },
                    "median" => ClassicFilter::Median {
                        radius: m.radius.unwrap(),
                    },
                    _ => unreachable!("validated"),
                };
                Ok(DenoiserHandle::classic(&m.name, filter))
            }
            "trained_cnn" => {
                let path = self.member_checkpoint(m);
                if !path.exists() {
                    return Err(Error::MissingArtifact(format!(
                        "checkpoint for pool member `{}` not found at {} (run `fusebench train-pool` first)",
                        m.name,
                        path.display()
                    )));
                }
                DenoiserHandle::trained_cnn(&m.name, &path)
            }
            "external" => Ok(DenoiserHandle::external(&m.name, m.dir.as_ref().unwrap())),
            _ => unreachable!("validated"),
        }
    }

    pub fn denoiser_arch(&self, channels: usize) -> Result<(DncnnConfig, &DenoiserTrainSection)> {
        let section = self.denoiser_train.as_ref().ok_or_else(|| {
            Error::InvalidArgument("config needs a [denoiser_train] section for this command".into())
        })?;
        Ok((
            DncnnConfig {
                depth: section.depth,
                width: section.width,
                channels,
            },
            section,
        ))
    }

    /// Echo of the config as a TOML value for report embedding.
    pub fn echo(&self) -> Result<toml::Table> {
        let v = toml::Value::try_from(self)
            .map_err(|e| Error::InvalidArgument(format!("config echo: {e}")))?;
        match v {
            toml::Value::Table(t) => Ok(t),
            _ => Err(Error::InvalidArgument("config echo must be a table".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
out_dir = "run"

[[pool]]
name = "ident"
kind = "classic"
filter = "identity"

[dataset]
patch = 32
train_count = 4
val_count = 2
test_count = 2

[[noise.train]]
kind = "awgn"
sigma = 25.0
seed = 1

[schedule]
batch = 2
patch = 16
lr_init = 1e-3
epochs = 1
iters_per_epoch = 4
"#;

    #[test]
    fn minimal_config_parses_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = ExperimentConfig::load(&path, None, None, None).unwrap();
        assert_eq!(cfg.seed, 7);
        assert!(cfg.out_dir.starts_with(dir.path()));
        assert_eq!(cfg.variant(), Variant::Full);
        assert_eq!(cfg.noise.train.len(), 1);

        let cfg2 = ExperimentConfig::load(&path, Some(99), None, Some("normal".into())).unwrap();
        assert_eq!(cfg2.seed, 99);
        assert_eq!(cfg2.variant(), Variant::Normal);
        let lc = cfg2.loss_config();
        assert!(lc.fix_sigma, "normal variant freezes the variance head");
        assert!(!cfg2.scorer_config(1).mc_dropout_enabled);
    }

    #[test]
    fn bad_configs_are_rejected_with_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");

        std::fs::write(&path, MINIMAL.replace("filter = \"identity\"", "")).unwrap();
        let err = ExperimentConfig::load(&path, None, None, None).unwrap_err();
        assert!(err.to_string().contains("classic members need"), "{err}");

        std::fs::write(&path, MINIMAL.replace("sigma = 25.0", "sigma = -4.0")).unwrap();
        assert!(ExperimentConfig::load(&path, None, None, None).is_err());

        std::fs::write(&path, MINIMAL).unwrap();
        let err = ExperimentConfig::load(&path, None, None, Some("bogus".into())).unwrap_err();
        assert!(err.to_string().contains("unknown variant"), "{err}");
    }

    #[test]
    fn variant_switches_map_to_loss_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let check = |name: &str, f: &dyn Fn(&ExperimentConfig) -> bool| {
            let cfg = ExperimentConfig::load(&path, None, None, Some(name.into())).unwrap();
            assert!(f(&cfg), "variant {name}");
        };
        check("minus_fuse", &|c| !c.loss_config().use_fuse);
        check("minus_nll", &|c| !c.loss_config().use_nll);
        check("minus_sigma", &|c| c.loss_config().fix_sigma);
        check("minus_mc", &|c| !c.scorer_config(1).mc_dropout_enabled);
        check("direct_weight", &|c| c.weighting() == Weighting::Direct);
        check("patchwise", &|c| {
            matches!(c.weighting(), Weighting::PatchwiseSoftmax(8))
        });
    }
}
