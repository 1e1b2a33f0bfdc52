//! Run configuration, read from TOML. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::carbon::CarbonParams;
use crate::diffusion::{make_schedule, NetConfig, TrainOpts};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Scenes are `size × size`.
    pub size: usize,
    pub n_patches: usize,
    /// Scenes per run; the last one is held out.
    pub n_scenes: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { size: 32, n_patches: 12, n_scenes: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    /// Number of timesteps `T`.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// U-Net widths, one per level.
    pub widths: Vec<usize>,
    pub time_dim: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { steps: 50, beta_start: 1e-4, beta_end: 0.05, widths: vec![16, 32, 64], time_dim: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Side of the random training crops; 0 trains on whole scenes.
    pub crop: usize,
    pub flips: bool,
    /// Gradient-norm clip; 0 disables it.
    pub clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let d = TrainOpts::default();
        Self { steps: d.steps, batch_size: d.batch_size, lr: d.lr, crop: d.crop.unwrap_or(0), flips: d.flips, clip: d.clip.unwrap_or(0.0) }
    }
}

/// The four switchable modules of the ablation grid.
///
/// Switched off, each one passes through:
/// - `mask`: no mask input channel, loss over every pixel, output not zeroed,
///   metrics over every pixel.
/// - `vgg` and `kd_vgg`: the conditional features are the normalized bands.
/// - `attention_mlp`: fusion is channel concatenation followed by a 1×1 conv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Modules {
    pub mask: bool,
    pub vgg: bool,
    pub kd_vgg: bool,
    pub attention_mlp: bool,
}

impl Default for Modules {
    fn default() -> Self {
        Self { mask: true, vgg: false, kd_vgg: true, attention_mlp: true }
    }
}

impl Modules {
    pub fn new(mask: bool, vgg: bool, kd_vgg: bool, attention_mlp: bool) -> Self {
        Self { mask, vgg, kd_vgg, attention_mlp }
    }

    pub fn to_bits(self) -> [bool; 4] {
        [self.mask, self.vgg, self.kd_vgg, self.attention_mlp]
    }

    pub fn needs_distillation(self) -> bool {
        self.vgg || self.kd_vgg
    }

    pub fn validate(self) -> Result<()> {
        if self.vgg && self.kd_vgg {
            return Err(Error::Config("`vgg` and `kd_vgg` cannot both be enabled".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub carbon: CarbonParams,
    pub distill: DistillConfig,
    pub diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub modules: Modules,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            scene: SceneConfig::default(),
            carbon: CarbonParams::default(),
            distill: DistillConfig::default(),
            diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
            modules: Modules::default(),
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Contract(m) => Error::Config(m),
        e => e,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingInput { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.modules.validate()?;
        let s = &self.scene;
        if s.size < 16 {
            return Err(Error::Config(format!("scene size must be at least 16, got {}", s.size)));
        }
        if s.n_scenes < 2 {
            return Err(Error::Config(format!("need at least 2 scenes (one is held out), got {}", s.n_scenes)));
        }
        if s.n_patches == 0 {
            return Err(Error::Config("n_patches must be positive".into()));
        }
        self.carbon.validate().map_err(config_err)?;
        self.distill.validate().map_err(config_err)?;
        if self.distill.crop > s.size {
            return Err(Error::Config(format!("distill crop {} exceeds scene size {}", self.distill.crop, s.size)));
        }
        let d = &self.diffusion;
        make_schedule(d.steps, d.beta_start, d.beta_end).map_err(config_err)?;
        if d.widths.is_empty() || d.widths.contains(&0) || d.time_dim == 0 || d.time_dim % 2 != 0 {
            return Err(Error::Config("widths must be non-empty and positive; time_dim positive and even".into()));
        }
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 || !(t.lr > 0.0) || !(t.clip >= 0.0) {
            return Err(Error::Config("train steps, batch_size and lr must be positive; clip non-negative".into()));
        }
        let m = self.net_multiple();
        if t.crop != 0 && (t.crop > s.size || t.crop % m != 0) {
            return Err(Error::Config(format!("train crop {} must fit the scene and be a multiple of {m}", t.crop)));
        }
        Ok(())
    }

    fn net_multiple(&self) -> usize {
        NetConfig::new(&self.diffusion.widths, 1).multiple()
    }

    pub fn train_opts(&self, seed: u64) -> TrainOpts {
        let t = &self.train;
        TrainOpts {
            steps: t.steps,
            batch_size: t.batch_size,
            lr: t.lr,
            crop: (t.crop > 0).then_some(t.crop),
            flips: t.flips,
            masked_loss: self.modules.mask,
            clip: (t.clip > 0.0).then_some(t.clip),
            seed,
        }
    }
}
