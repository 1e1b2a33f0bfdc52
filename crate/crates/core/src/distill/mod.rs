//! PCA-based knowledge distillation of a VGG-style encoder into a slim coder.
//!
//! The pipeline: train the teacher briefly, collect its `reluN_1` features, derive
//! one global eigenbasis per layer, then train the student's encoder/decoder pairs
//! in order from `N = 1` to `N = 4` against the projected teacher features.

mod arch;
mod blockwise;
mod pca;

pub use arch::{compression_ratio, param_count, EncoderSpec, SlimCoder, VggEncoder, SLIM_CHANNELS, VGG_CHANNELS};
pub use blockwise::{
    decoder_loss, encoder_distill_loss, encoder_target_loss, pair_loss, train_block_pair, DistillData, EncoderTarget,
    PairLoss, PairOpts,
};
pub use pca::{
    center_features, derive_eigenbasis, feature_means, feature_spectrum, mcev, orthonormality_error,
    reconstruction_loss, select_channel_lengths, EigenBasis, EigenOpts, SpectrumStats,
};

use crate::checkpoint::Checkpoint;
use crate::error::{contract, Result};
use crate::numerics::{SeedStream, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Student channel lengths; `None` (`"auto"` in a config file) selects them
    /// from the teacher's spectra.
    #[serde(with = "channel_lengths")]
    pub channels: Option<[usize; 4]>,
    pub target_mcev: f64,
    pub teacher_channels: [usize; 4],
    pub teacher_steps: usize,
    pub teacher_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eigen_lr: f64,
    pub eigen_momentum: f64,
    pub pair_steps: usize,
    pub pair_lr: f64,
    pub pair_batch: usize,
    pub encoder_target: EncoderTarget,
    /// Side of the square training crops; a multiple of 8.
    pub crop: usize,
}

mod channel_lengths {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Fixed([usize; 4]),
        Auto(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<[usize; 4]>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(c) => Repr::Fixed(*c),
            None => Repr::Auto("auto".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<[usize; 4]>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Fixed(c) => Ok(Some(c)),
            Repr::Auto(a) if a == "auto" => Ok(None),
            Repr::Auto(a) => Err(serde::de::Error::custom(format!("channels must be four lengths or \"auto\", got {a:?}"))),
        }
    }
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            channels: Some(SLIM_CHANNELS),
            target_mcev: 0.85,
            teacher_channels: VGG_CHANNELS,
            teacher_steps: 40,
            teacher_lr: 1e-3,
            batch_size: 8,
            epochs: 5,
            eigen_lr: 0.3,
            eigen_momentum: 0.7,
            pair_steps: 60,
            pair_lr: 1e-3,
            pair_batch: 2,
            encoder_target: EncoderTarget::default(),
            crop: 16,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop == 0 || self.crop % 8 != 0 {
            return contract(format!("distill crop must be a positive multiple of 8, got {}", self.crop));
        }
        if self.batch_size == 0 || self.pair_batch == 0 {
            return contract("distill batch sizes must be positive");
        }
        if !(self.target_mcev > 0.0 && self.target_mcev <= 1.0) {
            return contract(format!("target mCEV must be in (0, 1], got {}", self.target_mcev));
        }
        if let Some(c) = self.channels {
            for (n, (&ce, &ct)) in c.iter().zip(&self.teacher_channels).enumerate() {
                if ce == 0 || ce > ct {
                    return contract(format!("layer {} student width {ce} must be in 1..={ct}", n + 1));
                }
            }
        }
        Ok(())
    }
}

/// Everything distillation produces.
#[derive(Debug, Clone)]
pub struct Distilled {
    pub teacher: VggEncoder,
    pub coder: SlimCoder,
    pub bases: Vec<EigenBasis>,
    pub channels: [usize; 4],
    /// mCEV retained at the chosen channel lengths, per layer.
    pub retained: [f64; 4],
    pub teacher_curve: Vec<f64>,
    pub pair_curves: Vec<Vec<f64>>,
}

impl Distilled {
    pub fn compression(&self) -> Result<f64> {
        compression_ratio(self.teacher.encoder_param_count(), self.coder.encoder_param_count())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.insert_params("teacher.", &self.teacher.params);
        ck.insert_params("student.", &self.coder.params);
        for (n, b) in self.bases.iter().enumerate() {
            ck.insert(format!("basis{}.w", n + 1), b.w.shape(), b.w.data()).expect("basis shape");
            ck.insert(format!("basis{}.mean", n + 1), &[b.mean.len()], &b.mean).expect("mean shape");
        }
        let f = |a: [usize; 4]| a.map(|v| v as f64);
        ck.insert_meta("bands", &[self.coder.spec.bands as f64]);
        ck.insert_meta("channels", &f(self.channels));
        ck.insert_meta("teacher_channels", &f(self.teacher.spec.channels));
        ck.insert_meta("trained", &[self.coder.trained as f64]);
        ck.insert_meta("retained", &self.retained);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let four = |key: &str| -> Result<[usize; 4]> {
            let v = ck.meta(key)?;
            match v.as_slice() {
                [a, b, c, d] => Ok([*a as usize, *b as usize, *c as usize, *d as usize]),
                _ => contract(format!("`meta.{key}` must hold 4 values")),
            }
        };
        let bands = ck.meta_scalar("bands")? as usize;
        let channels = four("channels")?;
        let teacher_channels = four("teacher_channels")?;
        let mut tparams = ck.params("teacher.");
        tparams.set_trainable("", false);
        let mut sparams = ck.params("student.");
        sparams.set_trainable("", false);
        let mut bases = Vec::new();
        for n in 1..=4 {
            let (Some(mut w), Some(mean)) = (ck.get(&format!("basis{n}.w")), ck.get(&format!("basis{n}.mean"))) else {
                return contract(format!("checkpoint lacks eigenbasis {n}"));
            };
            w.requires_grad = false;
            bases.push(EigenBasis { w, mean: mean.into_data() });
        }
        let retained = ck.meta("retained")?;
        Ok(Self {
            teacher: VggEncoder::from_params(EncoderSpec { bands, channels: teacher_channels }, tparams),
            coder: SlimCoder::from_params(EncoderSpec { bands, channels }, sparams, ck.meta_scalar("trained")? as usize),
            bases,
            channels,
            retained: [retained[0], retained[1], retained[2], retained[3]],
            teacher_curve: Vec::new(),
            pair_curves: Vec::new(),
        })
    }
}

/// Runs the whole distillation on `images` (each `(bands, crop, crop)`).
pub fn distill(images: Vec<Tensor>, cfg: &DistillConfig, seed: u64) -> Result<Distilled> {
    cfg.validate()?;
    let Some(first) = images.first() else {
        return contract("distillation needs at least one image");
    };
    let bands = first.shape()[0];
    let streams = SeedStream::new(seed);
    let mut teacher = VggEncoder::new(bands, cfg.teacher_channels, &mut streams.rng("teacher.init"));
    let teacher_curve =
        teacher.train_autoencoder(&images, cfg.teacher_steps, cfg.batch_size.min(4), cfg.teacher_lr, &mut streams.rng("teacher.batches"))?;
    let data = DistillData::new(&teacher, images)?;
    let spectra = SpectrumStats::from_features(&data.teacher)?;
    let channels = match cfg.channels {
        Some(c) => c,
        None => select_channel_lengths(&spectra, cfg.target_mcev)?,
    };
    let mut retained = [0.0; 4];
    let mut bases = Vec::with_capacity(4);
    for n in 1..=4 {
        retained[n - 1] = mcev(&spectra, n, channels[n - 1])?;
        let opts = EigenOpts {
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            lr: cfg.eigen_lr,
            momentum: cfg.eigen_momentum,
            seed: streams.child(&format!("basis{n}")).seed(),
        };
        bases.push(derive_eigenbasis(&data.teacher[n - 1], channels[n - 1], &opts)?);
    }
    let mut coder = SlimCoder::new(bands, channels, &mut streams.rng("student.init"))?;
    let mut pair_curves = Vec::with_capacity(4);
    for n in 1..=4 {
        let opts = PairOpts {
            steps: cfg.pair_steps,
            lr: cfg.pair_lr,
            batch_size: cfg.pair_batch,
            target: cfg.encoder_target,
            seed: streams.child(&format!("pair{n}")).seed(),
        };
        pair_curves.push(train_block_pair(&mut coder, &teacher, &bases, &data, n, &opts)?);
    }
    Ok(Distilled { teacher, coder, bases, channels, retained, teacher_curve, pair_curves })
}
