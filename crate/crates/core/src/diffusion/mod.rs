//! Conditional denoising diffusion over carbon-density maps.
//!
//! The network predicts the injected noise (ε-parameterization) and is trained with
//! an L1 objective. Densities are diffused directly after a linear map to `[−1, 1]`.

mod net;
mod schedule;
mod train;

pub use net::{cond_features, crop, init_cond, pad_replicate, round_up, time_embedding, DenoiseNet, NetConfig};
pub use schedule::{
    denoise_step, forward_jump, forward_step, make_schedule, noise_with_beta, reverse_chain, DiffusionState, NoisePredictor,
    VarianceSchedule,
};
pub use train::{range_consistent_noise, sample, train_iidm, TrainOpts, TrainSample};

use crate::checkpoint::Checkpoint;
use crate::error::{contract, Result};
use crate::numerics::Tensor;

/// Density `d ∈ [0, scale]` to `2d/scale − 1`.
pub fn scale_target(density: &Tensor, scale: f64) -> Result<Tensor> {
    if !(scale > 0.0) {
        return contract(format!("target scale must be positive, got {scale}"));
    }
    Tensor::new(density.shape(), density.data().iter().map(|d| 2.0 * d / scale - 1.0).collect())
}

/// Inverse of [`scale_target`].
pub fn unscale_target(x: &Tensor, scale: f64) -> Result<Tensor> {
    Tensor::new(x.shape(), x.data().iter().map(|v| (v + 1.0) / 2.0 * scale).collect())
}

fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// A trained noise predictor with its linear schedule and target scale.
#[derive(Debug, Clone)]
pub struct Iidm {
    pub net: DenoiseNet,
    pub sched: VarianceSchedule,
    /// `(T, β_1, β_T)`.
    pub schedule: (usize, f64, f64),
    pub scale: f64,
}

impl Iidm {
    /// Parameters, schedule endpoints and the scale are rounded to `f32` so that a
    /// model reloaded from a checkpoint is the same model.
    pub fn new(mut net: DenoiseNet, steps: usize, beta_start: f64, beta_end: f64, scale: f64) -> Result<Self> {
        for (_, t) in net.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = f32_exact(*v));
        }
        net.params.set_trainable("", false);
        let (b0, b1, scale) = (f32_exact(beta_start), f32_exact(beta_end), f32_exact(scale));
        if !(scale > 0.0) || !scale.is_finite() {
            return contract(format!("target scale must be positive and finite, got {scale}"));
        }
        Ok(Self { net, sched: make_schedule(steps, b0, b1)?, schedule: (steps, b0, b1), scale })
    }

    /// Density map `(1, H, W)` for conditional features `f0`. With `zero_outside`, pixels
    /// where `mask` is 0 are set to 0.
    pub fn estimate(&self, f0: &Tensor, mask: Option<&Tensor>, zero_outside: bool, seed: u64) -> Result<Tensor> {
        if f0.shape().first() != Some(&self.net.cfg.cond_channels) {
            return contract(format!("features {:?} do not match the model's {} channels", f0.shape(), self.net.cfg.cond_channels));
        }
        if let Some(m) = mask {
            if m.shape().len() != 3 || m.shape()[0] != 1 || m.shape()[1..] != f0.shape()[1..] {
                return contract(format!("mask {:?} does not match features {:?}", m.shape(), f0.shape()));
            }
        }
        let x0 = sample(&self.net, &self.sched, f0, mask, seed)?;
        let mut d = unscale_target(&x0, self.scale)?;
        if zero_outside {
            let Some(m) = mask else {
                return contract("zeroing outside the forest needs a mask");
            };
            for (v, m) in d.data_mut().iter_mut().zip(m.data()) {
                if *m == 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(d)
    }

    pub fn to_checkpoint(&self, ck: &mut Checkpoint) {
        let c = &self.net.cfg;
        ck.insert_params("iidm.", &self.net.params);
        ck.insert_meta("iidm.widths", &c.widths.iter().map(|&w| w as f64).collect::<Vec<_>>());
        ck.insert_meta("iidm.cond_channels", &[c.cond_channels as f64]);
        ck.insert_meta("iidm.mask_channel", &[c.mask_channel as u8 as f64]);
        ck.insert_meta("iidm.attention", &[c.attention as u8 as f64]);
        ck.insert_meta("iidm.time_dim", &[c.time_dim as f64]);
        let (steps, b0, b1) = self.schedule;
        ck.insert_meta("iidm.schedule", &[steps as f64, b0, b1]);
        ck.insert_meta("iidm.scale", &[self.scale]);
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = NetConfig {
            widths: ck.meta("iidm.widths")?.iter().map(|&w| w as usize).collect(),
            cond_channels: ck.meta_scalar("iidm.cond_channels")? as usize,
            mask_channel: ck.meta_scalar("iidm.mask_channel")? != 0.0,
            attention: ck.meta_scalar("iidm.attention")? != 0.0,
            time_dim: ck.meta_scalar("iidm.time_dim")? as usize,
        };
        let mut params = ck.params("iidm.");
        params.set_trainable("", false);
        let reference = DenoiseNet::new(cfg.clone(), &mut crate::numerics::SeedStream::new(0).rng("layout"))?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => return contract(format!("checkpoint `iidm.{name}` has shape {:?}, expected {:?}", p.shape(), t.shape())),
                None => return contract(format!("checkpoint lacks `iidm.{name}`")),
            }
        }
        let sch = ck.meta("iidm.schedule")?;
        let [steps, b0, b1] = sch[..] else {
            return contract("`meta.iidm.schedule` must hold T, beta_start and beta_end");
        };
        Self::new(DenoiseNet::from_params(cfg, params)?, steps as usize, b0, b1, ck.meta_scalar("iidm.scale")?)
    }
}
