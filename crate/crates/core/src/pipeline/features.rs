//! Band normalization and conditional-feature extraction `f⁰`.

use crate::checkpoint::Checkpoint;
use crate::diffusion::{crop, pad_replicate, round_up};
use crate::distill::{Distilled, EncoderSpec, SlimCoder, VggEncoder};
use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;
use crate::raster::Raster;

/// Per-channel affine standardization `(x − mean)/std`, fitted over every pixel of
/// a set of `(C, H, W)` tensors. A constant channel gets `std = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[Tensor]) -> Result<Self> {
        let Some(first) = xs.first() else {
            return contract("cannot fit a standardizer on nothing");
        };
        let c = first.shape()[0];
        let (mut sum, mut sq, mut n) = (vec![0.0; c], vec![0.0; c], 0usize);
        for x in xs {
            if x.shape().len() != 3 || x.shape()[0] != c {
                return Err(Error::Shape(format!("expected ({c}, H, W), got {:?}", x.shape())));
            }
            let hw = x.shape()[1] * x.shape()[2];
            for (ch, plane) in x.data().chunks(hw).enumerate() {
                sum[ch] += plane.iter().sum::<f64>();
            }
            n += hw;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        for x in xs {
            let hw = x.shape()[1] * x.shape()[2];
            for (ch, plane) in x.data().chunks(hw).enumerate() {
                sq[ch] += plane.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = sq.iter().map(|s| (s / n as f64).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 3 || x.shape()[0] != self.mean.len() {
            return Err(Error::Shape(format!("expected ({}, H, W), got {:?}", self.mean.len(), x.shape())));
        }
        let hw = x.shape()[1] * x.shape()[2];
        let mut out = x.clone();
        for (ch, plane) in out.data_mut().chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = (*v - self.mean[ch]) / self.std[ch]);
        }
        Ok(out)
    }

    fn to_checkpoint(&self, ck: &mut Checkpoint, key: &str) {
        ck.insert_meta(&format!("{key}.mean"), &self.mean);
        ck.insert_meta(&format!("{key}.std"), &self.std);
    }

    fn from_checkpoint(ck: &Checkpoint, key: &str) -> Result<Self> {
        let (mean, std) = (ck.meta(&format!("{key}.mean"))?, ck.meta(&format!("{key}.std"))?);
        if mean.len() != std.len() {
            return contract(format!("`{key}` mean and std lengths differ"));
        }
        Ok(Self { mean, std })
    }
}

/// Imagery raster to a `(bands, H, W)` tensor.
pub fn imagery_tensor(imagery: &Raster) -> Result<Tensor> {
    Tensor::new(&[imagery.channels(), imagery.height(), imagery.width()], imagery.to_planar())
}

/// `(1, H, W)` tensor of a single-band raster; masks become `{0, 1}`.
pub fn band_tensor(r: &Raster) -> Result<Tensor> {
    Tensor::new(&[1, r.height(), r.width()], r.band(0))
}

pub fn mask_tensor(mask: &Raster) -> Result<Tensor> {
    let flags = mask.forest_flags()?;
    Tensor::new(&[1, mask.height(), mask.width()], flags.iter().map(|&f| f as u8 as f64).collect())
}

/// Where `f⁰` comes from.
#[derive(Debug, Clone)]
pub enum Extractor {
    /// The normalized bands themselves.
    Bands,
    /// Teacher `relu1_1` and upsampled `relu2_1`.
    Teacher(VggEncoder),
    /// Distilled student, same two taps.
    Student(SlimCoder),
}

/// Nearest-neighbour 2× upsampling of `(C, h·w)` rows to `(C, 2h·2w)`.
fn upsample2(x: &Tensor, h: usize, w: usize) -> Tensor {
    let c = x.shape()[0];
    let d = x.data();
    let mut out = Vec::with_capacity(c * 4 * h * w);
    for ch in 0..c {
        for r in 0..2 * h {
            for col in 0..2 * w {
                out.push(d[ch * h * w + (r / 2) * w + col / 2]);
            }
        }
    }
    Tensor::new(&[c, 4 * h * w], out).unwrap()
}

impl Extractor {
    pub fn from_distilled(d: &Distilled, teacher: bool) -> Self {
        if teacher {
            Extractor::Teacher(d.teacher.clone())
        } else {
            Extractor::Student(d.coder.clone())
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Extractor::Bands => "bands",
            Extractor::Teacher(_) => "teacher",
            Extractor::Student(_) => "student",
        }
    }

    pub fn channels(&self, bands: usize) -> usize {
        match self {
            Extractor::Bands => bands,
            Extractor::Teacher(e) => e.spec.channels[0] + e.spec.channels[1],
            Extractor::Student(e) => e.spec.channels[0] + e.spec.channels[1],
        }
    }

    /// Raw (unstandardized) `f⁰` for a normalized `(bands, H, W)` image. Inputs are
    /// edge-padded to a multiple of 8 for the encoders and the result is cropped back.
    pub fn extract(&self, img: &Tensor) -> Result<Tensor> {
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let (h8, w8) = (round_up(h, 8), round_up(w, 8));
        let taps = match self {
            Extractor::Bands => return Ok(img.clone()),
            Extractor::Teacher(e) => e.features(&pad_replicate(img, h8, w8)?, 2)?,
            Extractor::Student(e) => e.features(&pad_replicate(img, h8, w8)?, 2)?,
        };
        let f1 = &taps[0];
        let f2 = upsample2(&taps[1], h8 / 2, w8 / 2);
        let mut data = f1.data().to_vec();
        data.extend_from_slice(f2.data());
        let c = f1.shape()[0] + f2.shape()[0];
        crop(&Tensor::new(&[c, h8, w8], data)?, 0, 0, h, w)
    }

    pub fn to_checkpoint(&self, ck: &mut Checkpoint) {
        let (kind, spec, params) = match self {
            Extractor::Bands => return ck.insert_meta("extractor.kind", &[0.0]),
            Extractor::Teacher(e) => (1.0, &e.spec, &e.params),
            Extractor::Student(e) => (2.0, &e.spec, &e.params),
        };
        ck.insert_meta("extractor.kind", &[kind]);
        ck.insert_meta("extractor.bands", &[spec.bands as f64]);
        ck.insert_meta("extractor.channels", &spec.channels.map(|c| c as f64));
        if let Extractor::Student(e) = self {
            ck.insert_meta("extractor.trained", &[e.trained as f64]);
        }
        ck.insert_params("extractor.", params);
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind = ck.meta_scalar("extractor.kind")?;
        if kind == 0.0 {
            return Ok(Extractor::Bands);
        }
        let c = ck.meta("extractor.channels")?;
        let [a, b, cc, d] = c[..] else {
            return contract("`meta.extractor.channels` must hold 4 values");
        };
        let spec = EncoderSpec { bands: ck.meta_scalar("extractor.bands")? as usize, channels: [a, b, cc, d].map(|v| v as usize) };
        let mut params = ck.params("extractor.");
        params.set_trainable("", false);
        match kind as u8 {
            1 => Ok(Extractor::Teacher(VggEncoder::from_params(spec, params))),
            2 => Ok(Extractor::Student(SlimCoder::from_params(spec, params, ck.meta_scalar("extractor.trained")? as usize))),
            k => contract(format!("unknown extractor kind {k}")),
        }
    }
}

/// Band normalization, feature extraction and feature standardization, fitted on
/// the training scenes. Standardized features are further divided by `√C`, so the
/// conditional block has unit total variance whatever its width and does not drown
/// the single noisy-target channel it is stacked with.
#[derive(Debug, Clone)]
pub struct FeaturePipeline {
    pub bands: Standardizer,
    pub extractor: Extractor,
    pub features: Standardizer,
}

impl FeaturePipeline {
    pub fn fit(imagery: &[Tensor], extractor: Extractor) -> Result<Self> {
        let bands = Standardizer::fit(imagery)?;
        let raw = imagery.iter().map(|x| extractor.extract(&bands.apply(x)?)).collect::<Result<Vec<_>>>()?;
        let mut features = Standardizer::fit(&raw)?;
        let width = (features.std.len() as f64).sqrt();
        features.std.iter_mut().for_each(|s| *s *= width);
        Ok(Self { bands, extractor, features })
    }

    pub fn channels(&self) -> usize {
        self.features.mean.len()
    }

    pub fn normalize_bands(&self, imagery: &Tensor) -> Result<Tensor> {
        self.bands.apply(imagery)
    }

    pub fn f0(&self, imagery: &Tensor) -> Result<Tensor> {
        self.features.apply(&self.extractor.extract(&self.bands.apply(imagery)?)?)
    }

    pub fn to_checkpoint(&self, ck: &mut Checkpoint) {
        self.bands.to_checkpoint(ck, "bands");
        self.features.to_checkpoint(ck, "f0");
        self.extractor.to_checkpoint(ck);
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Ok(Self {
            bands: Standardizer::from_checkpoint(ck, "bands")?,
            extractor: Extractor::from_checkpoint(ck)?,
            features: Standardizer::from_checkpoint(ck, "f0")?,
        })
    }
}
