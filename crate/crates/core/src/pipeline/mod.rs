//! End-to-end stages: scene generation, distillation, training, estimation,
//! evaluation, the regression baseline and the module ablation.
//!
//! Every stage takes the run seed from [`RunConfig`] and derives its own stream
//! from a fixed label, so reruns are bit-identical.

mod ablation;
pub mod cli;
mod config;
mod features;
mod ols;

pub use ablation::{run_ablation, thread_cap, AblationRow, AblationTable, ABLATION_GRID};
pub use config::{DiffusionConfig, Modules, RunConfig, SceneConfig, TrainConfig};
pub use features::{band_tensor, imagery_tensor, mask_tensor, Extractor, FeaturePipeline, Standardizer};
pub use ols::{fit_ols, OlsFit};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::diffusion::{make_schedule, scale_target, train_iidm, DenoiseNet, Iidm, NetConfig, TrainSample};
use crate::distill::{distill, Distilled};
use crate::error::{contract, Error, Result};
use crate::metrics::{evaluate, EvalOptions, MetricReport};
use crate::numerics::{derive_seed, SeedStream, Tensor};
use crate::raster::{gen_scene, read_scene, write_scene, Raster, SceneParams, SyntheticScene};

pub const OLS_RIDGE: f64 = 1e-8;

pub fn scene_params(cfg: &RunConfig, k: usize) -> SceneParams {
    let s = &cfg.scene;
    SceneParams {
        seed: derive_seed(cfg.seed, &format!("scene{k}")),
        height: s.size,
        width: s.size,
        n_patches: s.n_patches,
        carbon: cfg.carbon,
    }
}

pub fn generate_scenes(cfg: &RunConfig) -> Result<Vec<SyntheticScene>> {
    (0..cfg.scene.n_scenes).map(|k| gen_scene(&scene_params(cfg, k))).collect()
}

pub fn scene_dir(root: &Path, k: usize) -> PathBuf {
    root.join(format!("scene_{k}"))
}

pub fn write_scenes(root: &Path, scenes: &[SyntheticScene]) -> Result<()> {
    for (k, s) in scenes.iter().enumerate() {
        write_scene(s, scene_dir(root, k))?;
    }
    Ok(())
}

/// Reads `scene_0 .. scene_{n−1}` under `root`.
pub fn read_scenes(root: &Path, n: usize) -> Result<Vec<SyntheticScene>> {
    (0..n)
        .map(|k| {
            let dir = scene_dir(root, k);
            if !dir.is_dir() {
                return Err(Error::MissingInput { path: dir, msg: "scene not found; run `gen` first".into() });
            }
            read_scene(dir)
        })
        .collect()
}

/// Training scenes and the held-out last scene.
pub fn split(scenes: &[SyntheticScene]) -> Result<(&[SyntheticScene], &SyntheticScene)> {
    match scenes {
        [train @ .., test] if !train.is_empty() => Ok((train, test)),
        _ => contract(format!("need at least 2 scenes, got {}", scenes.len())),
    }
}

/// Non-overlapping `crop × crop` tiles of the band-normalized training imagery.
pub fn distill_crops(train: &[SyntheticScene], crop: usize) -> Result<Vec<Tensor>> {
    let imgs = train.iter().map(|s| imagery_tensor(&s.imagery)).collect::<Result<Vec<_>>>()?;
    let norm = Standardizer::fit(&imgs)?;
    let mut out = Vec::new();
    for img in &imgs {
        let img = norm.apply(img)?;
        let (h, w) = (img.shape()[1], img.shape()[2]);
        for top in (0..=h.saturating_sub(crop)).step_by(crop) {
            for left in (0..=w.saturating_sub(crop)).step_by(crop) {
                out.push(crate::diffusion::crop(&img, top, left, crop, crop)?);
            }
        }
    }
    Ok(out)
}

pub fn run_distill(cfg: &RunConfig, train: &[SyntheticScene]) -> Result<Distilled> {
    distill(distill_crops(train, cfg.distill.crop)?, &cfg.distill, derive_seed(cfg.seed, "distill"))
}

/// A trained estimator: feature pipeline, diffusion model and the modules it was
/// trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub modules: Modules,
    pub features: FeaturePipeline,
    pub iidm: Iidm,
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let m = self.modules.to_bits().map(|b| b as u8 as f64);
        ck.insert_meta("modules", &m);
        self.features.to_checkpoint(&mut ck);
        self.iidm.to_checkpoint(&mut ck);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let m = ck.meta("modules")?;
        let [mask, vgg, kd, att] = m[..] else {
            return contract("`meta.modules` must hold 4 flags");
        };
        let modules = Modules::new(mask != 0.0, vgg != 0.0, kd != 0.0, att != 0.0);
        let features = FeaturePipeline::from_checkpoint(ck)?;
        let iidm = Iidm::from_checkpoint(ck)?;
        if iidm.net.cfg.cond_channels != features.channels() {
            return contract("checkpoint features and network disagree on channel count");
        }
        Ok(Self { modules, features, iidm })
    }

    /// Density raster for one scene. With the mask module on, the forest mask is a
    /// network input and the output is zero outside forest.
    pub fn estimate(&self, imagery: &Raster, mask: &Raster, seed: u64) -> Result<Raster> {
        let bands = self.features.bands.mean.len();
        if imagery.channels() != bands {
            return contract(format!("imagery has {} bands, the model was trained on {bands}", imagery.channels()));
        }
        if !imagery.same_grid(mask) {
            return contract("imagery and mask grids differ");
        }
        let f0 = self.features.f0(&imagery_tensor(imagery)?)?;
        let mk = mask_tensor(mask)?;
        let on = self.modules.mask;
        let d = self.iidm.estimate(&f0, on.then_some(&mk), on, seed)?;
        Raster::from_f64_band(imagery.height(), imagery.width(), d.data())
    }
}

/// The mask metrics run over: the forest mask with the mask module on, none otherwise.
pub fn eval_mask(modules: Modules, scene: &SyntheticScene) -> Option<&Raster> {
    modules.mask.then_some(&scene.mask)
}

pub fn evaluate_run(pred: &Raster, truth: &Raster, mask: Option<&Raster>) -> Result<MetricReport> {
    evaluate(pred, truth, mask, &EvalOptions::default())
}

fn extractor_for(modules: Modules, distilled: Option<&Distilled>) -> Result<Extractor> {
    if !modules.needs_distillation() {
        return Ok(Extractor::Bands);
    }
    let Some(d) = distilled else {
        return contract("the vgg and kd_vgg modules need a distillation checkpoint");
    };
    Ok(Extractor::from_distilled(d, modules.vgg))
}

/// Target scale: the largest training density, or 1 for all-zero targets.
fn target_scale(train: &[SyntheticScene]) -> f64 {
    let m = train.iter().flat_map(|s| s.truth_density.band(0)).fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Trains a model on `train` and returns it with its loss curve. The returned
/// model is the one its checkpoint reloads to.
pub fn train_model(cfg: &RunConfig, train: &[SyntheticScene], distilled: Option<&Distilled>) -> Result<(Model, Vec<f64>)> {
    cfg.validate()?;
    if train.is_empty() {
        return contract("training needs at least one scene");
    }
    let modules = cfg.modules;
    let imagery = train.iter().map(|s| imagery_tensor(&s.imagery)).collect::<Result<Vec<_>>>()?;
    let features = FeaturePipeline::fit(&imagery, extractor_for(modules, distilled)?)?;
    let scale = target_scale(train);
    let mut samples = Vec::with_capacity(train.len());
    for (s, img) in train.iter().zip(&imagery) {
        let target = scale_target(&band_tensor(&s.truth_density)?, scale)?;
        samples.push(TrainSample::new(target, features.f0(img)?, mask_tensor(&s.mask)?)?);
    }
    let d = &cfg.diffusion;
    let net_cfg = NetConfig {
        widths: d.widths.clone(),
        cond_channels: features.channels(),
        mask_channel: modules.mask,
        attention: modules.attention_mlp,
        time_dim: d.time_dim,
    };
    let streams = SeedStream::new(cfg.seed);
    let mut net = DenoiseNet::new(net_cfg, &mut streams.rng("iidm.init"))?;
    let sched = make_schedule(d.steps, d.beta_start, d.beta_end)?;
    let curve = train_iidm(&mut net, &sched, &samples, &cfg.train_opts(streams.child("iidm.train").seed()))?;
    let model = Model { modules, features, iidm: Iidm::new(net, d.steps, d.beta_start, d.beta_end, scale)? };
    Ok((Model::from_checkpoint(&model.to_checkpoint())?, curve))
}

pub fn estimate_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, "estimate")
}

/// Result of the regression baseline on the held-out scene.
#[derive(Debug, Clone)]
pub struct OlsBaseline {
    pub fit: OlsFit,
    /// Zero outside forest.
    pub pred: Raster,
    /// Over forest pixels.
    pub report: MetricReport,
}

/// Per-pixel OLS from band values to density, fitted on forest pixels of `train`
/// and scored on the forest pixels of `test`.
pub fn ols_baseline(train: &[SyntheticScene], test: &SyntheticScene) -> Result<OlsBaseline> {
    let (mut rows, mut y) = (Vec::new(), Vec::new());
    for s in train {
        let truth = s.truth_density.band(0);
        for (px, f) in s.mask.forest_flags()?.into_iter().enumerate() {
            if f {
                rows.push((0..s.imagery.channels()).map(|b| s.imagery.get(px, b)).collect::<Vec<_>>());
                y.push(truth[px]);
            }
        }
    }
    let fit = fit_ols(&rows, &y, OLS_RIDGE)?;
    let im = &test.imagery;
    let flags = test.mask.forest_flags()?;
    let pred: Vec<f64> = (0..im.pixels())
        .map(|px| if flags[px] { fit.predict(&(0..im.channels()).map(|b| im.get(px, b)).collect::<Vec<_>>()) } else { 0.0 })
        .collect();
    let pred = Raster::from_f64_band(im.height(), im.width(), &pred)?;
    let report = evaluate_run(&pred, &test.truth_density, Some(&test.mask))?;
    Ok(OlsBaseline { fit, pred, report })
}

/// One training run scored on the held-out scene.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: Model,
    pub curve: Vec<f64>,
    pub pred: Raster,
    pub report: MetricReport,
}

pub fn run_experiment(cfg: &RunConfig, scenes: &[SyntheticScene], distilled: Option<&Distilled>) -> Result<RunOutcome> {
    let (train, test) = split(scenes)?;
    let (model, curve) = train_model(cfg, train, distilled)?;
    let pred = model.estimate(&test.imagery, &test.mask, estimate_seed(cfg))?;
    let report = evaluate_run(&pred, &test.truth_density, eval_mask(cfg.modules, test))?;
    Ok(RunOutcome { model, curve, pred, report })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format { offset: e.position().map(|p| p.byte()).unwrap_or(0), msg: e.to_string() }
}

/// `step,loss` rows, steps counted from 1.
pub fn write_loss_csv(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["step", "loss"]).map_err(csv_err)?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[(&str, &MetricReport)]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "{}", MetricReport::CSV_HEADER)?;
    for (id, r) in rows {
        writeln!(f, "{}", r.csv_row(id))?;
    }
    Ok(())
}
