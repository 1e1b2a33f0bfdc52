//! Masked MAE, MSE, RMSE, PSNR and SSIM.
//!
//! Every metric runs over the *included* pixels: all of them without a mask,
//! only forest pixels (`255`) with one. Variances are population variances.

use std::fmt;

use crate::error::{contract, Error, Result};
use crate::raster::Raster;

/// PSNR in dB, or the identical-images case where MSE is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }

    pub fn value(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsimWindow {
    /// Non-overlapping `n × n` tiles; edge tiles are clipped to the image.
    Blocks(usize),
    /// One window over the whole image.
    Global,
}

impl Default for SsimWindow {
    fn default() -> Self {
        SsimWindow::Blocks(8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; defaults to the truth maximum over included pixels.
    pub dynamic_range: Option<f64>,
    /// PSNR peak `MAX`; same default as `dynamic_range`.
    pub max_val: Option<f64>,
    pub window: SsimWindow,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { k1: 0.01, k2: 0.03, dynamic_range: None, max_val: None, window: SsimWindow::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub psnr: Psnr,
    pub ssim: f64,
    pub n_pixels: usize,
    pub mask_applied: bool,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "run_id,mae,mse,rmse,psnr,ssim,n_pixels";

    pub fn csv_row(&self, run_id: &str) -> String {
        format!("{run_id},{},{},{},{},{},{}", self.mae, self.mse, self.rmse, self.psnr, self.ssim, self.n_pixels)
    }
}

/// Single-band planes plus the inclusion flags every metric works over.
struct Planes {
    pred: Vec<f64>,
    truth: Vec<f64>,
    include: Vec<bool>,
    height: usize,
    width: usize,
    masked: bool,
}

fn planes(pred: &Raster, truth: &Raster, mask: Option<&Raster>) -> Result<Planes> {
    if !pred.same_grid(truth) || pred.channels() != truth.channels() {
        return Err(Error::Shape(format!(
            "pred {}x{}x{} vs truth {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.channels(),
            truth.height(),
            truth.width(),
            truth.channels()
        )));
    }
    if pred.channels() != 1 {
        return contract("metrics are defined on single-band rasters");
    }
    let include = match mask {
        Some(m) => {
            if !m.same_grid(truth) {
                return Err(Error::Shape("mask grid differs from truth".into()));
            }
            m.forest_flags()?
        }
        None => vec![true; truth.pixels()],
    };
    if !include.iter().any(|&b| b) {
        return contract("mask includes no pixels");
    }
    Ok(Planes {
        pred: pred.to_f64(),
        truth: truth.to_f64(),
        include,
        height: truth.height(),
        width: truth.width(),
        masked: mask.is_some(),
    })
}

fn errors(p: &Planes) -> (f64, f64, f64, usize) {
    let (mut sa, mut ss, mut n) = (0.0, 0.0, 0usize);
    for i in (0..p.pred.len()).filter(|&i| p.include[i]) {
        let d = p.pred[i] - p.truth[i];
        sa += d.abs();
        ss += d * d;
        n += 1;
    }
    let mse = ss / n as f64;
    (sa / n as f64, mse, mse.sqrt(), n)
}

fn truth_max(p: &Planes) -> f64 {
    (0..p.truth.len()).filter(|&i| p.include[i]).map(|i| p.truth[i]).fold(f64::NEG_INFINITY, f64::max)
}

/// `(mae, mse, rmse)` over the included pixels.
pub fn pixel_metrics(pred: &Raster, truth: &Raster, mask: Option<&Raster>) -> Result<(f64, f64, f64)> {
    let (mae, mse, rmse, _) = errors(&planes(pred, truth, mask)?);
    Ok((mae, mse, rmse))
}

fn psnr_of(mse: f64, max_val: f64) -> Result<Psnr> {
    if !(max_val > 0.0) {
        return contract(format!("PSNR peak must be > 0, got {max_val}"));
    }
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (max_val * max_val / mse).log10()))
}

pub fn psnr(pred: &Raster, truth: &Raster, max_val: f64, mask: Option<&Raster>) -> Result<Psnr> {
    let (_, mse, _, _) = errors(&planes(pred, truth, mask)?);
    psnr_of(mse, max_val)
}

fn ssim_of(p: &Planes, k1: f64, k2: f64, l: f64, window: SsimWindow) -> Result<f64> {
    if !(l > 0.0) {
        return contract(format!("SSIM dynamic range must be > 0, got {l}"));
    }
    let (h, w) = (p.height, p.width);
    let size = match window {
        SsimWindow::Blocks(n) => {
            if n == 0 || n > h || n > w {
                return contract(format!("SSIM window {n} does not fit a {h}x{w} image"));
            }
            n
        }
        SsimWindow::Global => h.max(w),
    };
    let c1 = (k1 * l).powi(2);
    let c2 = (k2 * l).powi(2);
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in (0..h).step_by(size) {
        for x0 in (0..w).step_by(size) {
            let idx: Vec<usize> = (y0..(y0 + size).min(h))
                .flat_map(|y| (x0..(x0 + size).min(w)).map(move |x| y * w + x))
                .filter(|&i| p.include[i])
                .collect();
            if idx.is_empty() {
                continue;
            }
            let n = idx.len() as f64;
            let mx = idx.iter().map(|&i| p.pred[i]).sum::<f64>() / n;
            let my = idx.iter().map(|&i| p.truth[i]).sum::<f64>() / n;
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for &i in &idx {
                let (dx, dy) = (p.pred[i] - mx, p.truth[i] - my);
                vx += dx * dx;
                vy += dy * dy;
                cxy += dx * dy;
            }
            let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

pub fn ssim(
    pred: &Raster,
    truth: &Raster,
    k1: f64,
    k2: f64,
    dynamic_range: f64,
    window: SsimWindow,
    mask: Option<&Raster>,
) -> Result<f64> {
    ssim_of(&planes(pred, truth, mask)?, k1, k2, dynamic_range, window)
}

/// All five metrics. A non-positive truth maximum falls back to a peak of 1.
pub fn evaluate(pred: &Raster, truth: &Raster, mask: Option<&Raster>, opts: &EvalOptions) -> Result<MetricReport> {
    let p = planes(pred, truth, mask)?;
    let (mae, mse, rmse, n) = errors(&p);
    let peak = Some(truth_max(&p)).filter(|m| *m > 0.0).unwrap_or(1.0);
    let psnr = psnr_of(mse, opts.max_val.unwrap_or(peak))?;
    let ssim = ssim_of(&p, opts.k1, opts.k2, opts.dynamic_range.unwrap_or(peak), opts.window)?;
    Ok(MetricReport { mae, mse, rmse, psnr, ssim, n_pixels: n, mask_applied: p.masked })
}
