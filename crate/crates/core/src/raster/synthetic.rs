//! Seeded synthetic scenes standing in for satellite imagery, canopy height,
//! forest masks and inventory patches.
//!
//! Generation law, per pixel:
//! - a smooth latent field `z ∈ (0, 1)` drives stand development;
//! - land cover comes from a second smooth field: top 60% forest, next 25% grass, rest bare;
//! - forest canopy is `1 + 29·g(z)` metres with the saturating `g(z) = 1 − e^{−4z}`;
//! - patches are Voronoi cells around seeded forest pixels, and each patch's
//!   volume per hectare is set so the carbon pipeline yields `KAPPA · canopy`;
//! - every band is linear in `z` (for forest and grass alike) plus band-specific
//!   lightly smoothed noise at about 10 dB SNR. Bare ground has its own signature.
//!
//! Density is therefore a monotone but strongly saturating function of the
//! spectral signal, and grass is spectrally close to young forest.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::carbon::{carbon_density_map, CarbonParams, PIXEL_HA};
use crate::error::{contract, Result};
use crate::numerics::{normal_vec, SeedStream};

use super::patches::{read_patch_csv, write_patch_csv, PatchTable};
use super::{read_raster, write_raster, Raster, FOREST};

/// Pixel area in hectares (16 m ground sampling).
pub const PIXEL_AREA_HA: f64 = PIXEL_HA;

/// Carbon density per metre of canopy height, Mg/pixel/m.
const KAPPA: f64 = 0.11;
const FOREST_FRACTION: f64 = 0.60;
const GRASS_FRACTION: f64 = 0.25;
const BAND_LOADING: [f64; 4] = [0.06, 0.08, 0.05, 0.30];
const FOREST_BASE: [f64; 4] = [0.03, 0.05, 0.03, 0.15];
const GRASS_OFFSET: [f64; 4] = [0.004, 0.006, 0.0, -0.01];
const BARE_BASE: [f64; 4] = [0.10, 0.12, 0.15, 0.20];
const SNR_DB: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_patches: usize,
    pub carbon: CarbonParams,
}

impl SceneParams {
    pub fn new(seed: u64, height: usize, width: usize, n_patches: usize) -> Self {
        Self { seed, height, width, n_patches, carbon: CarbonParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// Four f32 bands.
    pub imagery: Raster,
    /// Canopy height, m.
    pub canopy: Raster,
    /// `{0, 255}` forest mask.
    pub mask: Raster,
    pub patches: PatchTable,
    /// Carbon density, Mg/pixel.
    pub truth_density: Raster,
}

/// Generates a scene deterministically from `seed`.
pub fn gen_synthetic_scene(seed: u64, h: usize, w: usize, n_patches: usize) -> Result<SyntheticScene> {
    gen_scene(&SceneParams::new(seed, h, w, n_patches))
}

pub fn gen_scene(p: &SceneParams) -> Result<SyntheticScene> {
    let (h, w) = (p.height, p.width);
    if h < 16 || w < 16 {
        return contract(format!("scene must be at least 16x16, got {h}x{w}"));
    }
    if p.n_patches == 0 {
        return contract("scene needs at least one patch");
    }
    p.carbon.validate()?;
    let streams = SeedStream::new(p.seed);
    let n = h * w;
    let span = h.max(w) as f64;

    let latent = smooth_field(&mut streams.rng("latent"), h, w, (span / 8.0).max(2.0));
    let z: Vec<f64> = latent.iter().map(|v| 0.5 + 0.5 * (0.9 * v).tanh()).collect();

    let cover = smooth_field(&mut streams.rng("cover"), h, w, (span / 6.0).max(2.0));
    let forest_cut = quantile(&cover, 1.0 - FOREST_FRACTION);
    let grass_cut = quantile(&cover, 1.0 - FOREST_FRACTION - GRASS_FRACTION);
    let forest: Vec<bool> = cover.iter().map(|&c| c >= forest_cut).collect();
    let grass: Vec<bool> = cover.iter().zip(&forest).map(|(&c, &f)| !f && c >= grass_cut).collect();

    let canopy: Vec<f32> = (0..n)
        .map(|i| if forest[i] { (1.0 + 29.0 * saturate(z[i])) as f32 } else { 0.0 })
        .collect();
    let canopy = Raster::from_f32(h, w, 1, canopy)?;
    let mask = Raster::from_u8(h, w, forest.iter().map(|&f| if f { FOREST } else { 0 }).collect())?;

    let patches = voronoi_patches(&mut streams.rng("patches"), &forest, &canopy, h, w, p)?;
    let truth = carbon_density_map(&patches, &canopy, &mask, &p.carbon)?;

    let z_std = std_dev(&z);
    let mut imagery = vec![0.0f32; n * 4];
    for (b, loading) in BAND_LOADING.iter().enumerate() {
        let noise = smooth_field(&mut streams.rng(&format!("noise.band{b}")), h, w, 0.7);
        let noise_std = loading * z_std / 10f64.powf(SNR_DB / 20.0);
        for i in 0..n {
            let signal = if forest[i] {
                FOREST_BASE[b] + loading * z[i]
            } else if grass[i] {
                FOREST_BASE[b] + GRASS_OFFSET[b] + loading * z[i]
            } else {
                BARE_BASE[b] + 0.2 * loading * z[i]
            };
            imagery[i * 4 + b] = (signal + noise_std * noise[i]) as f32;
        }
    }

    Ok(SyntheticScene {
        imagery: Raster::from_f32(h, w, 4, imagery)?,
        canopy,
        mask,
        patches,
        truth_density: truth.to_raster(),
    })
}

fn saturate(z: f64) -> f64 {
    1.0 - (-4.0 * z).exp()
}

fn voronoi_patches(
    rng: &mut ChaCha8Rng,
    forest: &[bool],
    canopy: &Raster,
    h: usize,
    w: usize,
    p: &SceneParams,
) -> Result<PatchTable> {
    let mut candidates: Vec<usize> = (0..h * w).filter(|&i| forest[i]).collect();
    candidates.shuffle(rng);
    let seeds = &candidates[..p.n_patches.min(candidates.len())];
    let mut ids = vec![0u32; h * w];
    for px in (0..h * w).filter(|&i| forest[i]) {
        let (y, x) = ((px / w) as i64, (px % w) as i64);
        let mut best = (i64::MAX, 0usize);
        for (k, &s) in seeds.iter().enumerate() {
            let (sy, sx) = ((s / w) as i64, (s % w) as i64);
            let d = (y - sy).pow(2) + (x - sx).pow(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        ids[px] = best.1 as u32 + 1;
    }
    // Volume per hectare chosen so that C_i · w_px = KAPPA · canopy_px.
    let per_volume = p.carbon.factor * p.carbon.delta * p.carbon.rho * p.carbon.gamma;
    let rows: Vec<(u32, f64, f64)> = (1..=seeds.len() as u32)
        .map(|id| {
            let px: Vec<usize> = (0..h * w).filter(|&i| ids[i] == id).collect();
            let total_canopy: f64 = px.iter().map(|&i| canopy.get(i, 0)).sum();
            let area = px.len() as f64 * PIXEL_AREA_HA;
            let v_ha = KAPPA * total_canopy / (per_volume * area);
            (id, v_ha, area)
        })
        .collect();
    PatchTable::new(Raster::from_u32(h, w, ids)?, &rows)
}

/// Standardized Gaussian-blurred white noise.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let noise = normal_vec(rng, h * w);
    let blurred = gaussian_blur(&noise, h, w, sigma);
    let mean = blurred.iter().sum::<f64>() / blurred.len() as f64;
    let sd = std_dev(&blurred).max(1e-12);
    blurred.iter().map(|v| (v - mean) / sd).collect()
}

fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
        }
        i as usize
    };
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[y * w + reflect(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[reflect(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let i = ((q.clamp(0.0, 1.0) * s.len() as f64) as usize).min(s.len() - 1);
    s[i]
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn write_scene(scene: &SyntheticScene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_raster(&scene.imagery, dir.join("imagery.ras"))?;
    write_raster(&scene.canopy, dir.join("canopy.ras"))?;
    write_raster(&scene.mask, dir.join("mask.ras"))?;
    write_raster(scene.patches.patch_map(), dir.join("patch_map.ras"))?;
    write_patch_csv(&scene.patches, dir.join("patches.csv"))?;
    write_raster(&scene.truth_density, dir.join("truth.ras"))?;
    Ok(())
}

pub fn read_scene(dir: impl AsRef<Path>) -> Result<SyntheticScene> {
    let dir = dir.as_ref();
    let patch_map = read_raster(dir.join("patch_map.ras"))?;
    Ok(SyntheticScene {
        imagery: read_raster(dir.join("imagery.ras"))?,
        canopy: read_raster(dir.join("canopy.ras"))?,
        mask: read_raster(dir.join("mask.ras"))?,
        patches: read_patch_csv(dir.join("patches.csv"), patch_map)?,
        truth_density: read_raster(dir.join("truth.ras"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = gen_synthetic_scene(3, 20, 24, 4).unwrap();
        let b = gen_synthetic_scene(3, 20, 24, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_synthetic_scene(4, 20, 24, 4).unwrap());
    }

    #[test]
    fn forest_pixels_all_have_patches() {
        let s = gen_synthetic_scene(1, 32, 32, 5).unwrap();
        let ids = s.patches.patch_map().as_u32().unwrap();
        for (px, f) in s.mask.forest_flags().unwrap().iter().enumerate() {
            assert_eq!(*f, ids[px] != 0, "pixel {px}");
        }
        assert_eq!(s.patches.patches().len(), 5);
    }

    #[test]
    fn rejects_degenerate_dims() {
        assert!(gen_synthetic_scene(1, 8, 32, 3).is_err());
        assert!(gen_synthetic_scene(1, 32, 32, 0).is_err());
    }

    #[test]
    fn scene_dir_roundtrip() {
        let s = gen_synthetic_scene(9, 16, 16, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_scene(&s, dir.path()).unwrap();
        assert_eq!(read_scene(dir.path()).unwrap(), s);
    }
}
