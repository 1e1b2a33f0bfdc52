//! Survey volume → carbon storage → per-pixel carbon density.
//!
//! Patch carbon is `C = factor·δ·ρ·γ·V` with `V = V_ha·Area`, spread over the
//! patch's forest pixels in proportion to canopy height. Weights sum to one per
//! patch, so every patch's pixel values add back up to its `C`.

use crate::error::{contract, Error, Result};
use crate::raster::{PatchTable, Raster};

/// Pixel footprint in hectares for 16 m pixels; `Mg/pixel × 1/PIXEL_HA = Mg/ha`.
pub const PIXEL_HA: f64 = 0.0256;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarbonParams {
    /// Volume expansion coefficient.
    pub delta: f64,
    /// Bulk (dry-weight) density, t/m³.
    pub rho: f64,
    /// Carbon content rate.
    pub gamma: f64,
    /// Leading constant of the storage formula.
    // The 2.439 value is used as given; it has no stated derivation.
    pub factor: f64,
}

impl Default for CarbonParams {
    fn default() -> Self {
        Self { delta: 1.90, rho: 0.5, gamma: 0.5, factor: 2.439 }
    }
}

impl CarbonParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.delta) && ok(self.rho) && ok(self.gamma) && ok(self.factor)) {
            return contract(format!("carbon parameters must all be positive: {self:?}"));
        }
        if self.gamma > 1.0 {
            return contract(format!("carbon content rate must be <= 1, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Stand volume in m³ from volume per hectare and area in hectares.
pub fn accumulated_volume(v_ha: f64, area_ha: f64) -> Result<f64> {
    if !(v_ha >= 0.0) {
        return contract(format!("volume per hectare must be >= 0, got {v_ha}"));
    }
    if !(area_ha > 0.0) {
        return contract(format!("area must be > 0, got {area_ha}"));
    }
    Ok(v_ha * area_ha)
}

/// Carbon storage in Mg for `volume` m³.
pub fn carbon_storage(volume: f64, p: &CarbonParams) -> Result<f64> {
    if !(volume >= 0.0) {
        return contract(format!("volume must be >= 0, got {volume}"));
    }
    p.validate()?;
    Ok(p.factor * (p.delta * p.rho * p.gamma * volume))
}

/// Canopy-height weights over one patch; uniform when the patch has no canopy at all.
pub fn canopy_weights(canopy: &[f64]) -> Result<Vec<f64>> {
    if canopy.is_empty() {
        return contract("canopy weights of an empty patch");
    }
    if let Some(c) = canopy.iter().find(|c| !(**c >= 0.0)) {
        return contract(format!("canopy height must be >= 0, got {c}"));
    }
    let total: f64 = canopy.iter().sum();
    if total == 0.0 {
        let u = 1.0 / canopy.len() as f64;
        return Ok(vec![u; canopy.len()]);
    }
    Ok(canopy.iter().map(|c| c / total).collect())
}

/// Patch pixels that fell outside the forest mask and were dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskWarning {
    pub patch_id: u32,
    pub excluded_pixels: usize,
    /// The whole patch was outside the mask, so its carbon is not mapped.
    pub all_excluded: bool,
}

impl std::fmt::Display for MaskWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.all_excluded {
            write!(f, "patch {} lies entirely outside the forest mask; its carbon is dropped", self.patch_id)
        } else {
            write!(f, "patch {}: {} pixel(s) outside the forest mask excluded", self.patch_id, self.excluded_pixels)
        }
    }
}

/// Per-pixel carbon density (Mg/pixel) with the patch each value came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub height: usize,
    pub width: usize,
    pub cd: Vec<f64>,
    /// Source patch id per pixel, 0 where nothing was assigned.
    pub provenance: Vec<u32>,
    /// Carbon storage per patch id, in table order.
    pub patch_carbon: Vec<(u32, f64)>,
    pub warnings: Vec<MaskWarning>,
}

impl DensityMap {
    pub fn to_raster(&self) -> Raster {
        Raster::from_f64_band(self.height, self.width, &self.cd).expect("density map dims are consistent")
    }

    pub fn total(&self) -> f64 {
        self.cd.iter().sum()
    }
}

/// Distributes each patch's carbon over its forest pixels by canopy weight.
pub fn carbon_density_map(patches: &PatchTable, canopy: &Raster, mask: &Raster, p: &CarbonParams) -> Result<DensityMap> {
    p.validate()?;
    let map = patches.patch_map();
    if !map.same_grid(canopy) || !map.same_grid(mask) {
        return Err(Error::Shape(format!(
            "patch map {}x{}, canopy {}x{}, mask {}x{} are not aligned",
            map.height(),
            map.width(),
            canopy.height(),
            canopy.width(),
            mask.height(),
            mask.width()
        )));
    }
    if canopy.channels() != 1 {
        return contract("canopy raster must be single-band");
    }
    let forest = mask.forest_flags()?;
    let n = map.pixels();
    let mut cd = vec![0.0; n];
    let mut provenance = vec![0u32; n];
    let mut patch_carbon = Vec::with_capacity(patches.patches().len());
    let mut warnings = Vec::new();

    for patch in patches.patches() {
        let volume = accumulated_volume(patch.v_ha, patch.area_ha)?;
        let c = carbon_storage(volume, p)?;
        patch_carbon.push((patch.id, c));
        let kept: Vec<usize> = patch.pixels.iter().copied().filter(|&px| forest[px]).collect();
        let excluded = patch.pixels.len() - kept.len();
        if excluded > 0 {
            warnings.push(MaskWarning { patch_id: patch.id, excluded_pixels: excluded, all_excluded: kept.is_empty() });
        }
        if kept.is_empty() {
            continue;
        }
        let heights: Vec<f64> = kept.iter().map(|&px| canopy.get(px, 0)).collect();
        let w = canopy_weights(&heights)?;
        for (&px, wi) in kept.iter().zip(w) {
            cd[px] = c * wi;
            provenance[px] = patch.id;
        }
    }
    Ok(DensityMap { height: map.height(), width: map.width(), cd, provenance, patch_carbon, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_examples() {
        assert_eq!(accumulated_volume(100.0, 2.0).unwrap(), 200.0);
        assert_eq!(accumulated_volume(0.0, 5.0).unwrap(), 0.0);
        assert!((accumulated_volume(123.4, 0.75).unwrap() - 92.55).abs() < 1e-12);
        assert!(accumulated_volume(-1.0, 1.0).is_err());
        assert!(accumulated_volume(1.0, 0.0).is_err());
    }

    #[test]
    fn storage_examples() {
        let p = CarbonParams::default();
        assert_eq!(carbon_storage(0.0, &p).unwrap(), 0.0);
        assert_eq!(carbon_storage(100.0, &p).unwrap(), 115.8525);
        let unit = CarbonParams { delta: 1.0, rho: 1.0, gamma: 1.0, ..p };
        assert_eq!(carbon_storage(1.0, &unit).unwrap(), 2.439);
        assert!(carbon_storage(-1.0, &p).is_err());
        assert!(CarbonParams { gamma: 1.5, ..p }.validate().is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(canopy_weights(&[10.0, 30.0]).unwrap(), vec![0.25, 0.75]);
        assert_eq!(canopy_weights(&[4.0; 5]).unwrap(), vec![0.2; 5]);
        assert_eq!(canopy_weights(&[0.0; 3]).unwrap(), vec![1.0 / 3.0; 3]);
        assert!(canopy_weights(&[]).is_err());
        assert!(canopy_weights(&[1.0, -1.0]).is_err());
    }

    fn one_patch(v_ha: f64, area: f64) -> PatchTable {
        PatchTable::new(Raster::from_u32(1, 2, vec![1, 1]).unwrap(), &[(1, v_ha, area)]).unwrap()
    }

    #[test]
    fn density_splits_by_canopy() {
        // C = 100 Mg with factor 1 and unit coefficients
        let p = CarbonParams { delta: 1.0, rho: 1.0, gamma: 1.0, factor: 1.0 };
        let canopy = Raster::from_f32(1, 2, 1, vec![10.0, 30.0]).unwrap();
        let mask = Raster::from_u8(1, 2, vec![255, 255]).unwrap();
        let d = carbon_density_map(&one_patch(100.0, 1.0), &canopy, &mask, &p).unwrap();
        assert_eq!(d.cd, vec![25.0, 75.0]);
        assert_eq!(d.provenance, vec![1, 1]);
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn patch_outside_mask_is_dropped_with_warning() {
        let canopy = Raster::from_f32(1, 2, 1, vec![10.0, 30.0]).unwrap();
        let mask = Raster::from_u8(1, 2, vec![0, 0]).unwrap();
        let d = carbon_density_map(&one_patch(100.0, 1.0), &canopy, &mask, &CarbonParams::default()).unwrap();
        assert_eq!(d.cd, vec![0.0, 0.0]);
        assert_eq!(d.warnings, vec![MaskWarning { patch_id: 1, excluded_pixels: 2, all_excluded: true }]);
    }

    #[test]
    fn partial_overlap_renormalizes() {
        let p = CarbonParams { delta: 1.0, rho: 1.0, gamma: 1.0, factor: 1.0 };
        let canopy = Raster::from_f32(1, 2, 1, vec![10.0, 30.0]).unwrap();
        let mask = Raster::from_u8(1, 2, vec![0, 255]).unwrap();
        let d = carbon_density_map(&one_patch(100.0, 1.0), &canopy, &mask, &p).unwrap();
        assert_eq!(d.cd, vec![0.0, 100.0]);
        assert_eq!(d.warnings[0].excluded_pixels, 1);
    }
}
