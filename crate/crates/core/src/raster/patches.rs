use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

use super::Raster;

/// One survey polygon rasterized to a pixel set.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub id: u32,
    /// Stand volume per hectare (m³/ha).
    pub v_ha: f64,
    /// Polygon area (ha).
    pub area_ha: f64,
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
}

/// Survey patches: a `u32` id map (0 = no patch) plus one attribute row per id.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTable {
    patch_map: Raster,
    patches: Vec<Patch>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PatchRow {
    patch_id: u32,
    v_ha: f64,
    area_ha: f64,
}

impl PatchTable {
    /// Validates `rows` of `(id, v_ha, area_ha)` against the id map and collects pixel lists.
    pub fn new(patch_map: Raster, rows: &[(u32, f64, f64)]) -> Result<Self> {
        let ids = patch_map
            .as_u32()
            .ok_or_else(|| Error::Contract("patch map must be a u32 raster".into()))?;
        if patch_map.channels() != 1 {
            return contract("patch map must be single-band");
        }
        let mut table: BTreeMap<u32, Patch> = BTreeMap::new();
        for &(id, v_ha, area_ha) in rows {
            if id == 0 {
                return contract("patch id 0 is reserved for 'no patch'");
            }
            if !(v_ha >= 0.0) || !v_ha.is_finite() {
                return contract(format!("patch {id}: v_ha must be finite and >= 0, got {v_ha}"));
            }
            if !(area_ha > 0.0) || !area_ha.is_finite() {
                return contract(format!("patch {id}: area must be finite and > 0, got {area_ha}"));
            }
            if table.insert(id, Patch { id, v_ha, area_ha, pixels: Vec::new() }).is_some() {
                return contract(format!("duplicate row for patch {id}"));
            }
        }
        for (px, &id) in ids.iter().enumerate() {
            if id == 0 {
                continue;
            }
            match table.get_mut(&id) {
                Some(p) => p.pixels.push(px),
                None => return contract(format!("patch id {id} in map has no table row")),
            }
        }
        let patches = table.into_values().collect();
        Ok(Self { patch_map, patches })
    }

    pub fn patch_map(&self) -> &Raster {
        &self.patch_map
    }

    pub fn patches(&self) -> &[Patch] {
        &self.patches
    }

    pub fn height(&self) -> usize {
        self.patch_map.height()
    }

    pub fn width(&self) -> usize {
        self.patch_map.width()
    }

    pub fn rows(&self) -> Vec<(u32, f64, f64)> {
        self.patches.iter().map(|p| (p.id, p.v_ha, p.area_ha)).collect()
    }
}

/// Writes `patch_id,v_ha,area_ha` rows with a header.
pub fn write_patch_csv(table: &PatchTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for p in table.patches() {
        w.serialize(PatchRow { patch_id: p.id, v_ha: p.v_ha, area_ha: p.area_ha }).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads patch rows and joins them with `patch_map`.
pub fn read_patch_csv(path: impl AsRef<Path>, patch_map: Raster) -> Result<PatchTable> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput { path: path.to_path_buf(), msg: "patch table not found".into() });
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        let row: PatchRow = rec.map_err(csv_err)?;
        rows.push((row.patch_id, row.v_ha, row.area_ha));
    }
    PatchTable::new(patch_map, &rows)
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    Error::Format { offset, msg: format!("patch csv: {e}") }
}
