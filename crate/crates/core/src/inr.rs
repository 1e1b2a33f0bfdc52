//! Coordinate-based upsampling and attention fusion inside the denoising U-Net.
//!
//! Every resolution level shares the continuous frame `[−1, 1]²`, with pixel
//! centres at `−1 + (2i + 1)/n` along each axis. Coordinates are `(row, col)`.

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::numerics::nn::{init_conv, init_linear, conv, linear};
use crate::numerics::{ParamSet, Session, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoordGrid {
    pub height: usize,
    pub width: usize,
}

fn centre(i: usize, n: usize) -> f64 {
    -1.0 + (2 * i + 1) as f64 / n as f64
}

impl CoordGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return contract("coordinate grid must be non-empty");
        }
        Ok(Self { height, width })
    }

    pub fn centre(&self, row: usize, col: usize) -> (f64, f64) {
        (centre(row, self.height), centre(col, self.width))
    }

    /// Pixel centres in row-major order.
    pub fn coords(&self) -> Vec<(f64, f64)> {
        (0..self.height).flat_map(|r| (0..self.width).map(move |c| self.centre(r, c))).collect()
    }
}

/// Index of the nearest centre along one axis; the lower index wins ties.
fn nearest_axis(q: f64, n: usize) -> usize {
    let q = q.clamp(-1.0, 1.0);
    let u = (q + 1.0) / 2.0 * n as f64 - 0.5;
    let lo = (u.floor().max(0.0) as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    if (q - centre(hi, n)).abs() < (q - centre(lo, n)).abs() {
        hi
    } else {
        lo
    }
}

/// Nearest grid cell to each query: returns the flat cell index and the cell centre.
///
/// On a regular grid the Euclidean nearest cell is the per-axis nearest one, and
/// the per-axis lower-index tie rule gives the smallest `(row, col)` overall.
pub fn nearest_interp(grid: &CoordGrid, queries: &[(f64, f64)]) -> Vec<(usize, (f64, f64))> {
    queries
        .iter()
        .map(|&(qy, qx)| {
            let (r, c) = (nearest_axis(qy, grid.height), nearest_axis(qx, grid.width));
            (r * grid.width + c, grid.centre(r, c))
        })
        .collect()
}

/// Two-layer coordinate MLP `D(ĥ, c − ĉ)` for one decoder level.
pub fn init_inr_head<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, c_in: usize, hidden: usize, c_out: usize) {
    init_linear(ps, rng, &format!("{name}.l1"), c_in + 2, hidden, 2f64.sqrt());
    init_linear(ps, rng, &format!("{name}.l2"), hidden, c_out, 1.0);
}

/// Evaluates the head at every centre of `fine`, reading the nearest cell of the
/// coarse map `h_next: (C, hc, wc)`. Output is `(C_out, fine.height, fine.width)`.
pub fn inr_upsample(s: &mut Session, name: &str, h_next: Var, fine: CoordGrid) -> Result<Var> {
    let sh = s.shape(h_next).to_vec();
    if sh.len() != 3 {
        return Err(Error::Shape(format!("inr_upsample needs (C,H,W), got {sh:?}")));
    }
    let (c, hc, wc) = (sh[0], sh[1], sh[2]);
    if fine.height < hc || fine.width < wc {
        return contract(format!("target grid {}x{} is coarser than source {hc}x{wc}", fine.height, fine.width));
    }
    let coarse = CoordGrid::new(hc, wc)?;
    let queries = fine.coords();
    let hits = nearest_interp(&coarse, &queries);
    let n = queries.len();
    let mut offsets = vec![0.0; 2 * n];
    for (j, ((qy, qx), (_, (cy, cx)))) in queries.iter().zip(&hits).enumerate() {
        offsets[j] = qy - cy;
        offsets[n + j] = qx - cx;
    }
    let flat = s.reshape(h_next, &[c, hc * wc])?;
    let h_hat = s.gather(flat, hits.iter().map(|h| h.0).collect())?;
    let off = s.constant(&[2, n], offsets)?;
    let x = s.concat(&[h_hat, off])?;
    let hid = linear(s, &format!("{name}.l1"), x)?;
    let hid = s.relu(hid);
    let out = linear(s, &format!("{name}.l2"), hid)?;
    let c_out = s.shape(out)[0];
    s.reshape(out, &[c_out, fine.height, fine.width])
}

/// Cross-attention (queries from `u`, keys/values from `f`) followed by a
/// residual MLP with hidden width `2·c_u`.
pub fn init_fusion<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, c_u: usize, c_f: usize) {
    init_linear(ps, rng, &format!("{name}.q"), c_u, c_u, 1.0);
    init_linear(ps, rng, &format!("{name}.k"), c_f, c_u, 1.0);
    init_linear(ps, rng, &format!("{name}.v"), c_f, c_u, 1.0);
    init_linear(ps, rng, &format!("{name}.mlp1"), c_u, 2 * c_u, 2f64.sqrt());
    init_linear(ps, rng, &format!("{name}.mlp2"), 2 * c_u, c_u, 1.0);
}

fn aligned(s: &Session, u: Var, f: Var) -> Result<(usize, usize, usize, usize)> {
    let (su, sf) = (s.shape(u), s.shape(f));
    if su.len() != 3 || sf.len() != 3 || su[1..] != sf[1..] {
        return contract(format!("fusion inputs are not spatially aligned: u {su:?}, f {sf:?}"));
    }
    Ok((su[0], sf[0], su[1], su[2]))
}

/// Returns the fused map (shape of `u`) and the `(N, N)` attention weights, one row per query.
pub fn attention_fuse(s: &mut Session, name: &str, u: Var, f: Var) -> Result<(Var, Var)> {
    let (c, cf, h, w) = aligned(s, u, f)?;
    let n = h * w;
    let uf = s.reshape(u, &[c, n])?;
    let ff = s.reshape(f, &[cf, n])?;
    let q = linear(s, &format!("{name}.q"), uf)?;
    let k = linear(s, &format!("{name}.k"), ff)?;
    let v = linear(s, &format!("{name}.v"), ff)?;
    let qt = s.transpose(q)?;
    let scores = s.matmul(qt, k)?;
    let scores = s.scale(scores, 1.0 / (c as f64).sqrt());
    let attn = s.softmax_rows(scores)?;
    let at = s.transpose(attn)?;
    let mixed = s.matmul(v, at)?;
    let y = s.add(uf, mixed)?;
    let hid = linear(s, &format!("{name}.mlp1"), y)?;
    let hid = s.relu(hid);
    let m = linear(s, &format!("{name}.mlp2"), hid)?;
    let z = s.add(y, m)?;
    Ok((s.reshape(z, &[c, h, w])?, attn))
}

/// Pass-through used when attention is switched off: channel concatenation and a 1×1 conv.
pub fn init_concat_fusion<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, c_u: usize, c_f: usize) {
    init_conv(ps, rng, &format!("{name}.mix"), c_u + c_f, c_u, 1);
}

pub fn concat_fuse(s: &mut Session, name: &str, u: Var, f: Var) -> Result<Var> {
    aligned(s, u, f)?;
    let x = s.concat(&[u, f])?;
    conv(s, &format!("{name}.mix"), x, 1)
}
