//! The conditional denoising U-Net.
//!
//! Input is `[y_t ; f⁰ ; mask?]`. Encoder level `l` runs at `1/2^l` resolution with
//! `widths[l]` channels. The conditional pyramid `f⁽ˡ⁾ = Conv(f⁽ˡ⁻¹⁾)` is fused
//! into the U-Net at every level below full resolution, by cross-attention + MLP
//! or by the concat pass-through. Decoder upsampling uses one coordinate MLP per
//! level.

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::inr::{attention_fuse, concat_fuse, init_concat_fusion, init_fusion, init_inr_head, inr_upsample, CoordGrid};
use crate::numerics::nn::{conv, conv_relu, init_conv, init_linear, linear};
use crate::numerics::{ParamSet, Session, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// Channels per U-Net level, finest first; at least two levels.
    pub widths: Vec<usize>,
    /// Channels of `f⁰`.
    pub cond_channels: usize,
    /// Feed the forest mask as an extra input channel.
    pub mask_channel: bool,
    /// Cross-attention + MLP fusion; otherwise concat + 1×1 conv.
    pub attention: bool,
    pub time_dim: usize,
}

impl NetConfig {
    pub fn new(widths: &[usize], cond_channels: usize) -> Self {
        Self { widths: widths.to_vec(), cond_channels, mask_channel: false, attention: true, time_dim: 16 }
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    /// Spatial sizes must be multiples of this.
    pub fn multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return contract(format!("need at least two positive U-Net widths, got {:?}", self.widths));
        }
        if self.cond_channels == 0 {
            return contract("conditional features need at least one channel");
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return contract(format!("time embedding size must be even and positive, got {}", self.time_dim));
        }
        Ok(())
    }
}

/// Sinusoidal embedding of the timestep, `time_dim/2` sine and cosine pairs.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).sin());
    }
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out.push((t as f64 * freq).cos());
    }
    out
}

/// Stride-2 conv + relu layers `cond1 .. cond{levels}` from `c0` channels.
pub fn init_cond<R: Rng>(ps: &mut ParamSet, rng: &mut R, c0: usize, widths: &[usize]) {
    let mut cin = c0;
    for (i, &w) in widths.iter().enumerate() {
        init_conv(ps, rng, &format!("cond{}", i + 1), cin, w, 3);
        cin = w;
    }
}

/// `{f⁰, f⁽¹⁾, …, f⁽ᴸ⁾}` with `f⁽ⁱ⁾ = relu(Conv_stride2(f⁽ⁱ⁻¹⁾))`. Odd sizes round up.
pub fn cond_features(s: &mut Session, f0: Var, levels: usize) -> Result<Vec<Var>> {
    let mut out = vec![f0];
    for i in 1..=levels {
        let prev = out[i - 1];
        out.push(conv_relu(s, &format!("cond{i}"), prev, 2)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct DenoiseNet {
    pub cfg: NetConfig,
    pub params: ParamSet,
}

impl DenoiseNet {
    pub fn new<R: Rng>(cfg: NetConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let w = &cfg.widths;
        let l = w.len();
        let mut ps = ParamSet::new();
        let hidden = 2 * cfg.time_dim;
        init_linear(&mut ps, rng, "time.l1", cfg.time_dim, hidden, 2f64.sqrt());
        let c_in = 1 + cfg.cond_channels + cfg.mask_channel as usize;
        init_conv(&mut ps, rng, "in", c_in, w[0], 3);
        for i in 0..l {
            if i > 0 {
                init_conv(&mut ps, rng, &format!("down{i}"), w[i - 1], w[i], 3);
            }
            init_conv(&mut ps, rng, &format!("enc{i}.c1"), w[i], w[i], 3);
            init_linear(&mut ps, rng, &format!("time.enc{i}"), hidden, w[i], 1.0);
            init_conv(&mut ps, rng, &format!("enc{i}.c2"), w[i], w[i], 3);
        }
        init_cond(&mut ps, rng, cfg.cond_channels, &w[1..]);
        for i in 1..l {
            if cfg.attention {
                init_fusion(&mut ps, rng, &format!("fuse{i}"), w[i], w[i]);
            } else {
                init_concat_fusion(&mut ps, rng, &format!("fuse{i}"), w[i], w[i]);
            }
        }
        for i in (0..l - 1).rev() {
            init_inr_head(&mut ps, rng, &format!("inr{i}"), w[i + 1], 2 * w[i], w[i]);
            init_conv(&mut ps, rng, &format!("dec{i}.c1"), 2 * w[i], w[i], 3);
            init_linear(&mut ps, rng, &format!("time.dec{i}"), hidden, w[i], 1.0);
            init_conv(&mut ps, rng, &format!("dec{i}.c2"), w[i], w[i], 3);
        }
        init_conv(&mut ps, rng, "out", w[0], 1, 3);
        Ok(Self { cfg, params: ps })
    }

    pub fn from_params(cfg: NetConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, params })
    }

    fn fuse(&self, s: &mut Session, level: usize, u: Var, f: Var) -> Result<Var> {
        let name = format!("fuse{level}");
        if self.cfg.attention {
            Ok(attention_fuse(s, &name, u, f)?.0)
        } else {
            concat_fuse(s, &name, u, f)
        }
    }

    fn time_bias(s: &mut Session, name: &str, te: Var, x: Var) -> Result<Var> {
        let b = linear(s, name, te)?;
        let c = s.shape(b)[0];
        let b = s.reshape(b, &[c])?;
        s.add_bias(x, b)
    }

    /// Predicted noise `(1, H, W)` for `y: (1, H, W)`, `f0: (C_f, H, W)` and an optional
    /// `(1, H, W)` mask. `H` and `W` must be multiples of [`NetConfig::multiple`].
    pub fn forward(&self, s: &mut Session, y: Var, f0: Var, mask: Option<Var>, t: usize) -> Result<Var> {
        let ys = s.shape(y).to_vec();
        let (h, w) = match ys.as_slice() {
            [1, h, w] => (*h, *w),
            _ => return Err(Error::Shape(format!("y_t must be (1, H, W), got {ys:?}"))),
        };
        let m = self.cfg.multiple();
        if h % m != 0 || w % m != 0 {
            return contract(format!("input {h}x{w} is not a multiple of {m}; pad it first"));
        }
        let fs = s.shape(f0).to_vec();
        if fs != [self.cfg.cond_channels, h, w] {
            return Err(Error::Shape(format!("f0 must be ({}, {h}, {w}), got {fs:?}", self.cfg.cond_channels)));
        }
        let mut parts = vec![y, f0];
        match (mask, self.cfg.mask_channel) {
            (Some(mk), true) => {
                if s.shape(mk) != [1, h, w] {
                    return Err(Error::Shape(format!("mask must be (1, {h}, {w}), got {:?}", s.shape(mk))));
                }
                parts.push(mk);
            }
            (None, true) => return contract("this network expects a mask channel"),
            _ => {}
        }
        let l = self.cfg.levels();
        let te = s.constant(&[self.cfg.time_dim, 1], time_embedding(t, self.cfg.time_dim))?;
        let te = linear(s, "time.l1", te)?;
        let te = s.relu(te);

        let cond = cond_features(s, f0, l - 1)?;
        let x = s.concat(&parts)?;
        let mut hcur = conv_relu(s, "in", x, 1)?;
        let mut skips = Vec::with_capacity(l);
        for i in 0..l {
            if i > 0 {
                hcur = conv_relu(s, &format!("down{i}"), hcur, 2)?;
            }
            hcur = conv_relu(s, &format!("enc{i}.c1"), hcur, 1)?;
            hcur = Self::time_bias(s, &format!("time.enc{i}"), te, hcur)?;
            hcur = conv_relu(s, &format!("enc{i}.c2"), hcur, 1)?;
            skips.push(hcur);
        }
        hcur = self.fuse(s, l - 1, hcur, cond[l - 1])?;
        for i in (0..l - 1).rev() {
            let grid = CoordGrid::new(h >> i, w >> i)?;
            let up = inr_upsample(s, &format!("inr{i}"), hcur, grid)?;
            let x = s.concat(&[up, skips[i]])?;
            hcur = conv_relu(s, &format!("dec{i}.c1"), x, 1)?;
            hcur = Self::time_bias(s, &format!("time.dec{i}"), te, hcur)?;
            hcur = conv_relu(s, &format!("dec{i}.c2"), hcur, 1)?;
            if i > 0 {
                hcur = self.fuse(s, i, hcur, cond[i])?;
            }
        }
        conv(s, "out", hcur, 1)
    }

    /// Forward pass on plain tensors.
    pub fn predict(&self, y: &Tensor, f0: &Tensor, mask: Option<&Tensor>, t: usize) -> Result<Tensor> {
        let mut s = Session::new(&[&self.params]);
        let yv = s.leaf(y);
        let fv = s.leaf(f0);
        let mv = mask.map(|m| s.leaf(m));
        let out = self.forward(&mut s, yv, fv, mv, t)?;
        Ok(s.to_tensor(out))
    }
}

/// Edge-replicates `(C, H, W)` up to `(C, H', W')`.
pub fn pad_replicate(x: &Tensor, h2: usize, w2: usize) -> Result<Tensor> {
    let (c, h, w) = match x.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::Shape(format!("expected (C, H, W), got {s:?}"))),
    };
    if h2 < h || w2 < w {
        return contract(format!("cannot pad {h}x{w} down to {h2}x{w2}"));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(c * h2 * w2);
    for ch in 0..c {
        for r in 0..h2 {
            let rr = r.min(h - 1);
            for col in 0..w2 {
                out.push(d[ch * h * w + rr * w + col.min(w - 1)]);
            }
        }
    }
    Tensor::new(&[c, h2, w2], out)
}

/// Top-left `(C, h, w)` window of a `(C, H, W)` tensor.
pub fn crop(x: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    let (c, hh, ww) = match x.shape() {
        [c, hh, ww] => (*c, *hh, *ww),
        s => return Err(Error::Shape(format!("expected (C, H, W), got {s:?}"))),
    };
    if top + h > hh || left + w > ww {
        return contract(format!("crop {h}x{w} at ({top}, {left}) exceeds {hh}x{ww}"));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for r in top..top + h {
            out.extend_from_slice(&d[ch * hh * ww + r * ww + left..ch * hh * ww + r * ww + left + w]);
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Smallest multiple of `m` that is at least `n`.
pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedStream;

    #[test]
    fn output_matches_input_shape() {
        let mut rng = SeedStream::new(2).rng("net");
        for attention in [true, false] {
            let cfg = NetConfig { mask_channel: true, attention, ..NetConfig::new(&[4, 6, 8], 3) };
            let net = DenoiseNet::new(cfg, &mut rng).unwrap();
            let y = Tensor::zeros(&[1, 8, 12]);
            let f0 = Tensor::zeros(&[3, 8, 12]);
            let m = Tensor::zeros(&[1, 8, 12]);
            assert_eq!(net.predict(&y, &f0, Some(&m), 3).unwrap().shape(), &[1, 8, 12]);
            assert!(net.predict(&y, &f0, None, 3).is_err());
            let odd = Tensor::zeros(&[1, 6, 12]);
            assert!(net.predict(&odd, &Tensor::zeros(&[3, 6, 12]), Some(&Tensor::zeros(&[1, 6, 12])), 3).is_err());
        }
    }

    #[test]
    fn pyramid_shapes_and_zero_input() {
        let mut ps = ParamSet::new();
        let mut rng = SeedStream::new(3).rng("c");
        init_cond(&mut ps, &mut rng, 2, &[3, 4, 5]);
        let mut s = Session::new(&[&ps]);
        let f0 = s.leaf(&Tensor::zeros(&[2, 32, 32]));
        let p = cond_features(&mut s, f0, 3).unwrap();
        let dims: Vec<_> = p.iter().map(|&v| s.shape(v).to_vec()).collect();
        assert_eq!(dims, vec![vec![2, 32, 32], vec![3, 16, 16], vec![4, 8, 8], vec![5, 4, 4]]);
        assert!(p.iter().all(|&v| s.value(v).iter().all(|&x| x == 0.0)));
        let only = cond_features(&mut s, f0, 0).unwrap();
        assert_eq!(only, vec![f0]);
    }

    #[test]
    fn padding_and_crop_roundtrip() {
        let x = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = pad_replicate(&x, 4, 4).unwrap();
        assert_eq!(&p.data()[..4], &[1.0, 2.0, 3.0, 3.0]);
        assert_eq!(&p.data()[12..], &[4.0, 5.0, 6.0, 6.0]);
        assert_eq!(crop(&p, 0, 0, 2, 3).unwrap(), x);
        assert_eq!(round_up(30, 4), 32);
        assert_eq!(round_up(32, 4), 32);
    }

    #[test]
    fn time_embedding_is_bounded_and_distinct() {
        let a = time_embedding(1, 16);
        let b = time_embedding(2, 16);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
