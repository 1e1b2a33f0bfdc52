//! Central finite differences against tape gradients.

use iidm::diffusion::{DenoiseNet, NetConfig};
use iidm::inr::{attention_fuse, concat_fuse, init_concat_fusion, init_fusion, init_inr_head, inr_upsample, CoordGrid};
use iidm::numerics::nn::l1_loss;
use iidm::numerics::{normal_vec, ParamSet, SeedStream, Session, Tensor, Var};
use iidm::Result;
use rand::Rng;

const H: f64 = 1e-6;

/// `sum(out ⊙ R)` for a fixed Gaussian `R`, so every output element carries weight.
pub fn project(s: &mut Session, out: Var, seed: u64) -> Result<Var> {
    let n = s.value(out).len();
    let r = normal_vec(&mut SeedStream::new(seed).rng("projection"), n);
    let shape = s.shape(out).to_vec();
    let r = s.constant(&shape, r)?;
    let p = s.mul(out, r)?;
    Ok(s.sum(p))
}

fn loss_of(ps: &ParamSet, f: &impl Fn(&mut Session) -> Result<Var>) -> f64 {
    let mut s = Session::new(&[ps]);
    let l = f(&mut s).unwrap();
    s.scalar_value(l)
}

/// Worst `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` over the trainable tensors of `ps`, comparing the
/// tape gradient `g` with the central difference `ĝ`. A tensor whose exact gradient
/// vanishes, such as the attention key bias (softmax ignores a per-row shift), has no
/// relative error; it passes when `‖g‖ < 1e-12` and `ĝ` is at roundoff level, `< 1e-7`. At most `probe` coordinates per
/// tensor are differenced (all of them when the tensor is smaller).
pub fn worst_rel_err(ps: &ParamSet, probe: usize, seed: u64, f: impl Fn(&mut Session) -> Result<Var>) -> f64 {
    let mut s = Session::new(&[ps]);
    let l = f(&mut s).unwrap();
    let (_, grads) = s.backward(l).unwrap();
    let mut rng = SeedStream::new(seed).rng("probe");
    let mut work = ps.clone();
    let mut worst: f64 = 0.0;
    for (name, t) in ps.iter().filter(|(_, t)| t.requires_grad) {
        let g = &grads[name];
        let idx: Vec<usize> = if t.len() <= probe { (0..t.len()).collect() } else { (0..probe).map(|_| rng.random_range(0..t.len())).collect() };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for i in idx {
            let orig = t.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + H;
            let up = loss_of(&work, &f);
            work.get_mut(name).unwrap().data_mut()[i] = orig - H;
            let dn = loss_of(&work, &f);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let num = (up - dn) / (2.0 * H);
            diff += (g[i] - num).powi(2);
            na += g[i] * g[i];
            nn += num * num;
        }
        let (na, nn) = (na.sqrt(), nn.sqrt());
        let rel = if na < 1e-12 && nn < 1e-7 { 0.0 } else { diff.sqrt() / na.max(nn) };
        worst = worst.max(rel);
    }
    worst
}

fn input(ps: &mut ParamSet, rng: &mut impl Rng, name: &str, shape: &[usize]) {
    let n = shape.iter().product();
    ps.insert(name, Tensor::new(shape, normal_vec(rng, n)).unwrap().with_grad());
}

/// 3×3 convolutions at stride 1 and 2 plus a 1×1 conv, on an odd-sized input.
pub fn conv_case(seed: u64) -> f64 {
    let mut rng = SeedStream::new(seed).rng("conv");
    let mut ps = ParamSet::new();
    input(&mut ps, &mut rng, "x", &[3, 7, 6]);
    input(&mut ps, &mut rng, "w3", &[4, 3, 3, 3]);
    input(&mut ps, &mut rng, "b3", &[4]);
    input(&mut ps, &mut rng, "w1", &[2, 4, 1, 1]);
    worst_rel_err(&ps, 64, seed, |s| {
        let (x, w3, b3, w1) = (s.param("x")?, s.param("w3")?, s.param("b3")?, s.param("w1")?);
        let a = s.conv2d(x, w3, Some(b3), 1)?;
        let b = s.conv2d(x, w3, None, 2)?;
        let c = s.conv2d(a, w1, None, 1)?;
        let pa = project(s, b, seed ^ 1)?;
        let pc = project(s, c, seed)?;
        s.add(pa, pc)
    })
}

/// Cross-attention fusion, including its residual MLP, and the concatenation fallback.
pub fn attention_case(seed: u64) -> f64 {
    let streams = SeedStream::new(seed);
    let mut rng = streams.rng("attention");
    let mut ps = ParamSet::new();
    init_fusion(&mut ps, &mut rng, "fuse", 4, 5);
    init_concat_fusion(&mut ps, &mut rng, "cat", 4, 5);
    for (_, t) in ps.iter_mut() {
        // non-zero biases so their gradients are exercised away from zero
        if t.shape().len() == 1 {
            t.data_mut().iter_mut().for_each(|b| *b = 0.3);
        }
    }
    input(&mut ps, &mut rng, "u", &[4, 3, 3]);
    input(&mut ps, &mut rng, "f", &[5, 3, 3]);
    worst_rel_err(&ps, 48, seed, |s| {
        let (u, f) = (s.param("u")?, s.param("f")?);
        let (z, _) = attention_fuse(s, "fuse", u, f)?;
        let c = concat_fuse(s, "cat", u, f)?;
        let pz = project(s, z, seed)?;
        let pc = project(s, c, seed ^ 7)?;
        s.add(pz, pc)
    })
}

/// Coordinate-MLP upsampling from a 2×3 map to a 4×6 grid.
pub fn inr_case(seed: u64) -> f64 {
    let mut rng = SeedStream::new(seed).rng("inr");
    let mut ps = ParamSet::new();
    init_inr_head(&mut ps, &mut rng, "head", 3, 6, 2);
    input(&mut ps, &mut rng, "h", &[3, 2, 3]);
    worst_rel_err(&ps, 48, seed, |s| {
        let h = s.param("h")?;
        let out = inr_upsample(s, "head", h, CoordGrid::new(4, 6)?)?;
        project(s, out, seed)
    })
}

/// Mean absolute deviation with both arguments trainable.
pub fn l1_case(seed: u64) -> f64 {
    let mut rng = SeedStream::new(seed).rng("l1");
    let mut ps = ParamSet::new();
    input(&mut ps, &mut rng, "x", &[2, 5, 5]);
    input(&mut ps, &mut rng, "g", &[2, 5, 5]);
    worst_rel_err(&ps, 64, seed, |s| {
        let (x, g) = (s.param("x")?, s.param("g")?);
        l1_loss(s, x, g)
    })
}

/// Remaining tape operations in one graph: matmul, transpose, softmax, pooling,
/// upsampling, gather, slicing, concatenation, bias, scaling, squares and means.
pub fn tape_ops_case(seed: u64) -> f64 {
    let mut rng = SeedStream::new(seed).rng("ops");
    let mut ps = ParamSet::new();
    input(&mut ps, &mut rng, "a", &[3, 4]);
    input(&mut ps, &mut rng, "b", &[4, 5]);
    input(&mut ps, &mut rng, "m", &[2, 4, 6]);
    input(&mut ps, &mut rng, "bias", &[2]);
    worst_rel_err(&ps, 64, seed, |s| {
        let (a, b, m, bias) = (s.param("a")?, s.param("b")?, s.param("m")?, s.param("bias")?);
        let ab = s.matmul(a, b)?;
        let abt = s.transpose(ab)?;
        let sm = s.softmax_rows(abt)?;
        let p1 = project(s, sm, seed)?;
        let pooled = s.max_pool2(m)?;
        let up = s.upsample_nearest2(pooled)?;
        let mb = s.add_bias(m, bias)?;
        let mixed = s.sub(up, mb)?;
        let sq = s.square(mixed);
        let sl = s.slice(sq, 1, 1)?;
        let flat = s.reshape(m, &[2, 24])?;
        let g = s.gather(flat, vec![0, 5, 5, 23, 11])?;
        let g = s.reshape(g, &[10])?;
        let sc = s.scale(g, -0.7);
        let sc = s.add_scalar(sc, 0.2);
        let sc = s.reshape(sc, &[1, 2, 5])?;
        let cat = s.concat(&[sc, sc])?;
        let p2 = project(s, cat, seed ^ 3)?;
        let p3 = s.mean(sl);
        let t = s.add(p1, p2)?;
        s.add(t, p3)
    })
}

/// The whole conditional U-Net (both fusion kinds), differenced on a sample of
/// coordinates per parameter tensor.
pub fn denoiser_case(seed: u64, attention: bool) -> f64 {
    let streams = SeedStream::new(seed);
    let cfg = NetConfig { mask_channel: true, attention, time_dim: 4, ..NetConfig::new(&[3, 4], 2) };
    let net = DenoiseNet::new(cfg, &mut streams.rng("init")).unwrap();
    let mut ps = net.params.clone();
    let mut rng = streams.rng("inputs");
    // zero biases put dead-relu outputs exactly on the kink
    for (_, t) in ps.iter_mut().filter(|(_, t)| t.shape().len() == 1) {
        let n = t.len();
        t.data_mut().copy_from_slice(&normal_vec(&mut rng, n).iter().map(|v| 0.1 * v).collect::<Vec<_>>());
    }
    input(&mut ps, &mut rng, "y", &[1, 4, 4]);
    input(&mut ps, &mut rng, "f0", &[2, 4, 4]);
    let mask = Tensor::new(&[1, 4, 4], (0..16).map(|i| (i % 3 != 0) as u8 as f64).collect()).unwrap();
    let net = DenoiseNet { params: ParamSet::new(), ..net };
    worst_rel_err(&ps, 6, seed, |s| {
        let (y, f0) = (s.param("y")?, s.param("f0")?);
        let mk = s.constant(&[1, 4, 4], mask.data().to_vec())?;
        let out = net.forward(s, y, f0, Some(mk), 17)?;
        project(s, out, seed)
    })
}
