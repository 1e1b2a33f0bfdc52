//! Training the noise predictor and running the conditioned reverse chain.

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::numerics::nn::l1_loss;
use crate::numerics::{normal_vec, Adam, SeedStream, Session, Tensor, Var};

use super::net::{crop, pad_replicate, round_up, DenoiseNet};
use super::schedule::{forward_jump, reverse_chain, VarianceSchedule};

/// One training scene: the target already scaled to `[−1, 1]`, its conditional
/// features and its forest mask (1 = forest).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub target: Tensor,
    pub f0: Tensor,
    pub mask: Tensor,
}

impl TrainSample {
    pub fn new(target: Tensor, f0: Tensor, mask: Tensor) -> Result<Self> {
        let (h, w) = match target.shape() {
            [1, h, w] => (*h, *w),
            s => return Err(Error::Shape(format!("target must be (1, H, W), got {s:?}"))),
        };
        if f0.shape().len() != 3 || f0.shape()[1..] != [h, w] {
            return Err(Error::Shape(format!("f0 {:?} does not match target {h}x{w}", f0.shape())));
        }
        if mask.shape() != [1, h, w] {
            return Err(Error::Shape(format!("mask {:?} does not match target {h}x{w}", mask.shape())));
        }
        Ok(Self { target, f0, mask })
    }

    fn dims(&self) -> (usize, usize) {
        (self.target.shape()[1], self.target.shape()[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOpts {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Side of the random square crops; `None` trains on whole scenes.
    pub crop: Option<usize>,
    /// Random horizontal and vertical flips.
    pub flips: bool,
    /// Restrict the loss to forest pixels.
    pub masked_loss: bool,
    /// Global gradient-norm clip.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainOpts {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 4, lr: 2e-3, crop: Some(16), flips: true, masked_loss: false, clip: Some(1.0), seed: 0 }
    }
}

fn flip(x: &Tensor, rows: bool, cols: bool) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for ch in 0..c {
        for r in 0..h {
            let rr = if rows { h - 1 - r } else { r };
            for col in 0..w {
                let cc = if cols { w - 1 - col } else { col };
                out.push(d[ch * h * w + rr * w + cc]);
            }
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

struct View {
    target: Tensor,
    f0: Tensor,
    mask: Tensor,
}

fn draw_view<R: Rng>(sample: &TrainSample, opts: &TrainOpts, m: usize, rng: &mut R) -> Result<View> {
    let (h, w) = sample.dims();
    let (mut target, mut f0, mut mask) = match opts.crop {
        Some(side) => {
            if side > h || side > w || side % m != 0 {
                return contract(format!("crop {side} must fit {h}x{w} and be a multiple of {m}"));
            }
            let top = rng.random_range(0..=h - side);
            let left = rng.random_range(0..=w - side);
            (
                crop(&sample.target, top, left, side, side)?,
                crop(&sample.f0, top, left, side, side)?,
                crop(&sample.mask, top, left, side, side)?,
            )
        }
        None => {
            let (h2, w2) = (round_up(h, m), round_up(w, m));
            (pad_replicate(&sample.target, h2, w2)?, pad_replicate(&sample.f0, h2, w2)?, pad_replicate(&sample.mask, h2, w2)?)
        }
    };
    if opts.flips {
        let (fr, fc) = (rng.random_bool(0.5), rng.random_bool(0.5));
        target = flip(&target, fr, fc);
        f0 = flip(&f0, fr, fc);
        mask = flip(&mask, fr, fc);
    }
    Ok(View { target, f0, mask })
}

/// L1 between the true and predicted noise, over every pixel or over mask pixels only.
fn noise_loss(s: &mut Session, eps: Var, pred: Var, mask: Option<&Tensor>) -> Result<Option<Var>> {
    let Some(m) = mask else {
        return l1_loss(s, pred, eps).map(Some);
    };
    let count: f64 = m.data().iter().sum();
    if count == 0.0 {
        return Ok(None);
    }
    let mv = s.leaf(m);
    let d = s.sub(pred, eps)?;
    let a = s.abs(d);
    let a = s.mul(a, mv)?;
    let total = s.sum(a);
    Ok(Some(s.scale(total, 1.0 / count)))
}

/// Trains the noise predictor with the L1 objective on `(y_t, f⁰, t)` triples.
/// Returns the mean batch loss at every step.
pub fn train_iidm(net: &mut DenoiseNet, sched: &VarianceSchedule, data: &[TrainSample], opts: &TrainOpts) -> Result<Vec<f64>> {
    if data.is_empty() {
        return contract("training needs at least one scene");
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0) {
        return contract("batch size and learning rate must be positive");
    }
    if let Some(bad) = data.iter().find(|d| d.f0.shape()[0] != net.cfg.cond_channels) {
        return Err(Error::Shape(format!("f0 has {} channels, network expects {}", bad.f0.shape()[0], net.cfg.cond_channels)));
    }
    let streams = SeedStream::new(opts.seed);
    let mut rng = streams.rng("train.batches");
    let mut noise_rng = streams.rng("train.noise");
    let m = net.cfg.multiple();
    let mut opt = Adam::new(opts.lr);
    net.params.set_trainable("", true);
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let mut s = Session::new(&[&net.params]);
        let mut total: Option<Var> = None;
        let mut used = 0usize;
        for _ in 0..opts.batch_size {
            let k = rng.random_range(0..data.len());
            let view = draw_view(&data[k], opts, m, &mut rng)?;
            let t = rng.random_range(1..=sched.steps());
            let eps = Tensor::new(view.target.shape(), normal_vec(&mut noise_rng, view.target.len()))?;
            let y_t = forward_jump(&view.target, t, sched, &eps)?;
            let yv = s.leaf(&y_t);
            let fv = s.leaf(&view.f0);
            let mv = s.leaf(&view.mask);
            let mask_in = net.cfg.mask_channel.then_some(mv);
            let pred = net.forward(&mut s, yv, fv, mask_in, t)?;
            let ev = s.leaf(&eps);
            if let Some(l) = noise_loss(&mut s, ev, pred, opts.masked_loss.then_some(&view.mask))? {
                used += 1;
                total = Some(match total {
                    None => l,
                    Some(acc) => s.add(acc, l)?,
                });
            }
        }
        let Some(total) = total else {
            curve.push(0.0);
            continue;
        };
        let total = s.scale(total, 1.0 / used as f64);
        let (loss, mut grads) = s.backward(total)?;
        let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged { step, lr: opts.lr, grad_norm: norm });
        }
        if let Some(clip) = opts.clip {
            if norm > clip {
                let f = clip / norm;
                grads.values_mut().flatten().for_each(|g| *g *= f);
            }
        }
        net.params.accumulate_grads(grads)?;
        opt.step(&mut net.params)?;
        curve.push(loss);
    }
    net.params.set_trainable("", false);
    Ok(curve)
}

/// The noise consistent with `clip(x̂₀, −1, 1)`, where `x̂₀ = (y − √(1−ᾱ_t)·ε̂)/√ᾱ_t`.
/// Unchanged wherever `x̂₀` is already in range.
pub fn range_consistent_noise(y: &Tensor, eps: &Tensor, t: usize, sched: &VarianceSchedule) -> Result<Tensor> {
    if y.shape() != eps.shape() {
        return Err(Error::Shape(format!("noise prediction {:?} for state {:?}", eps.shape(), y.shape())));
    }
    let ab = sched.alpha_bar(t);
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let v = y
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&y, &e)| {
            let x0 = (y - sb * e) / sa;
            if (-1.0..=1.0).contains(&x0) {
                e
            } else {
                (y - sa * x0.clamp(-1.0, 1.0)) / sb
            }
        })
        .collect();
    Tensor::new(y.shape(), v)
}

/// Runs the reverse chain from pure noise conditioned on `f0`, returning `(1, H, W)` in
/// the scaled target space, clipped to `[−1, 1]`. At every step the network's noise
/// is replaced by [`range_consistent_noise`], which keeps the implied clean target in
/// range. Inputs are edge-padded to the network's multiple and the result is cropped
/// back.
pub fn sample(net: &DenoiseNet, sched: &VarianceSchedule, f0: &Tensor, mask: Option<&Tensor>, seed: u64) -> Result<Tensor> {
    let (h, w) = match f0.shape() {
        [_, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("f0 must be (C, H, W), got {s:?}"))),
    };
    let m = net.cfg.multiple();
    let (h2, w2) = (round_up(h, m), round_up(w, m));
    let f0p = pad_replicate(f0, h2, w2)?;
    let maskp = match mask {
        Some(mk) => Some(pad_replicate(mk, h2, w2)?),
        None if net.cfg.mask_channel => return contract("this network needs a mask"),
        None => None,
    };
    let mut rng = SeedStream::new(seed).rng("sample.chain");
    let y_t = Tensor::new(&[1, h2, w2], normal_vec(&mut rng, h2 * w2))?;
    let model = |y: &Tensor, t: usize| {
        let eps = net.predict(y, &f0p, maskp.as_ref().filter(|_| net.cfg.mask_channel), t)?;
        range_consistent_noise(y, &eps, t, sched)
    };
    let y0 = reverse_chain(y_t, &model, sched, &mut rng)?;
    let y0 = crop(&y0, 0, 0, h, w)?;
    let clipped = y0.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    Tensor::new(&[1, h, w], clipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::net::NetConfig;
    use crate::diffusion::schedule::make_schedule;

    fn toy_sample() -> TrainSample {
        let (h, w) = (8, 8);
        let target: Vec<f64> = (0..h * w).map(|i| ((i % w) as f64 / w as f64) * 2.0 - 1.0).collect();
        let f0: Vec<f64> = target.iter().map(|v| v * 0.5).collect();
        TrainSample::new(
            Tensor::new(&[1, h, w], target).unwrap(),
            Tensor::new(&[1, h, w], f0).unwrap(),
            Tensor::new(&[1, h, w], vec![1.0; h * w]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn flips_are_involutions() {
        let x = Tensor::new(&[1, 2, 3], (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(flip(&flip(&x, true, true), true, true), x);
        assert_eq!(flip(&x, false, true).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
    }

    #[test]
    fn empty_mask_contributes_nothing() {
        let mut s = Session::new(&[]);
        let a = s.leaf(&Tensor::zeros(&[1, 2, 2]));
        let b = s.leaf(&Tensor::zeros(&[1, 2, 2]));
        assert!(noise_loss(&mut s, a, b, Some(&Tensor::zeros(&[1, 2, 2]))).unwrap().is_none());
    }

    #[test]
    fn training_is_deterministic() {
        let sched = make_schedule(10, 1e-3, 0.2).unwrap();
        let data = vec![toy_sample()];
        let cfg = NetConfig::new(&[4, 8], 1);
        let opts = TrainOpts { steps: 5, batch_size: 2, crop: Some(4), seed: 3, ..Default::default() };
        let run = || {
            let mut net = DenoiseNet::new(cfg.clone(), &mut SeedStream::new(1).rng("init")).unwrap();
            let curve = train_iidm(&mut net, &sched, &data, &opts).unwrap();
            (curve, net.params)
        };
        let (c1, p1) = run();
        let (c2, p2) = run();
        assert_eq!(c1, c2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn range_consistent_noise_clips_the_implied_target() {
        let sched = make_schedule(4, 0.1, 0.4).unwrap();
        let t = 3;
        let ab = sched.alpha_bar(t);
        let y = Tensor::new(&[3], vec![0.2, 3.0, -3.0]).unwrap();
        let eps = Tensor::new(&[3], vec![0.1, -0.5, 0.5]).unwrap();
        let out = range_consistent_noise(&y, &eps, t, &sched).unwrap();
        assert_eq!(out.data()[0], 0.1);
        for (i, want) in [(1, 1.0), (2, -1.0)] {
            let x0 = (y.data()[i] - (1.0 - ab).sqrt() * out.data()[i]) / ab.sqrt();
            assert!((x0 - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_respects_shape_and_seed() {
        let sched = make_schedule(5, 1e-3, 0.2).unwrap();
        let net = DenoiseNet::new(NetConfig::new(&[4, 8], 1), &mut SeedStream::new(1).rng("init")).unwrap();
        let f0 = Tensor::zeros(&[1, 7, 5]);
        let a = sample(&net, &sched, &f0, None, 9).unwrap();
        let b = sample(&net, &sched, &f0, None, 9).unwrap();
        assert_eq!(a.shape(), &[1, 7, 5]);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
