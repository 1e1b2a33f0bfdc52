//! Blockwise distillation of encoder/decoder pairs, trained in order `N = 1..4`.

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::numerics::nn::sq_dist;
use crate::numerics::{Adam, SeedStream, Session, Tensor, Var};

use super::arch::{SlimCoder, VggEncoder};
use super::pca::{center_features, EigenBasis};

/// Which quantity the student's decentered output is compared against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderTarget {
    /// `‖Wᵀ F̄ᵉ − F̄‖²`: lift the student features back into teacher space.
    #[default]
    Lifted,
    /// `‖F̄ᵉ − W F̄‖²`: project the teacher features into the student space.
    Projected,
}

/// Training images with the teacher's tap features precomputed.
#[derive(Debug, Clone)]
pub struct DistillData {
    pub images: Vec<Tensor>,
    /// `teacher[N−1][k]`: raw `reluN_1` features of image `k`, `(C_N, HW_N)`.
    pub teacher: Vec<Vec<Tensor>>,
    /// Decentered copies of `teacher`.
    pub teacher_centered: Vec<Vec<Tensor>>,
}

impl DistillData {
    pub fn new(teacher: &VggEncoder, images: Vec<Tensor>) -> Result<Self> {
        if images.is_empty() {
            return contract("distillation needs at least one image");
        }
        let mut raw = vec![Vec::with_capacity(images.len()); 4];
        for img in &images {
            for (n, f) in teacher.features(img, 4)?.into_iter().enumerate() {
                raw[n].push(f);
            }
        }
        let centered = raw
            .iter()
            .map(|layer| layer.iter().map(center_features).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images, teacher: raw, teacher_centered: centered })
    }
}

/// Unnormalized loss terms of one image for block pair `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub encoder: f64,
    /// Absent for `N = 1`.
    pub feature: Option<f64>,
    pub image: f64,
    pub perceptual: f64,
}

impl PairLoss {
    pub fn decoder(&self) -> f64 {
        self.feature.unwrap_or(0.0) + self.image + self.perceptual
    }
}

/// `‖Wᵀ F̄ᵉ − F̄‖²` or `‖F̄ᵉ − W F̄‖²` on plain tensors.
pub fn encoder_target_loss(w: &Tensor, fbar_e: &Tensor, fbar: &Tensor, target: EncoderTarget) -> Result<f64> {
    let mut t = crate::numerics::Tape::new();
    let w = t.leaf(w);
    let fe = t.leaf(fbar_e);
    let f = t.leaf(fbar);
    let l = encoder_term(&mut t, w, fe, f, target)?;
    Ok(t.scalar_value(l))
}

fn encoder_term(t: &mut crate::numerics::Tape, w: Var, fe: Var, f: Var, target: EncoderTarget) -> Result<Var> {
    match target {
        EncoderTarget::Lifted => {
            let wt = t.transpose(w)?;
            let lifted = t.matmul(wt, fe)?;
            sq_dist(t, lifted, f)
        }
        EncoderTarget::Projected => {
            let proj = t.matmul(w, f)?;
            sq_dist(t, fe, proj)
        }
    }
}

fn centering_matrix(n: usize) -> Vec<f64> {
    let mut j = vec![-1.0 / n as f64; n * n];
    for i in 0..n {
        j[i * n + i] += 1.0;
    }
    j
}

struct Terms {
    encoder: (Var, usize),
    feature: Option<(Var, usize)>,
    image: (Var, usize),
    perceptual: (Var, usize),
}

fn check_pair(coder: &SlimCoder, n: usize, bases: &[EigenBasis]) -> Result<()> {
    if !(1..=4).contains(&n) {
        return contract(format!("block pair must be in 1..=4, got {n}"));
    }
    if n > coder.trained + 1 {
        return Err(Error::Sequencing(format!(
            "block pair {n} needs pairs 1..{} trained first; {} trained so far",
            n - 1,
            coder.trained
        )));
    }
    let basis = bases.get(n - 1).ok_or_else(|| Error::Contract(format!("no eigenbasis for layer {n}")))?;
    if basis.reduced() != coder.spec.channels[n - 1] {
        return contract(format!(
            "eigenbasis {n} reduces to {} channels but enc_{n} has {}",
            basis.reduced(),
            coder.spec.channels[n - 1]
        ));
    }
    Ok(())
}

fn pair_terms(
    s: &mut Session,
    coder: &SlimCoder,
    teacher: &VggEncoder,
    basis: &EigenBasis,
    data: &DistillData,
    k: usize,
    n: usize,
    target: EncoderTarget,
) -> Result<Terms> {
    let img = &data.images[k];
    let x = s.leaf(img);
    let taps = coder.encode(s, x, n)?;
    let fe = taps[n - 1];
    let fe_shape = s.shape(fe).to_vec();
    let hw = fe_shape[1] * fe_shape[2];
    let fe_flat = s.reshape(fe, &[fe_shape[0], hw])?;
    let j = s.constant(&[hw, hw], centering_matrix(hw))?;
    let fe_bar = s.matmul(fe_flat, j)?;
    let w = s.leaf(&basis.w);
    let fbar = s.leaf(&data.teacher_centered[n - 1][k]);
    if s.shape(fbar)[1] != hw {
        return Err(Error::Shape(format!("teacher layer {n} has {} positions, student {hw}", s.shape(fbar)[1])));
    }
    let enc = encoder_term(s, w, fe_bar, fbar, target)?;
    let enc_n = match target {
        EncoderTarget::Lifted => basis.channels() * hw,
        EncoderTarget::Projected => basis.reduced() * hw,
    };

    let fd = coder.decode_block(s, n, fe)?;
    let (feature, rec) = if n > 1 {
        let prev = taps[n - 2];
        let count = s.value(prev).len();
        let t = sq_dist(s, fd, prev)?;
        (Some((t, count)), coder.decode_from(s, n - 1, fd)?)
    } else {
        (None, fd)
    };
    let image = sq_dist(s, rec, x)?;
    let rec_taps = teacher.taps(s, rec, n)?;
    let f_rec = rec_taps[n - 1];
    let sh = s.shape(f_rec).to_vec();
    let f_rec = s.reshape(f_rec, &[sh[0], sh[1] * sh[2]])?;
    let f_true = s.leaf(&data.teacher[n - 1][k]);
    let perceptual = sq_dist(s, f_rec, f_true)?;
    Ok(Terms {
        encoder: (enc, enc_n),
        feature,
        image: (image, img.len()),
        perceptual: (perceptual, s.value(f_true).len()),
    })
}

/// All loss terms of block pair `N` on image `k`, as plain sums of squares.
pub fn pair_loss(
    coder: &SlimCoder,
    teacher: &VggEncoder,
    bases: &[EigenBasis],
    data: &DistillData,
    k: usize,
    n: usize,
    target: EncoderTarget,
) -> Result<PairLoss> {
    check_pair(coder, n, bases)?;
    if k >= data.images.len() {
        return contract(format!("image {k} out of range"));
    }
    let mut s = Session::new(&[&coder.params, &teacher.params]);
    let t = pair_terms(&mut s, coder, teacher, &bases[n - 1], data, k, n, target)?;
    Ok(PairLoss {
        encoder: s.scalar_value(t.encoder.0),
        feature: t.feature.map(|(v, _)| s.scalar_value(v)),
        image: s.scalar_value(t.image.0),
        perceptual: s.scalar_value(t.perceptual.0),
    })
}

pub fn encoder_distill_loss(
    coder: &SlimCoder,
    teacher: &VggEncoder,
    bases: &[EigenBasis],
    data: &DistillData,
    k: usize,
    n: usize,
    target: EncoderTarget,
) -> Result<f64> {
    pair_loss(coder, teacher, bases, data, k, n, target).map(|l| l.encoder)
}

pub fn decoder_loss(
    coder: &SlimCoder,
    teacher: &VggEncoder,
    bases: &[EigenBasis],
    data: &DistillData,
    k: usize,
    n: usize,
) -> Result<f64> {
    pair_loss(coder, teacher, bases, data, k, n, EncoderTarget::default()).map(|l| l.decoder())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOpts {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub target: EncoderTarget,
    pub seed: u64,
}

impl Default for PairOpts {
    fn default() -> Self {
        Self { steps: 100, lr: 1e-3, batch_size: 4, target: EncoderTarget::default(), seed: 0 }
    }
}

/// Trains `enc_N` and `dec_N` jointly with every other parameter frozen.
///
/// Each loss term is divided by its element count so the four terms weigh in on a
/// common scale. Returns the objective at every step.
pub fn train_block_pair(
    coder: &mut SlimCoder,
    teacher: &VggEncoder,
    bases: &[EigenBasis],
    data: &DistillData,
    n: usize,
    opts: &PairOpts,
) -> Result<Vec<f64>> {
    check_pair(coder, n, bases)?;
    if opts.batch_size == 0 {
        return contract("batch size must be positive");
    }
    coder.params.set_trainable("", false);
    coder.params.set_trainable(&format!("enc{n}."), true);
    coder.params.set_trainable(&format!("dec{n}."), true);
    let mut rng = SeedStream::new(opts.seed).rng(&format!("pair{n}.batches"));
    let mut opt = Adam::new(opts.lr);
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let mut s = Session::new(&[&coder.params, &teacher.params]);
        let mut total: Option<Var> = None;
        for _ in 0..opts.batch_size {
            let k = rng.random_range(0..data.images.len());
            let t = pair_terms(&mut s, coder, teacher, &bases[n - 1], data, k, n, opts.target)?;
            let parts = [Some(t.encoder), t.feature, Some(t.image), Some(t.perceptual)];
            for (v, count) in parts.into_iter().flatten() {
                let v = s.scale(v, 1.0 / (count * opts.batch_size) as f64);
                total = Some(match total {
                    None => v,
                    Some(acc) => s.add(acc, v)?,
                });
            }
        }
        let (loss, mut grads) = s.backward(total.unwrap())?;
        grads.retain(|name, _| coder.params.contains(name));
        if !loss.is_finite() {
            coder.params.set_trainable("", false);
            let grad_norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
            return Err(Error::Diverged { step, lr: opts.lr, grad_norm });
        }
        coder.params.accumulate_grads(grads)?;
        opt.step(&mut coder.params)?;
        curve.push(loss);
    }
    coder.params.set_trainable("", false);
    coder.trained = coder.trained.max(n);
    Ok(curve)
}
