//! Global eigenbases and explained-variance statistics of teacher features.
//!
//! Features are `(C, HW)` matrices: one row per channel, one column per position.

use rand::seq::SliceRandom;

use crate::error::{contract, Error, Result};
use crate::numerics::{eigh_sym, normal_vec, Momentum, ParamSet, SeedStream, Session, Tensor};

fn dims(f: &Tensor) -> Result<(usize, usize)> {
    match f.shape() {
        [c, n] if *n > 0 => Ok((*c, *n)),
        s => Err(Error::Shape(format!("expected a (C, HW) feature matrix, got {s:?}"))),
    }
}

/// Per-channel mean over positions.
pub fn feature_means(f: &Tensor) -> Result<Vec<f64>> {
    let (_, n) = dims(f)?;
    Ok(f.data().chunks(n).map(|row| row.iter().sum::<f64>() / n as f64).collect())
}

/// Subtracts each channel's spatial mean.
pub fn center_features(f: &Tensor) -> Result<Tensor> {
    let (c, n) = dims(f)?;
    let means = feature_means(f)?;
    let mut out = f.data().to_vec();
    for (row, m) in out.chunks_mut(n).zip(&means) {
        row.iter_mut().for_each(|v| *v -= m);
    }
    Tensor::new(&[c, n], out)
}

/// `‖WᵀW F̄ − F̄‖²` for `W: (C_e, C)`.
pub fn reconstruction_loss(w: &Tensor, fbar: &Tensor) -> Result<f64> {
    let (c, n) = dims(fbar)?;
    let (ce, cw) = dims(w)?;
    if cw != c {
        return contract(format!("basis has {cw} columns for {c}-channel features"));
    }
    let (wd, fd) = (w.data(), fbar.data());
    let mut proj = vec![0.0; ce * n];
    for e in 0..ce {
        for ch in 0..c {
            let wv = wd[e * c + ch];
            for j in 0..n {
                proj[e * n + j] += wv * fd[ch * n + j];
            }
        }
    }
    let mut loss = 0.0;
    for ch in 0..c {
        for j in 0..n {
            let rec: f64 = (0..ce).map(|e| wd[e * c + ch] * proj[e * n + j]).sum();
            loss += (rec - fd[ch * n + j]).powi(2);
        }
    }
    Ok(loss)
}

/// Largest absolute entry of `WWᵀ − I`.
pub fn orthonormality_error(w: &Tensor) -> Result<f64> {
    let (r, c) = dims(w)?;
    let d = w.data();
    let mut worst: f64 = 0.0;
    for i in 0..r {
        for j in 0..r {
            let dot: f64 = (0..c).map(|k| d[i * c + k] * d[j * c + k]).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    Ok(worst)
}

/// A global basis `W: (C_e, C)` with the channel means used for decentering.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub w: Tensor,
    pub mean: Vec<f64>,
}

impl EigenBasis {
    pub fn reduced(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.w.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOpts {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for EigenOpts {
    fn default() -> Self {
        Self { batch_size: 8, epochs: 5, lr: 0.3, momentum: 0.7, seed: 0 }
    }
}

/// Rows of a random Gaussian matrix, Gram–Schmidt orthonormalized.
fn random_orthonormal(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedStream::new(seed).rng("eigenbasis.init");
    let mut w = normal_vec(&mut rng, rows * cols);
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = (0..cols).map(|k| w[i * cols + k] * w[j * cols + k]).sum();
            for k in 0..cols {
                w[i * cols + k] -= dot * w[j * cols + k];
            }
        }
        let norm = (0..cols).map(|k| w[i * cols + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..cols {
            w[i * cols + k] /= norm;
        }
    }
    w
}

/// Largest eigenvalue of the pooled covariance `(1/K) Σ_k F̄_k F̄_kᵀ / HW_k`, by power
/// iteration.
fn top_variance(fbars: &[Tensor]) -> f64 {
    let c = fbars[0].shape()[0];
    let mut cov = vec![0.0; c * c];
    for f in fbars {
        let n = f.shape()[1];
        let d = f.data();
        let scale = 1.0 / (n * fbars.len()) as f64;
        for i in 0..c {
            for j in i..c {
                let v: f64 = d[i * n..(i + 1) * n].iter().zip(&d[j * n..(j + 1) * n]).map(|(a, b)| a * b).sum();
                cov[i * c + j] += v * scale;
            }
        }
    }
    for i in 0..c {
        for j in 0..i {
            cov[i * c + j] = cov[j * c + i];
        }
    }
    let mut v = vec![1.0 / (c as f64).sqrt(); c];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next: Vec<f64> = cov.chunks(c).map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
        if (norm - lambda).abs() <= 1e-10 * norm {
            return norm;
        }
        lambda = norm;
    }
    lambda
}

/// Fits `W` by minibatch gradient descent with momentum on the reconstruction objective
/// `(1/|β|) Σ_k ‖WᵀW F̄_k − F̄_k‖² / HW_k`, with features centered per image.
///
/// The objective is divided by the largest pooled feature variance, which bounds its
/// curvature, so `lr` does not depend on the feature scale. Each epoch visits the
/// images once in a shuffled order.
pub fn derive_eigenbasis(feats: &[Tensor], c_e: usize, opts: &EigenOpts) -> Result<EigenBasis> {
    let Some(first) = feats.first() else {
        return contract("eigenbasis needs at least one image");
    };
    let (c, _) = dims(first)?;
    if c_e == 0 || c_e > c {
        return contract(format!("reduced channel length {c_e} must be in 1..={c}"));
    }
    if opts.batch_size == 0 {
        return contract("batch size must be positive");
    }
    let mut fbars = Vec::with_capacity(feats.len());
    let mut mean = vec![0.0; c];
    for f in feats {
        if dims(f)?.0 != c {
            return Err(Error::Shape(format!("feature channel counts differ: {:?} vs {c}", f.shape())));
        }
        for (m, v) in mean.iter_mut().zip(feature_means(f)?) {
            *m += v / feats.len() as f64;
        }
        fbars.push(center_features(f)?);
    }
    let top = top_variance(&fbars);
    if !top.is_finite() {
        return Err(Error::Numeric(format!("feature variance is {top}")));
    }
    let norm = if top > 0.0 { 1.0 / top } else { 1.0 };

    let mut ps = ParamSet::new();
    ps.insert("w", Tensor::new(&[c_e, c], random_orthonormal(c_e, c, opts.seed))?.with_grad());
    let mut rng = SeedStream::new(opts.seed).rng("eigenbasis.batches");
    let mut opt = Momentum::new(opts.lr, opts.momentum);
    let mut order: Vec<usize> = (0..fbars.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            let mut s = Session::new(&[&ps]);
            let w = s.param("w")?;
            let wt = s.transpose(w)?;
            let mut total = None;
            for &k in batch {
                let f = s.leaf(&fbars[k]);
                let p = s.matmul(w, f)?;
                let rec = s.matmul(wt, p)?;
                let d = s.sub(rec, f)?;
                let sq = s.square(d);
                let l = s.sum(sq);
                let l = s.scale(l, norm / (batch.len() * fbars[k].shape()[1]) as f64);
                total = Some(match total {
                    None => l,
                    Some(t) => s.add(t, l)?,
                });
            }
            let (loss, grads) = s.backward(total.unwrap())?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("eigenbasis loss became {loss}; lower the learning rate")));
            }
            ps.accumulate_grads(grads)?;
            opt.step(&mut ps)?;
        }
    }
    let mut w = ps.get("w").unwrap().clone();
    w.requires_grad = false;
    Ok(EigenBasis { w, mean })
}

/// Descending eigenvalues of one image's feature covariance `F̄F̄ᵀ / HW`, padded with
/// zeros to `C`. The smaller of the `C×C` and `HW×HW` Gram forms is decomposed.
pub fn feature_spectrum(f: &Tensor) -> Result<Vec<f64>> {
    let fbar = center_features(f)?;
    let (c, n) = dims(&fbar)?;
    let d = fbar.data();
    let m = c.min(n);
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let v = if c <= n {
                (0..n).map(|k| d[i * n + k] * d[j * n + k]).sum::<f64>()
            } else {
                (0..c).map(|k| d[k * n + i] * d[k * n + j]).sum::<f64>()
            } / n as f64;
            g[i * m + j] = v;
            g[j * m + i] = v;
        }
    }
    let mut ev = eigh_sym(&g, m)?.eigenvalues;
    ev.resize(c, 0.0);
    Ok(ev)
}

/// Per layer, per image: descending covariance eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumStats {
    layers: Vec<Vec<Vec<f64>>>,
}

impl SpectrumStats {
    /// Tiny negative eigenvalues from round-off are clamped to zero; anything more
    /// negative is rejected.
    pub fn new(mut layers: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        for (li, layer) in layers.iter_mut().enumerate() {
            let Some(len) = layer.first().map(Vec::len) else { continue };
            for spec in layer.iter_mut() {
                if spec.len() != len || len == 0 {
                    return Err(Error::Shape(format!("layer {} spectra have unequal or zero lengths", li + 1)));
                }
                let scale = spec.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                for v in spec.iter_mut() {
                    if !(*v >= -1e-9 * scale) {
                        return contract(format!("layer {}: eigenvalue {v} is not a covariance eigenvalue", li + 1));
                    }
                    *v = v.max(0.0);
                }
                spec.sort_by(|a, b| b.total_cmp(a));
            }
        }
        Ok(Self { layers })
    }

    /// `feats[layer][image]`, each a `(C_N, HW)` matrix.
    pub fn from_features(feats: &[Vec<Tensor>]) -> Result<Self> {
        let layers = feats
            .iter()
            .map(|layer| layer.iter().map(feature_spectrum).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Spectra of layer `n` (1-based).
    pub fn layer(&self, n: usize) -> Option<&[Vec<f64>]> {
        n.checked_sub(1).and_then(|i| self.layers.get(i)).map(Vec::as_slice)
    }

    pub fn channels(&self, n: usize) -> Option<usize> {
        self.layer(n).and_then(|l| l.first()).map(Vec::len)
    }
}

/// Mean over images of the fraction of variance held by the top `c_prime` eigenvalues.
/// An image with no variance at all counts as fully explained.
pub fn mcev(spectra: &SpectrumStats, layer: usize, c_prime: usize) -> Result<f64> {
    let Some(images) = spectra.layer(layer).filter(|l| !l.is_empty()) else {
        return contract(format!("no spectra for layer {layer}"));
    };
    let c = images[0].len();
    if c_prime == 0 || c_prime > c {
        return contract(format!("c' must be in 1..={c}, got {c_prime}"));
    }
    let mut acc = 0.0;
    for spec in images {
        let mut head = 0.0;
        let mut total = 0.0;
        for (j, v) in spec.iter().enumerate() {
            total += v;
            if j + 1 == c_prime {
                head = total;
            }
        }
        acc += if total > 0.0 { head / total } else { 1.0 };
    }
    Ok(acc / images.len() as f64)
}

/// Per layer, the smallest `c` with `mcev(c) ≥ target`; the first layer's length is
/// then doubled (capped at its full width), since five components keep too little
/// detail for the shallowest features.
pub fn select_channel_lengths(spectra: &SpectrumStats, target: f64) -> Result<[usize; 4]> {
    if spectra.n_layers() != 4 {
        return contract(format!("channel selection needs 4 layers of spectra, got {}", spectra.n_layers()));
    }
    let mut out = [0usize; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let c = spectra.channels(n).ok_or_else(|| Error::Contract(format!("no spectra for layer {n}")))?;
        let mut pick = c;
        for cp in 1..=c {
            if mcev(spectra, n, cp)? >= target {
                pick = cp;
                break;
            }
        }
        *slot = pick;
    }
    out[0] = (2 * out[0]).min(spectra.channels(1).unwrap());
    Ok(out)
}
