//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod diffusion;
pub mod distill;
pub mod gradcheck;
pub mod metrics;

use iidm::numerics::{eigh_sym, normal_vec, SeedStream, Tensor};

/// Features `Q·diag(√λ)·Z` for a random rotation `Q`, one `(C, hw)` matrix per image.
pub fn spectrum_features(seed: u64, spectrum: &[f64], images: usize, hw: usize) -> (Vec<Tensor>, Vec<f64>) {
    let c = spectrum.len();
    let q = random_rotation(seed, c);
    let mut rng = SeedStream::new(seed).rng("features");
    let mut out = Vec::with_capacity(images);
    for _ in 0..images {
        let z = normal_vec(&mut rng, c * hw);
        let mut f = vec![0.0; c * hw];
        for i in 0..c {
            for j in 0..c {
                let s = q[i * c + j] * spectrum[j].sqrt();
                for p in 0..hw {
                    f[i * hw + p] += s * z[j * hw + p];
                }
            }
        }
        out.push(Tensor::new(&[c, hw], f).unwrap());
    }
    (out, q)
}

/// Orthogonal `n×n` matrix from Gram–Schmidt on Gaussian columns (row-major).
pub fn random_rotation(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = SeedStream::new(seed).rng("rotation");
    let mut cols: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, n)).collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = (0..n).map(|k| cols[i][k] * cols[j][k]).sum();
            for k in 0..n {
                cols[i][k] -= d * cols[j][k];
            }
        }
        let norm = cols[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        cols[i].iter_mut().for_each(|v| *v /= norm);
    }
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            q[i * n + j] = cols[j][i];
        }
    }
    q
}

/// Scalar-loop centering of a `(C, n)` matrix.
pub fn centered(f: &Tensor) -> Vec<f64> {
    let (c, n) = (f.shape()[0], f.shape()[1]);
    let d = f.data();
    let mut out = vec![0.0; c * n];
    for i in 0..c {
        let mut m = 0.0;
        for p in 0..n {
            m += d[i * n + p];
        }
        m /= n as f64;
        for p in 0..n {
            out[i * n + p] = d[i * n + p] - m;
        }
    }
    out
}

/// Exact PCA: top-`k` eigenvectors of the pooled covariance `(1/M) Σ F̄F̄ᵀ / n`, as rows.
pub fn pca_oracle(feats: &[Tensor], k: usize) -> Vec<f64> {
    let c = feats[0].shape()[0];
    let mut cov = vec![0.0; c * c];
    for f in feats {
        let n = f.shape()[1];
        let fb = centered(f);
        for i in 0..c {
            for j in 0..c {
                let mut s = 0.0;
                for p in 0..n {
                    s += fb[i * n + p] * fb[j * n + p];
                }
                cov[i * c + j] += s / n as f64 / feats.len() as f64;
            }
        }
    }
    let sp = eigh_sym(&cov, c).unwrap();
    let mut w = vec![0.0; k * c];
    for r in 0..k {
        for i in 0..c {
            w[r * c + i] = sp.eigenvectors[i * c + r];
        }
    }
    w
}

/// Mean over images of `‖WᵀW F̄ − F̄‖² / n`, by scalar loops.
pub fn mean_recon_loss(w: &[f64], k: usize, feats: &[Tensor]) -> f64 {
    let c = feats[0].shape()[0];
    let mut total = 0.0;
    for f in feats {
        let n = f.shape()[1];
        let fb = centered(f);
        let mut l = 0.0;
        for p in 0..n {
            let proj: Vec<f64> = (0..k).map(|r| (0..c).map(|i| w[r * c + i] * fb[i * n + p]).sum()).collect();
            for i in 0..c {
                let rec: f64 = (0..k).map(|r| w[r * c + i] * proj[r]).sum();
                l += (rec - fb[i * n + p]).powi(2);
            }
        }
        total += l / n as f64;
    }
    total / feats.len() as f64
}

/// Largest principal angle, in degrees, between the row spaces of `a` and `b` (`k×c` each).
pub fn subspace_angle_deg(a: &[f64], b: &[f64], k: usize, c: usize) -> f64 {
    let orth = |m: &[f64]| {
        let mut rows: Vec<Vec<f64>> = (0..k).map(|r| m[r * c..(r + 1) * c].to_vec()).collect();
        for i in 0..k {
            for j in 0..i {
                let d: f64 = (0..c).map(|x| rows[i][x] * rows[j][x]).sum();
                for x in 0..c {
                    rows[i][x] -= d * rows[j][x];
                }
            }
            let nrm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            rows[i].iter_mut().for_each(|v| *v /= nrm);
        }
        rows
    };
    let (qa, qb) = (orth(a), orth(b));
    // M = Qa Qbᵀ; the smallest singular value is the cosine of the largest angle
    let mut mmt = vec![0.0; k * k];
    let m: Vec<Vec<f64>> = qa.iter().map(|ra| qb.iter().map(|rb| (0..c).map(|x| ra[x] * rb[x]).sum()).collect()).collect();
    for i in 0..k {
        for j in 0..k {
            mmt[i * k + j] = (0..k).map(|x| m[i][x] * m[j][x]).sum();
        }
    }
    let ev = eigh_sym(&mmt, k).unwrap().eigenvalues;
    let cos = ev[k - 1].max(0.0).sqrt().min(1.0);
    cos.acos().to_degrees()
}

/// `count` non-overlapping `side×side` crops of a synthetic scene's imagery, as
/// `(bands, side, side)` tensors.
pub fn scene_crops(seed: u64, count: usize, side: usize) -> Vec<Tensor> {
    let per_row = (count as f64).sqrt().ceil() as usize;
    let dim = (per_row * side).max(16);
    let scene = iidm::raster::gen_synthetic_scene(seed, dim, dim, 6).unwrap();
    let bands = scene.imagery.channels();
    let planar = scene.imagery.to_planar();
    (0..count)
        .map(|i| {
            let (r0, c0) = ((i / per_row) * side, (i % per_row) * side);
            let mut v = Vec::with_capacity(bands * side * side);
            for b in 0..bands {
                for r in 0..side {
                    for c in 0..side {
                        v.push(planar[b * dim * dim + (r0 + r) * dim + c0 + c]);
                    }
                }
            }
            Tensor::new(&[bands, side, side], v).unwrap()
        })
        .collect()
}
