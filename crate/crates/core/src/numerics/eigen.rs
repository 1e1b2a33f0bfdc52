//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use crate::error::{Error, Result};

const OFF_DIAG_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigenvalues in descending order with matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSpectrum {
    pub n: usize,
    pub eigenvalues: Vec<f64>,
    /// Row-major `n×n`; column `j` is the eigenvector of `eigenvalues[j]`.
    pub eigenvectors: Vec<f64>,
}

impl SymSpectrum {
    pub fn vector(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.eigenvectors[i * self.n + j]).collect()
    }

    /// `V·diag(λ)·Vᵀ`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let v = &self.eigenvectors;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n).map(|k| v[i * n + k] * self.eigenvalues[k] * v[j * n + k]).sum();
            }
        }
        out
    }
}

/// Decomposes the symmetric `n×n` row-major matrix `m`.
pub fn eigh_sym(m: &[f64], n: usize) -> Result<SymSpectrum> {
    if m.len() != n * n {
        return Err(Error::Shape(format!("eigh_sym: {} values is not {n}x{n}", m.len())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("eigh_sym: non-finite entry".into()));
    }
    let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            asym = asym.max((m[i * n + j] - m[j * n + i]).abs());
        }
    }
    if asym > 1e-9 * scale {
        return Err(Error::Asymmetric(asym));
    }

    let mut a = m.to_vec();
    // symmetrize exactly so rotations see one value per pair
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAG_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::Numeric(format!("Jacobi did not converge in {MAX_SWEEPS} sweeps")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[r * n + dst] = v[r * n + src];
        }
    }
    Ok(SymSpectrum { n, eigenvalues, eigenvectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let s = eigh_sym(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_sorted_descending() {
        let s = eigh_sym(&[1.0, 0.0, 0.0, 3.0], 2).unwrap();
        assert_eq!(s.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(s.vector(0).iter().map(|v| v.abs()).collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn two_by_two_hand_solution() {
        // λ² − 4λ + 3 = 0
        let s = eigh_sym(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        assert!((s.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = s.vector(0);
        let v1 = s.vector(1);
        let sign0 = v0[0].signum();
        let sign1 = v1[0].signum();
        assert!(max_abs_diff(&[v0[0] * sign0, v0[1] * sign0], &[r, r]) < 1e-12);
        assert!(max_abs_diff(&[v1[0] * sign1, v1[1] * sign1], &[r, -r]) < 1e-12);
        assert!(max_abs_diff(&s.reconstruct(), &[2.0, 1.0, 1.0, 2.0]) < 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(eigh_sym(&[1.0, 2.0, 3.0], 2), Err(Error::Shape(_))));
        assert!(matches!(eigh_sym(&[1.0, 2.0, 0.0, 1.0], 2), Err(Error::Asymmetric(_))));
        assert!(matches!(eigh_sym(&[f64::NAN, 0.0, 0.0, 1.0], 2), Err(Error::InvalidInput(_))));
    }
}
