/// `c = op(a)·op(b) + beta·c` for row-major buffers, where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `ta`/`tb` select the transposed operand, i.e. `a` stored as `k×m` (resp. `b` as `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|e| *e *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted buffer lengths cover every index reachable through these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if ta { a[p * m + i] } else { a[i * k + p] };
                    let bv = if tb { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn two_by_two() {
        let mut c = vec![1.0; 4];
        gemm(2, 2, 2, &[1.0, 2.0, 3.0, 4.0], false, &[5.0, 6.0, 7.0, 8.0], false, &mut c, 0.5);
        assert_eq!(c, vec![19.5, 22.5, 43.5, 50.5]);
    }

    #[test]
    fn empty_inner_dimension_scales_c() {
        let mut c = vec![2.0, 4.0];
        gemm(1, 0, 2, &[], false, &[], false, &mut c, 0.5);
        assert_eq!(c, vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn matches_naive(m in 1usize..7, k in 1usize..7, n in 1usize..7, ta: bool, tb: bool, seed: u64) {
            let mut rng = crate::numerics::SeedStream::new(seed).rng("gemm");
            let a = crate::numerics::normal_vec(&mut rng, m * k);
            let b = crate::numerics::normal_vec(&mut rng, k * n);
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, &a, ta, &b, tb, &mut c, 0.0);
            for (x, y) in c.iter().zip(naive(m, k, n, &a, ta, &b, tb)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
