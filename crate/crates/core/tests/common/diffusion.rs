//! Closed-form references for the forward and reverse processes.

use iidm::diffusion::{make_schedule, VarianceSchedule};
use iidm::numerics::Tensor;
use iidm::Result;

/// T = 50, β from 1e-4 to 0.05.
pub fn desk_schedule() -> VarianceSchedule {
    make_schedule(50, 1e-4, 0.05).unwrap()
}

/// `ᾱ_t` by direct product.
pub fn alpha_bar(sched: &VarianceSchedule, t: usize) -> f64 {
    (1..=t).map(|s| 1.0 - sched.beta(s)).product()
}

/// Sample mean and unbiased variance.
pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Differences of sample means and variances, in units of their combined standard errors.
pub fn z_scores(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let z_mean = (ma - mb).abs() / (va / na + vb / nb).sqrt();
    let z_var = (va - vb).abs() / (va * va * 2.0 / (na - 1.0) + vb * vb * 2.0 / (nb - 1.0)).sqrt();
    (z_mean, z_var)
}

/// The exact noise for a known `x0`: `(y − √ᾱ_t·x0)/√(1−ᾱ_t)`.
pub fn oracle<'a>(x0: &Tensor, sched: &'a VarianceSchedule) -> impl Fn(&Tensor, usize) -> Result<Tensor> + 'a {
    let x0 = x0.clone();
    move |y: &Tensor, t: usize| {
        let ab = alpha_bar(sched, t);
        let v = y.data().iter().zip(x0.data()).map(|(y, x)| (y - ab.sqrt() * x) / (1.0 - ab).sqrt()).collect();
        Tensor::new(y.shape(), v)
    }
}

/// `μ̃_t(y, x0) = √ᾱ_{t−1}β_t/(1−ᾱ_t)·x0 + √α_t(1−ᾱ_{t−1})/(1−ᾱ_t)·y`.
pub fn posterior_mean(y: f64, x0: f64, t: usize, sched: &VarianceSchedule) -> f64 {
    let (ab_t, ab_prev, b) = (alpha_bar(sched, t), alpha_bar(sched, t - 1), sched.beta(t));
    ab_prev.sqrt() * b / (1.0 - ab_t) * x0 + (1.0 - b).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t) * y
}

/// `β̃_t = β_t(1−ᾱ_{t−1})/(1−ᾱ_t)`.
pub fn posterior_var(t: usize, sched: &VarianceSchedule) -> f64 {
    sched.beta(t) * (1.0 - alpha_bar(sched, t - 1)) / (1.0 - alpha_bar(sched, t))
}
