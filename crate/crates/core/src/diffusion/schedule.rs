//! Variance schedule, the forward (noising) process and one reverse step.

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::numerics::{normal_vec, Tensor};

/// `β_1 < … < β_T` with `α_t = 1 − β_t` and `ᾱ_t = Π_{s≤t} α_s`. Timesteps are 1-based;
/// `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl VarianceSchedule {
    /// Any strictly increasing sequence in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return contract("schedule needs at least one step");
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return contract(format!("every beta must lie in (0, 1), got {b}"));
        }
        if let Some(w) = betas.windows(2).position(|w| !(w[0] < w[1])) {
            return contract(format!("betas must be strictly increasing; beta_{} = {} ≥ beta_{} = {}", w + 1, betas[w], w + 2, betas[w + 1]));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `β̃_t = β_t (1 − ᾱ_{t−1}) / (1 − ᾱ_t)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    fn check_t(&self, t: usize, lowest: usize) -> Result<()> {
        if t < lowest || t > self.steps() {
            return contract(format!("timestep {t} outside {lowest}..={}", self.steps()));
        }
        Ok(())
    }
}

/// Linearly spaced betas from `beta_start` to `beta_end`.
pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<VarianceSchedule> {
    if steps < 2 {
        return contract(format!("a linear schedule needs T ≥ 2, got {steps}"));
    }
    if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
        return contract(format!("need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"));
    }
    let span = beta_end - beta_start;
    let betas = (0..steps).map(|i| beta_start + span * i as f64 / (steps - 1) as f64).collect();
    VarianceSchedule::from_betas(betas)
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn affine(x: &Tensor, a: f64, noise: &Tensor, b: f64) -> Tensor {
    let v = x.data().iter().zip(noise.data()).map(|(x, n)| a * x + b * n).collect();
    Tensor::new(x.shape(), v).unwrap()
}

/// One noising step with variance `beta`: `√(1−β)·x + √β·noise`.
pub fn noise_with_beta(x_prev: &Tensor, beta: f64, noise: &Tensor) -> Result<Tensor> {
    same_shape(x_prev, noise, "forward step")?;
    if !(0.0..=1.0).contains(&beta) {
        return contract(format!("beta must lie in [0, 1], got {beta}"));
    }
    Ok(affine(x_prev, (1.0 - beta).sqrt(), noise, beta.sqrt()))
}

/// `x_t = √(1−β_t)·x_{t−1} + √β_t·noise`.
pub fn forward_step(x_prev: &Tensor, t: usize, sched: &VarianceSchedule, noise: &Tensor) -> Result<Tensor> {
    sched.check_t(t, 1)?;
    noise_with_beta(x_prev, sched.beta(t), noise)
}

/// `x_t = √ᾱ_t·x_0 + √(1−ᾱ_t)·noise`; `t = 0` returns `x_0`.
pub fn forward_jump(x0: &Tensor, t: usize, sched: &VarianceSchedule, noise: &Tensor) -> Result<Tensor> {
    sched.check_t(t, 0)?;
    same_shape(x0, noise, "forward jump")?;
    let ab = sched.alpha_bar(t);
    Ok(affine(x0, ab.sqrt(), noise, (1.0 - ab).sqrt()))
}

/// The current point of a reverse chain. The next step depends on nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub y: Tensor,
    pub t: usize,
}

/// Anything that predicts the injected noise from `(y_t, t)`.
pub trait NoisePredictor {
    fn predict_noise(&self, y: &Tensor, t: usize) -> Result<Tensor>;
}

impl<F: Fn(&Tensor, usize) -> Result<Tensor>> NoisePredictor for F {
    fn predict_noise(&self, y: &Tensor, t: usize) -> Result<Tensor> {
        self(y, t)
    }
}

/// Samples `y_{t−1}` with mean `(y_t − β_t/√(1−ᾱ_t)·ε̂)/√(1−β_t)` and variance `β̃_t`;
/// the last step (`t = 1`) adds no noise.
pub fn denoise_step<P: NoisePredictor + ?Sized, R: Rng>(
    state: &DiffusionState,
    model: &P,
    sched: &VarianceSchedule,
    rng: &mut R,
) -> Result<DiffusionState> {
    if state.t == 0 {
        return contract("cannot denoise past t = 0");
    }
    sched.check_t(state.t, 1)?;
    let t = state.t;
    let eps = model.predict_noise(&state.y, t)?;
    same_shape(&state.y, &eps, "noise prediction")?;
    let c = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    let mean: Vec<f64> = state.y.data().iter().zip(eps.data()).map(|(y, e)| (y - c * e) * inv).collect();
    let y = if t > 1 {
        let sd = sched.posterior_variance(t).sqrt();
        let z = normal_vec(rng, mean.len());
        mean.iter().zip(z).map(|(m, z)| m + sd * z).collect()
    } else {
        mean
    };
    Ok(DiffusionState { y: Tensor::new(state.y.shape(), y)?, t: t - 1 })
}

/// Runs the whole reverse chain from `y_T`.
pub fn reverse_chain<P: NoisePredictor + ?Sized, R: Rng>(
    y_t: Tensor,
    model: &P,
    sched: &VarianceSchedule,
    rng: &mut R,
) -> Result<Tensor> {
    let mut state = DiffusionState { y: y_t, t: sched.steps() };
    while state.t > 0 {
        state = denoise_step(&state, model, sched, rng)?;
    }
    Ok(state.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedStream;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::new(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn schedule_examples() {
        assert!(make_schedule(2, 0.5, 0.5).is_err());
        assert!(VarianceSchedule::from_betas(vec![0.5, 0.5]).is_err());
        let s = VarianceSchedule::from_betas(vec![0.5, 0.6]).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5, 0.2]);
        let long = make_schedule(1000, 1e-4, 0.02).unwrap();
        assert!(long.alpha_bar(1000) < 0.01);
        assert!(long.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(make_schedule(1, 0.1, 0.2).is_err());
        assert!(make_schedule(5, 0.2, 0.1).is_err());
        assert!(make_schedule(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_step_examples() {
        let x = t1(&[1.0]);
        let zero = t1(&[0.0]);
        let s = VarianceSchedule::from_betas(vec![0.19, 0.5]).unwrap();
        assert!((forward_step(&x, 1, &s, &zero).unwrap().data()[0] - 0.9).abs() < 1e-15);
        let x = t1(&[0.3, -2.0]);
        let n = t1(&[1.5, 0.25]);
        assert_eq!(noise_with_beta(&x, 0.0, &n).unwrap(), x);
        assert_eq!(noise_with_beta(&x, 1.0, &n).unwrap(), n);
        assert!(forward_step(&x, 0, &s, &n).is_err());
        assert!(forward_step(&x, 3, &s, &n).is_err());
    }

    #[test]
    fn jump_at_zero_is_identity() {
        let s = make_schedule(4, 0.1, 0.4).unwrap();
        let x = t1(&[0.3, -2.0]);
        assert_eq!(forward_jump(&x, 0, &s, &t1(&[9.0, 9.0])).unwrap(), x);
    }

    #[test]
    fn exact_noise_inverts_single_step() {
        let s = VarianceSchedule::from_betas(vec![0.3]).unwrap();
        let x0 = t1(&[0.5, -0.25, 1.0]);
        let eps = t1(&[0.7, -1.2, 0.1]);
        let y1 = forward_jump(&x0, 1, &s, &eps).unwrap();
        let oracle = |_: &Tensor, _: usize| Ok(eps.clone());
        let mut rng = SeedStream::new(0).rng("r");
        let out = denoise_step(&DiffusionState { y: y1, t: 1 }, &oracle, &s, &mut rng).unwrap();
        for (a, b) in out.y.data().iter().zip(x0.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(out.t, 0);
        assert!(denoise_step(&out, &oracle, &s, &mut rng).is_err());
    }

    #[test]
    fn zero_prediction_mean() {
        let s = VarianceSchedule::from_betas(vec![0.36]).unwrap();
        let y = t1(&[0.8, -1.6]);
        let zero = |y: &Tensor, _: usize| Ok(Tensor::zeros(y.shape()));
        let mut rng = SeedStream::new(0).rng("r");
        let out = denoise_step(&DiffusionState { y, t: 1 }, &zero, &s, &mut rng).unwrap();
        for (a, b) in out.y.data().iter().zip([1.0, -2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
