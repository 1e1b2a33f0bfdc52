use std::collections::BTreeMap;

use crate::error::{contract, Error, Result};

use super::tensor::{ParamSet, Tensor};

/// Plain gradient descent, `p ← p − lr·grad`, clearing gradients afterwards.
///
/// Every trainable tensor must carry a gradient; frozen tensors are skipped.
pub fn sgd_step(params: &mut ParamSet, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return contract(format!("learning rate must be positive, got {lr}"));
    }
    if let Some((name, _)) = params.iter().find(|(_, t)| t.requires_grad && t.grad.is_none()) {
        return Err(Error::MissingGrad(name.clone()));
    }
    for (_, t) in params.iter_mut() {
        if t.requires_grad {
            apply_sgd(t, lr);
        }
    }
    Ok(())
}

/// Same update over a loose collection of tensors.
pub fn sgd_step_tensors(params: &mut [&mut Tensor], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return contract(format!("learning rate must be positive, got {lr}"));
    }
    if let Some(i) = params.iter().position(|t| t.requires_grad && t.grad.is_none()) {
        return Err(Error::MissingGrad(format!("tensor #{i}")));
    }
    for t in params.iter_mut().filter(|t| t.requires_grad) {
        apply_sgd(t, lr);
    }
    Ok(())
}

fn apply_sgd(t: &mut Tensor, lr: f64) {
    if let Some(g) = t.grad.take() {
        for (p, g) in t.data_mut().iter_mut().zip(&g) {
            *p -= lr * g;
        }
    }
}

/// Gradient descent with heavy-ball momentum: `v ← μ·v + grad`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self { lr, momentum, velocity: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return contract(format!("need lr > 0 and momentum in [0, 1), got {} and {}", self.lr, self.momentum));
        }
        if let Some((name, _)) = params.iter().find(|(_, t)| t.requires_grad && t.grad.is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        for (name, t) in params.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let Some(g) = t.grad.take() else { continue };
            let v = self.velocity.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for ((p, g), v) in t.data_mut().iter_mut().zip(&g).zip(v.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= self.lr * *v;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction; state is keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if !(self.lr > 0.0) {
            return contract(format!("learning rate must be positive, got {}", self.lr));
        }
        if let Some((name, _)) = params.iter().find(|(_, t)| t.requires_grad && t.grad.is_none()) {
            return Err(Error::MissingGrad(name.clone()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, t) in params.iter_mut() {
            if !t.requires_grad {
                continue;
            }
            let Some(g) = t.grad.take() else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64, g: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let mut t = Tensor::new(&[1], vec![v]).unwrap().with_grad();
        t.grad = Some(vec![g]);
        ps.insert("p", t);
        ps.insert("frozen", Tensor::new(&[1], vec![7.0]).unwrap());
        ps
    }

    fn val(ps: &ParamSet) -> f64 {
        ps.get("p").unwrap().data()[0]
    }

    #[test]
    fn sgd_hand_step() {
        let mut ps = one(1.0, 0.5);
        sgd_step(&mut ps, 0.1).unwrap();
        assert!((val(&ps) - 0.95).abs() < 1e-15);
        assert!(ps.get("p").unwrap().grad.is_none());
        assert_eq!(ps.get("frozen").unwrap().data()[0], 7.0);
        assert!(matches!(sgd_step(&mut ps, 0.1), Err(Error::MissingGrad(_))));
        assert!(sgd_step(&mut one(1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let mut ps = one(0.0, 1.0);
        let mut opt = Momentum::new(0.1, 0.5);
        opt.step(&mut ps).unwrap();
        ps.get_mut("p").unwrap().grad = Some(vec![1.0]);
        opt.step(&mut ps).unwrap();
        // v1 = 1, v2 = 0.5 + 1 = 1.5; p = -0.1 - 0.15
        assert!((val(&ps) + 0.25).abs() < 1e-15);
        assert!(Momentum::new(0.1, 1.0).step(&mut one(0.0, 1.0)).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        for g in [3.0, -0.002] {
            let mut ps = one(1.0, g);
            Adam::new(0.01).step(&mut ps).unwrap();
            let want = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((val(&ps) - want).abs() < 1e-14, "{g}");
        }
    }

    #[test]
    fn adam_second_step_hand_value() {
        let mut ps = one(0.0, 1.0);
        let mut opt = Adam::new(0.1);
        opt.step(&mut ps).unwrap();
        ps.get_mut("p").unwrap().grad = Some(vec![-1.0]);
        opt.step(&mut ps).unwrap();
        // m2 = 0.09 − 0.1 = −0.01, v2 = 0.000999 + 0.001 = 0.001999; step one moved by −0.1/(1 + ε)
        let mh = -0.01 / (1.0 - 0.81);
        let vh: f64 = 0.001_999 / (1.0 - 0.998_001);
        let want = -0.1 / (1.0 + 1e-8) - 0.1 * mh / (vh.sqrt() + 1e-8);
        assert!((val(&ps) - want).abs() < 1e-12, "{} vs {want}", val(&ps));
    }
}
