//! Small layer helpers over [`Session`]: parameters live in a [`ParamSet`] under
//! `{name}.w` / `{name}.b`.

use rand::Rng;

use crate::error::{Error, Result};

use super::rng::normal_vec;
use super::session::Session;
use super::tape::{Tape, Var};
use super::tensor::{ParamSet, Tensor};

/// He-normal conv weights `(cout, cin, k, k)` and zero bias.
pub fn init_conv<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, cin: usize, cout: usize, k: usize) {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let w = normal_vec(rng, cout * cin * k * k).into_iter().map(|v| v * std).collect();
    ps.insert(format!("{name}.w"), Tensor::new(&[cout, cin, k, k], w).unwrap().with_grad());
    ps.insert(format!("{name}.b"), Tensor::zeros(&[cout]).with_grad());
}

/// Weights `(fan_out, fan_in)` scaled by `gain / sqrt(fan_in)`, zero bias.
pub fn init_linear<R: Rng>(ps: &mut ParamSet, rng: &mut R, name: &str, fan_in: usize, fan_out: usize, gain: f64) {
    let std = gain / (fan_in as f64).sqrt();
    let w = normal_vec(rng, fan_out * fan_in).into_iter().map(|v| v * std).collect();
    ps.insert(format!("{name}.w"), Tensor::new(&[fan_out, fan_in], w).unwrap().with_grad());
    ps.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]).with_grad());
}

pub fn conv(s: &mut Session, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = s.param(&format!("{name}.w"))?;
    let b = s.param(&format!("{name}.b"))?;
    s.conv2d(x, w, Some(b), stride)
}

pub fn conv_relu(s: &mut Session, name: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(s, name, x, stride)?;
    Ok(s.relu(y))
}

/// Affine map over the leading axis of `x: (fan_in, N)`.
pub fn linear(s: &mut Session, name: &str, x: Var) -> Result<Var> {
    let w = s.param(&format!("{name}.w"))?;
    let b = s.param(&format!("{name}.b"))?;
    let y = s.matmul(w, x)?;
    s.add_bias(y, b)
}

/// Mean absolute deviation between two same-shaped values.
pub fn l1_loss(t: &mut Tape, x: Var, gx: Var) -> Result<Var> {
    if t.shape(x) != t.shape(gx) {
        return Err(Error::Shape(format!("l1_loss: {:?} vs {:?}", t.shape(x), t.shape(gx))));
    }
    let d = t.sub(x, gx)?;
    let a = t.abs(d);
    Ok(t.mean(a))
}

/// Squared Frobenius norm `‖a − b‖²`.
pub fn sq_dist(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = t.sub(a, b)?;
    let s = t.square(d);
    Ok(t.sum(s))
}
