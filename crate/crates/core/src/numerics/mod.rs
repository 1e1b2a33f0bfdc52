//! Dense tensors, reverse-mode autodiff, symmetric eigendecomposition and optimizers.

mod eigen;
mod gemm;
pub mod nn;
mod optim;
mod rng;
mod session;
mod tape;
mod tensor;

pub use eigen::{eigh_sym, SymSpectrum};
pub use optim::{sgd_step, sgd_step_tensors, Adam, Momentum};
pub use rng::{derive_seed, normal_vec, SeedStream};
pub use session::Session;
pub use tape::{Tape, Var};
pub use tensor::{ParamSet, Tensor};
