//! Forest carbon-storage density estimation from multispectral imagery with an
//! implicit diffusion model conditioned on PCA-distilled VGG features.
//!
//! Modules, bottom-up:
//! - [`numerics`]: tensors, reverse-mode autodiff, Jacobi eigensolver, optimizers.
//! - [`raster`]: the RAS1 container, forest masks and the synthetic scene generator.
//! - [`carbon`]: volume → carbon storage → canopy-weighted per-pixel density.
//! - [`distill`]: VGG teacher, global eigenbases, blockwise distilled slim coder.
//! - [`diffusion`]: variance schedule, forward/reverse processes, conditional U-Net.
//! - [`inr`]: attention fusion and coordinate-MLP upsampling used inside the U-Net.
//! - [`metrics`]: masked MAE / MSE / RMSE / PSNR / SSIM.
//! - [`pipeline`]: run configuration, OLS baseline, ablation harness, CLI stages.

pub mod carbon;
pub mod checkpoint;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod inr;
pub mod metrics;
pub mod numerics;
pub mod pipeline;
pub mod raster;

pub use error::{Error, Result};
