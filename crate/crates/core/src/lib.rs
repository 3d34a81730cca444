//! Sparse coding and dictionary learning for symmetric positive definite
//! matrices with the Stein kernel.
//!
//! SPD matrices (covariance descriptors, diffusion tensors, ...) live on a
//! curved cone, and treating them as flat vectors throws the geometry away.
//! This crate instead measures similarity with the Stein divergence, turns it
//! into a positive definite kernel, and does sparse coding and dictionary
//! learning directly in the induced feature space:
//!
//! * [`spd`] — validated SPD matrix type and spectral matrix functions;
//! * [`geometry`] — Stein divergence, affine-invariant and Thompson metrics,
//!   geodesics, log/exp maps, Karcher means;
//! * [`kernel`] — the Stein kernel, admissible widths, Gram assembly;
//! * [`coding`] — kernelized lasso by coordinate descent, residual-based
//!   classification;
//! * [`dictionary`] — dictionary learning in the kernel-induced space, with
//!   Riemannian k-means initialization;
//! * [`baseline`] — log-Euclidean embedding and sparse coding, the flat
//!   reference point;
//! * [`descriptor`] — region covariance descriptors from grayscale images;
//! * [`synth`] — seeded synthetic data generators for experiments.
//!
//! # Example
//!
//! ```
//! use stein_sparse::kernel::{stein_kernel, KernelParams};
//! use stein_sparse::spd::SpdMatrix;
//!
//! let params = KernelParams::new(1.0, 2)?;
//! let x = SpdMatrix::identity(2).scale(2.0)?;
//! let y = SpdMatrix::identity(2);
//! let k = stein_kernel(&x, &y, &params)?;
//! assert!((k - 8.0 / 9.0).abs() < 1e-12);
//! # Ok::<(), stein_sparse::Error>(())
//! ```

pub mod baseline;
pub mod coding;
pub mod descriptor;
pub mod dictionary;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod set;
pub mod synth;
pub mod spd;

pub use error::{Error, Result};
pub use set::LabeledSpdSet;
pub use spd::SpdMatrix;
