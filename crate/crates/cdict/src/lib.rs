//! Sparse coding and dictionary learning over continuous basis functions,
//! applied to point-cloud denoising.
//!
//! Point clouds are irregularly sampled: every local patch has its own set of
//! sample locations, so classical fixed-grid sparse coding does not apply.
//! This crate instead represents dictionary atoms as continuous functions over
//! a fixed 2D domain (linear combinations of a cosine tensor-product basis).
//! An atom can be sampled at any patch's locations, which makes both pursuit
//! and k-SVD-style dictionary learning grid-free.
//!
//! Module layout:
//!
//! - [`cloud_io`] — point-cloud I/O (XYZ, ASCII PLY), synthetic surfaces,
//!   seeded Gaussian noise.
//! - [`geometry`] — radius neighborhoods, PCA tangent frames, patch
//!   extraction and the inverse mapping back to world space.
//! - [`basis`] — the cosine tensor basis, dictionaries over it, and the
//!   `CDICT` text format.
//! - [`pursuit`] — per-patch sparse coding: orthogonal matching pursuit and
//!   an l1-relaxed proximal-gradient solver.
//! - [`dictlearn`] — continuous k-SVD over training patches with
//!   heterogeneous grids.
//! - [`pipeline`] — end-to-end denoising by averaging overlapping patch
//!   reconstructions, plus evaluation metrics.
//!
//! All randomness is driven by explicitly seeded ChaCha8 generators, so every
//! operation is reproducible from its parameters.

pub mod basis;
pub mod cloud_io;
pub mod dictlearn;
pub mod geometry;
pub mod pipeline;
pub mod pursuit;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed text input; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    /// Neighborhood too small or rank-deficient for a tangent frame.
    #[error("degenerate patch: {0}")]
    DegeneratePatch(String),
    #[error("point ({u}, {v}) outside the basis domain [-1,1]^2")]
    OutsideDomain { u: f64, v: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("atom index {index} out of range for dictionary with {n_atoms} atoms")]
    AtomIndex { index: usize, n_atoms: usize },
    #[error("atom {index} has (near-)zero norm and cannot be normalized")]
    ZeroAtom { index: usize },
    #[error("operation requires a non-empty point cloud")]
    EmptyCloud,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, Error>;
