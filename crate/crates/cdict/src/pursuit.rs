//! Per-patch sparse coding against a sampled continuous dictionary.
//!
//! Both solvers operate on the design matrix D(G) = Phi(G) * A obtained by
//! sampling the dictionary at the patch's own grid, so no resampling onto a
//! regular lattice ever happens:
//!
//! - [`omp`] — orthogonal matching pursuit with an exact support-size cap,
//!   used during dictionary learning.
//! - [`relaxed_pursuit`] — l1-penalized least squares solved by proximal
//!   gradient descent (ISTA), used for denoising.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::basis::{sample_dictionary, Dictionary};
use crate::geometry::Patch;
use crate::{Error, Result};

/// A sparse coefficient vector over `dimension` atoms. Stored entries are
/// always nonzero and finite; iteration order is by atom index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    dimension: usize,
    entries: BTreeMap<usize, f64>,
}

impl SparseCode {
    pub fn empty(dimension: usize) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    /// Build from (atom, coefficient) pairs. Zero coefficients are dropped;
    /// out-of-range indices and non-finite values are errors.
    pub fn from_entries(
        dimension: usize,
        entries: impl IntoIterator<Item = (usize, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (m, z) in entries {
            if m >= dimension {
                return Err(Error::AtomIndex {
                    index: m,
                    n_atoms: dimension,
                });
            }
            if !z.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "coefficient for atom {m} is not finite"
                )));
            }
            if z != 0.0 {
                map.insert(m, z);
            }
        }
        Ok(Self {
            dimension,
            entries: map,
        })
    }

    /// Total number of atoms the code is defined over (M).
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of nonzero coefficients.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Coefficient of atom `m` (zero when not in the support).
    pub fn coeff(&self, m: usize) -> f64 {
        self.entries.get(&m).copied().unwrap_or(0.0)
    }

    /// Sorted support indices.
    pub fn support(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&m, &z)| (m, z))
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dimension);
        for (m, z) in self.iter() {
            v[m] = z;
        }
        v
    }

    pub(crate) fn set(&mut self, m: usize, z: f64) {
        if z == 0.0 {
            self.entries.remove(&m);
        } else {
            self.entries.insert(m, z);
        }
    }
}

/// Knobs shared by both solvers.
#[derive(Debug, Clone, Copy)]
pub struct PursuitParams {
    /// Maximum support size for OMP.
    pub sparsity_l: usize,
    /// OMP stops early once the residual l2 norm drops to this value.
    pub residual_tol: f64,
    /// l1 weight for the relaxed solver.
    pub lambda: f64,
    /// Iteration cap for the relaxed solver.
    pub max_iters: usize,
}

impl Default for PursuitParams {
    fn default() -> Self {
        Self {
            sparsity_l: 4,
            residual_tol: 0.0,
            lambda: 0.1,
            max_iters: 500,
        }
    }
}

/// Which solver a pipeline should dispatch to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Omp,
    Relaxed,
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omp" => Ok(SolverKind::Omp),
            "relaxed" => Ok(SolverKind::Relaxed),
            other => Err(Error::InvalidParam(format!(
                "unknown solver '{other}' (expected 'omp' or 'relaxed')"
            ))),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverKind::Omp => write!(f, "omp"),
            SolverKind::Relaxed => write!(f, "relaxed"),
        }
    }
}

fn check_dims(values: &[f64], design: &DMatrix<f64>) -> Result<()> {
    if design.nrows() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "design matrix has {} rows but the signal has {} samples",
            design.nrows(),
            values.len()
        )));
    }
    Ok(())
}

// Minimum-norm least squares via SVD; tolerates rank-deficient column sets.
fn least_squares(design: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (max_sv * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps)
        .unwrap_or_else(|_| DVector::zeros(design.ncols()))
}

/// Orthogonal matching pursuit. Greedy atom selection by normalized residual
/// correlation (ties to the lowest index), full least-squares refit of the
/// selected coefficients after every selection.
pub fn omp(values: &[f64], design: &DMatrix<f64>, params: &PursuitParams) -> Result<SparseCode> {
    Ok(omp_with_trace(values, design, params)?.0)
}

/// [`omp`] plus the residual l2 norm after each selection (starting with the
/// norm of the input signal).
pub fn omp_with_trace(
    values: &[f64],
    design: &DMatrix<f64>,
    params: &PursuitParams,
) -> Result<(SparseCode, Vec<f64>)> {
    check_dims(values, design)?;
    if params.residual_tol < 0.0 {
        return Err(Error::InvalidParam("residual_tol must be >= 0".into()));
    }
    let n_atoms = design.ncols();
    let y = DVector::from_column_slice(values);
    let col_norms: Vec<f64> = (0..n_atoms).map(|m| design.column(m).norm()).collect();

    let mut residual = y.clone();
    let mut residual_norms = vec![residual.norm()];
    let mut selected: Vec<usize> = Vec::new();
    let mut coeffs = DVector::zeros(0);

    while selected.len() < params.sparsity_l.min(n_atoms) {
        let r_norm = residual.norm();
        if r_norm <= params.residual_tol {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for m in 0..n_atoms {
            if col_norms[m] == 0.0 || selected.contains(&m) {
                continue;
            }
            let score = design.column(m).dot(&residual).abs() / col_norms[m];
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((m, score));
            }
        }
        let Some((pick, score)) = best else { break };
        // No atom can measurably reduce the residual; selecting one anyway
        // would only fit rounding noise.
        if score <= r_norm * 1e-13 {
            break;
        }
        selected.push(pick);

        let sub = design.select_columns(selected.iter());
        coeffs = least_squares(&sub, &y);
        residual = &y - &sub * &coeffs;
        residual_norms.push(residual.norm());
    }

    let code = SparseCode::from_entries(
        n_atoms,
        selected.iter().copied().zip(coeffs.iter().copied()),
    )?;
    Ok((code, residual_norms))
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// l1-relaxed pursuit: minimize `0.5 ||y - D z||^2 + lambda ||z||_1` by
/// proximal gradient descent with the fixed step `1 / sigma_max(D)^2`.
pub fn relaxed_pursuit(
    values: &[f64],
    design: &DMatrix<f64>,
    params: &PursuitParams,
) -> Result<SparseCode> {
    Ok(relaxed_pursuit_with_trace(values, design, params)?.0)
}

/// [`relaxed_pursuit`] plus the objective value at every iterate (the first
/// entry is the objective of the all-zero start).
pub fn relaxed_pursuit_with_trace(
    values: &[f64],
    design: &DMatrix<f64>,
    params: &PursuitParams,
) -> Result<(SparseCode, Vec<f64>)> {
    check_dims(values, design)?;
    if !(params.lambda > 0.0) {
        return Err(Error::InvalidParam(format!(
            "relaxed pursuit needs lambda > 0, got {}",
            params.lambda
        )));
    }
    if params.max_iters == 0 {
        return Err(Error::InvalidParam("max_iters must be >= 1".into()));
    }
    let n_atoms = design.ncols();
    let y = DVector::from_column_slice(values);

    let sigma_max = design
        .clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    if sigma_max <= f64::MIN_POSITIVE.sqrt() {
        // D is numerically zero; z = 0 is optimal for any positive lambda.
        return Ok((SparseCode::empty(n_atoms), vec![0.5 * y.norm_squared()]));
    }
    let step = 1.0 / (sigma_max * sigma_max);
    let shrink = params.lambda * step;

    let design_t = design.transpose();
    let objective = |z: &DVector<f64>| -> f64 {
        let r = &y - design * z;
        0.5 * r.norm_squared() + params.lambda * z.iter().map(|v| v.abs()).sum::<f64>()
    };

    let mut z = DVector::zeros(n_atoms);
    let mut obj = objective(&z);
    let mut trace = vec![obj];
    for _ in 0..params.max_iters {
        let grad = &design_t * (design * &z - &y);
        for m in 0..n_atoms {
            z[m] = soft_threshold(z[m] - step * grad[m], shrink);
        }
        let new_obj = objective(&z);
        trace.push(new_obj);
        let rel_change = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = new_obj;
        if rel_change < 1e-10 {
            break;
        }
    }

    let code = SparseCode::from_entries(
        n_atoms,
        z.iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > 1e-12)
            .map(|(m, &v)| (m, v)),
    )?;
    Ok((code, trace))
}

/// A solved patch: the sparse code plus the fit residual on the patch grid.
#[derive(Debug, Clone)]
pub struct CodedPatch {
    pub code: SparseCode,
    /// `y - D(G) z` per grid point, in patch (normalized) units.
    pub residual: Vec<f64>,
}

impl CodedPatch {
    /// Mean squared residual per grid point.
    pub fn mean_squared_residual(&self) -> f64 {
        if self.residual.is_empty() {
            return 0.0;
        }
        self.residual.iter().map(|r| r * r).sum::<f64>() / self.residual.len() as f64
    }
}

/// Sample the dictionary on the patch's grid and code its values with the
/// chosen solver.
pub fn code_patch(
    patch: &Patch,
    dict: &Dictionary,
    params: &PursuitParams,
    solver: SolverKind,
) -> Result<CodedPatch> {
    if patch.is_empty() {
        return Err(Error::InvalidParam(
            "cannot code a patch with an empty grid".into(),
        ));
    }
    let design = sample_dictionary(dict, &patch.grid)?;
    let code = match solver {
        SolverKind::Omp => omp(&patch.values, &design, params)?,
        SolverKind::Relaxed => relaxed_pursuit(&patch.values, &design, params)?,
    };
    let y = DVector::from_column_slice(&patch.values);
    let residual = &y - design * code.to_dense();
    Ok(CodedPatch {
        code,
        residual: residual.iter().copied().collect(),
    })
}
