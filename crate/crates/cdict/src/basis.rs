//! The fixed continuous function family and dictionaries over it.
//!
//! Basis functions are cosine tensor products on remapped coordinates
//! `ut = (u+1)/2`, `vt = (v+1)/2` in [0,1]:
//!
//! ```text
//! phi_{k,l}(u, v) = cos(pi k ut) * cos(pi l vt),  0 <= k <= K, 0 <= l <= K'
//! ```
//!
//! The family is orthogonal in L2([0,1]^2) with a diagonal Gram matrix
//! (gamma_0 = 1, gamma_k = 1/2 for k >= 1, entry (k,l) = gamma_k * gamma_l),
//! which gives closed-form continuous norms for atom normalization. A
//! dictionary is a coefficient matrix A (basis functions x atoms); atom m is
//! the continuous function `phi(u)^T a_m`, sampled wherever a patch needs it.
//!
//! The flat index of (k, l) is `k*(K'+1) + l`; dictionary files and all
//! coefficient rows use this ordering.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::pursuit::SparseCode;
use crate::{Error, Result};

/// Frequency limits of the cosine tensor basis; size N = (K+1)(K'+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    max_freq_u: usize,
    max_freq_v: usize,
}

impl BasisSpec {
    pub fn new(max_freq_u: usize, max_freq_v: usize) -> Self {
        Self {
            max_freq_u,
            max_freq_v,
        }
    }

    pub fn max_freq_u(&self) -> usize {
        self.max_freq_u
    }

    pub fn max_freq_v(&self) -> usize {
        self.max_freq_v
    }

    /// Number of basis functions N.
    pub fn len(&self) -> usize {
        (self.max_freq_u + 1) * (self.max_freq_v + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Canonical flat index of frequency pair (k, l).
    pub fn flat_index(&self, k: usize, l: usize) -> usize {
        debug_assert!(k <= self.max_freq_u && l <= self.max_freq_v);
        k * (self.max_freq_v + 1) + l
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    pub fn freqs(&self, flat: usize) -> (usize, usize) {
        (flat / (self.max_freq_v + 1), flat % (self.max_freq_v + 1))
    }

    /// Diagonal of the continuous Gram matrix, flat ordering.
    pub fn gram_diagonal(&self) -> DVector<f64> {
        let gamma = |k: usize| if k == 0 { 1.0 } else { 0.5 };
        DVector::from_iterator(
            self.len(),
            (0..self.len()).map(|i| {
                let (k, l) = self.freqs(i);
                gamma(k) * gamma(l)
            }),
        )
    }
}

fn check_domain(point: Vector2<f64>) -> Result<()> {
    if point.x.abs() > 1.0 || point.y.abs() > 1.0 {
        return Err(Error::OutsideDomain {
            u: point.x,
            v: point.y,
        });
    }
    Ok(())
}

/// Evaluate all N basis functions at one domain point, flat ordering.
pub fn eval_basis(spec: &BasisSpec, point: Vector2<f64>) -> Result<DVector<f64>> {
    check_domain(point)?;
    let ut = (point.x + 1.0) / 2.0;
    let vt = (point.y + 1.0) / 2.0;
    let cu: Vec<f64> = (0..=spec.max_freq_u)
        .map(|k| (PI * k as f64 * ut).cos())
        .collect();
    let cv: Vec<f64> = (0..=spec.max_freq_v)
        .map(|l| (PI * l as f64 * vt).cos())
        .collect();
    let mut out = DVector::zeros(spec.len());
    for k in 0..=spec.max_freq_u {
        for l in 0..=spec.max_freq_v {
            out[spec.flat_index(k, l)] = cu[k] * cv[l];
        }
    }
    Ok(out)
}

/// A set of continuous atoms: coefficient matrix A with one column per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    basis: BasisSpec,
    coeffs: DMatrix<f64>,
}

impl Dictionary {
    /// Wrap a coefficient matrix. Requires finite entries and
    /// `coeffs.nrows() == basis.len()`; does not touch atom norms.
    pub fn new(basis: BasisSpec, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient matrix has {} rows but the basis has {} functions",
                coeffs.nrows(),
                basis.len()
            )));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam(
                "dictionary coefficients must be finite".into(),
            ));
        }
        Ok(Self { basis, coeffs })
    }

    /// Like [`new`](Self::new) but normalizes every atom to unit continuous
    /// L2 norm.
    pub fn normalized(basis: BasisSpec, coeffs: DMatrix<f64>) -> Result<Self> {
        normalize_atoms(&Self::new(basis, coeffs)?)
    }

    /// The default starting dictionary: the first `n_atoms` pure basis
    /// functions (identity coefficients), normalized.
    pub fn identity_init(basis: BasisSpec, n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 || n_atoms > basis.len() {
            return Err(Error::InvalidParam(format!(
                "identity initialization needs 1 <= n_atoms <= {} (basis size), got {n_atoms}",
                basis.len()
            )));
        }
        let coeffs = DMatrix::from_fn(basis.len(), n_atoms, |i, m| f64::from(i == m));
        Self::normalized(basis, coeffs)
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn n_atoms(&self) -> usize {
        self.coeffs.ncols()
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    /// Coefficient vector of atom `m`.
    pub fn atom(&self, m: usize) -> Result<DVector<f64>> {
        if m >= self.n_atoms() {
            return Err(Error::AtomIndex {
                index: m,
                n_atoms: self.n_atoms(),
            });
        }
        Ok(self.coeffs.column(m).into_owned())
    }

    /// Continuous squared L2 norm of atom `m`.
    pub fn atom_norm2(&self, m: usize) -> Result<f64> {
        let a = self.atom(m)?;
        let gram = self.basis.gram_diagonal();
        Ok(a.iter().zip(gram.iter()).map(|(c, g)| c * c * g).sum())
    }

    pub(crate) fn set_atom(&mut self, m: usize, coeffs: &DVector<f64>) {
        self.coeffs.column_mut(m).copy_from(coeffs);
    }
}

/// Rescale every atom to unit continuous L2 norm over the domain.
pub fn normalize_atoms(dict: &Dictionary) -> Result<Dictionary> {
    let gram = dict.basis.gram_diagonal();
    let mut coeffs = dict.coeffs.clone();
    for m in 0..coeffs.ncols() {
        let norm2: f64 = coeffs
            .column(m)
            .iter()
            .zip(gram.iter())
            .map(|(c, g)| c * c * g)
            .sum();
        if norm2 <= 1e-14 {
            return Err(Error::ZeroAtom { index: m });
        }
        let inv = 1.0 / norm2.sqrt();
        coeffs.column_mut(m).scale_mut(inv);
    }
    Dictionary::new(dict.basis, coeffs)
}

/// Sample every atom at every grid point: D(G) = Phi(G) * A, one row per
/// grid point, one column per atom.
pub fn sample_dictionary(dict: &Dictionary, grid: &[Vector2<f64>]) -> Result<DMatrix<f64>> {
    let phi = basis_matrix(dict.basis(), grid)?;
    Ok(phi * &dict.coeffs)
}

/// The plain basis sample matrix Phi(G) (grid points x basis functions).
pub fn basis_matrix(spec: &BasisSpec, grid: &[Vector2<f64>]) -> Result<DMatrix<f64>> {
    let mut phi = DMatrix::zeros(grid.len(), spec.len());
    for (i, &g) in grid.iter().enumerate() {
        let row = eval_basis(spec, g)?;
        phi.row_mut(i).copy_from(&row.transpose());
    }
    Ok(phi)
}

/// Value of atom `m` at one domain point.
pub fn eval_atom(dict: &Dictionary, m: usize, point: Vector2<f64>) -> Result<f64> {
    let a = dict.atom(m)?;
    let phi = eval_basis(dict.basis(), point)?;
    Ok(phi.dot(&a))
}

/// Evaluate the coded signal `sum_m z_m d_m` at arbitrary domain points
/// (not restricted to the grid the code was fit on).
pub fn reconstruct_signal(
    dict: &Dictionary,
    code: &SparseCode,
    points: &[Vector2<f64>],
) -> Result<Vec<f64>> {
    if code.dimension() != dict.n_atoms() {
        return Err(Error::DimensionMismatch(format!(
            "code is over {} atoms but the dictionary has {}",
            code.dimension(),
            dict.n_atoms()
        )));
    }
    // Collapse the sparse combination to one coefficient vector in the basis.
    let mut combined = DVector::zeros(dict.basis.len());
    for (m, z) in code.iter() {
        combined += z * dict.coeffs.column(m);
    }
    points
        .iter()
        .map(|&p| Ok(eval_basis(dict.basis(), p)?.dot(&combined)))
        .collect()
}

const CDICT_MAGIC: &str = "CDICT v1";

/// Write the `CDICT v1` text format.
pub fn write_dictionary<W: Write>(dict: &Dictionary, w: &mut W) -> Result<()> {
    writeln!(w, "{CDICT_MAGIC}")?;
    writeln!(
        w,
        "basis cos {} {}",
        dict.basis.max_freq_u, dict.basis.max_freq_v
    )?;
    writeln!(w, "atoms {}", dict.n_atoms())?;
    for i in 0..dict.basis.len() {
        let row: Vec<String> = (0..dict.n_atoms())
            .map(|m| dict.coeffs[(i, m)].to_string())
            .collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn write_dictionary_file(dict: &Dictionary, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dictionary(dict, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Read the `CDICT v1` text format. Atoms must come back unit-norm; the
/// writer always produces exact round-trip decimals, so this only rejects
/// files edited by hand into an inconsistent state.
pub fn read_dictionary<R: Read>(r: R) -> Result<Dictionary> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    let mut next = |what: &str, at: usize| -> Result<(usize, String)> {
        match lines.next() {
            Some((idx, line)) => Ok((idx + 1, line?)),
            None => Err(Error::Parse {
                line: at,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };

    let (lineno, magic) = next("the 'CDICT v1' header", 1)?;
    if magic.trim() != CDICT_MAGIC {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected '{CDICT_MAGIC}' header, found '{}'", magic.trim()),
        });
    }

    let (lineno, basis_line) = next("the basis line", 2)?;
    let toks: Vec<&str> = basis_line.split_whitespace().collect();
    let (k, l) = match toks.as_slice() {
        ["basis", "cos", k, l] => (
            k.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad frequency '{k}'"),
            })?,
            l.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad frequency '{l}'"),
            })?,
        ),
        _ => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 'basis cos K K\'', found '{}'", basis_line.trim()),
            })
        }
    };
    // Sanity cap so a corrupt header cannot request a huge allocation.
    if (k + 1).saturating_mul(l + 1) > 1 << 20 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("basis size ({k} x {l}) is implausibly large"),
        });
    }
    let basis = BasisSpec::new(k, l);

    let (lineno, atoms_line) = next("the atoms line", 3)?;
    let toks: Vec<&str> = atoms_line.split_whitespace().collect();
    let n_atoms = match toks.as_slice() {
        ["atoms", m] => m.parse::<usize>().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad atom count '{m}'"),
        })?,
        _ => {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 'atoms M', found '{}'", atoms_line.trim()),
            })
        }
    };
    if n_atoms == 0 || n_atoms > 1 << 20 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("implausible atom count {n_atoms}"),
        });
    }

    let mut coeffs = DMatrix::zeros(basis.len(), n_atoms);
    let mut last = lineno;
    for i in 0..basis.len() {
        let (lineno, row) = next(
            &format!("coefficient row {} of {}", i + 1, basis.len()),
            last + 1,
        )?;
        last = lineno;
        let toks: Vec<&str> = row.split_whitespace().collect();
        if toks.len() != n_atoms {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} coefficients, found {}", n_atoms, toks.len()),
            });
        }
        for (m, tok) in toks.iter().enumerate() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("bad coefficient '{tok}'"),
            })?;
            coeffs[(i, m)] = v;
        }
    }

    let dict = Dictionary::new(basis, coeffs)?;
    for m in 0..dict.n_atoms() {
        let norm2 = dict.atom_norm2(m)?;
        if (norm2 - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidParam(format!(
                "atom {m} is not unit-norm (norm^2 = {norm2}); regenerate the file"
            )));
        }
    }
    Ok(dict)
}

pub fn read_dictionary_file(path: &Path) -> Result<Dictionary> {
    read_dictionary(File::open(path)?)
}
