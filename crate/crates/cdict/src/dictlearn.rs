//! Continuous k-SVD: learn dictionary coefficients from training patches
//! that each carry their own sample grid.
//!
//! The alternation is classical — sparse-code every patch, then refresh the
//! atoms one at a time on the examples that use them — but because an atom is
//! sampled through a different matrix `Phi(G_i)` in every example, the
//! rank-1 SVD step of grid-based k-SVD has no direct analogue. The atom
//! update instead runs a short alternating least-squares loop on the atom
//! coefficients and the per-example weights, which preserves the descent
//! property the rest of the algorithm relies on.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{basis_matrix, BasisSpec, Dictionary};
use crate::cloud_io::PointCloud;
use crate::geometry::{
    patch_from_neighbors, select_patch_centers, CenterStrategy, NeighborIndex, Patch,
};
use crate::pursuit::{omp, PursuitParams, SparseCode};
use crate::{Error, Result};

/// Training data: one patch per example, heterogeneous grids allowed.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub patches: Vec<Patch>,
}

impl TrainSet {
    pub fn new(patches: Vec<Patch>) -> Self {
        Self { patches }
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Knobs for [`learn`].
#[derive(Debug, Clone, Copy)]
pub struct LearnParams {
    pub n_atoms: usize,
    pub basis: BasisSpec,
    pub sparsity_l: usize,
    pub outer_iters: usize,
    /// Early stop once the mean per-sample squared residual drops this low.
    pub error_threshold: f64,
    pub seed: u64,
    /// Relative ridge weight for the atom update; the absolute regularizer is
    /// this factor times the mean diagonal of the update's normal matrix.
    pub inner_ls_ridge: f64,
}

impl LearnParams {
    pub fn new(basis: BasisSpec, n_atoms: usize) -> Self {
        Self {
            n_atoms,
            basis,
            sparsity_l: 2,
            outer_iters: 20,
            error_threshold: 0.0,
            seed: 0,
            inner_ls_ridge: 1e-8,
        }
    }
}

/// Per-outer-iteration learning diagnostics.
///
/// `per_iteration_error` is the mean over patches of the squared residual
/// divided by the patch point count, recorded after each atom-update sweep.
/// `replaced_atoms` counts unused-atom replacements in the same sweep;
/// iterations with replacements are exempt from monotonicity expectations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnTrace {
    pub per_iteration_error: Vec<f64>,
    pub replaced_atoms: Vec<usize>,
}

impl LearnTrace {
    pub fn len(&self) -> usize {
        self.per_iteration_error.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_iteration_error.is_empty()
    }

    /// Export as CSV with an `iteration,error` header and 0-based iterations.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iteration,error")?;
        for (i, e) in self.per_iteration_error.iter().enumerate() {
            writeln!(w, "{i},{e}")?;
        }
        Ok(())
    }
}

/// Outcome of one atom update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomUpdate {
    Updated,
    /// The atom was unused and got replaced by the worst-represented patch.
    Replaced,
}

/// Draw i.i.d. standard Gaussian coefficients (ChaCha8, column-major fill)
/// and normalize every atom.
pub fn init_dictionary(params: &LearnParams) -> Result<Dictionary> {
    use rand::SeedableRng;
    if params.n_atoms == 0 {
        return Err(Error::InvalidParam("n_atoms must be >= 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
    let n = params.basis.len();
    let mut coeffs = DMatrix::zeros(n, params.n_atoms);
    for m in 0..params.n_atoms {
        for i in 0..n {
            coeffs[(i, m)] = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
        }
    }
    Dictionary::normalized(params.basis, coeffs)
}

/// Alternating least-squares rounds inside one atom update.
pub const ATOM_UPDATE_ROUNDS: usize = 2;

// Per-patch quantities that never change during learning.
struct LearnCache {
    /// Phi(G_i): grid points x basis functions.
    phis: Vec<DMatrix<f64>>,
    /// Phi^T Phi per patch, reused by every atom update.
    grams: Vec<DMatrix<f64>>,
}

fn build_cache(train: &TrainSet, basis: &BasisSpec) -> Result<LearnCache> {
    let phis: Vec<DMatrix<f64>> = train
        .patches
        .par_iter()
        .map(|p| {
            if p.is_empty() {
                return Err(Error::InvalidParam(
                    "training patches must have non-empty grids".into(),
                ));
            }
            basis_matrix(basis, &p.grid)
        })
        .collect::<Result<_>>()?;
    let grams = phis.par_iter().map(|phi| phi.transpose() * phi).collect();
    Ok(LearnCache { phis, grams })
}

fn code_all_cached(
    cache: &LearnCache,
    train: &TrainSet,
    dict: &Dictionary,
    sparsity_l: usize,
) -> Result<Vec<SparseCode>> {
    let params = PursuitParams {
        sparsity_l,
        residual_tol: 0.0,
        lambda: 0.0,
        max_iters: 1,
    };
    train
        .patches
        .par_iter()
        .zip(cache.phis.par_iter())
        .map(|(patch, phi)| {
            let design = phi * dict.coeffs();
            omp(&patch.values, &design, &params)
        })
        .collect()
}

/// OMP-code every training patch against its own sampled design matrix.
pub fn sparse_code_all(
    train: &TrainSet,
    dict: &Dictionary,
    params: &LearnParams,
) -> Result<Vec<SparseCode>> {
    let cache = build_cache(train, dict.basis())?;
    code_all_cached(&cache, train, dict, params.sparsity_l)
}

/// Indices of the training examples whose code uses atom `m`.
pub fn atom_support(codes: &[SparseCode], m: usize) -> Vec<usize> {
    codes
        .iter()
        .enumerate()
        .filter(|(_, c)| c.coeff(m) != 0.0)
        .map(|(i, _)| i)
        .collect()
}

// Combined basis coefficients of a coded patch: A * z restricted to the
// support, optionally leaving one atom out.
fn combined_coeffs(dict: &Dictionary, code: &SparseCode, skip: Option<usize>) -> DVector<f64> {
    let mut combined = DVector::zeros(dict.basis().len());
    for (m, z) in code.iter() {
        if Some(m) == skip {
            continue;
        }
        combined += z * dict.coeffs().column(m);
    }
    combined
}

fn patch_mean_squared_residual(
    phi: &DMatrix<f64>,
    values: &[f64],
    dict: &Dictionary,
    code: &SparseCode,
) -> f64 {
    let recon = phi * combined_coeffs(dict, code, None);
    let sq: f64 = values
        .iter()
        .zip(recon.iter())
        .map(|(y, r)| (y - r) * (y - r))
        .sum();
    sq / values.len() as f64
}

// Solve (H + ridge I) a = rhs with H = sum z^2 Phi^T Phi. Cholesky when the
// ridge makes it definite, minimum-norm SVD otherwise.
fn solve_atom_system(mut h: DMatrix<f64>, rhs: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let n = h.nrows();
    if ridge > 0.0 {
        for i in 0..n {
            h[(i, i)] += ridge;
        }
        if let Some(chol) = h.clone().cholesky() {
            return chol.solve(rhs);
        }
    }
    let svd = h.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = (max_sv * 1e-12).max(f64::MIN_POSITIVE);
    svd.solve(rhs, eps).unwrap_or_else(|_| DVector::zeros(n))
}

fn update_atom_cached(
    cache: &LearnCache,
    train: &TrainSet,
    codes: &mut [SparseCode],
    dict: &mut Dictionary,
    m: usize,
    ridge_factor: f64,
) -> Result<AtomUpdate> {
    let gram_diag = dict.basis().gram_diagonal();
    let continuous_norm2 =
        |a: &DVector<f64>| -> f64 { a.iter().zip(gram_diag.iter()).map(|(c, g)| c * c * g).sum() };

    let support = atom_support(codes, m);

    if support.is_empty() {
        // Replace the dead atom with the projection of the patch the current
        // dictionary represents worst.
        let mut worst = 0usize;
        let mut worst_err = f64::NEG_INFINITY;
        for (i, patch) in train.patches.iter().enumerate() {
            let err = patch_mean_squared_residual(&cache.phis[i], &patch.values, dict, &codes[i]);
            if err > worst_err {
                worst_err = err;
                worst = i;
            }
        }
        let phi = &cache.phis[worst];
        let rhs = phi.transpose() * DVector::from_column_slice(&train.patches[worst].values);
        let h = cache.grams[worst].clone();
        let ridge = ridge_factor * h.trace() / h.nrows() as f64;
        let a = solve_atom_system(h, &rhs, ridge);
        let norm2 = continuous_norm2(&a);
        if norm2 <= 1e-14 {
            // Worst patch is itself (near-)zero, so there is nothing useful
            // to seed the atom with; leave it alone.
            return Ok(AtomUpdate::Updated);
        }
        dict.set_atom(m, &(a / norm2.sqrt()));
        return Ok(AtomUpdate::Replaced);
    }

    // Residuals with atom m's contribution added back.
    let n_basis = dict.basis().len();
    let mut errs: Vec<DVector<f64>> = Vec::with_capacity(support.len());
    let mut z: Vec<f64> = Vec::with_capacity(support.len());
    for &i in &support {
        let combined = combined_coeffs(dict, &codes[i], Some(m));
        let y = DVector::from_column_slice(&train.patches[i].values);
        errs.push(&y - &cache.phis[i] * combined);
        z.push(codes[i].coeff(m));
    }

    let restricted_residual = |a: &DVector<f64>, z: &[f64]| -> f64 {
        support
            .iter()
            .enumerate()
            .map(|(j, &i)| (&errs[j] - &cache.phis[i] * a * z[j]).norm_squared())
            .sum()
    };

    let a_old = dict.atom(m)?;
    let z_old = z.clone();
    let pre = restricted_residual(&a_old, &z_old);

    let mut a = a_old.clone();
    for _ in 0..ATOM_UPDATE_ROUNDS {
        // Atom step: ridge-regularized normal equations with weights fixed.
        let mut h = DMatrix::zeros(n_basis, n_basis);
        let mut rhs = DVector::zeros(n_basis);
        for (j, &i) in support.iter().enumerate() {
            h += &cache.grams[i] * (z[j] * z[j]);
            rhs += cache.phis[i].transpose() * &errs[j] * z[j];
        }
        let ridge = ridge_factor * h.trace() / n_basis as f64;
        a = solve_atom_system(h, &rhs, ridge);

        // Weight step: scalar least squares per example, atom fixed.
        for (j, &i) in support.iter().enumerate() {
            let sampled = &cache.phis[i] * &a;
            let denom = sampled.norm_squared();
            z[j] = if denom > 1e-300 {
                sampled.dot(&errs[j]) / denom
            } else {
                0.0
            };
        }
    }

    let norm2 = continuous_norm2(&a);
    let accepted = if norm2 > 1e-14 {
        let scale = norm2.sqrt();
        a /= scale;
        for zj in z.iter_mut() {
            *zj *= scale;
        }
        let post = restricted_residual(&a, &z);
        post <= pre + 1e-12 * pre.max(1.0)
    } else {
        false
    };

    if !accepted {
        // The alternation failed to improve (collapsed atom or a ridge-induced
        // uptick); keep the previous atom and weights.
        return Ok(AtomUpdate::Updated);
    }

    dict.set_atom(m, &a);
    for (j, &i) in support.iter().enumerate() {
        codes[i].set(m, z[j]);
    }
    Ok(AtomUpdate::Updated)
}

/// Refresh atom `m` (and the coefficients of the examples using it) by
/// alternating least squares on the restricted residual. Unused atoms are
/// replaced by the worst-represented patch's basis projection.
pub fn update_atom(
    train: &TrainSet,
    codes: &mut [SparseCode],
    dict: &mut Dictionary,
    m: usize,
    params: &LearnParams,
) -> Result<AtomUpdate> {
    if codes.len() != train.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} codes for {} training patches",
            codes.len(),
            train.len()
        )));
    }
    if m >= dict.n_atoms() {
        return Err(Error::AtomIndex {
            index: m,
            n_atoms: dict.n_atoms(),
        });
    }
    if let Some(code) = codes.iter().find(|c| c.dimension() != dict.n_atoms()) {
        return Err(Error::DimensionMismatch(format!(
            "code over {} atoms for a dictionary with {}",
            code.dimension(),
            dict.n_atoms()
        )));
    }
    let cache = build_cache(train, dict.basis())?;
    update_atom_cached(&cache, train, codes, dict, m, params.inner_ls_ridge)
}

fn mean_error(
    cache: &LearnCache,
    train: &TrainSet,
    dict: &Dictionary,
    codes: &[SparseCode],
) -> f64 {
    // Collected in patch order and summed sequentially so the float result
    // does not depend on the rayon reduction tree (thread count).
    let per_patch: Vec<f64> = train
        .patches
        .par_iter()
        .zip(codes.par_iter())
        .zip(cache.phis.par_iter())
        .map(|((patch, code), phi)| patch_mean_squared_residual(phi, &patch.values, dict, code))
        .collect();
    per_patch.iter().sum::<f64>() / train.len() as f64
}

/// Run the full learning loop: seeded random init, then up to `outer_iters`
/// rounds of sparse coding plus a sweep of atom updates, recording the mean
/// per-sample squared residual after every round.
pub fn learn(train: &TrainSet, params: &LearnParams) -> Result<(Dictionary, LearnTrace)> {
    if train.is_empty() {
        return Err(Error::InvalidParam(
            "training set must contain at least one patch".into(),
        ));
    }
    if params.outer_iters == 0 {
        return Err(Error::InvalidParam("outer_iters must be >= 1".into()));
    }
    if params.error_threshold < 0.0 {
        return Err(Error::InvalidParam("error_threshold must be >= 0".into()));
    }

    let mut dict = init_dictionary(params)?;
    let cache = build_cache(train, dict.basis())?;
    let mut trace = LearnTrace::default();

    for _ in 0..params.outer_iters {
        let mut codes = code_all_cached(&cache, train, &dict, params.sparsity_l)?;
        let mut replaced = 0usize;
        for m in 0..dict.n_atoms() {
            if update_atom_cached(
                &cache,
                train,
                &mut codes,
                &mut dict,
                m,
                params.inner_ls_ridge,
            )? == AtomUpdate::Replaced
            {
                replaced += 1;
            }
        }
        let err = mean_error(&cache, train, &dict, &codes);
        trace.per_iteration_error.push(err);
        trace.replaced_atoms.push(replaced);
        if err <= params.error_threshold {
            break;
        }
    }
    Ok((dict, trace))
}

/// Extract a training set from a cloud: select centers, query each ball,
/// keep the patches with at least `min_patch_points` usable members. Returns
/// the patches and the number of skipped centers.
pub fn extract_training_set(
    cloud: &PointCloud,
    radius: f64,
    strategy: CenterStrategy,
    min_patch_points: usize,
) -> Result<(TrainSet, usize)> {
    let centers = select_patch_centers(cloud, radius, strategy)?;
    let index = NeighborIndex::from_cloud(cloud);
    let min_pts = min_patch_points.max(3);
    let maybe_patches: Vec<Option<Patch>> = centers
        .par_iter()
        .map(|&c| {
            let idxs = index.radius_neighbors(&cloud.points[c], radius);
            if idxs.len() < min_pts {
                return Ok(None);
            }
            match patch_from_neighbors(cloud, idxs, radius) {
                Ok(p) => Ok(Some(p)),
                Err(Error::DegeneratePatch(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut patches = Vec::new();
    let mut skipped = 0usize;
    for p in maybe_patches {
        match p {
            Some(p) => patches.push(p),
            None => skipped += 1,
        }
    }
    Ok((TrainSet::new(patches), skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use nalgebra::{Point3, Vector2, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy_frame() -> Frame {
        Frame {
            origin: Point3::origin(),
            tangent_u: Vector3::x(),
            tangent_v: Vector3::y(),
            normal: Vector3::z(),
        }
    }

    pub(crate) fn synthetic_patch(rng: &mut ChaCha8Rng, n_pts: usize, values: Vec<f64>) -> Patch {
        let grid = (0..n_pts)
            .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Patch {
            frame: dummy_frame(),
            grid,
            values,
            scale: 1.0,
            indices: (0..n_pts).collect(),
        }
    }

    fn random_grid_patch(rng: &mut ChaCha8Rng, n_pts: usize) -> Patch {
        synthetic_patch(rng, n_pts, vec![0.0; n_pts])
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        let params = LearnParams::new(BasisSpec::new(2, 2), 5);
        let a = init_dictionary(&params).unwrap();
        let b = init_dictionary(&params).unwrap();
        assert_eq!(a.coeffs(), b.coeffs());
        for m in 0..5 {
            assert!((a.atom_norm2(m).unwrap() - 1.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let basis = BasisSpec::new(2, 2);
        let mut p1 = LearnParams::new(basis, 4);
        let mut p2 = LearnParams::new(basis, 4);
        p1.seed = 1;
        p2.seed = 2;
        let a = init_dictionary(&p1).unwrap();
        let b = init_dictionary(&p2).unwrap();
        assert_ne!(a.coeffs(), b.coeffs());
    }

    #[test]
    fn zero_patches_give_empty_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patches: Vec<Patch> = (0..5).map(|_| random_grid_patch(&mut rng, 12)).collect();
        let train = TrainSet::new(patches);
        let params = LearnParams::new(BasisSpec::new(2, 2), 4);
        let dict = init_dictionary(&params).unwrap();
        let codes = sparse_code_all(&train, &dict, &params).unwrap();
        assert!(codes.iter().all(|c| c.is_empty()));
    }

    #[test]
    fn single_patch_codes_like_code_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let values: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let patch = synthetic_patch(&mut rng, 15, values);
        let params = LearnParams::new(BasisSpec::new(2, 2), 6);
        let dict = init_dictionary(&params).unwrap();
        let codes = sparse_code_all(&TrainSet::new(vec![patch.clone()]), &dict, &params).unwrap();
        let direct = crate::pursuit::code_patch(
            &patch,
            &dict,
            &PursuitParams {
                sparsity_l: params.sparsity_l,
                residual_tol: 0.0,
                lambda: 0.0,
                max_iters: 1,
            },
            crate::pursuit::SolverKind::Omp,
        )
        .unwrap();
        assert_eq!(codes[0], direct.code);
    }

    #[test]
    fn atom_support_trivial_cases() {
        let empty = SparseCode::empty(3);
        let uses = SparseCode::from_entries(3, [(1, 2.0)]).unwrap();
        let codes = vec![empty.clone(), uses.clone(), uses, empty];
        assert_eq!(atom_support(&codes, 1), vec![1, 2]);
        assert_eq!(atom_support(&codes, 0), Vec::<usize>::new());
    }

    #[test]
    fn unused_atom_is_replaced_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let train = TrainSet::new(vec![synthetic_patch(&mut rng, 20, values)]);
        let params = LearnParams::new(BasisSpec::new(2, 2), 3);
        let mut dict = init_dictionary(&params).unwrap();
        let mut codes = vec![SparseCode::empty(3)];
        let outcome = update_atom(&train, &mut codes, &mut dict, 1, &params).unwrap();
        assert_eq!(outcome, AtomUpdate::Replaced);
        assert!((dict.atom_norm2(1).unwrap() - 1.0).abs() <= 1e-8);
        assert!(codes[0].is_empty());
    }

    #[test]
    fn single_full_row_rank_patch_reaches_projection_residual() {
        // 3 samples, 4 basis functions: Phi has full row rank, so the update
        // can drive the restricted residual to zero when ridge = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values: Vec<f64> = vec![0.3, -0.8, 0.5];
        let train = TrainSet::new(vec![synthetic_patch(&mut rng, 3, values)]);
        let mut params = LearnParams::new(BasisSpec::new(1, 1), 2);
        params.inner_ls_ridge = 0.0;
        let mut dict = init_dictionary(&params).unwrap();
        let mut codes = vec![SparseCode::from_entries(2, [(0, 1.0)]).unwrap()];

        let cache = build_cache(&train, dict.basis()).unwrap();
        let pre =
            patch_mean_squared_residual(&cache.phis[0], &train.patches[0].values, &dict, &codes[0]);
        update_atom(&train, &mut codes, &mut dict, 0, &params).unwrap();
        let post =
            patch_mean_squared_residual(&cache.phis[0], &train.patches[0].values, &dict, &codes[0]);
        assert!(post <= pre + 1e-12);
        assert!(
            post <= 1e-16,
            "full-row-rank projection should be exact, got {post}"
        );
    }

    #[test]
    fn trace_has_one_entry_per_outer_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let patches: Vec<Patch> = (0..6)
            .map(|_| {
                let values: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
                synthetic_patch(&mut rng, 12, values)
            })
            .collect();
        let train = TrainSet::new(patches);
        let mut params = LearnParams::new(BasisSpec::new(2, 2), 4);
        params.outer_iters = 1;
        let (_, trace) = learn(&train, &params).unwrap();
        assert_eq!(trace.len(), 1);
    }

    #[test]
    fn learn_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let patches: Vec<Patch> = (0..10)
            .map(|_| {
                let values: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
                synthetic_patch(&mut rng, 15, values)
            })
            .collect();
        let train = TrainSet::new(patches);
        let mut params = LearnParams::new(BasisSpec::new(2, 2), 5);
        params.outer_iters = 4;
        params.seed = 42;
        let (d1, t1) = learn(&train, &params).unwrap();
        let (d2, t2) = learn(&train, &params).unwrap();
        assert_eq!(d1.coeffs(), d2.coeffs());
        assert_eq!(t1, t2);
    }

    #[test]
    fn learn_rejects_empty_training_set() {
        let params = LearnParams::new(BasisSpec::new(1, 1), 2);
        assert!(learn(&TrainSet::new(vec![]), &params).is_err());
    }

    #[test]
    fn trace_csv_format() {
        let trace = LearnTrace {
            per_iteration_error: vec![0.5, 0.25],
            replaced_atoms: vec![0, 0],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iteration,error\n0,0.5\n1,0.25\n");
    }
}
