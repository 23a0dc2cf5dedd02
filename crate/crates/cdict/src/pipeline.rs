//! End-to-end denoising and evaluation metrics.
//!
//! Denoising codes every selected patch against the dictionary, evaluates the
//! reconstructed height field at the patch's own sample locations, maps those
//! back to world space and averages the per-point estimates wherever patches
//! overlap. Only the normal displacement changes: the in-plane coordinates of
//! a sample are data, not noise, under the patch signal model.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::basis::{reconstruct_signal, Dictionary};
use crate::cloud_io::{PointCloud, Shape};
use crate::geometry::{
    patch_from_neighbors, patch_to_world, select_patch_centers, CenterStrategy, NeighborIndex,
};
use crate::pursuit::{code_patch, PursuitParams, SolverKind};
use crate::{Error, Result};

/// Parameters of a denoising run.
#[derive(Debug, Clone)]
pub struct DenoiseParams {
    /// Patch ball radius, world units.
    pub radius: f64,
    pub center_strategy: CenterStrategy,
    pub pursuit: PursuitParams,
    pub solver: SolverKind,
    /// Patches with fewer members are skipped (floor of 3; OMP additionally
    /// requires sparsity_l + 1).
    pub min_patch_points: usize,
    /// When set, the relaxed solver's lambda is derived per patch as
    /// `1.5 * (sigma / radius) * sqrt(point count)` — a universal-threshold
    /// style rule with the world-unit noise estimate converted to patch
    /// units. Overrides `pursuit.lambda`.
    pub noise_sigma: Option<f64>,
}

impl DenoiseParams {
    pub fn new(radius: f64, solver: SolverKind) -> Self {
        Self {
            radius,
            center_strategy: CenterStrategy::PoissonStride,
            pursuit: PursuitParams::default(),
            solver,
            min_patch_points: 8,
            noise_sigma: None,
        }
    }
}

/// Accounting of a denoising run.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseReport {
    /// Patches successfully coded.
    pub n_patches: usize,
    /// Centers skipped (too few members or degenerate frame).
    pub n_skipped: usize,
    /// Per input point: number of patch estimates averaged into its output.
    pub per_point_coverage: Vec<usize>,
    /// Mean over coded patches of the per-point squared coding residual.
    pub mean_residual: f64,
}

impl DenoiseReport {
    /// Flat `key value` text block (aggregated coverage statistics).
    pub fn to_text(&self) -> String {
        let n = self.per_point_coverage.len();
        let uncovered = self.per_point_coverage.iter().filter(|&&c| c == 0).count();
        let min = self.per_point_coverage.iter().copied().min().unwrap_or(0);
        let max = self.per_point_coverage.iter().copied().max().unwrap_or(0);
        let mean = if n == 0 {
            0.0
        } else {
            self.per_point_coverage.iter().sum::<usize>() as f64 / n as f64
        };
        format!(
            "n_points {n}\nn_patches {}\nn_skipped {}\nuncovered_points {uncovered}\ncoverage_min {min}\ncoverage_mean {mean}\ncoverage_max {max}\nmean_residual {}\n",
            self.n_patches, self.n_skipped, self.mean_residual
        )
    }
}

struct PatchEstimate {
    indices: Vec<usize>,
    points: Vec<Point3<f64>>,
    mean_squared_residual: f64,
}

/// Denoise a cloud against a dictionary.
///
/// Every selected center yields a patch whose reconstructed displacements are
/// mapped back to world space; each cloud point's output is the arithmetic
/// mean of all estimates from patches containing it (input position when no
/// patch covers it). Patch processing is order-independent, so results do not
/// depend on thread count.
pub fn denoise(
    cloud: &PointCloud,
    dict: &Dictionary,
    params: &DenoiseParams,
) -> Result<(PointCloud, DenoiseReport)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(params.radius > 0.0) {
        return Err(Error::InvalidParam(format!(
            "radius must be > 0, got {}",
            params.radius
        )));
    }
    if params.min_patch_points < 3 {
        return Err(Error::InvalidParam("min_patch_points must be >= 3".into()));
    }
    if let Some(sigma) = params.noise_sigma {
        if !(sigma > 0.0) {
            return Err(Error::InvalidParam(format!(
                "noise_sigma must be > 0 when supplied, got {sigma}"
            )));
        }
    } else if params.solver == SolverKind::Relaxed && !(params.pursuit.lambda > 0.0) {
        return Err(Error::InvalidParam(format!(
            "relaxed solver needs lambda > 0 (or a noise_sigma rule), got {}",
            params.pursuit.lambda
        )));
    }

    let min_pts = match params.solver {
        SolverKind::Omp => params.min_patch_points.max(params.pursuit.sparsity_l + 1),
        SolverKind::Relaxed => params.min_patch_points,
    }
    .max(3);

    let index = NeighborIndex::from_cloud(cloud);
    let centers = select_patch_centers(cloud, params.radius, params.center_strategy)?;

    let estimates: Vec<Option<PatchEstimate>> = centers
        .par_iter()
        .map(|&c| -> Result<Option<PatchEstimate>> {
            let idxs = index.radius_neighbors(&cloud.points[c], params.radius);
            if idxs.len() < min_pts {
                return Ok(None);
            }
            let patch = match patch_from_neighbors(cloud, idxs, params.radius) {
                Ok(p) => p,
                Err(Error::DegeneratePatch(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut pursuit = params.pursuit;
            if let Some(sigma) = params.noise_sigma {
                pursuit.lambda = 1.5 * (sigma / patch.scale) * (patch.len() as f64).sqrt();
            }
            let coded = code_patch(&patch, dict, &pursuit, params.solver)?;
            let heights = reconstruct_signal(dict, &coded.code, &patch.grid)?;
            let points = patch_to_world(&patch, &heights)?;
            Ok(Some(PatchEstimate {
                indices: patch.indices,
                points,
                mean_squared_residual: coded.mean_squared_residual(),
            }))
        })
        .collect::<Result<_>>()?;

    // Sequential accumulation in center order keeps the float sums identical
    // regardless of how the map above was scheduled.
    let n = cloud.len();
    let mut sums = vec![Vector3::<f64>::zeros(); n];
    let mut coverage = vec![0usize; n];
    let mut n_patches = 0usize;
    let mut n_skipped = 0usize;
    let mut residual_sum = 0.0;
    for est in &estimates {
        match est {
            Some(est) => {
                n_patches += 1;
                residual_sum += est.mean_squared_residual;
                for (&idx, p) in est.indices.iter().zip(&est.points) {
                    sums[idx] += p.coords;
                    coverage[idx] += 1;
                }
            }
            None => n_skipped += 1,
        }
    }

    let points: Vec<Point3<f64>> = (0..n)
        .map(|i| {
            if coverage[i] > 0 {
                Point3::from(sums[i] / coverage[i] as f64)
            } else {
                cloud.points[i]
            }
        })
        .collect();

    let report = DenoiseReport {
        n_patches,
        n_skipped,
        per_point_coverage: coverage,
        mean_residual: if n_patches > 0 {
            residual_sum / n_patches as f64
        } else {
            0.0
        },
    };
    Ok((
        PointCloud {
            points,
            name: cloud.name.clone(),
        },
        report,
    ))
}

/// Symmetric Chamfer distance: the two directed mean nearest-neighbor
/// distances, averaged.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let directed = |from: &PointCloud, to_index: &NeighborIndex| -> f64 {
        // Ordered collect + sequential sum keeps the value thread-count
        // independent.
        let dists: Vec<f64> = from
            .points
            .par_iter()
            .map(|p| to_index.nearest_distance(p).unwrap_or(f64::INFINITY))
            .collect();
        dists.iter().sum::<f64>() / from.len() as f64
    };
    let index_a = NeighborIndex::from_cloud(a);
    let index_b = NeighborIndex::from_cloud(b);
    Ok(0.5 * (directed(a, &index_b) + directed(b, &index_a)))
}

fn saddle_distance(p: &Point3<f64>) -> f64 {
    // Closest point on the graph z = (x^2 - y^2)/2 via damped Newton on the
    // squared distance, multistarted to dodge the saddle's two valleys.
    let g = |s: f64, t: f64| -> f64 {
        let h = Shape::saddle_height(s, t);
        (s - p.x).powi(2) + (t - p.y).powi(2) + (h - p.z).powi(2)
    };
    let mut best = f64::INFINITY;
    for start in [
        (p.x, p.y),
        (p.x + 0.1, p.y),
        (p.x - 0.1, p.y),
        (p.x, p.y + 0.1),
        (p.x, p.y - 0.1),
    ] {
        let (mut s, mut t) = start;
        for _ in 0..80 {
            let h = Shape::saddle_height(s, t);
            let q = h - p.z;
            let gs = 2.0 * (s - p.x) + 2.0 * q * s;
            let gt = 2.0 * (t - p.y) - 2.0 * q * t;
            let hss = 2.0 + 2.0 * s * s + 2.0 * q;
            let htt = 2.0 + 2.0 * t * t - 2.0 * q;
            let hst = -2.0 * s * t;
            let det = hss * htt - hst * hst;
            let (ds, dt) = if det.abs() > 1e-12 && hss + htt > 0.0 {
                ((gs * htt - gt * hst) / det, (gt * hss - gs * hst) / det)
            } else {
                (0.25 * gs, 0.25 * gt)
            };
            s -= ds;
            t -= dt;
            if ds.abs() + dt.abs() < 1e-15 {
                break;
            }
        }
        best = best.min(g(s, t));
    }
    best.max(0.0).sqrt()
}

/// Distance from a point to an analytic surface.
pub fn surface_distance(p: &Point3<f64>, shape: Shape) -> f64 {
    match shape {
        Shape::Plane => p.z.abs(),
        Shape::Sphere => (p.coords.norm() - 1.0).abs(),
        Shape::Saddle => saddle_distance(p),
    }
}

/// Root-mean-square point-to-surface distance (0 for an empty cloud).
pub fn rmse_to_surface(cloud: &PointCloud, shape: Shape) -> f64 {
    if cloud.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = cloud
        .points
        .par_iter()
        .map(|p| {
            let d = surface_distance(p, shape);
            d * d
        })
        .collect();
    (sq.iter().sum::<f64>() / cloud.len() as f64).sqrt()
}
