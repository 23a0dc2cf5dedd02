//! Neighborhood queries, PCA tangent frames and patch extraction.
//!
//! A patch expresses a radius-`r` neighborhood in a local orthonormal frame
//! fitted by PCA: in-plane coordinates (u, v) and normal displacements w, all
//! divided by `r` so the grid lands in the square [-1,1]^2 that the basis
//! functions live on. `patch_to_world` inverts the mapping, which is what
//! turns a denoised height field back into 3D points.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector2, Vector3};

use crate::cloud_io::PointCloud;
use crate::{Error, Result};

/// Right-handed orthonormal frame anchored at a neighborhood centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub origin: Point3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    pub normal: Vector3<f64>,
}

/// A local signal: sample locations in [-1,1]^2 with normal displacements,
/// plus everything needed to map values back to world space.
#[derive(Debug, Clone)]
pub struct Patch {
    pub frame: Frame,
    /// Normalized in-plane sample locations, one per neighbor.
    pub grid: Vec<Vector2<f64>>,
    /// Normal displacements, divided by `scale` like the grid.
    pub values: Vec<f64>,
    /// Half-width used for normalization (the query radius), world units.
    pub scale: f64,
    /// Indices of the member points in the parent cloud.
    pub indices: Vec<usize>,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

/// Patch-center selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterStrategy {
    /// Every point becomes a patch center.
    All,
    /// Greedy subsample with minimum spacing radius/2; every point stays
    /// within radius/2 of a selected center, so patch coverage is total.
    PoissonStride,
}

impl FromStr for CenterStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(CenterStrategy::All),
            "poisson_stride" | "poisson-stride" => Ok(CenterStrategy::PoissonStride),
            other => Err(Error::InvalidParam(format!(
                "unknown center strategy '{other}' (expected 'all' or 'poisson_stride')"
            ))),
        }
    }
}

impl fmt::Display for CenterStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CenterStrategy::All => write!(f, "all"),
            CenterStrategy::PoissonStride => write!(f, "poisson_stride"),
        }
    }
}

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct KdNode {
    min: [f64; 3],
    max: [f64; 3],
    // u32::MAX marks a leaf; leaves own order[start..end].
    left: u32,
    right: u32,
    start: u32,
    end: u32,
}

/// Kd-tree over a fixed point set. Queries return exactly what a brute-force
/// distance scan would (same arithmetic, inclusive radius).
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    pts: Vec<[f64; 3]>,
    nodes: Vec<KdNode>,
    order: Vec<u32>,
    root: u32,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl NeighborIndex {
    pub fn from_cloud(cloud: &PointCloud) -> Self {
        Self::build(cloud.points.iter().map(|p| [p.x, p.y, p.z]).collect())
    }

    fn build(pts: Vec<[f64; 3]>) -> Self {
        let n = pts.len();
        let mut index = NeighborIndex {
            pts,
            nodes: Vec::new(),
            order: (0..n as u32).collect(),
            root: 0,
        };
        if n > 0 {
            index.nodes.reserve(2 * n / LEAF_SIZE + 2);
            index.root = index.build_range(0, n);
        }
        index
    }

    fn build_range(&mut self, start: usize, end: usize) -> u32 {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            let p = &self.pts[i as usize];
            for axis in 0..3 {
                min[axis] = min[axis].min(p[axis]);
                max[axis] = max[axis].max(p[axis]);
            }
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(KdNode {
            min,
            max,
            left: u32::MAX,
            right: u32::MAX,
            start: start as u32,
            end: end as u32,
        });
        let count = end - start;
        if count > LEAF_SIZE {
            let mut axis = 0;
            for a in 1..3 {
                if max[a] - min[a] > max[axis] - min[axis] {
                    axis = a;
                }
            }
            let mid = count / 2;
            let pts = &self.pts;
            self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
                pts[a as usize][axis]
                    .partial_cmp(&pts[b as usize][axis])
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let left = self.build_range(start, start + mid);
            let right = self.build_range(start + mid, end);
            self.nodes[id as usize].left = left;
            self.nodes[id as usize].right = right;
        }
        id
    }

    fn box_dist2(node: &KdNode, q: &[f64; 3]) -> f64 {
        let mut d2 = 0.0;
        for axis in 0..3 {
            let v = q[axis];
            let d = if v < node.min[axis] {
                node.min[axis] - v
            } else if v > node.max[axis] {
                v - node.max[axis]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }

    /// Indices of all points within `radius` of `query` (inclusive), sorted.
    pub fn radius_neighbors(&self, query: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.pts.is_empty() {
            return out;
        }
        let q = [query.x, query.y, query.z];
        let r2 = radius * radius;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if Self::box_dist2(node, &q) > r2 {
                continue;
            }
            if node.left == u32::MAX {
                for &i in &self.order[node.start as usize..node.end as usize] {
                    if dist2(&self.pts[i as usize], &q) <= r2 {
                        out.push(i as usize);
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Distance from `query` to its nearest indexed point.
    /// Returns `None` on an empty index.
    pub fn nearest_distance(&self, query: &Point3<f64>) -> Option<f64> {
        if self.pts.is_empty() {
            return None;
        }
        let q = [query.x, query.y, query.z];
        let mut best = f64::INFINITY;
        self.nearest_rec(self.root, &q, &mut best);
        Some(best.sqrt())
    }

    fn nearest_rec(&self, id: u32, q: &[f64; 3], best: &mut f64) {
        let node = &self.nodes[id as usize];
        if Self::box_dist2(node, q) > *best {
            return;
        }
        if node.left == u32::MAX {
            for &i in &self.order[node.start as usize..node.end as usize] {
                let d2 = dist2(&self.pts[i as usize], q);
                if d2 < *best {
                    *best = d2;
                }
            }
        } else {
            let (l, r) = (node.left, node.right);
            let dl = Self::box_dist2(&self.nodes[l as usize], q);
            let dr = Self::box_dist2(&self.nodes[r as usize], q);
            if dl <= dr {
                self.nearest_rec(l, q, best);
                self.nearest_rec(r, q, best);
            } else {
                self.nearest_rec(r, q, best);
                self.nearest_rec(l, q, best);
            }
        }
    }
}

/// Indices of all points within `radius` of the point at `center_index`,
/// including the center itself.
pub fn neighbors(cloud: &PointCloud, center_index: usize, radius: f64) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParam(format!(
            "radius must be > 0, got {radius}"
        )));
    }
    let center = cloud
        .points
        .get(center_index)
        .ok_or_else(|| Error::InvalidParam(format!("center index {center_index} out of range")))?;
    let index = NeighborIndex::from_cloud(cloud);
    Ok(index.radius_neighbors(center, radius))
}

/// Deterministic sign convention: flip so the largest-magnitude component is
/// positive, ties broken by the earliest axis.
fn apply_sign_rule(v: Vector3<f64>) -> Vector3<f64> {
    let mut dominant = 0;
    for axis in 1..3 {
        if v[axis].abs() > v[dominant].abs() {
            dominant = axis;
        }
    }
    if v[dominant] < 0.0 {
        -v
    } else {
        v
    }
}

/// Fit a tangent frame by PCA: origin at the centroid, normal along the
/// smallest covariance eigenvector, tangent_u along the largest.
pub fn fit_frame(points: &[Point3<f64>]) -> Result<Frame> {
    if points.len() < 3 {
        return Err(Error::DegeneratePatch(format!(
            "need at least 3 points to fit a frame, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mut centroid = Vector3::zeros();
    for p in points {
        centroid += p.coords;
    }
    centroid /= n;

    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p.coords - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eigen = SymmetricEigen::new(cov);
    // Sort eigenpairs descending.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let largest = eigen.eigenvalues[idx[0]];
    let middle = eigen.eigenvalues[idx[1]];
    if !(largest > 0.0) || middle <= largest * 1e-12 {
        return Err(Error::DegeneratePatch(
            "points are (near-)collinear; covariance rank < 2".into(),
        ));
    }

    let tangent_u = apply_sign_rule(eigen.eigenvectors.column(idx[0]).normalize());
    let normal = apply_sign_rule(eigen.eigenvectors.column(idx[2]).normalize());
    let tangent_v = normal.cross(&tangent_u);

    Ok(Frame {
        origin: Point3::from(centroid),
        tangent_u,
        tangent_v,
        normal,
    })
}

// Float slack allowed when clamping grid coordinates onto the domain border.
const DOMAIN_CLAMP_EPS: f64 = 1e-12;

/// Build a patch from an explicit member-index list.
///
/// The frame comes from PCA over the full neighborhood. Members whose
/// centroid-relative in-plane offset falls outside the normalized square
/// (possible for lopsided boundary neighborhoods, where the centroid shifts
/// away from the query center) are trimmed rather than failing the whole
/// patch; the query center itself can never be trimmed. Degenerate only when
/// fewer than 3 members survive.
///
/// This is the workhorse behind [`extract_patch`]; pipelines that already
/// ran their own neighborhood queries call it directly.
pub fn patch_from_neighbors(cloud: &PointCloud, indices: Vec<usize>, radius: f64) -> Result<Patch> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParam(format!(
            "radius must be > 0, got {radius}"
        )));
    }
    let pts: Vec<Point3<f64>> = indices
        .iter()
        .map(|&i| {
            cloud
                .points
                .get(i)
                .copied()
                .ok_or_else(|| Error::InvalidParam(format!("point index {i} out of range")))
        })
        .collect::<Result<_>>()?;
    let frame = fit_frame(&pts)?;

    let scale = radius;
    let mut grid = Vec::with_capacity(pts.len());
    let mut values = Vec::with_capacity(pts.len());
    let mut kept = Vec::with_capacity(pts.len());
    for (p, &idx) in pts.iter().zip(&indices) {
        let d = p - frame.origin;
        let u = d.dot(&frame.tangent_u) / scale;
        let v = d.dot(&frame.tangent_v) / scale;
        let w = d.dot(&frame.normal) / scale;
        let (Some(u), Some(v)) = (clamp_domain(u), clamp_domain(v)) else {
            continue;
        };
        grid.push(Vector2::new(u, v));
        values.push(w);
        kept.push(idx);
    }
    if kept.len() < 3 {
        return Err(Error::DegeneratePatch(format!(
            "only {} of {} members fit the normalized patch domain",
            kept.len(),
            indices.len()
        )));
    }
    Ok(Patch {
        frame,
        grid,
        values,
        scale,
        indices: kept,
    })
}

fn clamp_domain(x: f64) -> Option<f64> {
    if x.abs() <= 1.0 {
        Some(x)
    } else if x.abs() <= 1.0 + DOMAIN_CLAMP_EPS {
        Some(x.clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Extract the radius-`radius` patch centered on `center_index`.
pub fn extract_patch(cloud: &PointCloud, center_index: usize, radius: f64) -> Result<Patch> {
    let indices = neighbors(cloud, center_index, radius)?;
    patch_from_neighbors(cloud, indices, radius)
}

/// Map patch samples back to world space with replacement displacement
/// values (`new_values[i]` substitutes `patch.values[i]`).
pub fn patch_to_world(patch: &Patch, new_values: &[f64]) -> Result<Vec<Point3<f64>>> {
    if new_values.len() != patch.grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "patch has {} samples but {} values were supplied",
            patch.grid.len(),
            new_values.len()
        )));
    }
    let f = &patch.frame;
    Ok(patch
        .grid
        .iter()
        .zip(new_values)
        .map(|(g, &w)| {
            f.origin + patch.scale * (g.x * f.tangent_u + g.y * f.tangent_v + w * f.normal)
        })
        .collect())
}

/// Choose patch centers. `All` returns every index; `PoissonStride` greedily
/// keeps points at least radius/2 apart (in index order), which still covers
/// every cloud point within radius/2.
pub fn select_patch_centers(
    cloud: &PointCloud,
    radius: f64,
    strategy: CenterStrategy,
) -> Result<Vec<usize>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParam(format!(
            "radius must be > 0, got {radius}"
        )));
    }
    match strategy {
        CenterStrategy::All => Ok((0..cloud.len()).collect()),
        CenterStrategy::PoissonStride => {
            let stride = radius * 0.5;
            let stride2 = stride * stride;
            let mut selected: Vec<usize> = Vec::new();
            for (i, p) in cloud.points.iter().enumerate() {
                let covered = selected
                    .iter()
                    .any(|&s| (cloud.points[s] - p).norm_squared() <= stride2);
                if !covered {
                    selected.push(i);
                }
            }
            Ok(selected)
        }
    }
}
