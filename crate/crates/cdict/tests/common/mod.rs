//! Shared test oracles. Everything here is implemented independently of the
//! library's own code paths (hand-rolled Jacobi eigensolver, Gaussian
//! elimination, coordinate descent, exhaustive enumeration) so the two sides
//! of each comparison cannot share a bug.

#![allow(dead_code)]

use cdict::cloud_io::PointCloud;
use cdict::dictlearn::TrainSet;
use cdict::geometry::{Frame, Patch};
use nalgebra::{Point3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(n) distance scan, inclusive radius.
pub fn brute_force_neighbors(
    points: &[Point3<f64>],
    center: &Point3<f64>,
    radius: f64,
) -> Vec<usize> {
    let r2 = radius * radius;
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let dx = p.x - center.x;
            let dy = p.y - center.y;
            let dz = p.z - center.z;
            dx * dx + dy * dy + dz * dz <= r2
        })
        .map(|(i, _)| i)
        .collect()
}

/// O(n^2) symmetric Chamfer distance.
pub fn brute_force_chamfer(a: &PointCloud, b: &PointCloud) -> f64 {
    let directed = |from: &PointCloud, to: &PointCloud| -> f64 {
        let total: f64 = from
            .points
            .iter()
            .map(|p| {
                to.points
                    .iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        total / from.len() as f64
    };
    0.5 * (directed(a, b) + directed(b, a))
}

/// Cyclic Jacobi eigensolver for a symmetric 3x3 matrix. Returns
/// (eigenvalues, eigenvectors as columns), unsorted.
pub fn jacobi_eig3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..100 {
        let off: f64 = (0..3)
            .flat_map(|p| ((p + 1)..3).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        if off < 1e-32 {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..3 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Gaussian elimination with partial pivoting. Returns `None` when the
/// system is numerically singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut s = b[col];
        for k in (col + 1)..n {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Least squares on explicit columns via normal equations + Gauss.
pub fn normal_eq_ls(cols: &[&[f64]], y: &[f64]) -> Option<Vec<f64>> {
    let k = cols.len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut aty = vec![0.0; k];
    for i in 0..k {
        for j in 0..k {
            ata[i][j] = cols[i].iter().zip(cols[j]).map(|(a, b)| a * b).sum();
        }
        aty[i] = cols[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    gauss_solve(ata, aty)
}

fn residual2(cols: &[&[f64]], coeffs: &[f64], y: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(row, &yv)| {
            let fit: f64 = cols.iter().zip(coeffs).map(|(c, &z)| c[row] * z).sum();
            (yv - fit) * (yv - fit)
        })
        .sum()
}

pub struct ExhaustiveBest {
    pub support: Vec<usize>,
    pub coeffs: Vec<f64>,
    pub residual2: f64,
    /// Best residual over all *other* supports; gauges uniqueness.
    pub runner_up: f64,
}

/// Enumerate every size-k support, solve each by least squares, return the
/// minimum-residual solution.
pub fn exhaustive_best_support(
    columns: &[Vec<f64>],
    y: &[f64],
    k: usize,
) -> Option<ExhaustiveBest> {
    let m = columns.len();
    let mut best: Option<ExhaustiveBest> = None;
    let mut runner_up = f64::INFINITY;
    let mut supports: Vec<Vec<usize>> = Vec::new();
    fn combos(m: usize, k: usize, from: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in from..m {
            cur.push(i);
            combos(m, k, i + 1, cur, out);
            cur.pop();
        }
    }
    combos(m, k, 0, &mut Vec::new(), &mut supports);
    for support in supports {
        let cols: Vec<&[f64]> = support.iter().map(|&i| columns[i].as_slice()).collect();
        let Some(coeffs) = normal_eq_ls(&cols, y) else {
            continue;
        };
        let r2 = residual2(&cols, &coeffs, y);
        match &mut best {
            Some(b) if r2 < b.residual2 => {
                runner_up = b.residual2;
                *b = ExhaustiveBest {
                    support,
                    coeffs,
                    residual2: r2,
                    runner_up,
                };
            }
            Some(b) => {
                if r2 < runner_up {
                    runner_up = r2;
                    b.runner_up = runner_up;
                }
            }
            None => {
                best = Some(ExhaustiveBest {
                    support,
                    coeffs,
                    residual2: r2,
                    runner_up,
                });
            }
        }
    }
    best.map(|mut b| {
        b.runner_up = runner_up;
        b
    })
}

/// Independent greedy selection (normalized correlation, normal-equation
/// refits). Used to decide whether the exhaustive optimum is reachable
/// greedily before holding OMP to it.
pub fn greedy_reference_support(columns: &[Vec<f64>], y: &[f64], k: usize) -> Option<Vec<usize>> {
    let mut residual: Vec<f64> = y.to_vec();
    let mut picked: Vec<usize> = Vec::new();
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for (j, col) in columns.iter().enumerate() {
            if picked.contains(&j) {
                continue;
            }
            let norm: f64 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let corr: f64 = col
                .iter()
                .zip(&residual)
                .map(|(a, r)| a * r)
                .sum::<f64>()
                .abs()
                / norm;
            if best.map_or(true, |(_, s)| corr > s) {
                best = Some((j, corr));
            }
        }
        let (j, _) = best?;
        picked.push(j);
        let cols: Vec<&[f64]> = picked.iter().map(|&i| columns[i].as_slice()).collect();
        let coeffs = normal_eq_ls(&cols, y)?;
        for (row, r) in residual.iter_mut().enumerate() {
            let fit: f64 = cols.iter().zip(&coeffs).map(|(c, &z)| c[row] * z).sum();
            *r = y[row] - fit;
        }
    }
    picked.sort_unstable();
    Some(picked)
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Coordinate-descent solver for `0.5 ||y - Az||^2 + lambda ||z||_1`;
/// an algorithmically independent route to the same convex optimum.
pub fn cd_lasso(columns: &[Vec<f64>], y: &[f64], lambda: f64, sweeps: usize) -> Vec<f64> {
    let m = columns.len();
    let norms2: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let mut z = vec![0.0; m];
    let mut residual: Vec<f64> = y.to_vec();
    for _ in 0..sweeps {
        for j in 0..m {
            if norms2[j] == 0.0 {
                continue;
            }
            let corr: f64 = columns[j].iter().zip(&residual).map(|(a, r)| a * r).sum();
            let rho = corr + norms2[j] * z[j];
            let znew = soft(rho, lambda) / norms2[j];
            let dz = znew - z[j];
            if dz != 0.0 {
                for (r, a) in residual.iter_mut().zip(&columns[j]) {
                    *r -= dz * a;
                }
                z[j] = znew;
            }
        }
    }
    z
}

pub fn lasso_objective(columns: &[Vec<f64>], y: &[f64], lambda: f64, z: &[f64]) -> f64 {
    let mut quad = 0.0;
    for (row, &yv) in y.iter().enumerate() {
        let fit: f64 = columns.iter().zip(z).map(|(c, &zj)| c[row] * zj).sum();
        quad += (yv - fit) * (yv - fit);
    }
    0.5 * quad + lambda * z.iter().map(|v| v.abs()).sum::<f64>()
}

/// Axis-aligned identity frame for synthetic patches whose grids are
/// generated directly in the domain.
pub fn identity_frame() -> Frame {
    Frame {
        origin: Point3::origin(),
        tangent_u: Vector3::x(),
        tangent_v: Vector3::y(),
        normal: Vector3::z(),
    }
}

pub fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector2<f64>> {
    (0..n)
        .map(|_| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

pub fn patch_with(grid: Vec<Vector2<f64>>, values: Vec<f64>) -> Patch {
    let n = grid.len();
    Patch {
        frame: identity_frame(),
        grid,
        values,
        scale: 1.0,
        indices: (0..n).collect(),
    }
}

/// Training patches synthesized exactly as sparse combinations of a planted
/// dictionary. Returns the train set and the mean per-sample signal energy.
pub fn planted_training_set(
    dict: &cdict::basis::Dictionary,
    n_patches: usize,
    pts_range: (usize, usize),
    sparsity: usize,
    seed: u64,
) -> (TrainSet, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = dict.n_atoms();
    let mut patches = Vec::with_capacity(n_patches);
    let mut energy = 0.0;
    for _ in 0..n_patches {
        let n_pts = rng.random_range(pts_range.0..=pts_range.1);
        let grid = random_grid(&mut rng, n_pts);
        // distinct random support
        let mut support: Vec<usize> = Vec::new();
        while support.len() < sparsity {
            let cand = rng.random_range(0..m);
            if !support.contains(&cand) {
                support.push(cand);
            }
        }
        let mut values = vec![0.0; n_pts];
        for &atom in &support {
            let coeff: f64 =
                rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            for (i, &g) in grid.iter().enumerate() {
                values[i] += coeff * cdict::basis::eval_atom(dict, atom, g).unwrap();
            }
        }
        energy += values.iter().map(|v| v * v).sum::<f64>() / n_pts as f64;
        patches.push(patch_with(grid, values));
    }
    (TrainSet::new(patches), energy / n_patches as f64)
}
