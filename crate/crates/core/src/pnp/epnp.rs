//! EPnP: every reference point is a barycentric combination of a few
//! control points, so the camera-frame control points are found from a
//! small null space and a handful of distance constraints.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector2, Vector3};

use super::PnpError;
use crate::camera::{project_point, CameraIntrinsics};
use crate::so3::{proper_svd, Rotation};

/// Principal extent (standard deviation, metres) below which the cloud is
/// treated as planar; the second extent below it means collinear.
pub const PLANAR_EXTENT: f64 = 1e-6;

const GN_ITERATIONS: usize = 10;
const GN_STEP_TOL: f64 = 1e-12;
/// Pixel error charged for points that land behind the camera.
const BEHIND_PENALTY: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    /// Mean reprojection error over all input points, pixels.
    pub reproj_error: f64,
}

/// Our camera looks down −z with +y up; the solver works in the usual
/// +z-forward, y-down frame and converts back with this flip.
fn flip(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, -v.y, -v.z)
}

fn mean_reprojection(intr: &CameraIntrinsics, r: &Rotation, t: &Vector3<f64>, p3: &[Vector3<f64>], p2: &[Vector2<f64>]) -> f64 {
    let total: f64 = p3
        .iter()
        .zip(p2)
        .map(|(p, q)| project_point(intr, r, t, p).map_or(BEHIND_PENALTY, |px| (px - q).norm()))
        .sum();
    total / p3.len() as f64
}

struct Problem {
    /// Control points in the world frame.
    control: Vec<Vector3<f64>>,
    /// `alphas[i][j]`: weight of control point `j` in point `i`.
    alphas: Vec<Vec<f64>>,
    /// Null-space basis, smallest singular value first, each `3k` long.
    null: Vec<DVector<f64>>,
    /// Control-point pairs and their squared world distances.
    pairs: Vec<(usize, usize)>,
    rho: Vec<f64>,
}

impl Problem {
    fn k(&self) -> usize {
        self.control.len()
    }

    fn diff(&self, l: usize, (a, b): (usize, usize)) -> Vector3<f64> {
        let v = &self.null[l];
        Vector3::new(v[3 * a] - v[3 * b], v[3 * a + 1] - v[3 * b + 1], v[3 * a + 2] - v[3 * b + 2])
    }

    fn residual_and_jacobian(&self, beta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let m = self.pairs.len();
        let k = self.k();
        let mut r = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, k);
        for (row, &pair) in self.pairs.iter().enumerate() {
            let diffs: Vec<Vector3<f64>> = (0..k).map(|l| self.diff(l, pair)).collect();
            let d: Vector3<f64> = diffs.iter().zip(beta.iter()).map(|(s, b)| s * *b).sum();
            r[row] = d.norm_squared() - self.rho[row];
            for l in 0..k {
                jac[(row, l)] = 2.0 * d.dot(&diffs[l]);
            }
        }
        (r, jac)
    }

    fn gauss_newton(&self, beta: &mut DVector<f64>) {
        let (mut r, mut jac) = self.residual_and_jacobian(beta);
        for _ in 0..GN_ITERATIONS {
            let svd = jac.clone().svd(true, true);
            let eps = svd.singular_values.max() * 1e-12;
            let Ok(step) = svd.solve(&(-&r), eps) else { break };
            let trial = &*beta + &step;
            let (r_new, jac_new) = self.residual_and_jacobian(&trial);
            if r_new.norm_squared() > r.norm_squared() {
                break;
            }
            *beta = trial;
            r = r_new;
            jac = jac_new;
            if step.norm() < GN_STEP_TOL {
                break;
            }
        }
    }

    /// Initial β for a null space of dimension `n` by linearizing the
    /// distance constraints in the products `β_l β_m`.
    fn linearized_betas(&self, n: usize) -> Option<DVector<f64>> {
        let products: Vec<(usize, usize)> = (0..n).flat_map(|l| (l..n).map(move |m| (l, m))).collect();
        if products.len() > self.pairs.len() {
            return None;
        }
        let mut lmat = DMatrix::zeros(self.pairs.len(), products.len());
        for (row, &pair) in self.pairs.iter().enumerate() {
            for (col, &(l, m)) in products.iter().enumerate() {
                let (sl, sm) = (self.diff(l, pair), self.diff(m, pair));
                lmat[(row, col)] = if l == m { sl.norm_squared() } else { 2.0 * sl.dot(&sm) };
            }
        }
        let rho = DVector::from_column_slice(&self.rho);
        let svd = lmat.svd(true, true);
        let eps = svd.singular_values.max() * 1e-12;
        let x = svd.solve(&rho, eps).ok()?;
        let product = |l: usize, m: usize| x[products.iter().position(|&p| p == (l, m)).unwrap()];
        let mut beta = DVector::zeros(self.k());
        beta[0] = product(0, 0).abs().sqrt();
        for l in 1..n {
            beta[l] = product(0, l).signum() * product(l, l).abs().sqrt();
        }
        Some(beta)
    }

    /// Camera-frame (solver convention) points for a given β.
    fn camera_points(&self, beta: &DVector<f64>) -> Vec<Vector3<f64>> {
        let k = self.k();
        let control: Vec<Vector3<f64>> = (0..k)
            .map(|j| {
                (0..k)
                    .map(|l| Vector3::new(self.null[l][3 * j], self.null[l][3 * j + 1], self.null[l][3 * j + 2]) * beta[l])
                    .sum()
            })
            .collect();
        let mut pts: Vec<Vector3<f64>> = self
            .alphas
            .iter()
            .map(|a| a.iter().zip(&control).map(|(w, c)| c * *w).sum())
            .collect();
        if pts.iter().map(|p| p.z).sum::<f64>() < 0.0 {
            pts.iter_mut().for_each(|p| *p = -*p);
        }
        pts
    }
}

/// Rigid transform `(R, t)` with `camera ≈ R world + t`.
fn align(world: &[Vector3<f64>], camera: &[Vector3<f64>]) -> (Rotation, Vector3<f64>) {
    let n = world.len() as f64;
    let cw: Vector3<f64> = world.iter().sum::<Vector3<f64>>() / n;
    let cc: Vector3<f64> = camera.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(camera) {
        h += (c - cc) * (w - cw).transpose();
    }
    let r = proper_svd(&h).rotation();
    let t = cc - r.matrix() * cw;
    (r, t)
}

fn setup(pts3d: &[Vector3<f64>], pts2d: &[Vector2<f64>], intr: &CameraIntrinsics) -> Result<Problem, PnpError> {
    let n = pts3d.len();
    let centroid: Vector3<f64> = pts3d.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in pts3d {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let extent = order.map(|i| eig.eigenvalues[i].max(0.0).sqrt());
    if extent[1] < PLANAR_EXTENT {
        return Err(PnpError::Collinear);
    }
    let k = if extent[2] < PLANAR_EXTENT { 3 } else { 4 };
    // Eigenvector signs are arbitrary; pin them so that the control points
    // do not depend on the order of the input.
    let axes: Vec<Vector3<f64>> = (0..k - 1)
        .map(|a| {
            let v = eig.eigenvectors.column(order[a]).into_owned();
            if v[v.iamax()] < 0.0 {
                -v
            } else {
                v
            }
        })
        .collect();

    let mut control = vec![centroid];
    control.extend(axes.iter().zip(&extent).map(|(v, e)| centroid + v * *e));
    let alphas: Vec<Vec<f64>> = pts3d
        .iter()
        .map(|p| {
            let d = p - centroid;
            let mut a: Vec<f64> = vec![0.0; k];
            for j in 1..k {
                a[j] = axes[j - 1].dot(&d) / extent[j - 1];
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();

    let cols = 3 * k;
    // Zero rows keep the full right-singular basis available when 2n < 3k.
    let mut m = DMatrix::zeros((2 * n).max(cols), cols);
    for (i, (a, q)) in alphas.iter().zip(pts2d).enumerate() {
        let x = (q.x - intr.cx) / intr.fx;
        let y = (q.y - intr.cy) / intr.fy;
        for j in 0..k {
            m[(2 * i, 3 * j)] = a[j];
            m[(2 * i, 3 * j + 2)] = -a[j] * x;
            m[(2 * i + 1, 3 * j + 1)] = a[j];
            m[(2 * i + 1, 3 * j + 2)] = -a[j] * y;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut idx: Vec<usize> = (0..cols).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let null = idx[..k].iter().map(|&i| v_t.row(i).transpose()).collect();

    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let rho = pairs.iter().map(|&(a, b)| (control[a] - control[b]).norm_squared()).collect();
    Ok(Problem {
        control,
        alphas,
        null,
        pairs,
        rho,
    })
}

/// Camera pose from `n ≥ 4` correspondences. Coplanar reference points are
/// handled with three control points.
pub fn epnp(pts3d: &[Vector3<f64>], pts2d: &[Vector2<f64>], intr: &CameraIntrinsics) -> Result<PnpSolution, PnpError> {
    if pts3d.len() != pts2d.len() {
        return Err(PnpError::LengthMismatch(pts3d.len(), pts2d.len()));
    }
    if pts3d.len() < 4 {
        return Err(PnpError::InsufficientPoints(pts3d.len()));
    }
    let problem = setup(pts3d, pts2d, intr)?;

    let mut best: Option<PnpSolution> = None;
    for n in 1..=3 {
        let Some(mut beta) = problem.linearized_betas(n) else { continue };
        problem.gauss_newton(&mut beta);
        let camera = problem.camera_points(&beta);
        let (r_std, t_std) = align(pts3d, &camera);
        let rotation = Rotation::from_matrix_unchecked(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)) * r_std.matrix());
        let translation = flip(&t_std);
        let reproj_error = mean_reprojection(intr, &rotation, &translation, pts3d, pts2d);
        if reproj_error.is_finite() && best.is_none_or(|b| reproj_error < b.reproj_error) {
            best = Some(PnpSolution {
                rotation,
                translation,
                reproj_error,
            });
        }
    }
    best.ok_or(PnpError::Collinear)
}
