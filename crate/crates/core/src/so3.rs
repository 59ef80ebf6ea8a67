//! Rotation-group primitives: hat/vee, exponential and logarithm maps,
//! the proper (determinant-corrected) SVD and the geodesic angle.
//!
//! Rotations are plain 3×3 matrices wrapped in [`Rotation`]; the tangent
//! space is represented by axis-angle vectors (`Vector3<f64>`, radians).

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3, SVD};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Orthonormality / determinant tolerance used to accept a matrix as-is.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this angle `exp` and `log` switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// `sin θ` below which `log` extracts the axis from the symmetric part.
const NEAR_PI_SIN: f64 = 1e-3;

/// Axis-angle rotation vector: direction is the axis, norm the angle.
pub type AxisAngle = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum So3Error {
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Accepts `m` if it is a rotation to within [`ROTATION_TOLERANCE`],
    /// otherwise re-projects it onto SO(3) as `U Vᵀ` of its proper SVD.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, So3Error> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(So3Error::NonFinite);
        }
        if is_rotation(&m, ROTATION_TOLERANCE) {
            Ok(Rotation(m))
        } else {
            let svd = proper_svd(&m);
            Ok(Rotation(svd.u.0 * svd.v.0.transpose()))
        }
    }

    /// Wraps `m` without checking. The caller guarantees `m ∈ SO(3)`.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Rotation whose columns are the given unit vectors.
    pub fn from_columns_unchecked(c0: Vector3<f64>, c1: Vector3<f64>, c2: Vector3<f64>) -> Self {
        Rotation(Matrix3::from_columns(&[c0, c1, c2]))
    }

    pub fn from_row_major(a: &[f64; 9]) -> Result<Self, So3Error> {
        Self::from_matrix(Matrix3::from_row_slice(a))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    #[inline]
    pub fn column(&self, i: usize) -> Vector3<f64> {
        self.0.column(i).into_owned()
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn log(&self) -> AxisAngle {
        log_so3(self)
    }

    pub fn angle(&self) -> f64 {
        log_so3(self).norm()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let a = <[f64; 9]>::deserialize(deserializer)?;
        Rotation::from_row_major(&a).map_err(serde::de::Error::custom)
    }
}

/// True when `mᵀm = I` (Frobenius) and `det m = 1`, both within `tol`.
pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    (m.transpose() * m - Matrix3::identity()).norm() <= tol && (m.determinant() - 1.0).abs() <= tol
}

/// Skew-symmetric matrix with `hat(v) w = v × w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]; reads the three strictly-lower entries.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues' formula.
pub fn exp_so3(v: &AxisAngle) -> Rotation {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(v);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Principal logarithm; the returned vector has norm in `[0, π]`.
///
/// At (and near) the cut locus the axis is taken from the eigenvector of
/// `(R + Rᵀ)/2 − I` with the largest eigenvalue. Its sign follows the
/// antisymmetric part when that is resolvable, otherwise the
/// largest-magnitude component is made positive.
pub fn log_so3(r: &Rotation) -> AxisAngle {
    let m = &r.0;
    let w = vee(&(m - m.transpose())); // 2 sin θ · axis
    let sin2 = w.norm();
    let cos = 0.5 * (m.trace() - 1.0);
    let theta = sin2.atan2(2.0 * cos);

    if theta < SMALL_ANGLE {
        // θ/(2 sin θ) ≈ 1/2 (1 + θ²/6)
        return w * (0.5 + theta * theta / 12.0);
    }
    if cos > 0.0 || sin2 * 0.5 > NEAR_PI_SIN {
        return w * (theta / sin2);
    }

    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity();
    let eig = SymmetricEigen::new(sym);
    let imax = eig.eigenvalues.imax();
    let mut axis: Vector3<f64> = eig.eigenvectors.column(imax).into_owned();
    axis.normalize_mut();
    let s = axis.dot(&w);
    if s.abs() > 1e-14 {
        if s < 0.0 {
            axis = -axis;
        }
    } else {
        let k = axis.iamax();
        if axis[k] < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Angle of `aᵀ b`, in `[0, π]`.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    log_so3(&(a.transpose() * *b)).norm().min(PI)
}

/// `m = U diag(d) Vᵀ` with `U, V ∈ SO(3)` and `d₁ ≥ d₂ ≥ |d₃|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProperSvd {
    pub u: Rotation,
    pub d: Vector3<f64>,
    pub v: Rotation,
}

impl ProperSvd {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u.0 * Matrix3::from_diagonal(&self.d) * self.v.0.transpose()
    }

    /// `U Vᵀ`, the closest rotation to the decomposed matrix.
    pub fn rotation(&self) -> Rotation {
        self.u * self.v.transpose()
    }
}

/// Sign-corrected SVD: `U = U' diag(1,1,det U')`, `V = V' diag(1,1,det V')`,
/// `D = D' diag(1,1,det(U'V'))`, with `D'` sorted descending.
pub fn proper_svd(m: &Matrix3<f64>) -> ProperSvd {
    let svd = SVD::new(*m, true, true);
    let u0 = svd.u.expect("requested U");
    let vt0 = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;

    // `SVD::new` sorts already; the stable re-sort only makes that explicit.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut u = Matrix3::zeros();
    let mut v = Matrix3::zeros();
    let mut d = Vector3::zeros();
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v.set_column(dst, &vt0.row(src).transpose());
        d[dst] = s[src];
    }

    let det_u = u.determinant().signum();
    let det_v = v.determinant().signum();
    if det_u < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if det_v < 0.0 {
        v.column_mut(2).neg_mut();
    }
    d[2] *= det_u * det_v;

    ProperSvd {
        u: Rotation(u),
        d,
        v: Rotation(v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_rotation<R: Rng>(rng: &mut R) -> Rotation {
        let q = nalgebra::Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let q = UnitQuaternion::from_quaternion(q);
        Rotation::from_matrix_unchecked(q.to_rotation_matrix().into_inner())
    }

    /// exp(A) by scaling and squaring a truncated Taylor series.
    fn expm_oracle(a: &Matrix3<f64>) -> Matrix3<f64> {
        let squarings = 10;
        let scaled = a / f64::from(1u32 << squarings);
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for k in 1..20 {
            term = term * scaled / k as f64;
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn hat_examples() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        let z = hat(&Vector3::z());
        assert_eq!(z, Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn hat_matches_componentwise_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let w = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let cross = Vector3::new(
                v[1] * w[2] - v[2] * w[1],
                v[2] * w[0] - v[0] * w[2],
                v[0] * w[1] - v[1] * w[0],
            );
            assert_abs_diff_eq!(hat(&v) * w, cross, epsilon = 1e-12);
            assert_eq!(hat(&v).transpose(), -hat(&v));
            assert_eq!(vee(&hat(&v)), v);
        }
    }

    #[test]
    fn exp_examples() {
        assert_eq!(exp_so3(&Vector3::zeros()).matrix(), &Matrix3::identity());
        let q = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        assert_abs_diff_eq!(q * Vector3::x(), Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let v = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let r = exp_so3(&v);
            assert_abs_diff_eq!(*r.matrix(), expm_oracle(&hat(&v)), epsilon = 1e-10);
        }
        // Taylor branch
        let tiny = Vector3::new(3e-9, -2e-9, 1e-9);
        assert_abs_diff_eq!(
            *exp_so3(&tiny).matrix(),
            expm_oracle(&hat(&tiny)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vector3::zeros());
        let half_turn = Rotation::from_matrix(Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))).unwrap();
        let v = log_so3(&half_turn);
        assert_abs_diff_eq!(v, Vector3::new(PI, 0.0, 0.0), epsilon = 1e-12);
        // Sign convention at the cut locus: largest component positive.
        let about_neg = exp_so3(&(Vector3::new(-1.0, -2.0, 0.5).normalize() * PI));
        let v = log_so3(&about_neg);
        assert_abs_diff_eq!(v.norm(), PI, epsilon = 1e-12);
        assert!(v.y > 0.0);
    }

    #[test]
    fn exp_log_round_trip_on_uniform_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let r = random_rotation(&mut rng);
            let v = log_so3(&r);
            assert!(v.norm() <= PI + 1e-15);
            assert_abs_diff_eq!(*exp_so3(&v).matrix(), *r.matrix(), epsilon = 1e-8);
        }
    }

    #[test]
    fn log_is_accurate_near_pi() {
        let axis = Vector3::new(0.3, -0.4, 0.5).normalize();
        for eps in [1e-2, 1e-4, 1e-6, 1e-9, 1e-12, 0.0] {
            let v = axis * (PI - eps);
            let back = log_so3(&exp_so3(&v));
            assert_abs_diff_eq!(*exp_so3(&back).matrix(), *exp_so3(&v).matrix(), epsilon = 1e-12);
            if eps > 0.0 {
                assert_abs_diff_eq!(back, v, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn proper_svd_examples() {
        let s = proper_svd(&Matrix3::identity());
        assert_abs_diff_eq!(s.d, Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(*s.rotation().matrix(), Matrix3::identity(), epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_rotation(&mut rng);
        let s = proper_svd(r.matrix());
        assert_abs_diff_eq!(s.d, Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(*s.rotation().matrix(), *r.matrix(), epsilon = 1e-12);
    }

    #[test]
    fn proper_svd_of_reflection_matches_sign_fixed_standard_svd() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        // Oracle: an ordinary SVD has all-positive singular values; the
        // sign fix moves det(U'V') = -1 into the last entry.
        let plain = SVD::new(m, true, true);
        let det_uv = plain.u.unwrap().determinant() * plain.v_t.unwrap().determinant();
        assert_abs_diff_eq!(det_uv, -1.0, epsilon = 1e-12);

        let s = proper_svd(&m);
        assert_abs_diff_eq!(s.d, Vector3::new(1.0, 1.0, -1.0), epsilon = 1e-12);
        assert!(is_rotation(s.u.matrix(), 1e-12));
        assert!(is_rotation(s.v.matrix(), 1e-12));
        assert_abs_diff_eq!(s.reconstruct(), m, epsilon = 1e-12);
    }

    #[test]
    fn proper_svd_of_rank_deficient_matrix() {
        let m = Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 0.0, 0.0);
        let s = proper_svd(&m);
        assert_abs_diff_eq!(s.reconstruct(), m, epsilon = 1e-12);
        assert!(s.d[0] >= s.d[1] && s.d[1] >= s.d[2].abs());
    }

    #[test]
    fn geodesic_angle_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_rotation(&mut rng);
        assert_abs_diff_eq!(geodesic_angle(&r, &r), 0.0, epsilon = 1e-7);
        let axis = Vector3::new(1.0, 2.0, -2.0).normalize();
        assert_abs_diff_eq!(
            geodesic_angle(&Rotation::identity(), &exp_so3(&(axis * 1.234))),
            1.234,
            epsilon = 1e-12
        );
        for _ in 0..200 {
            let a = random_rotation(&mut rng);
            let b = random_rotation(&mut rng);
            assert_abs_diff_eq!(geodesic_angle(&a, &b), geodesic_angle(&b, &a), epsilon = 1e-9);
        }
    }

    #[test]
    fn drifted_matrix_is_reprojected() {
        let mut m = *exp_so3(&Vector3::new(0.1, 0.2, 0.3)).matrix();
        m[(0, 0)] += 1e-6;
        let r = Rotation::from_matrix(m).unwrap();
        assert!(is_rotation(r.matrix(), 1e-12));
        assert!((r.matrix() - m).norm() < 2e-6);
        assert_eq!(
            Rotation::from_matrix(Matrix3::from_element(f64::NAN)),
            Err(So3Error::NonFinite)
        );
    }

    #[test]
    fn serializes_row_major() {
        let r = exp_so3(&Vector3::new(0.0, 0.0, PI / 2.0));
        let a = r.to_row_major();
        assert_abs_diff_eq!(a[1], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[3], 1.0, epsilon = 1e-15);
        let json = serde_json::to_string(&r).unwrap();
        let back: Rotation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn proper_svd_invariants(entries in proptest::array::uniform9(-3.0f64..3.0)) {
            let m = Matrix3::from_row_slice(&entries);
            let s = proper_svd(&m);
            prop_assert!(is_rotation(s.u.matrix(), 1e-9));
            prop_assert!(is_rotation(s.v.matrix(), 1e-9));
            prop_assert!(s.d[0] >= s.d[1] && s.d[1] >= s.d[2].abs() - 1e-15);
            prop_assert!((s.reconstruct() - m).norm() < 1e-9);
        }

        #[test]
        fn vee_inverts_hat(x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0) {
            let v = Vector3::new(x, y, z);
            prop_assert_eq!(vee(&hat(&v)), v);
        }
    }
}
