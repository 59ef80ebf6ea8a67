//! Matrix Fisher distribution with equal singular values `F = s·I`: the
//! rotation angle ρ about a uniformly random axis has density
//! `exp(2s cos ρ)(1 − cos ρ) / (π (I₀(2s) − I₁(2s)))` on `[0, π]`, and the
//! mean rotation matrix is `d·I`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FusionError;
use crate::bessel::i0e_minus_i1e;
use crate::quadrature::integrate;
use crate::so3::{exp_so3, Rotation};

const ABS_TOL: f64 = 1e-15;
const REL_TOL: f64 = 1e-12;

/// `1 − cos ρ` without cancellation.
fn one_minus_cos(rho: f64) -> f64 {
    let h = (0.5 * rho).sin();
    2.0 * h * h
}

/// Angle density times `e^{−2s}`, finite for any `s`.
fn shifted_density(s: f64, rho: f64) -> f64 {
    let v = one_minus_cos(rho);
    (-2.0 * s * v).exp() * v
}

/// Breakpoints on `[0, upper]` that bracket the bulk of the density, which
/// sits within a few multiples of `1/√(2s+1)` of zero.
fn breakpoints(s: f64, upper: f64) -> Vec<f64> {
    let w = 1.0 / (2.0 * s + 1.0).sqrt();
    let mut pts = vec![0.0];
    let mut x = 0.5 * w;
    while x < upper {
        pts.push(x);
        x *= 2.0;
    }
    pts.push(upper);
    pts
}

/// `e^{−2s} ∫₀^π exp(2s cos ρ)(1 − cos ρ) dρ = π e^{−2s}(I₀(2s) − I₁(2s))`.
pub fn shifted_normalizer(s: f64) -> f64 {
    PI * i0e_minus_i1e(2.0 * s)
}

fn check_s(s: f64) -> Result<(), FusionError> {
    if s >= 0.0 && s.is_finite() {
        Ok(())
    } else {
        Err(FusionError::Domain(format!("concentration s = {s} must be finite and ≥ 0")))
    }
}

/// Mean-rotation scale `d = (1 + 2 E[cos ρ]) / 3`.
pub fn d_from_s(s: f64) -> Result<f64, FusionError> {
    check_s(s)?;
    let second = integrate(
        |r| {
            let v = one_minus_cos(r);
            (-2.0 * s * v).exp() * v * v
        },
        &breakpoints(s, PI),
        ABS_TOL,
        REL_TOL,
    );
    Ok(1.0 - 2.0 / 3.0 * second.value / shifted_normalizer(s))
}

/// Inverse of [`d_from_s`] by bisection.
pub fn s_from_d(d: f64) -> Result<f64, FusionError> {
    if !(0.0..1.0).contains(&d) {
        return Err(FusionError::Domain(format!("d = {d} must lie in [0, 1)")));
    }
    if d == 0.0 {
        return Ok(0.0);
    }
    // Large-s behaviour is d ≈ 1 − 1/(2s); start the bracket from there.
    let mut hi = (1.0 / (2.0 * (1.0 - d))).max(1.0);
    while d_from_s(hi)? < d {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if d_from_s(mid)? < d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `P[ρ ≤ θ]`.
pub fn angle_cdf(s: f64, theta: f64) -> Result<f64, FusionError> {
    check_s(s)?;
    if theta <= 0.0 {
        return Ok(0.0);
    }
    if theta >= PI {
        return Ok(1.0);
    }
    let q = integrate(|r| shifted_density(s, r), &breakpoints(s, theta), ABS_TOL, REL_TOL);
    Ok((q.value / shifted_normalizer(s)).clamp(0.0, 1.0))
}

/// Smallest θ with `angle_cdf(s, θ) ≥ p`, to 1e-13 rad.
pub fn angle_quantile(s: f64, p: f64) -> Result<f64, FusionError> {
    check_s(s)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(FusionError::Domain(format!("probability {p} outside [0, 1]")));
    }
    let (mut lo, mut hi) = (0.0, PI);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if angle_cdf(s, mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Concentration of an equal-singular-value matrix Fisher distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleUq {
    pub s: f64,
    pub d: f64,
}

impl AngleUq {
    pub fn from_d(d: f64) -> Result<Self, FusionError> {
        Ok(AngleUq { s: s_from_d(d)?, d })
    }

    pub fn from_s(s: f64) -> Result<Self, FusionError> {
        Ok(AngleUq { s, d: d_from_s(s)? })
    }

    pub fn cdf(&self, theta: f64) -> f64 {
        angle_cdf(self.s, theta).expect("s validated on construction")
    }

    pub fn quantile(&self, p: f64) -> Result<f64, FusionError> {
        angle_quantile(self.s, p)
    }
}

fn uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    let q = nalgebra::Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    Rotation::from_matrix_unchecked(*uq.to_rotation_matrix().matrix())
}

/// Draws from the matrix Fisher distribution with `F = s·I` by rejection.
/// For `s ≤ 1` the proposal is uniform on SO(3); otherwise it is an
/// isotropic Gaussian in the tangent space with per-axis variance `π²/(8s)`,
/// wide enough that the acceptance ratio never exceeds one.
pub fn sample_isotropic<R: Rng + ?Sized>(s: f64, rng: &mut R) -> Rotation {
    assert!(s >= 0.0 && s.is_finite());
    if s <= 1.0 {
        loop {
            let r = uniform_rotation(rng);
            let rho = r.angle();
            if rng.random::<f64>() < (-2.0 * s * one_minus_cos(rho)).exp() {
                return r;
            }
        }
    }
    let sigma = PI / (8.0 * s).sqrt();
    loop {
        let eta = Vector3::from_fn(|_, _| sigma * rng.sample::<f64, _>(StandardNormal));
        let rho = eta.norm();
        if rho >= PI {
            continue;
        }
        let exponent = -2.0 * s * one_minus_cos(rho) + rho * rho / (2.0 * sigma * sigma);
        let shape = if rho > 1e-8 { one_minus_cos(rho) / (rho * rho) } else { 0.5 };
        if rng.random::<f64>() < 2.0 * exponent.exp() * shape {
            return exp_so3(&eta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Purpose};

    // 40-digit quadrature of the angle density.
    const D_REFERENCE: [(f64, f64); 5] = [
        (0.1, 0.03499417503810759794),
        (1.0, 0.43626312435541335616),
        (10.0, 0.94932234678534893857),
        (100.0, 0.99499370262017979381),
        (500.0, 0.99899974962420098536),
    ];
    const S_AT_0999: f64 = 500.12515652407413504;
    const CDF_AT_0999: [(f64, f64); 4] = [
        (1.0, 0.040840804430545004011),
        (3.0, 0.56668369329111351162),
        (5.07, 0.95023082425297077433),
        (10.0, 0.99999885446455286812),
    ];

    #[test]
    fn normalizer_matches_direct_quadrature() {
        for s in [0.0, 0.3, 10.0, 49.0, 51.0, 500.0, 5000.0] {
            let q = integrate(|r| shifted_density(s, r), &breakpoints(s, PI), 0.0, 1e-13).value;
            let z = shifted_normalizer(s);
            assert!(((q - z) / z).abs() < 1e-11, "s={s}: {q} vs {z}");
        }
    }

    #[test]
    fn d_of_s_reference_values() {
        assert!(d_from_s(0.0).unwrap().abs() < 1e-14);
        for (s, d) in D_REFERENCE {
            assert!((d_from_s(s).unwrap() - d).abs() < 1e-13, "s={s}");
        }
        assert!(d_from_s(500.0).unwrap() > 0.9989);
        assert!(d_from_s(-1.0).is_err());
    }

    #[test]
    fn d_of_s_increases() {
        let mut prev = -1.0;
        for i in 0..=500 {
            let d = d_from_s(i as f64).unwrap();
            assert!(d > prev);
            prev = d;
        }
    }

    #[test]
    fn s_from_d_round_trip() {
        for s in [0.1, 1.0, 10.0, 100.0] {
            let back = s_from_d(d_from_s(s).unwrap()).unwrap();
            assert!(((back - s) / s).abs() < 1e-8, "{s} -> {back}");
        }
        assert!(((s_from_d(0.999).unwrap() - S_AT_0999) / S_AT_0999).abs() < 1e-9);
        assert!(s_from_d(1.0).is_err());
        assert!(s_from_d(-0.1).is_err());
    }

    #[test]
    fn cdf_reference_values() {
        let uq = AngleUq::from_d(0.999).unwrap();
        for (deg, p) in CDF_AT_0999 {
            assert!((uq.cdf(deg.to_radians()) - p).abs() < 1e-10, "{deg}");
        }
        assert_eq!(uq.cdf(0.0), 0.0);
        assert_eq!(uq.cdf(PI), 1.0);
        for s in [0.0, 2.0, 80.0] {
            let near_pi = angle_cdf(s, PI - 1e-12).unwrap();
            assert!((near_pi - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn quantile_at_095_for_d_0999() {
        let q = AngleUq::from_d(0.999).unwrap().quantile(0.95).unwrap().to_degrees();
        assert!((q - 5.066652230102169902).abs() < 1e-8, "{q}");
    }

    #[test]
    fn quantile_decreases_with_concentration() {
        for p in [0.5, 0.9, 0.99] {
            let mut prev = f64::INFINITY;
            for s in [0.5, 5.0, 50.0, 500.0] {
                let q = angle_quantile(s, p).unwrap();
                assert!(q < prev);
                assert!((angle_cdf(s, q).unwrap() - p).abs() < 1e-10);
                prev = q;
            }
        }
    }

    #[test]
    fn sampler_matches_cdf() {
        for (s, stream) in [(0.5, 0), (3.0, 1), (200.0, 2)] {
            let mut rng = stream_rng(17, Purpose::Testing, stream);
            let n = 20_000;
            let angles: Vec<f64> = (0..n).map(|_| sample_isotropic(s, &mut rng).angle()).collect();
            for p in [0.1, 0.5, 0.9] {
                let theta = angle_quantile(s, p).unwrap();
                let frac = angles.iter().filter(|&&a| a <= theta).count() as f64 / n as f64;
                let se = (p * (1.0 - p) / n as f64).sqrt();
                assert!((frac - p).abs() < 4.0 * se, "s={s} p={p} frac={frac}");
            }
        }
    }

    #[test]
    fn sampled_mean_is_d_times_identity() {
        let s = 20.0;
        let mut rng = stream_rng(18, Purpose::Testing, 0);
        let n = 20_000;
        let mut mean = nalgebra::Matrix3::zeros();
        for _ in 0..n {
            mean += sample_isotropic(s, &mut rng).matrix();
        }
        mean /= n as f64;
        let d = d_from_s(s).unwrap();
        assert!((mean - nalgebra::Matrix3::identity() * d).abs().max() < 0.01);
    }
}
