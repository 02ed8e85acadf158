//! SE(3) group operations, exp/log maps and constant-twist pose interpolation.
//!
//! Conventions used throughout the crate:
//! - A twist stacks as `[omega; v]` (rotation first) when flattened to a 6-vector.
//! - Perturbations are left-multiplicative: a pose `T` perturbed by twist `d`
//!   becomes `exp(d) * T`. All Jacobians in this module and its consumers are
//!   taken with respect to such perturbations.
//! - `LocalTrajectory` interpolates between its endpoint poses along the
//!   constant-twist screw `T_t = start * exp((t / tau) * log(start^-1 * end))`.
//!   The relative twist is computed once at construction and cached.

use std::sync::OnceLock;

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// Rotation angle below which Taylor expansions replace the closed forms.
const SMALL_ANGLE: f64 = 1e-8;
/// Rotation angles this close to pi make the logarithm ill-conditioned.
const NEAR_PI_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LieError {
    #[error("rotation angle {0} is within {NEAR_PI_MARGIN} of pi; logarithm ill-conditioned")]
    AngleNearPi(f64),
    #[error("time {t} outside exposure interval [0, {exposure}]")]
    OutOfExposure { t: f64, exposure: f64 },
    #[error("interpolation fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("exposure time {0} is negative")]
    NegativeExposure(f64),
}

/// Rigid transform with the rotation stored as a unit quaternion.
///
/// The rotation matrix is derived lazily and cached; the duplicate-compute
/// race on the cache is benign because the result is identical.
#[derive(Debug, Clone)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
    rot_matrix: OnceLock<Matrix3<f64>>,
}

impl Pose {
    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        // Renormalize so the unit-norm invariant survives long compose chains.
        let rotation = UnitQuaternion::new_normalize(*rotation.quaternion());
        Pose {
            rotation,
            translation,
            rot_matrix: OnceLock::new(),
        }
    }

    /// Build from raw quaternion components `(qw, qx, qy, qz)`, normalizing.
    pub fn from_parts(qw: f64, qx: f64, qy: f64, qz: f64, translation: Vector3<f64>) -> Self {
        let q = Quaternion::new(qw, qx, qy, qz);
        Self::new(UnitQuaternion::new_normalize(q), translation)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion components as `(qw, qx, qy, qz)`.
    pub fn quaternion_wxyz(&self) -> (f64, f64, f64, f64) {
        let q = self.rotation.quaternion();
        (q.w, q.i, q.j, q.k)
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rot_matrix
            .get_or_init(|| self.rotation.to_rotation_matrix().into_inner())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotate(&other.translation) + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rotation.inverse();
        let inv_t = -(inv_rot * self.translation);
        Pose::new(inv_rot, inv_t)
    }

    /// Rotation angle of `self^-1 * other`, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        (self.rotation.inverse() * other.rotation).angle()
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

/// se(3) element: `omega` is the rotational part, `v` the translational part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Twist {
            omega: Vector3::zeros(),
            v: Vector3::zeros(),
        }
    }

    pub fn new(omega: Vector3<f64>, v: Vector3<f64>) -> Self {
        Twist { omega, v }
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist {
            omega: self.omega * s,
            v: self.v * s,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.omega.norm_squared() + self.v.norm_squared()).sqrt()
    }

    /// Stacked `[omega; v]` vector.
    pub fn as_vector(&self) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        out.fixed_rows_mut::<3>(3).copy_from(&self.v);
        out
    }

    pub fn from_vector(v6: &Vector6<f64>) -> Twist {
        Twist {
            omega: v6.fixed_rows::<3>(0).into_owned(),
            v: v6.fixed_rows::<3>(3).into_owned(),
        }
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) left Jacobian, identical to the V matrix of the SE(3) exponential:
/// `V = I + B [w]x + C [w]x^2` with `B = (1-cos t)/t^2`, `C = (t-sin t)/t^3`.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let wx = skew(omega);
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        // (1 - cos t) = 2 sin^2(t/2), cancellation-free.
        let sin_half = (0.5 * theta).sin();
        (
            2.0 * sin_half * sin_half / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Matrix3::identity() + wx * b + wx * wx * c
}

fn so3_left_jacobian_inverse_apply(omega: &Vector3<f64>, t: &Vector3<f64>) -> Vector3<f64> {
    let theta = omega.norm();
    let wx = skew(omega);
    let d = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        // 1 - (t/2) cot(t/2), written without the ill-conditioned 1 - cos t.
        let t2 = theta * theta;
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / t2
    };
    t - wx * t * 0.5 + wx * (wx * t) * d
}

/// SE(3) exponential map.
pub fn se3_exp(xi: &Twist) -> Pose {
    let theta = xi.omega.norm();
    let rotation = if theta < SMALL_ANGLE {
        // q = (cos(t/2), sinc(t/2)/2 * omega) to second order.
        let t2 = theta * theta;
        let w = 1.0 - t2 / 8.0;
        let s = 0.5 - t2 / 48.0;
        UnitQuaternion::new_normalize(Quaternion::new(
            w,
            s * xi.omega.x,
            s * xi.omega.y,
            s * xi.omega.z,
        ))
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / theta;
        UnitQuaternion::new_normalize(Quaternion::new(
            half.cos(),
            s * xi.omega.x,
            s * xi.omega.y,
            s * xi.omega.z,
        ))
    };
    let translation = so3_left_jacobian(&xi.omega) * xi.v;
    Pose::new(rotation, translation)
}

/// SE(3) logarithm on the principal branch.
pub fn se3_log(p: &Pose) -> Result<Twist, LieError> {
    let q = p.rotation.quaternion();
    // Force qw >= 0 so the angle lands in [0, pi].
    let (w, vec) = if q.w < 0.0 {
        (-q.w, -Vector3::new(q.i, q.j, q.k))
    } else {
        (q.w, Vector3::new(q.i, q.j, q.k))
    };
    let sin_half = vec.norm();
    let theta = 2.0 * sin_half.atan2(w);
    if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(LieError::AngleNearPi(theta));
    }
    let omega = if sin_half < SMALL_ANGLE {
        // theta/sin(theta/2) -> 2 + theta^2/12
        vec * (2.0 + theta * theta / 12.0)
    } else {
        vec * (theta / sin_half)
    };
    let v = so3_left_jacobian_inverse_apply(&omega, &p.translation);
    Ok(Twist { omega, v })
}

/// Adjoint of a pose under the `[omega; v]` stacking.
pub fn adjoint(p: &Pose) -> Matrix6<f64> {
    let r = p.rotation_matrix();
    let tx_r = skew(p.translation()) * r;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&tx_r);
    out
}

/// Coupling block of the SE(3) left Jacobian (Barfoot's Q with `[omega; v]`
/// stacking, so it sits in the lower-left).
fn se3_q_block(omega: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let wx = skew(omega);
    let vx = skew(v);
    let theta = omega.norm();
    // The closed-form coefficients cancel catastrophically as theta -> 0, and
    // their error is not absorbed by higher powers of theta here, so the
    // Taylor branch switches much earlier than for exp/log.
    let (c1, c2, c3) = if theta < 1e-3 {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0,
            1.0 / 24.0 - t2 / 720.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        let (s, c) = theta.sin_cos();
        let a = (1.0 - t2 / 2.0 - c) / t4;
        (
            (theta - s) / (t2 * theta),
            -a,
            -0.5 * (a - 3.0 * (theta - s - t2 * theta / 6.0) / (t4 * theta)),
        )
    };
    let wv = wx * vx;
    let vw = vx * wx;
    vx * 0.5
        + (wv + vw + wx * vw) * c1
        + (wx * wv + vw * wx - wx * vw * 3.0) * c2
        + (wx * vw * wx + wx * wx * vw) * c3
}

/// SE(3) left Jacobian: `exp(xi + d) ~ exp(J_l(xi) d) * exp(xi)`.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let j = so3_left_jacobian(&xi.omega);
    let q = se3_q_block(&xi.omega, &xi.v);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&q);
    out
}

/// Camera trajectory within one exposure: endpoint poses plus exposure time.
#[derive(Debug, Clone)]
pub struct LocalTrajectory {
    start: Pose,
    end: Pose,
    exposure: f64,
    rel_twist: Twist,
}

impl LocalTrajectory {
    pub fn new(start: Pose, end: Pose, exposure: f64) -> Result<Self, LieError> {
        if exposure < 0.0 {
            return Err(LieError::NegativeExposure(exposure));
        }
        let rel_twist = se3_log(&start.inverse().compose(&end))?;
        Ok(LocalTrajectory {
            start,
            end,
            exposure,
            rel_twist,
        })
    }

    /// Trajectory that stays at `pose` for the whole exposure.
    pub fn stationary(pose: Pose, exposure: f64) -> Result<Self, LieError> {
        Self::new(pose.clone(), pose, exposure)
    }

    pub fn start(&self) -> &Pose {
        &self.start
    }

    pub fn end(&self) -> &Pose {
        &self.end
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    /// Cached `log(start^-1 * end)`.
    pub fn rel_twist(&self) -> &Twist {
        &self.rel_twist
    }

    /// Pose at time `t` within `[0, exposure]`.
    pub fn pose_at(&self, t: f64) -> Result<Pose, LieError> {
        if t == 0.0 {
            return Ok(self.start.clone());
        }
        if self.exposure <= 0.0 || t < 0.0 || t > self.exposure {
            return Err(LieError::OutOfExposure {
                t,
                exposure: self.exposure,
            });
        }
        self.pose_at_fraction(t / self.exposure)
    }

    /// Pose at dimensionless fraction `s` in `[0, 1]`, independent of exposure.
    pub fn pose_at_fraction(&self, s: f64) -> Result<Pose, LieError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(LieError::FractionOutOfRange(s));
        }
        if s == 0.0 {
            return Ok(self.start.clone());
        }
        if s == 1.0 {
            return Ok(self.end.clone());
        }
        Ok(self.start.compose(&se3_exp(&self.rel_twist.scaled(s))))
    }
}

/// One-off fractional interpolation between two poses.
pub fn interpolate_fraction(start: &Pose, end: &Pose, s: f64) -> Result<Pose, LieError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(LieError::FractionOutOfRange(s));
    }
    if s == 0.0 {
        return Ok(start.clone());
    }
    if s == 1.0 {
        return Ok(end.clone());
    }
    let xi = se3_log(&start.inverse().compose(end))?;
    Ok(start.compose(&se3_exp(&xi.scaled(s))))
}

/// Jacobians of the interpolated pose with respect to left-twist perturbations
/// of the endpoints.
///
/// Row/column meaning: entry `(i, j)` is the i-th local coordinate (left
/// twist, `[omega; v]`) of the perturbed `T_s` relative to the unperturbed
/// `T_s`, per unit of the j-th component of the endpoint perturbation.
///
/// Closed form: with `xi = log(start^-1 * end)` and `K = s * Ad(start) *
/// J_l(s xi) * J_l(xi)^-1 * Ad(start)^-1`, the end Jacobian is `K` and the
/// start Jacobian is `I - K`.
pub fn interp_jacobians(traj: &LocalTrajectory, s: f64) -> (Matrix6<f64>, Matrix6<f64>) {
    if s == 0.0 {
        return (Matrix6::identity(), Matrix6::zeros());
    }
    if s == 1.0 {
        return (Matrix6::zeros(), Matrix6::identity());
    }
    let xi = traj.rel_twist();
    let jl_s = se3_left_jacobian(&xi.scaled(s));
    let jl_inv = se3_left_jacobian(xi)
        .try_inverse()
        .expect("SE(3) left Jacobian is invertible for angles below pi");
    let ad = adjoint(&traj.start);
    let ad_inv = adjoint(&traj.start.inverse());
    let k = ad * jl_s * jl_inv * ad_inv * s;
    (Matrix6::identity() - k, k)
}
