//! Rigid-body algebra: SO(3)/SE(3) exponential and logarithm maps, the
//! skew operator, and the LiDAR -> motor -> base -> world frame chain.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// Orthonormal 3x3 rotation.
pub type RotationMatrix = Rotation3<f64>;

/// Rotations closer than this to pi have no unique principal logarithm.
pub const BRANCH_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(
        "rotation angle {angle} rad is within {BRANCH_MARGIN} of pi; logarithm branch is ambiguous"
    )]
    BranchAmbiguity { angle: f64 },
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

/// Tangent vector of SE(3): `v` is the translational part (meters), `w` the
/// rotational part (radians).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwistSE3 {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl TwistSE3 {
    pub fn new(v: Vector3<f64>, w: Vector3<f64>) -> Self {
        Self { v, w }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Stacked `[v; w]`.
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            v: Vector3::new(x[0], x[1], x[2]),
            w: Vector3::new(x[3], x[4], x[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            v: self.v * s,
            w: self.w * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v.iter().chain(self.w.iter()).all(|x| x.is_finite())
    }
}

impl std::ops::Neg for TwistSE3 {
    type Output = TwistSE3;
    fn neg(self) -> TwistSE3 {
        TwistSE3 {
            v: -self.v,
            w: -self.w,
        }
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation,
        }
    }

    /// Pose with only a heading about +z.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: rot_z(yaw),
            translation,
        }
    }

    /// From a unit quaternion given as `(qx, qy, qz, qw)`; the quaternion is
    /// renormalized.
    pub fn from_quaternion(translation: Vector3<f64>, qx: f64, qy: f64, qz: f64, qw: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz));
        Self {
            rotation: q.to_rotation_matrix(),
            translation,
        }
    }

    /// Quaternion `(qx, qy, qz, qw)` with `qw >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        let q = if q.w < 0.0 {
            -q.into_inner()
        } else {
            q.into_inner()
        };
        [q.i, q.j, q.k, q.w]
    }

    pub fn inverse(&self) -> Self {
        let r_inv = self.rotation.inverse();
        Self {
            rotation: r_inv,
            translation: -(r_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn yaw(&self) -> f64 {
        let m = self.rotation.matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }

    pub fn is_finite(&self) -> bool {
        self.translation.iter().all(|x| x.is_finite())
            && self.rotation.matrix().iter().all(|x| x.is_finite())
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;
    /// Re-orthonormalizes the product so long chains stay in SO(3).
    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        let mut rotation = self.rotation * rhs.rotation;
        rotation.renormalize();
        PoseSE3 {
            rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

impl Mul<&PoseSE3> for &PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: &PoseSE3) -> PoseSE3 {
        *self * *rhs
    }
}

/// `[u]x`, so that `skew(u) * x == u.cross(&x)`.
pub fn skew(u: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Right-handed rotation about +z.
pub fn rot_z(angle: f64) -> RotationMatrix {
    RotationMatrix::from_axis_angle(&Vector3::z_axis(), angle)
}

/// Rodrigues' formula.
pub fn so3_exp(w: &Vector3<f64>) -> RotationMatrix {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            one_minus_cos_over_sq(theta2),
        )
    } else {
        (
            theta.sin() / theta,
            2.0 * (0.5 * theta).sin().powi(2) / theta2,
        )
    };
    let m = Matrix3::identity() + k * a + k * k * b;
    RotationMatrix::from_matrix_unchecked(m)
}

/// Series of `(1 - cos t) / t^2` for small `t`.
fn one_minus_cos_over_sq(theta2: f64) -> f64 {
    0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
}

/// Principal logarithm of a rotation; errors within [`BRANCH_MARGIN`] of pi.
pub fn so3_log(r: &RotationMatrix) -> Result<Vector3<f64>, GeometryError> {
    let m = r.matrix();
    let s = 0.5
        * Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = s.norm();
    let theta = sin.atan2(cos);
    if theta >= PI - BRANCH_MARGIN {
        return Err(GeometryError::BranchAmbiguity { angle: theta });
    }
    let factor = if theta < SMALL_ANGLE {
        1.0 + theta * theta / 6.0 + 7.0 * theta.powi(4) / 360.0
    } else {
        theta / sin
    };
    Ok(s * factor)
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (
            one_minus_cos_over_sq(theta2),
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        (
            2.0 * (0.5 * theta).sin().powi(2) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * a + k * k * b
}

fn so3_left_jacobian_inv(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(w);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

pub fn se3_exp(xi: &TwistSE3) -> PoseSE3 {
    PoseSE3 {
        rotation: so3_exp(&xi.w),
        translation: so3_left_jacobian(&xi.w) * xi.v,
    }
}

pub fn se3_log(t: &PoseSE3) -> Result<TwistSE3, GeometryError> {
    let w = so3_log(&t.rotation)?;
    Ok(TwistSE3 {
        v: so3_left_jacobian_inv(&w) * t.translation,
        w,
    })
}

/// Fixed mounting of the LiDAR on the motor stage (`R^M_L`, `r^M_L`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarMount {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Default for LidarMount {
    fn default() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }
}

impl LidarMount {
    pub fn as_pose(&self) -> PoseSE3 {
        PoseSE3::new(self.rotation, self.translation)
    }

    /// LiDAR frame expressed in the base frame at motor angle `theta`. The
    /// motor turns the stage about the base +z axis.
    pub fn sensor_in_base(&self, theta: f64) -> PoseSE3 {
        PoseSE3::new(rot_z(theta), Vector3::zeros()) * self.as_pose()
    }
}

/// `p_W = R^W_B (R^B_M(theta) (R^M_L p_L + r^M_L)) + r^W_B`.
pub fn chain_to_world(
    p_l: &Vector3<f64>,
    theta: f64,
    mount: &LidarMount,
    base: &PoseSE3,
) -> Vector3<f64> {
    let p_m = mount.rotation * p_l + mount.translation;
    let p_b = rot_z(theta) * p_m;
    base.rotation * p_b + base.translation
}

/// Wraps to `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

/// Wraps to `[0, 2pi)`.
pub fn wrap_two_pi(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}
