//! Rigid-body transforms in SE(3) and their twist coordinates in se(3).
//!
//! Rotations are unit quaternions stored as `(w, x, y, z)`. Every constructor
//! and every group operation renormalizes, so long chains of compositions do
//! not drift off the unit sphere.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = [f64; 3];

/// Absolute tolerance used by the approximate comparisons in this module.
pub const TOLERANCE: f64 = 1e-9;

/// `log_map` refuses rotations whose angle is within this margin of π.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum Se3Error {
    #[error("rotation angle {angle} is too close to pi for a well-conditioned logarithm")]
    NearPiRotation { angle: f64 },
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Unit quaternion `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Builds a quaternion and normalizes it. A zero quaternion maps to identity.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }.normalized()
    }

    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = norm(axis);
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let k = s / n;
        Quat::new(c, axis[0] * k, axis[1] * k, axis[2] * k)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Quat::IDENTITY;
        }
        Quat { w: self.w / n, x: self.x / n, y: self.y / n, z: self.z / n }
    }

    pub fn conjugate(&self) -> Self {
        Quat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn vector(&self) -> Vec3 {
        [self.x, self.y, self.z]
    }

    /// Hamilton product, not renormalized.
    fn mul_raw(&self, o: &Quat) -> Quat {
        Quat {
            w: self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            x: self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            y: self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            z: self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        }
    }

    pub fn mul(&self, o: &Quat) -> Quat {
        self.mul_raw(o).normalized()
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let q = self.vector();
        let t = scale(cross(q, v), 2.0);
        add(add(v, scale(t, self.w)), cross(q, t))
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        2.0 * norm(self.vector()).atan2(self.w.abs())
    }

    /// From a row-major rotation matrix (Shepperd's method).
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        let tr = m[0][0] + m[1][1] + m[2][2];
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quat::new(0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
            Quat::new((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
            Quat::new((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s)
        }
    }

    /// Intrinsic z-y-x Euler angles (yaw, pitch, roll), radians.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64) -> Self {
        let qz = Quat::from_axis_angle([0.0, 0.0, 1.0], yaw);
        let qy = Quat::from_axis_angle([0.0, 1.0, 0.0], pitch);
        let qx = Quat::from_axis_angle([1.0, 0.0, 0.0], roll);
        qz.mul(&qy).mul(&qx)
    }

    /// Row-major 3×3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quat { w, x, y, z } = *self;
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    }
}

/// Lie-algebra coordinates of a rigid motion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 6]", into = "[f64; 6]")]
pub struct Twist {
    /// Rotation vector, radians.
    pub angular: Vec3,
    /// Meters.
    pub linear: Vec3,
}

impl Twist {
    pub const ZERO: Twist = Twist { angular: [0.0; 3], linear: [0.0; 3] };

    pub fn new(angular: Vec3, linear: Vec3) -> Self {
        Twist { angular, linear }
    }

    pub fn scaled(&self, s: f64) -> Twist {
        Twist { angular: scale(self.angular, s), linear: scale(self.linear, s) }
    }

    pub fn to_array(&self) -> [f64; 6] {
        let (w, v) = (self.angular, self.linear);
        [w[0], w[1], w[2], v[0], v[1], v[2]]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Twist { angular: [a[0], a[1], a[2]], linear: [a[3], a[4], a[5]] }
    }

    pub fn max_abs_diff(&self, other: &Twist) -> f64 {
        self.to_array().iter().zip(other.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl From<[f64; 6]> for Twist {
    fn from(a: [f64; 6]) -> Self {
        Twist::from_array(a)
    }
}

impl From<Twist> for [f64; 6] {
    fn from(t: Twist) -> Self {
        t.to_array()
    }
}

/// A rigid transform. Serialized as `[qw, qx, qy, qz, tx, ty, tz]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 7]", into = "[f64; 7]")]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl From<[f64; 7]> for Pose {
    /// Already-unit quaternions are kept bit-exact; others are normalized.
    fn from(a: [f64; 7]) -> Self {
        let q = Quat { w: a[0], x: a[1], y: a[2], z: a[3] };
        if (q.norm() - 1.0).abs() <= 1e-12 {
            Pose::from_array_raw(a)
        } else {
            Pose::new(q, [a[4], a[5], a[6]])
        }
    }
}

impl From<Pose> for [f64; 7] {
    fn from(p: Pose) -> Self {
        p.to_array()
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: Quat::IDENTITY, translation: [0.0; 3] };

    pub fn new(rotation: Quat, translation: Vec3) -> Self {
        Pose { rotation: rotation.normalized(), translation }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose { rotation: Quat::IDENTITY, translation: t }
    }

    pub fn from_rotation(q: Quat) -> Self {
        Pose::new(q, [0.0; 3])
    }

    /// Rotation about the world z axis followed by a translation.
    pub fn from_yaw(yaw: f64, t: Vec3) -> Self {
        Pose::new(Quat::from_axis_angle([0.0, 0.0, 1.0], yaw), t)
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation;
        let t = self.translation;
        [q.w, q.x, q.y, q.z, t[0], t[1], t[2]]
    }

    /// Rebuilds a pose from `to_array` output without renormalizing, so the
    /// bits survive a round trip.
    pub fn from_array_raw(a: [f64; 7]) -> Self {
        Pose { rotation: Quat { w: a[0], x: a[1], y: a[2], z: a[3] }, translation: [a[4], a[5], a[6]] }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.mul(&other.rotation),
            translation: add(self.translation, self.rotation.rotate(other.translation)),
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.conjugate().normalized();
        Pose { rotation: r, translation: scale(r.rotate(self.translation), -1.0) }
    }

    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        add(self.rotation.rotate(p), self.translation)
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Signed rotation about the world z axis (twist part of a swing-twist split).
    pub fn yaw(&self) -> f64 {
        let q = self.rotation;
        2.0 * q.z.atan2(q.w)
    }

    /// Rotation angle and translation distance of `self⁻¹ · other`.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.rotation_angle(), norm(d.translation))
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        let (a, t) = self.distance(other);
        a <= tol && t <= tol
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = self.rotation.to_matrix();
        let t = self.translation;
        [
            [r[0][0], r[0][1], r[0][2], t[0]],
            [r[1][0], r[1][1], r[1][2], t[1]],
            [r[2][0], r[2][1], r[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// A relative transform; the frame it is expressed in is fixed by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseDelta(pub Pose);

impl PoseDelta {
    pub const IDENTITY: PoseDelta = PoseDelta(Pose::IDENTITY);

    /// The delta `from⁻¹ · to`, i.e. `to` expressed in the frame of `from`.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        PoseDelta(from.inverse().compose(to))
    }

    pub fn pose(&self) -> &Pose {
        &self.0
    }

    pub fn then(&self, next: &PoseDelta) -> PoseDelta {
        PoseDelta(self.0.compose(&next.0))
    }

    pub fn apply_to(&self, p: &Pose) -> Pose {
        p.compose(&self.0)
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.0.approx_eq(&Pose::IDENTITY, tol)
    }
}

/// Exponential map from se(3) to SE(3).
pub fn exp_map(xi: &Twist) -> Pose {
    let w = xi.angular;
    let theta2 = dot(w, w);
    let theta = theta2.sqrt();
    let half = 0.5 * theta;

    // sin(θ/2)/θ and the two coefficients of the left Jacobian V.
    let (qw, sinc_half, a, b) = if theta < SMALL_ANGLE {
        let t4 = theta2 * theta2;
        (
            1.0 - theta2 / 8.0 + t4 / 384.0,
            0.5 - theta2 / 48.0 + t4 / 3840.0,
            0.5 - theta2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let (sh, ch) = half.sin_cos();
        (ch, sh / theta, 2.0 * sh * sh / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let rotation = Quat::new(qw, w[0] * sinc_half, w[1] * sinc_half, w[2] * sinc_half);

    let v = xi.linear;
    let wv = cross(w, v);
    let wwv = cross(w, wv);
    let translation = add(add(v, scale(wv, a)), scale(wwv, b));
    Pose { rotation, translation }
}

/// Logarithm map from SE(3) to se(3).
///
/// Fails for rotation angles within [`NEAR_PI_MARGIN`] of π, where the
/// rotation axis is ill-conditioned. Callers split such deltas with
/// [`split_delta`] first.
pub fn log_map(p: &Pose) -> Result<Twist, Se3Error> {
    let mut q = p.rotation.normalized();
    if q.w < 0.0 {
        q = Quat { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
    }
    let qv = q.vector();
    let s = norm(qv);
    let theta = 2.0 * s.atan2(q.w);
    if theta >= PI - NEAR_PI_MARGIN {
        return Err(Se3Error::NearPiRotation { angle: theta });
    }

    let theta2 = theta * theta;
    let (factor, c) = if theta < SMALL_ANGLE {
        // θ/sin(θ/2) expanded around zero, with s = sin(θ/2).
        let factor = if s == 0.0 { 2.0 } else { theta / s };
        (factor, 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0)
    } else {
        (theta / s, (1.0 - 0.5 * theta * q.w / s) / theta2)
    };
    let w = scale(qv, factor);

    let t = p.translation;
    let wt = cross(w, t);
    let wwt = cross(w, wt);
    let v = add(sub(t, scale(wt, 0.5)), scale(wwt, c));
    Ok(Twist { angular: w, linear: v })
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(p: &Pose) -> Pose {
    p.inverse()
}

/// `frame · x · frame⁻¹`: re-expresses the motion `x` in the coordinates of `frame`.
pub fn similarity_transform(frame: &Pose, x: &PoseDelta) -> PoseDelta {
    PoseDelta(frame.compose(&x.0).compose(&frame.inverse()))
}

/// `exp(t · log(p))`, a fractional power of a rigid motion.
pub fn interpolate(p: &Pose, t: f64) -> Result<Pose, Se3Error> {
    Ok(exp_map(&log_map(p)?.scaled(t)))
}

/// Splits a delta into `2^k` equal pieces so that each piece rotates by less
/// than π/2. Returns the piece and the repeat count.
pub fn split_delta(delta: &Pose) -> (Pose, usize) {
    let mut piece = *delta;
    let mut count = 1usize;
    while piece.rotation_angle() >= PI / 2.0 {
        piece = halve(&piece);
        count *= 2;
    }
    (piece, count)
}

/// A square root of a rigid motion, valid up to and including a rotation of π.
fn halve(p: &Pose) -> Pose {
    let mut q = p.rotation;
    if q.w < 0.0 {
        q = Quat { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
    }
    // half-angle quaternion: normalize(q + 1)
    let h = Quat::new(q.w + 1.0, q.x, q.y, q.z);
    // translation: solve (I + R_h) u = t for u
    let r = h.to_matrix();
    let t = p.translation;
    let m = [[1.0 + r[0][0], r[0][1], r[0][2]], [r[1][0], 1.0 + r[1][1], r[1][2]], [r[2][0], r[2][1], 1.0 + r[2][2]]];
    Pose { rotation: h, translation: solve3(m, t) }
}

fn solve3(m: [[f64; 3]; 3], b: Vec3) -> Vec3 {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *o = det(mc) / d;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn rz(angle: f64) -> [[f64; 4]; 4] {
        let (s, c) = angle.sin_cos();
        [[c, -s, 0.0, 0.0], [s, c, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    }

    fn trans(t: Vec3) -> [[f64; 4]; 4] {
        [[1.0, 0.0, 0.0, t[0]], [0.0, 1.0, 0.0, t[1]], [0.0, 0.0, 1.0, t[2]], [0.0, 0.0, 0.0, 1.0]]
    }

    fn matmul(a: [[f64; 4]; 4], b: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    fn assert_mat_close(a: [[f64; 4]; 4], b: [[f64; 4]; 4]) {
        for i in 0..4 {
            for j in 0..4 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-12, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(exp_map(&Twist::ZERO), Pose::IDENTITY);
    }

    #[test]
    fn exp_quarter_turn_about_z_matches_rodrigues() {
        let p = exp_map(&Twist::new([0.0, 0.0, FRAC_PI_2], [0.0; 3]));
        // Rodrigues with unit axis z and θ = π/2: R = I + K (sin = 1, 1 - cos = 1).
        let expected = rz(FRAC_PI_2);
        assert_mat_close(p.to_matrix(), expected);
        let x = p.rotation.rotate([1.0, 0.0, 0.0]);
        assert!((x[0]).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exp_pure_translation() {
        let p = exp_map(&Twist::new([0.0; 3], [1.0, 2.0, 3.0]));
        assert_eq!(p.rotation, Quat::IDENTITY);
        assert_eq!(p.translation, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_map(&Pose::IDENTITY).unwrap(), Twist::ZERO);
        let xi = Twist::new([0.0, 0.0, FRAC_PI_2], [0.0; 3]);
        let back = log_map(&exp_map(&xi)).unwrap();
        assert!(back.max_abs_diff(&xi) < 1e-12);
        let back = log_map(&Pose::from_translation([1.0, 2.0, 3.0])).unwrap();
        assert_eq!(back, Twist::new([0.0; 3], [1.0, 2.0, 3.0]));
    }

    #[test]
    fn log_near_pi_is_an_error() {
        let p = Pose::from_rotation(Quat::from_axis_angle([1.0, 0.0, 0.0], PI));
        assert!(matches!(log_map(&p), Err(Se3Error::NearPiRotation { .. })));
        let p = Pose::from_rotation(Quat::from_axis_angle([0.0, 1.0, 0.0], PI - 1e-3));
        assert!(log_map(&p).is_ok());
    }

    #[test]
    fn compose_examples() {
        let p = exp_map(&Twist::new([0.3, -0.2, 0.9], [0.1, 0.5, -0.4]));
        assert!(Pose::IDENTITY.compose(&p).approx_eq(&p, 1e-15));
        assert!(p.compose(&p.inverse()).approx_eq(&Pose::IDENTITY, TOLERANCE));
        let a = Pose::from_translation([1.0, 0.0, 0.0]);
        let b = Pose::from_translation([0.0, 1.0, 0.0]);
        assert_eq!(a.compose(&b).translation, [1.0, 1.0, 0.0]);
    }

    #[test]
    fn similarity_examples() {
        let x = PoseDelta(exp_map(&Twist::new([0.1, 0.2, 0.3], [0.4, 0.5, 0.6])));
        let y = similarity_transform(&Pose::IDENTITY, &x);
        assert!(y.0.approx_eq(&x.0, 1e-15));

        let frame = exp_map(&Twist::new([0.5, -1.0, 0.2], [1.0, 2.0, 3.0]));
        assert!(similarity_transform(&frame, &PoseDelta::IDENTITY).is_identity(1e-12));

        let frame = Pose::from_yaw(FRAC_PI_2, [0.0; 3]);
        let x = PoseDelta(Pose::from_translation([1.0, 0.0, 0.0]));
        let got = similarity_transform(&frame, &x);
        let oracle = matmul(matmul(rz(FRAC_PI_2), trans([1.0, 0.0, 0.0])), rz(-FRAC_PI_2));
        assert_mat_close(got.0.to_matrix(), oracle);
        assert!((got.0.translation[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn split_delta_produces_sub_half_pi_pieces() {
        let big = Pose::new(Quat::from_axis_angle([0.0, 0.0, 1.0], PI), [0.3, -0.2, 0.1]);
        let (piece, count) = split_delta(&big);
        assert!(piece.rotation_angle() < FRAC_PI_2);
        let mut acc = Pose::IDENTITY;
        for _ in 0..count {
            acc = acc.compose(&piece);
        }
        assert!(acc.approx_eq(&big, 1e-12), "{acc:?}");
    }

    #[test]
    fn yaw_of_pure_z_rotation() {
        let p = Pose::from_yaw(0.7, [0.0; 3]);
        assert!((p.yaw() - 0.7).abs() < 1e-15);
    }
}
