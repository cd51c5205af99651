//! Minimal 3D linear algebra: vectors, rotation matrices, quaternions and
//! rigid transforms, generic over the scalar type.
//!
//! Rigid transforms follow the world-to-camera convention throughout the
//! crate: `x_cam = R * x_world + t`.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<S>(pub [S; 3]);

impl<S: Scalar> Vec3<S> {
    #[inline]
    pub fn new(x: S, y: S, z: S) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn zero() -> Self {
        Vec3([S::zero(); 3])
    }

    #[inline]
    pub fn x(&self) -> S {
        self.0[0]
    }

    #[inline]
    pub fn y(&self) -> S {
        self.0[1]
    }

    #[inline]
    pub fn z(&self) -> S {
        self.0[2]
    }

    #[inline]
    pub fn add(&self, o: &Self) -> Self {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }

    #[inline]
    pub fn sub(&self, o: &Self) -> Self {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }

    #[inline]
    pub fn scale(&self, s: S) -> Self {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> S {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Vec3([
            self.0[1] * o.0[2] - self.0[2] * o.0[1],
            self.0[2] * o.0[0] - self.0[0] * o.0[2],
            self.0[0] * o.0[1] - self.0[1] * o.0[0],
        ])
    }

    #[inline]
    pub fn norm_sq(&self) -> S {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> S {
        self.norm_sq().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        self.scale(S::one() / n)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<S>(pub [[S; 3]; 3]);

impl<S: Scalar> Mat3<S> {
    pub fn identity() -> Self {
        let mut m = [[S::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = S::one();
        }
        Mat3(m)
    }

    pub fn from_rows(r0: Vec3<S>, r1: Vec3<S>, r2: Vec3<S>) -> Self {
        Mat3([r0.0, r1.0, r2.0])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3<S> {
        Vec3(self.0[i])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3<S> {
        Vec3([self.0[0][j], self.0[1][j], self.0[2][j]])
    }

    pub fn transpose(&self) -> Self {
        let mut m = [[S::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[j][i] = self.0[i][j];
            }
        }
        Mat3(m)
    }

    pub fn mul_vec(&self, v: &Vec3<S>) -> Vec3<S> {
        Vec3([
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        ])
    }

    pub fn mul_mat(&self, o: &Mat3<S>) -> Mat3<S> {
        let mut m = [[S::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = S::zero();
                for (k, row) in o.0.iter().enumerate() {
                    acc += self.0[i][k] * row[j];
                }
                m[i][j] = acc;
            }
        }
        Mat3(m)
    }

    pub fn det(&self) -> S {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> S {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Checks orthonormality with determinant +1 within `tol`.
    pub fn is_rotation(&self, tol: S) -> bool {
        let rrt = self.mul_mat(&self.transpose());
        let id = Self::identity();
        for i in 0..3 {
            for j in 0..3 {
                if (rrt.0[i][j] - id.0[i][j]).abs() > tol {
                    return false;
                }
            }
        }
        (self.det() - S::one()).abs() <= tol
    }

    /// Rotation about an arbitrary unit axis by `angle` radians (Rodrigues).
    pub fn rotation_about_axis(axis: &Vec3<S>, angle: S) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let one_c = S::one() - c;
        let [x, y, z] = axis.normalized().0;
        Mat3([
            [c + x * x * one_c, x * y * one_c - z * s, x * z * one_c + y * s],
            [y * x * one_c + z * s, c + y * y * one_c, y * z * one_c - x * s],
            [z * x * one_c - y * s, z * y * one_c + x * s, c + z * z * one_c],
        ])
    }

    /// Geodesic angle between two rotations.
    pub fn rotation_angle_to(&self, other: &Mat3<S>) -> S {
        let rel = self.transpose().mul_mat(other);
        let c = (rel.trace() - S::one()) * S::half();
        c.min(S::one()).max(-S::one()).acos()
    }
}

/// Unit quaternion (w, x, y, z).
#[derive(Debug, Clone, Copy)]
pub struct Quat<S> {
    pub w: S,
    pub x: S,
    pub y: S,
    pub z: S,
}

impl<S: Scalar> Quat<S> {
    pub fn new(w: S, x: S, y: S, z: S) -> Self {
        Quat { w, x, y, z }
    }

    pub fn dot(&self, o: &Self) -> S {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn negated(&self) -> Self {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    pub fn normalized(&self) -> Self {
        let n = self.dot(self).sqrt();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    /// Shepperd's method, stable for all rotation matrices.
    pub fn from_mat3(m: &Mat3<S>) -> Self {
        let r = &m.0;
        let tr = m.trace();
        let q = if tr > S::zero() {
            let s = (tr + S::one()).sqrt() * S::two();
            Quat::new(
                s * S::of(0.25),
                (r[2][1] - r[1][2]) / s,
                (r[0][2] - r[2][0]) / s,
                (r[1][0] - r[0][1]) / s,
            )
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (S::one() + r[0][0] - r[1][1] - r[2][2]).sqrt() * S::two();
            Quat::new(
                (r[2][1] - r[1][2]) / s,
                s * S::of(0.25),
                (r[0][1] + r[1][0]) / s,
                (r[0][2] + r[2][0]) / s,
            )
        } else if r[1][1] > r[2][2] {
            let s = (S::one() + r[1][1] - r[0][0] - r[2][2]).sqrt() * S::two();
            Quat::new(
                (r[0][2] - r[2][0]) / s,
                (r[0][1] + r[1][0]) / s,
                s * S::of(0.25),
                (r[1][2] + r[2][1]) / s,
            )
        } else {
            let s = (S::one() + r[2][2] - r[0][0] - r[1][1]).sqrt() * S::two();
            Quat::new(
                (r[1][0] - r[0][1]) / s,
                (r[0][2] + r[2][0]) / s,
                (r[1][2] + r[2][1]) / s,
                s * S::of(0.25),
            )
        };
        q.normalized()
    }

    pub fn to_mat3(&self) -> Mat3<S> {
        let Quat { w, x, y, z } = self.normalized();
        let two = S::two();
        Mat3([
            [
                S::one() - two * (y * y + z * z),
                two * (x * y - z * w),
                two * (x * z + y * w),
            ],
            [
                two * (x * y + z * w),
                S::one() - two * (x * x + z * z),
                two * (y * z - x * w),
            ],
            [
                two * (x * z - y * w),
                two * (y * z + x * w),
                S::one() - two * (x * x + y * y),
            ],
        ])
    }
}

/// World-to-camera rigid transform: `x_cam = r * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid<S> {
    pub r: Mat3<S>,
    pub t: Vec3<S>,
}

impl<S: Scalar> Rigid<S> {
    pub fn identity() -> Self {
        Rigid {
            r: Mat3::identity(),
            t: Vec3::zero(),
        }
    }

    pub fn new(r: Mat3<S>, t: Vec3<S>) -> Self {
        Rigid { r, t }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3<S>) -> Vec3<S> {
        self.r.mul_vec(x).add(&self.t)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.transpose();
        Rigid {
            r: rt,
            t: rt.mul_vec(&self.t).scale(-S::one()),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Rigid<S>) -> Self {
        Rigid {
            r: self.r.mul_mat(&other.r),
            t: self.r.mul_vec(&other.t).add(&self.t),
        }
    }

    /// Camera center in world coordinates: `-Rᵀ t`.
    pub fn center(&self) -> Vec3<S> {
        self.r.transpose().mul_vec(&self.t).scale(-S::one())
    }

    /// Camera axis directions expressed in world coordinates (rows of R).
    pub fn axis_world(&self, i: usize) -> Vec3<S> {
        self.r.row(i)
    }

    pub fn max_abs_diff(&self, other: &Rigid<S>) -> S {
        let mut m = S::zero();
        for i in 0..3 {
            for j in 0..3 {
                m = m.max((self.r.0[i][j] - other.r.0[i][j]).abs());
            }
            m = m.max((self.t.0[i] - other.t.0[i]).abs());
        }
        m
    }
}
