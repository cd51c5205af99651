//! Camera normalization, Plücker raymaps and trajectory generation.
//!
//! Conventions: world-to-camera rigid transforms, pinhole intrinsics in
//! pixels with x right / y down / z forward, pixel centers at half-integer
//! coordinates.

use crate::math::{Mat3, Quat, Rigid, Vec3};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("degenerate intrinsics: focal lengths must be positive")]
    DegenerateIntrinsics,
    #[error("scale normalization needs at least one positive depth sample")]
    NoPositiveDepths,
    #[error("empty pose list")]
    EmptyPoses,
}

/// Pinhole intrinsics (zero skew): `u = fx*x/z + cx`, `v = fy*y/z + cy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<S> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
}

impl<S: Scalar> Intrinsics<S> {
    pub fn new(fx: S, fy: S, cx: S, cy: S) -> Self {
        Intrinsics { fx, fy, cx, cy }
    }

    pub fn is_valid(&self) -> bool {
        self.fx > S::zero() && self.fy > S::zero()
    }

    pub fn matrix(&self) -> Mat3<S> {
        let mut m = Mat3::identity();
        m.0[0][0] = self.fx;
        m.0[1][1] = self.fy;
        m.0[0][2] = self.cx;
        m.0[1][2] = self.cy;
        m
    }

    /// Camera-frame direction through image point `(u, v)` on the z=1 plane.
    #[inline]
    pub fn unproject_dir(&self, u: S, v: S) -> Vec3<S> {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, S::one())
    }

    /// Projects a camera-frame point; `None` when at or behind the camera.
    #[inline]
    pub fn project(&self, p_cam: &Vec3<S>) -> Option<(S, S)> {
        if p_cam.z() <= S::zero() {
            return None;
        }
        Some((
            self.fx * p_cam.x() / p_cam.z() + self.cx,
            self.fy * p_cam.y() / p_cam.z() + self.cy,
        ))
    }

    /// Rescales intrinsics for an image resized by `factor`.
    pub fn scaled(&self, factor: S) -> Self {
        Intrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: self.cx * factor,
            cy: self.cy * factor,
        }
    }
}

/// Model geometry shared across the pipeline.
///
/// Per-slot input channels concatenate to `2k + d + 7`: `k` latent +
/// `k` warp-latent + `d` appearance + `6` raymap + `1` mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of view slots `v`.
    pub slots: usize,
    /// Latent channel count `k`.
    pub latent_channels: usize,
    /// Appearance embedding dimension `d`.
    pub appearance_dim: usize,
    /// Latent spatial resolution `n`.
    pub latent_res: usize,
    /// Image resolution `N`.
    pub image_res: usize,
}

impl ModelConfig {
    /// Desk-scale defaults used throughout the test harness.
    pub fn desk() -> Self {
        ModelConfig {
            slots: 4,
            latent_channels: 12,
            appearance_dim: 8,
            latent_res: 16,
            image_res: 32,
        }
    }

    pub fn input_channels(&self) -> usize {
        2 * self.latent_channels + self.appearance_dim + 7
    }

    /// Channel ranges of the concatenated per-slot input, in order:
    /// latent, warp latent, appearance, raymap, mask.
    pub fn latent_range(&self) -> std::ops::Range<usize> {
        0..self.latent_channels
    }

    pub fn warp_range(&self) -> std::ops::Range<usize> {
        self.latent_channels..2 * self.latent_channels
    }

    pub fn appearance_range(&self) -> std::ops::Range<usize> {
        2 * self.latent_channels..2 * self.latent_channels + self.appearance_dim
    }

    pub fn raymap_range(&self) -> std::ops::Range<usize> {
        let start = 2 * self.latent_channels + self.appearance_dim;
        start..start + 6
    }

    pub fn mask_channel(&self) -> usize {
        2 * self.latent_channels + self.appearance_dim + 6
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.slots < 2 {
            problems.push("slots must be >= 2".to_string());
        }
        if self.latent_res == 0 || self.image_res % self.latent_res != 0 {
            problems.push(format!(
                "latent_res {} must divide image_res {}",
                self.latent_res, self.image_res
            ));
        }
        if self.appearance_dim < 1 {
            problems.push("appearance_dim must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// Per-pixel Plücker ray coordinates, `6 × n × n`, each 6-vector unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Raymap<S>(pub Tensor<S>);

impl<S: Scalar> Raymap<S> {
    pub fn grid(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn max_norm_error(&self) -> S {
        let n = self.0.height();
        let mut worst = S::zero();
        for i in 0..n {
            for j in 0..n {
                let norm_sq: S = (0..6).map(|c| self.0.at(c, i, j).powi(2)).sum();
                worst = worst.max((norm_sq.sqrt() - S::one()).abs());
            }
        }
        worst
    }
}

/// Re-bases poses so the first becomes the identity; pairwise relative
/// transforms are preserved exactly.
pub fn relativize_poses<S: Scalar>(poses: &[Rigid<S>]) -> Vec<Rigid<S>> {
    assert!(!poses.is_empty());
    let inv0 = poses[0].inverse();
    poses.iter().map(|p| p.compose(&inv0)).collect()
}

/// Linear-interpolated percentile of unsorted samples, `q` in [0, 1].
pub fn percentile<S: Scalar>(samples: &[S], q: S) -> S {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = S::of_usize(sorted.len() - 1) * q;
    let lo = h.floor().lossy_f64() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - h.floor();
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Divides all translations by the 10th percentile of the first view's
/// sparse depths; returns the rescaled poses and the scale used.
pub fn normalize_scale<S: Scalar>(
    poses: &[Rigid<S>],
    sparse_depths_view0: &[S],
) -> Result<(Vec<Rigid<S>>, S), CameraError> {
    let positive: Vec<S> = sparse_depths_view0
        .iter()
        .copied()
        .filter(|d| *d > S::zero())
        .collect();
    if positive.is_empty() {
        return Err(CameraError::NoPositiveDepths);
    }
    let scale = percentile(&positive, S::of(0.1));
    let scaled = poses
        .iter()
        .map(|p| Rigid::new(p.r, p.t.scale(S::one() / scale)))
        .collect();
    Ok((scaled, scale))
}

/// Joint unit normalization of homogeneous Plücker coordinates `(d, o×d)`.
pub fn plucker_normalize<S: Scalar>(dir: &Vec3<S>, moment: &Vec3<S>) -> [S; 6] {
    let scale = S::one() / (dir.norm_sq() + moment.norm_sq()).sqrt();
    [
        dir.x() * scale,
        dir.y() * scale,
        dir.z() * scale,
        moment.x() * scale,
        moment.y() * scale,
        moment.z() * scale,
    ]
}

/// Plücker raymap sampled at latent-grid pixel centers.
///
/// For each latent pixel the image-plane point is unprojected to a world
/// ray with (unnormalized) direction `d` from the camera center `o`; the
/// stored entry is `(d, o×d)` divided by `sqrt(|d|^2 + |o×d|^2)`.
pub fn plucker_raymap<S: Scalar>(
    intr: &Intrinsics<S>,
    pose: &Rigid<S>,
    latent_res: usize,
    image_res: usize,
) -> Result<Raymap<S>, CameraError> {
    if !intr.is_valid() {
        return Err(CameraError::DegenerateIntrinsics);
    }
    let origin = pose.center();
    let r_t = pose.r.transpose();
    let step = S::of_usize(image_res) / S::of_usize(latent_res);
    let mut grid = Tensor::zeros(6, latent_res, latent_res);
    for i in 0..latent_res {
        for j in 0..latent_res {
            let u = (S::of_usize(j) + S::half()) * step;
            let v = (S::of_usize(i) + S::half()) * step;
            let dir = r_t.mul_vec(&intr.unproject_dir(u, v));
            let moment = origin.cross(&dir);
            let entry = plucker_normalize(&dir, &moment);
            for (c, value) in entry.into_iter().enumerate() {
                grid.set(c, i, j, value);
            }
        }
    }
    Ok(Raymap(grid))
}

/// Geodesic rotation interpolation with shortest-arc sign correction;
/// endpoints are returned exactly.
pub fn slerp_rotation<S: Scalar>(r0: &Mat3<S>, r1: &Mat3<S>, t: S) -> Mat3<S> {
    if t == S::zero() {
        return *r0;
    }
    if t == S::one() {
        return *r1;
    }
    let q0 = Quat::from_mat3(r0);
    let mut q1 = Quat::from_mat3(r1);
    let mut dot = q0.dot(&q1);
    if dot < S::zero() {
        q1 = q1.negated();
        dot = -dot;
    }
    let dot = dot.min(S::one());
    let theta = dot.acos();
    let (w0, w1) = if theta < S::of(1e-9) {
        (S::one() - t, t)
    } else {
        let sin_theta = theta.sin();
        (
            ((S::one() - t) * theta).sin() / sin_theta,
            (t * theta).sin() / sin_theta,
        )
    };
    let q = Quat::new(
        w0 * q0.w + w1 * q1.w,
        w0 * q0.x + w1 * q1.x,
        w0 * q0.y + w1 * q1.y,
        w0 * q0.z + w1 * q1.z,
    );
    q.to_mat3()
}

/// `m` poses from `pose0` to `pose1` at `t = i/(m-1)`: translation vectors
/// lerped, rotations slerped.
pub fn interpolate_trajectory<S: Scalar>(
    pose0: &Rigid<S>,
    pose1: &Rigid<S>,
    m: usize,
) -> Vec<Rigid<S>> {
    assert!(m >= 2, "interpolation needs at least two poses");
    (0..m)
        .map(|i| {
            let t = S::of_usize(i) / S::of_usize(m - 1);
            let r = slerp_rotation(&pose0.r, &pose1.r, t);
            let tr = pose0.t.scale(S::one() - t).add(&pose1.t.scale(t));
            Rigid::new(r, tr)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Lateral,
    ZoomOut,
    Circular,
}

#[derive(Debug, Clone, Copy)]
pub struct TrajectoryParams<S> {
    pub frames: usize,
    /// Total extent: lateral shift or zoom distance in scene units, or the
    /// full orbit angle in radians for circular paths.
    pub magnitude: S,
    /// World-space point the trajectory keeps in view.
    pub fixation: Vec3<S>,
}

/// World-to-camera look-at keeping roll consistent with `y_hint`, a world
/// direction close to the desired camera y axis (which points down in
/// image space).
pub fn look_at_pose<S: Scalar>(center: &Vec3<S>, target: &Vec3<S>, y_hint: &Vec3<S>) -> Rigid<S> {
    look_at(center, target, y_hint)
}

fn look_at<S: Scalar>(center: &Vec3<S>, target: &Vec3<S>, up_hint: &Vec3<S>) -> Rigid<S> {
    let z = target.sub(center).normalized();
    let y = up_hint.sub(&z.scale(up_hint.dot(&z))).normalized();
    let x = y.cross(&z);
    let r = Mat3::from_rows(x, y, z);
    Rigid::new(r, r.mul_vec(center).scale(-S::one()))
}

/// Deterministic hard-coded camera paths. Frame `i` sits at parameter
/// `i/(frames-1)`, so the first frame is at the base position and the last
/// at full magnitude (a `2π` circular path returns to the start).
pub fn canned_trajectory<S: Scalar>(
    kind: TrajectoryKind,
    base: &Rigid<S>,
    params: &TrajectoryParams<S>,
) -> Vec<Rigid<S>> {
    assert!(params.frames >= 2, "canned trajectories need >= 2 frames");
    let center0 = base.center();
    let x_axis = base.axis_world(0);
    let y_axis = base.axis_world(1);
    let z_axis = base.axis_world(2);
    let denom = S::of_usize(params.frames - 1);
    (0..params.frames)
        .map(|i| {
            let u = S::of_usize(i) / denom * params.magnitude;
            match kind {
                TrajectoryKind::Lateral => {
                    let c = center0.add(&x_axis.scale(u));
                    look_at(&c, &params.fixation, &y_axis)
                }
                TrajectoryKind::ZoomOut => {
                    let c = center0.sub(&z_axis.scale(u));
                    Rigid::new(base.r, base.r.mul_vec(&c).scale(-S::one()))
                }
                TrajectoryKind::Circular => {
                    let spin = Mat3::rotation_about_axis(&y_axis, u);
                    let c = params
                        .fixation
                        .add(&spin.mul_vec(&center0.sub(&params.fixation)));
                    look_at(&c, &params.fixation, &spin.mul_vec(&y_axis))
                }
            }
        })
        .collect()
}
