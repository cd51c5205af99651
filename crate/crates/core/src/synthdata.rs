//! Procedural multi-view scene generator with per-view appearance
//! perturbations: the desk-scale stand-in for in-the-wild photo
//! collections.
//!
//! Scenes are Lambertian raycasts of a textured ground plane plus spheres
//! and axis-aligned boxes, observed from cameras on a jittered orbit. Each
//! view carries ground-truth depth and an appearance class whose transform
//! (tint / brightness / gamma / letterboxing) is applied to RGB only, so
//! appearance variation is exactly attributable. Textures are deliberately
//! low-frequency: neighboring-pixel color differences stay small enough
//! for splat-based warps to be compared against re-renders.

use crate::camera::{look_at_pose, Intrinsics};
use crate::math::{Rigid, Vec3};
use crate::scalar::Scalar;
use crate::scenefmt::{AppearanceMeta, DepthMap, Scene, SparsePointCloud, ViewRecord};
use crate::tensor::Tensor;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Image resolution N (power of two, >= 16).
    pub resolution: usize,
    pub num_views: usize,
    pub primitive_count: usize,
    pub camera_orbit_radius: f64,
    /// Total azimuth arc (radians) the cameras spread over. In-the-wild
    /// collections cluster around popular viewpoints, so the default is a
    /// partial orbit with substantial view overlap.
    pub camera_arc: f64,
    pub appearance_classes: usize,
    pub seed: u64,
    /// Varied by [`generate_dataset`]; appearance class transforms depend
    /// only on `seed`, so labels stay comparable across a dataset.
    pub scene_index: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            resolution: 32,
            num_views: 4,
            primitive_count: 5,
            camera_orbit_radius: 4.0,
            camera_arc: 1.2,
            appearance_classes: 4,
            seed: 0,
            scene_index: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if self.resolution < 16 || !self.resolution.is_power_of_two() {
            problems.push("resolution must be a power of two >= 16".to_string());
        }
        if self.num_views < 2 {
            problems.push("num_views must be >= 2".to_string());
        }
        if self.appearance_classes < 1 {
            problems.push("appearance_classes must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// Global photometric perturbation of a view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppearanceTransform<S> {
    /// Per-channel gain in [0.5, 1.5].
    pub tint: [S; 3],
    /// Additive offset in [-0.2, 0.2].
    pub brightness: S,
    /// Exponent in [0.7, 1.4].
    pub gamma: S,
    /// Letterbox band height as a fraction of N, one of {0, 1/8, 1/4}.
    pub pad_fraction: S,
}

impl<S: Scalar> AppearanceTransform<S> {
    pub fn identity() -> Self {
        AppearanceTransform {
            tint: [S::one(); 3],
            brightness: S::zero(),
            gamma: S::one(),
            pad_fraction: S::zero(),
        }
    }

    pub fn to_meta(&self) -> AppearanceMeta {
        AppearanceMeta {
            tint: [
                self.tint[0].lossy_f64(),
                self.tint[1].lossy_f64(),
                self.tint[2].lossy_f64(),
            ],
            brightness: self.brightness.lossy_f64(),
            gamma: self.gamma.lossy_f64(),
            pad_fraction: self.pad_fraction.lossy_f64(),
        }
    }

    pub fn from_meta(meta: &AppearanceMeta) -> Self {
        AppearanceTransform {
            tint: [
                S::of(meta.tint[0]),
                S::of(meta.tint[1]),
                S::of(meta.tint[2]),
            ],
            brightness: S::of(meta.brightness),
            gamma: S::of(meta.gamma),
            pad_fraction: S::of(meta.pad_fraction),
        }
    }
}

/// `clamp(tint ⊙ image^gamma + brightness, 0, 1)`, then zero letterbox
/// bands of `pad_fraction * N` rows at the top and bottom.
pub fn apply_appearance_transform<S: Scalar>(
    image: &Tensor<S>,
    t: &AppearanceTransform<S>,
) -> Tensor<S> {
    let (c, h, w) = image.shape();
    assert_eq!(c, 3);
    let mut out = Tensor::zeros(3, h, w);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let v = image.at(ch, y, x).powf(t.gamma) * t.tint[ch] + t.brightness;
                out.set(ch, y, x, v.max(S::zero()).min(S::one()));
            }
        }
    }
    let band = (t.pad_fraction * S::of_usize(h)).round().lossy_f64() as usize;
    for ch in 0..3 {
        for y in (0..band).chain(h - band..h) {
            for x in 0..w {
                out.set(ch, y, x, S::zero());
            }
        }
    }
    out
}

/// The per-class transforms of a dataset, derived from the dataset seed
/// only. Class 0 is always the identity; the rest cycle through strongly
/// separated tint templates with seeded jitter.
pub fn class_transforms<S: Scalar>(classes: usize, seed: u64) -> Vec<AppearanceTransform<S>> {
    let mut rng = StdRng::seed_from_u64(splitmix(seed, 0x617070));
    let templates: [([f64; 3], f64, f64, f64); 6] = [
        ([1.45, 0.75, 0.7], 0.05, 0.85, 0.0),
        ([0.7, 0.75, 1.45], -0.05, 1.25, 0.25),
        ([0.75, 1.4, 0.75], 0.1, 1.0, 0.125),
        ([1.35, 1.2, 0.6], -0.15, 0.75, 0.0),
        ([0.55, 0.95, 1.3], 0.15, 1.35, 0.125),
        ([0.6, 0.6, 0.65], -0.1, 1.1, 0.25),
    ];
    (0..classes)
        .map(|c| {
            if c == 0 {
                return AppearanceTransform::identity();
            }
            let (tint, brightness, gamma, pad) = templates[(c - 1) % templates.len()];
            let mut jitter = |range: f64| (rng.gen::<f64>() - 0.5) * 2.0 * range;
            AppearanceTransform {
                tint: [
                    S::of((tint[0] + jitter(0.04)).clamp(0.5, 1.5)),
                    S::of((tint[1] + jitter(0.04)).clamp(0.5, 1.5)),
                    S::of((tint[2] + jitter(0.04)).clamp(0.5, 1.5)),
                ],
                brightness: S::of((brightness + jitter(0.02)).clamp(-0.2, 0.2)),
                gamma: S::of((gamma + jitter(0.03)).clamp(0.7, 1.4)),
                pad_fraction: S::of(pad),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Shape {
    Plane,
    Sphere { center: Vec3<f64>, radius: f64 },
    Box { center: Vec3<f64>, half: Vec3<f64> },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Texture {
    pub(crate) base: [f64; 3],
    pub(crate) dir: Vec3<f64>,
    pub(crate) freq: f64,
    pub(crate) amp: f64,
    pub(crate) phase: f64,
}

impl Texture {
    fn albedo(&self, p: &Vec3<f64>) -> [f64; 3] {
        let wave = 0.5 + 0.5 * (self.freq * self.dir.dot(p) + self.phase).sin();
        let gain = 1.0 - self.amp + self.amp * wave;
        [self.base[0] * gain, self.base[1] * gain, self.base[2] * gain]
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Primitive {
    pub(crate) shape: Shape,
    pub(crate) texture: Texture,
}

pub(crate) struct Raycaster {
    pub(crate) primitives: Vec<Primitive>,
    pub(crate) light: Vec3<f64>,
    pub(crate) ambient: f64,
}

const RAY_EPS: f64 = 1e-6;

impl Raycaster {
    /// Nearest hit along `o + s*d` with `s > RAY_EPS`:
    /// `(s, normal, albedo)`. `d` need not be normalized, so with camera
    /// rays of unit z the parameter s equals camera-frame depth.
    fn intersect(&self, o: &Vec3<f64>, d: &Vec3<f64>) -> Option<(f64, Vec3<f64>, [f64; 3])> {
        let mut best: Option<(f64, Vec3<f64>, &Texture)> = None;
        for prim in &self.primitives {
            let hit = match prim.shape {
                Shape::Plane => {
                    if d.y().abs() < 1e-12 {
                        None
                    } else {
                        let s = -o.y() / d.y();
                        (s > RAY_EPS).then_some((s, Vec3::new(0.0, 1.0, 0.0)))
                    }
                }
                Shape::Sphere { center, radius } => {
                    let oc = o.sub(&center);
                    let a = d.norm_sq();
                    let b = 2.0 * d.dot(&oc);
                    let c = oc.norm_sq() - radius * radius;
                    let disc = b * b - 4.0 * a * c;
                    if disc < 0.0 {
                        None
                    } else {
                        let sq = disc.sqrt();
                        let near = (-b - sq) / (2.0 * a);
                        let far = (-b + sq) / (2.0 * a);
                        let s = if near > RAY_EPS {
                            Some(near)
                        } else if far > RAY_EPS {
                            Some(far)
                        } else {
                            None
                        };
                        s.map(|s| {
                            let p = o.add(&d.scale(s));
                            (s, p.sub(&center).scale(1.0 / radius))
                        })
                    }
                }
                Shape::Box { center, half } => intersect_aabb(o, d, &center, &half),
            };
            if let Some((s, normal)) = hit {
                if best.is_none_or(|(bs, _, _)| s < bs) {
                    best = Some((s, normal, &prim.texture));
                }
            }
        }
        best.map(|(s, normal, tex)| {
            let p = o.add(&d.scale(s));
            let albedo = tex.albedo(&p);
            (s, normal, albedo)
        })
    }

    fn shade(&self, normal: &Vec3<f64>, albedo: &[f64; 3]) -> [f64; 3] {
        // Half-Lambert wrap keeps shading smooth across the terminator,
        // which point-splat warps are compared against re-renders.
        let diffuse = 0.5 * (1.0 + normal.dot(&self.light));
        let gain = self.ambient + (1.0 - self.ambient) * diffuse;
        [albedo[0] * gain, albedo[1] * gain, albedo[2] * gain]
    }

    fn sky(&self, d: &Vec3<f64>) -> [f64; 3] {
        let t = (d.normalized().y() * 0.5 + 0.5).clamp(0.0, 1.0);
        let horizon = [0.82, 0.84, 0.88];
        let zenith = [0.35, 0.5, 0.78];
        [
            horizon[0] + (zenith[0] - horizon[0]) * t,
            horizon[1] + (zenith[1] - horizon[1]) * t,
            horizon[2] + (zenith[2] - horizon[2]) * t,
        ]
    }
}

fn intersect_aabb(
    o: &Vec3<f64>,
    d: &Vec3<f64>,
    center: &Vec3<f64>,
    half: &Vec3<f64>,
) -> Option<(f64, Vec3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0usize;
    for i in 0..3 {
        let (lo, hi) = (center.0[i] - half.0[i], center.0[i] + half.0[i]);
        if d.0[i].abs() < 1e-12 {
            if o.0[i] < lo || o.0[i] > hi {
                return None;
            }
            continue;
        }
        let mut t0 = (lo - o.0[i]) / d.0[i];
        let mut t1 = (hi - o.0[i]) / d.0[i];
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = i;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    // Camera outside the box: only the entering face counts.
    if t_near <= RAY_EPS {
        return None;
    }
    let mut normal = Vec3::zero();
    normal.0[axis] = if d.0[axis] > 0.0 { -1.0 } else { 1.0 };
    Some((t_near, normal))
}

fn splitmix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn quantize<S: Scalar>(image: &Tensor<S>) -> Tensor<S> {
    image.map(|v| {
        let b = (v.max(S::zero()).min(S::one()) * S::of(255.0)).round();
        b / S::of(255.0)
    })
}

fn build_world(config: &SynthConfig, rng: &mut StdRng) -> Raycaster {
    let bases: [[f64; 3]; 7] = [
        [0.85, 0.3, 0.25],
        [0.25, 0.6, 0.85],
        [0.3, 0.75, 0.35],
        [0.9, 0.75, 0.3],
        [0.7, 0.4, 0.8],
        [0.85, 0.55, 0.35],
        [0.5, 0.8, 0.75],
    ];
    let texture = |rng: &mut StdRng, base: [f64; 3]| Texture {
        base,
        dir: Vec3::new(
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        )
        .normalized(),
        freq: 0.3 + rng.gen::<f64>() * 0.5,
        amp: 0.15 + rng.gen::<f64>() * 0.15,
        phase: rng.gen::<f64>() * std::f64::consts::TAU,
    };
    let ground = Primitive {
        shape: Shape::Plane,
        texture: texture(rng, [0.55, 0.5, 0.45]),
    };
    let mut primitives = vec![ground];
    for p in 0..config.primitive_count {
        let rho = 0.3 + rng.gen::<f64>() * 1.3;
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let (x, z) = (rho * theta.cos(), rho * theta.sin());
        let base = bases[p % bases.len()];
        let tex = texture(rng, base);
        let shape = if rng.gen::<bool>() {
            let radius = 0.4 + rng.gen::<f64>() * 0.25;
            Shape::Sphere {
                center: Vec3::new(x, radius, z),
                radius,
            }
        } else {
            let half = Vec3::new(
                0.2 + rng.gen::<f64>() * 0.3,
                0.2 + rng.gen::<f64>() * 0.35,
                0.2 + rng.gen::<f64>() * 0.3,
            );
            Shape::Box {
                center: Vec3::new(x, half.y(), z),
                half,
            }
        };
        primitives.push(Primitive {
            shape,
            texture: tex,
        });
    }
    let azimuth = rng.gen::<f64>() * std::f64::consts::TAU;
    let elevation = 0.6 + rng.gen::<f64>() * 0.7;
    let light = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.sin(),
        elevation.cos() * azimuth.sin(),
    );
    Raycaster {
        primitives,
        light,
        ambient: 0.55,
    }
}

pub(crate) fn render_view(world: &Raycaster, intr: &Intrinsics<f64>, pose: &Rigid<f64>, n: usize)
    -> (Tensor<f64>, DepthMap<f64>) {
    let origin = pose.center();
    let r_t = pose.r.transpose();
    let mut image = Tensor::zeros(3, n, n);
    let mut depth = DepthMap::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let dir_cam = intr.unproject_dir(x as f64 + 0.5, y as f64 + 0.5);
            let dir = r_t.mul_vec(&dir_cam);
            match world.intersect(&origin, &dir) {
                Some((s, normal, albedo)) => {
                    let rgb = world.shade(&normal, &albedo);
                    for c in 0..3 {
                        image.set(c, y, x, rgb[c].clamp(0.0, 1.0));
                    }
                    // Depth is stored on disk as f32; rounding here keeps
                    // every consumer consistent with what round-trips.
                    depth.set(y, x, s as f32 as f64);
                }
                None => {
                    let rgb = world.sky(&dir);
                    for c in 0..3 {
                        image.set(c, y, x, rgb[c]);
                    }
                }
            }
        }
    }
    (image, depth)
}

const SPARSE_SAMPLES: usize = 200;

/// Generates one fully deterministic scene: Lambertian renders with
/// ground-truth depth, per-view appearance class labels and transformed
/// images (RGB only, depth untouched), and a sparse surface point cloud
/// with single-view tracks.
pub fn generate_scene<S: Scalar>(config: &SynthConfig) -> Scene<S> {
    config.validate().expect("valid synth config");
    let n = config.resolution;
    let transforms = class_transforms::<f64>(config.appearance_classes, config.seed);
    let mut rng = StdRng::seed_from_u64(splitmix(config.seed, config.scene_index + 1));
    let world = build_world(config, &mut rng);

    let target = Vec3::new(0.0, 0.45, 0.0);
    let intr64 = Intrinsics::new(1.1 * n as f64, 1.1 * n as f64, n as f64 / 2.0, n as f64 / 2.0);

    let mut renders = Vec::with_capacity(config.num_views);
    for i in 0..config.num_views {
        let theta = config.camera_arc * i as f64 / config.num_views as f64
            + (rng.gen::<f64>() - 0.5) * 0.15;
        let radius = config.camera_orbit_radius * (0.95 + rng.gen::<f64>() * 0.1);
        let height = 1.1 + rng.gen::<f64>() * 0.8;
        let center = Vec3::new(radius * theta.cos(), height, radius * theta.sin());
        let pose = look_at_pose(&center, &target, &Vec3::new(0.0, -1.0, 0.0));
        let (clean, depth) = render_view(&world, &intr64, &pose, n);
        let class = rng.gen_range(0..config.appearance_classes) as u32;
        renders.push((pose, clean, depth, class));
    }

    // Sparse cloud: surface points unprojected from random valid pixels,
    // one track entry at the originating pixel center.
    let per_view = SPARSE_SAMPLES.div_ceil(config.num_views);
    let mut cloud = SparsePointCloud::<f64>::empty();
    for (view_idx, (pose, clean, depth, _)) in renders.iter().enumerate() {
        let origin = pose.center();
        let r_t = pose.r.transpose();
        let mut collected = 0;
        for _attempt in 0..per_view * 20 {
            if collected == per_view {
                break;
            }
            let (x, y) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if !depth.is_valid(y, x) {
                continue;
            }
            let s = depth.at(y, x);
            let dir = r_t.mul_vec(&intr64.unproject_dir(x as f64 + 0.5, y as f64 + 0.5));
            let point = origin.add(&dir.scale(s));
            cloud.positions.push(point);
            cloud.colors.push([
                clean.at(0, y, x),
                clean.at(1, y, x),
                clean.at(2, y, x),
            ]);
            cloud
                .tracks
                .push(vec![(view_idx, (x as f64 + 0.5, y as f64 + 0.5))]);
            collected += 1;
        }
    }

    let views = renders
        .into_iter()
        .map(|(pose, clean, depth, class)| {
            let transform = &transforms[class as usize];
            let clean_q = quantize(&clean);
            let image = quantize(&apply_appearance_transform(&clean, transform));
            ViewRecord {
                image: convert(&image),
                intrinsics: Intrinsics::new(
                    S::of(intr64.fx),
                    S::of(intr64.fy),
                    S::of(intr64.cx),
                    S::of(intr64.cy),
                ),
                pose: convert_pose(&pose),
                depth: Some(DepthMap::new(
                    n,
                    n,
                    depth.values().iter().map(|&z| S::of(z)).collect(),
                )),
                appearance_class: Some(class),
                has_image: true,
                clean_image: Some(convert(&clean_q)),
                appearance: Some(transform_meta(transform)),
            }
        })
        .collect();

    Scene {
        name: format!("scene_{:04}", config.scene_index),
        views,
        points: convert_cloud(&cloud),
    }
}

fn transform_meta(t: &AppearanceTransform<f64>) -> AppearanceMeta {
    t.to_meta()
}

fn convert<S: Scalar>(t: &Tensor<f64>) -> Tensor<S> {
    let (c, h, w) = t.shape();
    Tensor::from_f64_vec(c, h, w, t.as_slice())
}

fn convert_pose<S: Scalar>(p: &Rigid<f64>) -> Rigid<S> {
    let mut r = crate::math::Mat3::identity();
    for i in 0..3 {
        for j in 0..3 {
            r.0[i][j] = S::of(p.r.0[i][j]);
        }
    }
    Rigid::new(r, Vec3::new(S::of(p.t.x()), S::of(p.t.y()), S::of(p.t.z())))
}

fn convert_cloud<S: Scalar>(c: &SparsePointCloud<f64>) -> SparsePointCloud<S> {
    SparsePointCloud {
        positions: c
            .positions
            .iter()
            .map(|p| Vec3::new(S::of(p.x()), S::of(p.y()), S::of(p.z())))
            .collect(),
        colors: c
            .colors
            .iter()
            .map(|c| [S::of(c[0]), S::of(c[1]), S::of(c[2])])
            .collect(),
        tracks: c
            .tracks
            .iter()
            .map(|t| {
                t.iter()
                    .map(|(v, (u, vv))| (*v, (S::of(*u), S::of(*vv))))
                    .collect()
            })
            .collect(),
    }
}

/// Scenes `0..num_scenes`, each deterministic in `(seed, scene index)`.
/// Dataset splits are by index range (the CLI writes train and test
/// directories from disjoint ranges).
pub fn generate_dataset<S: Scalar>(config: &SynthConfig, num_scenes: usize) -> Vec<Scene<S>> {
    (0..num_scenes)
        .map(|i| {
            generate_scene(&SynthConfig {
                scene_index: config.scene_index + i as u64,
                ..*config
            })
        })
        .collect()
}
