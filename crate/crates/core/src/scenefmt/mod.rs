//! Scene data model and on-disk scene format.
//!
//! A scene directory holds `manifest.json`, one image file per view
//! (PPM P6 or 8-bit PNG), optional raw little-endian `f32` depth grids,
//! and an optional `points.txt` sparse cloud. Poses are world-to-camera,
//! serialized as 12 row-major numbers (`[R|t]`); depth is camera-frame z.

mod colmap;
mod image_io;

pub use colmap::parse_colmap_text;
pub use image_io::{read_image, read_ppm, resize_and_pad, write_png, write_ppm};

use crate::camera::Intrinsics;
use crate::math::{Mat3, Rigid, Vec3};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unsupported camera model '{0}' (only PINHOLE and SIMPLE_PINHOLE)")]
    UnsupportedCameraModel(String),
    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
}

impl SceneError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        SceneError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Photometric transform metadata recorded for synthetic views so
/// appearance-matched references can be reconstructed at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppearanceMeta {
    pub tint: [f64; 3],
    pub brightness: f64,
    pub gamma: f64,
    pub pad_fraction: f64,
}

impl AppearanceMeta {
    pub fn identity() -> Self {
        AppearanceMeta {
            tint: [1.0, 1.0, 1.0],
            brightness: 0.0,
            gamma: 1.0,
            pad_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthMap<S> {
    height: usize,
    width: usize,
    z: Vec<S>,
}

impl<S: Scalar> DepthMap<S> {
    /// Builds from raw values; non-positive entries mark invalid pixels.
    pub fn new(height: usize, width: usize, z: Vec<S>) -> Self {
        assert_eq!(z.len(), height * width);
        DepthMap { height, width, z }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        DepthMap {
            height,
            width,
            z: vec![S::zero(); height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> S {
        self.z[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: S) {
        self.z[y * self.width + x] = v;
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.at(y, x) > S::zero()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[S] {
        &self.z
    }

    pub fn valid_count(&self) -> usize {
        self.z.iter().filter(|v| **v > S::zero()).count()
    }
}

#[derive(Debug, Clone)]
pub struct ViewRecord<S> {
    /// RGB image, `3 × N × N`, values in [0, 1].
    pub image: Tensor<S>,
    pub intrinsics: Intrinsics<S>,
    /// World-to-camera transform.
    pub pose: Rigid<S>,
    /// Camera-frame z depth, strictly positive where valid.
    pub depth: Option<DepthMap<S>>,
    /// Synthetic appearance class label.
    pub appearance_class: Option<u32>,
    /// False when the reconstruction references an image absent on disk.
    pub has_image: bool,
    /// Synthetic only: the render before the appearance transform.
    pub clean_image: Option<Tensor<S>>,
    /// Synthetic only: the transform that produced `image` from `clean_image`.
    pub appearance: Option<AppearanceMeta>,
}

impl<S: Scalar> ViewRecord<S> {
    pub fn resolution(&self) -> usize {
        self.image.height()
    }
}

/// One observation of a sparse point: continuous pixel plus camera-frame z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseDepth<S> {
    pub u: S,
    pub v: S,
    pub depth: S,
}

#[derive(Debug, Clone, Default)]
pub struct SparsePointCloud<S> {
    pub positions: Vec<Vec3<S>>,
    pub colors: Vec<[S; 3]>,
    /// Per-point observations as `(view index, (u, v))`.
    pub tracks: Vec<Vec<(usize, (S, S))>>,
}

impl<S: Scalar> SparsePointCloud<S> {
    pub fn empty() -> Self {
        SparsePointCloud {
            positions: Vec::new(),
            colors: Vec::new(),
            tracks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Scene<S> {
    pub name: String,
    pub views: Vec<ViewRecord<S>>,
    pub points: SparsePointCloud<S>,
}

impl<S: Scalar> Scene<S> {
    pub fn resolution(&self) -> usize {
        self.views[0].resolution()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.views.is_empty() {
            return Err(SceneError::Validation("scene has no views".into()));
        }
        let res = self.resolution();
        for (i, view) in self.views.iter().enumerate() {
            if view.image.shape() != (3, res, res) {
                return Err(SceneError::Validation(format!(
                    "view {i} image shape {:?} != (3, {res}, {res})",
                    view.image.shape()
                )));
            }
            if !view.pose.r.is_rotation(S::of(1e-9)) {
                return Err(SceneError::Validation(format!(
                    "view {i} rotation is not orthonormal with det +1"
                )));
            }
            if !view.intrinsics.is_valid() {
                return Err(SceneError::Validation(format!(
                    "view {i} intrinsics have non-positive focal lengths"
                )));
            }
            if let Some(d) = &view.depth {
                if d.height() != res || d.width() != res {
                    return Err(SceneError::Validation(format!(
                        "view {i} depth shape mismatch"
                    )));
                }
            }
        }
        for (p, track) in self.points.tracks.iter().enumerate() {
            for (view_idx, (u, v)) in track {
                if *view_idx >= self.views.len() {
                    return Err(SceneError::Validation(format!(
                        "point {p} track references view {view_idx} out of range"
                    )));
                }
                let r = S::of_usize(res);
                if *u < S::zero() || *u > r || *v < S::zero() || *v > r {
                    return Err(SceneError::Validation(format!(
                        "point {p} track pixel out of range"
                    )));
                }
            }
        }
        for pos in &self.points.positions {
            if !pos.is_finite() {
                return Err(SceneError::Validation("non-finite point position".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestView {
    image: String,
    #[serde(default)]
    depth: Option<String>,
    #[serde(default)]
    clean_image: Option<String>,
    intrinsics: [f64; 4],
    pose: [f64; 12],
    #[serde(default)]
    appearance_class: Option<u32>,
    #[serde(default)]
    appearance: Option<AppearanceMeta>,
    #[serde(default = "default_true")]
    has_image: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    name: String,
    resolution: usize,
    views: Vec<ManifestView>,
    #[serde(default)]
    points: Option<String>,
}

fn pose_to_numbers<S: Scalar>(pose: &Rigid<S>) -> [f64; 12] {
    let mut out = [0.0; 12];
    for i in 0..3 {
        for j in 0..3 {
            out[i * 4 + j] = pose.r.0[i][j].lossy_f64();
        }
        out[i * 4 + 3] = pose.t.0[i].lossy_f64();
    }
    out
}

fn pose_from_numbers<S: Scalar>(n: &[f64; 12]) -> Rigid<S> {
    let mut r = Mat3::identity();
    let mut t = Vec3::zero();
    for i in 0..3 {
        for j in 0..3 {
            r.0[i][j] = S::of(n[i * 4 + j]);
        }
        t.0[i] = S::of(n[i * 4 + 3]);
    }
    Rigid::new(r, t)
}

/// Loads a scene directory. Images whose stored size differs from the
/// manifest resolution are resized so the longest edge matches, then
/// zero-padded symmetrically to square, with intrinsics adjusted to the
/// resampled geometry.
pub fn load_scene<S: Scalar>(dir: &Path) -> Result<Scene<S>, SceneError> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| SceneError::Format(format!("missing manifest: {e}")))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| SceneError::Format(format!("manifest: {e}")))?;
    let res = manifest.resolution;

    let mut views = Vec::with_capacity(manifest.views.len());
    for (i, mv) in manifest.views.iter().enumerate() {
        let mut intr = Intrinsics::new(
            S::of(mv.intrinsics[0]),
            S::of(mv.intrinsics[1]),
            S::of(mv.intrinsics[2]),
            S::of(mv.intrinsics[3]),
        );
        let image = if mv.has_image {
            let raw = image_io::read_image::<S>(&dir.join(&mv.image))?;
            let (resized, scale, top, left) = image_io::resize_and_pad(&raw, res);
            if scale != 1.0 || top != 0 || left != 0 {
                intr = Intrinsics::new(
                    intr.fx * S::of(scale),
                    intr.fy * S::of(scale),
                    intr.cx * S::of(scale) + S::of_usize(left),
                    intr.cy * S::of(scale) + S::of_usize(top),
                );
            }
            resized
        } else {
            Tensor::zeros(3, res, res)
        };
        if image.shape() != (3, res, res) {
            return Err(SceneError::Validation(format!(
                "view {i}: image shape {:?} does not match manifest resolution {res}",
                image.shape()
            )));
        }
        let depth = match &mv.depth {
            Some(name) => Some(image_io::read_depth_f32::<S>(&dir.join(name), res, res)?),
            None => None,
        };
        let clean_image = match &mv.clean_image {
            Some(name) => {
                let raw = image_io::read_image::<S>(&dir.join(name))?;
                Some(image_io::resize_and_pad(&raw, res).0)
            }
            None => None,
        };
        views.push(ViewRecord {
            image,
            intrinsics: intr,
            pose: pose_from_numbers(&mv.pose),
            depth,
            appearance_class: mv.appearance_class,
            has_image: mv.has_image,
            clean_image,
            appearance: mv.appearance,
        });
    }

    let points = match &manifest.points {
        Some(name) => read_points(&dir.join(name))?,
        None => SparsePointCloud::empty(),
    };

    let scene = Scene {
        name: manifest.name,
        views,
        points,
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes a scene directory (manifest, PPM images, raw f32 depth,
/// points.txt). Loading it back reproduces images bit-exactly and poses
/// to full float precision.
pub fn save_scene<S: Scalar>(scene: &Scene<S>, dir: &Path) -> Result<(), SceneError> {
    std::fs::create_dir_all(dir).map_err(|e| SceneError::io(dir, e))?;
    let mut views = Vec::with_capacity(scene.views.len());
    for (i, view) in scene.views.iter().enumerate() {
        let image_name = format!("view_{i:03}.ppm");
        if view.has_image {
            image_io::write_ppm(&dir.join(&image_name), &view.image)?;
        }
        let depth_name = match &view.depth {
            Some(d) => {
                let name = format!("view_{i:03}_depth.f32");
                image_io::write_depth_f32(&dir.join(&name), d)?;
                Some(name)
            }
            None => None,
        };
        let clean_name = match &view.clean_image {
            Some(img) => {
                let name = format!("view_{i:03}_clean.ppm");
                image_io::write_ppm(&dir.join(&name), img)?;
                Some(name)
            }
            None => None,
        };
        views.push(ManifestView {
            image: image_name,
            depth: depth_name,
            clean_image: clean_name,
            intrinsics: [
                view.intrinsics.fx.lossy_f64(),
                view.intrinsics.fy.lossy_f64(),
                view.intrinsics.cx.lossy_f64(),
                view.intrinsics.cy.lossy_f64(),
            ],
            pose: pose_to_numbers(&view.pose),
            appearance_class: view.appearance_class,
            appearance: view.appearance,
            has_image: view.has_image,
        });
    }
    let points_name = if scene.points.is_empty() {
        None
    } else {
        write_points(&dir.join("points.txt"), &scene.points)?;
        Some("points.txt".to_string())
    };
    let manifest = Manifest {
        name: scene.name.clone(),
        resolution: scene.resolution(),
        views,
        points: points_name,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SceneError::Format(format!("manifest serialize: {e}")))?;
    std::fs::write(dir.join("manifest.json"), text)
        .map_err(|e| SceneError::io(&dir.join("manifest.json"), e))?;
    Ok(())
}

fn write_points<S: Scalar>(path: &Path, cloud: &SparsePointCloud<S>) -> Result<(), SceneError> {
    use std::io::Write;
    let mut out = Vec::new();
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        write!(
            out,
            "{:?} {:?} {:?} {:?} {:?} {:?} {}",
            p.x().lossy_f64(),
            p.y().lossy_f64(),
            p.z().lossy_f64(),
            c[0].lossy_f64(),
            c[1].lossy_f64(),
            c[2].lossy_f64(),
            cloud.tracks[i].len()
        )
        .unwrap();
        for (view, (u, v)) in &cloud.tracks[i] {
            write!(out, " {} {:?} {:?}", view, u.lossy_f64(), v.lossy_f64()).unwrap();
        }
        writeln!(out).unwrap();
    }
    std::fs::write(path, out).map_err(|e| SceneError::io(path, e))
}

fn read_points<S: Scalar>(path: &Path) -> Result<SparsePointCloud<S>, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|e| SceneError::io(path, e))?;
    let file = path.display().to_string();
    let mut cloud = SparsePointCloud::empty();
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse = |tokens: &[&str]| -> Option<(Vec3<S>, [S; 3], Vec<(usize, (S, S))>)> {
            let mut vals = tokens.iter();
            let mut next_f = || vals.next()?.parse::<f64>().ok();
            let pos = Vec3::new(S::of(next_f()?), S::of(next_f()?), S::of(next_f()?));
            let color = [S::of(next_f()?), S::of(next_f()?), S::of(next_f()?)];
            let n = next_f()? as usize;
            let mut track = Vec::with_capacity(n);
            for _ in 0..n {
                let view = next_f()? as usize;
                let u = S::of(next_f()?);
                let v = S::of(next_f()?);
                track.push((view, (u, v)));
            }
            Some((pos, color, track))
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match parse(&tokens) {
            Some((pos, color, track)) => {
                cloud.positions.push(pos);
                cloud.colors.push(color);
                cloud.tracks.push(track);
            }
            None => {
                return Err(SceneError::Parse {
                    file,
                    line: line_no + 1,
                    message: "malformed point line".into(),
                })
            }
        }
    }
    Ok(cloud)
}

/// How sparse depths for a view are gathered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparseDepthSource {
    /// Use recorded track observations for the view (default when present).
    Tracks,
    /// Project every cloud point into the view's frustum.
    Projection,
}

/// Sparse depths for one view: camera-frame z at the observed pixel for
/// every positive-depth point. Uses tracks when the view has any, falling
/// back to projection otherwise.
pub fn sparse_depths_for_view<S: Scalar>(scene: &Scene<S>, view_idx: usize) -> Vec<SparseDepth<S>> {
    let has_tracks = scene
        .points
        .tracks
        .iter()
        .any(|t| t.iter().any(|(v, _)| *v == view_idx));
    let source = if has_tracks {
        SparseDepthSource::Tracks
    } else {
        SparseDepthSource::Projection
    };
    sparse_depths_for_view_with(scene, view_idx, source)
}

pub fn sparse_depths_for_view_with<S: Scalar>(
    scene: &Scene<S>,
    view_idx: usize,
    source: SparseDepthSource,
) -> Vec<SparseDepth<S>> {
    let view = &scene.views[view_idx];
    let res = S::of_usize(view.resolution());
    let mut out = Vec::new();
    match source {
        SparseDepthSource::Tracks => {
            for (point_idx, track) in scene.points.tracks.iter().enumerate() {
                for (v_idx, (u, v)) in track {
                    if *v_idx != view_idx {
                        continue;
                    }
                    let z = view.pose.apply(&scene.points.positions[point_idx]).z();
                    if z > S::zero() {
                        out.push(SparseDepth {
                            u: *u,
                            v: *v,
                            depth: z,
                        });
                    }
                }
            }
        }
        SparseDepthSource::Projection => {
            for pos in &scene.points.positions {
                let p_cam = view.pose.apply(pos);
                if let Some((u, v)) = view.intrinsics.project(&p_cam) {
                    if u >= S::zero() && u < res && v >= S::zero() && v < res {
                        out.push(SparseDepth {
                            u,
                            v,
                            depth: p_cam.z(),
                        });
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;

    fn quantized_image(n: usize, seed: u64) -> Tensor<f64> {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(seed);
        let data = (0..3 * n * n)
            .map(|_| rng.gen_range(0..=255u32) as f64 / 255.0)
            .collect();
        Tensor::from_vec(3, n, n, data)
    }

    fn small_scene() -> Scene<f64> {
        let n = 16;
        let views = (0..3)
            .map(|i| {
                let mut depth = DepthMap::zeros(n, n);
                for y in 0..n {
                    for x in 0..n {
                        depth.set(y, x, 2.0 + (x + y * n + i) as f64 * 0.01);
                    }
                }
                ViewRecord {
                    image: quantized_image(n, 10 + i as u64),
                    intrinsics: Intrinsics::new(20.0, 20.0, 8.0, 8.0),
                    pose: Rigid::new(
                        Mat3::rotation_about_axis(&Vec3::new(0.0, 1.0, 0.0), 0.1 * i as f64),
                        Vec3::new(0.1 * i as f64, 0.0, 3.0),
                    ),
                    depth: Some(depth),
                    appearance_class: Some(i as u32),
                    has_image: true,
                    clean_image: Some(quantized_image(n, 20 + i as u64)),
                    appearance: Some(AppearanceMeta::identity()),
                }
            })
            .collect();
        let points = SparsePointCloud {
            positions: vec![Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.2, -0.1, 0.8)],
            colors: vec![[0.5, 0.5, 0.5], [0.1, 0.9, 0.2]],
            tracks: vec![vec![(0, (8.5, 8.5))], vec![(1, (4.5, 3.5)), (2, (5.0, 3.0))]],
        };
        Scene {
            name: "test_scene".into(),
            views,
            points,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir();
        let scene = small_scene();
        save_scene(&scene, &dir).unwrap();
        let loaded = load_scene::<f64>(&dir).unwrap();
        assert_eq!(loaded.name, scene.name);
        assert_eq!(loaded.views.len(), 3);
        for (a, b) in scene.views.iter().zip(&loaded.views) {
            assert_eq!(a.image, b.image, "images must round-trip bit-exactly");
            assert!(a.pose.max_abs_diff(&b.pose) < 1e-12);
            assert_eq!(a.appearance_class, b.appearance_class);
            assert_eq!(a.clean_image, b.clean_image);
            let (da, db) = (a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap());
            for (x, y) in da.values().iter().zip(db.values()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(scene.points.len(), loaded.points.len());
        for i in 0..scene.points.len() {
            assert!(
                scene.points.positions[i]
                    .sub(&loaded.points.positions[i])
                    .norm()
                    < 1e-12
            );
            assert_eq!(scene.points.tracks[i], loaded.points.tracks[i]);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "wildnvs_test_{}_{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn missing_manifest_is_format_error() {
        let dir = tempdir().join("nonexistent");
        match load_scene::<f64>(&dir) {
            Err(SceneError::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_referencing_missing_file_errors() {
        let dir = tempdir();
        let manifest = r#"{
            "name": "broken", "resolution": 8,
            "views": [{"image": "nope.ppm",
                       "intrinsics": [10.0, 10.0, 4.0, 4.0],
                       "pose": [1,0,0,0, 0,1,0,0, 0,0,1,0]}]
        }"#;
        std::fs::write(dir.join("manifest.json"), manifest).unwrap();
        assert!(load_scene::<f64>(&dir).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wide_image_is_resized_and_letterboxed() {
        let dir = tempdir();
        // 64x32 source (w x h) with every pixel at a fixed value.
        let src = Tensor::<f64>::full(3, 32, 64, 200.0 / 255.0);
        write_ppm(&dir.join("wide.ppm"), &src).unwrap();
        let manifest = r#"{
            "name": "wide", "resolution": 32,
            "views": [{"image": "wide.ppm",
                       "intrinsics": [10.0, 10.0, 32.0, 16.0],
                       "pose": [1,0,0,0, 0,1,0,0, 0,0,1,0]}]
        }"#;
        std::fs::write(dir.join("manifest.json"), manifest).unwrap();
        let scene = load_scene::<f64>(&dir).unwrap();
        let img = &scene.views[0].image;
        assert_eq!(img.shape(), (3, 32, 32));
        for y in 0..32 {
            for x in 0..32 {
                let expected = if (8..24).contains(&y) { 200.0 / 255.0 } else { 0.0 };
                for c in 0..3 {
                    assert!(
                        (img.at(c, y, x) - expected).abs() < 1e-12,
                        "y={y} x={x} c={c}"
                    );
                }
            }
        }
        // Principal point follows the resize + vertical offset.
        let intr = scene.views[0].intrinsics;
        assert!((intr.cx - 16.0).abs() < 1e-12);
        assert!((intr.cy - 16.0).abs() < 1e-12);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sparse_depths_projection_path() {
        let n = 16;
        let mut scene = small_scene();
        scene.points = SparsePointCloud {
            positions: vec![Vec3::new(0.0, 0.0, 5.0), Vec3::new(0.0, 0.0, -1.0)],
            colors: vec![[0.0; 3], [0.0; 3]],
            tracks: vec![vec![], vec![]],
        };
        scene.views[0].pose = Rigid::identity();
        scene.views[0].intrinsics = Intrinsics::new(20.0, 20.0, 8.0, 8.0);
        let depths = sparse_depths_for_view(&scene, 0);
        assert_eq!(depths.len(), 1, "behind-camera point must be excluded");
        assert_eq!(depths[0].depth, 5.0);
        assert_eq!((depths[0].u, depths[0].v), (8.0, 8.0));
        let _ = n;
    }
}
