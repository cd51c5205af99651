//! COLMAP text-format sparse reconstruction parser
//! (`cameras.txt`, `images.txt`, `points3D.txt`).
//!
//! Only PINHOLE and SIMPLE_PINHOLE camera models are supported. COLMAP
//! stores world-to-camera quaternion poses, matching this crate's
//! convention directly.

use super::{image_io, Scene, SceneError, SparsePointCloud, ViewRecord};
use crate::camera::Intrinsics;
use crate::math::{Quat, Vec3};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

struct ColmapCamera {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

struct ColmapImage {
    qvec: [f64; 4],
    tvec: [f64; 3],
    camera_id: u64,
    name: String,
    points2d: Vec<(f64, f64)>,
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> SceneError {
    SceneError::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_cameras(text: &str) -> Result<BTreeMap<u64, ColmapCamera>, SceneError> {
    const FILE: &str = "cameras.txt";
    let mut cameras = BTreeMap::new();
    for (line_no, line) in data_lines(text) {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(parse_err(FILE, line_no, "expected CAMERA_ID MODEL W H PARAMS"));
        }
        let id: u64 = tok[0]
            .parse()
            .map_err(|_| parse_err(FILE, line_no, "bad camera id"))?;
        let width: usize = tok[2]
            .parse()
            .map_err(|_| parse_err(FILE, line_no, "bad width"))?;
        let height: usize = tok[3]
            .parse()
            .map_err(|_| parse_err(FILE, line_no, "bad height"))?;
        let params: Vec<f64> = tok[4..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(FILE, line_no, "bad camera parameter"))?;
        let cam = match tok[1] {
            "SIMPLE_PINHOLE" => {
                if params.len() != 3 {
                    return Err(parse_err(FILE, line_no, "SIMPLE_PINHOLE needs f cx cy"));
                }
                ColmapCamera {
                    width,
                    height,
                    fx: params[0],
                    fy: params[0],
                    cx: params[1],
                    cy: params[2],
                }
            }
            "PINHOLE" => {
                if params.len() != 4 {
                    return Err(parse_err(FILE, line_no, "PINHOLE needs fx fy cx cy"));
                }
                ColmapCamera {
                    width,
                    height,
                    fx: params[0],
                    fy: params[1],
                    cx: params[2],
                    cy: params[3],
                }
            }
            other => return Err(SceneError::UnsupportedCameraModel(other.to_string())),
        };
        cameras.insert(id, cam);
    }
    Ok(cameras)
}

fn parse_images(text: &str) -> Result<BTreeMap<u64, ColmapImage>, SceneError> {
    const FILE: &str = "images.txt";
    let mut images = BTreeMap::new();
    let mut lines = data_lines(text);
    while let Some((line_no, line)) = lines.next() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(parse_err(
                FILE,
                line_no,
                "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME",
            ));
        }
        let id: u64 = tok[0]
            .parse()
            .map_err(|_| parse_err(FILE, line_no, "bad image id"))?;
        let nums: Vec<f64> = tok[1..8]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(FILE, line_no, "bad pose number"))?;
        let camera_id: u64 = tok[8]
            .parse()
            .map_err(|_| parse_err(FILE, line_no, "bad camera id"))?;
        let name = tok[9].to_string();

        // The companion line lists POINTS2D as (X, Y, POINT3D_ID) triplets;
        // it may legitimately be empty but must exist.
        let (pts_line_no, pts_line) = lines
            .next()
            .ok_or_else(|| parse_err(FILE, line_no, "missing POINTS2D line"))?;
        let pt_tok: Vec<&str> = pts_line.split_whitespace().collect();
        if pt_tok.len() % 3 != 0 {
            return Err(parse_err(
                FILE,
                pts_line_no,
                "POINTS2D entries must be (X, Y, POINT3D_ID) triplets",
            ));
        }
        let mut points2d = Vec::with_capacity(pt_tok.len() / 3);
        for chunk in pt_tok.chunks_exact(3) {
            let x: f64 = chunk[0]
                .parse()
                .map_err(|_| parse_err(FILE, pts_line_no, "bad point2d x"))?;
            let y: f64 = chunk[1]
                .parse()
                .map_err(|_| parse_err(FILE, pts_line_no, "bad point2d y"))?;
            points2d.push((x, y));
        }
        images.insert(
            id,
            ColmapImage {
                qvec: [nums[0], nums[1], nums[2], nums[3]],
                tvec: [nums[4], nums[5], nums[6]],
                camera_id,
                name,
                points2d,
            },
        );
    }
    Ok(images)
}

struct ColmapPoint {
    xyz: [f64; 3],
    rgb: [u8; 3],
    track: Vec<(u64, usize)>,
}

fn parse_points(text: &str) -> Result<Vec<ColmapPoint>, SceneError> {
    const FILE: &str = "points3D.txt";
    let mut points = Vec::new();
    for (line_no, line) in data_lines(text) {
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 8 || (tok.len() - 8) % 2 != 0 {
            return Err(parse_err(
                FILE,
                line_no,
                "expected ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)*",
            ));
        }
        let xyz: Vec<f64> = tok[1..4]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(FILE, line_no, "bad coordinate"))?;
        let rgb: Vec<u8> = tok[4..7]
            .iter()
            .map(|t| t.parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(FILE, line_no, "bad color"))?;
        let mut track = Vec::new();
        for chunk in tok[8..].chunks_exact(2) {
            let image_id: u64 = chunk[0]
                .parse()
                .map_err(|_| parse_err(FILE, line_no, "bad track image id"))?;
            let p2d: usize = chunk[1]
                .parse()
                .map_err(|_| parse_err(FILE, line_no, "bad track point index"))?;
            track.push((image_id, p2d));
        }
        points.push(ColmapPoint {
            xyz: [xyz[0], xyz[1], xyz[2]],
            rgb: [rgb[0], rgb[1], rgb[2]],
            track,
        });
    }
    Ok(points)
}

/// Parses a COLMAP text export into a [`Scene`]. Views are ordered by
/// image id; image files named in `images.txt` are loaded from the same
/// directory when present, otherwise the view carries a zero image and
/// `has_image = false`.
pub fn parse_colmap_text<S: Scalar>(dir: &Path) -> Result<Scene<S>, SceneError> {
    let read = |name: &str| -> Result<String, SceneError> {
        std::fs::read_to_string(dir.join(name))
            .map_err(|e| SceneError::Format(format!("missing {name}: {e}")))
    };
    let cameras = parse_cameras(&read("cameras.txt")?)?;
    let images = parse_images(&read("images.txt")?)?;
    let points = parse_points(&read("points3D.txt")?)?;

    // Square output resolution covering the largest camera.
    let res = cameras
        .values()
        .map(|c| c.width.max(c.height))
        .max()
        .ok_or_else(|| SceneError::Format("no cameras defined".into()))?;

    let mut views = Vec::with_capacity(images.len());
    let mut view_index = BTreeMap::new();
    for (idx, (image_id, img)) in images.iter().enumerate() {
        let cam = cameras.get(&img.camera_id).ok_or_else(|| {
            SceneError::Format(format!(
                "image {image_id} references unknown camera {}",
                img.camera_id
            ))
        })?;
        // Geometry of the resize-to-longest-edge + symmetric padding that
        // load_scene applies, so intrinsics stay consistent even when the
        // image file itself is absent.
        let scale = res as f64 / cam.width.max(cam.height) as f64;
        let nh = ((cam.height as f64 * scale).round() as usize).clamp(1, res);
        let nw = ((cam.width as f64 * scale).round() as usize).clamp(1, res);
        let (top, left) = ((res - nh) / 2, (res - nw) / 2);
        let intr = Intrinsics::new(
            S::of(cam.fx * scale),
            S::of(cam.fy * scale),
            S::of(cam.cx * scale + left as f64),
            S::of(cam.cy * scale + top as f64),
        );
        let image_path = dir.join(&img.name);
        let (image, has_image) = if image_path.is_file() {
            let raw = image_io::read_image::<S>(&image_path)?;
            (image_io::resize_and_pad(&raw, res).0, true)
        } else {
            (Tensor::zeros(3, res, res), false)
        };
        let q = Quat::new(
            S::of(img.qvec[0]),
            S::of(img.qvec[1]),
            S::of(img.qvec[2]),
            S::of(img.qvec[3]),
        );
        let pose = crate::math::Rigid::new(
            q.to_mat3(),
            Vec3::new(S::of(img.tvec[0]), S::of(img.tvec[1]), S::of(img.tvec[2])),
        );
        view_index.insert(*image_id, (idx, scale, top as f64, left as f64));
        views.push(ViewRecord {
            image,
            intrinsics: intr,
            pose,
            depth: None,
            appearance_class: None,
            has_image,
            clean_image: None,
            appearance: None,
        });
    }

    let mut cloud = SparsePointCloud::empty();
    for (pidx, p) in points.iter().enumerate() {
        cloud.positions.push(Vec3::new(
            S::of(p.xyz[0]),
            S::of(p.xyz[1]),
            S::of(p.xyz[2]),
        ));
        cloud.colors.push([
            S::of(p.rgb[0] as f64 / 255.0),
            S::of(p.rgb[1] as f64 / 255.0),
            S::of(p.rgb[2] as f64 / 255.0),
        ]);
        let mut track = Vec::with_capacity(p.track.len());
        for (image_id, p2d_idx) in &p.track {
            let (vidx, scale, top, left) = *view_index.get(image_id).ok_or_else(|| {
                SceneError::Format(format!(
                    "point {pidx} track references unknown image {image_id}"
                ))
            })?;
            let img = &images[image_id];
            let (x, y) = *img.points2d.get(*p2d_idx).ok_or_else(|| {
                SceneError::Format(format!(
                    "point {pidx} track references point2d {p2d_idx} out of range in image {image_id}"
                ))
            })?;
            track.push((
                vidx,
                (S::of(x * scale + left), S::of(y * scale + top)),
            ));
        }
        cloud.tracks.push(track);
    }

    let scene = Scene {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "colmap".to_string()),
        views,
        points: cloud,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenefmt::{load_scene, save_scene};

    const CAMERAS: &str = "\
# Camera list with one line of data per camera:
#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]
1 SIMPLE_PINHOLE 32 32 100.0 16.0 16.0
";

    // Two identity-rotation views, the second shifted along x. The 2D
    // observations are the exact projections of the three points.
    const IMAGES: &str = "\
# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
1 1 0 0 0 0 0 0 1 img1.ppm
16 16 1 21 12.25 2 11 18 3
2 1 0 0 0 0.2 0 0 1 img2.ppm
20 16 1 23.5 12.25 2 13 18 3
";

    const POINTS: &str = "\
# 3D point list:
#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)
1 0 0 5 255 0 0 0.1 1 0 2 0
2 0.4 -0.3 8 0 255 0 0.1 1 1 2 1
3 -0.5 0.2 10 0 0 255 0.1 1 2 2 2
";

    fn write_fixture(dir: &Path) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join("cameras.txt"), CAMERAS).unwrap();
        std::fs::write(dir.join("images.txt"), IMAGES).unwrap();
        std::fs::write(dir.join("points3D.txt"), POINTS).unwrap();
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("wildnvs_colmap_{tag}_{}", std::process::id()))
    }

    #[test]
    fn parses_fixture_with_consistent_reprojection() {
        let dir = tempdir("fixture");
        write_fixture(&dir);
        let scene = parse_colmap_text::<f64>(&dir).unwrap();
        assert_eq!(scene.views.len(), 2);
        assert_eq!(scene.points.len(), 3);
        assert!(!scene.views[0].has_image);

        // SIMPLE_PINHOLE f=100 cx=16 cy=16.
        let k = scene.views[0].intrinsics.matrix();
        assert_eq!(k.0, [[100.0, 0.0, 16.0], [0.0, 100.0, 16.0], [0.0, 0.0, 1.0]]);
        // Identity quaternion -> identity rotation.
        assert!(scene.views[0]
            .pose
            .max_abs_diff(&crate::math::Rigid::identity())
            < 1e-12);

        // Fixture positions.
        let expected = [[0.0, 0.0, 5.0], [0.4, -0.3, 8.0], [-0.5, 0.2, 10.0]];
        for (p, e) in scene.points.positions.iter().zip(expected) {
            assert!(p.sub(&Vec3::new(e[0], e[1], e[2])).norm() < 1e-12);
        }

        // Re-projection oracle: every track observation must equal the
        // projection of the parsed point through the parsed camera.
        for (pidx, track) in scene.points.tracks.iter().enumerate() {
            assert_eq!(track.len(), 2);
            for (vidx, (u, v)) in track {
                let view = &scene.views[*vidx];
                let cam_pt = view.pose.apply(&scene.points.positions[pidx]);
                let (pu, pv) = view.intrinsics.project(&cam_pt).unwrap();
                assert!((pu - u).abs() < 1e-6 && (pv - v).abs() < 1e-6);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unsupported_model_is_explicit() {
        let dir = tempdir("radial");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(
            dir.join("cameras.txt"),
            "1 SIMPLE_RADIAL 32 32 100.0 16.0 16.0 0.01\n",
        )
        .unwrap();
        std::fs::write(dir.join("images.txt"), "").unwrap();
        std::fs::write(dir.join("points3D.txt"), "").unwrap();
        match parse_colmap_text::<f64>(&dir) {
            Err(SceneError::UnsupportedCameraModel(m)) => assert_eq!(m, "SIMPLE_RADIAL"),
            other => panic!("expected unsupported model, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempdir("malformed");
        write_fixture(&dir);
        std::fs::write(
            dir.join("points3D.txt"),
            "# comment\n1 0 0 5 255 0 0 0.1 1 0 2 0\n2 nope 0 5 255 0 0 0.1\n",
        )
        .unwrap();
        match parse_colmap_text::<f64>(&dir) {
            Err(SceneError::Parse { file, line, .. }) => {
                assert_eq!(file, "points3D.txt");
                assert_eq!(line, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn reserialized_fixture_round_trips() {
        let colmap_dir = tempdir("roundtrip_src");
        write_fixture(&colmap_dir);
        let scene = parse_colmap_text::<f64>(&colmap_dir).unwrap();
        let native_dir = tempdir("roundtrip_native");
        save_scene(&scene, &native_dir).unwrap();
        let reloaded = load_scene::<f64>(&native_dir).unwrap();
        for (a, b) in scene.views.iter().zip(&reloaded.views) {
            assert!(a.pose.max_abs_diff(&b.pose) < 1e-9);
        }
        for (a, b) in scene.points.positions.iter().zip(&reloaded.points.positions) {
            assert!(a.sub(b).norm() < 1e-9);
        }
        for (a, b) in scene.points.tracks.iter().zip(&reloaded.points.tracks) {
            assert_eq!(a.len(), b.len());
            for ((va, (ua, vva)), (vb, (ub, vvb))) in a.iter().zip(b) {
                assert_eq!(va, vb);
                assert!((ua - ub).abs() < 1e-9 && (vva - vvb).abs() < 1e-9);
            }
        }
        std::fs::remove_dir_all(&colmap_dir).ok();
        std::fs::remove_dir_all(&native_dir).ok();
    }
}
