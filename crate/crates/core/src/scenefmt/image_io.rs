//! Image and depth grid readers/writers: PPM P6 (maxval 255), 8-bit PNG,
//! and raw little-endian f32 depth files.

use super::SceneError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::path::Path;

#[inline]
fn to_byte<S: Scalar>(v: S) -> u8 {
    let clamped = v.max(S::zero()).min(S::one());
    (clamped * S::of(255.0)).round().lossy_f64() as u8
}

#[inline]
fn from_byte<S: Scalar>(b: u8) -> S {
    S::of_usize(b as usize) / S::of(255.0)
}

pub fn write_ppm<S: Scalar>(path: &Path, image: &Tensor<S>) -> Result<(), SceneError> {
    let (c, h, w) = image.shape();
    assert_eq!(c, 3, "PPM images are RGB");
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                bytes.push(to_byte(image.at(ch, y, x)));
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| SceneError::io(path, e))
}

pub fn read_ppm<S: Scalar>(path: &Path) -> Result<Tensor<S>, SceneError> {
    let bytes = std::fs::read(path).map_err(|e| SceneError::io(path, e))?;
    parse_ppm(&bytes).map_err(|msg| SceneError::Format(format!("{}: {msg}", path.display())))
}

fn parse_ppm<S: Scalar>(bytes: &[u8]) -> Result<Tensor<S>, String> {
    // Header: magic, width, height, maxval, separated by whitespace and
    // optional '#' comments, then a single whitespace byte before the data.
    let mut pos = 0usize;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "bad header")?);
    }
    pos += 1;
    if fields[0] != "P6" {
        return Err(format!("expected P6, got {}", fields[0]));
    }
    let w: usize = fields[1].parse().map_err(|_| "bad width")?;
    let h: usize = fields[2].parse().map_err(|_| "bad height")?;
    if fields[3] != "255" {
        return Err(format!("expected maxval 255, got {}", fields[3]));
    }
    let data = &bytes[pos..];
    if data.len() < 3 * w * h {
        return Err(format!(
            "pixel data too short: {} < {}",
            data.len(),
            3 * w * h
        ));
    }
    let mut image = Tensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                image.set(ch, y, x, from_byte(data[(y * w + x) * 3 + ch]));
            }
        }
    }
    Ok(image)
}

pub fn write_png<S: Scalar>(path: &Path, image: &Tensor<S>) -> Result<(), SceneError> {
    let (c, h, w) = image.shape();
    assert_eq!(c, 3);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                to_byte(image.at(0, y, x)),
                to_byte(image.at(1, y, x)),
                to_byte(image.at(2, y, x)),
            ]);
            buf.put_pixel(x as u32, y as u32, px);
        }
    }
    buf.save(path)
        .map_err(|e| SceneError::Format(format!("png write {}: {e}", path.display())))
}

pub fn read_png<S: Scalar>(path: &Path) -> Result<Tensor<S>, SceneError> {
    let img = image::open(path)
        .map_err(|e| SceneError::Format(format!("png read {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Tensor::zeros(3, h as usize, w as usize);
    for y in 0..h {
        for x in 0..w {
            let px = img.get_pixel(x, y);
            for ch in 0..3 {
                out.set(ch, y as usize, x as usize, from_byte(px.0[ch]));
            }
        }
    }
    Ok(out)
}

/// Reads a PPM or PNG image based on the file extension.
pub fn read_image<S: Scalar>(path: &Path) -> Result<Tensor<S>, SceneError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        Some("png") => read_png(path),
        other => Err(SceneError::Format(format!(
            "unsupported image extension {other:?} for {}",
            path.display()
        ))),
    }
}

pub fn write_depth_f32<S: Scalar>(
    path: &Path,
    depth: &super::DepthMap<S>,
) -> Result<(), SceneError> {
    let mut bytes = Vec::with_capacity(depth.values().len() * 4);
    for v in depth.values() {
        bytes.extend_from_slice(&(v.lossy_f64() as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| SceneError::io(path, e))
}

pub fn read_depth_f32<S: Scalar>(
    path: &Path,
    height: usize,
    width: usize,
) -> Result<super::DepthMap<S>, SceneError> {
    let bytes = std::fs::read(path).map_err(|e| SceneError::io(path, e))?;
    if bytes.len() != height * width * 4 {
        return Err(SceneError::Format(format!(
            "depth file {}: {} bytes, expected {}",
            path.display(),
            bytes.len(),
            height * width * 4
        )));
    }
    let z = bytes
        .chunks_exact(4)
        .map(|c| S::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(super::DepthMap::new(height, width, z))
}

/// Resizes so the longest edge equals `n`, then zero-pads symmetrically to
/// `n x n`. Returns `(image, scale, top, left)`; inputs already `n x n`
/// pass through untouched.
pub fn resize_and_pad<S: Scalar>(image: &Tensor<S>, n: usize) -> (Tensor<S>, f64, usize, usize) {
    let (_, h, w) = image.shape();
    if h == n && w == n {
        return (image.clone(), 1.0, 0, 0);
    }
    let scale = n as f64 / h.max(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).clamp(1, n);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, n);
    let resized = bilinear_resize(image, nh, nw);
    let top = (n - nh) / 2;
    let left = (n - nw) / 2;
    let mut out = Tensor::zeros(3, n, n);
    for c in 0..3 {
        for y in 0..nh {
            for x in 0..nw {
                out.set(c, y + top, x + left, resized.at(c, y, x));
            }
        }
    }
    (out, scale, top, left)
}

fn bilinear_resize<S: Scalar>(image: &Tensor<S>, nh: usize, nw: usize) -> Tensor<S> {
    let (c, h, w) = image.shape();
    let mut out = Tensor::zeros(c, nh, nw);
    for y in 0..nh {
        let sy = ((y as f64 + 0.5) * h as f64 / nh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = S::of(sy - y0 as f64);
        for x in 0..nw {
            let sx = ((x as f64 + 0.5) * w as f64 / nw as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = S::of(sx - x0 as f64);
            for ch in 0..c {
                let top =
                    image.at(ch, y0, x0) * (S::one() - fx) + image.at(ch, y0, x1) * fx;
                let bottom =
                    image.at(ch, y1, x0) * (S::one() - fx) + image.at(ch, y1, x1) * fx;
                out.set(ch, y, x, top * (S::one() - fy) + bottom * fy);
            }
        }
    }
    out
}
