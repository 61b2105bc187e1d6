//! Phase-map rendering to binary PPM (P6).

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CaeError, Result};
use crate::tensor::RealTensor;

/// Standard HSV to RGB with h, s, v in [0, 1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    let to8 = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [to8(r), to8(g), to8(b)]
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(CaeError::ShapeMismatch(format!(
            "ppm payload {} bytes vs {}x{}x3",
            rgb.len(),
            width,
            height
        )));
    }
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{width} {height}\n255\n")?;
    f.write_all(rgb)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    // Header: "P6\n<w> <h>\n255\n" as this crate writes it.
    let header_end = bytes
        .windows(4)
        .position(|w| w == b"255\n")
        .ok_or_else(|| CaeError::Format("ppm header missing maxval".into()))?
        + 4;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| CaeError::Format(format!("ppm header not ASCII: {e}")))?;
    let mut parts = header.split_ascii_whitespace();
    if parts.next() != Some("P6") {
        return Err(CaeError::Format("not a P6 ppm".into()));
    }
    let width: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CaeError::Format("bad ppm width".into()))?;
    let height: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CaeError::Format("bad ppm height".into()))?;
    let data = bytes[header_end..].to_vec();
    if data.len() != width * height * 3 {
        return Err(CaeError::Format("ppm payload length mismatch".into()));
    }
    Ok((width, height, data))
}

fn plane_dims(t: &RealTensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] => Ok((*h, *w)),
        [1, h, w] => Ok((*h, *w)),
        [1, 1, h, w] => Ok((*h, *w)),
        s => Err(CaeError::ShapeMismatch(format!(
            "expected a single image plane, got {s:?}"
        ))),
    }
}

/// Phase-and-magnitude panel: hue = phase / 2 pi, saturation 1,
/// value = clamp(magnitude, 0, 1).
pub fn render_phase_map(phases: &RealTensor, mags: &RealTensor, path: &Path) -> Result<()> {
    let (h, w) = plane_dims(phases)?;
    if plane_dims(mags)? != (h, w) {
        return Err(CaeError::ShapeMismatch("phase/magnitude plane mismatch".into()));
    }
    let tau = std::f64::consts::TAU;
    let mut rgb = Vec::with_capacity(w * h * 3);
    for (&phi, &m) in phases.iter().zip(mags.iter()) {
        let hue = phi.rem_euclid(tau) / tau;
        rgb.extend_from_slice(&hsv_to_rgb(hue, 1.0, m.clamp(0.0, 1.0)));
    }
    write_ppm(path, w, h, &rgb)
}

/// Grayscale panel of an image in [0, 1].
pub fn render_gray(image: &RealTensor, path: &Path) -> Result<()> {
    let (h, w) = plane_dims(image)?;
    let mut rgb = Vec::with_capacity(w * h * 3);
    for &v in image.iter() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb.extend_from_slice(&[g, g, g]);
    }
    write_ppm(path, w, h, &rgb)
}

/// Cluster-assignment panel: each cluster colored by its centroid's angle,
/// value by the centroid's radius (the background cluster sits near the
/// origin and renders dark).
pub fn render_clusters(
    assignments: &[usize],
    centroids: &[[f64; 2]],
    width: usize,
    height: usize,
    path: &Path,
) -> Result<()> {
    if assignments.len() != width * height {
        return Err(CaeError::ShapeMismatch(format!(
            "{} assignments vs {}x{}",
            assignments.len(),
            width,
            height
        )));
    }
    let tau = std::f64::consts::TAU;
    let mut rgb = Vec::with_capacity(width * height * 3);
    for &a in assignments {
        let c = centroids[a];
        let hue = c[1].atan2(c[0]).rem_euclid(tau) / tau;
        let v = c[0].hypot(c[1]).clamp(0.0, 1.0);
        rgb.extend_from_slice(&hsv_to_rgb(hue, 1.0, v));
    }
    write_ppm(path, width, height, &rgb)
}
