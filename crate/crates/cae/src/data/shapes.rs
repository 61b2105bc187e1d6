//! Rasterization of the outlined shapes.
//!
//! All shapes are drawn as a filled outer region minus the same region inset
//! by the outline width (3 px): squares and circles by integer membership
//! tests, triangles by half-plane tests with each edge shifted inward along
//! its normal. Drawn pixels are set to 1.0 (max-composed over whatever is
//! already on the canvas) and get the object's bit in the label plane.

use crate::data::mnist::MnistStore;
use crate::error::{CaeError, Result};

pub const OUTLINE_WIDTH: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    /// Outer side 13 px, 3 px outline.
    Square13,
    /// Isosceles triangle, base 17 px, height 9 px, apex up, 3 px outline.
    TriUp,
    /// Same triangle, apex down.
    TriDown,
    /// Outer radius 6 px, 3 px outline.
    Circle6,
    /// Outer radius 10 px, 3 px outline.
    Circle10,
    /// A grayscale digit resized to the canvas size; the index addresses the
    /// digit pool.
    MnistDigit(usize),
}

impl ShapeKind {
    /// Bounding box (width, height) in pixels on a canvas of the given size.
    pub fn bbox(&self, canvas_size: usize) -> (usize, usize) {
        match self {
            ShapeKind::Square13 => (13, 13),
            ShapeKind::TriUp | ShapeKind::TriDown => (17, 9),
            ShapeKind::Circle6 => (13, 13),
            ShapeKind::Circle10 => (21, 21),
            ShapeKind::MnistDigit(_) => (canvas_size, canvas_size),
        }
    }
}

/// Image plane plus per-pixel object-id bitmask.
#[derive(Debug, Clone)]
pub struct Canvas {
    pub size: usize,
    pub image: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Canvas {
    pub fn new(size: usize, background: f64) -> Self {
        Canvas {
            size,
            image: vec![background; size * size],
            labels: vec![0; size * size],
        }
    }
}

/// Distance of point p from the line through a and b, positive on the side
/// the triangle interior lies on (c is the opposite vertex).
fn edge_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let (ex, ey) = (b.0 - a.0, b.1 - a.1);
    let norm = ex.hypot(ey);
    let cross = |q: (f64, f64)| (ex * (q.1 - a.1) - ey * (q.0 - a.0)) / norm;
    let sign = cross(c).signum();
    sign * cross(p)
}

fn triangle_member(dx: usize, dy: usize, up: bool, inset: f64) -> bool {
    // Vertex layout in the 17x9 box, apex centered on the base.
    let (a, b, c) = if up {
        ((8.0, 0.0), (0.0, 8.0), (16.0, 8.0))
    } else {
        ((8.0, 8.0), (0.0, 0.0), (16.0, 0.0))
    };
    let p = (dx as f64, dy as f64);
    edge_distance(p, a, b, c) >= inset
        && edge_distance(p, b, c, a) >= inset
        && edge_distance(p, c, a, b) >= inset
}

/// Membership of the pixel at offset (dx, dy) inside the shape's bounding
/// box, for the outline region.
fn outline_member(kind: ShapeKind, dx: usize, dy: usize) -> bool {
    match kind {
        ShapeKind::Square13 => {
            let inner = (3..10).contains(&dx) && (3..10).contains(&dy);
            !inner
        }
        ShapeKind::TriUp => {
            triangle_member(dx, dy, true, 0.0) && !triangle_member(dx, dy, true, OUTLINE_WIDTH)
        }
        ShapeKind::TriDown => {
            triangle_member(dx, dy, false, 0.0) && !triangle_member(dx, dy, false, OUTLINE_WIDTH)
        }
        ShapeKind::Circle6 | ShapeKind::Circle10 => {
            let r = if kind == ShapeKind::Circle6 { 6i64 } else { 10 };
            let (cx, cy) = (r, r);
            let d2 = (dx as i64 - cx).pow(2) + (dy as i64 - cy).pow(2);
            d2 <= r * r && d2 > (r - 3) * (r - 3)
        }
        ShapeKind::MnistDigit(_) => false,
    }
}

/// Draw a shape with its bounding box at `top_left`. Geometric shapes paint
/// 1.0; digits paint their grayscale values and label pixels above the 0.1
/// threshold. Placement must keep the bounding box fully inside the canvas.
pub fn rasterize(
    kind: ShapeKind,
    top_left: (usize, usize),
    canvas: &mut Canvas,
    object_id: u8,
    digits: Option<&MnistStore>,
) -> Result<()> {
    let (bw, bh) = kind.bbox(canvas.size);
    let (x0, y0) = top_left;
    if x0 + bw > canvas.size || y0 + bh > canvas.size {
        return Err(CaeError::InvalidArgument(format!(
            "shape {kind:?} at ({x0}, {y0}) leaves the {}x{0} canvas",
            canvas.size
        )));
    }
    if object_id >= 8 {
        return Err(CaeError::InvalidArgument(
            "label bitmask supports at most 8 objects".into(),
        ));
    }
    let bit = 1u8 << object_id;

    if let ShapeKind::MnistDigit(index) = kind {
        let store = digits.ok_or_else(|| {
            CaeError::InvalidArgument("digit rasterization needs a digit store".into())
        })?;
        let digit = store.digit_resized(index, canvas.size)?;
        for dy in 0..bh {
            for dx in 0..bw {
                let v = digit[dy * canvas.size + dx];
                let p = (y0 + dy) * canvas.size + (x0 + dx);
                canvas.image[p] = canvas.image[p].max(v);
                if v > 0.1 {
                    canvas.labels[p] |= bit;
                }
            }
        }
        return Ok(());
    }

    for dy in 0..bh {
        for dx in 0..bw {
            if outline_member(kind, dx, dy) {
                let p = (y0 + dy) * canvas.size + (x0 + dx);
                canvas.image[p] = canvas.image[p].max(1.0);
                canvas.labels[p] |= bit;
            }
        }
    }
    Ok(())
}
