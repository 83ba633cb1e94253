//! Small synthetic rasters used by fixtures, tests and the phantom.

use crate::image::{ImageBuffer, FG};

/// Filled disk: pixel centers within `r` of `center`.
pub fn disk(width: usize, height: usize, center: (f64, f64), r: f64) -> ImageBuffer {
    ImageBuffer::mask_from_fn(width, height, |x, y| {
        let dx = x as f64 - center.0;
        let dy = y as f64 - center.1;
        dx * dx + dy * dy <= r * r
    })
}

/// Axis-aligned filled rectangle `[x0, x0+w) x [y0, y0+h)`.
pub fn rect(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::mask_from_fn(width, height, |x, y| {
        (x0..x0 + w).contains(&x) && (y0..y0 + h).contains(&y)
    })
}

/// Midpoint-circle outline, 8-connected.
pub fn circle_outline(width: usize, height: usize, center: (isize, isize), r: isize) -> ImageBuffer {
    let mut img = ImageBuffer::empty_mask(width, height);
    let (cx, cy) = center;
    let mut x = r;
    let mut y = 0isize;
    let mut err = 1 - r;
    while x >= y {
        for (px, py) in [
            (x, y),
            (y, x),
            (-y, x),
            (-x, y),
            (-x, -y),
            (-y, -x),
            (y, -x),
            (x, -y),
        ] {
            let (qx, qy) = (cx + px, cy + py);
            if img.in_bounds(qx, qy) {
                img.set(qx as usize, qy as usize, FG);
            }
        }
        y += 1;
        if err < 0 {
            err += 2 * y + 1;
        } else {
            x -= 1;
            err += 2 * (y - x) + 1;
        }
    }
    img
}

/// Pixelwise union of two masks with equal dimensions.
pub fn union(a: &ImageBuffer, b: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::mask_from_fn(a.width(), a.height(), |x, y| a.is_fg(x, y) || b.is_fg(x, y))
}

/// Pixelwise `a and not b`.
pub fn difference(a: &ImageBuffer, b: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::mask_from_fn(a.width(), a.height(), |x, y| a.is_fg(x, y) && !b.is_fg(x, y))
}

/// Pixelwise intersection.
pub fn intersection(a: &ImageBuffer, b: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::mask_from_fn(a.width(), a.height(), |x, y| a.is_fg(x, y) && b.is_fg(x, y))
}

/// Scalar image painting `fg_value` where the mask is set, `bg_value` elsewhere.
pub fn paint(mask: &ImageBuffer, kind: crate::image::Kind, fg_value: f64, bg_value: f64) -> ImageBuffer {
    mask.map(kind, |v| if v == FG { fg_value } else { bg_value })
}
