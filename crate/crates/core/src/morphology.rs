//! Binary morphology. Pixels outside the image count as background for both
//! dilation and erosion, so erosion eats into masks touching the border.

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, OpResult};
use crate::image::{ImageBuffer, Kind, BG, FG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeShape {
    Rect,
    Cross,
    Ellipse,
}

/// Structuring element anchored at its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub shape: SeShape,
    pub w: usize,
    pub h: usize,
}

impl StructuringElement {
    pub fn new(shape: SeShape, w: usize, h: usize) -> OpResult<Self> {
        if w == 0 || h == 0 || w % 2 == 0 || h % 2 == 0 {
            return Err(bad_param(format!("structuring element {w}x{h} must be odd-sized")));
        }
        Ok(Self { shape, w, h })
    }

    pub fn rect(size: usize) -> Self {
        Self::new(SeShape::Rect, size, size).expect("odd size")
    }

    pub fn ellipse(size: usize) -> Self {
        Self::new(SeShape::Ellipse, size, size).expect("odd size")
    }

    /// Offsets relative to the anchor.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let (a, b) = ((self.w / 2) as isize, (self.h / 2) as isize);
        let mut out = Vec::new();
        for dy in -b..=b {
            for dx in -a..=a {
                let keep = match self.shape {
                    SeShape::Rect => true,
                    SeShape::Cross => dx == 0 || dy == 0,
                    SeShape::Ellipse => {
                        let nx = if a == 0 { 0.0 } else { dx as f64 / a as f64 };
                        let ny = if b == 0 { 0.0 } else { dy as f64 / b as f64 };
                        nx * nx + ny * ny <= 1.0
                    }
                };
                if keep {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphOp {
    Dilate,
    Erode,
    Open,
    Close,
    Gradient,
    Tophat,
    Blackhat,
}

/// Dilation with an explicit value for out-of-image pixels.
pub fn dilate_with_border(mask: &ImageBuffer, offsets: &[(isize, isize)], border_fg: bool) -> ImageBuffer {
    let (w, h) = mask.dims();
    ImageBuffer::mask_from_fn(w, h, |x, y| {
        offsets.iter().any(|&(dx, dy)| {
            let (sx, sy) = (x as isize - dx, y as isize - dy);
            if mask.in_bounds(sx, sy) {
                mask.is_fg(sx as usize, sy as usize)
            } else {
                border_fg
            }
        })
    })
}

/// Erosion with an explicit value for out-of-image pixels.
pub fn erode_with_border(mask: &ImageBuffer, offsets: &[(isize, isize)], border_fg: bool) -> ImageBuffer {
    let (w, h) = mask.dims();
    ImageBuffer::mask_from_fn(w, h, |x, y| {
        offsets.iter().all(|&(dx, dy)| {
            let (sx, sy) = (x as isize + dx, y as isize + dy);
            if mask.in_bounds(sx, sy) {
                mask.is_fg(sx as usize, sy as usize)
            } else {
                border_fg
            }
        })
    })
}

fn repeat(mask: &ImageBuffer, n: usize, f: impl Fn(&ImageBuffer) -> ImageBuffer) -> ImageBuffer {
    let mut cur = mask.clone();
    for _ in 0..n {
        cur = f(&cur);
    }
    cur
}

pub fn morph(mask: &ImageBuffer, op: MorphOp, se: &StructuringElement, iterations: usize) -> OpResult<ImageBuffer> {
    mask.require_binary()?;
    if iterations == 0 {
        return Err(bad_param("iterations must be >= 1"));
    }
    let offs = se.offsets();
    let dil = |m: &ImageBuffer| repeat(m, iterations, |c| dilate_with_border(c, &offs, false));
    let ero = |m: &ImageBuffer| repeat(m, iterations, |c| erode_with_border(c, &offs, false));
    let out = match op {
        MorphOp::Dilate => dil(mask),
        MorphOp::Erode => ero(mask),
        MorphOp::Open => dil(&ero(mask)),
        MorphOp::Close => ero(&dil(mask)),
        MorphOp::Gradient => minus(&dil(mask), &ero(mask)),
        MorphOp::Tophat => minus(mask, &dil(&ero(mask))),
        MorphOp::Blackhat => minus(&ero(&dil(mask)), mask),
    };
    Ok(out)
}

fn minus(a: &ImageBuffer, b: &ImageBuffer) -> ImageBuffer {
    ImageBuffer::mask_from_fn(a.width(), a.height(), |x, y| a.is_fg(x, y) && !b.is_fg(x, y))
}

pub fn complement(mask: &ImageBuffer) -> ImageBuffer {
    mask.map(Kind::Binary, |v| if v == BG { FG } else { BG })
}

/// Zhang-Suen thinning. Deletions within a sub-iteration are committed in raster
/// order with the conditions re-checked against the current state, which keeps
/// every deletion topology-preserving (a 2x2 block no longer vanishes).
pub fn thinning(mask: &ImageBuffer) -> OpResult<ImageBuffer> {
    mask.require_binary()?;
    let (w, h) = mask.dims();
    let mut px: Vec<bool> = mask.data().iter().map(|&v| v != BG).collect();
    let at = |px: &[bool], x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && px[y as usize * w + x as usize]
    };
    loop {
        let mut changed = false;
        for step in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    if !px[y * w + x] {
                        continue;
                    }
                    let (xi, yi) = (x as isize, y as isize);
                    // P2..P9 clockwise from north
                    let n = [
                        at(&px, xi, yi - 1),
                        at(&px, xi + 1, yi - 1),
                        at(&px, xi + 1, yi),
                        at(&px, xi + 1, yi + 1),
                        at(&px, xi, yi + 1),
                        at(&px, xi - 1, yi + 1),
                        at(&px, xi - 1, yi),
                        at(&px, xi - 1, yi - 1),
                    ];
                    let b = n.iter().filter(|&&v| v).count();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let ok = if step == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        px[y * w + x] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(ImageBuffer::mask_from_fn(w, h, |x, y| px[y * w + x]))
}
