use std::collections::VecDeque;

use crate::error::{OpError, OpResult};
use crate::image::{ImageBuffer, Kind, BG, FG};

/// Sets the 4-connected region of pixels within `tolerance` of the seed value to `new_value`.
pub fn flood_fill(img: &ImageBuffer, seed: (isize, isize), new_value: f64, tolerance: f64) -> OpResult<ImageBuffer> {
    if !img.in_bounds(seed.0, seed.1) {
        return Err(OpError::OutOfBounds(format!("seed ({}, {})", seed.0, seed.1)));
    }
    let region = flood_region(img, (seed.0 as usize, seed.1 as usize), tolerance);
    let mut kind = img.kind();
    if kind == Kind::Binary && new_value != FG && new_value != BG {
        kind = Kind::Unit;
    }
    let (w, h) = img.dims();
    let data = img
        .data()
        .iter()
        .zip(&region)
        .map(|(&v, &r)| if r { new_value } else { v })
        .collect();
    ImageBuffer::new(w, h, kind, data)
}

/// Membership of the 4-connected tolerance region around `seed`.
pub fn flood_region(img: &ImageBuffer, seed: (usize, usize), tolerance: f64) -> Vec<bool> {
    let (w, h) = img.dims();
    let v0 = img.get(seed.0, seed.1);
    let mut seen = vec![false; w * h];
    let mut q = VecDeque::new();
    seen[seed.1 * w + seed.0] = true;
    q.push_back(seed);
    while let Some((x, y)) = q.pop_front() {
        let mut visit = |nx: usize, ny: usize| {
            let i = ny * w + nx;
            if !seen[i] && (img.get(nx, ny) - v0).abs() <= tolerance {
                seen[i] = true;
                q.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;

    #[test]
    fn fills_inside_outline_only() {
        let outline = synth::difference(&synth::rect(10, 10, 2, 2, 6, 6), &synth::rect(10, 10, 3, 3, 4, 4));
        let out = flood_fill(&outline, (5, 5), FG, 0.0).unwrap();
        assert_eq!(out, synth::rect(10, 10, 2, 2, 6, 6));
    }

    #[test]
    fn fixed_point_is_noop() {
        let img = ImageBuffer::filled(4, 4, Kind::Unit, 9.0);
        assert_eq!(flood_fill(&img, (1, 1), 9.0, 0.0).unwrap(), img);
    }

    #[test]
    fn out_of_bounds_seed() {
        let img = ImageBuffer::filled(4, 4, Kind::Unit, 9.0);
        assert!(matches!(flood_fill(&img, (-1, 0), 1.0, 0.0), Err(OpError::OutOfBounds(_))));
        assert!(matches!(flood_fill(&img, (4, 0), 1.0, 0.0), Err(OpError::OutOfBounds(_))));
    }

    proptest! {
        #[test]
        fn never_touches_outside_region(data in proptest::collection::vec(0u8..4, 64), sx in 0usize..8, sy in 0usize..8, tol in 0u8..3) {
            let img = ImageBuffer::new(8, 8, Kind::Unit, data.into_iter().map(f64::from).collect()).unwrap();
            let out = flood_fill(&img, (sx as isize, sy as isize), 99.0, tol as f64).unwrap();
            let region = flood_region(&img, (sx, sy), tol as f64);
            for i in 0..64 {
                if region[i] {
                    prop_assert_eq!(out.data()[i], 99.0);
                } else {
                    prop_assert_eq!(out.data()[i], img.data()[i]);
                }
            }
        }
    }
}
