//! Marker-controlled watershed by priority flooding (Meyer).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::labels::LabelMap;
use super::WATERSHED_LINE;
use crate::error::{OpError, OpResult};
use crate::image::ImageBuffer;

/// Total-order key for an f64 relief value.
fn key(v: f64) -> i64 {
    let b = v.to_bits() as i64;
    if b < 0 {
        b ^ i64::MAX
    } else {
        b
    }
}

/// Floods `relief` from the labeled `markers`. Ties in relief are served in
/// insertion order. A pixel reached by two different labels becomes
/// [`WATERSHED_LINE`].
pub fn watershed(relief: &ImageBuffer, markers: &LabelMap) -> OpResult<LabelMap> {
    watershed_masked(relief, markers, None)
}

/// As [`watershed`], but pixels outside `mask` are never flooded and stay 0.
pub fn watershed_masked(relief: &ImageBuffer, markers: &LabelMap, mask: Option<&ImageBuffer>) -> OpResult<LabelMap> {
    let (w, h) = relief.dims();
    if markers.dims() != (w, h) {
        return Err(OpError::DimMismatch(format!(
            "relief {w}x{h} vs markers {}x{}",
            markers.width(),
            markers.height()
        )));
    }
    if let Some(m) = mask {
        relief.same_dims(m)?;
        m.require_binary()?;
    }
    if markers.count() == 0 {
        return Err(OpError::NoMarkers);
    }
    let allowed = |i: usize| mask.map_or(true, |m| m.data()[i] != 0.0);
    let mut labels: Vec<u32> = markers.labels().to_vec();
    for (i, l) in labels.iter_mut().enumerate() {
        if *l == WATERSHED_LINE || !allowed(i) {
            *l = 0;
        }
    }
    let mut queued = vec![false; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let neighbors = |i: usize| {
        let (x, y) = (i % w, i / w);
        let mut out = [usize::MAX; 4];
        if x > 0 {
            out[0] = i - 1;
        }
        if x + 1 < w {
            out[1] = i + 1;
        }
        if y > 0 {
            out[2] = i - w;
        }
        if y + 1 < h {
            out[3] = i + w;
        }
        out
    };
    let data = relief.data();
    for i in 0..w * h {
        if labels[i] == 0 {
            continue;
        }
        for n in neighbors(i) {
            if n != usize::MAX && labels[n] == 0 && !queued[n] && allowed(n) {
                queued[n] = true;
                heap.push(Reverse((key(data[n]), seq, n)));
                seq += 1;
            }
        }
    }
    while let Some(Reverse((_, _, i))) = heap.pop() {
        let mut found = 0u32;
        let mut conflict = false;
        for n in neighbors(i) {
            if n == usize::MAX {
                continue;
            }
            let l = labels[n];
            if l != 0 && l != WATERSHED_LINE {
                if found == 0 {
                    found = l;
                } else if found != l {
                    conflict = true;
                }
            }
        }
        if conflict || found == 0 {
            labels[i] = WATERSHED_LINE;
            continue;
        }
        labels[i] = found;
        for n in neighbors(i) {
            if n != usize::MAX && labels[n] == 0 && !queued[n] && allowed(n) {
                queued[n] = true;
                heap.push(Reverse((key(data[n]), seq, n)));
                seq += 1;
            }
        }
    }
    // pockets sealed off by lines are never reached by a label
    for i in 0..w * h {
        if labels[i] == 0 && allowed(i) {
            labels[i] = WATERSHED_LINE;
        }
    }
    Ok(LabelMap::from_labels(w, h, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Kind;
    use crate::regions::connected_components;

    const L: u32 = WATERSHED_LINE;

    #[test]
    fn single_marker_takes_everything() {
        let relief = ImageBuffer::from_fn(7, 5, Kind::Unit, |x, y| ((x * 13 + y * 7) % 11) as f64);
        let markers = LabelMap::from_seeds(7, 5, &[(3, 2)]).unwrap();
        let out = watershed(&relief, &markers).unwrap();
        assert!(out.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn line_of_nine() {
        let relief = ImageBuffer::new(9, 1, Kind::Unit, vec![0., 0., 0., 5., 9., 5., 0., 0., 0.]).unwrap();
        let markers = LabelMap::from_seeds(9, 1, &[(1, 0), (7, 0)]).unwrap();
        let out = watershed(&relief, &markers).unwrap();
        assert_eq!(out.labels(), &[1, 1, 1, 1, L, 2, 2, 2, 2]);
    }

    #[test]
    fn errors() {
        let relief = ImageBuffer::filled(4, 4, Kind::Unit, 0.0);
        let none = LabelMap::from_labels(4, 4, vec![0; 16]);
        assert_eq!(watershed(&relief, &none).unwrap_err(), OpError::NoMarkers);
        let small = LabelMap::from_seeds(3, 3, &[(1, 1)]).unwrap();
        assert!(matches!(watershed(&relief, &small), Err(OpError::DimMismatch(_))));
    }

    /// Steepest 4-neighbor descent to a local minimum.
    fn descend(relief: &ImageBuffer, mut x: usize, mut y: usize) -> (usize, usize) {
        let (w, h) = relief.dims();
        loop {
            let mut best = (x, y);
            for (dx, dy) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                if relief.get(nx as usize, ny as usize) < relief.get(best.0, best.1) {
                    best = (nx as usize, ny as usize);
                }
            }
            if best == (x, y) {
                return best;
            }
            (x, y) = best;
        }
    }

    #[test]
    fn double_well_matches_descent_oracle() {
        let relief = ImageBuffer::from_fn(16, 16, Kind::Unit, |x, y| {
            let (x, y) = (x as f64, y as f64);
            let a = (x - 4.0).powi(2) + (y - 6.0).powi(2);
            let b = (x - 11.0).powi(2) + (y - 9.0).powi(2);
            a.min(b)
        });
        let markers = LabelMap::from_seeds(16, 16, &[(4, 6), (11, 9)]).unwrap();
        let out = watershed(&relief, &markers).unwrap();
        let oracle = |x: usize, y: usize| if descend(&relief, x, y) == (4, 6) { 1 } else { 2 };
        for y in 0..16 {
            for x in 0..16 {
                let got = out.get(x, y);
                assert_ne!(got, 0);
                let o = oracle(x, y);
                if got == o {
                    continue;
                }
                // disagreement only within one pixel of the oracle's basin boundary
                let boundary = |x: isize, y: isize| {
                    let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < 16 && y < 16;
                    inside(x, y)
                        && [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
                            inside(x + dx, y + dy)
                                && oracle((x + dx) as usize, (y + dy) as usize) != oracle(x as usize, y as usize)
                        })
                };
                let near = (-1..=1).any(|dy| (-1..=1).any(|dx| boundary(x as isize + dx, y as isize + dy)));
                assert!(near, "pixel ({x},{y}) got {got}, oracle {o}");
            }
        }
        for label in [1, 2] {
            let cc = connected_components(&out.mask_of(label), 4).unwrap();
            assert_eq!(cc.count(), 1);
        }
    }

    #[test]
    fn masked_leaves_outside_untouched() {
        let relief = ImageBuffer::filled(6, 6, Kind::Unit, 0.0);
        let mask = ImageBuffer::mask_from_fn(6, 6, |x, _| x < 3);
        let markers = LabelMap::from_seeds(6, 6, &[(0, 0)]).unwrap();
        let out = watershed_masked(&relief, &markers, Some(&mask)).unwrap();
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(out.get(x, y), if x < 3 { 1 } else { 0 });
            }
        }
    }
}
