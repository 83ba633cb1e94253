//! Edge detection and sharpening.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, OpError, OpResult};
use crate::image::{ImageBuffer, Kind, BG, FG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientKind {
    Sobel,
    Prewitt,
    Laplace,
}

/// Normalized 1-D Gaussian truncated at 3 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication. Kind is preserved except binary -> unit.
pub fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> OpResult<ImageBuffer> {
    if !(sigma > 0.0) {
        return Err(bad_param(format!("sigma {sigma} must be > 0")));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                s += kv * img.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp[y * w + x] = s;
        }
    }
    let kind = if img.kind() == Kind::Binary { Kind::Unit } else { img.kind() };
    let horiz = ImageBuffer::new(w, h, kind, tmp)?;
    Ok(ImageBuffer::from_fn(w, h, kind, |x, y| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * horiz.get_clamped(x as isize, y as isize + i as isize - r))
            .sum()
    }))
}

fn gradients(img: &ImageBuffer, side: f64) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let i = y as usize * w + x as usize;
            gx[i] = (p(1, -1) + side * p(1, 0) + p(1, 1)) - (p(-1, -1) + side * p(-1, 0) + p(-1, 1));
            gy[i] = (p(-1, 1) + side * p(0, 1) + p(1, 1)) - (p(-1, -1) + side * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Sobel/Prewitt gradient magnitude, or the 4-neighbour Laplacian response.
pub fn gradient_edges(img: &ImageBuffer, kind: GradientKind) -> OpResult<ImageBuffer> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(OpError::TooSmall(format!("{w}x{h} is below 3x3")));
    }
    let out_kind = if img.kind() == Kind::Hu { Kind::Hu } else { Kind::Unit };
    let out = match kind {
        GradientKind::Sobel | GradientKind::Prewitt => {
            let side = if kind == GradientKind::Sobel { 2.0 } else { 1.0 };
            let (gx, gy) = gradients(img, side);
            let mag = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
            ImageBuffer::new(w, h, out_kind, mag)?
        }
        GradientKind::Laplace => ImageBuffer::from_fn(w, h, out_kind, |x, y| {
            let (x, y) = (x as isize, y as isize);
            img.get_clamped(x - 1, y) + img.get_clamped(x + 1, y) + img.get_clamped(x, y - 1)
                + img.get_clamped(x, y + 1)
                - 4.0 * img.get_clamped(x, y)
        }),
    };
    Ok(out)
}

/// Gaussian smoothing, Sobel gradients, 4-direction non-maximum suppression and
/// 8-connected hysteresis.
pub fn canny(img: &ImageBuffer, sigma: f64, low: f64, high: f64) -> OpResult<ImageBuffer> {
    if !(low >= 0.0 && low < high) {
        return Err(bad_param(format!("need 0 <= low < high, got {low}, {high}")));
    }
    let smooth = gaussian_blur(img, sigma)?;
    let (w, h) = img.dims();
    let (gx, gy) = gradients(&smooth, 2.0);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    let at = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut nms = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            let before = at(xi - dx, yi - dy);
            let after = at(xi + dx, yi + dy);
            // plateaus across the edge keep the pixel on the `before` side only
            if m >= before && m > after {
                nms[i] = m;
            }
        }
    }
    let mut out = vec![BG; w * h];
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if nms[i] >= high {
            out[i] = FG;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == BG && nms[j] >= low && nms[j] > 0.0 {
                    out[j] = FG;
                    queue.push_back(j);
                }
            }
        }
    }
    ImageBuffer::new(w, h, Kind::Binary, out)
}

/// Circle detected by the Hough accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleHit {
    pub center: (usize, usize),
    pub radius: usize,
    pub votes: u32,
}

/// Integer offsets within half a pixel of radius `r`.
pub fn ring_offsets(r: usize) -> Vec<(isize, isize)> {
    let ri = r as isize + 1;
    let rf = r as f64;
    let mut out = Vec::new();
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            let d = ((dx * dx + dy * dy) as f64).sqrt();
            if (d - rf).abs() < 0.5 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Circle Hough transform over a binary edge mask. Hits are 3-D local maxima of
/// the (cx, cy, r) accumulator with at least `vote_threshold` votes, sorted by
/// votes descending; a hit whose center lies within `r_min` of a stronger hit is dropped.
pub fn hough_circles(
    edges: &ImageBuffer,
    r_min: usize,
    r_max: usize,
    vote_threshold: u32,
) -> OpResult<Vec<CircleHit>> {
    edges.require_binary()?;
    if r_min > r_max || r_min == 0 {
        return Err(bad_param(format!("need 1 <= r_min <= r_max, got {r_min}, {r_max}")));
    }
    let (w, h) = edges.dims();
    let nr = r_max - r_min + 1;
    let plane = w * h;
    let mut acc = vec![0u32; nr * plane];
    let points: Vec<(isize, isize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| edges.is_fg(x, y))
        .map(|(x, y)| (x as isize, y as isize))
        .collect();
    if points.is_empty() {
        return Ok(Vec::new());
    }
    for ri in 0..nr {
        let offsets = ring_offsets(r_min + ri);
        let layer = &mut acc[ri * plane..(ri + 1) * plane];
        for &(px, py) in &points {
            for &(dx, dy) in &offsets {
                let (cx, cy) = (px - dx, py - dy);
                if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                    layer[cy as usize * w + cx as usize] += 1;
                }
            }
        }
    }
    let mut hits = Vec::new();
    for ri in 0..nr {
        for cy in 0..h {
            for cx in 0..w {
                let v = acc[ri * plane + cy * w + cx];
                if v < vote_threshold.max(1) {
                    continue;
                }
                let mut is_max = true;
                'scan: for dr in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dr == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let (r2, y2, x2) = (ri as isize + dr, cy as isize + dy, cx as isize + dx);
                            if r2 < 0 || y2 < 0 || x2 < 0 || r2 >= nr as isize || y2 >= h as isize || x2 >= w as isize {
                                continue;
                            }
                            let u = acc[r2 as usize * plane + y2 as usize * w + x2 as usize];
                            // ties resolve toward the earlier cell in (r, y, x) order
                            let earlier = (dr, dy, dx) < (0, 0, 0);
                            if u > v || (u == v && earlier) {
                                is_max = false;
                                break 'scan;
                            }
                        }
                    }
                }
                if is_max {
                    hits.push(CircleHit {
                        center: (cx, cy),
                        radius: r_min + ri,
                        votes: v,
                    });
                }
            }
        }
    }
    hits.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.radius.cmp(&b.radius))
            .then(a.center.1.cmp(&b.center.1))
            .then(a.center.0.cmp(&b.center.0))
    });
    let min_d2 = (r_min * r_min) as isize;
    let mut kept: Vec<CircleHit> = Vec::new();
    for hit in hits {
        let close = kept.iter().any(|k| {
            let dx = k.center.0 as isize - hit.center.0 as isize;
            let dy = k.center.1 as isize - hit.center.1 as isize;
            dx * dx + dy * dy < min_d2
        });
        if !close {
            kept.push(hit);
        }
    }
    Ok(kept)
}

/// `out = in + amount * (in - blur(in))`, clamped to 0..=255 for display-domain input.
pub fn unsharp_mask(img: &ImageBuffer, sigma: f64, amount: f64) -> OpResult<ImageBuffer> {
    if !(amount >= 0.0) {
        return Err(bad_param(format!("amount {amount} must be >= 0")));
    }
    let blur = gaussian_blur(img, sigma)?;
    if amount == 0.0 {
        return Ok(img.clone());
    }
    let clamp = img.kind() != Kind::Hu;
    let (w, h) = img.dims();
    let kind = if clamp { Kind::Unit } else { Kind::Hu };
    let data = img
        .data()
        .iter()
        .zip(blur.data())
        .map(|(&v, &b)| {
            let o = v + amount * (v - b);
            if clamp {
                o.clamp(0.0, 255.0)
            } else {
                o
            }
        })
        .collect();
    ImageBuffer::new(w, h, kind, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regions::connected_components;
    use crate::synth;

    fn unit_fn(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, Kind::Unit, f)
    }

    #[test]
    fn kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(gaussian_blur(&unit_fn(3, 3, |_, _| 0.0), 0.0).is_err());
    }

    #[test]
    fn constant_gives_zero_response() {
        let img = unit_fn(6, 6, |_, _| 80.0);
        for kind in [GradientKind::Sobel, GradientKind::Prewitt, GradientKind::Laplace] {
            let out = gradient_edges(&img, kind).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn laplace_of_ramp_is_zero_inside() {
        let img = unit_fn(8, 8, |x, y| 3.0 * x as f64 + 2.0 * y as f64);
        let out = gradient_edges(&img, GradientKind::Laplace).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                assert_eq!(out.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn sobel_vertical_step_by_hand() {
        let img = unit_fn(6, 4, |x, _| if x < 3 { 0.0 } else { 255.0 });
        let out = gradient_edges(&img, GradientKind::Sobel).unwrap();
        // (1 + 2 + 1) * 255 on the two columns touching the step
        for y in 0..4 {
            let row: Vec<f64> = (0..6).map(|x| out.get(x, y)).collect();
            assert_eq!(row, vec![0.0, 0.0, 1020.0, 1020.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn gradient_too_small() {
        let img = unit_fn(2, 5, |_, _| 0.0);
        assert!(matches!(gradient_edges(&img, GradientKind::Sobel), Err(OpError::TooSmall(_))));
    }

    #[test]
    fn canny_constant_and_bad_thresholds() {
        let img = unit_fn(10, 10, |_, _| 50.0);
        assert_eq!(canny(&img, 1.0, 10.0, 30.0).unwrap().count_fg(), 0);
        assert!(matches!(canny(&img, 1.0, 20.0, 20.0), Err(OpError::BadParam(_))));
    }

    #[test]
    fn canny_square_is_thin_closed_loop() {
        let img = unit_fn(40, 40, |x, y| {
            if (10..30).contains(&x) && (10..30).contains(&y) {
                200.0
            } else {
                20.0
            }
        });
        let edges = canny(&img, 1.0, 100.0, 300.0).unwrap();
        assert!(edges.count_fg() > 0);
        let cc8 = connected_components(&edges, 8).unwrap();
        assert_eq!(cc8.count(), 1, "edge set must be one 8-connected loop");
        // closed: background splits into inside and outside under 4-connectivity
        let bg = edges.map(Kind::Binary, |v| if v == FG { BG } else { FG });
        assert_eq!(connected_components(&bg, 4).unwrap().count(), 2);
        // thin: no 2x2 block fully on
        for y in 0..39 {
            for x in 0..39 {
                let all = edges.is_fg(x, y) && edges.is_fg(x + 1, y) && edges.is_fg(x, y + 1) && edges.is_fg(x + 1, y + 1);
                assert!(!all, "thick edge at ({x},{y})");
            }
        }
    }

    #[test]
    fn hough_finds_rasterized_circle() {
        let edges = synth::circle_outline(100, 100, (50, 50), 20);
        let hits = hough_circles(&edges, 15, 25, 40).unwrap();
        let top = hits[0];
        assert!(top.center.0.abs_diff(50) <= 1 && top.center.1.abs_diff(50) <= 1, "{top:?}");
        assert!(top.radius.abs_diff(20) <= 1);
        assert!(hough_circles(&ImageBuffer::empty_mask(30, 30), 5, 10, 1).unwrap().is_empty());
        assert!(hough_circles(&edges, 10, 5, 1).is_err());
    }

    #[test]
    fn hough_translation() {
        let a = hough_circles(&synth::circle_outline(100, 100, (50, 50), 20), 15, 25, 40).unwrap()[0];
        let b = hough_circles(&synth::circle_outline(100, 100, (57, 47), 20), 15, 25, 40).unwrap()[0];
        assert_eq!((b.center.0 as isize - a.center.0 as isize, b.center.1 as isize - a.center.1 as isize), (7, -3));
        assert_eq!(a.radius, b.radius);
    }

    #[test]
    fn unsharp_identity_cases() {
        let img = unit_fn(8, 3, |x, _| x as f64 * 10.0);
        assert_eq!(unsharp_mask(&img, 1.0, 0.0).unwrap(), img);
        let c = unit_fn(5, 5, |_, _| 60.0);
        let out = unsharp_mask(&c, 1.5, 3.0).unwrap();
        for v in out.data() {
            assert!((v - 60.0).abs() < 1e-9);
        }
        assert!(unsharp_mask(&c, 1.0, -1.0).is_err());
    }

    #[test]
    fn unsharp_step_by_hand() {
        let row = [50.0, 50.0, 50.0, 50.0, 150.0, 150.0, 150.0, 150.0];
        let img = unit_fn(8, 2, |x, _| row[x]);
        let out = unsharp_mask(&img, 1.0, 1.0).unwrap();
        // 1-D sigma-1 kernel over taps -3..=3, edge-replicated
        let wts: Vec<f64> = (-3..=3).map(|k: i32| (-(k * k) as f64 / 2.0).exp()).collect();
        let norm: f64 = wts.iter().sum();
        for x in 0..8usize {
            let blur: f64 = (-3..=3)
                .map(|k: isize| wts[(k + 3) as usize] * row[(x as isize + k).clamp(0, 7) as usize])
                .sum::<f64>()
                / norm;
            let expect = (2.0 * row[x] - blur).clamp(0.0, 255.0);
            assert!((out.get(x, 0) - expect).abs() < 1e-9);
        }
        // overshoot right of the edge, undershoot left of it
        assert!(out.get(4, 0) > 150.0);
        assert!(out.get(3, 0) < 50.0);
    }
}
