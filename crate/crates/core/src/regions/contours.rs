//! Border following with topology (Suzuki-Abe), 8-connected foreground.

use serde::{Deserialize, Serialize};

use crate::error::OpResult;
use crate::geometry::{self, Point};
use crate::image::ImageBuffer;

/// Position of a contour in the border tree. Parents index into the list
/// returned by [`find_contours`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Hierarchy {
    /// Outer border of a component; `parent` is the enclosing hole, if any.
    Outer { parent: Option<usize> },
    /// Border of a hole inside the component whose outer border is `parent`.
    Hole { parent: usize },
}

/// Closed polygon through foreground pixel centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<Point>,
    pub area: f64,
    pub hierarchy: Hierarchy,
}

impl Contour {
    /// Outer contour with no parent; area recomputed from the points.
    pub fn from_points(points: Vec<Point>) -> Self {
        let area = geometry::signed_area(&points).abs();
        Self {
            points,
            area,
            hierarchy: Hierarchy::Outer { parent: None },
        }
    }

    pub fn is_outer(&self) -> bool {
        matches!(self.hierarchy, Hierarchy::Outer { .. })
    }

    pub fn perimeter(&self) -> f64 {
        geometry::perimeter(&self.points)
    }

    pub fn hull(&self) -> Vec<Point> {
        geometry::convex_hull(&self.points)
    }

    /// Mean of the vertices.
    pub fn vertex_mean(&self) -> (f64, f64) {
        let n = self.points.len().max(1) as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
        (sx / n, sy / n)
    }

    /// Pixels on the polyline plus pixel centers strictly inside it (even-odd).
    pub fn rasterize(&self, width: usize, height: usize) -> ImageBuffer {
        let mut out = ImageBuffer::empty_mask(width, height);
        self.paint(&mut out, true, true);
        out
    }

    /// Pixel centers strictly inside the polygon, boundary excluded.
    pub fn interior(&self, width: usize, height: usize) -> ImageBuffer {
        let mut out = ImageBuffer::empty_mask(width, height);
        self.paint(&mut out, false, true);
        out
    }

    fn paint(&self, out: &mut ImageBuffer, boundary: bool, value: bool) {
        let (w, h) = out.dims();
        let v = if value { crate::image::FG } else { crate::image::BG };
        let mut on_boundary = vec![false; 0];
        if !boundary {
            on_boundary = vec![false; w * h];
        }
        for &(x, y) in &self.points {
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                if boundary {
                    out.set(x as usize, y as usize, v);
                } else {
                    on_boundary[y as usize * w + x as usize] = true;
                }
            }
        }
        let pts = &self.points;
        if pts.len() < 3 {
            return;
        }
        let ymin = pts.iter().map(|p| p.1).min().unwrap().max(0);
        let ymax = pts.iter().map(|p| p.1).max().unwrap().min(h as i32 - 1);
        let mut xs: Vec<f64> = Vec::new();
        for y in ymin..=ymax {
            xs.clear();
            for i in 0..pts.len() {
                let (xi, yi) = pts[i];
                let (xj, yj) = pts[(i + 1) % pts.len()];
                if (yi > y) != (yj > y) {
                    xs.push(xi as f64 + (y - yi) as f64 * (xj - xi) as f64 / (yj - yi) as f64);
                }
            }
            xs.sort_by(|a, b| a.total_cmp(b));
            for pair in xs.chunks_exact(2) {
                let x0 = (pair[0].floor() as i32 + 1).max(0);
                let x1 = (pair[1].ceil() as i32 - 1).min(w as i32 - 1);
                for x in x0..=x1 {
                    let (xu, yu) = (x as usize, y as usize);
                    if !boundary && on_boundary[yu * w + xu] {
                        continue;
                    }
                    out.set(xu, yu, v);
                }
            }
        }
    }
}

/// Rebuilds a mask from a contour list: each outer contour is filled, each hole
/// interior cleared, shallower borders first.
pub fn fill_contours(contours: &[Contour], width: usize, height: usize) -> ImageBuffer {
    let depth = |mut i: usize| {
        let mut d = 0;
        loop {
            let parent = match contours[i].hierarchy {
                Hierarchy::Outer { parent } => parent,
                Hierarchy::Hole { parent } => Some(parent),
            };
            match parent {
                Some(p) if p < contours.len() && d < contours.len() => {
                    d += 1;
                    i = p;
                }
                _ => return d,
            }
        }
    };
    let mut order: Vec<(usize, usize)> = (0..contours.len()).map(|i| (depth(i), i)).collect();
    order.sort();
    let mut out = ImageBuffer::empty_mask(width, height);
    for (_, i) in order {
        let c = &contours[i];
        if c.is_outer() {
            c.paint(&mut out, true, true);
        } else {
            c.paint(&mut out, false, false);
        }
    }
    out
}

// clockwise in image coordinates (y down), starting east
const DIRS: [(i32, i32); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

fn dir_of(from: (i32, i32), to: (i32, i32)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    DIRS.iter().position(|&v| v == d).expect("neighbor")
}

struct Border {
    hole: bool,
    parent: i32,
    points: Vec<Point>,
}

/// All outer and hole borders of the 8-connected foreground, sorted by area
/// descending. Borders with fewer than 3 points (1–2 pixel specks) are omitted.
pub fn find_contours(mask: &ImageBuffer) -> OpResult<Vec<Contour>> {
    mask.require_binary()?;
    let (w, h) = mask.dims();
    let (pw, ph) = (w as i32 + 2, h as i32 + 2);
    let mut f = vec![0i32; (pw * ph) as usize];
    for y in 0..h {
        for x in 0..w {
            if mask.is_fg(x, y) {
                f[(y + 1) * pw as usize + x + 1] = 1;
            }
        }
    }
    let at = |x: i32, y: i32| (y * pw + x) as usize;
    // border 1 is the frame, treated as a hole
    let mut borders: Vec<Border> = vec![
        Border { hole: false, parent: -1, points: Vec::new() },
        Border { hole: true, parent: 0, points: Vec::new() },
    ];
    let mut nbd = 1i32;
    for y in 1..ph - 1 {
        let mut lnbd = 1i32;
        for x in 1..pw - 1 {
            let v = f[at(x, y)];
            if v == 0 {
                continue;
            }
            let start = if v == 1 && f[at(x - 1, y)] == 0 {
                Some((false, (x - 1, y)))
            } else if v >= 1 && f[at(x + 1, y)] == 0 {
                if v > 1 {
                    lnbd = v;
                }
                Some((true, (x + 1, y)))
            } else {
                None
            };
            if let Some((hole, from)) = start {
                nbd += 1;
                let prev = &borders[lnbd as usize];
                let parent = if hole == prev.hole { prev.parent } else { lnbd };
                let points = follow(&mut f, pw, (x, y), from, nbd);
                borders.push(Border { hole, parent, points });
            }
            let v = f[at(x, y)];
            if v != 1 {
                lnbd = v.abs();
            }
        }
    }
    // index remap after filtering and sorting
    let mut keep: Vec<usize> = (2..borders.len()).filter(|&b| borders[b].points.len() >= 3).collect();
    let areas: Vec<f64> = borders.iter().map(|b| geometry::signed_area(&b.points).abs()).collect();
    keep.sort_by(|&a, &b| areas[b].total_cmp(&areas[a]).then(a.cmp(&b)));
    let mut pos = vec![usize::MAX; borders.len()];
    for (i, &b) in keep.iter().enumerate() {
        pos[b] = i;
    }
    let contours = keep
        .iter()
        .map(|&b| {
            let border = &borders[b];
            let parent = border.parent as usize;
            let parent_idx = if parent >= 2 && pos[parent] != usize::MAX { Some(pos[parent]) } else { None };
            let hierarchy = if border.hole {
                Hierarchy::Hole { parent: parent_idx.expect("hole border has an outer parent") }
            } else {
                Hierarchy::Outer { parent: parent_idx }
            };
            Contour {
                points: border.points.iter().map(|&(x, y)| (x - 1, y - 1)).collect(),
                area: areas[b],
                hierarchy,
            }
        })
        .collect();
    Ok(contours)
}

fn follow(f: &mut [i32], pw: i32, start: (i32, i32), from: (i32, i32), nbd: i32) -> Vec<Point> {
    let at = |p: (i32, i32)| (p.1 * pw + p.0) as usize;
    let step = |p: (i32, i32), d: usize| (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
    // 3.1: clockwise search for the first non-zero neighbor
    let d0 = dir_of(start, from);
    let first = (0..8).map(|k| (d0 + k) % 8).find(|&d| f[at(step(start, d))] != 0);
    let Some(d1) = first else {
        f[at(start)] = -nbd;
        return vec![start];
    };
    let p1 = step(start, d1);
    let (mut p2, mut p3) = (p1, start);
    let mut points = Vec::new();
    loop {
        points.push(p3);
        // 3.3: counter-clockwise search starting after p2
        let d2 = dir_of(p3, p2);
        let mut east_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let d = (d2 + 8 - k) % 8;
            let q = step(p3, d);
            if f[at(q)] != 0 {
                p4 = q;
                break;
            }
            if d == 0 {
                east_zero = true;
            }
        }
        // 3.4
        if east_zero {
            f[at(p3)] = -nbd;
        } else if f[at(p3)] == 1 {
            f[at(p3)] = nbd;
        }
        // 3.5
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    points
}
