//! Connected-component labeling with union-find.

use serde::Serialize;

use crate::error::{bad_param, OpResult};
use crate::image::{ImageBuffer, Kind};

/// Per-label statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionStats {
    pub label: u32,
    pub area: usize,
    /// Inclusive bounding box `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    pub centroid: (f64, f64),
}

/// Label raster (0 = background) plus stats for labels `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    stats: Vec<RegionStats>,
}

impl LabelMap {
    /// Builds a map from raw labels; stats are recomputed. Labels above the count
    /// of distinct labels are allowed (watershed lines use [`super::WATERSHED_LINE`]).
    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Self {
        assert_eq!(labels.len(), width * height);
        let stats = compute_stats(width, &labels);
        Self {
            width,
            height,
            labels,
            stats,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Number of distinct non-background labels with stats.
    pub fn count(&self) -> usize {
        self.stats.len()
    }

    pub fn stats(&self) -> &[RegionStats] {
        &self.stats
    }

    pub fn stat(&self, label: u32) -> Option<&RegionStats> {
        self.stats.iter().find(|s| s.label == label)
    }

    /// Binary mask of one label.
    pub fn mask_of(&self, label: u32) -> ImageBuffer {
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| self.get(x, y) == label)
    }

    /// Label raster as a scalar image.
    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, Kind::Unit, |x, y| {
            let l = self.get(x, y);
            if l == super::WATERSHED_LINE {
                0.0
            } else {
                l as f64
            }
        })
    }

    /// Markers from seed points: seed `i` gets label `i + 1`.
    pub fn from_seeds(width: usize, height: usize, seeds: &[(usize, usize)]) -> OpResult<Self> {
        let mut labels = vec![0u32; width * height];
        for (i, &(x, y)) in seeds.iter().enumerate() {
            if x >= width || y >= height {
                return Err(crate::error::OpError::OutOfBounds(format!("seed ({x}, {y})")));
            }
            labels[y * width + x] = i as u32 + 1;
        }
        Ok(Self::from_labels(width, height, labels))
    }
}

fn compute_stats(width: usize, labels: &[u32]) -> Vec<RegionStats> {
    use std::collections::BTreeMap;
    let mut acc: BTreeMap<u32, (usize, usize, usize, usize, usize, f64, f64)> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l == super::WATERSHED_LINE {
            continue;
        }
        let (x, y) = (i % width, i / width);
        let e = acc.entry(l).or_insert((0, x, y, x, y, 0.0, 0.0));
        e.0 += 1;
        e.1 = e.1.min(x);
        e.2 = e.2.min(y);
        e.3 = e.3.max(x);
        e.4 = e.4.max(y);
        e.5 += x as f64;
        e.6 += y as f64;
    }
    acc.into_iter()
        .map(|(label, (area, x0, y0, x1, y1, sx, sy))| RegionStats {
            label,
            area,
            bbox: (x0, y0, x1, y1),
            centroid: (sx / area as f64, sy / area as f64),
        })
        .collect()
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let gp = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = gp;
            a = gp;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Two-pass union-find labeling. Labels are renumbered `1..=K` in raster order
/// of each component's first pixel.
pub fn connected_components(mask: &ImageBuffer, connectivity: u8) -> OpResult<LabelMap> {
    mask.require_binary()?;
    if connectivity != 4 && connectivity != 8 {
        return Err(bad_param(format!("connectivity {connectivity} must be 4 or 8")));
    }
    let (w, h) = mask.dims();
    let mut prov = vec![0u32; w * h];
    let mut uf = UnionFind::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.is_fg(x, y) {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut look = |nx: isize, ny: isize| {
                if nx >= 0 && ny >= 0 && (nx as usize) < w {
                    let l = prov[ny as usize * w + nx as usize];
                    if l != 0 {
                        neighbors[n] = l;
                        n += 1;
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            look(xi - 1, yi);
            look(xi, yi - 1);
            if connectivity == 8 {
                look(xi - 1, yi - 1);
                look(xi + 1, yi - 1);
            }
            let label = if n == 0 {
                uf.make()
            } else {
                let mut l = neighbors[0];
                for &m in &neighbors[1..n] {
                    l = uf.union(l, m);
                }
                uf.find(l)
            };
            prov[y * w + x] = label;
        }
    }
    let mut remap = vec![0u32; uf.parent.len()];
    let mut next = 0u32;
    let mut labels = vec![0u32; w * h];
    for i in 0..w * h {
        if prov[i] == 0 {
            continue;
        }
        let root = uf.find(prov[i]) as usize;
        if remap[root] == 0 {
            next += 1;
            remap[root] = next;
        }
        labels[i] = remap[root];
    }
    Ok(LabelMap::from_labels(w, h, labels))
}

/// Keep only components with at least `min_area` pixels.
pub fn drop_small_components(mask: &ImageBuffer, min_area: usize, connectivity: u8) -> OpResult<ImageBuffer> {
    let cc = connected_components(mask, connectivity)?;
    let keep: Vec<bool> = std::iter::once(false)
        .chain(cc.stats().iter().map(|s| s.area >= min_area))
        .collect();
    Ok(ImageBuffer::mask_from_fn(mask.width(), mask.height(), |x, y| keep[cc.get(x, y) as usize]))
}
