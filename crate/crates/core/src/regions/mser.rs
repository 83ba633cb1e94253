//! Maximally stable extremal regions over a union-find component tree.

use serde::{Deserialize, Serialize};

use crate::error::{bad_param, OpResult};
use crate::image::{quantize, ImageBuffer, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MserParams {
    pub delta: u8,
    pub min_area: usize,
    pub max_area: usize,
    pub max_variation: f64,
}

impl Default for MserParams {
    fn default() -> Self {
        Self {
            delta: 5,
            min_area: 30,
            max_area: 14400,
            max_variation: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MserRegion {
    /// Row-major pixel indices, ascending.
    pub pixels: Vec<usize>,
    /// Relative area change across ±delta levels; lower is more stable.
    pub variation: f64,
    /// Threshold level at which the region first appears (in the swept image).
    pub level: u8,
    /// True for bright-on-dark regions.
    pub bright: bool,
}

impl MserRegion {
    pub fn to_mask(&self, width: usize, height: usize) -> ImageBuffer {
        let mut m = ImageBuffer::empty_mask(width, height);
        for &i in &self.pixels {
            m.data_mut()[i] = crate::image::FG;
        }
        m
    }
}

struct Node {
    level: i32,
    area: usize,
    parent: Option<usize>,
    children: Vec<usize>,
    largest_child: Option<usize>,
}

struct Tree {
    nodes: Vec<Node>,
    /// Node each pixel joined at.
    pixel_node: Vec<usize>,
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Dark-to-bright sweep: node components are connected sets with value ≤ level.
fn build_tree(values: &[u8], w: usize, h: usize) -> Tree {
    let n = w * h;
    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); 256];
    for (i, &v) in values.iter().enumerate() {
        by_level[v as usize].push(i);
    }
    let mut parent: Vec<usize> = (0..n).collect();
    let mut size = vec![0usize; n];
    let mut active = vec![false; n];
    let mut node_of = vec![usize::MAX; n];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut touched_at = vec![-1i32; n];
    let mut nodes: Vec<Node> = Vec::new();
    let mut pixel_node = vec![0usize; n];
    for (level, pixels) in by_level.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let level = level as i32;
        let mut touched: Vec<usize> = Vec::new();
        for &p in pixels {
            active[p] = true;
            size[p] = 1;
            touched_at[p] = level;
            touched.push(p);
            let (x, y) = (p % w, p / w);
            let mut nb = [usize::MAX; 4];
            if x > 0 {
                nb[0] = p - 1;
            }
            if x + 1 < w {
                nb[1] = p + 1;
            }
            if y > 0 {
                nb[2] = p - w;
            }
            if y + 1 < h {
                nb[3] = p + w;
            }
            for q in nb {
                if q == usize::MAX || !active[q] {
                    continue;
                }
                let (rp, rq) = (find(&mut parent, p), find(&mut parent, q));
                if rp == rq {
                    continue;
                }
                for r in [rp, rq] {
                    if touched_at[r] != level {
                        touched_at[r] = level;
                        kids[r] = vec![node_of[r]];
                    }
                }
                let (big, small) = if size[rp] >= size[rq] { (rp, rq) } else { (rq, rp) };
                parent[small] = big;
                size[big] += size[small];
                let moved = std::mem::take(&mut kids[small]);
                kids[big].extend(moved);
                touched.push(big);
            }
        }
        let mut roots: Vec<usize> = touched.iter().map(|&t| find(&mut parent, t)).collect();
        roots.sort_unstable();
        roots.dedup();
        for r in roots {
            let id = nodes.len();
            let children: Vec<usize> = std::mem::take(&mut kids[r]).into_iter().filter(|&c| c != usize::MAX).collect();
            let largest_child = children.iter().copied().max_by_key(|&c| (nodes[c].area, std::cmp::Reverse(c)));
            for &c in &children {
                nodes[c].parent = Some(id);
            }
            nodes.push(Node {
                level,
                area: size[r],
                parent: None,
                children,
                largest_child,
            });
            node_of[r] = id;
        }
        for &p in pixels {
            pixel_node[p] = node_of[find(&mut parent, p)];
        }
    }
    Tree { nodes, pixel_node }
}

impl Tree {
    /// Area of the component containing node `n` at threshold `s` (s ≥ level of n).
    fn area_up(&self, mut n: usize, s: i32) -> usize {
        while let Some(p) = self.nodes[n].parent {
            if self.nodes[p].level > s {
                break;
            }
            n = p;
        }
        self.nodes[n].area
    }

    /// Area of the component at threshold `s` (s < level of n) along the largest-child chain.
    fn area_down(&self, mut n: usize, s: i32) -> usize {
        while self.nodes[n].level > s {
            match self.nodes[n].largest_child {
                Some(c) => n = c,
                None => return 0,
            }
        }
        self.nodes[n].area
    }

    fn variation(&self, n: usize, delta: i32) -> f64 {
        let node = &self.nodes[n];
        let end = node.parent.map_or(node.level, |p| self.nodes[p].level - 1);
        let mut best = f64::INFINITY;
        for s in node.level..=end {
            let up = self.area_up(n, s + delta);
            let down = self.area_down(n, s - delta);
            best = best.min((up - down) as f64 / node.area as f64);
        }
        best
    }

    fn pixels(&self, n: usize) -> Vec<usize> {
        let mut inside = vec![false; self.nodes.len()];
        let mut stack = vec![n];
        while let Some(m) = stack.pop() {
            inside[m] = true;
            stack.extend(&self.nodes[m].children);
        }
        self.pixel_node
            .iter()
            .enumerate()
            .filter(|(_, &nd)| inside[nd])
            .map(|(i, _)| i)
            .collect()
    }
}

fn sweep(values: &[u8], w: usize, h: usize, params: &MserParams, bright: bool) -> Vec<MserRegion> {
    let tree = build_tree(values, w, h);
    let delta = params.delta as i32;
    let q: Vec<f64> = (0..tree.nodes.len()).map(|n| tree.variation(n, delta)).collect();
    let mut out = Vec::new();
    for (n, node) in tree.nodes.iter().enumerate() {
        if node.area == w * h || node.area < params.min_area || node.area > params.max_area {
            continue;
        }
        if q[n] > params.max_variation {
            continue;
        }
        let parent_ok = node.parent.map_or(true, |p| q[n] <= q[p]);
        let children_ok = node.children.iter().all(|&c| q[n] <= q[c]);
        if parent_ok && children_ok {
            out.push(MserRegion {
                pixels: tree.pixels(n),
                variation: q[n],
                level: node.level as u8,
                bright,
            });
        }
    }
    out
}

/// Both polarities: dark regions from the image, bright regions from its
/// inverse. Sorted bright first, then by area descending.
pub fn mser(img: &ImageBuffer, params: &MserParams) -> OpResult<Vec<MserRegion>> {
    if img.kind() == Kind::Hu {
        return Err(bad_param("mser expects a display-domain image"));
    }
    if params.min_area > params.max_area {
        return Err(bad_param("min_area exceeds max_area"));
    }
    if !(params.max_variation >= 0.0) {
        return Err(bad_param("max_variation must be non-negative"));
    }
    if params.delta == 0 {
        return Err(bad_param("delta must be at least 1"));
    }
    let (w, h) = img.dims();
    let values: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let inverted: Vec<u8> = values.iter().map(|&v| 255 - v).collect();
    let mut out = sweep(&inverted, w, h, params, true);
    out.extend(sweep(&values, w, h, params, false));
    out.sort_by(|a, b| b.bright.cmp(&a.bright).then(b.pixels.len().cmp(&a.pixels.len())));
    Ok(out)
}
