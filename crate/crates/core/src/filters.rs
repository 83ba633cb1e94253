//! Denoising and clustering filters: Perona-Malik diffusion, 1-D k-means,
//! mean shift and Haar wavelet shrinkage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bad_param, OpError, OpResult};
use crate::image::{ImageBuffer, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conductance {
    /// `g = exp(-(d/kappa)^2)`
    Exponential,
    /// `g = 1 / (1 + (d/kappa)^2)`
    Rational,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionParams {
    pub iterations: usize,
    pub kappa: f64,
    pub lambda: f64,
    pub conductance: Conductance,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self {
            iterations: 10,
            kappa: 30.0,
            lambda: 0.25,
            conductance: Conductance::Exponential,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> OpResult<()> {
        if !(self.kappa > 0.0) {
            return Err(bad_param(format!("kappa {} must be > 0", self.kappa)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 0.25) {
            return Err(bad_param(format!("lambda {} must lie in (0, 0.25]", self.lambda)));
        }
        Ok(())
    }

    fn g(&self, d: f64) -> f64 {
        let s = d / self.kappa;
        match self.conductance {
            Conductance::Exponential => (-s * s).exp(),
            Conductance::Rational => 1.0 / (1.0 + s * s),
        }
    }
}

/// Explicit Perona-Malik scheme in flux form. Each edge flux is computed once and
/// applied with opposite signs to its two pixels; no flux crosses the border.
pub fn anisotropic_diffusion(img: &ImageBuffer, params: &DiffusionParams) -> OpResult<ImageBuffer> {
    params.validate()?;
    let (w, h) = img.dims();
    let mut cur = img.data().to_vec();
    let mut next = cur.clone();
    for _ in 0..params.iterations {
        next.copy_from_slice(&cur);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    let d = cur[i + 1] - cur[i];
                    let f = params.lambda * params.g(d.abs()) * d;
                    next[i] += f;
                    next[i + 1] -= f;
                }
                if y + 1 < h {
                    let d = cur[i + w] - cur[i];
                    let f = params.lambda * params.g(d.abs()) * d;
                    next[i] += f;
                    next[i + w] -= f;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    ImageBuffer::new(w, h, output_kind(img), cur)
}

fn output_kind(img: &ImageBuffer) -> Kind {
    match img.kind() {
        Kind::Binary => Kind::Unit,
        k => k,
    }
}

/// Result of 1-D intensity clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index per pixel, 0-based, ordered by centroid.
    pub labels: ImageBuffer,
    pub centroids: Vec<f64>,
}

/// Lloyd iterations on pixel intensities, initialized at evenly spaced quantiles.
/// The seed only drives re-seeding of clusters that become empty.
pub fn kmeans_intensity(img: &ImageBuffer, k: usize, seed: u64, max_iter: usize) -> OpResult<KMeansResult> {
    if k == 0 {
        return Err(bad_param("k must be >= 1"));
    }
    let mut sorted: Vec<f64> = img.data().to_vec();
    sorted.sort_by(f64::total_cmp);
    // distinct values with counts
    let mut values: Vec<(f64, usize)> = Vec::new();
    for &v in &sorted {
        match values.last_mut() {
            Some((last, c)) if *last == v => *c += 1,
            _ => values.push((v, 1)),
        }
    }
    if k > values.len() {
        return Err(bad_param(format!(
            "k = {k} exceeds the {} distinct intensities",
            values.len()
        )));
    }
    let n = sorted.len();
    let mut centroids: Vec<f64> = (0..k)
        .map(|j| sorted[(((2 * j + 1) * n) / (2 * k)).min(n - 1)])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![usize::MAX; values.len()];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (vi, &(v, _)) in values.iter().enumerate() {
            let best = nearest(&centroids, v);
            if assign[vi] != best {
                assign[vi] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (vi, &(v, c)) in values.iter().enumerate() {
            sums[assign[vi]] += v * c as f64;
            counts[assign[vi]] += c;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            } else {
                centroids[j] = values[rng.gen_range(0..values.len())].0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    // sort centroids ascending and renumber
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let sorted_centroids: Vec<f64> = order.iter().map(|&j| centroids[j]).collect();
    let labels = img.map(Kind::Unit, |v| nearest(&sorted_centroids, v) as f64);
    Ok(KMeansResult {
        labels,
        centroids: sorted_centroids,
    })
}

fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, &c) in centroids.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Flat-kernel mean shift in the joint (x, y, intensity) domain. Each pixel is
/// replaced by the intensity of the mode it converges to.
pub fn mean_shift_filter(
    img: &ImageBuffer,
    spatial_radius: f64,
    range_radius: f64,
    max_iter: usize,
) -> OpResult<ImageBuffer> {
    if !(spatial_radius > 0.0) || !(range_radius > 0.0) {
        return Err(bad_param("mean shift radii must be > 0"));
    }
    let (w, h) = img.dims();
    let sr = spatial_radius.ceil() as isize + 1;
    let sr2 = spatial_radius * spatial_radius;
    let mut out = img.data().to_vec();
    for y0 in 0..h {
        for x0 in 0..w {
            let (mut px, mut py, mut pv) = (x0 as f64, y0 as f64, img.get(x0, y0));
            for _ in 0..max_iter {
                let cx = px.round() as isize;
                let cy = py.round() as isize;
                let (mut sx, mut sy, mut sv, mut n) = (0.0, 0.0, 0.0, 0usize);
                for dy in -sr..=sr {
                    for dx in -sr..=sr {
                        let (qx, qy) = (cx + dx, cy + dy);
                        if !img.in_bounds(qx, qy) {
                            continue;
                        }
                        let ddx = qx as f64 - px;
                        let ddy = qy as f64 - py;
                        if ddx * ddx + ddy * ddy > sr2 {
                            continue;
                        }
                        let qv = img.get(qx as usize, qy as usize);
                        if (qv - pv).abs() > range_radius {
                            continue;
                        }
                        sx += qx as f64;
                        sy += qy as f64;
                        sv += qv;
                        n += 1;
                    }
                }
                if n == 0 {
                    break;
                }
                let (nx, ny, nv) = (sx / n as f64, sy / n as f64, sv / n as f64);
                let shift = (nx - px).abs().max((ny - py).abs()).max((nv - pv).abs());
                px = nx;
                py = ny;
                pv = nv;
                if shift < 0.5 {
                    break;
                }
            }
            out[y0 * w + x0] = pv;
        }
    }
    ImageBuffer::new(w, h, output_kind(img), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletParams {
    pub levels: usize,
    pub threshold: f64,
    pub mode: ShrinkMode,
}

/// Orthonormal 2-D Haar transform in place (Mallat layout), `levels` deep.
pub fn haar_forward(data: &mut [f64], w: usize, h: usize, levels: usize) {
    let (mut cw, mut ch) = (w, h);
    let mut tmp = vec![0.0; w.max(h)];
    for _ in 0..levels {
        for y in 0..ch {
            let row = &mut data[y * w..y * w + cw];
            haar_step(row, &mut tmp[..cw]);
        }
        let mut col = vec![0.0; ch];
        for x in 0..cw {
            for y in 0..ch {
                col[y] = data[y * w + x];
            }
            haar_step(&mut col, &mut tmp[..ch]);
            for y in 0..ch {
                data[y * w + x] = col[y];
            }
        }
        cw /= 2;
        ch /= 2;
    }
}

pub fn haar_inverse(data: &mut [f64], w: usize, h: usize, levels: usize) {
    let mut tmp = vec![0.0; w.max(h)];
    for lvl in (0..levels).rev() {
        let cw = w >> lvl;
        let ch = h >> lvl;
        let mut col = vec![0.0; ch];
        for x in 0..cw {
            for y in 0..ch {
                col[y] = data[y * w + x];
            }
            haar_unstep(&mut col, &mut tmp[..ch]);
            for y in 0..ch {
                data[y * w + x] = col[y];
            }
        }
        for y in 0..ch {
            let row = &mut data[y * w..y * w + cw];
            haar_unstep(row, &mut tmp[..cw]);
        }
    }
}

fn haar_step(v: &mut [f64], tmp: &mut [f64]) {
    let half = v.len() / 2;
    for i in 0..half {
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        tmp[i] = (a + b) * std::f64::consts::FRAC_1_SQRT_2;
        tmp[half + i] = (a - b) * std::f64::consts::FRAC_1_SQRT_2;
    }
    v.copy_from_slice(tmp);
}

fn haar_unstep(v: &mut [f64], tmp: &mut [f64]) {
    let half = v.len() / 2;
    for i in 0..half {
        let (s, d) = (v[i], v[half + i]);
        tmp[2 * i] = (s + d) * std::f64::consts::FRAC_1_SQRT_2;
        tmp[2 * i + 1] = (s - d) * std::f64::consts::FRAC_1_SQRT_2;
    }
    v.copy_from_slice(tmp);
}

pub fn wavelet_denoise(img: &ImageBuffer, params: &WaveletParams) -> OpResult<ImageBuffer> {
    if params.levels == 0 {
        return Err(bad_param("levels must be >= 1"));
    }
    if !(params.threshold >= 0.0) {
        return Err(bad_param("threshold must be >= 0"));
    }
    let (w, h) = img.dims();
    let block = 1usize.checked_shl(params.levels as u32).unwrap_or(0);
    if block == 0 || w % block != 0 || h % block != 0 || w == 0 || h == 0 {
        return Err(OpError::BadDims(format!(
            "{w}x{h} is not divisible by 2^{}",
            params.levels
        )));
    }
    let mut data = img.data().to_vec();
    haar_forward(&mut data, w, h, params.levels);
    let (aw, ah) = (w >> params.levels, h >> params.levels);
    let t = params.threshold;
    for y in 0..h {
        for x in 0..w {
            if x < aw && y < ah {
                continue;
            }
            let c = &mut data[y * w + x];
            *c = match params.mode {
                ShrinkMode::Hard => {
                    if c.abs() < t {
                        0.0
                    } else {
                        *c
                    }
                }
                ShrinkMode::Soft => c.signum() * (c.abs() - t).max(0.0),
            };
        }
    }
    haar_inverse(&mut data, w, h, params.levels);
    ImageBuffer::new(w, h, output_kind(img), data)
}
