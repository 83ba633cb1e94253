//! Exact Euclidean distance transform (separable lower-envelope method).

use crate::image::{ImageBuffer, Kind};

const INF: f64 = 1e20;

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let parabola = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = parabola(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = parabola(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Euclidean distance from each foreground pixel to the nearest background
/// pixel (0 on background). Outside the image counts as background.
pub fn distance_transform(mask: &ImageBuffer) -> ImageBuffer {
    let (w, h) = mask.dims();
    // pad by one pixel of background so the border behaves as background
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.is_fg(x, y) {
                grid[(y + 1) * pw + x + 1] = INF;
            }
        }
    }
    let n = pw.max(ph);
    let (mut f, mut d) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 0..ph {
        f[..pw].copy_from_slice(&grid[y * pw..(y + 1) * pw]);
        edt_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&d[..pw]);
    }
    ImageBuffer::from_fn(w, h, Kind::Unit, |x, y| grid[(y + 1) * pw + x + 1].sqrt())
}
