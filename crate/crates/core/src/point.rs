//! Point operations and thresholding on display-domain buffers.

use crate::error::{bad_param, OpError, OpResult};
use crate::image::{quantize, ImageBuffer, Kind, BG, FG};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointOp {
    Brightness(f64),
    /// Scales distance from mid-gray.
    Contrast(f64),
    /// `out = 255 * (in / 255)^(1/g)`.
    Gamma(f64),
    Invert,
}

fn require_display(img: &ImageBuffer) -> OpResult<()> {
    if img.kind() == Kind::Hu {
        return Err(bad_param(
            "point operations act on display-domain buffers; window the HU slice first",
        ));
    }
    Ok(())
}

pub fn point_op(img: &ImageBuffer, op: PointOp) -> OpResult<ImageBuffer> {
    require_display(img)?;
    let clamp = |v: f64| v.clamp(0.0, 255.0);
    let out = match op {
        PointOp::Brightness(delta) => img.map(Kind::Unit, |v| clamp(v + delta)),
        PointOp::Contrast(f) => {
            if !(f >= 0.0) {
                return Err(bad_param(format!("contrast factor {f} must be >= 0")));
            }
            if f == 1.0 {
                return Ok(img.clone());
            }
            img.map(Kind::Unit, |v| clamp((v - 127.5) * f + 127.5))
        }
        PointOp::Gamma(g) => {
            if !(g > 0.0) {
                return Err(bad_param(format!("gamma {g} must be > 0")));
            }
            if g == 1.0 {
                return Ok(img.clone());
            }
            img.map(Kind::Unit, |v| 255.0 * (clamp(v) / 255.0).powf(1.0 / g))
        }
        // keeps binary masks binary
        PointOp::Invert => return Ok(img.map(img.kind(), |v| 255.0 - v)),
    };
    Ok(out)
}

/// 256-bin histogram of quantized samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bins: [u64; 256],
    pub total: u64,
}

impl Histogram {
    pub fn of(img: &ImageBuffer) -> Self {
        let mut bins = [0u64; 256];
        for &v in img.data() {
            bins[quantize(v) as usize] += 1;
        }
        Histogram {
            bins,
            total: img.len() as u64,
        }
    }

    pub fn populated_bins(&self) -> usize {
        self.bins.iter().filter(|&&c| c > 0).count()
    }
}

/// `out = round(255 * CDF(in))`, rounding half away from zero.
pub fn histogram_equalize(img: &ImageBuffer) -> OpResult<ImageBuffer> {
    require_display(img)?;
    let hist = Histogram::of(img);
    if hist.total == 0 {
        return Ok(img.clone());
    }
    let mut lut = [0.0f64; 256];
    let mut acc = 0u64;
    for (i, &c) in hist.bins.iter().enumerate() {
        acc += c;
        lut[i] = (255.0 * acc as f64 / hist.total as f64).round();
    }
    Ok(img.map(Kind::Unit, |v| lut[quantize(v) as usize]))
}

/// Foreground where `value >= t`.
pub fn threshold_simple(img: &ImageBuffer, t: f64) -> ImageBuffer {
    img.map(Kind::Binary, |v| if v >= t { FG } else { BG })
}

/// Otsu threshold over the 256 quantized levels; returns the lowest maximizer.
pub fn otsu_level(img: &ImageBuffer) -> OpResult<u8> {
    let hist = Histogram::of(img);
    if hist.populated_bins() < 2 {
        return Err(OpError::DegenerateHistogram);
    }
    let n = hist.total as i128;
    let s: i128 = hist
        .bins
        .iter()
        .enumerate()
        .map(|(i, &c)| i as i128 * c as i128)
        .sum();
    // between-class variance at t is (n0*s1 - n1*s0)^2 / (n0*n1*n^2); compared exactly
    let mut best_t = 0usize;
    let mut best: Option<(i128, i128)> = None;
    let (mut n0, mut s0) = (0i128, 0i128);
    for t in 0..256usize {
        if t > 0 {
            n0 += hist.bins[t - 1] as i128;
            s0 += (t as i128 - 1) * hist.bins[t - 1] as i128;
        }
        let n1 = n - n0;
        let s1 = s - s0;
        let (num, den) = if n0 == 0 || n1 == 0 {
            (0, 1)
        } else {
            let d = n0 * s1 - n1 * s0;
            (d * d, n0 * n1)
        };
        let better = match best {
            None => true,
            Some((bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((num, den));
            best_t = t;
        }
    }
    Ok(best_t as u8)
}

pub fn threshold_otsu(img: &ImageBuffer) -> OpResult<(u8, ImageBuffer)> {
    require_display(img)?;
    let t = otsu_level(img)?;
    let mask = img.map(Kind::Binary, |v| if quantize(v) >= t { FG } else { BG });
    Ok((t, mask))
}

/// Foreground where `value >= mean(window) - c`, edge-replicated borders.
pub fn threshold_adaptive(img: &ImageBuffer, window: usize, c: f64) -> OpResult<ImageBuffer> {
    if window < 3 || window % 2 == 0 {
        return Err(bad_param(format!("window {window} must be odd and >= 3")));
    }
    let (w, h) = img.dims();
    let r = (window / 2) as isize;
    let area = (window * window) as f64;
    // integral image of the edge-replicated extension
    let pw = w + 2 * r as usize;
    let ph = h + 2 * r as usize;
    let mut integral = vec![0.0f64; (pw + 1) * (ph + 1)];
    for py in 0..ph {
        let mut row = 0.0;
        for px in 0..pw {
            row += img.get_clamped(px as isize - r, py as isize - r);
            integral[(py + 1) * (pw + 1) + px + 1] = integral[py * (pw + 1) + px + 1] + row;
        }
    }
    let at = |x: usize, y: usize| integral[y * (pw + 1) + x];
    Ok(ImageBuffer::from_fn(w, h, Kind::Binary, |x, y| {
        let sum = at(x + window, y + window) - at(x, y + window) - at(x + window, y) + at(x, y);
        if img.get(x, y) >= sum / area - c {
            FG
        } else {
            BG
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(w: usize, h: usize, data: Vec<f64>) -> ImageBuffer {
        ImageBuffer::new(w, h, Kind::Unit, data).unwrap()
    }

    #[test]
    fn invert_zero_is_255() {
        let out = point_op(&unit(1, 1, vec![0.0]), PointOp::Invert).unwrap();
        assert_eq!(out.data(), &[255.0]);
    }

    #[test]
    fn brightness_clamps() {
        let out = point_op(&unit(1, 1, vec![250.0]), PointOp::Brightness(10.0)).unwrap();
        assert_eq!(out.data(), &[255.0]);
    }

    #[test]
    fn identities_are_exact() {
        let img = unit(3, 1, vec![0.0, 17.3, 255.0]);
        assert_eq!(point_op(&img, PointOp::Gamma(1.0)).unwrap(), img);
        assert_eq!(point_op(&img, PointOp::Contrast(1.0)).unwrap(), img);
        assert_eq!(point_op(&img, PointOp::Brightness(0.0)).unwrap(), img);
    }

    #[test]
    fn bad_params() {
        let img = unit(1, 1, vec![3.0]);
        assert!(matches!(point_op(&img, PointOp::Gamma(0.0)), Err(OpError::BadParam(_))));
        assert!(matches!(point_op(&img, PointOp::Contrast(-0.5)), Err(OpError::BadParam(_))));
        let hu = ImageBuffer::filled(1, 1, Kind::Hu, 0.0);
        assert!(matches!(point_op(&hu, PointOp::Invert), Err(OpError::BadParam(_))));
    }

    #[test]
    fn equalize_constant() {
        let img = unit(4, 4, vec![77.0; 16]);
        let out = histogram_equalize(&img).unwrap();
        assert!(out.data().iter().all(|&v| v == 255.0));
    }

    #[test]
    fn equalize_half_and_half_golden() {
        // CDF(0) = 0.5 -> 127.5 rounds to 128; CDF(255) = 1 -> 255
        let data: Vec<f64> = (0..16).map(|i| if i < 8 { 0.0 } else { 255.0 }).collect();
        let out = histogram_equalize(&unit(4, 4, data)).unwrap();
        assert_eq!(&out.data()[..8], &[128.0; 8]);
        assert_eq!(&out.data()[8..], &[255.0; 8]);
    }

    #[test]
    fn equalize_uniform_ramp_is_near_identity() {
        let img = unit(16, 16, (0..256).map(|v| v as f64).collect());
        let out = histogram_equalize(&img).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1.0, "{a} -> {b}");
        }
    }

    #[test]
    fn simple_threshold_cases() {
        let img = unit(2, 2, vec![100.0; 4]);
        assert_eq!(threshold_simple(&img, 50.0).count_fg(), 4);
        assert_eq!(threshold_simple(&img, 150.0).count_fg(), 0);
        let checker = ImageBuffer::from_fn(4, 4, Kind::Unit, |x, y| {
            if (x + y) % 2 == 0 {
                255.0
            } else {
                0.0
            }
        });
        let mask = threshold_simple(&checker, 128.0);
        assert_eq!(mask.data(), checker.data());
        assert_eq!(mask.kind(), Kind::Binary);
    }

    #[test]
    fn otsu_bimodal() {
        let data: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 10.0 } else { 200.0 }).collect();
        let img = unit(8, 8, data.clone());
        let (t, mask) = threshold_otsu(&img).unwrap();
        assert!(t > 10 && t < 200);
        // every candidate in 11..=200 ties; lowest wins
        assert_eq!(t, 11);
        for (v, m) in data.iter().zip(mask.data()) {
            assert_eq!(*m == FG, *v == 200.0);
        }
    }

    #[test]
    fn otsu_constant_is_degenerate() {
        assert_eq!(
            threshold_otsu(&unit(2, 2, vec![9.0; 4])).unwrap_err(),
            OpError::DegenerateHistogram
        );
    }

    #[test]
    fn otsu_three_levels_golden() {
        // {0} | {128,255}: n0=4 s0=0 n1=8 s1=1532 -> 6128^2/32 = 1173512
        // {0,128} | {255}: n0=8 s0=512 n1=4 s1=1020 -> 6112^2/32 = 1167392
        // so the first split wins at its lowest threshold, t = 1
        let data: Vec<f64> = (0..12).map(|i| [0.0, 128.0, 255.0][i % 3]).collect();
        let (t, _) = threshold_otsu(&unit(4, 3, data)).unwrap();
        assert_eq!(t, 1);
    }

    #[test]
    fn adaptive_constant() {
        let img = unit(5, 5, vec![40.0; 25]);
        assert_eq!(threshold_adaptive(&img, 3, 1.0).unwrap().count_fg(), 25);
        assert_eq!(threshold_adaptive(&img, 3, -1.0).unwrap().count_fg(), 0);
    }

    #[test]
    fn adaptive_rejects_even_window() {
        let img = unit(5, 5, vec![40.0; 25]);
        assert!(matches!(threshold_adaptive(&img, 4, 0.0), Err(OpError::BadParam(_))));
        assert!(matches!(threshold_adaptive(&img, 1, 0.0), Err(OpError::BadParam(_))));
    }

    fn brute_adaptive(img: &ImageBuffer, window: usize, c: f64) -> Vec<bool> {
        let r = (window / 2) as isize;
        let mut out = Vec::new();
        for y in 0..img.height() as isize {
            for x in 0..img.width() as isize {
                let mut s = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        s += img.get_clamped(x + dx, y + dy);
                    }
                }
                let mean = s / (window * window) as f64;
                out.push(img.get(x as usize, y as usize) >= mean - c);
            }
        }
        out
    }

    #[test]
    fn adaptive_square_interior() {
        let img = ImageBuffer::from_fn(11, 11, Kind::Unit, |x, y| {
            if (3..8).contains(&x) && (3..8).contains(&y) {
                200.0
            } else {
                20.0
            }
        });
        let mask = threshold_adaptive(&img, 3, 0.0).unwrap();
        let oracle = brute_adaptive(&img, 3, 0.0);
        for (i, &m) in mask.data().iter().enumerate() {
            assert_eq!(m == FG, oracle[i]);
        }
        for y in 3..8 {
            for x in 3..8 {
                assert!(mask.is_fg(x, y));
            }
        }
    }

    proptest! {
        #[test]
        fn invert_is_involution(data in proptest::collection::vec(0u32..=255 * 256, 16)) {
            // display-domain samples on a 1/256 grid; 255 - v is exact there
            let img = unit(4, 4, data.into_iter().map(|v| v as f64 / 256.0).collect());
            let twice = point_op(&point_op(&img, PointOp::Invert).unwrap(), PointOp::Invert).unwrap();
            prop_assert_eq!(twice, img);
        }

        #[test]
        fn simple_threshold_monotone(data in proptest::collection::vec(0u8..=255, 16), t1 in 0u8..=255, t2 in 0u8..=255) {
            let img = unit(4, 4, data.into_iter().map(f64::from).collect());
            let (lo, hi) = (t1.min(t2) as f64, t1.max(t2) as f64);
            let a = threshold_simple(&img, lo);
            let b = threshold_simple(&img, hi);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!(!(*y == FG && *x == BG));
            }
        }

        #[test]
        fn adaptive_matches_brute(data in proptest::collection::vec(0u8..=255, 48), c in -20.0f64..20.0) {
            let img = unit(8, 6, data.into_iter().map(f64::from).collect());
            let mask = threshold_adaptive(&img, 5, c).unwrap();
            let oracle = brute_adaptive(&img, 5, c);
            for (i, &m) in mask.data().iter().enumerate() {
                prop_assert_eq!(m == FG, oracle[i]);
            }
        }
    }
}
