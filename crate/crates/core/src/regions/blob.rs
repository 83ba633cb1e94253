//! Multi-threshold blob detector: threshold, group, merge, average.

use serde::{Deserialize, Serialize};

use super::contours::find_contours;
use super::labels::connected_components;
use crate::error::{bad_param, OpResult};
use crate::image::{ImageBuffer, Kind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center: (f64, f64),
    /// Pixel count.
    pub area: f64,
    pub circularity: f64,
    pub convexity: f64,
    pub inertia_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobParams {
    pub min_threshold: f64,
    pub max_threshold: f64,
    pub threshold_step: f64,
    pub min_repeatability: usize,
    pub min_dist: f64,
    /// Detect dark blobs on a bright field instead of bright on dark.
    pub dark: bool,
    pub area: Option<(f64, f64)>,
    pub circularity: Option<(f64, f64)>,
    pub convexity: Option<(f64, f64)>,
    pub inertia: Option<(f64, f64)>,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            min_threshold: 10.0,
            max_threshold: 220.0,
            threshold_step: 10.0,
            min_repeatability: 2,
            min_dist: 10.0,
            dark: false,
            area: None,
            circularity: None,
            convexity: None,
            inertia: None,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> OpResult<()> {
        if !(self.min_threshold < self.max_threshold) {
            return Err(bad_param("min_threshold must be below max_threshold"));
        }
        if !(self.threshold_step > 0.0) {
            return Err(bad_param("threshold_step must be positive"));
        }
        if !(self.min_dist >= 0.0) {
            return Err(bad_param("min_dist must be non-negative"));
        }
        if self.min_repeatability == 0 {
            return Err(bad_param("min_repeatability must be at least 1"));
        }
        for (name, r) in [
            ("area", self.area),
            ("circularity", self.circularity),
            ("convexity", self.convexity),
            ("inertia", self.inertia),
        ] {
            if let Some((lo, hi)) = r {
                if !(lo <= hi) {
                    return Err(bad_param(format!("{name} range is empty")));
                }
            }
        }
        Ok(())
    }
}

/// Shape descriptors of one connected region.
///
/// Circularity uses the traced polygon area against the convex-hull perimeter,
/// which keeps digitization staircase out of the perimeter term.
pub fn shape_of(contour: &super::Contour, pixels: &[(usize, usize)]) -> Option<Blob> {
    let hull = contour.hull();
    let hull_perimeter = crate::geometry::perimeter(&hull);
    let hull_area = crate::geometry::signed_area(&hull).abs();
    if contour.area <= 0.0 || hull_perimeter <= 0.0 || hull_area <= 0.0 || pixels.is_empty() {
        return None;
    }
    let n = pixels.len() as f64;
    let (mx, my) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
    let (cx, cy) = (mx / n, my / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let (a, b, c) = (sxx / n, syy / n, sxy / n);
    let root = (((a - b) / 2.0).powi(2) + c * c).sqrt();
    let (l1, l2) = ((a + b) / 2.0 + root, (a + b) / 2.0 - root);
    let inertia_ratio = if l1 <= 0.0 { 1.0 } else { (l2.max(0.0) / l1).sqrt() };
    Some(Blob {
        center: (cx, cy),
        area: n,
        circularity: 4.0 * std::f64::consts::PI * contour.area / (hull_perimeter * hull_perimeter),
        convexity: (contour.area / hull_area).min(1.0),
        inertia_ratio,
    })
}

struct Group {
    members: Vec<Blob>,
    last_level: usize,
}

impl Group {
    fn center(&self) -> (f64, f64) {
        let n = self.members.len() as f64;
        let (sx, sy) = self
            .members
            .iter()
            .fold((0.0, 0.0), |(a, b), m| (a + m.center.0, b + m.center.1));
        (sx / n, sy / n)
    }
}

fn candidates(mask: &ImageBuffer) -> OpResult<Vec<Blob>> {
    let cc = connected_components(mask, 8)?;
    let mut pixels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); cc.count() + 1];
    let (w, h) = mask.dims();
    for y in 0..h {
        for x in 0..w {
            let l = cc.get(x, y) as usize;
            if l != 0 {
                pixels[l].push((x, y));
            }
        }
    }
    let mut out = Vec::new();
    for c in find_contours(mask)?.iter().filter(|c| c.is_outer()) {
        let (px, py) = c.points[0];
        let label = cc.get(px as usize, py as usize) as usize;
        if let Some(b) = shape_of(c, &pixels[label]) {
            out.push(b);
        }
    }
    Ok(out)
}

fn within(v: f64, r: Option<(f64, f64)>) -> bool {
    r.map_or(true, |(lo, hi)| v >= lo && v <= hi)
}

pub fn blob_detect(img: &ImageBuffer, params: &BlobParams) -> OpResult<Vec<Blob>> {
    params.validate()?;
    if img.kind() == Kind::Hu {
        return Err(bad_param("blob detection expects a display-domain image"));
    }
    let (w, h) = img.dims();
    let mut groups: Vec<Group> = Vec::new();
    let mut level = 0usize;
    let mut t = params.min_threshold;
    while t < params.max_threshold {
        let mask = ImageBuffer::mask_from_fn(w, h, |x, y| {
            let v = img.get(x, y);
            if params.dark {
                v < t
            } else {
                v >= t
            }
        });
        for cand in candidates(&mask)? {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in groups.iter().enumerate() {
                if g.last_level == level {
                    continue;
                }
                let (gx, gy) = g.center();
                let d = ((gx - cand.center.0).powi(2) + (gy - cand.center.1).powi(2)).sqrt();
                if d < params.min_dist.max(f64::MIN_POSITIVE) && best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, gi));
                }
            }
            match best {
                Some((_, gi)) => {
                    groups[gi].members.push(cand);
                    groups[gi].last_level = level;
                }
                None => groups.push(Group {
                    members: vec![cand],
                    last_level: level,
                }),
            }
        }
        level += 1;
        t = params.min_threshold + level as f64 * params.threshold_step;
    }
    let mut blobs: Vec<Blob> = groups
        .into_iter()
        .filter(|g| g.members.len() >= params.min_repeatability)
        .map(|g| {
            let n = g.members.len() as f64;
            let mean = |f: fn(&Blob) -> f64| g.members.iter().map(f).sum::<f64>() / n;
            Blob {
                center: g.center(),
                area: mean(|b| b.area),
                circularity: mean(|b| b.circularity),
                convexity: mean(|b| b.convexity),
                inertia_ratio: mean(|b| b.inertia_ratio),
            }
        })
        .filter(|b| {
            within(b.area, params.area)
                && within(b.circularity, params.circularity)
                && within(b.convexity, params.convexity)
                && within(b.inertia_ratio, params.inertia)
        })
        .collect();
    blobs.sort_by(|a, b| {
        b.area
            .total_cmp(&a.area)
            .then(a.center.1.total_cmp(&b.center.1))
            .then(a.center.0.total_cmp(&b.center.0))
    });
    Ok(blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;

    fn scene(mask: &ImageBuffer) -> ImageBuffer {
        synth::paint(mask, Kind::Unit, 200.0, 0.0)
    }

    #[test]
    fn disk_gives_one_round_blob() {
        let img = scene(&synth::disk(64, 64, (30.0, 34.0), 10.0));
        let blobs = blob_detect(&img, &BlobParams::default()).unwrap();
        assert_eq!(blobs.len(), 1);
        let b = &blobs[0];
        assert!((b.center.0 - 30.0).abs() <= 1.0 && (b.center.1 - 34.0).abs() <= 1.0);
        assert!(b.circularity >= 0.9, "{}", b.circularity);
        assert!(b.convexity > 0.9, "{}", b.convexity);
        assert!(b.inertia_ratio > 0.95);
    }

    #[test]
    fn square_circularity_is_quarter_pi() {
        let img = scene(&synth::rect(40, 40, 10, 10, 12, 12));
        let all = blob_detect(&img, &BlobParams::default()).unwrap();
        assert_eq!(all.len(), 1);
        assert!((all[0].circularity - std::f64::consts::FRAC_PI_4).abs() < 0.02);
        let params = BlobParams {
            circularity: Some((0.9, f64::INFINITY)),
            ..BlobParams::default()
        };
        assert!(blob_detect(&img, &params).unwrap().is_empty());
    }

    #[test]
    fn blank_and_bad_params() {
        let img = ImageBuffer::filled(16, 16, Kind::Unit, 0.0);
        assert!(blob_detect(&img, &BlobParams::default()).unwrap().is_empty());
        let bad = BlobParams {
            min_threshold: 50.0,
            max_threshold: 50.0,
            ..BlobParams::default()
        };
        assert!(blob_detect(&img, &bad).is_err());
    }

    #[test]
    fn dark_polarity() {
        let img = synth::paint(&synth::disk(48, 48, (24.0, 24.0), 8.0), Kind::Unit, 0.0, 200.0);
        let params = BlobParams {
            dark: true,
            ..BlobParams::default()
        };
        let blobs = blob_detect(&img, &params).unwrap();
        assert_eq!(blobs.len(), 1);
        assert!((blobs[0].center.0 - 24.0).abs() <= 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn disk_center_tracks_translation(cx in 15.0f64..49.0, cy in 15.0f64..49.0, r in 6.0f64..12.0) {
            let img = scene(&synth::disk(64, 64, (cx, cy), r));
            let blobs = blob_detect(&img, &BlobParams::default()).unwrap();
            prop_assert_eq!(blobs.len(), 1);
            prop_assert!((blobs[0].center.0 - cx).abs() <= 1.0);
            prop_assert!((blobs[0].center.1 - cy).abs() <= 1.0);
        }
    }
}
