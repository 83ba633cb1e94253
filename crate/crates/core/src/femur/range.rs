//! Slice-range detection: lesser trochanter up to the top of the head.

use serde::{Deserialize, Serialize};

use super::head::{find_head, mask_disk};
use super::{isolate_bone, restrict_to_side, FemurError, FemurParams, Side};
use crate::geometry;
use crate::image::{ImageBuffer, FG};
use crate::regions::{connected_components, find_contours, Contour};

/// Detected landmarks as volume slice indices, ordered
/// `start <= lt_end <= gt_end <= stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRange {
    /// First slice where the shaft sprouts the lesser trochanter.
    pub start: usize,
    /// Last slice of the trochanter band.
    pub lt_end: usize,
    /// Last slice below the first head-sized circle.
    pub gt_end: usize,
    /// Last slice of the head.
    pub stop: usize,
    /// Shaft outline on `start`, used to seed the first segmentation.
    #[serde(skip)]
    pub start_outline: Vec<geometry::Point>,
}

impl SliceRange {
    pub fn initial_contour(&self) -> Contour {
        Contour::from_points(self.start_outline.clone())
    }

    pub fn len(&self) -> usize {
        self.stop - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Polygon area over convex-hull area of the component's outer border.
pub fn convexity(component: &ImageBuffer) -> Option<(f64, Contour)> {
    let c = find_contours(component).ok()?.into_iter().find(|c| c.is_outer())?;
    let hull_area = geometry::signed_area(&c.hull()).abs();
    (hull_area > 0.0).then(|| (c.area / hull_area, c))
}

fn overlap(a: &ImageBuffer, b: &ImageBuffer) -> usize {
    a.data().iter().zip(b.data()).filter(|(x, y)| **x == FG && **y == FG).count()
}

/// Scans `slices` (couch-removed HU) in ascending z.
///
/// Below the first head-sized circle the shaft component is tracked by
/// overlap; `start` is the first slice whose shaft loses convexity (below
/// `params.convexity_drop`) after having been convex, with the added bulk on
/// the medial side; `lt_end` is the last slice of that run. From the first
/// head circle upward the head is followed by Hough (gated on the previous
/// center) and, once circles become too small to be head-sized, by the bone
/// inside the previous head disk; `stop` is the last slice still holding
/// at least 20 px of it.
pub fn detect_slice_range(
    slices: &[ImageBuffer],
    col_spacing: f64,
    side: Side,
    params: &FemurParams,
) -> Result<SliceRange, FemurError> {
    params.validate()?;
    let bone_of = |i: usize| restrict_to_side(&isolate_bone(&slices[i], params.bone_hu), side);

    let mut shaft: Option<ImageBuffer> = None;
    let mut convex_centroid: Option<(f64, f64)> = None;
    let mut start: Option<(usize, Contour)> = None;
    let mut lt_end: Option<usize> = None;
    let mut first_head = None;

    for (i, slice) in slices.iter().enumerate() {
        let bone = bone_of(i);
        if let Some(c) = find_head(slice, &bone, col_spacing, params, None) {
            first_head = Some((i, c));
            break;
        }
        let cc = connected_components(&bone, 8)?;
        let pick = match &shaft {
            Some(prev) => cc
                .stats()
                .iter()
                .map(|s| (overlap(&cc.mask_of(s.label), prev), s.label))
                .filter(|&(o, _)| o > 0)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
                .map(|(_, l)| l),
            None => None,
        }
        .or_else(|| {
            cc.stats()
                .iter()
                .max_by(|a, b| a.area.cmp(&b.area).then(b.label.cmp(&a.label)))
                .map(|s| s.label)
        });
        let Some(label) = pick else {
            shaft = None;
            convex_centroid = None;
            continue;
        };
        let comp = cc.mask_of(label);
        let Some((conv, outline)) = convexity(&comp) else {
            continue;
        };
        let (centroid, _) = mask_disk(&comp).expect("component is non-empty");
        if conv >= params.convexity_drop {
            if start.is_some() && lt_end.is_none() {
                lt_end = Some(i - 1);
            }
            if start.is_none() {
                convex_centroid = Some(centroid);
            }
        } else if start.is_none() {
            if let Some(prev) = convex_centroid {
                if (centroid.0 - prev.0) * side.medial() > 0.0 {
                    start = Some((i, outline));
                }
            }
        }
        shaft = Some(comp);
    }

    let Some((start, outline)) = start else {
        return Err(FemurError::RangeNotFound("no lesser-trochanter protrusion on the shaft".into()));
    };
    let Some((h0, mut circle)) = first_head else {
        return Err(FemurError::RangeNotFound("no head-sized circle".into()));
    };
    let gt_end = h0.saturating_sub(1);
    let lt_end = lt_end.unwrap_or(gt_end).min(gt_end);

    let (mut center, mut radius) = (circle.center, circle.radius);
    let mut stop = h0;
    for (i, slice) in slices.iter().enumerate().skip(h0 + 1) {
        let bone = bone_of(i);
        if let Some(c) = find_head(slice, &bone, col_spacing, params, Some(center)) {
            circle = c;
            center = c.center;
            radius = c.radius;
            stop = i;
            continue;
        }
        let (w, h) = bone.dims();
        let within = ImageBuffer::mask_from_fn(w, h, |x, y| {
            bone.get(x, y) == FG && (x as f64 - center.0).hypot(y as f64 - center.1) <= radius + 1.0
        });
        if within.count_fg() < 20 {
            break;
        }
        let (c, r) = mask_disk(&within).expect("non-empty");
        center = c;
        radius = r;
        stop = i;
    }
    log::debug!("{} range: start {start}, lt_end {lt_end}, gt_end {gt_end}, stop {stop} (last circle r={})", side.name(), circle.radius);
    if start >= stop {
        return Err(FemurError::InvertedRange { start, stop });
    }
    Ok(SliceRange {
        start,
        lt_end: lt_end.max(start),
        gt_end: gt_end.max(start),
        stop,
        start_outline: outline.points,
    })
}
