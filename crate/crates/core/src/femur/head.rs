//! Head circle detection and per-slice head/acetabulum separation.

use serde::{Deserialize, Serialize};

use super::{isolate_bone, restrict_to_side, FemurError, FemurParams, SeedMode, Side};
use crate::edges::{hough_circles, ring_offsets};
use crate::image::{ImageBuffer, Kind, FG};
use crate::morphology::{self, MorphOp, StructuringElement};
use crate::regions::{self, connected_components, distance_transform, find_contours, Contour, LabelMap};

/// HU difference between 4-neighbors that counts as a material boundary.
pub const STEP_HU: f64 = 150.0;
/// Minimum fraction of the ring offsets that must vote for a head circle.
const MIN_RING_SUPPORT: f64 = 0.55;
/// Minimum fraction of a candidate disk that is homogeneous bone.
const MIN_DISK_FILL: f64 = 0.85;
/// Growth allowance around the previous contour when no circle is found.
const PRIOR_MARGIN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadCircle {
    pub center: (f64, f64),
    pub radius: f64,
    /// Fraction of the ring that voted.
    pub support: f64,
}

/// Bone pixels that touch (4-neighborhood) a pixel differing by more than
/// [`STEP_HU`]: the outer bone boundary plus interfaces between bones of
/// different density. Frame edges count as boundaries.
pub fn step_edges(hu: &ImageBuffer, bone: &ImageBuffer) -> ImageBuffer {
    let (w, h) = hu.dims();
    ImageBuffer::mask_from_fn(w, h, |x, y| {
        if bone.get(x, y) != FG {
            return false;
        }
        let v = hu.get(x, y);
        let (xi, yi) = (x as isize, y as isize);
        [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
            let (nx, ny) = (xi + dx, yi + dy);
            !hu.in_bounds(nx, ny) || (hu.get(nx as usize, ny as usize) - v).abs() > STEP_HU
        })
    })
}

fn disk_pixels(w: usize, h: usize, c: (f64, f64), r: f64) -> impl Iterator<Item = (usize, usize)> {
    let x0 = (c.0 - r).floor().max(0.0) as usize;
    let y0 = (c.1 - r).floor().max(0.0) as usize;
    let x1 = ((c.0 + r).ceil() as usize).min(w.saturating_sub(1));
    let y1 = ((c.1 + r).ceil() as usize).min(h.saturating_sub(1));
    (y0..=y1)
        .flat_map(move |y| (x0..=x1).map(move |x| (x, y)))
        .filter(move |&(x, y)| (x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2) <= r * r)
}

fn disk_mask(w: usize, h: usize, c: (f64, f64), r: f64) -> ImageBuffer {
    let mut m = ImageBuffer::empty_mask(w, h);
    for (x, y) in disk_pixels(w, h, c, r) {
        m.set(x, y, FG);
    }
    m
}

/// Fraction of the disk that is bone within [`STEP_HU`] of the disk's median bone HU.
fn homogeneous_fill(hu: &ImageBuffer, bone: &ImageBuffer, c: (f64, f64), r: f64) -> f64 {
    let (w, h) = hu.dims();
    let mut total = 0usize;
    let mut values = Vec::new();
    for (x, y) in disk_pixels(w, h, c, r) {
        total += 1;
        if bone.get(x, y) == FG {
            values.push(hu.get(x, y));
        }
    }
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let median = values[values.len() / 2];
    let ok = values.iter().filter(|&&v| (v - median).abs() <= STEP_HU).count();
    ok as f64 / total as f64
}

/// Best head-sized circle in the side's bone mask. Each radius is searched
/// separately so concentric structures (head inside an acetabular ring) do
/// not suppress each other; a hit must be well supported around its ring and
/// cover homogeneous bone. With `near`, hits farther than `max_shift_px` from
/// it are ignored.
pub fn find_head(
    hu: &ImageBuffer,
    bone: &ImageBuffer,
    col_spacing: f64,
    params: &FemurParams,
    near: Option<(f64, f64)>,
) -> Option<HeadCircle> {
    let r_lo = (params.head_r_range.0 / col_spacing).ceil().max(1.0) as usize;
    let r_hi = (params.head_r_range.1 / col_spacing).floor() as usize;
    if r_hi < r_lo || bone.count_fg() == 0 {
        return None;
    }
    let edges = step_edges(hu, bone);
    let mut best: Option<HeadCircle> = None;
    for r in r_lo..=r_hi {
        let ring = ring_offsets(r).len() as f64;
        let threshold = (MIN_RING_SUPPORT * ring).ceil() as u32;
        let hits = hough_circles(&edges, r, r, threshold).expect("binary edges, valid radii");
        for hit in hits {
            let center = (hit.center.0 as f64, hit.center.1 as f64);
            if let Some(p) = near {
                if (center.0 - p.0).hypot(center.1 - p.1) > params.max_shift_px {
                    continue;
                }
            }
            let support = hit.votes as f64 / ring;
            if homogeneous_fill(hu, bone, center, r as f64) < MIN_DISK_FILL {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => support > b.support || (support == b.support && (r as f64) > b.radius),
            };
            if better {
                best = Some(HeadCircle {
                    center,
                    radius: r as f64,
                    support,
                });
            }
        }
    }
    best
}

/// Centroid and equivalent-disk radius of a filled contour.
pub(crate) fn contour_disk(c: &Contour, w: usize, h: usize) -> Option<((f64, f64), f64)> {
    let m = c.rasterize(w, h);
    mask_disk(&m)
}

pub(crate) fn mask_disk(m: &ImageBuffer) -> Option<((f64, f64), f64)> {
    let (w, h) = m.dims();
    let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if m.get(x, y) == FG {
                n += 1;
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    (n > 0).then(|| ((sx / n as f64, sy / n as f64), (n as f64 / std::f64::consts::PI).sqrt()))
}

fn largest_outer_contour(mask: &ImageBuffer) -> Result<Option<Contour>, FemurError> {
    let cc = connected_components(mask, 8)?;
    let Some(best) = cc.stats().iter().max_by(|a, b| a.area.cmp(&b.area).then(b.label.cmp(&a.label))) else {
        return Ok(None);
    };
    let comp = cc.mask_of(best.label);
    Ok(find_contours(&comp)?.into_iter().find(|c| c.is_outer()))
}

fn dilate(mask: &ImageBuffer, r: usize) -> ImageBuffer {
    let se = StructuringElement::ellipse(2 * r + 1);
    morphology::morph(mask, MorphOp::Dilate, &se, 1).expect("binary input")
}

/// Separates the femoral head (or, lower down, the femur section) from
/// neighbouring bone on one slice.
///
/// The side's bone mask is flooded from two markers over an inverted distance
/// relief in which density interfaces count as boundaries: a core around the
/// head circle center (or the prior contour's centroid) and everything
/// outside the expected femur extent. The head basin is closed and its outer
/// border returned. When the result drifts more than `max_shift_px` from the
/// prior it is replaced by the bone connected to the prior's core.
pub fn segment_femoral_head_slice(
    slice: &ImageBuffer,
    col_spacing: f64,
    side: Side,
    prior: Option<&Contour>,
    params: &FemurParams,
) -> Result<Contour, FemurError> {
    let (w, h) = slice.dims();
    let bone = restrict_to_side(&isolate_bone(slice, params.bone_hu), side);
    if bone.count_fg() == 0 {
        return Err(FemurError::NoBone);
    }
    let prior_info = prior.and_then(|c| {
        let m = c.rasterize(w, h);
        mask_disk(&m).map(|(center, r)| (m, center, r))
    });
    let circle = match params.seed {
        SeedMode::HoughThenPrior => find_head(slice, &bone, col_spacing, params, prior_info.as_ref().map(|p| p.1)),
        SeedMode::PriorOnly => None,
    };
    let (core, extent) = match (&circle, &prior_info) {
        (Some(c), _) => (
            disk_mask(w, h, c.center, (0.5 * c.radius).max(2.0)),
            disk_mask(w, h, c.center, c.radius + 2.0),
        ),
        (None, Some((m, center, r))) => {
            let core = disk_mask(w, h, *center, (0.5 * r).max(2.0));
            (core, dilate(m, PRIOR_MARGIN))
        }
        (None, None) => return Err(FemurError::NoSeed),
    };
    let mut labels = vec![0u32; w * h];
    let mut seeded = false;
    for i in 0..w * h {
        if bone.data()[i] != FG {
            continue;
        }
        if core.data()[i] == FG {
            labels[i] = 1;
            seeded = true;
        } else if extent.data()[i] != FG {
            labels[i] = 2;
        }
    }
    if !seeded {
        return Err(FemurError::NoSeed);
    }
    let markers = LabelMap::from_labels(w, h, labels);

    // density interfaces act like background so the relief peaks there
    let inner = ImageBuffer::mask_from_fn(w, h, |x, y| bone.get(x, y) == FG && !is_interface(slice, &bone, x, y));
    let dist = distance_transform(&inner);
    let peak = dist.data().iter().cloned().fold(0.0, f64::max);
    let relief = dist.map(Kind::Unit, |d| peak - d);
    let flooded = regions::watershed_masked(&relief, &markers, Some(&bone))?;
    let head = flooded.mask_of(1);
    let closed = morphology::morph(&head, MorphOp::Close, &StructuringElement::ellipse(3), 1)?;
    let mut contour = largest_outer_contour(&closed)?.ok_or(FemurError::NoBone)?;

    if let Some((prior_mask, prior_center, prior_r)) = &prior_info {
        let (center, _) = contour_disk(&contour, w, h).ok_or(FemurError::NoBone)?;
        if (center.0 - prior_center.0).hypot(center.1 - prior_center.1) > params.max_shift_px {
            log::debug!("contour drifted from prior; using prior-guided fill");
            let window = dilate(prior_mask, PRIOR_MARGIN);
            let allowed = crate::synth::intersection(&bone, &window);
            let seed_core = disk_mask(w, h, *prior_center, (0.5 * prior_r).max(2.0));
            let cc = connected_components(&allowed, 8)?;
            let mut keep = vec![false; cc.count() + 1];
            for (i, &l) in cc.labels().iter().enumerate() {
                if l != 0 && seed_core.data()[i] == FG {
                    keep[l as usize] = true;
                }
            }
            let filled = ImageBuffer::mask_from_fn(w, h, |x, y| keep[cc.get(x, y) as usize]);
            contour = largest_outer_contour(&filled)?.ok_or(FemurError::NoSeed)?;
        }
    }
    if contour.area < 20.0 {
        return Err(FemurError::NoBone);
    }
    Ok(contour)
}

/// True on bone pixels next to other bone of a clearly different density.
fn is_interface(hu: &ImageBuffer, bone: &ImageBuffer, x: usize, y: usize) -> bool {
    let v = hu.get(x, y);
    let (xi, yi) = (x as isize, y as isize);
    [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dx, dy)| {
        let (nx, ny) = (xi + dx, yi + dy);
        hu.in_bounds(nx, ny)
            && bone.get(nx as usize, ny as usize) == FG
            && (hu.get(nx as usize, ny as usize) - v).abs() > STEP_HU
    })
}
