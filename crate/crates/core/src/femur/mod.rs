//! Femoral-head delineation on pelvic CT volumes.
//!
//! Per volume: couch removal and bone isolation on every slice, detection of
//! the slice range (lesser trochanter up to the top of the head), then
//! per-slice segmentation in ascending z with each contour seeding the next.

mod bone;
mod head;
mod range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dicom::CtVolume;
use crate::error::OpError;
use crate::geometry::{self, Point};
use crate::image::{ImageBuffer, RgbImage, BONE_WINDOW};
use crate::regions::Contour;

pub use bone::{isolate_bone, remove_couch, remove_couch_with, restrict_to_side, AIR_HU, DEFAULT_AIR_THRESHOLD};
pub use head::{find_head, segment_femoral_head_slice, step_edges, HeadCircle};
pub use range::{convexity, detect_slice_range, SliceRange};

/// Patient side. Image x grows toward the patient's left, so `Left` is the
/// right half of the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Whether column `x` of a `width`-wide frame belongs to this side.
    pub fn contains(self, x: usize, width: usize) -> bool {
        match self {
            Side::Left => x >= width / 2,
            Side::Right => x < width - width / 2,
        }
    }

    /// Sign of the x direction pointing toward the midline.
    pub fn medial(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideSelection {
    Left,
    Right,
    Both,
}

impl SideSelection {
    pub fn sides(self) -> Vec<Side> {
        match self {
            SideSelection::Left => vec![Side::Left],
            SideSelection::Right => vec![Side::Right],
            SideSelection::Both => vec![Side::Left, Side::Right],
        }
    }
}

/// How the head marker is placed on each slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Hough circle center, falling back to the prior contour's centroid.
    HoughThenPrior,
    /// Prior contour centroid only (no Hough on in-range slices).
    PriorOnly,
}

/// Region labels of the review protocol. They run opposite to the usual
/// anatomical sense: proximal is the lesser-trochanter band, medial the neck,
/// distal the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Proximal,
    Medial,
    Distal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FemurParams {
    pub bone_hu: f64,
    pub air_hu: f64,
    /// Head radius search range in mm.
    pub head_r_range: (f64, f64),
    pub seed: SeedMode,
    pub side: SideSelection,
    /// Shaft convexity below which a slice counts as carrying the trochanter.
    pub convexity_drop: f64,
    /// Largest centroid jump (px) accepted between consecutive contours.
    pub max_shift_px: f64,
}

impl Default for FemurParams {
    fn default() -> Self {
        Self {
            bone_hu: 200.0,
            air_hu: DEFAULT_AIR_THRESHOLD,
            head_r_range: (15.0, 35.0),
            seed: SeedMode::HoughThenPrior,
            side: SideSelection::Left,
            convexity_drop: 0.92,
            max_shift_px: 10.0,
        }
    }
}

impl FemurParams {
    pub fn validate(&self) -> Result<(), FemurError> {
        let (lo, hi) = self.head_r_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(FemurError::BadParams(format!("head_r_range needs 0 < r_min < r_max, got ({lo}, {hi})")));
        }
        if !(self.bone_hu > -1000.0) || !self.bone_hu.is_finite() {
            return Err(FemurError::BadParams(format!("bone_hu must exceed -1000, got {}", self.bone_hu)));
        }
        if !(self.air_hu < self.bone_hu) {
            return Err(FemurError::BadParams(format!("air_hu {} must lie below bone_hu {}", self.air_hu, self.bone_hu)));
        }
        if !(self.convexity_drop > 0.0 && self.convexity_drop <= 1.0) {
            return Err(FemurError::BadParams("convexity_drop must lie in (0, 1]".into()));
        }
        if !(self.max_shift_px > 0.0) {
            return Err(FemurError::BadParams("max_shift_px must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemurError {
    #[error("slice has no non-air component")]
    EmptySlice,
    #[error("no bone on this side of the slice")]
    NoBone,
    #[error("neither a head circle nor a prior contour is available")]
    NoSeed,
    #[error("slice range not found: {0}")]
    RangeNotFound(String),
    #[error("detected start {start} is not below stop {stop}")]
    InvertedRange { start: usize, stop: usize },
    #[error("slice {index} outside range [{start}, {stop}]")]
    OutOfRange { index: usize, start: usize, stop: usize },
    #[error("more than 20% of in-range slices failed to seed (first at slice {0})")]
    PartialFailure(usize),
    #[error("contour point {0:?} outside the slice")]
    OutOfBounds(Point),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Op(#[from] OpError),
}

impl FemurError {
    pub fn name(&self) -> &'static str {
        match self {
            FemurError::EmptySlice => "EmptySlice",
            FemurError::NoBone => "NoBone",
            FemurError::NoSeed => "NoSeed",
            FemurError::RangeNotFound(_) => "RangeNotFound",
            FemurError::InvertedRange { .. } => "InvertedRange",
            FemurError::OutOfRange { .. } => "OutOfRange",
            FemurError::PartialFailure(_) => "PartialFailure",
            FemurError::OutOfBounds(_) => "OutOfBounds",
            FemurError::BadParams(_) => "BadParams",
            FemurError::Op(e) => e.name(),
        }
    }
}

/// proximal for `[start, lt_end]`, medial for `(lt_end, gt_end]`, distal for `(gt_end, stop]`.
pub fn classify_region(index: usize, range: (usize, usize), landmarks: (usize, usize)) -> Result<Region, FemurError> {
    let (start, stop) = range;
    let (lt_end, gt_end) = landmarks;
    if index < start || index > stop {
        return Err(FemurError::OutOfRange { index, start, stop });
    }
    if !(start <= lt_end && lt_end <= gt_end && gt_end <= stop) {
        return Err(FemurError::BadParams(format!(
            "landmarks ({lt_end}, {gt_end}) not ordered within [{start}, {stop}]"
        )));
    }
    Ok(if index <= lt_end {
        Region::Proximal
    } else if index <= gt_end {
        Region::Medial
    } else {
        Region::Distal
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelineatedSlice {
    pub index: usize,
    pub z_mm: f64,
    pub region: Region,
    pub points_px: Vec<[i32; 2]>,
    pub points_mm: Vec<[f64; 3]>,
}

impl DelineatedSlice {
    /// Records `contour` on volume slice `index` in pixel and patient coordinates.
    pub fn new(volume: &CtVolume, index: usize, region: Region, contour: &Contour) -> Self {
        Self {
            index,
            z_mm: volume.z(index),
            region,
            points_px: contour.points.iter().map(|&(x, y)| [x, y]).collect(),
            points_mm: contour
                .points
                .iter()
                .map(|&(x, y)| {
                    let (a, b, c) = volume.to_patient(index, x as f64, y as f64);
                    [a, b, c]
                })
                .collect(),
        }
    }

    pub fn contour(&self) -> Contour {
        Contour::from_points(self.points_px.iter().map(|p| (p[0], p[1])).collect())
    }
}

/// One side's contours over its detected slice range; serializes to the export schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delineation {
    pub v: u32,
    pub side: Side,
    pub volume_digest: String,
    /// Slice width and height in pixels.
    pub dims: [usize; 2],
    /// Row and column spacing in mm.
    pub pixel_spacing: [f64; 2],
    pub range: SliceRange,
    pub slices: Vec<DelineatedSlice>,
}

impl Delineation {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("delineation serializes")
    }

    pub fn slice(&self, index: usize) -> Option<&DelineatedSlice> {
        self.slices.iter().find(|s| s.index == index)
    }

    /// Filled mask for volume slice `index` (empty outside the range).
    pub fn mask(&self, index: usize, width: usize, height: usize) -> ImageBuffer {
        match self.slice(index) {
            Some(s) => s.contour().rasterize(width, height),
            None => ImageBuffer::empty_mask(width, height),
        }
    }
}

/// Couch-removed HU slices, computed once per volume and shared by both sides.
pub fn prepare_slices(volume: &CtVolume, params: &FemurParams) -> Result<Vec<ImageBuffer>, FemurError> {
    (0..volume.len())
        .into_par_iter()
        .map(|i| match remove_couch_with(volume.hu(i), params.air_hu) {
            Ok(s) => Ok(s),
            // slices beyond the body carry nothing; keep them as all-air
            Err(FemurError::EmptySlice) => {
                let (w, h) = volume.dims();
                Ok(ImageBuffer::filled(w, h, crate::image::Kind::Hu, AIR_HU))
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// Delineates every selected side. Sides run in parallel; each side's slices
/// are processed sequentially so each contour can seed the next.
pub fn delineate_femur(volume: &CtVolume, params: &FemurParams) -> Result<Vec<Delineation>, FemurError> {
    params.validate()?;
    let slices = prepare_slices(volume, params)?;
    let digest = volume.digest();
    params
        .side
        .sides()
        .into_par_iter()
        .map(|side| delineate_side(volume, &slices, &digest, side, params))
        .collect()
}

pub fn delineate_side(
    volume: &CtVolume,
    slices: &[ImageBuffer],
    volume_digest: &str,
    side: Side,
    params: &FemurParams,
) -> Result<Delineation, FemurError> {
    let range = detect_slice_range(slices, volume.pixel_spacing().1, side, params)?;
    let mut prior: Contour = range.initial_contour();
    let mut out = Vec::new();
    let mut failures = Vec::new();
    let in_range = range.stop - range.start + 1;
    for i in range.start..=range.stop {
        let contour = match segment_femoral_head_slice(&slices[i], volume.pixel_spacing().1, side, Some(&prior), params) {
            Ok(c) => c,
            Err(FemurError::NoSeed) | Err(FemurError::NoBone) => {
                log::warn!("{} slice {i}: no seed, carrying the previous contour", side.name());
                failures.push(i);
                prior.clone()
            }
            Err(e) => return Err(e),
        };
        let region = classify_region(i, (range.start, range.stop), (range.lt_end, range.gt_end))?;
        out.push(DelineatedSlice::new(volume, i, region, &contour));
        prior = contour;
    }
    if failures.len() * 5 > in_range {
        return Err(FemurError::PartialFailure(failures[0]));
    }
    Ok(Delineation {
        v: 1,
        side,
        volume_digest: volume_digest.to_string(),
        dims: [volume.dims().0, volume.dims().1],
        pixel_spacing: [volume.pixel_spacing().0, volume.pixel_spacing().1],
        range,
        slices: out,
    })
}

pub const GREEN: [u8; 3] = [0, 255, 0];

/// Windowed grayscale slice with each contour's closed polyline drawn in green.
pub fn overlay_contour(slice: &ImageBuffer, contours: &[Contour], window: (f64, f64)) -> Result<RgbImage, FemurError> {
    let (w, h) = slice.dims();
    for c in contours {
        if let Some(&p) = c
            .points
            .iter()
            .find(|&&(x, y)| x < 0 || y < 0 || x as usize >= w || y as usize >= h)
        {
            return Err(FemurError::OutOfBounds(p));
        }
    }
    let base = if slice.kind() == crate::image::Kind::Hu {
        slice.window_level(window.0, window.1)?
    } else {
        slice.clone()
    };
    let mut rgb = RgbImage::from_gray(&base);
    for c in contours {
        for (x, y) in polyline_pixels(&c.points) {
            rgb.set(x as usize, y as usize, GREEN);
        }
    }
    Ok(rgb)
}

/// Pixels of the closed polyline through `points`.
pub fn polyline_pixels(points: &[Point]) -> Vec<Point> {
    let n = points.len();
    let mut out = Vec::new();
    for i in 0..n {
        out.extend(geometry::line_points(points[i], points[(i + 1) % n]));
    }
    out
}

/// Default overlay window.
pub const OVERLAY_WINDOW: (f64, f64) = BONE_WINDOW;
