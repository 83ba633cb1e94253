//! On-disk artifact formats shared by the CLI and the HTTP API.

use serde::{Deserialize, Serialize};

use femseg_core::evaluation::{dice, hausdorff_points, mean_surface_distance, volume_dice, EvalError};
use femseg_core::femur::{Delineation, Side};
use femseg_core::geometry::Point;
use femseg_core::image::ImageBuffer;

/// A delineation export: one entry per processed side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelineationSet {
    pub v: u32,
    pub delineations: Vec<Delineation>,
}

impl DelineationSet {
    pub fn new(delineations: Vec<Delineation>) -> Self {
        Self { v: 1, delineations }
    }

    pub fn side(&self, side: Side) -> Option<&Delineation> {
        self.delineations.iter().find(|d| d.side == side)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("delineation set serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub index: usize,
    pub dice: f64,
    /// Absent when either side has no contour on this slice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hausdorff_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideScore {
    pub side: Side,
    /// Volume-weighted over every slice either delineation covers.
    pub dice: f64,
    pub jaccard: f64,
    /// Worst slice.
    pub hausdorff_mm: f64,
    /// Mean over slices contoured by both.
    pub mean_surface_distance_mm: f64,
    pub slices: Vec<SliceScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub v: u32,
    pub sides: Vec<SideScore>,
}

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("no {0} delineation in the prediction")]
    MissingSide(&'static str),
    #[error("slice dims differ: {0:?} vs {1:?}")]
    Dims([usize; 2], [usize; 2]),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn points(d: &Delineation, i: usize) -> Option<Vec<Point>> {
    d.slice(i).map(|s| s.contour().points)
}

/// Scores `pred` against `truth`, side by side, on the truth's sides.
pub fn compare_sets(pred: &DelineationSet, truth: &DelineationSet) -> Result<EvalReport, CompareError> {
    let mut sides = Vec::new();
    for t in &truth.delineations {
        let p = pred.side(t.side).ok_or(CompareError::MissingSide(t.side.name()))?;
        if p.dims != t.dims {
            return Err(CompareError::Dims(p.dims, t.dims));
        }
        let [w, h] = t.dims;
        let spacing = t.pixel_spacing[1];
        let mut indices: Vec<usize> = p.slices.iter().chain(&t.slices).map(|s| s.index).collect();
        indices.sort_unstable();
        indices.dedup();

        let masks: Vec<(ImageBuffer, ImageBuffer)> = indices.iter().map(|&i| (p.mask(i, w, h), t.mask(i, w, h))).collect();
        let mut scores = Vec::new();
        let (mut worst, mut msd_sum, mut msd_n) = (0.0f64, 0.0, 0usize);
        for (&i, (a, b)) in indices.iter().zip(&masks) {
            let hd = match (points(p, i), points(t, i)) {
                (Some(pa), Some(pb)) => {
                    let hd = hausdorff_points(&pa, &pb, spacing)?;
                    msd_sum += mean_surface_distance(&pa, &pb, spacing)?;
                    msd_n += 1;
                    worst = worst.max(hd);
                    Some(hd)
                }
                _ => None,
            };
            scores.push(SliceScore {
                index: i,
                dice: dice(a, b)?,
                hausdorff_mm: hd,
            });
        }
        let vd = volume_dice(masks.iter().map(|(a, b)| (a, b)))?;
        let (inter, total) = masks.iter().fold((0usize, 0usize), |(i, u), (a, b)| {
            let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x > 0.0 && **y > 0.0).count();
            (i + both, u + a.count_fg() + b.count_fg() - both)
        });
        let vj = if total == 0 { 1.0 } else { inter as f64 / total as f64 };
        sides.push(SideScore {
            side: t.side,
            dice: vd,
            jaccard: vj,
            hausdorff_mm: worst,
            mean_surface_distance_mm: if msd_n == 0 { 0.0 } else { msd_sum / msd_n as f64 },
            slices: scores,
        });
    }
    Ok(EvalReport { v: 1, sides })
}
