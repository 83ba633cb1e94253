//! Couch removal and bone isolation on calibrated HU slices.

use super::FemurError;
use crate::image::{ImageBuffer, Kind, FG};
use crate::morphology::{self, MorphOp, StructuringElement};
use crate::regions::{connected_components, drop_small_components};

pub const AIR_HU: f64 = -1000.0;
pub const DEFAULT_AIR_THRESHOLD: f64 = -500.0;
pub const MIN_BONE_COMPONENT: usize = 20;

pub fn remove_couch(slice: &ImageBuffer) -> Result<ImageBuffer, FemurError> {
    remove_couch_with(slice, DEFAULT_AIR_THRESHOLD)
}

/// Keeps the largest non-air component (8-connected, HU > `air_hu`) whose
/// centroid lies in the central 60% of the frame; everything else becomes air.
pub fn remove_couch_with(slice: &ImageBuffer, air_hu: f64) -> Result<ImageBuffer, FemurError> {
    let (w, h) = slice.dims();
    let body = ImageBuffer::mask_from_fn(w, h, |x, y| slice.get(x, y) > air_hu);
    let labels = connected_components(&body, 8)?;
    let (lo_x, hi_x) = (0.2 * w as f64, 0.8 * w as f64);
    let (lo_y, hi_y) = (0.2 * h as f64, 0.8 * h as f64);
    let keep = labels
        .stats()
        .iter()
        .filter(|s| {
            let (cx, cy) = s.centroid;
            cx >= lo_x && cx <= hi_x && cy >= lo_y && cy <= hi_y
        })
        // ties go to the lower label, i.e. the first in raster order
        .max_by(|a, b| a.area.cmp(&b.area).then(b.label.cmp(&a.label)))
        .map(|s| s.label)
        .ok_or(FemurError::EmptySlice)?;
    let kind = slice.kind();
    let mut out = slice.clone();
    for (o, &l) in out.data_mut().iter_mut().zip(labels.labels()) {
        if l != keep {
            *o = if kind == Kind::Hu { AIR_HU } else { 0.0 };
        }
    }
    Ok(out)
}

/// HU ≥ `bone_hu`, closed with a 3×3 ellipse, components under 20 px dropped.
pub fn isolate_bone(slice: &ImageBuffer, bone_hu: f64) -> ImageBuffer {
    let (w, h) = slice.dims();
    let raw = ImageBuffer::mask_from_fn(w, h, |x, y| slice.get(x, y) >= bone_hu);
    let se = StructuringElement::ellipse(3);
    let closed = morphology::morph(&raw, MorphOp::Close, &se, 1).expect("binary input");
    drop_small_components(&closed, MIN_BONE_COMPONENT, 8).expect("binary input")
}

/// Bone mask pixels restricted to one side of the vertical midline.
pub fn restrict_to_side(mask: &ImageBuffer, side: super::Side) -> ImageBuffer {
    let (w, h) = mask.dims();
    ImageBuffer::mask_from_fn(w, h, |x, y| side.contains(x, w) && mask.get(x, y) == FG)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn hu(mask: &ImageBuffer, fg: f64) -> ImageBuffer {
        synth::paint(mask, Kind::Hu, fg, AIR_HU)
    }

    #[test]
    fn body_only_unchanged() {
        let body = hu(&synth::disk(64, 64, (32.0, 32.0), 20.0), 0.0);
        assert_eq!(remove_couch(&body).unwrap(), body);
    }

    #[test]
    fn all_air_is_empty_slice() {
        let air = ImageBuffer::filled(16, 16, Kind::Hu, AIR_HU);
        assert_eq!(remove_couch(&air).unwrap_err(), FemurError::EmptySlice);
    }

    #[test]
    fn bone_disks() {
        let tissue = ImageBuffer::filled(64, 64, Kind::Hu, 0.0);
        assert_eq!(isolate_bone(&tissue, 200.0).count_fg(), 0);
        let two = synth::union(&synth::disk(64, 64, (16.0, 32.0), 6.0), &synth::disk(64, 64, (46.0, 32.0), 6.0));
        let img = synth::paint(&two, Kind::Hu, 700.0, 0.0);
        let bone = isolate_bone(&img, 200.0);
        assert_eq!(connected_components(&bone, 8).unwrap().count(), 2);
    }
}
