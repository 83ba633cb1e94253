use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest as _, Sha256};

use super::{parse_dicom_file, DicomError, ParsedSlice, SliceMeta};
use crate::image::ImageBuffer;

/// Calibrated slices ordered by ascending z.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    pub slices: Vec<(SliceMeta, ImageBuffer)>,
    /// Uniform z gap between consecutive slices, mm.
    pub slice_thickness: f64,
}

impl CtVolume {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// (width, height) of every slice.
    pub fn dims(&self) -> (usize, usize) {
        let m = &self.slices[0].0;
        (m.cols, m.rows)
    }

    /// (row spacing, column spacing) in mm.
    pub fn pixel_spacing(&self) -> (f64, f64) {
        self.slices[0].0.pixel_spacing
    }

    pub fn hu(&self, i: usize) -> &ImageBuffer {
        &self.slices[i].1
    }

    pub fn meta(&self, i: usize) -> &SliceMeta {
        &self.slices[i].0
    }

    pub fn z(&self, i: usize) -> f64 {
        self.slices[i].0.image_position.2
    }

    /// Content digest over slice geometry and HU samples.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (meta, img) in &self.slices {
            let (x, y, z) = meta.image_position;
            for v in [x, y, z, meta.pixel_spacing.0, meta.pixel_spacing.1] {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update(img.digest().as_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    /// Pixel (x, y) on slice `i` to patient coordinates in mm (axial slices,
    /// identity orientation).
    pub fn to_patient(&self, i: usize, x: f64, y: f64) -> (f64, f64, f64) {
        let m = &self.slices[i].0;
        let (px, py, pz) = m.image_position;
        (px + x * m.pixel_spacing.1, py + y * m.pixel_spacing.0, pz)
    }
}

/// Sorts by z, checks shared geometry and uniform spacing, and calibrates to HU.
pub fn assemble_series(files: Vec<ParsedSlice>) -> Result<CtVolume, DicomError> {
    if files.len() < 2 {
        return Err(DicomError::TooFewSlices(files.len()));
    }
    let first = files[0].meta.clone();
    for f in &files[1..] {
        let m = &f.meta;
        if (m.rows, m.cols) != (first.rows, first.cols) {
            return Err(DicomError::InconsistentGeometry(format!(
                "{}x{} vs {}x{}",
                m.cols, m.rows, first.cols, first.rows
            )));
        }
        if m.pixel_spacing != first.pixel_spacing {
            return Err(DicomError::InconsistentGeometry(format!(
                "pixel spacing {:?} vs {:?}",
                m.pixel_spacing, first.pixel_spacing
            )));
        }
    }
    let mut files = files;
    files.sort_by(|a, b| a.meta.image_position.2.total_cmp(&b.meta.image_position.2));
    let zs: Vec<f64> = files.iter().map(|f| f.meta.image_position.2).collect();
    let gaps: Vec<f64> = zs.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(i) = gaps.iter().position(|&g| g.abs() <= 1e-6) {
        return Err(DicomError::DuplicateLocation(zs[i]));
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    for (i, g) in gaps.iter().enumerate() {
        if (g - mean).abs() > 0.01 * mean {
            return Err(DicomError::NonUniformSpacing(format!(
                "gap {g} mm between z = {} and {} deviates from mean {mean} mm",
                zs[i],
                zs[i + 1]
            )));
        }
    }
    let slices = files
        .into_iter()
        .map(|f| {
            let hu = f.to_hu();
            (f.meta, hu)
        })
        .collect();
    Ok(CtVolume {
        slices,
        slice_thickness: mean,
    })
}

fn is_candidate(p: &Path) -> bool {
    p.is_file()
        && match p.extension() {
            None => true,
            Some(e) => e.eq_ignore_ascii_case("dcm"),
        }
}

/// Parses every `.dcm` (or extension-less) file in `dir` in parallel and assembles them.
pub fn read_series_dir(dir: &Path) -> Result<CtVolume, DicomError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DicomError::Io(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_candidate(p))
        .collect();
    paths.sort();
    let parsed: Result<Vec<ParsedSlice>, DicomError> = paths
        .par_iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| DicomError::Io(format!("{}: {e}", p.display())))?;
            parse_dicom_file(&bytes)
        })
        .collect();
    assemble_series(parsed?)
}
