//! Procedural hip phantom with known ground truth.
//!
//! Axial slices through a soft-tissue body ellipse resting on a curved couch,
//! with two mirror-image femurs. Each femur is a vertical shaft cylinder, a
//! lesser-trochanter bump on its medial side over a band of slices, and a head
//! sphere centered on the shaft axis where the shaft ends. A spherical-zone
//! shell of denser bone (the acetabulum) surrounds the head over part of its
//! height, separated from it by `shell_gap` mm (0 = touching).
//!
//! Image x grows toward the patient's left, so the left femur sits on the
//! right half of the frame.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dicom::{assemble_series, write_dicom, CtVolume, ParsedSlice, SliceMeta, TransferSyntax};
use crate::femur::{classify_region, DelineatedSlice, Delineation, Side, SliceRange};
use crate::regions::find_contours;
use crate::image::{ImageBuffer, Kind};

pub const TISSUE_HU: f64 = 0.0;
pub const COUCH_HU: f64 = 100.0;
pub const FEMUR_HU: f64 = 700.0;
pub const SHELL_HU: f64 = 1100.0;
pub const AIR_HU: f64 = -1000.0;
const RESCALE_INTERCEPT: f64 = -1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    /// Number of slices emitted, starting at `first_slice` of the full model.
    pub slices: usize,
    pub first_slice: usize,
    /// Square in-plane pixel size, mm.
    pub pixel_spacing: f64,
    /// Distance between slice centers, mm.
    pub slice_gap: f64,
    /// Femur axis distance from the midline, mm.
    pub femur_offset: f64,
    /// Femur axis row position, mm from the top edge.
    pub femur_y: f64,
    pub shaft_radius: f64,
    pub head_radius: f64,
    /// Model slice index through the head center (the equator).
    pub head_center_slice: usize,
    /// Inclusive model slice band carrying the lesser-trochanter bump.
    pub bump_slices: (usize, usize),
    pub bump_radius: f64,
    /// Bump center distance from the shaft axis, mm.
    pub bump_offset: f64,
    pub shell_gap: f64,
    pub shell_thickness: f64,
    /// Inclusive model slice band carrying the acetabular shell.
    pub shell_slices: (usize, usize),
    /// Uniform noise amplitude, HU.
    pub noise_hu: f64,
    pub seed: u64,
    pub couch: bool,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            slices: 60,
            first_slice: 0,
            pixel_spacing: 1.0,
            slice_gap: 2.0,
            femur_offset: 64.0,
            femur_y: 120.0,
            shaft_radius: 12.0,
            head_radius: 22.0,
            head_center_slice: 40,
            bump_slices: (14, 19),
            bump_radius: 7.0,
            bump_offset: 18.0,
            shell_gap: 3.0,
            shell_thickness: 5.0,
            shell_slices: (36, 48),
            noise_hu: 15.0,
            seed: 7,
            couch: true,
        }
    }
}

/// Ground-truth landmarks for one side, as indices into the emitted volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideTruth {
    pub side: Side,
    /// First slice with the trochanter bump.
    pub start: Option<usize>,
    /// Last slice with the trochanter bump.
    pub lt_end: Option<usize>,
    /// Last slice below the first head-sized section.
    pub gt_end: Option<usize>,
    /// Last slice with a head section of at least 20 px.
    pub stop: Option<usize>,
    pub equator: Option<usize>,
    /// Femur axis in pixel coordinates.
    pub axis_px: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub v: u32,
    pub spec: PhantomSpec,
    pub sides: Vec<SideTruth>,
}

impl PhantomTruth {
    pub fn side(&self, side: Side) -> &SideTruth {
        self.sides.iter().find(|s| s.side == side).expect("both sides recorded")
    }
}

/// Smallest head section (mm) that still counts as head-sized.
pub const HEAD_SIZED_MM: f64 = 15.0;

impl PhantomSpec {
    fn px(&self, mm: f64) -> f64 {
        mm / self.pixel_spacing
    }

    /// Femur axis (x, y) in pixel coordinates; mirror images about the midline.
    pub fn axis(&self, side: Side) -> (f64, f64) {
        let mid = (self.width as f64 - 1.0) / 2.0;
        let dx = self.px(self.femur_offset);
        let x = match side {
            Side::Left => mid + dx,
            Side::Right => mid - dx,
        };
        (x, self.px(self.femur_y))
    }

    /// Signed z of model slice `k` relative to the head center, mm.
    fn dz(&self, k: usize) -> f64 {
        (k as f64 - self.head_center_slice as f64) * self.slice_gap
    }

    /// Head section radius on model slice `k`, mm (0 when the plane misses the sphere).
    pub fn head_section_mm(&self, k: usize) -> f64 {
        let dz = self.dz(k);
        (self.head_radius.powi(2) - dz * dz).max(0.0).sqrt()
    }

    fn inside_femur(&self, side: Side, k: usize, x: f64, y: f64) -> bool {
        let (cx, cy) = self.axis(side);
        let d2 = (x - cx).powi(2) + (y - cy).powi(2);
        if k <= self.head_center_slice && d2 <= self.px(self.shaft_radius).powi(2) {
            return true;
        }
        let r = self.px(self.head_section_mm(k));
        if r > 0.0 && d2 <= r * r {
            return true;
        }
        if (self.bump_slices.0..=self.bump_slices.1).contains(&k) {
            let bx = cx + side.medial() * self.px(self.bump_offset);
            if (x - bx).powi(2) + (y - cy).powi(2) <= self.px(self.bump_radius).powi(2) {
                return true;
            }
        }
        false
    }

    fn inside_shell(&self, side: Side, k: usize, x: f64, y: f64) -> bool {
        if !(self.shell_slices.0..=self.shell_slices.1).contains(&k) {
            return false;
        }
        let (cx, cy) = self.axis(side);
        let d2 = self.pixel_spacing.powi(2) * ((x - cx).powi(2) + (y - cy).powi(2));
        let dz2 = self.dz(k).powi(2);
        let inner = self.head_radius + self.shell_gap;
        let outer = inner + self.shell_thickness;
        let r3 = d2 + dz2;
        r3 > inner * inner && r3 <= outer * outer
    }

    fn inside_body(&self, x: f64, y: f64) -> bool {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, self.height as f64 / 2.0);
        let (a, b) = (0.44 * self.width as f64, 0.3125 * self.height as f64);
        ((x - cx) / a).powi(2) + ((y - cy) / b).powi(2) <= 1.0
    }

    fn inside_couch(&self, x: f64, y: f64) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        let (cx, cy) = ((w - 1.0) / 2.0, 2.2 * h);
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let inner = 2.2 * h - 0.87 * h;
        (x - cx).abs() <= 0.44 * w && d >= inner && d <= inner + 0.03 * h && y < h - 2.0
    }

    /// Noise-free HU at pixel (x, y) of model slice `k`.
    pub fn hu_at(&self, k: usize, x: usize, y: usize) -> f64 {
        let (xf, yf) = (x as f64, y as f64);
        for side in [Side::Left, Side::Right] {
            if self.inside_shell(side, k, xf, yf) {
                return SHELL_HU;
            }
            if self.inside_femur(side, k, xf, yf) {
                return FEMUR_HU;
            }
        }
        if self.inside_body(xf, yf) {
            TISSUE_HU
        } else if self.couch && self.inside_couch(xf, yf) {
            COUCH_HU
        } else {
            AIR_HU
        }
    }

    /// Ground-truth femur section for emitted slice `i`.
    pub fn femur_mask(&self, side: Side, i: usize) -> ImageBuffer {
        let k = self.first_slice + i;
        ImageBuffer::mask_from_fn(self.width, self.height, |x, y| {
            self.inside_femur(side, k, x as f64, y as f64)
        })
    }

    /// Ground-truth femur within the truth range `[start, stop]`, empty elsewhere.
    pub fn truth_mask(&self, truth: &SideTruth, i: usize) -> ImageBuffer {
        match (truth.start, truth.stop) {
            (Some(a), Some(b)) if (a..=b).contains(&i) => self.femur_mask(truth.side, i),
            _ => ImageBuffer::empty_mask(self.width, self.height),
        }
    }

    pub fn truth(&self) -> PhantomTruth {
        let n = self.slices;
        let to_local = |k: usize| k.checked_sub(self.first_slice).filter(|&i| i < n);
        let sides = [Side::Left, Side::Right]
            .into_iter()
            .map(|side| {
                let start = to_local(self.bump_slices.0);
                let lt_end = to_local(self.bump_slices.1);
                let head_sized: Vec<usize> = (0..n)
                    .filter(|&i| self.head_section_mm(self.first_slice + i) >= HEAD_SIZED_MM)
                    .collect();
                let gt_end = head_sized.first().and_then(|&i| i.checked_sub(1));
                let stop = (0..n).rev().find(|&i| {
                    let k = self.first_slice + i;
                    k >= self.head_center_slice && self.femur_mask(side, i).count_fg() >= 20
                });
                SideTruth {
                    side,
                    start,
                    lt_end,
                    gt_end,
                    stop,
                    equator: to_local(self.head_center_slice),
                    axis_px: self.axis(side),
                }
            })
            .collect();
        PhantomTruth {
            v: 1,
            spec: self.clone(),
            sides,
        }
    }

    /// Ground truth in the delineation export schema, one entry per side with a
    /// complete truth range. Contours are the outer borders of the truth masks.
    pub fn truth_delineations(&self, volume: &CtVolume) -> Vec<Delineation> {
        let truth = self.truth();
        let digest = volume.digest();
        truth
            .sides
            .iter()
            .filter_map(|t| {
                let range = SliceRange {
                    start: t.start?,
                    lt_end: t.lt_end?,
                    gt_end: t.gt_end?,
                    stop: t.stop?,
                    start_outline: Vec::new(),
                };
                let slices = (range.start..=range.stop)
                    .filter_map(|i| {
                        let c = find_contours(&self.femur_mask(t.side, i)).ok()?.into_iter().find(|c| c.is_outer())?;
                        let region = classify_region(i, (range.start, range.stop), (range.lt_end, range.gt_end)).ok()?;
                        Some(DelineatedSlice::new(volume, i, region, &c))
                    })
                    .collect();
                Some(Delineation {
                    v: 1,
                    side: t.side,
                    volume_digest: digest.clone(),
                    dims: [self.width, self.height],
                    pixel_spacing: [self.pixel_spacing, self.pixel_spacing],
                    range,
                    slices,
                })
            })
            .collect()
    }

    fn slice_meta(&self, i: usize) -> SliceMeta {
        let z = (self.first_slice + i) as f64 * self.slice_gap;
        SliceMeta {
            rows: self.height,
            cols: self.width,
            pixel_spacing: (self.pixel_spacing, self.pixel_spacing),
            slice_location: z,
            image_position: (0.0, 0.0, z),
            rescale_slope: 1.0,
            rescale_intercept: RESCALE_INTERCEPT,
            bits_allocated: 16,
            bits_stored: 12,
            pixel_signed: false,
            slice_thickness: Some(self.slice_gap),
            rescale_defaulted: false,
        }
    }

    /// Stored (pre-rescale) samples of emitted slice `i`, noise included.
    pub fn raw_slice(&self, i: usize) -> Vec<i32> {
        let k = self.first_slice + i;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let max = 4095.0;
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let noise = if self.noise_hu > 0.0 {
                    rng.gen_range(-self.noise_hu..=self.noise_hu)
                } else {
                    0.0
                };
                let hu = self.hu_at(k, x, y) + noise;
                out.push((hu - RESCALE_INTERCEPT).round().clamp(0.0, max) as i32);
            }
        }
        out
    }

    pub fn volume(&self) -> CtVolume {
        let slices = (0..self.slices)
            .map(|i| {
                let raw = self.raw_slice(i);
                let data = raw.iter().map(|&v| v as f64).collect();
                ParsedSlice {
                    meta: self.slice_meta(i),
                    raw: ImageBuffer::new(self.width, self.height, Kind::Unit, data).expect("dims"),
                }
            })
            .collect();
        assemble_series(slices).expect("phantom geometry is uniform")
    }

    /// Writes one explicit-VR DICOM file per slice plus `truth.json`.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<PhantomTruth> {
        std::fs::create_dir_all(dir)?;
        for i in 0..self.slices {
            let uid = format!("1.2.826.0.1.3680043.10.1.{}", self.first_slice + i + 1);
            let bytes = write_dicom(&self.slice_meta(i), &self.raw_slice(i), TransferSyntax::ExplicitLittle, &uid);
            std::fs::write(dir.join(format!("slice_{i:03}.dcm")), bytes)?;
        }
        let truth = self.truth();
        let json = serde_json::to_string_pretty(&truth).expect("truth serializes");
        std::fs::write(dir.join("truth.json"), json)?;
        Ok(truth)
    }
}
