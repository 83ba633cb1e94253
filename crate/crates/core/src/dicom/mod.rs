//! CT ingestion: DICOM Part-10 parsing, HU calibration and series assembly.
//!
//! Only uncompressed little-endian transfer syntaxes are accepted; everything
//! else fails with [`DicomError::UnsupportedTransferSyntax`].

mod parse;
mod series;
mod write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{parse_dicom_file, read_elements, ParsedSlice};
pub use series::{assemble_series, read_series_dir, CtVolume};
pub use write::{write_dicom, TransferSyntax};

pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DicomError {
    #[error("no DICM magic at offset 128")]
    MissingMagic,
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("required tag {0} is missing")]
    MissingTag(String),
    #[error("file truncated at offset {offset}: needed {needed} bytes, {remaining} remain")]
    TruncatedFile { offset: usize, needed: usize, remaining: usize },
    #[error("malformed element: {0}")]
    Malformed(String),
    #[error("inconsistent geometry: {0}")]
    InconsistentGeometry(String),
    #[error("non-uniform slice spacing: {0}")]
    NonUniformSpacing(String),
    #[error("two slices share z = {0} mm")]
    DuplicateLocation(f64),
    #[error("a series needs at least 2 slices, got {0}")]
    TooFewSlices(usize),
    #[error("io: {0}")]
    Io(String),
}

impl DicomError {
    pub fn name(&self) -> &'static str {
        match self {
            DicomError::MissingMagic => "MissingMagic",
            DicomError::UnsupportedTransferSyntax(_) => "UnsupportedTransferSyntax",
            DicomError::MissingTag(_) => "MissingTag",
            DicomError::TruncatedFile { .. } => "TruncatedFile",
            DicomError::Malformed(_) => "Malformed",
            DicomError::InconsistentGeometry(_) => "InconsistentGeometry",
            DicomError::NonUniformSpacing(_) => "NonUniformSpacing",
            DicomError::DuplicateLocation(_) => "DuplicateLocation",
            DicomError::TooFewSlices(_) => "TooFewSlices",
            DicomError::Io(_) => "Io",
        }
    }
}

pub type Tag = (u16, u16);

pub mod tags {
    use super::Tag;
    pub const TRANSFER_SYNTAX: Tag = (0x0002, 0x0010);
    pub const SLICE_THICKNESS: Tag = (0x0018, 0x0050);
    pub const IMAGE_POSITION: Tag = (0x0020, 0x0032);
    pub const SLICE_LOCATION: Tag = (0x0020, 0x1041);
    pub const SAMPLES_PER_PIXEL: Tag = (0x0028, 0x0002);
    pub const PHOTOMETRIC: Tag = (0x0028, 0x0004);
    pub const ROWS: Tag = (0x0028, 0x0010);
    pub const COLUMNS: Tag = (0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = (0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = (0x0028, 0x0100);
    pub const BITS_STORED: Tag = (0x0028, 0x0101);
    pub const HIGH_BIT: Tag = (0x0028, 0x0102);
    pub const PIXEL_REPRESENTATION: Tag = (0x0028, 0x0103);
    pub const RESCALE_INTERCEPT: Tag = (0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = (0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = (0x7FE0, 0x0010);
}

pub fn tag_name(tag: Tag) -> String {
    let name = match tag {
        tags::TRANSFER_SYNTAX => "TransferSyntaxUID",
        tags::IMAGE_POSITION => "ImagePositionPatient",
        tags::ROWS => "Rows",
        tags::COLUMNS => "Columns",
        tags::PIXEL_SPACING => "PixelSpacing",
        tags::BITS_ALLOCATED => "BitsAllocated",
        tags::BITS_STORED => "BitsStored",
        tags::PIXEL_REPRESENTATION => "PixelRepresentation",
        tags::PIXEL_DATA => "PixelData",
        _ => "",
    };
    format!("({:04X},{:04X}) {name}", tag.0, tag.1).trim_end().to_string()
}

/// One data element as stored in the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DicomElement {
    pub tag: Tag,
    /// Two-letter VR; `b"UN"` when the dataset is implicit and the tag unknown.
    pub vr: [u8; 2],
    pub value: Vec<u8>,
}

/// Per-slice metadata needed for calibration and geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMeta {
    pub rows: usize,
    pub cols: usize,
    /// (row spacing, column spacing) in mm.
    pub pixel_spacing: (f64, f64),
    pub slice_location: f64,
    pub image_position: (f64, f64, f64),
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    pub bits_allocated: u16,
    pub bits_stored: u16,
    pub pixel_signed: bool,
    pub slice_thickness: Option<f64>,
    /// Set when slope/intercept were absent and defaulted to 1/0.
    pub rescale_defaulted: bool,
}

pub fn raw_to_hu(raw: i32, slope: f64, intercept: f64) -> f64 {
    slope * raw as f64 + intercept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_examples() {
        assert_eq!(raw_to_hu(0, 1.0, -1024.0), -1024.0);
        assert_eq!(raw_to_hu(1024, 1.0, -1024.0), 0.0);
        assert_eq!(raw_to_hu(100, 2.0, -1000.0), -800.0);
    }

    proptest::proptest! {
        #[test]
        fn rescale_is_linear(a in -40000i32..40000, b in -40000i32..40000, s in 1i32..64, i in -4096i32..4096) {
            let (s, i) = (s as f64 / 8.0, i as f64);
            proptest::prop_assert_eq!(raw_to_hu(a + b, s, i) - raw_to_hu(a, s, i), s * b as f64);
        }
    }
}
