//! Minimal Part-10 writer for the same subset the parser reads.

use super::{tags, SliceMeta, Tag, EXPLICIT_VR_LE, IMPLICIT_VR_LE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferSyntax {
    ExplicitLittle,
    ImplicitLittle,
}

impl TransferSyntax {
    pub fn uid(self) -> &'static str {
        match self {
            TransferSyntax::ExplicitLittle => EXPLICIT_VR_LE,
            TransferSyntax::ImplicitLittle => IMPLICIT_VR_LE,
        }
    }
}

const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";

fn padded(s: &str, pad: u8) -> Vec<u8> {
    let mut v = s.as_bytes().to_vec();
    if v.len() % 2 == 1 {
        v.push(pad);
    }
    v
}

fn ds(values: &[f64]) -> Vec<u8> {
    let text: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    padded(&text.join("\\"), b' ')
}

fn us(v: u16) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

fn push(out: &mut Vec<u8>, explicit: bool, tag: Tag, vr: &[u8; 2], value: &[u8]) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    if explicit {
        out.extend_from_slice(vr);
        if matches!(vr, b"OB" | b"OW" | b"SQ" | b"UN" | b"UT") {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&(value.len() as u32).to_le_bytes());
        } else {
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
        }
    } else {
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    }
    out.extend_from_slice(value);
}

/// Serializes one slice. `raw` holds stored samples in row-major order and is
/// masked to `bits_stored`. Rescale tags are omitted when `meta.rescale_defaulted`.
pub fn write_dicom(meta: &SliceMeta, raw: &[i32], syntax: TransferSyntax, instance_uid: &str) -> Vec<u8> {
    assert_eq!(raw.len(), meta.rows * meta.cols, "sample count");
    let mut group2 = Vec::new();
    push(&mut group2, true, (0x0002, 0x0001), b"OB", &[0, 1]);
    push(&mut group2, true, (0x0002, 0x0002), b"UI", &padded(CT_IMAGE_STORAGE, 0));
    push(&mut group2, true, (0x0002, 0x0003), b"UI", &padded(instance_uid, 0));
    push(&mut group2, true, tags::TRANSFER_SYNTAX, b"UI", &padded(syntax.uid(), 0));
    let mut out = vec![0u8; 128];
    out.extend_from_slice(b"DICM");
    push(&mut out, true, (0x0002, 0x0000), b"UL", &(group2.len() as u32).to_le_bytes());
    out.extend_from_slice(&group2);

    let explicit = syntax == TransferSyntax::ExplicitLittle;
    let (x, y, z) = meta.image_position;
    let mut ds_out = Vec::new();
    let mut put = |tag: Tag, vr: &[u8; 2], value: &[u8]| push(&mut ds_out, explicit, tag, vr, value);
    put((0x0008, 0x0016), b"UI", &padded(CT_IMAGE_STORAGE, 0));
    put((0x0008, 0x0018), b"UI", &padded(instance_uid, 0));
    put((0x0008, 0x0060), b"CS", &padded("CT", b' '));
    if let Some(t) = meta.slice_thickness {
        put(tags::SLICE_THICKNESS, b"DS", &ds(&[t]));
    }
    put(tags::IMAGE_POSITION, b"DS", &ds(&[x, y, z]));
    put(tags::SLICE_LOCATION, b"DS", &ds(&[meta.slice_location]));
    put(tags::SAMPLES_PER_PIXEL, b"US", &us(1));
    put(tags::PHOTOMETRIC, b"CS", &padded("MONOCHROME2", b' '));
    put(tags::ROWS, b"US", &us(meta.rows as u16));
    put(tags::COLUMNS, b"US", &us(meta.cols as u16));
    put(tags::PIXEL_SPACING, b"DS", &ds(&[meta.pixel_spacing.0, meta.pixel_spacing.1]));
    put(tags::BITS_ALLOCATED, b"US", &us(meta.bits_allocated));
    put(tags::BITS_STORED, b"US", &us(meta.bits_stored));
    put(tags::HIGH_BIT, b"US", &us(meta.bits_stored - 1));
    put(tags::PIXEL_REPRESENTATION, b"US", &us(meta.pixel_signed as u16));
    if !meta.rescale_defaulted {
        put(tags::RESCALE_INTERCEPT, b"DS", &ds(&[meta.rescale_intercept]));
        put(tags::RESCALE_SLOPE, b"DS", &ds(&[meta.rescale_slope]));
    }
    let mask: u32 = (1u32 << meta.bits_stored) - 1;
    let mut pixels = Vec::with_capacity(raw.len() * 2);
    for &v in raw {
        let word = (v as u32) & mask;
        if meta.bits_allocated == 16 {
            pixels.extend_from_slice(&(word as u16).to_le_bytes());
        } else {
            pixels.push(word as u8);
        }
    }
    if pixels.len() % 2 == 1 {
        pixels.push(0);
    }
    let vr = if meta.bits_allocated == 16 { b"OW" } else { b"OB" };
    put(tags::PIXEL_DATA, vr, &pixels);
    out.extend_from_slice(&ds_out);
    out
}
