use super::{raw_to_hu, tag_name, tags, DicomElement, DicomError, SliceMeta, Tag, EXPLICIT_VR_LE, IMPLICIT_VR_LE};
use crate::image::{ImageBuffer, Kind};

const MAX_DEPTH: usize = 16;
const LONG_VRS: [&[u8; 2]; 13] = [
    b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"UC", b"UR", b"UT", b"UN", b"SV", b"UV",
];
const UNDEFINED: u32 = 0xFFFF_FFFF;
const ITEM: Tag = (0xFFFE, 0xE000);
const ITEM_END: Tag = (0xFFFE, 0xE00D);
const SEQ_END: Tag = (0xFFFE, 0xE0DD);

/// One parsed slice: metadata plus stored (pre-rescale) samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSlice {
    pub meta: SliceMeta,
    /// Stored integer samples, row-major, in file order.
    pub raw: ImageBuffer,
}

impl ParsedSlice {
    pub fn to_hu(&self) -> ImageBuffer {
        let (s, i) = (self.meta.rescale_slope, self.meta.rescale_intercept);
        self.raw.map(Kind::Hu, |v| raw_to_hu(v as i32, s, i))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    explicit: bool,
}

impl<'a> Reader<'a> {
    fn need(&self, n: usize) -> Result<(), DicomError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(DicomError::TruncatedFile {
                offset: self.pos,
                needed: n,
                remaining,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DicomError> {
        self.need(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn peek_group(&self) -> Option<u16> {
        self.bytes
            .get(self.pos..self.pos + 2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn tag(&mut self) -> Result<Tag, DicomError> {
        Ok((self.u16()?, self.u16()?))
    }

    /// Reads one element header and value. Undefined-length sequences are
    /// skipped structurally and their raw span returned as the value.
    fn element(&mut self, depth: usize) -> Result<DicomElement, DicomError> {
        let tag = self.tag()?;
        let (vr, len) = if self.explicit && tag.0 != 0xFFFE {
            let v = self.take(2)?;
            let vr = [v[0], v[1]];
            if !vr.iter().all(|c| c.is_ascii_uppercase()) {
                return Err(DicomError::Malformed(format!(
                    "invalid VR bytes {:02X}{:02X} at {}",
                    vr[0],
                    vr[1],
                    tag_name(tag)
                )));
            }
            if LONG_VRS.contains(&&vr) {
                self.take(2)?;
                (vr, self.u32()?)
            } else {
                (vr, self.u16()? as u32)
            }
        } else {
            (*b"UN", self.u32()?)
        };
        if len == UNDEFINED {
            let is_seq = &vr == b"SQ" || !self.explicit;
            if !is_seq || tag == tags::PIXEL_DATA {
                return Err(DicomError::Malformed(format!("undefined length on {}", tag_name(tag))));
            }
            let start = self.pos;
            self.skip_sequence(depth + 1)?;
            return Ok(DicomElement {
                tag,
                vr: *b"SQ",
                value: self.bytes[start..self.pos].to_vec(),
            });
        }
        let value = self.take(len as usize)?.to_vec();
        Ok(DicomElement { tag, vr, value })
    }

    fn skip_sequence(&mut self, depth: usize) -> Result<(), DicomError> {
        if depth > MAX_DEPTH {
            return Err(DicomError::Malformed("sequence nesting too deep".into()));
        }
        loop {
            let tag = self.tag()?;
            let len = self.u32()?;
            match tag {
                SEQ_END => return Ok(()),
                ITEM if len == UNDEFINED => loop {
                    if self.peek_tag()? == ITEM_END {
                        self.tag()?;
                        self.u32()?;
                        break;
                    }
                    self.element(depth)?;
                },
                ITEM => {
                    self.take(len as usize)?;
                }
                other => {
                    return Err(DicomError::Malformed(format!("unexpected {} inside sequence", tag_name(other))));
                }
            }
        }
    }

    fn peek_tag(&self) -> Result<Tag, DicomError> {
        self.need(4)?;
        let b = &self.bytes[self.pos..self.pos + 4];
        Ok((u16::from_le_bytes([b[0], b[1]]), u16::from_le_bytes([b[2], b[3]])))
    }
}

fn trimmed(value: &[u8]) -> String {
    String::from_utf8_lossy(value)
        .trim_matches(|c: char| c == '\0' || c == ' ')
        .to_string()
}

/// Splits a file into its top-level elements (meta group included) and the
/// transfer syntax UID.
pub fn read_elements(bytes: &[u8]) -> Result<(String, Vec<DicomElement>), DicomError> {
    if bytes.len() < 132 {
        return Err(DicomError::TruncatedFile {
            offset: 0,
            needed: 132,
            remaining: bytes.len(),
        });
    }
    if &bytes[128..132] != b"DICM" {
        return Err(DicomError::MissingMagic);
    }
    let mut r = Reader {
        bytes,
        pos: 132,
        explicit: true,
    };
    let mut out = Vec::new();
    while r.peek_group() == Some(0x0002) {
        out.push(r.element(0)?);
    }
    let syntax = out
        .iter()
        .find(|e| e.tag == tags::TRANSFER_SYNTAX)
        .map(|e| trimmed(&e.value))
        .ok_or_else(|| DicomError::MissingTag(tag_name(tags::TRANSFER_SYNTAX)))?;
    r.explicit = match syntax.as_str() {
        EXPLICIT_VR_LE => true,
        IMPLICIT_VR_LE => false,
        _ => return Err(DicomError::UnsupportedTransferSyntax(syntax)),
    };
    let mut last: Option<Tag> = out.last().map(|e| e.tag);
    while !r.at_end() {
        let e = r.element(0)?;
        if let Some(prev) = last {
            if e.tag <= prev {
                return Err(DicomError::Malformed(format!(
                    "{} follows {} out of order",
                    tag_name(e.tag),
                    tag_name(prev)
                )));
            }
        }
        last = Some(e.tag);
        out.push(e);
    }
    Ok((syntax, out))
}

struct Lookup<'a>(&'a [DicomElement]);

impl<'a> Lookup<'a> {
    fn get(&self, tag: Tag) -> Option<&'a DicomElement> {
        self.0.iter().find(|e| e.tag == tag)
    }

    fn require(&self, tag: Tag) -> Result<&'a DicomElement, DicomError> {
        self.get(tag).ok_or_else(|| DicomError::MissingTag(tag_name(tag)))
    }

    fn us(&self, tag: Tag) -> Result<Option<u16>, DicomError> {
        match self.get(tag) {
            None => Ok(None),
            Some(e) if e.value.len() >= 2 => Ok(Some(u16::from_le_bytes([e.value[0], e.value[1]]))),
            Some(_) => Err(DicomError::Malformed(format!("{} is shorter than 2 bytes", tag_name(tag)))),
        }
    }

    fn us_req(&self, tag: Tag) -> Result<u16, DicomError> {
        self.require(tag)?;
        Ok(self.us(tag)?.expect("present"))
    }

    fn ds(&self, tag: Tag) -> Result<Option<Vec<f64>>, DicomError> {
        let Some(e) = self.get(tag) else { return Ok(None) };
        let text = trimmed(&e.value);
        text.split('\\')
            .map(|s| {
                let s = s.trim_matches(|c: char| c == ' ' || c == '\0');
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DicomError::Malformed(format!("{} holds non-numeric {s:?}", tag_name(tag))))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn ds_n(&self, tag: Tag, n: usize) -> Result<Vec<f64>, DicomError> {
        self.require(tag)?;
        let v = self.ds(tag)?.expect("present");
        if v.len() != n {
            return Err(DicomError::Malformed(format!("{} has {} values, expected {n}", tag_name(tag), v.len())));
        }
        Ok(v)
    }

    fn ds_single(&self, tag: Tag) -> Result<Option<f64>, DicomError> {
        match self.ds(tag)? {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some(v[0])),
            Some(v) => Err(DicomError::Malformed(format!("{} has {} values, expected 1", tag_name(tag), v.len()))),
        }
    }
}

pub fn parse_dicom_file(bytes: &[u8]) -> Result<ParsedSlice, DicomError> {
    let (_, elements) = read_elements(bytes)?;
    let l = Lookup(&elements);
    let rows = l.us_req(tags::ROWS)? as usize;
    let cols = l.us_req(tags::COLUMNS)? as usize;
    let spacing = l.ds_n(tags::PIXEL_SPACING, 2)?;
    let position = l.ds_n(tags::IMAGE_POSITION, 3)?;
    let bits_allocated = l.us_req(tags::BITS_ALLOCATED)?;
    let bits_stored = l.us_req(tags::BITS_STORED)?;
    let pixel_signed = match l.us_req(tags::PIXEL_REPRESENTATION)? {
        0 => false,
        1 => true,
        other => return Err(DicomError::Malformed(format!("pixel representation {other}"))),
    };
    let pixel_data = l.require(tags::PIXEL_DATA)?;
    if rows == 0 || cols == 0 {
        return Err(DicomError::Malformed(format!("image is {rows}x{cols}")));
    }
    if !(spacing[0] > 0.0 && spacing[1] > 0.0) {
        return Err(DicomError::Malformed(format!("pixel spacing {spacing:?}")));
    }
    if ![8, 12, 16].contains(&bits_stored) || ![8, 16].contains(&bits_allocated) || bits_stored > bits_allocated {
        return Err(DicomError::Malformed(format!(
            "bits stored {bits_stored} / allocated {bits_allocated}"
        )));
    }
    if let Some(spp) = l.us(tags::SAMPLES_PER_PIXEL)? {
        if spp != 1 {
            return Err(DicomError::Malformed(format!("{spp} samples per pixel")));
        }
    }
    if let Some(e) = l.get(tags::PHOTOMETRIC) {
        let p = trimmed(&e.value);
        if p != "MONOCHROME2" {
            return Err(DicomError::Malformed(format!("photometric interpretation {p}")));
        }
    }
    let slope = l.ds_single(tags::RESCALE_SLOPE)?;
    let intercept = l.ds_single(tags::RESCALE_INTERCEPT)?;
    let rescale_defaulted = slope.is_none() || intercept.is_none();
    if rescale_defaulted {
        log::warn!("rescale slope/intercept missing; defaulting to 1/0");
    }
    let z = position[2];
    let meta = SliceMeta {
        rows,
        cols,
        pixel_spacing: (spacing[0], spacing[1]),
        slice_location: l.ds_single(tags::SLICE_LOCATION)?.unwrap_or(z),
        image_position: (position[0], position[1], z),
        rescale_slope: slope.unwrap_or(1.0),
        rescale_intercept: intercept.unwrap_or(0.0),
        bits_allocated,
        bits_stored,
        pixel_signed,
        slice_thickness: l.ds_single(tags::SLICE_THICKNESS)?,
        rescale_defaulted,
    };
    let bytes_per = bits_allocated as usize / 8;
    let need = rows * cols * bytes_per;
    if pixel_data.value.len() < need {
        return Err(DicomError::Malformed(format!(
            "pixel data holds {} bytes, {rows}x{cols} needs {need}",
            pixel_data.value.len()
        )));
    }
    let mask: u32 = (1u32 << bits_stored) - 1;
    let sign_bit: u32 = 1u32 << (bits_stored - 1);
    let samples = pixel_data.value[..need]
        .chunks_exact(bytes_per)
        .map(|c| {
            let word = if bytes_per == 2 { u16::from_le_bytes([c[0], c[1]]) as u32 } else { c[0] as u32 };
            let v = word & mask;
            let signed = if pixel_signed && v & sign_bit != 0 { v as i64 - (1i64 << bits_stored) } else { v as i64 };
            signed as f64
        })
        .collect();
    let raw = ImageBuffer::new(cols, rows, Kind::Unit, samples).expect("sample count matches");
    Ok(ParsedSlice { meta, raw })
}
