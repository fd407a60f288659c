use super::tags::{self, Tag};
use super::{DicomError, PixelSlab, SliceHeader, EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN};

const PREAMBLE_LEN: usize = 128;
const MAGIC: &[u8; 4] = b"DICM";
const UNDEFINED_LENGTH: u32 = 0xFFFF_FFFF;
const MAX_NESTING: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferSyntax {
    ImplicitVrLittleEndian,
    ExplicitVrLittleEndian,
}

impl TransferSyntax {
    fn from_uid(uid: &str) -> Result<Self, DicomError> {
        match uid {
            IMPLICIT_VR_LITTLE_ENDIAN => Ok(Self::ImplicitVrLittleEndian),
            EXPLICIT_VR_LITTLE_ENDIAN => Ok(Self::ExplicitVrLittleEndian),
            other => Err(DicomError::UnsupportedTransferSyntax(other.to_string())),
        }
    }

    fn explicit(self) -> bool {
        self == Self::ExplicitVrLittleEndian
    }
}

#[derive(Debug, Clone, Copy)]
struct Element<'a> {
    tag: Tag,
    value: &'a [u8],
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DicomError> {
        if n > self.remaining() {
            return Err(DicomError::unparseable(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DicomError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, DicomError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tag(&mut self) -> Result<Tag, DicomError> {
        Ok(Tag(self.u16()?, self.u16()?))
    }

    fn peek_group(&self) -> Option<u16> {
        let b = self.bytes.get(self.pos..self.pos + 2)?;
        Some(u16::from_le_bytes([b[0], b[1]]))
    }

    /// Reads one element header and its value. Sequences (and any other
    /// undefined-length value) are skipped and returned with an empty value.
    fn element(&mut self, explicit: bool, depth: usize) -> Result<Element<'a>, DicomError> {
        let tag = self.tag()?;
        if tag.group() == 0xFFFE {
            return Err(DicomError::unparseable(format!(
                "unexpected delimiter {tag} at data set level"
            )));
        }
        let (vr, length) = if explicit {
            let vr_bytes = self.take(2)?;
            let vr = [vr_bytes[0], vr_bytes[1]];
            if !vr.iter().all(u8::is_ascii_uppercase) {
                return Err(DicomError::unparseable(format!("invalid VR bytes {vr:?} for {tag}")));
            }
            let length = if tags::has_long_length(vr) {
                self.take(2)?;
                self.u32()?
            } else {
                u32::from(self.u16()?)
            };
            (Some(vr), length)
        } else {
            (None, self.u32()?)
        };

        if length == UNDEFINED_LENGTH {
            let is_sequence = vr.is_none_or(|v| &v == b"SQ");
            if !is_sequence || tag == tags::PIXEL_DATA {
                return Err(DicomError::unparseable(format!(
                    "undefined length on {tag} (encapsulated data in a native transfer syntax)"
                )));
            }
            self.skip_undefined_sequence(explicit, depth + 1)?;
            return Ok(Element { tag, value: &[] });
        }
        let value = self.take(length as usize)?;
        Ok(Element { tag, value })
    }

    fn skip_undefined_sequence(&mut self, explicit: bool, depth: usize) -> Result<(), DicomError> {
        if depth > MAX_NESTING {
            return Err(DicomError::unparseable("sequence nesting too deep"));
        }
        loop {
            let tag = self.tag()?;
            let length = self.u32()?;
            match tag {
                tags::SEQUENCE_DELIMITATION => return Ok(()),
                tags::ITEM if length == UNDEFINED_LENGTH => loop {
                    if self.remaining() >= 4 && self.bytes[self.pos..self.pos + 4] == [0xFE, 0xFF, 0x0D, 0xE0] {
                        self.take(4)?;
                        self.u32()?;
                        break;
                    }
                    self.element(explicit, depth)?;
                },
                tags::ITEM => {
                    self.take(length as usize)?;
                }
                other => {
                    return Err(DicomError::unparseable(format!("unexpected {other} inside sequence")));
                }
            }
        }
    }
}

/// Locates the start of the data set and its transfer syntax.
fn locate_dataset(bytes: &[u8]) -> Result<(usize, TransferSyntax), DicomError> {
    let meta_start = if bytes.len() >= PREAMBLE_LEN + 4 && &bytes[PREAMBLE_LEN..PREAMBLE_LEN + 4] == MAGIC {
        PREAMBLE_LEN + 4
    } else {
        match Cursor::new(bytes, 0).peek_group() {
            Some(0x0002) if bytes.len() >= 8 => 0,
            Some(0x0008) if bytes.len() >= 8 => return Ok((0, TransferSyntax::ImplicitVrLittleEndian)),
            _ => return Err(DicomError::unparseable("no DICM magic and not an implicit-VR data set")),
        }
    };

    // The file meta group is always explicit VR little endian.
    let mut cursor = Cursor::new(bytes, meta_start);
    let mut syntax = None;
    while cursor.peek_group() == Some(0x0002) {
        let el = cursor.element(true, 0)?;
        if el.tag == tags::TRANSFER_SYNTAX_UID {
            syntax = Some(text(el.value));
        }
    }
    let uid = syntax.ok_or_else(|| DicomError::unparseable("file meta group has no transfer syntax"))?;
    Ok((cursor.pos, TransferSyntax::from_uid(&uid)?))
}

fn for_each_element<'a>(bytes: &'a [u8], mut visit: impl FnMut(Element<'a>)) -> Result<TransferSyntax, DicomError> {
    let (start, syntax) = locate_dataset(bytes)?;
    let mut cursor = Cursor::new(bytes, start);
    while cursor.remaining() > 0 {
        let el = cursor.element(syntax.explicit(), 0)?;
        visit(el);
    }
    Ok(syntax)
}

fn text(value: &[u8]) -> String {
    String::from_utf8_lossy(value)
        .trim_matches(|c: char| c == '\0' || c.is_ascii_whitespace())
        .to_string()
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim_matches(|c: char| c == '\0' || c.is_ascii_whitespace());
    let s = s.strip_prefix('+').unwrap_or(s);
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Multi-valued decimal string. `None` if any component is malformed.
fn decimal_strings(value: &[u8]) -> Option<Vec<f64>> {
    let s = text(value);
    if s.is_empty() {
        return None;
    }
    s.split('\\').map(parse_number).collect()
}

fn integer_string(value: &[u8]) -> Option<i64> {
    let s = text(value);
    let s = s.strip_prefix('+').unwrap_or(&s);
    s.parse::<i64>().ok()
}

fn unsigned_short(value: &[u8]) -> Option<u16> {
    (value.len() == 2).then(|| u16::from_le_bytes([value[0], value[1]]))
}

#[derive(Default)]
struct RawHeader<'a> {
    series_uid: Option<&'a [u8]>,
    study_uid: Option<&'a [u8]>,
    instance_number: Option<&'a [u8]>,
    slice_location: Option<&'a [u8]>,
    image_position: Option<&'a [u8]>,
    image_orientation: Option<&'a [u8]>,
    pixel_spacing: Option<&'a [u8]>,
    slice_thickness: Option<&'a [u8]>,
    rows: Option<&'a [u8]>,
    columns: Option<&'a [u8]>,
    bits_allocated: Option<&'a [u8]>,
    pixel_representation: Option<&'a [u8]>,
    samples_per_pixel: Option<&'a [u8]>,
    photometric: Option<&'a [u8]>,
    number_of_frames: Option<&'a [u8]>,
    slope: Option<&'a [u8]>,
    intercept: Option<&'a [u8]>,
    pixel_data: Option<&'a [u8]>,
}

fn collect(bytes: &[u8]) -> Result<RawHeader<'_>, DicomError> {
    let mut raw = RawHeader::default();
    for_each_element(bytes, |el| {
        let slot = match el.tag {
            tags::SERIES_INSTANCE_UID => &mut raw.series_uid,
            tags::STUDY_INSTANCE_UID => &mut raw.study_uid,
            tags::INSTANCE_NUMBER => &mut raw.instance_number,
            tags::SLICE_LOCATION => &mut raw.slice_location,
            tags::IMAGE_POSITION_PATIENT => &mut raw.image_position,
            tags::IMAGE_ORIENTATION_PATIENT => &mut raw.image_orientation,
            tags::PIXEL_SPACING => &mut raw.pixel_spacing,
            tags::SLICE_THICKNESS => &mut raw.slice_thickness,
            tags::ROWS => &mut raw.rows,
            tags::COLUMNS => &mut raw.columns,
            tags::BITS_ALLOCATED => &mut raw.bits_allocated,
            tags::PIXEL_REPRESENTATION => &mut raw.pixel_representation,
            tags::SAMPLES_PER_PIXEL => &mut raw.samples_per_pixel,
            tags::PHOTOMETRIC_INTERPRETATION => &mut raw.photometric,
            tags::NUMBER_OF_FRAMES => &mut raw.number_of_frames,
            tags::RESCALE_SLOPE => &mut raw.slope,
            tags::RESCALE_INTERCEPT => &mut raw.intercept,
            tags::PIXEL_DATA => &mut raw.pixel_data,
            _ => return,
        };
        *slot = Some(el.value);
    })?;
    Ok(raw)
}

fn fixed<const N: usize>(value: Option<&[u8]>) -> Option<[f64; N]> {
    let v = decimal_strings(value?)?;
    v.try_into().ok()
}

fn header_from_raw(raw: &RawHeader<'_>) -> Result<SliceHeader, DicomError> {
    if let Some(frames) = raw.number_of_frames.and_then(integer_string) {
        if frames > 1 {
            return Err(DicomError::unparseable(format!("multi-frame file ({frames} frames)")));
        }
    }

    let instance_number = raw
        .instance_number
        .and_then(integer_string)
        .ok_or_else(|| DicomError::missing(tags::INSTANCE_NUMBER))?;

    // Optional geometry: malformed values are dropped.
    let slice_location = raw
        .slice_location
        .and_then(decimal_strings)
        .and_then(|v| v.first().copied());
    let image_position = fixed::<3>(raw.image_position);
    let image_orientation = fixed::<6>(raw.image_orientation);
    if slice_location.is_none() && image_position.is_none() {
        return Err(DicomError::missing(tags::IMAGE_POSITION_PATIENT));
    }

    let pixel_spacing = fixed::<2>(raw.pixel_spacing)
        .filter(|s| s.iter().all(|v| *v > 0.0))
        .ok_or_else(|| DicomError::missing(tags::PIXEL_SPACING))?;
    let rows = raw
        .rows
        .and_then(unsigned_short)
        .filter(|r| *r >= 1)
        .ok_or_else(|| DicomError::missing(tags::ROWS))?;
    let columns = raw
        .columns
        .and_then(unsigned_short)
        .filter(|c| *c >= 1)
        .ok_or_else(|| DicomError::missing(tags::COLUMNS))?;
    let bits_allocated = raw
        .bits_allocated
        .and_then(unsigned_short)
        .ok_or_else(|| DicomError::missing(tags::BITS_ALLOCATED))?;
    if bits_allocated != 8 && bits_allocated != 16 {
        return Err(DicomError::UnsupportedPixelFormat(format!(
            "{bits_allocated} bits allocated"
        )));
    }
    if raw.pixel_data.is_none() {
        return Err(DicomError::missing(tags::PIXEL_DATA));
    }

    let slice_thickness = raw
        .slice_thickness
        .and_then(decimal_strings)
        .and_then(|v| v.first().copied());
    let rescale_slope = raw
        .slope
        .and_then(decimal_strings)
        .and_then(|v| v.first().copied())
        .unwrap_or(1.0);
    let rescale_intercept = raw
        .intercept
        .and_then(decimal_strings)
        .and_then(|v| v.first().copied())
        .unwrap_or(0.0);

    Ok(SliceHeader {
        source_path: String::new(),
        series_uid: raw.series_uid.map(text).unwrap_or_default(),
        study_uid: raw.study_uid.map(text).filter(|s| !s.is_empty()),
        instance_number,
        slice_location,
        image_position,
        image_orientation,
        pixel_spacing,
        slice_thickness,
        rows: u32::from(rows),
        columns: u32::from(columns),
        bits_allocated,
        pixel_representation: raw.pixel_representation.and_then(unsigned_short).unwrap_or(0),
        rescale_slope,
        rescale_intercept,
    })
}

/// Parses the header of one single-frame DICOM file.
pub fn parse_slice(bytes: &[u8]) -> Result<SliceHeader, DicomError> {
    header_from_raw(&collect(bytes)?)
}

fn pixels_from_raw(header: &SliceHeader, raw: &RawHeader<'_>) -> Result<PixelSlab, DicomError> {
    if let Some(spp) = raw.samples_per_pixel.and_then(unsigned_short) {
        if spp != 1 {
            return Err(DicomError::UnsupportedPixelFormat(format!("{spp} samples per pixel")));
        }
    }
    if let Some(p) = raw.photometric.map(text) {
        if p != "MONOCHROME2" && p != "MONOCHROME1" {
            return Err(DicomError::UnsupportedPixelFormat(format!(
                "photometric interpretation {p}"
            )));
        }
    }
    let data = raw.pixel_data.ok_or_else(|| DicomError::missing(tags::PIXEL_DATA))?;
    let width = header.columns as usize;
    let height = header.rows as usize;
    let count = width * height;
    let expected = count * header.bytes_per_sample();
    // Odd-length 8-bit data carries one pad byte.
    let padded = expected % 2 == 1 && data.len() == expected + 1;
    if data.len() != expected && !padded {
        return Err(DicomError::PixelLengthMismatch {
            declared: data.len(),
            expected,
        });
    }

    let signed = header.pixel_representation == 1;
    let slope = header.rescale_slope;
    let intercept = header.rescale_intercept;
    let rescale = |stored: f64| (stored * slope + intercept) as f32;
    let values = match header.bits_allocated {
        8 => data[..count]
            .iter()
            .map(|&b| rescale(if signed { f64::from(b as i8) } else { f64::from(b) }))
            .collect(),
        _ => data[..expected]
            .chunks_exact(2)
            .map(|c| {
                let v = u16::from_le_bytes([c[0], c[1]]);
                rescale(if signed { f64::from(v as i16) } else { f64::from(v) })
            })
            .collect(),
    };
    Ok(PixelSlab { width, height, values })
}

/// Decodes native pixel data to Hounsfield units using the header's
/// rescale slope and intercept.
pub fn decode_pixels(header: &SliceHeader, bytes: &[u8]) -> Result<PixelSlab, DicomError> {
    pixels_from_raw(header, &collect(bytes)?)
}

/// Header and pixels in a single pass over the bytes.
pub fn parse_slice_with_pixels(bytes: &[u8]) -> Result<(SliceHeader, PixelSlab), DicomError> {
    let raw = collect(bytes)?;
    let header = header_from_raw(&raw)?;
    let slab = pixels_from_raw(&header, &raw)?;
    Ok((header, slab))
}
