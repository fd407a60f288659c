use super::tags::{self, Tag};
use super::{EXPLICIT_VR_LITTLE_ENDIAN, IMPLICIT_VR_LITTLE_ENDIAN};

const CT_IMAGE_STORAGE: &str = "1.2.840.10008.5.1.4.1.1.2";
const IMPLEMENTATION_UID: &str = "2.25.3303103127013117";

#[derive(Debug, Clone, PartialEq)]
pub enum ElementValue {
    /// Text VRs (UI, DS, IS, CS, ...). Padded to even length on write.
    Text(String),
    U16(u16),
    U32(u32),
    Bytes(Vec<u8>),
}

impl ElementValue {
    fn encode(&self, tag: Tag) -> Vec<u8> {
        match self {
            ElementValue::Text(s) => {
                let mut out = s.as_bytes().to_vec();
                if out.len() % 2 == 1 {
                    let uid = tags::vr_of(tag) == Some(*b"UI");
                    out.push(if uid { 0 } else { b' ' });
                }
                out
            }
            ElementValue::U16(v) => v.to_le_bytes().to_vec(),
            ElementValue::U32(v) => v.to_le_bytes().to_vec(),
            ElementValue::Bytes(b) => {
                let mut out = b.clone();
                if out.len() % 2 == 1 {
                    out.push(0);
                }
                out
            }
        }
    }
}

/// Minimal writer for the DICOM subset this crate reads. Used to build
/// synthetic corpora and test fixtures.
#[derive(Debug, Clone)]
pub struct DicomWriter {
    explicit: bool,
    part10: bool,
    sorted: bool,
    elements: Vec<(Tag, ElementValue)>,
}

impl Default for DicomWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl DicomWriter {
    /// Part-10 file, explicit VR little endian, elements in ascending tag order.
    pub fn new() -> Self {
        Self {
            explicit: true,
            part10: true,
            sorted: true,
            elements: Vec::new(),
        }
    }

    pub fn implicit_vr(mut self) -> Self {
        self.explicit = false;
        self
    }

    /// Omit preamble and file meta group (bare implicit-VR stream).
    pub fn headerless(mut self) -> Self {
        self.part10 = false;
        self.explicit = false;
        self
    }

    /// Write elements in insertion order instead of ascending tag order.
    pub fn keep_insertion_order(mut self) -> Self {
        self.sorted = false;
        self
    }

    pub fn set(&mut self, tag: Tag, value: ElementValue) -> &mut Self {
        if let Some(slot) = self.elements.iter_mut().find(|(t, _)| *t == tag) {
            slot.1 = value;
        } else {
            self.elements.push((tag, value));
        }
        self
    }

    pub fn text(&mut self, tag: Tag, value: impl Into<String>) -> &mut Self {
        self.set(tag, ElementValue::Text(value.into()))
    }

    pub fn u16(&mut self, tag: Tag, value: u16) -> &mut Self {
        self.set(tag, ElementValue::U16(value))
    }

    pub fn remove(&mut self, tag: Tag) -> &mut Self {
        self.elements.retain(|(t, _)| *t != tag);
        self
    }

    pub fn get(&self, tag: Tag) -> Option<&ElementValue> {
        self.elements.iter().find(|(t, _)| *t == tag).map(|(_, v)| v)
    }

    pub fn elements_mut(&mut self) -> &mut Vec<(Tag, ElementValue)> {
        &mut self.elements
    }

    fn write_element(out: &mut Vec<u8>, tag: Tag, value: &ElementValue, explicit: bool) {
        let data = value.encode(tag);
        out.extend_from_slice(&tag.0.to_le_bytes());
        out.extend_from_slice(&tag.1.to_le_bytes());
        if explicit {
            let vr = tags::vr_of(tag).unwrap_or(match value {
                ElementValue::Text(_) => *b"LO",
                ElementValue::U16(_) => *b"US",
                ElementValue::U32(_) => *b"UL",
                ElementValue::Bytes(_) => *b"OB",
            });
            out.extend_from_slice(&vr);
            if tags::has_long_length(vr) {
                out.extend_from_slice(&[0, 0]);
                out.extend_from_slice(&(data.len() as u32).to_le_bytes());
            } else {
                out.extend_from_slice(&(data.len() as u16).to_le_bytes());
            }
        } else {
            out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        }
        out.extend_from_slice(&data);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        if self.part10 {
            out.resize(128, 0);
            out.extend_from_slice(b"DICM");
            let sop_instance = match self.get(tags::SOP_INSTANCE_UID) {
                Some(ElementValue::Text(s)) => s.clone(),
                _ => "2.25.0".to_string(),
            };
            let syntax = if self.explicit {
                EXPLICIT_VR_LITTLE_ENDIAN
            } else {
                IMPLICIT_VR_LITTLE_ENDIAN
            };
            let mut meta = Vec::new();
            let meta_elements = [
                (tags::FILE_META_VERSION, ElementValue::Bytes(vec![0, 1])),
                (
                    tags::MEDIA_STORAGE_SOP_CLASS_UID,
                    ElementValue::Text(CT_IMAGE_STORAGE.into()),
                ),
                (tags::MEDIA_STORAGE_SOP_INSTANCE_UID, ElementValue::Text(sop_instance)),
                (tags::TRANSFER_SYNTAX_UID, ElementValue::Text(syntax.into())),
                (
                    tags::IMPLEMENTATION_CLASS_UID,
                    ElementValue::Text(IMPLEMENTATION_UID.into()),
                ),
            ];
            for (tag, value) in &meta_elements {
                Self::write_element(&mut meta, *tag, value, true);
            }
            Self::write_element(
                &mut out,
                tags::FILE_META_GROUP_LENGTH,
                &ElementValue::U32(meta.len() as u32),
                true,
            );
            out.extend_from_slice(&meta);
        }

        let mut elements: Vec<&(Tag, ElementValue)> = self.elements.iter().collect();
        if self.sorted {
            elements.sort_by_key(|(t, _)| *t);
        }
        for (tag, value) in elements {
            Self::write_element(&mut out, *tag, value, self.explicit);
        }
        out
    }
}

/// Formats a real as a DICOM decimal string (at most 16 characters).
pub(crate) fn format_ds(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 16 {
        return plain;
    }
    for precision in (0..=15).rev() {
        let s = format!("{v:.precision$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s.len() <= 16 {
            return s;
        }
    }
    format!("{v:.6e}")
}

pub(crate) fn format_ds_list(values: &[f64]) -> String {
    values.iter().map(|v| format_ds(*v)).collect::<Vec<_>>().join("\\")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ds_fits_sixteen_chars() {
        for v in [
            0.1 + 0.2,
            -179.64999999999998,
            1.0 / 3.0,
            2.5,
            -1024.0,
            123456.789012345,
        ] {
            let s = format_ds(v);
            assert!(s.len() <= 16, "{s}");
            let back: f64 = s.parse().unwrap();
            assert!((back - v).abs() <= 1e-6 * v.abs().max(1.0), "{v} -> {s}");
        }
    }

    #[test]
    fn text_padding_uses_nul_for_uids() {
        assert_eq!(
            ElementValue::Text("1.2.3".into()).encode(tags::SERIES_INSTANCE_UID),
            b"1.2.3\0"
        );
        assert_eq!(ElementValue::Text("7".into()).encode(tags::INSTANCE_NUMBER), b"7 ");
    }
}
