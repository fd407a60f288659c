//! Read-only DICOM subset: the header tags and native pixel data needed to
//! assess a CT series.
//!
//! Only uncompressed little-endian transfer syntaxes are accepted (implicit
//! VR and explicit VR). Files may carry the Part-10 preamble and file meta
//! group, or be a bare implicit-VR data set. Everything else is rejected with
//! a typed error so that the batch driver can report the file as unparseable.

mod parse;
pub mod tags;
mod write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::{decode_pixels, parse_slice, parse_slice_with_pixels, TransferSyntax};
pub use tags::Tag;
pub(crate) use write::{format_ds, format_ds_list};
pub use write::{DicomWriter, ElementValue};

pub const IMPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_VR_LITTLE_ENDIAN: &str = "1.2.840.10008.1.2.1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DicomError {
    #[error("unparseable DICOM: {0}")]
    Unparseable(String),
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("missing or malformed required tag {tag} ({name})")]
    MissingRequiredTag { tag: Tag, name: &'static str },
    #[error("pixel data length {declared} does not match {expected} (rows x columns x bytes per sample)")]
    PixelLengthMismatch { declared: usize, expected: usize },
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
}

impl DicomError {
    pub(crate) fn unparseable(msg: impl Into<String>) -> Self {
        DicomError::Unparseable(msg.into())
    }

    pub(crate) fn missing(tag: Tag) -> Self {
        DicomError::MissingRequiredTag {
            tag,
            name: tags::name_of(tag),
        }
    }
}

/// Per-file header values used by the series checks and volume assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceHeader {
    pub source_path: String,
    pub series_uid: String,
    pub study_uid: Option<String>,
    pub instance_number: i64,
    pub slice_location: Option<f64>,
    pub image_position: Option<[f64; 3]>,
    pub image_orientation: Option<[f64; 6]>,
    /// (row spacing, column spacing) in mm, as stored in the file.
    pub pixel_spacing: [f64; 2],
    pub slice_thickness: Option<f64>,
    pub rows: u32,
    pub columns: u32,
    pub bits_allocated: u16,
    pub pixel_representation: u16,
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
}

impl SliceHeader {
    pub fn with_source(mut self, path: impl Into<String>) -> Self {
        self.source_path = path.into();
        self
    }

    pub fn bytes_per_sample(&self) -> usize {
        usize::from(self.bits_allocated / 8)
    }

    /// Unit normal of the image plane (row cosine x column cosine).
    /// Falls back to +z when the orientation tag is absent.
    pub fn slice_normal(&self) -> [f64; 3] {
        match self.image_orientation {
            Some(o) => {
                let n = crate::geometry::cross([o[0], o[1], o[2]], [o[3], o[4], o[5]]);
                crate::geometry::normalize(n).unwrap_or([0.0, 0.0, 1.0])
            }
            None => [0.0, 0.0, 1.0],
        }
    }
}

/// One decoded slice in Hounsfield units, row-major (`values[row * width + col]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSlab {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl PixelSlab {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}
