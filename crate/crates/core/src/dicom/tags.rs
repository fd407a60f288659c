use std::fmt;

use serde::{Deserialize, Serialize};

/// A (group, element) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag(pub u16, pub u16);

impl Tag {
    pub fn group(self) -> u16 {
        self.0
    }

    pub fn element(self) -> u16 {
        self.1
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

pub const FILE_META_GROUP_LENGTH: Tag = Tag(0x0002, 0x0000);
pub const FILE_META_VERSION: Tag = Tag(0x0002, 0x0001);
pub const MEDIA_STORAGE_SOP_CLASS_UID: Tag = Tag(0x0002, 0x0002);
pub const MEDIA_STORAGE_SOP_INSTANCE_UID: Tag = Tag(0x0002, 0x0003);
pub const TRANSFER_SYNTAX_UID: Tag = Tag(0x0002, 0x0010);
pub const IMPLEMENTATION_CLASS_UID: Tag = Tag(0x0002, 0x0012);

pub const SOP_CLASS_UID: Tag = Tag(0x0008, 0x0016);
pub const SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x0018);
pub const MODALITY: Tag = Tag(0x0008, 0x0060);
pub const SLICE_THICKNESS: Tag = Tag(0x0018, 0x0050);
pub const STUDY_INSTANCE_UID: Tag = Tag(0x0020, 0x000D);
pub const SERIES_INSTANCE_UID: Tag = Tag(0x0020, 0x000E);
pub const INSTANCE_NUMBER: Tag = Tag(0x0020, 0x0013);
pub const IMAGE_POSITION_PATIENT: Tag = Tag(0x0020, 0x0032);
pub const IMAGE_ORIENTATION_PATIENT: Tag = Tag(0x0020, 0x0037);
pub const SLICE_LOCATION: Tag = Tag(0x0020, 0x1041);
pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
pub const PHOTOMETRIC_INTERPRETATION: Tag = Tag(0x0028, 0x0004);
pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
pub const ROWS: Tag = Tag(0x0028, 0x0010);
pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
pub const PIXEL_SPACING: Tag = Tag(0x0028, 0x0030);
pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
pub const HIGH_BIT: Tag = Tag(0x0028, 0x0102);
pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);

pub const ITEM: Tag = Tag(0xFFFE, 0xE000);
pub const ITEM_DELIMITATION: Tag = Tag(0xFFFE, 0xE00D);
pub const SEQUENCE_DELIMITATION: Tag = Tag(0xFFFE, 0xE0DD);

/// Value representation of the tags this crate reads or writes, used when
/// writing explicit VR. Unknown tags are skipped by length when reading, so
/// the table does not need to be exhaustive.
pub fn vr_of(tag: Tag) -> Option<[u8; 2]> {
    let vr = match tag {
        FILE_META_GROUP_LENGTH => b"UL",
        FILE_META_VERSION => b"OB",
        MEDIA_STORAGE_SOP_CLASS_UID
        | MEDIA_STORAGE_SOP_INSTANCE_UID
        | TRANSFER_SYNTAX_UID
        | IMPLEMENTATION_CLASS_UID
        | SOP_CLASS_UID
        | SOP_INSTANCE_UID
        | STUDY_INSTANCE_UID
        | SERIES_INSTANCE_UID => b"UI",
        MODALITY | PHOTOMETRIC_INTERPRETATION => b"CS",
        SLICE_THICKNESS
        | IMAGE_POSITION_PATIENT
        | IMAGE_ORIENTATION_PATIENT
        | SLICE_LOCATION
        | PIXEL_SPACING
        | RESCALE_INTERCEPT
        | RESCALE_SLOPE => b"DS",
        INSTANCE_NUMBER | NUMBER_OF_FRAMES => b"IS",
        SAMPLES_PER_PIXEL | ROWS | COLUMNS | BITS_ALLOCATED | BITS_STORED | HIGH_BIT | PIXEL_REPRESENTATION => b"US",
        PIXEL_DATA => b"OW",
        _ => return None,
    };
    Some(*vr)
}

pub fn name_of(tag: Tag) -> &'static str {
    match tag {
        TRANSFER_SYNTAX_UID => "TransferSyntaxUID",
        SERIES_INSTANCE_UID => "SeriesInstanceUID",
        STUDY_INSTANCE_UID => "StudyInstanceUID",
        INSTANCE_NUMBER => "InstanceNumber",
        IMAGE_POSITION_PATIENT => "ImagePositionPatient",
        IMAGE_ORIENTATION_PATIENT => "ImageOrientationPatient",
        SLICE_LOCATION => "SliceLocation",
        SLICE_THICKNESS => "SliceThickness",
        PIXEL_SPACING => "PixelSpacing",
        ROWS => "Rows",
        COLUMNS => "Columns",
        BITS_ALLOCATED => "BitsAllocated",
        PIXEL_REPRESENTATION => "PixelRepresentation",
        RESCALE_SLOPE => "RescaleSlope",
        RESCALE_INTERCEPT => "RescaleIntercept",
        PIXEL_DATA => "PixelData",
        _ => "unknown",
    }
}

/// VRs whose explicit-VR encoding uses two reserved bytes and a 32-bit length.
pub(crate) fn has_long_length(vr: [u8; 2]) -> bool {
    matches!(
        &vr,
        b"OB" | b"OD" | b"OF" | b"OL" | b"OV" | b"OW" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV"
    )
}
