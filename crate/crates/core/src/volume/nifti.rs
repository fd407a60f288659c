//! Single-file NIfTI-1 (`.nii`, optionally gzip-compressed), little endian.
//!
//! Writes a 348-byte header, four zero extension bytes and the voxel data at
//! offset 352. The world transform is stored as an sform (code 1); qform is
//! left unset.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};
use thiserror::Error;

use super::{Provenance, Volume};
use crate::geometry::Affine;

pub const HEADER_SIZE: usize = 348;
pub const VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
const NIFTI_UNITS_MM: u8 = 2;
const NIFTI_XFORM_SCANNER_ANAT: i16 = 1;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("bad magic {0:?} (only single-file n+1 is supported)")]
    BadMagic([u8; 4]),
    #[error("unsupported datatype {0}")]
    UnsupportedDatatype(i16),
    #[error("header/dimension mismatch: {0}")]
    HeaderDimMismatch(String),
    #[error("truncated or malformed header: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn put_i16(buf: &mut [u8], at: usize, v: i16) {
    buf[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], at: usize, v: i32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], at: usize, v: f32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_i16(buf: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([buf[at], buf[at + 1]])
}

fn get_i32(buf: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

fn get_f32(buf: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// int16 when every voxel is an integer in range, float32 otherwise.
pub fn select_datatype(voxels: &[f32]) -> i16 {
    let fits = voxels
        .iter()
        .all(|v| v.fract() == 0.0 && *v >= f32::from(i16::MIN) && *v <= f32::from(i16::MAX));
    if fits {
        DT_INT16
    } else {
        DT_FLOAT32
    }
}

pub fn write_nifti(volume: &Volume) -> Vec<u8> {
    let datatype = select_datatype(&volume.voxels);
    let bitpix: i16 = if datatype == DT_INT16 { 16 } else { 32 };
    let mut out = vec![0u8; VOX_OFFSET];
    let h = &mut out[..];

    put_i32(h, 0, HEADER_SIZE as i32);
    h[38] = b'r';
    put_i16(h, 40, 3);
    for (n, d) in volume.dims.iter().enumerate() {
        put_i16(h, 42 + 2 * n, *d as i16);
    }
    for n in 3..7 {
        put_i16(h, 42 + 2 * n, 1);
    }
    put_i16(h, 70, datatype);
    put_i16(h, 72, bitpix);
    let pixdim = volume.affine.column_norms();
    put_f32(h, 76, 1.0);
    for (n, p) in pixdim.iter().enumerate() {
        put_f32(h, 80 + 4 * n, *p as f32);
    }
    put_f32(h, 108, VOX_OFFSET as f32);
    put_f32(h, 112, 1.0);
    h[123] = NIFTI_UNITS_MM;
    let descrip = volume.provenance.series_uid.as_bytes();
    let n = descrip.len().min(79);
    h[148..148 + n].copy_from_slice(&descrip[..n]);
    put_i16(h, 252, 0);
    put_i16(h, 254, NIFTI_XFORM_SCANNER_ANAT);
    for (r, row) in volume.affine.rows().iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            put_f32(h, 280 + 16 * r + 4 * c, *v as f32);
        }
    }
    h[344..348].copy_from_slice(MAGIC);

    out.reserve(volume.voxels.len() * usize::from(bitpix as u16 / 8));
    if datatype == DT_INT16 {
        for v in &volume.voxels {
            out.extend_from_slice(&(*v as i16).to_le_bytes());
        }
    } else {
        for v in &volume.voxels {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_nifti(bytes: &[u8]) -> Result<Volume, NiftiError> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::BadHeader(format!(
            "{} bytes, need {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let sizeof_hdr = get_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(NiftiError::BadHeader(format!(
            "sizeof_hdr {sizeof_hdr} (big-endian and NIfTI-2 files are not supported)"
        )));
    }
    let magic: [u8; 4] = bytes[344..348].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(NiftiError::BadMagic(magic));
    }

    let ndim = get_i16(bytes, 40);
    if !(3..=7).contains(&ndim) {
        return Err(NiftiError::HeaderDimMismatch(format!("dim[0] = {ndim}, expected 3")));
    }
    let mut dims = [0usize; 3];
    for (n, d) in dims.iter_mut().enumerate() {
        let v = get_i16(bytes, 42 + 2 * n);
        if v < 1 {
            return Err(NiftiError::HeaderDimMismatch(format!("dim[{}] = {v}", n + 1)));
        }
        *d = v as usize;
    }
    for n in 4..=ndim as usize {
        let v = get_i16(bytes, 40 + 2 * n);
        if v > 1 {
            return Err(NiftiError::HeaderDimMismatch(format!(
                "dim[{n}] = {v}, only 3-D volumes are supported"
            )));
        }
    }

    let datatype = get_i16(bytes, 70);
    let sample = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(NiftiError::UnsupportedDatatype(other)),
    };
    let offset = get_f32(bytes, 108);
    if !offset.is_finite() || offset < VOX_OFFSET as f32 || offset.fract() != 0.0 {
        return Err(NiftiError::BadHeader(format!("vox_offset {offset}")));
    }
    let offset = offset as usize;
    let count = dims[0] * dims[1] * dims[2];
    let data = bytes.get(offset..offset + count * sample).ok_or_else(|| {
        NiftiError::HeaderDimMismatch(format!(
            "{} data bytes for {count} voxels",
            bytes.len().saturating_sub(offset)
        ))
    })?;

    let slope = get_f32(bytes, 112);
    let inter = get_f32(bytes, 116);
    let rescale = slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let mut voxels: Vec<f32> = if datatype == DT_INT16 {
        data.chunks_exact(2)
            .map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])))
            .collect()
    } else {
        data.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    };
    if rescale {
        voxels.iter_mut().for_each(|v| *v = *v * slope + inter);
    }

    let affine = if get_i16(bytes, 254) > 0 {
        let mut m = [[0.0f64; 4]; 4];
        for (r, row) in m.iter_mut().take(3).enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f64::from(get_f32(bytes, 280 + 16 * r + 4 * c));
            }
        }
        m[3] = [0.0, 0.0, 0.0, 1.0];
        Affine(m)
    } else {
        let p = |n: usize| f64::from(get_f32(bytes, 76 + 4 * n));
        Affine::diagonal([p(1), p(2), p(3)], [0.0; 3])
    };

    let descrip = &bytes[148..228];
    let end = descrip.iter().position(|b| *b == 0).unwrap_or(descrip.len());
    let series_uid = String::from_utf8_lossy(&descrip[..end]).into_owned();

    let mut volume = Volume::new(dims, voxels, affine).map_err(|e| NiftiError::HeaderDimMismatch(e.to_string()))?;
    volume.provenance = Provenance {
        series_uid,
        history: vec!["read".into()],
    };
    Ok(volume)
}

fn is_gz_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

/// Writes `.nii` or, for a `.gz` suffix, gzip-compressed `.nii.gz`.
pub fn write_nifti_file(path: &Path, volume: &Volume) -> Result<(), NiftiError> {
    let bytes = write_nifti(volume);
    if is_gz_path(path) {
        // Fixed header fields keep the compressed output reproducible.
        let mut enc: GzEncoder<Vec<u8>> = GzBuilder::new().mtime(0).write(Vec::new(), Compression::fast());
        enc.write_all(&bytes)?;
        fs::write(path, enc.finish()?)?;
    } else {
        fs::write(path, bytes)?;
    }
    Ok(())
}

pub fn read_nifti_file(path: &Path) -> Result<Volume, NiftiError> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        read_nifti(&out)
    } else {
        read_nifti(&raw)
    }
}
