//! Minimal NIfTI-1 single-file reader/writer.
//!
//! Supports little-endian `n+1` files with datatypes uint8 (2), int16 (4)
//! and float32 (16), optionally gzip-compressed. Only dims, pixdim and the
//! qform/sform translation are interpreted.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::field::{LabelVolume, LatticeGeometry, ScalarField};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

/// A volume read from disk, values already scaled.
#[derive(Debug, Clone)]
pub struct NiftiVolume {
    pub geometry: LatticeGeometry,
    pub datatype: i16,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub enum Volume {
    Scalar(ScalarField),
    Labels(LabelVolume),
}

#[derive(Debug, Clone, Copy)]
pub enum VolumeRef<'a> {
    Scalar(&'a ScalarField),
    Labels(&'a LabelVolume),
}

impl<'a> From<&'a ScalarField> for VolumeRef<'a> {
    fn from(f: &'a ScalarField) -> Self {
        VolumeRef::Scalar(f)
    }
}

impl<'a> From<&'a LabelVolume> for VolumeRef<'a> {
    fn from(l: &'a LabelVolume) -> Self {
        VolumeRef::Labels(l)
    }
}

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        match v {
            Volume::Scalar(f) => VolumeRef::Scalar(f),
            Volume::Labels(l) => VolumeRef::Labels(l),
        }
    }
}

impl NiftiVolume {
    pub fn into_scalar(self) -> Result<ScalarField> {
        ScalarField::new(self.geometry, self.values)
    }

    /// Interprets values as class labels; they must be integers in 0..=255.
    pub fn into_labels(self) -> Result<LabelVolume> {
        let mut labels = Vec::with_capacity(self.values.len());
        for (i, &v) in self.values.iter().enumerate() {
            if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "voxel {i} has value {v}, not a label in 0..=255"
                )));
            }
            labels.push(v as u8);
        }
        LabelVolume::new(self.geometry, labels)
    }

    /// uint8 files become label volumes, everything else a scalar field.
    pub fn into_volume(self) -> Result<Volume> {
        if self.datatype == DT_UINT8 {
            self.into_labels().map(Volume::Labels)
        } else {
            self.into_scalar().map(Volume::Scalar)
        }
    }
}

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_i32(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn wr_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn wr_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn wr_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

/// Parses an in-memory (uncompressed or gzip) NIfTI-1 file.
pub fn decode(bytes: &[u8]) -> Result<NiftiVolume> {
    if is_gzip(bytes) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut raw)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        return decode(&raw);
    }
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file has {} bytes, header needs {HEADER_SIZE}",
            bytes.len()
        )));
    }
    let sizeof_hdr = rd_i32(bytes, 0);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(Error::Format(format!(
            "sizeof_hdr is {sizeof_hdr}, expected 348 (big-endian files are not supported)"
        )));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::Format(format!(
            "magic {:?} is not \"n+1\"",
            String::from_utf8_lossy(&bytes[344..347])
        )));
    }

    let ndim_hdr = rd_i16(bytes, 40);
    if !(1..=7).contains(&ndim_hdr) {
        return Err(Error::Format(format!("dim[0] = {ndim_hdr} out of range")));
    }
    let mut dims: Vec<usize> = Vec::new();
    for a in 0..ndim_hdr as usize {
        let d = rd_i16(bytes, 42 + 2 * a);
        if d < 1 {
            return Err(Error::Format(format!("dim[{}] = {d}", a + 1)));
        }
        dims.push(d as usize);
    }
    while dims.len() > 2 && *dims.last().unwrap() == 1 {
        dims.pop();
    }
    if dims.len() > 3 {
        return Err(Error::Format(format!(
            "{}-dimensional data is not supported",
            dims.len()
        )));
    }
    if dims.len() < 2 {
        return Err(Error::Geometry("volume has fewer than 2 axes".into()));
    }
    let ndim = dims.len();
    let spacing: Vec<f64> = (0..ndim)
        .map(|a| f64::from(rd_f32(bytes, 80 + 4 * a)).abs())
        .collect();
    let qform_code = rd_i16(bytes, 252);
    let sform_code = rd_i16(bytes, 254);
    let origin: Vec<f64> = (0..ndim)
        .map(|a| {
            if qform_code > 0 {
                f64::from(rd_f32(bytes, 268 + 4 * a))
            } else if sform_code > 0 {
                f64::from(rd_f32(bytes, 280 + 16 * a + 12))
            } else {
                0.0
            }
        })
        .collect();
    let geometry = LatticeGeometry::new(&dims, &spacing, &origin)?;

    let datatype = rd_i16(bytes, 70);
    let width = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    let vox_offset = rd_f32(bytes, 108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} inside header")));
    }
    let start = vox_offset as usize;
    let n = geometry.len();
    let end = start + n * width;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "data section truncated: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    let data = &bytes[start..end];
    let mut values: Vec<f64> = match datatype {
        DT_UINT8 => data.iter().map(|&b| f64::from(b)).collect(),
        DT_INT16 => data
            .chunks_exact(2)
            .map(|c| f64::from(i16::from_le_bytes([c[0], c[1]])))
            .collect(),
        _ => data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
    };

    let slope = f64::from(rd_f32(bytes, 112));
    let inter = f64::from(rd_f32(bytes, 116));
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && (slope != 1.0 || inter != 0.0) {
        for v in &mut values {
            *v = *v * slope + inter;
        }
    }
    Ok(NiftiVolume {
        geometry,
        datatype,
        values,
    })
}

fn header(geometry: &LatticeGeometry, datatype: i16, bitpix: i16) -> Vec<u8> {
    let mut h = vec![0u8; DATA_OFFSET];
    wr_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r';
    let dims = geometry.dims();
    wr_i16(&mut h, 40, dims.len() as i16);
    for (a, &d) in dims.iter().enumerate() {
        wr_i16(&mut h, 42 + 2 * a, d as i16);
    }
    for a in dims.len()..7 {
        wr_i16(&mut h, 42 + 2 * a, 1);
    }
    wr_i16(&mut h, 70, datatype);
    wr_i16(&mut h, 72, bitpix);
    // pixdim[0] is qfac
    wr_f32(&mut h, 76, 1.0);
    for (a, &s) in geometry.spacing().iter().enumerate() {
        wr_f32(&mut h, 80 + 4 * a, s as f32);
    }
    wr_f32(&mut h, 108, DATA_OFFSET as f32);
    wr_f32(&mut h, 112, 1.0);
    wr_f32(&mut h, 116, 0.0);
    // mm
    h[123] = 2;
    let descrip = b"deformfeat";
    h[148..148 + descrip.len()].copy_from_slice(descrip);
    wr_i16(&mut h, 252, 1);
    wr_i16(&mut h, 254, 1);
    let origin = geometry.origin();
    for (a, &o) in origin.iter().enumerate() {
        wr_f32(&mut h, 268 + 4 * a, o as f32);
        wr_f32(&mut h, 280 + 16 * a + 4 * a, geometry.spacing()[a] as f32);
        wr_f32(&mut h, 280 + 16 * a + 12, o as f32);
    }
    if dims.len() == 2 {
        wr_f32(&mut h, 280 + 16 * 2 + 8, 1.0);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

/// Serializes a volume: scalar fields as float32, labels as uint8.
pub fn encode<'a>(volume: impl Into<VolumeRef<'a>>) -> Vec<u8> {
    match volume.into() {
        VolumeRef::Scalar(f) => {
            let mut out = header(f.geometry(), DT_FLOAT32, 32);
            out.reserve(4 * f.len());
            for &v in f.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out
        }
        VolumeRef::Labels(l) => {
            let mut out = header(l.geometry(), DT_UINT8, 8);
            out.extend_from_slice(l.labels());
            out
        }
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<NiftiVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    read_volume(path)?.into_scalar()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_volume(path)?.into_labels()
}

/// Writes a NIfTI-1 file; paths ending in `.gz` are gzip-compressed.
pub fn write_volume<'a>(volume: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(volume);
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let payload = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}
