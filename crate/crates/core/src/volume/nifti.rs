//! Single-file NIfTI-1 (`.nii` / `.nii.gz`) reader and writer.
//!
//! Only little-endian, 3D, single-file volumes are handled. The sform is
//! preferred over the qform when `sform_code > 0`; with neither set the grid
//! is axis-aligned at the origin.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Geometry, LabelVolume, ScalarType, ScalarVolume, Spacing, WorldTransform, MAX_LABEL};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_UINT16: i16 = 512;

const XFORM_SCANNER_ANAT: i16 = 1;
const UNITS_MM: u8 = 2;

/// Kind requested from [`read_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Scalar,
    Labels,
}

/// Either volume type, as returned by [`read_volume`].
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Scalar(ScalarVolume),
    Labels(LabelVolume),
}

pub fn read_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<AnyVolume> {
    match kind {
        VolumeKind::Scalar => read_scalar(path).map(AnyVolume::Scalar),
        VolumeKind::Labels => read_labels(path).map(AnyVolume::Labels),
    }
}

pub fn write_volume(v: &AnyVolume, path: impl AsRef<Path>) -> Result<()> {
    match v {
        AnyVolume::Scalar(s) => write_scalar(s, path),
        AnyVolume::Labels(l) => write_labels(l, path),
    }
}

pub fn read_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let raw = RawVolume::read(path.as_ref())?;
    let values: Vec<f32> = raw.decode_f32()?;
    let (slope, inter) = (raw.header.scl_slope, raw.header.scl_inter);
    let rescale = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);
    let (values, storage) = if rescale {
        (
            values.into_iter().map(|v| v * slope + inter).collect(),
            ScalarType::F32,
        )
    } else {
        let storage = match raw.header.datatype {
            DT_UINT8 => ScalarType::U8,
            DT_INT16 => ScalarType::I16,
            DT_UINT16 => ScalarType::U16,
            _ => ScalarType::F32,
        };
        (values, storage)
    };
    ScalarVolume::with_storage(raw.geometry, values, storage)
}

/// Reads a segmentation; any stored value outside `0..=13` is an error.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let raw = RawVolume::read(path.as_ref())?;
    let labels: Vec<u8> = match raw.header.datatype {
        DT_UINT8 => raw.payload.clone(),
        DT_INT16 => raw
            .payload
            .chunks_exact(2)
            .map(|c| label_from_i64(i16::from_le_bytes([c[0], c[1]]) as i64))
            .collect::<Result<_>>()?,
        DT_UINT16 => raw
            .payload
            .chunks_exact(2)
            .map(|c| label_from_i64(u16::from_le_bytes([c[0], c[1]]) as i64))
            .collect::<Result<_>>()?,
        other => return Err(Error::UnsupportedDatatype(other)),
    };
    LabelVolume::new(raw.geometry, labels)
}

fn label_from_i64(v: i64) -> Result<u8> {
    if (0..=MAX_LABEL as i64).contains(&v) {
        Ok(v as u8)
    } else {
        Err(Error::LabelOutOfRange {
            value: v,
            max: MAX_LABEL,
        })
    }
}

pub fn write_scalar(v: &ScalarVolume, path: impl AsRef<Path>) -> Result<()> {
    let (datatype, bitpix, payload) = match v.storage() {
        ScalarType::U8 => (
            DT_UINT8,
            8,
            v.data().iter().map(|&x| x.round().clamp(0.0, 255.0) as u8).collect(),
        ),
        ScalarType::I16 => (
            DT_INT16,
            16,
            v.data()
                .iter()
                .flat_map(|&x| (x.round().clamp(-32768.0, 32767.0) as i16).to_le_bytes())
                .collect(),
        ),
        ScalarType::U16 => (
            DT_UINT16,
            16,
            v.data()
                .iter()
                .flat_map(|&x| (x.round().clamp(0.0, 65535.0) as u16).to_le_bytes())
                .collect(),
        ),
        ScalarType::F32 => (
            DT_FLOAT32,
            32,
            v.data().iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>(),
        ),
    };
    write_raw(path.as_ref(), v.geometry(), datatype, bitpix, &payload)
}

pub fn write_labels(v: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    write_raw(path.as_ref(), v.geometry(), DT_UINT8, 8, v.data())
}

struct Header {
    datatype: i16,
    scl_slope: f32,
    scl_inter: f32,
}

struct RawVolume {
    header: Header,
    geometry: Geometry,
    payload: Vec<u8>,
}

impl RawVolume {
    fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
            let mut out = Vec::new();
            GzDecoder::new(&bytes[..])
                .read_to_end(&mut out)
                .map_err(|e| Error::MalformedHeader(format!("gzip stream: {e}")))?;
            out
        } else {
            bytes
        };
        Self::parse(bytes)
    }

    fn parse(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(Error::MalformedHeader(format!(
                "file too short for a header ({} bytes)",
                bytes.len()
            )));
        }
        let h = &bytes[..HEADER_SIZE];
        let sizeof_hdr = get_i32(h, offset::SIZEOF_HDR);
        if sizeof_hdr != HEADER_SIZE as i32 {
            if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
                return Err(Error::MalformedHeader("big-endian files are not supported".into()));
            }
            return Err(Error::MalformedHeader(format!("sizeof_hdr = {sizeof_hdr}")));
        }
        match &h[offset::MAGIC..offset::MAGIC + 4] {
            b"n+1\0" => {}
            b"ni1\0" => {
                return Err(Error::MalformedHeader(
                    "two-file (.hdr/.img) NIfTI is not supported".into(),
                ))
            }
            m => return Err(Error::MalformedHeader(format!("bad magic {m:?}"))),
        }

        let dim: Vec<i16> = (0..8).map(|i| get_i16(h, offset::DIM + 2 * i)).collect();
        let ndim = dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
        }
        let mut dims = [1usize; 3];
        for a in 0..3 {
            if (a as i16) < ndim {
                let n = dim[a + 1];
                if n < 1 {
                    return Err(Error::MalformedHeader(format!("dim[{}] = {n}", a + 1)));
                }
                dims[a] = n as usize;
            }
        }
        if (4..=ndim as usize).any(|a| dim[a] > 1) {
            return Err(Error::MalformedHeader("volumes beyond 3D are not supported".into()));
        }

        let datatype = get_i16(h, offset::DATATYPE);
        let bytes_per_voxel = match datatype {
            DT_UINT8 => 1,
            DT_INT16 | DT_UINT16 => 2,
            DT_FLOAT32 => 4,
            other => return Err(Error::UnsupportedDatatype(other)),
        };

        let pixdim: Vec<f32> = (0..8).map(|i| get_f32(h, offset::PIXDIM + 4 * i)).collect();
        let spacing = Spacing::new(
            pixdim[1].abs() as f64,
            pixdim[2].abs() as f64,
            pixdim[3].abs() as f64,
        )
        .map_err(|_| Error::MalformedHeader(format!("pixdim = {:?}", &pixdim[1..4])))?;

        let qform_code = get_i16(h, offset::QFORM_CODE);
        let sform_code = get_i16(h, offset::SFORM_CODE);
        let transform = if sform_code > 0 {
            sform_transform(h)?
        } else if qform_code > 0 {
            qform_transform(h, pixdim[0])
        } else {
            WorldTransform::identity()
        };
        transform
            .validate()
            .map_err(|e| Error::MalformedHeader(format!("orientation: {e}")))?;

        let vox_offset = get_f32(h, offset::VOX_OFFSET);
        if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
            return Err(Error::MalformedHeader(format!("vox_offset = {vox_offset}")));
        }
        let start = vox_offset as usize;
        let geometry = Geometry {
            dims,
            spacing,
            transform,
        };
        let need = geometry.len() * bytes_per_voxel;
        if bytes.len() < start + need {
            return Err(Error::MalformedHeader(format!(
                "expected {need} data bytes after offset {start}, file has {}",
                bytes.len().saturating_sub(start)
            )));
        }
        let header = Header {
            datatype,
            scl_slope: get_f32(h, offset::SCL_SLOPE),
            scl_inter: get_f32(h, offset::SCL_INTER),
        };
        let payload = bytes[start..start + need].to_vec();
        Ok(RawVolume {
            header,
            geometry,
            payload,
        })
    }

    fn decode_f32(&self) -> Result<Vec<f32>> {
        let p = &self.payload;
        Ok(match self.header.datatype {
            DT_UINT8 => p.iter().map(|&v| v as f32).collect(),
            DT_INT16 => p
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
            DT_UINT16 => p
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
                .collect(),
            DT_FLOAT32 => p
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }
}

fn sform_transform(h: &[u8]) -> Result<WorldTransform> {
    let rows: Vec<[f64; 4]> = (0..3)
        .map(|r| {
            let base = offset::SROW_X + 16 * r;
            [0, 1, 2, 3].map(|c| get_f32(h, base + 4 * c) as f64)
        })
        .collect();
    let mut direction = [[0.0; 3]; 3];
    for c in 0..3 {
        let norm = (0..3).map(|r| rows[r][c] * rows[r][c]).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::MalformedHeader(format!("sform column {c} has zero length")));
        }
        for r in 0..3 {
            direction[r][c] = rows[r][c] / norm;
        }
    }
    Ok(WorldTransform {
        origin: [rows[0][3], rows[1][3], rows[2][3]],
        direction,
    })
}

fn qform_transform(h: &[u8], qfac: f32) -> WorldTransform {
    let b = get_f32(h, offset::QUATERN_B) as f64;
    let c = get_f32(h, offset::QUATERN_B + 4) as f64;
    let d = get_f32(h, offset::QUATERN_B + 8) as f64;
    let (mut b, mut c, mut d) = (b, c, d);
    let rest = 1.0 - (b * b + c * c + d * d);
    let a = if rest < 1e-7 {
        // 180° rotation: renormalise (b, c, d) to undo f32 rounding
        let n = (b * b + c * c + d * d).sqrt();
        b /= n;
        c /= n;
        d /= n;
        0.0
    } else {
        rest.sqrt()
    };
    let qfac = if qfac < 0.0 { -1.0 } else { 1.0 };
    let mut m = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    for row in m.iter_mut() {
        row[2] *= qfac;
    }
    WorldTransform {
        origin: [0, 1, 2].map(|i| get_f32(h, offset::QOFFSET_X + 4 * i) as f64),
        direction: m,
    }
}

/// Quaternion `(b, c, d)` and qfac of a proper or improper rotation.
fn rotation_to_quaternion(dir: &[[f64; 3]; 3]) -> ([f64; 3], f32) {
    let mut r = *dir;
    let mut qfac = 1.0f32;
    let det = super::det3(&r);
    if det < 0.0 {
        for row in r.iter_mut() {
            row[2] = -row[2];
        }
        qfac = -1.0;
    }
    let (r11, r12, r13) = (r[0][0], r[0][1], r[0][2]);
    let (r21, r22, r23) = (r[1][0], r[1][1], r[1][2]);
    let (r31, r32, r33) = (r[2][0], r[2][1], r[2][2]);
    let trace = r11 + r22 + r33 + 1.0;
    let (a, b, c, d);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r32 - r23) / a;
        c = 0.25 * (r13 - r31) / a;
        d = 0.25 * (r21 - r12) / a;
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r12 + r21) / b;
            d = 0.25 * (r13 + r31) / b;
            a = 0.25 * (r32 - r23) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r12 + r21) / c;
            d = 0.25 * (r23 + r32) / c;
            a = 0.25 * (r13 - r31) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r13 + r31) / d;
            c = 0.25 * (r23 + r32) / d;
            a = 0.25 * (r21 - r12) / d;
        }
    }
    let q = if a < 0.0 { [-b, -c, -d] } else { [b, c, d] };
    (q, qfac)
}

fn encode(geometry: &Geometry, datatype: i16, bitpix: i16, payload: &[u8]) -> Vec<u8> {
    let mut buf = vec![0u8; VOX_OFFSET];
    put_i32(&mut buf, offset::SIZEOF_HDR, HEADER_SIZE as i32);
    let dims = geometry.dims;
    let dim = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, v) in dim.iter().enumerate() {
        put_i16(&mut buf, offset::DIM + 2 * i, *v);
    }
    put_i16(&mut buf, offset::DATATYPE, datatype);
    put_i16(&mut buf, offset::BITPIX, bitpix);

    let dir = &geometry.transform.direction;
    let (quat, qfac) = rotation_to_quaternion(dir);
    let s = geometry.spacing.as_array();
    let pixdim = [qfac, s[0] as f32, s[1] as f32, s[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, v) in pixdim.iter().enumerate() {
        put_f32(&mut buf, offset::PIXDIM + 4 * i, *v);
    }
    put_f32(&mut buf, offset::VOX_OFFSET, VOX_OFFSET as f32);
    buf[offset::XYZT_UNITS] = UNITS_MM;
    let descrip = b"rpci";
    buf[offset::DESCRIP..offset::DESCRIP + descrip.len()].copy_from_slice(descrip);

    put_i16(&mut buf, offset::QFORM_CODE, XFORM_SCANNER_ANAT);
    put_i16(&mut buf, offset::SFORM_CODE, XFORM_SCANNER_ANAT);
    for (i, q) in quat.iter().enumerate() {
        put_f32(&mut buf, offset::QUATERN_B + 4 * i, *q as f32);
    }
    let origin = geometry.transform.origin;
    for (i, o) in origin.iter().enumerate() {
        put_f32(&mut buf, offset::QOFFSET_X + 4 * i, *o as f32);
    }
    for r in 0..3 {
        let base = offset::SROW_X + 16 * r;
        for c in 0..3 {
            put_f32(&mut buf, base + 4 * c, (dir[r][c] * s[c]) as f32);
        }
        put_f32(&mut buf, base + 12, origin[r] as f32);
    }
    buf[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");
    buf.extend_from_slice(payload);
    buf
}

fn write_raw(path: &Path, geometry: &Geometry, datatype: i16, bitpix: i16, payload: &[u8]) -> Result<()> {
    let bytes = encode(geometry, datatype, bitpix, payload);
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let bytes = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    crate::io::write_atomic(path, &bytes)
}

fn get_i16(b: &[u8], at: usize) -> i16 {
    i16::from_le_bytes([b[at], b[at + 1]])
}

fn get_i32(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn get_f32(b: &[u8], at: usize) -> f32 {
    f32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn put_i16(b: &mut [u8], at: usize, v: i16) {
    b[at..at + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(b: &mut [u8], at: usize, v: i32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(b: &mut [u8], at: usize, v: f32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn small_labels() -> LabelVolume {
        let g = Geometry::new(
            [5, 4, 3],
            Spacing::new(1.0, 1.0, 5.0).unwrap(),
            WorldTransform::with_origin([-12.5, 30.0, 7.25]),
        )
        .unwrap();
        let data = (0..g.len()).map(|i| (i % 14) as u8).collect();
        LabelVolume::new(g, data).unwrap()
    }

    #[test]
    fn anisotropic_spacing_survives_round_trip() {
        let dir = tmp();
        let p = dir.path().join("a.nii");
        let v = small_labels();
        write_labels(&v, &p).unwrap();
        let back = read_labels(&p).unwrap();
        assert_eq!(back.spacing().as_array(), [1.0, 1.0, 5.0]);
        assert_eq!(back, v);
    }

    #[test]
    fn label_fourteen_rejected() {
        let dir = tmp();
        let p = dir.path().join("bad.nii");
        let v = small_labels();
        let mut bytes = encode(v.geometry(), DT_UINT8, 8, v.data());
        bytes[VOX_OFFSET + 2] = 14;
        std::fs::write(&p, bytes).unwrap();
        let err = read_labels(&p).unwrap_err();
        assert!(err.to_string().contains("label out of range"), "{err}");
    }

    #[test]
    fn float_labels_unsupported() {
        let dir = tmp();
        let p = dir.path().join("f.nii");
        let v = small_labels();
        let payload: Vec<u8> = v.data().iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
        std::fs::write(&p, encode(v.geometry(), DT_FLOAT32, 32, &payload)).unwrap();
        assert!(matches!(read_labels(&p), Err(Error::UnsupportedDatatype(16))));
        // The same file is a perfectly good scalar volume.
        let s = read_scalar(&p).unwrap();
        assert_eq!(s.data()[13], 13.0);
    }

    #[test]
    fn truncated_and_garbage_headers() {
        let dir = tmp();
        let p = dir.path().join("t.nii");
        std::fs::write(&p, [0u8; 100]).unwrap();
        assert!(matches!(read_labels(&p), Err(Error::MalformedHeader(_))));

        let v = small_labels();
        let mut bytes = encode(v.geometry(), DT_UINT8, 8, v.data());
        bytes[offset::MAGIC] = b'x';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_labels(&p), Err(Error::MalformedHeader(_))));

        let bytes = encode(v.geometry(), DT_UINT8, 8, &v.data()[..10]);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_labels(&p), Err(Error::MalformedHeader(_))));

        assert!(read_labels(dir.path().join("missing.nii")).unwrap_err().is_io());
    }

    #[test]
    fn qform_only_files_are_oriented() {
        let dir = tmp();
        let p = dir.path().join("q.nii");
        let g = Geometry::new(
            [3, 3, 3],
            Spacing::new(0.5, 0.75, 2.0).unwrap(),
            WorldTransform::new(
                [1.0, 2.0, 3.0],
                [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
            )
            .unwrap(),
        )
        .unwrap();
        let v = LabelVolume::background(g);
        let mut bytes = encode(v.geometry(), DT_UINT8, 8, v.data());
        put_i16(&mut bytes, offset::SFORM_CODE, 0);
        std::fs::write(&p, bytes).unwrap();
        let back = read_labels(&p).unwrap();
        assert!(back.geometry().approx_eq(&g, 1e-6), "{:?}", back.geometry());
    }

    #[test]
    fn improper_rotation_round_trips_through_qform() {
        let dir = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let (q, qfac) = rotation_to_quaternion(&dir);
        assert_eq!(qfac, -1.0);
        let mut h = vec![0u8; HEADER_SIZE];
        for (i, v) in q.iter().enumerate() {
            put_f32(&mut h, offset::QUATERN_B + 4 * i, *v as f32);
        }
        let t = qform_transform(&h, qfac);
        for r in 0..3 {
            for c in 0..3 {
                assert!((t.direction[r][c] - dir[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn int16_scalar_with_rescale() {
        let dir = tmp();
        let p = dir.path().join("ct.nii");
        let g = Geometry::simple([2, 2, 1], Spacing::isotropic(1.0).unwrap()).unwrap();
        let payload: Vec<u8> = [0i16, 10, 20, 30].iter().flat_map(|v| v.to_le_bytes()).collect();
        let mut bytes = encode(&g, DT_INT16, 16, &payload);
        put_f32(&mut bytes, offset::SCL_SLOPE, 2.0);
        put_f32(&mut bytes, offset::SCL_INTER, -1024.0);
        std::fs::write(&p, bytes).unwrap();
        let s = read_scalar(&p).unwrap();
        assert_eq!(s.data(), &[-1024.0, -1004.0, -984.0, -964.0]);
        assert_eq!(s.storage(), ScalarType::F32);
    }
}
