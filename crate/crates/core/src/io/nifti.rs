//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! NIfTI stores geometry in RAS+ world coordinates; internal volumes use LPS,
//! so the first two world axes are negated on the way in and out.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Vector3};

use super::{FormatError, Result, VolumeHeader, GZIP_MAGIC};
use crate::volume::{ElementType, Geometry, Volume, VoxelBuffer};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DEFAULT_VOX_OFFSET: usize = 352;
pub const MAGIC: &[u8; 4] = b"n+1\0";

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
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

/// `NIFTI_UNITS_MM` in the spatial bits of `xyzt_units`.
const UNITS_MM: u8 = 2;
/// `NIFTI_XFORM_SCANNER_ANAT`.
const XFORM_SCANNER: i16 = 1;

pub fn datatype_code(et: ElementType) -> i16 {
    match et {
        ElementType::Uint8 => 2,
        ElementType::Int16 => 4,
        ElementType::Int32 => 8,
        ElementType::Float32 => 16,
        ElementType::Float64 => 64,
        ElementType::Int8 => 256,
        ElementType::Uint16 => 512,
        ElementType::Uint32 => 768,
    }
}

fn element_type_of(code: i16) -> Result<ElementType> {
    Ok(match code {
        2 => ElementType::Uint8,
        4 => ElementType::Int16,
        8 => ElementType::Int32,
        16 => ElementType::Float32,
        64 => ElementType::Float64,
        256 => ElementType::Int8,
        512 => ElementType::Uint16,
        768 => ElementType::Uint32,
        other => return Err(FormatError::UnsupportedDatatype(other)),
    })
}

/// The fields of the 348-byte header this crate reads or writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub big_endian: bool,
}

pub fn has_nifti_magic(bytes: &[u8]) -> bool {
    bytes.len() >= HEADER_SIZE && &bytes[offset::MAGIC..offset::MAGIC + 4] == MAGIC
}

struct Fields<'a> {
    bytes: &'a [u8],
    be: bool,
}

impl Fields<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.be {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        if self.be {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        if self.be {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }
}

impl NiftiHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_SIZE {
            return Err(FormatError::TruncatedHeader);
        }
        let le = Fields { bytes, be: false };
        let be = Fields { bytes, be: true };
        let f = if le.i32(offset::SIZEOF_HDR) == HEADER_SIZE as i32 {
            le
        } else if be.i32(offset::SIZEOF_HDR) == HEADER_SIZE as i32 {
            be
        } else {
            return Err(FormatError::BadMagic);
        };
        if &bytes[offset::MAGIC..offset::MAGIC + 4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let dim = std::array::from_fn(|i| f.i16(offset::DIM + 2 * i));
        let pixdim = std::array::from_fn(|i| f.f32(offset::PIXDIM + 4 * i));
        let quatern = std::array::from_fn(|i| f.f32(offset::QUATERN_B + 4 * i));
        let qoffset = std::array::from_fn(|i| f.f32(offset::QOFFSET_X + 4 * i));
        let srow = std::array::from_fn(|r| {
            std::array::from_fn(|c| f.f32(offset::SROW_X + 16 * r + 4 * c))
        });
        Ok(NiftiHeader {
            dim,
            datatype: f.i16(offset::DATATYPE),
            bitpix: f.i16(offset::BITPIX),
            pixdim,
            vox_offset: f.f32(offset::VOX_OFFSET),
            scl_slope: f.f32(offset::SCL_SLOPE),
            scl_inter: f.f32(offset::SCL_INTER),
            xyzt_units: bytes[offset::XYZT_UNITS],
            qform_code: f.i16(offset::QFORM_CODE),
            sform_code: f.i16(offset::SFORM_CODE),
            quatern,
            qoffset,
            srow,
            big_endian: f.be,
        })
    }

    /// Little-endian 348-byte encoding.
    pub fn encode(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        let mut put = |at: usize, bytes: &[u8]| b[at..at + bytes.len()].copy_from_slice(bytes);
        put(offset::SIZEOF_HDR, &(HEADER_SIZE as i32).to_le_bytes());
        for (i, d) in self.dim.iter().enumerate() {
            put(offset::DIM + 2 * i, &d.to_le_bytes());
        }
        put(offset::DATATYPE, &self.datatype.to_le_bytes());
        put(offset::BITPIX, &self.bitpix.to_le_bytes());
        for (i, p) in self.pixdim.iter().enumerate() {
            put(offset::PIXDIM + 4 * i, &p.to_le_bytes());
        }
        put(offset::VOX_OFFSET, &self.vox_offset.to_le_bytes());
        put(offset::SCL_SLOPE, &self.scl_slope.to_le_bytes());
        put(offset::SCL_INTER, &self.scl_inter.to_le_bytes());
        put(offset::XYZT_UNITS, &[self.xyzt_units]);
        put(offset::QFORM_CODE, &self.qform_code.to_le_bytes());
        put(offset::SFORM_CODE, &self.sform_code.to_le_bytes());
        for i in 0..3 {
            put(offset::QUATERN_B + 4 * i, &self.quatern[i].to_le_bytes());
            put(offset::QOFFSET_X + 4 * i, &self.qoffset[i].to_le_bytes());
        }
        for (r, row) in self.srow.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                put(offset::SROW_X + 16 * r + 4 * c, &v.to_le_bytes());
            }
        }
        put(offset::MAGIC, MAGIC);
        b
    }

    pub fn element_type(&self) -> Result<ElementType> {
        element_type_of(self.datatype)
    }

    fn size_xyz(&self) -> Result<[usize; 3]> {
        if self.dim[0] != 3 {
            return Err(FormatError::UnsupportedDimensions(self.dim[0]));
        }
        let mut out = [0usize; 3];
        for (i, o) in out.iter_mut().enumerate() {
            let d = self.dim[i + 1];
            if d <= 0 {
                return Err(FormatError::InvalidValue {
                    key: format!("dim[{}]", i + 1),
                    value: d.to_string(),
                });
            }
            *o = d as usize;
        }
        Ok(out)
    }

    /// Voxel-to-RAS rotation (unit columns), spacing and offset, following
    /// sform, then qform, then pixdim only.
    fn ras_transform(&self) -> (Matrix3<f64>, [f64; 3], Vector3<f64>) {
        let spacing_of = |p: f32| if p > 0.0 { p as f64 } else { 1.0 };
        if self.sform_code > 0 {
            let s = &self.srow;
            let m = Matrix3::from_fn(|r, c| s[r][c] as f64);
            let norms = [0, 1, 2].map(|c| m.column(c).norm());
            let rot = Matrix3::from_fn(|r, c| if norms[c] > 0.0 { m[(r, c)] / norms[c] } else { 0.0 });
            let off = Vector3::new(s[0][3] as f64, s[1][3] as f64, s[2][3] as f64);
            return (rot, norms, off);
        }
        let spacing = [1, 2, 3].map(|i| spacing_of(self.pixdim[i].abs()));
        if self.qform_code > 0 {
            let [b, c, d] = self.quatern.map(|q| q as f64);
            let rot = quatern_to_rotation(b, c, d, self.pixdim[0] as f64);
            let off = Vector3::from(self.qoffset.map(|q| q as f64));
            return (rot, spacing, off);
        }
        (Matrix3::identity(), spacing, Vector3::zeros())
    }

    pub fn geometry(&self) -> Result<Geometry> {
        let [nx, ny, nz] = self.size_xyz()?;
        let (rot, spacing, off) = self.ras_transform();
        let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        let direction = flip * rot;
        let origin = flip * off;
        let g = Geometry {
            size: [nz, ny, nx],
            spacing: [spacing[2], spacing[1], spacing[0]],
            origin: [origin.x, origin.y, origin.z],
            direction,
        };
        g.validate()?;
        Ok(g)
    }

    fn for_volume(v: &Volume) -> Self {
        let g = v.geometry();
        let flip = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0));
        let ras = flip * g.direction;
        let origin = flip * Vector3::from(g.origin);
        let spacing_xyz = [g.spacing[2], g.spacing[1], g.spacing[0]];
        let (quatern, qfac) = rotation_to_quatern(&ras);
        let srow = std::array::from_fn(|r| {
            [
                (ras[(r, 0)] * spacing_xyz[0]) as f32,
                (ras[(r, 1)] * spacing_xyz[1]) as f32,
                (ras[(r, 2)] * spacing_xyz[2]) as f32,
                origin[r] as f32,
            ]
        });
        let et = v.element_type();
        NiftiHeader {
            dim: [3, g.size[2] as i16, g.size[1] as i16, g.size[0] as i16, 1, 1, 1, 1],
            datatype: datatype_code(et),
            bitpix: (et.byte_width() * 8) as i16,
            pixdim: [
                qfac as f32,
                spacing_xyz[0] as f32,
                spacing_xyz[1] as f32,
                spacing_xyz[2] as f32,
                0.0,
                0.0,
                0.0,
                0.0,
            ],
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: UNITS_MM,
            qform_code: XFORM_SCANNER,
            sform_code: XFORM_SCANNER,
            quatern: quatern.map(|q| q as f32),
            qoffset: [origin.x as f32, origin.y as f32, origin.z as f32],
            srow,
            big_endian: false,
        }
    }
}

/// Rotation from quaternion `(b, c, d)` with `a` recovered from unit norm;
/// `qfac < 0` negates the third column.
pub fn quatern_to_rotation(b: f64, c: f64, d: f64, qfac: f64) -> Matrix3<f64> {
    let (mut a, mut b, mut c, mut d) = (1.0 - (b * b + c * c + d * d), b, c, d);
    if a < 1e-7 {
        let s = 1.0 / (b * b + c * c + d * d).sqrt();
        b *= s;
        c *= s;
        d *= s;
        a = 0.0;
    } else {
        a = a.sqrt();
    }
    let q = if qfac < 0.0 { -1.0 } else { 1.0 };
    Matrix3::new(
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (b * d + a * c) * q,
        2.0 * (b * c + a * d),
        a * a + c * c - b * b - d * d,
        2.0 * (c * d - a * b) * q,
        2.0 * (b * d - a * c),
        2.0 * (c * d + a * b),
        (a * a + d * d - c * c - b * b) * q,
    )
}

/// Quaternion `(b, c, d)` and `qfac` of an orthonormal matrix.
pub fn rotation_to_quatern(m: &Matrix3<f64>) -> ([f64; 3], f64) {
    let mut r = *m;
    let qfac = if r.determinant() < 0.0 {
        r.set_column(2, &(-r.column(2)));
        -1.0
    } else {
        1.0
    };
    let (r11, r12, r13) = (r[(0, 0)], r[(0, 1)], r[(0, 2)]);
    let (r21, r22, r23) = (r[(1, 0)], r[(1, 1)], r[(1, 2)]);
    let (r31, r32, r33) = (r[(2, 0)], r[(2, 1)], r[(2, 2)]);
    let trace = r11 + r22 + r33 + 1.0;
    let (a, mut b, mut c, mut d);
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
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    ([b, c, d], qfac)
}

fn maybe_gunzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| FormatError::TruncatedCompressedStream(e.to_string()))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parses `.nii` bytes, gunzipping first when the gzip magic is present.
pub fn read_nifti_bytes(bytes: &[u8]) -> Result<Volume> {
    let bytes = maybe_gunzip(bytes)?;
    let header = NiftiHeader::parse(&bytes)?;
    let et = header.element_type()?;
    let geometry = header.geometry()?;
    let start = header.vox_offset.max(HEADER_SIZE as f32) as usize;
    let expected = geometry.voxel_count() * et.byte_width();
    let actual = bytes.len().saturating_sub(start);
    if actual != expected {
        return Err(FormatError::PayloadLengthMismatch { expected, actual });
    }
    let data = VoxelBuffer::from_bytes(et, &bytes[start..start + expected], header.big_endian);
    let (slope, inter) = (header.scl_slope as f64, header.scl_inter as f64);
    let scaled = slope.is_finite()
        && inter.is_finite()
        && slope != 0.0
        && (slope != 1.0 || inter != 0.0);
    let data = if scaled {
        VoxelBuffer::Float32(
            data.to_f64_vec()
                .into_iter()
                .map(|x| (x * slope + inter) as f32)
                .collect(),
        )
    } else {
        data
    };
    Ok(Volume::new(geometry, data)?)
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    read_nifti_bytes(&std::fs::read(path)?)
}

/// Reads only the 348-byte header (decompressing just that prefix for
/// `.nii.gz`).
pub fn read_nifti_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let mut head = magic[..n].to_vec();
    let mut rest = Vec::with_capacity(HEADER_SIZE);
    if head == GZIP_MAGIC {
        let mut all = head.clone();
        file.read_to_end(&mut all)?;
        MultiGzDecoder::new(&all[..])
            .take(HEADER_SIZE as u64)
            .read_to_end(&mut rest)
            .map_err(|e| FormatError::TruncatedCompressedStream(e.to_string()))?;
        head = rest;
    } else {
        file.take((HEADER_SIZE - n) as u64).read_to_end(&mut rest)?;
        head.extend_from_slice(&rest);
    }
    let header = NiftiHeader::parse(&head)?;
    Ok(VolumeHeader {
        geometry: header.geometry()?,
        element_type: header.element_type()?,
    })
}

/// Encodes an uncompressed `.nii` image.
pub fn write_nifti_bytes(v: &Volume) -> Result<Vec<u8>> {
    let g = v.geometry();
    if g.size.iter().any(|&n| n > i16::MAX as usize) {
        return Err(FormatError::UnsupportedLayout(format!(
            "size {:?} exceeds NIfTI-1 limits",
            g.size
        )));
    }
    let header = NiftiHeader::for_volume(v);
    let mut out = Vec::with_capacity(DEFAULT_VOX_OFFSET + v.len() * v.element_type().byte_width());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(&[0u8; DEFAULT_VOX_OFFSET - HEADER_SIZE]);
    out.extend_from_slice(&v.data().to_le_bytes());
    Ok(out)
}

/// Writes `.nii`, or gzip-compressed when the path ends in `.gz`.
pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_nifti_bytes(v)?;
    let gz = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let file = File::create(path)?;
    if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(&bytes)?;
        enc.finish()?;
    } else {
        let mut file = file;
        file.write_all(&bytes)?;
    }
    Ok(())
}
