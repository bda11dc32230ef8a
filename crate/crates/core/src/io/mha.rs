//! Single-file MetaImage (`.mha`) reader and writer.
//!
//! The header is a sequence of `Key = Value` text lines ending with
//! `ElementDataFile = LOCAL`; the voxel payload follows immediately, either
//! raw little-endian or as one zlib stream. Header vectors are in file order
//! `[X, Y, Z]` and are converted to `[Z, Y, X]` on read.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use nalgebra::Matrix3;

use super::{FormatError, Result, VolumeHeader};
use crate::volume::{ElementType, Geometry, Volume, VoxelBuffer};

/// Keys consumed by the parser. Anything else is kept verbatim.
const DROPPED_KEYS: [&str; 6] = [
    "BinaryData",
    "CenterOfRotation",
    "AnatomicalOrientation",
    "ElementNumberOfChannels",
    "ElementSize",
    "HeaderSize",
];

pub fn element_type_tag(et: ElementType) -> &'static str {
    match et {
        ElementType::Int8 => "MET_CHAR",
        ElementType::Uint8 => "MET_UCHAR",
        ElementType::Int16 => "MET_SHORT",
        ElementType::Uint16 => "MET_USHORT",
        ElementType::Int32 => "MET_INT",
        ElementType::Uint32 => "MET_UINT",
        ElementType::Float32 => "MET_FLOAT",
        ElementType::Float64 => "MET_DOUBLE",
    }
}

fn parse_element_type(tag: &str) -> Result<ElementType> {
    Ok(match tag {
        "MET_CHAR" => ElementType::Int8,
        "MET_UCHAR" => ElementType::Uint8,
        "MET_SHORT" => ElementType::Int16,
        "MET_USHORT" => ElementType::Uint16,
        "MET_INT" | "MET_LONG" => ElementType::Int32,
        "MET_UINT" | "MET_ULONG" => ElementType::Uint32,
        "MET_FLOAT" => ElementType::Float32,
        "MET_DOUBLE" => ElementType::Float64,
        other => return Err(FormatError::UnsupportedElementType(other.to_string())),
    })
}

/// Parsed MetaImage header.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaHeader {
    /// File order `[X, Y, Z]`.
    pub dim_size: [usize; 3],
    pub element_type: ElementType,
    /// File order `[X, Y, Z]`.
    pub element_spacing: [f64; 3],
    pub offset: [f64; 3],
    /// Row `i` is the world direction of index axis `i` (x, y, z).
    pub transform_matrix: [f64; 9],
    pub compressed: bool,
    pub compressed_size: Option<usize>,
    pub big_endian: bool,
    pub extra: Vec<(String, String)>,
}

impl MhaHeader {
    pub fn geometry(&self) -> Geometry {
        let t = &self.transform_matrix;
        // Columns of the direction matrix are the rows of TransformMatrix.
        let direction = Matrix3::new(t[0], t[3], t[6], t[1], t[4], t[7], t[2], t[5], t[8]);
        let [sx, sy, sz] = self.element_spacing;
        let [nx, ny, nz] = self.dim_size;
        Geometry {
            size: [nz, ny, nx],
            spacing: [sz, sy, sx],
            origin: self.offset,
            direction,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.dim_size.iter().product::<usize>() * self.element_type.byte_width()
    }
}

fn parse_values<T: std::str::FromStr>(key: &str, value: &str, n: usize) -> Result<Vec<T>> {
    let invalid = || FormatError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
    };
    let parsed: Vec<T> = value
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| invalid()))
        .collect::<Result<_>>()?;
    if parsed.len() != n {
        return Err(invalid());
    }
    Ok(parsed)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(FormatError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
        }),
    }
}

#[derive(Default)]
struct HeaderBuilder {
    ndims: Option<usize>,
    dim_size: Option<[usize; 3]>,
    element_type: Option<ElementType>,
    spacing: Option<[f64; 3]>,
    element_size: Option<[f64; 3]>,
    offset: Option<[f64; 3]>,
    transform: Option<[f64; 9]>,
    compressed: bool,
    compressed_size: Option<usize>,
    big_endian: bool,
    extra: Vec<(String, String)>,
}

impl HeaderBuilder {
    /// Feeds one header line. Returns true once `ElementDataFile` is seen.
    fn line(&mut self, raw: &str) -> Result<bool> {
        let line = raw.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            return Ok(false);
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| FormatError::MalformedHeader(line.to_string()))?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(FormatError::MalformedHeader(line.to_string()));
        }
        let to3 = |v: Vec<f64>| [v[0], v[1], v[2]];
        match key {
            "ObjectType" => {
                if value != "Image" {
                    return Err(FormatError::UnsupportedLayout(format!("ObjectType {value}")));
                }
            }
            "NDims" => {
                let n = parse_values::<usize>(key, value, 1)?[0];
                if n != 3 {
                    return Err(FormatError::UnsupportedLayout(format!("NDims {n}")));
                }
                self.ndims = Some(n);
            }
            "DimSize" => {
                let v = parse_values::<usize>(key, value, 3)?;
                if v.contains(&0) {
                    return Err(FormatError::InvalidValue {
                        key: key.into(),
                        value: value.into(),
                    });
                }
                self.dim_size = Some([v[0], v[1], v[2]]);
            }
            "ElementType" => self.element_type = Some(parse_element_type(value)?),
            "ElementSpacing" => self.spacing = Some(to3(parse_values(key, value, 3)?)),
            "ElementSize" => self.element_size = Some(to3(parse_values(key, value, 3)?)),
            "Offset" | "Origin" | "Position" => self.offset = Some(to3(parse_values(key, value, 3)?)),
            "TransformMatrix" | "Rotation" | "Orientation" => {
                let v = parse_values::<f64>(key, value, 9)?;
                let mut m = [0.0; 9];
                m.copy_from_slice(&v);
                self.transform = Some(m);
            }
            "CompressedData" => self.compressed = parse_bool(key, value)?,
            "CompressedDataSize" => {
                self.compressed_size = Some(parse_values::<usize>(key, value, 1)?[0]);
            }
            "BinaryDataByteOrderMSB" | "ElementByteOrderMSB" => {
                self.big_endian = parse_bool(key, value)?;
            }
            "ElementNumberOfChannels" => {
                if parse_values::<usize>(key, value, 1)?[0] != 1 {
                    return Err(FormatError::UnsupportedLayout(format!(
                        "ElementNumberOfChannels {value}"
                    )));
                }
            }
            "HeaderSize" => {
                let h = parse_values::<i64>(key, value, 1)?[0];
                if h > 0 {
                    return Err(FormatError::UnsupportedLayout(format!("HeaderSize {h}")));
                }
            }
            "ElementDataFile" => {
                if value != "LOCAL" {
                    return Err(FormatError::ExternalDataFile(value.to_string()));
                }
                return Ok(true);
            }
            k if DROPPED_KEYS.contains(&k) => {}
            _ => self.extra.push((key.to_string(), value.to_string())),
        }
        Ok(false)
    }

    fn finish(self) -> Result<MhaHeader> {
        self.ndims.ok_or(FormatError::MissingKey("NDims"))?;
        let header = MhaHeader {
            dim_size: self.dim_size.ok_or(FormatError::MissingKey("DimSize"))?,
            element_type: self.element_type.ok_or(FormatError::MissingKey("ElementType"))?,
            element_spacing: self.spacing.or(self.element_size).unwrap_or([1.0; 3]),
            offset: self.offset.unwrap_or([0.0; 3]),
            transform_matrix: self
                .transform
                .unwrap_or([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
            compressed: self.compressed,
            compressed_size: self.compressed_size,
            big_endian: self.big_endian,
            extra: self.extra,
        };
        header.geometry().validate()?;
        Ok(header)
    }
}

/// Parses the text header; returns it with the byte offset of the payload.
pub fn parse_header(bytes: &[u8]) -> Result<(MhaHeader, usize)> {
    let mut builder = HeaderBuilder::default();
    let mut pos = 0;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i + 1)
            .unwrap_or(bytes.len());
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| FormatError::MalformedHeader(String::from_utf8_lossy(&bytes[pos..end]).into()))?;
        pos = end;
        if builder.line(line)? {
            return Ok((builder.finish()?, pos));
        }
    }
    Err(FormatError::MissingKey("ElementDataFile"))
}

fn decode_payload(header: &MhaHeader, payload: &[u8]) -> Result<VoxelBuffer> {
    let expected = header.payload_len();
    let raw;
    let data: &[u8] = if header.compressed {
        let stream = match header.compressed_size {
            Some(n) if n > payload.len() => {
                return Err(FormatError::TruncatedCompressedStream(format!(
                    "CompressedDataSize {n} exceeds the {} bytes present",
                    payload.len()
                )))
            }
            Some(n) => &payload[..n],
            None => payload,
        };
        let mut out = Vec::with_capacity(expected);
        ZlibDecoder::new(stream)
            .take(expected as u64 + 1)
            .read_to_end(&mut out)
            .map_err(|e| FormatError::TruncatedCompressedStream(e.to_string()))?;
        raw = out;
        &raw
    } else {
        payload
    };
    if data.len() != expected {
        return Err(FormatError::PayloadLengthMismatch {
            expected,
            actual: data.len(),
        });
    }
    Ok(VoxelBuffer::from_bytes(header.element_type, data, header.big_endian))
}

pub fn read_mha_bytes(bytes: &[u8]) -> Result<Volume> {
    let (header, offset) = parse_header(bytes)?;
    let data = decode_payload(&header, &bytes[offset..])?;
    Ok(Volume::new(header.geometry(), data)?.with_extra(header.extra))
}

pub fn read_mha(path: impl AsRef<Path>) -> Result<Volume> {
    read_mha_bytes(&std::fs::read(path)?)
}

/// Reads only the text header.
pub fn read_mha_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut builder = HeaderBuilder::default();
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            return Err(FormatError::MissingKey("ElementDataFile"));
        }
        let text = std::str::from_utf8(&line)
            .map_err(|_| FormatError::MalformedHeader(String::from_utf8_lossy(&line).into()))?;
        if builder.line(text)? {
            let header = builder.finish()?;
            return Ok(VolumeHeader {
                geometry: header.geometry(),
                element_type: header.element_type,
            });
        }
    }
}

fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Serializes `v` to MetaImage bytes.
pub fn write_mha_bytes(v: &Volume, compress: bool) -> Result<Vec<u8>> {
    let g = v.geometry();
    let d = &g.direction;
    let raw = v.data().to_le_bytes();
    let payload = if compress {
        let mut enc = ZlibEncoder::new(Vec::with_capacity(raw.len() / 4), Compression::default());
        enc.write_all(&raw)?;
        enc.finish()?
    } else {
        raw
    };
    let transform = (0..3).flat_map(|axis| (0..3).map(move |w| d[(w, axis)]));
    let mut header = String::new();
    let mut kv = |k: &str, val: String| {
        header.push_str(k);
        header.push_str(" = ");
        header.push_str(&val);
        header.push('\n');
    };
    kv("ObjectType", "Image".into());
    kv("NDims", "3".into());
    kv("DimSize", join([g.size[2], g.size[1], g.size[0]]));
    kv("ElementType", element_type_tag(v.element_type()).into());
    kv("ElementSpacing", join([g.spacing[2], g.spacing[1], g.spacing[0]]));
    kv("Offset", join(g.origin));
    kv("TransformMatrix", join(transform));
    kv("CompressedData", if compress { "True" } else { "False" }.into());
    if compress {
        kv("CompressedDataSize", payload.len().to_string());
    }
    for (k, val) in v.extra() {
        kv(k, val.clone());
    }
    kv("ElementDataFile", "LOCAL".into());
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_mha(v: &Volume, path: impl AsRef<Path>, compress: bool) -> Result<()> {
    let bytes = write_mha_bytes(v, compress)?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built header following the MetaIO text grammar.
    fn hand_built(payload_len: usize) -> Vec<u8> {
        let mut bytes = b"ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementType = MET_UCHAR\n\
ElementSpacing = 1 1 1\nOffset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\n\
CompressedData = False\nElementDataFile = LOCAL\n"
            .to_vec();
        bytes.extend((0..payload_len).map(|i| i as u8));
        bytes
    }

    #[test]
    fn reads_hand_built_file() {
        let v = read_mha_bytes(&hand_built(64)).unwrap();
        assert_eq!(v.size(), [4, 4, 4]);
        assert_eq!(v.element_type(), ElementType::Uint8);
        assert_eq!(v.data(), &VoxelBuffer::Uint8((0..64).collect()));
        // Voxel [z=1, y=0, x=0] is byte 16.
        assert_eq!(v.value([1, 0, 0]), 16.0);
    }

    #[test]
    fn short_payload_is_length_mismatch() {
        let err = read_mha_bytes(&hand_built(63)).unwrap_err();
        assert!(matches!(
            err,
            FormatError::PayloadLengthMismatch { expected: 64, actual: 63 }
        ));
        assert_eq!(err.name(), "PayloadLengthMismatch");
    }

    #[test]
    fn malformed_key_is_reported() {
        let bytes = b"ObjectType = Image\nthis line has no equals\n";
        assert!(matches!(
            read_mha_bytes(bytes),
            Err(FormatError::MalformedHeader(_))
        ));
    }

    #[test]
    fn unsupported_element_type() {
        let bytes = b"NDims = 3\nDimSize = 1 1 1\nElementType = MET_LONG_LONG\nElementDataFile = LOCAL\n";
        assert!(matches!(
            read_mha_bytes(bytes),
            Err(FormatError::UnsupportedElementType(_))
        ));
    }

    #[test]
    fn external_data_file_is_rejected() {
        let bytes = b"NDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = x.raw\n";
        assert!(matches!(
            read_mha_bytes(bytes),
            Err(FormatError::ExternalDataFile(_))
        ));
    }

    #[test]
    fn truncated_compressed_stream() {
        let g = Geometry::new([8, 8, 8], [1.0; 3]);
        let v = Volume::from_vec(g, (0..512).map(|i| (i % 7) as i16).collect()).unwrap();
        let bytes = write_mha_bytes(&v, true).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(
            read_mha_bytes(cut),
            Err(FormatError::TruncatedCompressedStream(_))
        ));
    }

    #[test]
    fn header_key_order_is_fixed() {
        let g = Geometry::new([1, 1, 2], [1.0; 3]);
        let v = Volume::from_vec(g, vec![1u8, 2])
            .unwrap()
            .with_extra(vec![("Modality".into(), "MET_MOD_CT".into())]);
        let bytes = write_mha_bytes(&v, false).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let keys: Vec<&str> = text
            .lines()
            .take(10)
            .map(|l| l.split(" = ").next().unwrap())
            .collect();
        assert_eq!(
            keys,
            [
                "ObjectType",
                "NDims",
                "DimSize",
                "ElementType",
                "ElementSpacing",
                "Offset",
                "TransformMatrix",
                "CompressedData",
                "Modality",
                "ElementDataFile"
            ]
        );
        assert!(text.contains("DimSize = 2 1 1\n"));
        let back = read_mha_bytes(&bytes).unwrap();
        assert_eq!(back.extra(), v.extra());
    }

    #[test]
    fn transform_matrix_rows_are_axis_directions() {
        let bytes = b"NDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\n\
TransformMatrix = 0 1 0 -1 0 0 0 0 1\nElementDataFile = LOCAL\n\x07";
        let v = read_mha_bytes(bytes).unwrap();
        // Index axis x points along world +y.
        assert_eq!(v.geometry().axis_direction(2).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(v.geometry().axis_direction(1).as_slice(), &[-1.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_volume_compresses_below_one_percent() {
        let g = Geometry::new([32, 32, 32], [1.0; 3]);
        let v = Volume::from_vec(g, vec![-1000i16; 32 * 32 * 32]).unwrap();
        let raw = v.data().to_le_bytes().len();
        let compressed = write_mha_bytes(&v, true).unwrap();
        let (header, offset) = parse_header(&compressed).unwrap();
        let payload = compressed.len() - offset;
        assert_eq!(header.compressed_size, Some(payload));
        assert!((payload as f64) < 0.01 * raw as f64, "{payload} vs {raw}");
        // Any conforming zlib decoder recovers the raw bytes.
        let mut out = Vec::new();
        flate2::read::ZlibDecoder::new(&compressed[offset..])
            .read_to_end(&mut out)
            .unwrap();
        assert_eq!(out, v.data().to_le_bytes());
    }
}
