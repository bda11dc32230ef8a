//! Volume file formats: single-file MetaImage (`.mha`) and NIfTI-1
//! (`.nii`, `.nii.gz`).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::volume::{ElementType, Geometry, Volume, VolumeError};

pub mod mha;
pub mod nifti;

pub use mha::{read_mha, read_mha_bytes, write_mha, write_mha_bytes};
pub use nifti::{read_nifti, read_nifti_bytes, write_nifti, write_nifti_bytes};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header line {0:?}")]
    MalformedHeader(String),
    #[error("missing header key {0}")]
    MissingKey(&'static str),
    #[error("invalid value {value:?} for header key {key}")]
    InvalidValue { key: String, value: String },
    #[error("unsupported element type {0}")]
    UnsupportedElementType(String),
    #[error("unsupported image layout: {0}")]
    UnsupportedLayout(String),
    #[error("external data file {0:?} is not supported, only LOCAL")]
    ExternalDataFile(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLengthMismatch { expected: usize, actual: usize },
    #[error("truncated compressed stream: {0}")]
    TruncatedCompressedStream(String),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported dimensionality dim[0] = {0}, only 3 is accepted")]
    UnsupportedDimensions(i16),
    #[error("cannot determine format of {0}")]
    UnknownFormat(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(#[from] VolumeError),
}

impl FormatError {
    /// Stable identifier of the error kind, used in service responses.
    pub fn name(&self) -> &'static str {
        match self {
            FormatError::Io(_) => "Io",
            FormatError::MalformedHeader(_) => "MalformedHeader",
            FormatError::MissingKey(_) => "MissingKey",
            FormatError::InvalidValue { .. } => "InvalidValue",
            FormatError::UnsupportedElementType(_) => "UnsupportedElementType",
            FormatError::UnsupportedLayout(_) => "UnsupportedLayout",
            FormatError::ExternalDataFile(_) => "ExternalDataFile",
            FormatError::PayloadLengthMismatch { .. } => "PayloadLengthMismatch",
            FormatError::TruncatedCompressedStream(_) => "TruncatedCompressedStream",
            FormatError::TruncatedHeader => "TruncatedHeader",
            FormatError::BadMagic => "BadMagic",
            FormatError::UnsupportedDatatype(_) => "UnsupportedDatatype",
            FormatError::UnsupportedDimensions(_) => "UnsupportedDimensions",
            FormatError::UnknownFormat(_) => "UnknownFormat",
            FormatError::InvalidGeometry(_) => "InvalidGeometry",
        }
    }
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Mha,
    Nifti,
    Unknown,
}

/// Geometry and scalar kind of a file, read without decoding voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub geometry: Geometry,
    pub element_type: ElementType,
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Extensions recognised as volume files, longest first.
pub const VOLUME_EXTENSIONS: [&str; 3] = [".nii.gz", ".mha", ".nii"];

/// Splits a file name into `(stem, extension)` if it carries a known volume
/// extension.
pub fn split_volume_name(name: &str) -> Option<(&str, &'static str)> {
    VOLUME_EXTENSIONS.iter().find_map(|ext| {
        name.strip_suffix(ext)
            .filter(|stem| !stem.is_empty())
            .map(|stem| (stem, *ext))
    })
}

fn format_from_extension(path: &Path) -> Format {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase();
    match split_volume_name(&name) {
        Some((_, ".mha")) => Format::Mha,
        Some(_) => Format::Nifti,
        None => Format::Unknown,
    }
}

fn looks_like_mha(bytes: &[u8]) -> bool {
    let line_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .unwrap_or(bytes.len());
    let Ok(line) = std::str::from_utf8(&bytes[..line_end]) else {
        return false;
    };
    let Some((key, _)) = line.split_once('=') else {
        return false;
    };
    let key = key.trim();
    !key.is_empty() && key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Classifies raw file contents by magic bytes. Gzip streams are reported
/// as NIfTI only when they decompress to a NIfTI header.
pub fn detect_bytes(bytes: &[u8]) -> Format {
    if bytes.is_empty() {
        return Format::Unknown;
    }
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut head = Vec::with_capacity(nifti::HEADER_SIZE);
        let decoder = flate2::read::MultiGzDecoder::new(bytes);
        if decoder
            .take(nifti::HEADER_SIZE as u64)
            .read_to_end(&mut head)
            .is_ok()
            && nifti::has_nifti_magic(&head)
        {
            return Format::Nifti;
        }
        return Format::Unknown;
    }
    if nifti::has_nifti_magic(bytes) {
        return Format::Nifti;
    }
    if looks_like_mha(bytes) {
        return Format::Mha;
    }
    Format::Unknown
}

/// Format of `path` by magic bytes, falling back to the extension only when
/// the file cannot be opened. Empty and unrecognised files are `Unknown`.
pub fn detect_format(path: impl AsRef<Path>) -> Format {
    let path = path.as_ref();
    let Ok(file) = File::open(path) else {
        return format_from_extension(path);
    };
    let mut head = Vec::with_capacity(512);
    if file.take(512).read_to_end(&mut head).is_err() {
        return format_from_extension(path);
    }
    detect_bytes(&head)
}

/// Reads a volume in whichever supported format `path` holds.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    match detect_format(path) {
        Format::Mha => read_mha(path),
        Format::Nifti => read_nifti(path),
        Format::Unknown => Err(FormatError::UnknownFormat(path.display().to_string())),
    }
}

/// Parses an in-memory file of either format.
pub fn read_volume_bytes(bytes: &[u8]) -> Result<Volume> {
    match detect_bytes(bytes) {
        Format::Mha => read_mha_bytes(bytes),
        Format::Nifti => read_nifti_bytes(bytes),
        Format::Unknown => Err(FormatError::UnknownFormat("<bytes>".into())),
    }
}

pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let path = path.as_ref();
    match detect_format(path) {
        Format::Mha => mha::read_mha_header(path),
        Format::Nifti => nifti::read_nifti_header(path),
        Format::Unknown => Err(FormatError::UnknownFormat(path.display().to_string())),
    }
}

/// Output options for [`write_volume`].
#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    /// zlib-compress MetaImage payloads. NIfTI compression follows the
    /// `.gz` suffix instead.
    pub compress: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions { compress: true }
    }
}

/// Writes `v` in the format implied by the extension of `path`.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>, options: WriteOptions) -> Result<()> {
    let path = path.as_ref();
    match format_from_extension(path) {
        Format::Mha => write_mha(v, path, options.compress),
        Format::Nifti => write_nifti(v, path),
        Format::Unknown => Err(FormatError::UnknownFormat(path.display().to_string())),
    }
}
