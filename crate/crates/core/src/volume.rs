//! In-memory volume representation.
//!
//! A [`Volume`] couples a voxel buffer with the geometry needed to place every
//! voxel in the world: size, spacing, origin and direction cosines. All index
//! triples are in `[Z, Y, X]` order (Z slowest, X fastest in the buffer). World
//! coordinates are LPS (`+x` Left, `+y` Posterior, `+z` Superior) in
//! millimeters, and refer to voxel centers.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on unit-norm columns and `|det| == 1` of direction matrices.
pub const DIRECTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("voxel buffer holds {actual} values but size {size:?} needs {expected}")]
    BufferLength {
        size: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("size must be positive on every axis, got {0:?}")]
    EmptyAxis([usize; 3]),
    #[error("spacing must be finite and positive, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("direction matrix is not orthonormal: {0}")]
    InvalidDirection(String),
    #[error("origin must be finite, got {0:?}")]
    InvalidOrigin([f64; 3]),
}

/// Scalar kind of a voxel buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    Int8,
    Uint8,
    Int16,
    Uint16,
    Int32,
    Uint32,
    Float32,
    Float64,
}

impl ElementType {
    pub const ALL: [ElementType; 8] = [
        ElementType::Int8,
        ElementType::Uint8,
        ElementType::Int16,
        ElementType::Uint16,
        ElementType::Int32,
        ElementType::Uint32,
        ElementType::Float32,
        ElementType::Float64,
    ];

    pub fn byte_width(self) -> usize {
        match self {
            ElementType::Int8 | ElementType::Uint8 => 1,
            ElementType::Int16 | ElementType::Uint16 => 2,
            ElementType::Int32 | ElementType::Uint32 | ElementType::Float32 => 4,
            ElementType::Float64 => 8,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, ElementType::Float32 | ElementType::Float64)
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementType::Int8 => "int8",
            ElementType::Uint8 => "uint8",
            ElementType::Int16 => "int16",
            ElementType::Uint16 => "uint16",
            ElementType::Int32 => "int32",
            ElementType::Uint32 => "uint32",
            ElementType::Float32 => "float32",
            ElementType::Float64 => "float64",
        }
    }

    /// Inclusive value range representable by this type.
    pub fn range(self) -> (f64, f64) {
        match self {
            ElementType::Int8 => (i8::MIN as f64, i8::MAX as f64),
            ElementType::Uint8 => (0.0, u8::MAX as f64),
            ElementType::Int16 => (i16::MIN as f64, i16::MAX as f64),
            ElementType::Uint16 => (0.0, u16::MAX as f64),
            ElementType::Int32 => (i32::MIN as f64, i32::MAX as f64),
            ElementType::Uint32 => (0.0, u32::MAX as f64),
            ElementType::Float32 => (f32::MIN as f64, f32::MAX as f64),
            ElementType::Float64 => (f64::MIN, f64::MAX),
        }
    }
}

impl fmt::Display for ElementType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Primitive types that can live in a [`VoxelBuffer`].
pub trait Scalar: Copy + PartialOrd + Send + Sync + 'static {
    const ELEMENT_TYPE: ElementType;

    fn to_f64(self) -> f64;
    /// Converts with round-half-away-from-zero and saturation for integer types.
    fn from_f64(value: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn read_be(bytes: &[u8]) -> Self;
    fn wrap(values: Vec<Self>) -> VoxelBuffer;
}

macro_rules! impl_scalar {
    ($ty:ty, $variant:ident, $et:expr, int) => {
        impl_scalar!(@common $ty, $variant, $et, |v: f64| {
            if v.is_nan() {
                0 as $ty
            } else {
                // `as` saturates for float -> int.
                v.round() as $ty
            }
        });
    };
    ($ty:ty, $variant:ident, $et:expr, float) => {
        impl_scalar!(@common $ty, $variant, $et, |v: f64| v as $ty);
    };
    (@common $ty:ty, $variant:ident, $et:expr, $conv:expr) => {
        impl Scalar for $ty {
            const ELEMENT_TYPE: ElementType = $et;

            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }

            #[inline]
            fn from_f64(value: f64) -> Self {
                let conv = $conv;
                conv(value)
            }

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                <$ty>::from_le_bytes(bytes.try_into().expect("chunk width"))
            }

            #[inline]
            fn read_be(bytes: &[u8]) -> Self {
                <$ty>::from_be_bytes(bytes.try_into().expect("chunk width"))
            }

            fn wrap(values: Vec<Self>) -> VoxelBuffer {
                VoxelBuffer::$variant(values)
            }
        }
    };
}

impl_scalar!(i8, Int8, ElementType::Int8, int);
impl_scalar!(u8, Uint8, ElementType::Uint8, int);
impl_scalar!(i16, Int16, ElementType::Int16, int);
impl_scalar!(u16, Uint16, ElementType::Uint16, int);
impl_scalar!(i32, Int32, ElementType::Int32, int);
impl_scalar!(u32, Uint32, ElementType::Uint32, int);
impl_scalar!(f32, Float32, ElementType::Float32, float);
impl_scalar!(f64, Float64, ElementType::Float64, float);

/// Typed, contiguous voxel storage.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelBuffer {
    Int8(Vec<i8>),
    Uint8(Vec<u8>),
    Int16(Vec<i16>),
    Uint16(Vec<u16>),
    Int32(Vec<i32>),
    Uint32(Vec<u32>),
    Float32(Vec<f32>),
    Float64(Vec<f64>),
}

/// Runs `$body` with `$v` bound to the inner `Vec<T>` of a [`VoxelBuffer`].
#[macro_export]
macro_rules! with_buffer {
    ($buf:expr, $v:ident => $body:expr) => {
        match $buf {
            $crate::volume::VoxelBuffer::Int8($v) => $body,
            $crate::volume::VoxelBuffer::Uint8($v) => $body,
            $crate::volume::VoxelBuffer::Int16($v) => $body,
            $crate::volume::VoxelBuffer::Uint16($v) => $body,
            $crate::volume::VoxelBuffer::Int32($v) => $body,
            $crate::volume::VoxelBuffer::Uint32($v) => $body,
            $crate::volume::VoxelBuffer::Float32($v) => $body,
            $crate::volume::VoxelBuffer::Float64($v) => $body,
        }
    };
}

impl VoxelBuffer {
    pub fn zeros(element_type: ElementType, len: usize) -> Self {
        match element_type {
            ElementType::Int8 => VoxelBuffer::Int8(vec![0; len]),
            ElementType::Uint8 => VoxelBuffer::Uint8(vec![0; len]),
            ElementType::Int16 => VoxelBuffer::Int16(vec![0; len]),
            ElementType::Uint16 => VoxelBuffer::Uint16(vec![0; len]),
            ElementType::Int32 => VoxelBuffer::Int32(vec![0; len]),
            ElementType::Uint32 => VoxelBuffer::Uint32(vec![0; len]),
            ElementType::Float32 => VoxelBuffer::Float32(vec![0.0; len]),
            ElementType::Float64 => VoxelBuffer::Float64(vec![0.0; len]),
        }
    }

    pub fn element_type(&self) -> ElementType {
        match self {
            VoxelBuffer::Int8(_) => ElementType::Int8,
            VoxelBuffer::Uint8(_) => ElementType::Uint8,
            VoxelBuffer::Int16(_) => ElementType::Int16,
            VoxelBuffer::Uint16(_) => ElementType::Uint16,
            VoxelBuffer::Int32(_) => ElementType::Int32,
            VoxelBuffer::Uint32(_) => ElementType::Uint32,
            VoxelBuffer::Float32(_) => ElementType::Float32,
            VoxelBuffer::Float64(_) => ElementType::Float64,
        }
    }

    pub fn len(&self) -> usize {
        with_buffer!(self, v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get_f64(&self, index: usize) -> f64 {
        with_buffer!(self, v => v[index].to_f64())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        with_buffer!(self, v => v.iter().map(|x| x.to_f64()).collect())
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        with_buffer!(self, v => v.iter().map(|x| x.to_f64() as f32).collect())
    }

    /// Builds a buffer of `element_type` from real values, rounding and
    /// saturating for integer types.
    pub fn from_f64_slice(element_type: ElementType, values: &[f64]) -> Self {
        fn conv<T: Scalar>(values: &[f64]) -> VoxelBuffer {
            T::wrap(values.iter().map(|&x| T::from_f64(x)).collect())
        }
        match element_type {
            ElementType::Int8 => conv::<i8>(values),
            ElementType::Uint8 => conv::<u8>(values),
            ElementType::Int16 => conv::<i16>(values),
            ElementType::Uint16 => conv::<u16>(values),
            ElementType::Int32 => conv::<i32>(values),
            ElementType::Uint32 => conv::<u32>(values),
            ElementType::Float32 => conv::<f32>(values),
            ElementType::Float64 => conv::<f64>(values),
        }
    }

    /// New buffer where `out[i] = self[indices[i]]`.
    pub fn gather(&self, indices: &[usize]) -> Self {
        with_buffer!(self, v => Scalar::wrap(indices.iter().map(|&i| v[i]).collect()))
    }

    /// Copies every value whose mask entry is set to `fill` (converted to the
    /// buffer type).
    pub fn fill_where(&mut self, mask: impl Fn(usize) -> bool, fill: f64) {
        with_buffer!(self, v => {
            let value = Scalar::from_f64(fill);
            for (i, x) in v.iter_mut().enumerate() {
                if mask(i) {
                    *x = value;
                }
            }
        })
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        with_buffer!(self, v => {
            let mut iter = v.iter().map(|x| x.to_f64());
            let first = iter.next()?;
            Some(iter.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
        })
    }

    /// Little-endian byte image of the buffer.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * self.element_type().byte_width());
        with_buffer!(self, v => v.iter().for_each(|x| x.write_le(&mut out)));
        out
    }

    /// Decodes `bytes` as `len` values. The caller must pass exactly
    /// `len * byte_width` bytes.
    pub fn from_bytes(element_type: ElementType, bytes: &[u8], big_endian: bool) -> Self {
        fn decode<T: Scalar>(bytes: &[u8], width: usize, be: bool) -> VoxelBuffer {
            let values = bytes
                .chunks_exact(width)
                .map(|c| if be { T::read_be(c) } else { T::read_le(c) })
                .collect();
            T::wrap(values)
        }
        let w = element_type.byte_width();
        match element_type {
            ElementType::Int8 => decode::<i8>(bytes, w, big_endian),
            ElementType::Uint8 => decode::<u8>(bytes, w, big_endian),
            ElementType::Int16 => decode::<i16>(bytes, w, big_endian),
            ElementType::Uint16 => decode::<u16>(bytes, w, big_endian),
            ElementType::Int32 => decode::<i32>(bytes, w, big_endian),
            ElementType::Uint32 => decode::<u32>(bytes, w, big_endian),
            ElementType::Float32 => decode::<f32>(bytes, w, big_endian),
            ElementType::Float64 => decode::<f64>(bytes, w, big_endian),
        }
    }

    /// Bitwise equality (distinguishes NaN payloads and signed zeros).
    pub fn bit_eq(&self, other: &VoxelBuffer) -> bool {
        self.element_type() == other.element_type() && self.to_le_bytes() == other.to_le_bytes()
    }
}

/// Spatial placement of a voxel grid.
///
/// `direction` holds one unit column per spatial index axis in `x, y, z`
/// order: column 0 is the world direction of increasing X index (fastest
/// axis), column 2 that of increasing Z index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub direction: Matrix3<f64>,
}

impl Geometry {
    pub fn new(size: [usize; 3], spacing: [f64; 3]) -> Self {
        Geometry {
            size,
            spacing,
            origin: [0.0; 3],
            direction: Matrix3::identity(),
        }
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_direction(mut self, direction: Matrix3<f64>) -> Self {
        self.direction = direction;
        self
    }

    pub fn voxel_count(&self) -> usize {
        self.size.iter().product()
    }

    pub fn validate(&self) -> Result<(), VolumeError> {
        if self.size.contains(&0) {
            return Err(VolumeError::EmptyAxis(self.size));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(VolumeError::InvalidSpacing(self.spacing));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::InvalidOrigin(self.origin));
        }
        validate_direction(&self.direction)
    }

    /// Row-major linear offset of `[z, y, x]`.
    #[inline]
    pub fn linear_index(&self, index: [usize; 3]) -> usize {
        (index[0] * self.size[1] + index[1]) * self.size[2] + index[2]
    }

    #[inline]
    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let x = linear % self.size[2];
        let rest = linear / self.size[2];
        [rest / self.size[1], rest % self.size[1], x]
    }

    /// World position (LPS, mm) of a continuous `[z, y, x]` index.
    pub fn index_to_physical(&self, index: [f64; 3]) -> [f64; 3] {
        let scaled = Vector3::new(
            index[2] * self.spacing[2],
            index[1] * self.spacing[1],
            index[0] * self.spacing[0],
        );
        let w = Vector3::from(self.origin) + self.direction * scaled;
        [w.x, w.y, w.z]
    }

    /// Continuous `[z, y, x]` index of a world point; inverse of
    /// [`Geometry::index_to_physical`].
    pub fn physical_to_index(&self, point: [f64; 3]) -> [f64; 3] {
        let inv = self
            .direction
            .try_inverse()
            .expect("validated direction matrices are invertible");
        let local = inv * (Vector3::from(point) - Vector3::from(self.origin));
        [
            local.z / self.spacing[0],
            local.y / self.spacing[1],
            local.x / self.spacing[2],
        ]
    }

    /// Physical extent `size * spacing` per axis, `[z, y, x]`.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.size[a] as f64 * self.spacing[a])
    }

    /// World direction column of index axis `axis` (0 = Z, 2 = X).
    pub fn axis_direction(&self, axis: usize) -> Vector3<f64> {
        self.direction.column(2 - axis).into_owned()
    }
}

pub fn validate_direction(direction: &Matrix3<f64>) -> Result<(), VolumeError> {
    if direction.iter().any(|v| !v.is_finite()) {
        return Err(VolumeError::InvalidDirection("non-finite entry".into()));
    }
    for (j, col) in direction.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > DIRECTION_TOLERANCE {
            return Err(VolumeError::InvalidDirection(format!(
                "column {j} has norm {norm}"
            )));
        }
    }
    let det = direction.determinant();
    if (det.abs() - 1.0).abs() > DIRECTION_TOLERANCE {
        return Err(VolumeError::InvalidDirection(format!("determinant {det}")));
    }
    Ok(())
}

/// A voxel buffer with its geometry.
///
/// `extra` carries header entries this crate does not interpret (for example
/// unknown MetaImage keys); writers re-emit them verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    geometry: Geometry,
    data: VoxelBuffer,
    extra: Vec<(String, String)>,
}

impl Volume {
    pub fn new(geometry: Geometry, data: VoxelBuffer) -> Result<Self, VolumeError> {
        geometry.validate()?;
        let expected = geometry.voxel_count();
        if data.len() != expected {
            return Err(VolumeError::BufferLength {
                size: geometry.size,
                expected,
                actual: data.len(),
            });
        }
        Ok(Volume {
            geometry,
            data,
            extra: Vec::new(),
        })
    }

    pub fn from_vec<T: Scalar>(geometry: Geometry, values: Vec<T>) -> Result<Self, VolumeError> {
        Volume::new(geometry, T::wrap(values))
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn size(&self) -> [usize; 3] {
        self.geometry.size
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn direction(&self) -> &Matrix3<f64> {
        &self.geometry.direction
    }

    pub fn data(&self) -> &VoxelBuffer {
        &self.data
    }

    pub fn into_data(self) -> VoxelBuffer {
        self.data
    }

    pub fn element_type(&self) -> ElementType {
        self.data.element_type()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn extra(&self) -> &[(String, String)] {
        &self.extra
    }

    pub fn with_extra(mut self, extra: Vec<(String, String)>) -> Self {
        self.extra = extra;
        self
    }

    /// Same geometry, new buffer.
    pub fn with_data(&self, data: VoxelBuffer) -> Result<Self, VolumeError> {
        Volume::new(self.geometry, data)
    }

    /// New volume with `geometry` and `data`, keeping pass-through header
    /// entries.
    pub fn rebuild(&self, geometry: Geometry, data: VoxelBuffer) -> Result<Self, VolumeError> {
        Ok(Volume::new(geometry, data)?.with_extra(self.extra.clone()))
    }

    #[inline]
    pub fn value(&self, index: [usize; 3]) -> f64 {
        self.data.get_f64(self.geometry.linear_index(index))
    }

    pub fn index_to_physical(&self, index: [f64; 3]) -> [f64; 3] {
        self.geometry.index_to_physical(index)
    }

    pub fn physical_to_index(&self, point: [f64; 3]) -> [f64; 3] {
        self.geometry.physical_to_index(point)
    }

    /// Metadata equality within `tol`, ignoring the voxel buffer.
    pub fn geometry_close(&self, other: &Volume, tol: f64) -> bool {
        geometry_close(&self.geometry, &other.geometry, tol)
    }
}

pub fn geometry_close(a: &Geometry, b: &Geometry, tol: f64) -> bool {
    a.size == b.size
        && a.spacing
            .iter()
            .zip(&b.spacing)
            .all(|(x, y)| (x - y).abs() <= tol)
        && a.origin
            .iter()
            .zip(&b.origin)
            .all(|(x, y)| (x - y).abs() <= tol)
        && (a.direction - b.direction).abs().max() <= tol
}
