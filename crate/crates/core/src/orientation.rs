//! Anatomical orientation codes and axis-aligned reorientation.
//!
//! An [`OrientationCode`] names, for each index axis from slowest (Z) to
//! fastest (X), the anatomical direction that increasing index points to.
//! World frame is LPS, so the identity direction matrix is `SPL`.

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::volume::{Geometry, Volume, VolumeError};

/// Off-dominant components below this magnitude count as axis-aligned.
const OBLIQUE_TOLERANCE: f64 = 1e-6;
/// Dominant components closer than this are a tie.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrientationError {
    #[error("index axis {axis} has no dominant world direction (column {column:?})")]
    DominantTie { axis: usize, column: [f64; 3] },
    #[error("index axes {0} and {1} share the same dominant world axis")]
    DuplicateWorldAxis(usize, usize),
    #[error("invalid orientation code {0:?}")]
    InvalidCode(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// One anatomical direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Anatomical {
    L,
    R,
    P,
    A,
    S,
    I,
}

impl Anatomical {
    pub const ALL: [Anatomical; 6] = [
        Anatomical::L,
        Anatomical::R,
        Anatomical::P,
        Anatomical::A,
        Anatomical::S,
        Anatomical::I,
    ];

    /// World axis (0 = x, 1 = y, 2 = z) and sign in LPS.
    pub fn world_axis(self) -> (usize, f64) {
        match self {
            Anatomical::L => (0, 1.0),
            Anatomical::R => (0, -1.0),
            Anatomical::P => (1, 1.0),
            Anatomical::A => (1, -1.0),
            Anatomical::S => (2, 1.0),
            Anatomical::I => (2, -1.0),
        }
    }

    fn from_world(axis: usize, positive: bool) -> Self {
        match (axis, positive) {
            (0, true) => Anatomical::L,
            (0, false) => Anatomical::R,
            (1, true) => Anatomical::P,
            (1, false) => Anatomical::A,
            (2, true) => Anatomical::S,
            _ => Anatomical::I,
        }
    }

    fn letter(self) -> char {
        match self {
            Anatomical::L => 'L',
            Anatomical::R => 'R',
            Anatomical::P => 'P',
            Anatomical::A => 'A',
            Anatomical::S => 'S',
            Anatomical::I => 'I',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'L' => Anatomical::L,
            'R' => Anatomical::R,
            'P' => Anatomical::P,
            'A' => Anatomical::A,
            'S' => Anatomical::S,
            'I' => Anatomical::I,
            _ => return None,
        })
    }
}

/// Three anatomical letters, one per index axis in `[Z, Y, X]` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OrientationCode([Anatomical; 3]);

impl OrientationCode {
    pub fn new(axes: [Anatomical; 3]) -> Result<Self, OrientationError> {
        let code = OrientationCode(axes);
        let mut seen = [false; 3];
        for a in axes {
            let (w, _) = a.world_axis();
            if seen[w] {
                return Err(OrientationError::InvalidCode(code.to_string()));
            }
            seen[w] = true;
        }
        Ok(code)
    }

    pub fn axes(&self) -> [Anatomical; 3] {
        self.0
    }

    /// All 48 valid codes.
    pub fn all() -> Vec<OrientationCode> {
        let mut out = Vec::with_capacity(48);
        for a in Anatomical::ALL {
            for b in Anatomical::ALL {
                for c in Anatomical::ALL {
                    if let Ok(code) = OrientationCode::new([a, b, c]) {
                        out.push(code);
                    }
                }
            }
        }
        out
    }

    /// Direction matrix (columns in x, y, z index order) whose axes point
    /// exactly along this code.
    pub fn to_direction(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for (k, a) in self.0.iter().enumerate() {
            let (w, sign) = a.world_axis();
            m[(w, 2 - k)] = sign;
        }
        m
    }
}

impl fmt::Display for OrientationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.0 {
            write!(f, "{}", a.letter())?;
        }
        Ok(())
    }
}

impl FromStr for OrientationCode {
    type Err = OrientationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters: Vec<Anatomical> = s.chars().filter_map(Anatomical::from_letter).collect();
        if letters.len() != 3 || s.chars().count() != 3 {
            return Err(OrientationError::InvalidCode(s.to_string()));
        }
        OrientationCode::new([letters[0], letters[1], letters[2]])
            .map_err(|_| OrientationError::InvalidCode(s.to_string()))
    }
}

/// Anatomical code of the dominant world component of each index axis.
pub fn orientation_of(direction: &Matrix3<f64>) -> Result<OrientationCode, OrientationError> {
    let mut letters = [Anatomical::L; 3];
    let mut owner = [None::<usize>; 3];
    for (k, letter) in letters.iter_mut().enumerate() {
        let col = direction.column(2 - k);
        let mags = [col[0].abs(), col[1].abs(), col[2].abs()];
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]));
        let (best, runner_up) = (order[0], order[1]);
        if mags[best] - mags[runner_up] <= TIE_TOLERANCE {
            return Err(OrientationError::DominantTie {
                axis: k,
                column: [col[0], col[1], col[2]],
            });
        }
        if let Some(prev) = owner[best] {
            return Err(OrientationError::DuplicateWorldAxis(prev, k));
        }
        owner[best] = Some(k);
        *letter = Anatomical::from_world(best, col[best] > 0.0);
    }
    Ok(OrientationCode(letters))
}

/// True when some direction column is not exactly axis-aligned.
pub fn is_oblique(direction: &Matrix3<f64>) -> bool {
    direction.column_iter().any(|col| {
        let mut mags: Vec<f64> = col.iter().map(|v| v.abs()).collect();
        mags.sort_by(f64::total_cmp);
        mags[0] > OBLIQUE_TOLERANCE || mags[1] > OBLIQUE_TOLERANCE
    })
}

/// Output size and source offsets for a permutation of index axes: output
/// axis `k` walks source axis `perm[k]`, reversed when `flips[k]`.
pub(crate) fn permuted_indices(
    size: [usize; 3],
    perm: [usize; 3],
    flips: [bool; 3],
) -> ([usize; 3], Vec<usize>) {
    let strides = [size[1] * size[2], size[2], 1];
    let out_size = perm.map(|s| size[s]);
    let axis_offsets: Vec<Vec<usize>> = (0..3)
        .map(|k| {
            let n = out_size[k];
            let stride = strides[perm[k]];
            (0..n)
                .map(|o| if flips[k] { (n - 1 - o) * stride } else { o * stride })
                .collect()
        })
        .collect();
    let mut indices = Vec::with_capacity(out_size.iter().product());
    for &oz in &axis_offsets[0] {
        for &oy in &axis_offsets[1] {
            for &ox in &axis_offsets[2] {
                indices.push(oz + oy + ox);
            }
        }
    }
    (out_size, indices)
}

/// Geometry after permuting/flipping index axes so that every voxel keeps its
/// world position.
pub(crate) fn permuted_geometry(g: &Geometry, perm: [usize; 3], flips: [bool; 3]) -> Geometry {
    let mut direction = Matrix3::zeros();
    let mut first = [0.0; 3];
    for k in 0..3 {
        let s = perm[k];
        let sign = if flips[k] { -1.0 } else { 1.0 };
        direction.set_column(2 - k, &(g.axis_direction(s) * sign));
        if flips[k] {
            first[s] = (g.size[s] - 1) as f64;
        }
    }
    Geometry {
        size: perm.map(|s| g.size[s]),
        spacing: perm.map(|s| g.spacing[s]),
        origin: g.index_to_physical(first),
        direction,
    }
}

/// Permutes and flips index axes so the volume's orientation becomes
/// `target`. No interpolation; each voxel keeps its world position.
///
/// Oblique directions are handled by the same signed permutation (the
/// columns move with the data, so positions stay exact); the caller can
/// check [`is_oblique`] to surface a warning.
pub fn reorient(v: &Volume, target: OrientationCode) -> Result<Volume, OrientationError> {
    let current = orientation_of(v.direction())?;
    if current == target {
        return Ok(v.clone());
    }
    if is_oblique(v.direction()) {
        log::warn!("reorienting oblique volume by nearest signed permutation");
    }
    let cur = current.axes();
    let mut perm = [0usize; 3];
    let mut flips = [false; 3];
    for (k, t) in target.axes().iter().enumerate() {
        let (tw, _) = t.world_axis();
        let s = (0..3)
            .find(|&s| cur[s].world_axis().0 == tw)
            .expect("valid codes cover every world axis");
        perm[k] = s;
        flips[k] = cur[s] != *t;
    }
    let geometry = permuted_geometry(v.geometry(), perm, flips);
    let (_, indices) = permuted_indices(v.size(), perm, flips);
    Ok(v.rebuild(geometry, v.data().gather(&indices))?)
}
