use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::volume::{Geometry, Scalar, Volume};
use crate::with_buffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleTarget {
    /// Target spacing in mm, `[Z, Y, X]`.
    Spacing([f64; 3]),
    /// Target size in voxels, `[Z, Y, X]`.
    Size([usize; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Trilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub target: ResampleTarget,
    pub interpolation: Interpolation,
    /// The volume holds class labels; only nearest interpolation is allowed.
    pub label: bool,
}

impl ResampleSpec {
    pub fn image(target: ResampleTarget) -> Self {
        ResampleSpec {
            target,
            interpolation: Interpolation::Trilinear,
            label: false,
        }
    }

    pub fn label(target: ResampleTarget) -> Self {
        ResampleSpec {
            target,
            interpolation: Interpolation::Nearest,
            label: true,
        }
    }

    fn validate(&self) -> Result<(), PreprocessError> {
        let ok = match self.target {
            ResampleTarget::Spacing(s) => s.iter().all(|&v| v.is_finite() && v > 0.0),
            ResampleTarget::Size(s) => s.iter().all(|&v| v > 0),
        };
        if !ok {
            return Err(PreprocessError::InvalidSpec(format!(
                "resample target must be positive: {:?}",
                self.target
            )));
        }
        Ok(())
    }
}

/// Output grid of a resample: size and spacing per axis, same origin and
/// direction.
pub fn resampled_geometry(g: &Geometry, target: ResampleTarget) -> Geometry {
    let (size, spacing) = match target {
        ResampleTarget::Spacing(t) => {
            let size = [0, 1, 2].map(|a| {
                let n = (g.size[a] as f64 * g.spacing[a] / t[a]).round();
                (n as usize).max(1)
            });
            (size, t)
        }
        ResampleTarget::Size(n) => {
            let spacing = [0, 1, 2].map(|a| g.size[a] as f64 * g.spacing[a] / n[a] as f64);
            (n, spacing)
        }
    };
    Geometry {
        size,
        spacing,
        origin: g.origin,
        direction: g.direction,
    }
}

/// Per-axis linear interpolation taps with clamp-to-edge.
#[derive(Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub w: f64,
}

impl Tap {
    #[inline]
    pub fn at(x: f64, n: usize) -> Tap {
        let max = (n - 1) as f64;
        if x.is_nan() || x <= 0.0 {
            return Tap { lo: 0, hi: 0, w: 0.0 };
        }
        if x >= max {
            return Tap {
                lo: n - 1,
                hi: n - 1,
                w: 0.0,
            };
        }
        let f = x.floor();
        let lo = f as usize;
        Tap {
            lo,
            hi: (lo + 1).min(n - 1),
            w: x - f,
        }
    }

    #[inline]
    pub fn nearest(x: f64, n: usize) -> usize {
        if x.is_nan() || x <= 0.0 {
            0
        } else {
            (x.round() as usize).min(n - 1)
        }
    }
}

/// Trilinear sample of `src` (shape `size`) at continuous `[z, y, x]`.
#[inline]
pub(crate) fn trilinear_at<T: Scalar>(src: &[T], size: [usize; 3], pos: [f64; 3]) -> f64 {
    let [tz, ty, tx] = [0, 1, 2].map(|a| Tap::at(pos[a], size[a]));
    let idx = |z: usize, y: usize, x: usize| src[(z * size[1] + y) * size[2] + x].to_f64();
    let lerp = |a: f64, b: f64, w: f64| if w == 0.0 { a } else { a + (b - a) * w };
    let plane = |z: usize| {
        lerp(
            lerp(idx(z, ty.lo, tx.lo), idx(z, ty.lo, tx.hi), tx.w),
            lerp(idx(z, ty.hi, tx.lo), idx(z, ty.hi, tx.hi), tx.w),
            ty.w,
        )
    };
    lerp(plane(tz.lo), plane(tz.hi), tz.w)
}

fn resample_typed<T: Scalar>(
    src: &[T],
    from: &Geometry,
    to: &Geometry,
    interpolation: Interpolation,
) -> Vec<T> {
    let ratio = [0, 1, 2].map(|a| to.spacing[a] / from.spacing[a]);
    let coords: Vec<Vec<f64>> = (0..3)
        .map(|a| (0..to.size[a]).map(|j| j as f64 * ratio[a]).collect())
        .collect();
    let mut out = Vec::with_capacity(to.voxel_count());
    match interpolation {
        Interpolation::Nearest => {
            let near: Vec<Vec<usize>> = (0..3)
                .map(|a| coords[a].iter().map(|&x| Tap::nearest(x, from.size[a])).collect())
                .collect();
            for &z in &near[0] {
                for &y in &near[1] {
                    let row = (z * from.size[1] + y) * from.size[2];
                    out.extend(near[2].iter().map(|&x| src[row + x]));
                }
            }
        }
        Interpolation::Trilinear => {
            for &z in &coords[0] {
                for &y in &coords[1] {
                    for &x in &coords[2] {
                        out.push(T::from_f64(trilinear_at(src, from.size, [z, y, x])));
                    }
                }
            }
        }
    }
    out
}

/// Resamples onto a new grid that shares origin and direction with `v`.
///
/// Output voxel `j` along an axis samples input position
/// `j * new_spacing / old_spacing`. Trilinear clamps at the edges and rounds
/// back into integer element types; nearest copies input values only.
pub fn resample(v: &Volume, spec: &ResampleSpec) -> Result<Volume, PreprocessError> {
    spec.validate()?;
    if spec.label && spec.interpolation == Interpolation::Trilinear {
        return Err(PreprocessError::TrilinearOnLabel);
    }
    let from = v.geometry();
    let to = resampled_geometry(from, spec.target);
    if to.size == from.size && to.spacing == from.spacing {
        return Ok(v.clone());
    }
    let data = with_buffer!(v.data(), src => Scalar::wrap(resample_typed(src, from, &to, spec.interpolation)));
    Ok(v.rebuild(to, data)?)
}
