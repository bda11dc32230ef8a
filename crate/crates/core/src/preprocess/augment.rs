//! Seeded stochastic augmentations.
//!
//! Every draw comes from a generator keyed by `(seed, sample stem, transform
//! name)`, so a sample's result does not depend on processing order or
//! worker count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::resample::{trilinear_at, Tap};
use super::PreprocessError;
use crate::orientation::permuted_indices;
use crate::volume::{Scalar, Volume};
use crate::with_buffer;

/// A transform and its sampling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Transform {
    /// Circular shift per axis, drawn from `[-max_shift, max_shift]`.
    Roll { max_shift: [usize; 3] },
    /// Each axis reversed independently with probability `p`.
    Flip { p: f64 },
    /// One axis-aligned box, each side drawn from `[1, max_size]`, set to
    /// `fill` (volume minimum when absent). Image only.
    EraseContinuous { max_size: [usize; 3], fill: Option<f64> },
    /// `count` distinct voxels set to `fill`. Image only.
    EraseDiscrete { count: usize, fill: Option<f64> },
    /// Rotation in the plane orthogonal to `axis` (0 = Z, 1 = Y, 2 = X).
    /// With `max_degrees` absent, a random number of quarter turns is
    /// applied as an exact permutation; otherwise an angle is drawn from
    /// `[-max_degrees, max_degrees]` and resampled.
    Rotate3d { axis: usize, max_degrees: Option<f64> },
    /// `x^gamma` with gamma drawn from `[min, max]`. Image only.
    Gamma { min: f64, max: f64 },
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Roll { .. } => "roll",
            Transform::Flip { .. } => "flip",
            Transform::EraseContinuous { .. } => "erase_continuous",
            Transform::EraseDiscrete { .. } => "erase_discrete",
            Transform::Rotate3d { .. } => "rotate3d",
            Transform::Gamma { .. } => "gamma",
        }
    }
}

/// Parameters actually drawn for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Drawn {
    Roll { shift: [i64; 3] },
    Flip { axes: [bool; 3] },
    EraseContinuous { offset: [usize; 3], size: [usize; 3], fill: f64 },
    EraseDiscrete { count: usize, fill: f64 },
    Rotate3d { axis: usize, quarter_turns: Option<u8>, degrees: Option<f64> },
    Gamma { gamma: f64 },
}

/// Generator for one (seed, stem, transform) triple.
pub fn sample_rng(seed: u64, stem: &str, transform: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stem.as_bytes());
    h.update([0]);
    h.update(transform.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn gather(v: &Volume, indices: &[usize]) -> Result<Volume, PreprocessError> {
    Ok(v.with_data(v.data().gather(indices))?)
}

/// Circular shift: output voxel `i` takes input voxel `i - shift` (mod size).
pub fn roll(v: &Volume, shift: [i64; 3]) -> Result<Volume, PreprocessError> {
    let size = v.size();
    let src: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            let n = size[a] as i64;
            (0..n).map(|i| (i - shift[a]).rem_euclid(n) as usize).collect()
        })
        .collect();
    let mut indices = Vec::with_capacity(v.len());
    for &z in &src[0] {
        for &y in &src[1] {
            let row = (z * size[1] + y) * size[2];
            indices.extend(src[2].iter().map(|&x| row + x));
        }
    }
    gather(v, &indices)
}

/// Reverses the index order along every axis whose flag is set.
pub fn flip(v: &Volume, axes: [bool; 3]) -> Result<Volume, PreprocessError> {
    let (_, indices) = permuted_indices(v.size(), [0, 1, 2], axes);
    gather(v, &indices)
}

fn plane_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Exact rotation by `turns` quarter turns in the plane orthogonal to
/// `axis`. Odd turns need a square plane so the grid is unchanged.
pub fn rotate_quarter(v: &Volume, axis: usize, turns: u8) -> Result<Volume, PreprocessError> {
    if axis > 2 {
        return Err(PreprocessError::InvalidSpec(format!("rotation axis {axis} out of range")));
    }
    let (p, q) = plane_axes(axis);
    let size = v.size();
    let turns = turns % 4;
    if turns % 2 == 1 && size[p] != size[q] {
        return Err(PreprocessError::AxesIncompatible {
            turns,
            a: size[p],
            b: size[q],
        });
    }
    let mut perm = [0, 1, 2];
    let mut flips = [false; 3];
    match turns {
        0 => return Ok(v.clone()),
        1 => {
            perm.swap(p, q);
            flips[p] = true;
        }
        2 => {
            flips[p] = true;
            flips[q] = true;
        }
        _ => {
            perm.swap(p, q);
            flips[q] = true;
        }
    }
    let (_, indices) = permuted_indices(size, perm, flips);
    gather(v, &indices)
}

fn rotate_typed<T: Scalar>(src: &[T], size: [usize; 3], spacing: [f64; 3], axis: usize, degrees: f64, nearest: bool) -> Vec<T> {
    let (p, q) = plane_axes(axis);
    let (s, c) = degrees.to_radians().sin_cos();
    let center = size.map(|n| (n as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(src.len());
    for z in 0..size[0] {
        for y in 0..size[1] {
            for x in 0..size[2] {
                let dst = [z as f64, y as f64, x as f64];
                let u = (dst[p] - center[p]) * spacing[p];
                let w = (dst[q] - center[q]) * spacing[q];
                let mut pos = dst;
                pos[p] = center[p] + (c * u + s * w) / spacing[p];
                pos[q] = center[q] + (-s * u + c * w) / spacing[q];
                if nearest {
                    let [iz, iy, ix] = [0, 1, 2].map(|a| Tap::nearest(pos[a], size[a]));
                    out.push(src[(iz * size[1] + iy) * size[2] + ix]);
                } else {
                    out.push(T::from_f64(trilinear_at(src, size, pos)));
                }
            }
        }
    }
    out
}

/// Rotation by an arbitrary angle about the volume center, in physical
/// units, clamping samples to the edge. Labels use nearest neighbour.
pub fn rotate_angle(v: &Volume, axis: usize, degrees: f64, label: bool) -> Result<Volume, PreprocessError> {
    if axis > 2 || !degrees.is_finite() {
        return Err(PreprocessError::InvalidSpec(format!("rotation axis {axis}, angle {degrees}")));
    }
    let (size, spacing) = (v.size(), v.spacing());
    let data = with_buffer!(v.data(), src => Scalar::wrap(rotate_typed(src, size, spacing, axis, degrees, label)));
    Ok(v.with_data(data)?)
}

/// Sets the box `[offset, offset + size)` to `fill`.
pub fn erase_box(v: &Volume, offset: [usize; 3], size: [usize; 3], fill: f64) -> Result<Volume, PreprocessError> {
    let g = *v.geometry();
    let mut data = v.data().clone();
    data.fill_where(
        |i| {
            let idx = g.unravel(i);
            (0..3).all(|a| idx[a] >= offset[a] && idx[a] < offset[a] + size[a])
        },
        fill,
    );
    Ok(v.with_data(data)?)
}

/// Sets the listed linear voxel indices to `fill`.
pub fn erase_voxels(v: &Volume, indices: &[usize], fill: f64) -> Result<Volume, PreprocessError> {
    let mut mask = vec![false; v.len()];
    for &i in indices {
        mask[i] = true;
    }
    let mut data = v.data().clone();
    data.fill_where(|i| mask[i], fill);
    Ok(v.with_data(data)?)
}

/// `x^gamma` on a float volume with values in `[0, 1]`.
pub fn gamma(v: &Volume, gamma: f64) -> Result<Volume, PreprocessError> {
    let (min, max) = v.data().min_max().unwrap_or((0.0, 0.0));
    if v.element_type().is_integer() || min < 0.0 || max > 1.0 {
        return Err(PreprocessError::GammaRange { min, max });
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(PreprocessError::InvalidSpec(format!("gamma must be positive, got {gamma}")));
    }
    let mut data = v.data().clone();
    with_buffer!(&mut data, values => {
        for x in values.iter_mut() {
            *x = Scalar::from_f64(x.to_f64().powf(gamma));
        }
    });
    Ok(v.with_data(data)?)
}

fn draw_range(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Draws the parameters of `t` for sample `stem` without touching data.
pub fn draw(t: &Transform, seed: u64, stem: &str, size: [usize; 3], volume_min: f64) -> Result<Drawn, PreprocessError> {
    let mut rng = sample_rng(seed, stem, t.name());
    Ok(match *t {
        Transform::Roll { max_shift } => Drawn::Roll {
            shift: max_shift.map(|m| {
                let m = m as i64;
                rng.random_range(-m..=m)
            }),
        },
        Transform::Flip { p } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(PreprocessError::InvalidSpec(format!("flip probability {p} not in [0, 1]")));
            }
            Drawn::Flip {
                axes: [0; 3].map(|_| rng.random_bool(p)),
            }
        }
        Transform::EraseContinuous { max_size, fill } => {
            let mut box_size = [0; 3];
            let mut offset = [0; 3];
            for a in 0..3 {
                let hi = max_size[a].clamp(1, size[a]);
                box_size[a] = rng.random_range(1..=hi);
                offset[a] = rng.random_range(0..=size[a] - box_size[a]);
            }
            Drawn::EraseContinuous {
                offset,
                size: box_size,
                fill: fill.unwrap_or(volume_min),
            }
        }
        Transform::EraseDiscrete { count, fill } => Drawn::EraseDiscrete {
            count: count.min(size.iter().product()),
            fill: fill.unwrap_or(volume_min),
        },
        Transform::Rotate3d { axis, max_degrees } => match max_degrees {
            None => Drawn::Rotate3d {
                axis,
                quarter_turns: Some(rng.random_range(1..=3)),
                degrees: None,
            },
            Some(m) => Drawn::Rotate3d {
                axis,
                quarter_turns: None,
                degrees: Some(draw_range(&mut rng, -m.abs(), m.abs())),
            },
        },
        Transform::Gamma { min, max } => {
            if !(min > 0.0 && min <= max) {
                return Err(PreprocessError::InvalidSpec(format!("gamma range [{min}, {max}]")));
            }
            Drawn::Gamma {
                gamma: draw_range(&mut rng, min, max),
            }
        }
    })
}

/// Result of augmenting one image/label pair.
#[derive(Debug, Clone)]
pub struct Augmented {
    pub image: Volume,
    pub label: Option<Volume>,
    pub drawn: Drawn,
}

/// Applies `t` to an image and, for geometric transforms, identically to its
/// label.
pub fn augment_pair(
    image: &Volume,
    label: Option<&Volume>,
    t: &Transform,
    seed: u64,
    stem: &str,
) -> Result<Augmented, PreprocessError> {
    if let Some(l) = label {
        if l.size() != image.size() {
            return Err(PreprocessError::ShapeMismatch {
                expected: image.size(),
                actual: l.size(),
            });
        }
    }
    let volume_min = image.data().min_max().map_or(0.0, |(lo, _)| lo);
    let drawn = draw(t, seed, stem, image.size(), volume_min)?;
    let both = |f: &dyn Fn(&Volume, bool) -> Result<Volume, PreprocessError>| -> Result<(Volume, Option<Volume>), PreprocessError> {
        Ok((f(image, false)?, label.map(|l| f(l, true)).transpose()?))
    };
    let (image_out, label_out) = match &drawn {
        Drawn::Roll { shift } => both(&|v, _| roll(v, *shift))?,
        Drawn::Flip { axes } => both(&|v, _| flip(v, *axes))?,
        Drawn::Rotate3d {
            axis,
            quarter_turns: Some(k),
            ..
        } => both(&|v, _| rotate_quarter(v, *axis, *k))?,
        Drawn::Rotate3d { axis, degrees, .. } => {
            let deg = degrees.unwrap_or(0.0);
            both(&|v, is_label| rotate_angle(v, *axis, deg, is_label))?
        }
        Drawn::EraseContinuous { offset, size, fill } => {
            (erase_box(image, *offset, *size, *fill)?, label.cloned())
        }
        Drawn::EraseDiscrete { count, fill } => {
            let mut rng = sample_rng(seed, stem, "erase_discrete/voxels");
            let picked = index::sample(&mut rng, image.len(), *count).into_vec();
            (erase_voxels(image, &picked, *fill)?, label.cloned())
        }
        Drawn::Gamma { gamma: g } => (gamma(image, *g)?, label.cloned()),
    };
    Ok(Augmented {
        image: image_out,
        label: label_out,
        drawn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Geometry, VoxelBuffer};

    fn ramp(size: [usize; 3]) -> Volume {
        let n: usize = size.iter().product();
        Volume::from_vec(Geometry::new(size, [1.0; 3]), (0..n).map(|i| i as f32).collect()).unwrap()
    }

    fn delta(size: [usize; 3], at: [usize; 3]) -> Volume {
        let g = Geometry::new(size, [1.0; 3]);
        let mut v = vec![0u8; g.voxel_count()];
        v[g.linear_index(at)] = 1;
        Volume::from_vec(g, v).unwrap()
    }

    fn argmax(v: &Volume) -> [usize; 3] {
        let vals = v.data().to_f64_vec();
        let i = (0..vals.len()).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        v.geometry().unravel(i)
    }

    fn all_transforms() -> Vec<Transform> {
        vec![
            Transform::Roll { max_shift: [2, 3, 1] },
            Transform::Flip { p: 0.5 },
            Transform::EraseContinuous { max_size: [2, 2, 2], fill: None },
            Transform::EraseDiscrete { count: 5, fill: Some(-1.0) },
            Transform::Rotate3d { axis: 0, max_degrees: None },
            Transform::Rotate3d { axis: 1, max_degrees: Some(30.0) },
            Transform::Gamma { min: 0.5, max: 2.0 },
        ]
    }

    #[test]
    fn deterministic_per_seed() {
        let n = 4 * 5 * 5;
        let img = Volume::from_vec(
            Geometry::new([4, 5, 5], [1.0; 3]),
            (0..n).map(|i| i as f32 / n as f32).collect(),
        )
        .unwrap();
        let lbl = delta([4, 5, 5], [1, 2, 3]);
        for t in all_transforms() {
            let a = augment_pair(&img, Some(&lbl), &t, 7, "s").unwrap();
            let b = augment_pair(&img, Some(&lbl), &t, 7, "s").unwrap();
            assert!(a.image.data().bit_eq(b.image.data()), "{}", t.name());
            assert_eq!(a.label, b.label);
            assert_eq!(a.drawn, b.drawn);
        }
    }

    #[test]
    fn roll_moves_delta() {
        let v = delta([4, 5, 6], [1, 1, 1]);
        let out = roll(&v, [-2, 1, 7]).unwrap();
        assert_eq!(argmax(&out), [3, 2, 2]);
    }

    #[test]
    fn flip_is_involution() {
        let v = ramp([3, 4, 5]);
        for axes in [[true, false, true], [true, true, true], [false, true, false]] {
            let once = flip(&v, axes).unwrap();
            assert_ne!(once, v);
            assert_eq!(flip(&once, axes).unwrap(), v);
        }
    }

    #[test]
    fn four_quarter_turns_identity() {
        for axis in 0..3 {
            let v = ramp([5, 5, 5]);
            let mut r = v.clone();
            for _ in 0..4 {
                r = rotate_quarter(&r, axis, 1).unwrap();
                assert!(r.geometry_close(&v, 0.0));
            }
            assert!(r.data().bit_eq(v.data()));
            let two = rotate_quarter(&rotate_quarter(&v, axis, 1).unwrap(), axis, 1).unwrap();
            assert_eq!(two, rotate_quarter(&v, axis, 2).unwrap());
            let three = rotate_quarter(&two, axis, 1).unwrap();
            assert_eq!(three, rotate_quarter(&v, axis, 3).unwrap());
        }
    }

    #[test]
    fn quarter_turn_non_square_plane() {
        let v = ramp([2, 3, 4]);
        assert!(matches!(
            rotate_quarter(&v, 0, 1),
            Err(PreprocessError::AxesIncompatible { .. })
        ));
        assert!(rotate_quarter(&v, 0, 2).is_ok());
    }

    #[test]
    fn angle_ninety_matches_quarter_turn() {
        let v = ramp([3, 5, 5]);
        let lbl = v.with_data(VoxelBuffer::Uint8((0..75).map(|i| i as u8).collect())).unwrap();
        let exact = rotate_quarter(&lbl, 0, 1).unwrap();
        let resampled = rotate_angle(&lbl, 0, 90.0, true).unwrap();
        assert_eq!(exact, resampled);
    }

    #[test]
    fn joint_transforms_keep_label_aligned() {
        let size = [6, 6, 6];
        let at = [1, 2, 4];
        let mut img = vec![0.0f32; 216];
        img[Geometry::new(size, [1.0; 3]).linear_index(at)] = 1.0;
        let img = Volume::from_vec(Geometry::new(size, [1.0; 3]), img).unwrap();
        let lbl = delta(size, at);
        for t in [
            Transform::Roll { max_shift: [3; 3] },
            Transform::Flip { p: 0.5 },
            Transform::Rotate3d { axis: 2, max_degrees: None },
        ] {
            for seed in 0..5 {
                let out = augment_pair(&img, Some(&lbl), &t, seed, "d").unwrap();
                assert_eq!(argmax(&out.image), argmax(out.label.as_ref().unwrap()));
            }
        }
    }

    #[test]
    fn labels_keep_value_set_under_rotation() {
        let labels: Vec<u8> = (0..343).map(|i| [0, 2, 9][(i / 7) % 3]).collect();
        let v = Volume::from_vec(Geometry::new([7, 7, 7], [1.0, 0.8, 1.3]), labels).unwrap();
        let out = rotate_angle(&v, 1, 33.0, true).unwrap();
        for x in out.data().to_f64_vec() {
            assert!([0.0, 2.0, 9.0].contains(&x));
        }
    }

    #[test]
    fn gamma_values() {
        let v = Volume::from_vec(Geometry::new([1, 1, 3], [1.0; 3]), vec![0.25f64, 0.0, 1.0]).unwrap();
        assert_eq!(gamma(&v, 1.0).unwrap(), v);
        assert_eq!(gamma(&v, 2.0).unwrap().data(), &VoxelBuffer::Float64(vec![0.0625, 0.0, 1.0]));
        let bad = Volume::from_vec(Geometry::new([1, 1, 2], [1.0; 3]), vec![0.5f64, 2.0]).unwrap();
        assert!(matches!(gamma(&bad, 2.0), Err(PreprocessError::GammaRange { .. })));
    }

    #[test]
    fn erase_box_and_voxels() {
        let v = ramp([4, 4, 4]);
        let out = erase_box(&v, [1, 1, 1], [2, 2, 2], -5.0).unwrap();
        let vals = out.data().to_f64_vec();
        assert_eq!(vals.iter().filter(|&&x| x == -5.0).count(), 8);
        let t = Transform::EraseDiscrete { count: 10, fill: None };
        let a = augment_pair(&v, None, &t, 1, "x").unwrap();
        // Fill defaults to the minimum (0), which voxel 0 already holds.
        let zeros = a.image.data().to_f64_vec().iter().filter(|&&x| x == 0.0).count();
        assert!((10..=11).contains(&zeros));
    }

    #[test]
    fn erase_leaves_label() {
        let v = ramp([4, 4, 4]);
        let l = delta([4, 4, 4], [0, 0, 0]);
        let t = Transform::EraseContinuous { max_size: [4; 3], fill: Some(100.0) };
        let out = augment_pair(&v, Some(&l), &t, 3, "s").unwrap();
        assert_eq!(out.label.unwrap(), l);
    }

    #[test]
    fn streams_differ_by_stem() {
        let t = Transform::Roll { max_shift: [50; 3] };
        let a = draw(&t, 0, "a", [100; 3], 0.0).unwrap();
        let b = draw(&t, 0, "b", [100; 3], 0.0).unwrap();
        assert_ne!(a, b);
    }
}
