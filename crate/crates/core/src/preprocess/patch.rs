use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::dataset::CropMetaRecord;
use crate::volume::{Geometry, Scalar, Volume, VoxelBuffer};
use crate::with_buffer;

/// Window start offsets along one axis of length `length` for windows of
/// `patch` voxels stepped by `stride`. The last window is clamped to end
/// exactly at `length`, so every voxel is covered and no padding is needed.
pub fn patch_positions(length: usize, patch: usize, stride: usize) -> Result<Vec<usize>, PreprocessError> {
    if patch == 0 || stride == 0 || stride > patch {
        return Err(PreprocessError::InvalidSpec(format!(
            "need 0 < stride <= patch, got patch {patch} stride {stride}"
        )));
    }
    if length < patch {
        return Err(PreprocessError::TooSmall {
            axis: None,
            length,
            patch,
        });
    }
    let span = length - patch;
    let count = span.div_ceil(stride) + 1;
    let mut out: Vec<usize> = (0..count - 1).map(|i| i * stride).collect();
    out.push(span);
    Ok(out)
}

/// Per-axis window offsets over a `[Z, Y, X]` volume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: [usize; 3],
    pub stride: [usize; 3],
    pub axis_positions: [Vec<usize>; 3],
}

impl PatchGrid {
    pub fn new(size: [usize; 3], patch_size: [usize; 3], stride: [usize; 3]) -> Result<Self, PreprocessError> {
        let mut axis_positions: [Vec<usize>; 3] = Default::default();
        for a in 0..3 {
            axis_positions[a] = patch_positions(size[a], patch_size[a], stride[a]).map_err(|e| match e {
                PreprocessError::TooSmall { length, patch, .. } => PreprocessError::TooSmall {
                    axis: Some(a),
                    length,
                    patch,
                },
                other => other,
            })?;
        }
        Ok(PatchGrid {
            patch_size,
            stride,
            axis_positions,
        })
    }

    pub fn len(&self) -> usize {
        self.axis_positions.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offsets in Z-major order.
    pub fn positions(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [zs, ys, xs] = &self.axis_positions;
        zs.iter()
            .flat_map(move |&z| ys.iter().flat_map(move |&y| xs.iter().map(move |&x| [z, y, x])))
    }
}

/// `<source_stem>__z<off>_y<off>_x<off>`
pub fn patch_stem(source_stem: &str, offset: [usize; 3]) -> String {
    format!(
        "{source_stem}__z{}_y{}_x{}",
        offset[0], offset[1], offset[2]
    )
}

/// Sub-volume at `offset` of `size` voxels; origin moves to the world
/// position of the first voxel.
pub fn crop(v: &Volume, offset: [usize; 3], size: [usize; 3]) -> Result<Volume, PreprocessError> {
    let src = v.size();
    if (0..3).any(|a| offset[a] + size[a] > src[a] || size[a] == 0) {
        return Err(PreprocessError::InvalidSpec(format!(
            "crop {offset:?}+{size:?} outside volume {src:?}"
        )));
    }
    let mut indices = Vec::with_capacity(size.iter().product());
    for z in offset[0]..offset[0] + size[0] {
        for y in offset[1]..offset[1] + size[1] {
            let row = (z * src[1] + y) * src[2];
            indices.extend(row + offset[2]..row + offset[2] + size[2]);
        }
    }
    let g = v.geometry();
    let geometry = Geometry {
        size,
        spacing: g.spacing,
        origin: g.index_to_physical(offset.map(|o| o as f64)),
        direction: g.direction,
    };
    Ok(v.rebuild(geometry, v.data().gather(&indices))?)
}

/// One window of a split sample.
#[derive(Debug, Clone)]
pub struct Patch {
    pub image: Volume,
    pub label: Option<Volume>,
    pub record: CropMetaRecord,
}

/// Cuts an image (and its label, cropped identically) into overlapping
/// windows.
pub fn split_patches(
    stem: &str,
    image: &Volume,
    label: Option<&Volume>,
    patch_size: [usize; 3],
    stride: [usize; 3],
) -> Result<Vec<Patch>, PreprocessError> {
    if let Some(l) = label {
        if l.size() != image.size() {
            return Err(PreprocessError::ShapeMismatch {
                expected: image.size(),
                actual: l.size(),
            });
        }
    }
    let grid = PatchGrid::new(image.size(), patch_size, stride)?;
    grid.positions()
        .map(|offset| {
            Ok(Patch {
                image: crop(image, offset, patch_size)?,
                label: label.map(|l| crop(l, offset, patch_size)).transpose()?,
                record: CropMetaRecord {
                    patch_stem: patch_stem(stem, offset),
                    source_stem: stem.to_string(),
                    index_offset: offset,
                    patch_size,
                    stride,
                    source_size: image.size(),
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Mean,
    Max,
}

fn assemble_typed<T: Scalar>(
    _like: &[T],
    patches: &[(&Volume, &CropMetaRecord)],
    size: [usize; 3],
    reduce: Reduce,
) -> VoxelBuffer {
    let n = size.iter().product();
    let mut acc = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (patch, rec) in patches {
        let values = patch.data().to_f64_vec();
        let ps = rec.patch_size;
        let mut k = 0;
        for z in 0..ps[0] {
            for y in 0..ps[1] {
                let row = ((rec.index_offset[0] + z) * size[1] + rec.index_offset[1] + y) * size[2]
                    + rec.index_offset[2];
                for x in 0..ps[2] {
                    let i = row + x;
                    let v = values[k];
                    k += 1;
                    count[i] += 1;
                    acc[i] = match (reduce, count[i]) {
                        (_, 1) => v,
                        // Running mean: identical contributions leave the value untouched.
                        (Reduce::Mean, c) => acc[i] + (v - acc[i]) / c as f64,
                        (Reduce::Max, _) => acc[i].max(v),
                    };
                }
            }
        }
    }
    T::wrap(acc.into_iter().map(T::from_f64).collect())
}

/// Inverse of [`split_patches`]: places every patch at its recorded offset
/// and combines overlaps with `reduce`.
pub fn assemble_patches(
    patches: &[(&Volume, &CropMetaRecord)],
    reduce: Reduce,
) -> Result<Volume, PreprocessError> {
    let (first, first_rec) = patches.first().ok_or(PreprocessError::EmptyPatches)?;
    let size = first_rec.source_size;
    for (p, rec) in patches {
        if rec.source_size != size || p.size() != rec.patch_size {
            return Err(PreprocessError::ShapeMismatch {
                expected: rec.patch_size,
                actual: p.size(),
            });
        }
        if (0..3).any(|a| rec.index_offset[a] + rec.patch_size[a] > size[a]) {
            return Err(PreprocessError::InvalidSpec(format!(
                "patch {} exceeds source size {size:?}",
                rec.patch_stem
            )));
        }
        if p.element_type() != first.element_type() {
            return Err(PreprocessError::InvalidSpec("mixed element types".into()));
        }
    }
    let g = first.geometry();
    let origin = g.index_to_physical(first_rec.index_offset.map(|o| -(o as f64)));
    let geometry = Geometry {
        size,
        spacing: g.spacing,
        origin,
        direction: g.direction,
    };
    let data = with_buffer!(first.data(), like => assemble_typed(like, patches, size, reduce));
    Ok(first.rebuild(geometry, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force: windows at every multiple of stride plus the clamped end.
    fn covers(length: usize, patch: usize, pos: &[usize]) -> bool {
        (0..length).all(|i| pos.iter().any(|&p| p <= i && i < p + patch))
    }

    #[test]
    fn positions_examples() {
        assert_eq!(patch_positions(100, 96, 48).unwrap(), vec![0, 4]);
        assert_eq!(patch_positions(96, 96, 48).unwrap(), vec![0]);
        assert_eq!(patch_positions(192, 96, 48).unwrap(), vec![0, 48, 96]);
        assert!(covers(192, 96, &[0, 48, 96]));
    }

    #[test]
    fn positions_errors() {
        assert!(matches!(
            patch_positions(95, 96, 48),
            Err(PreprocessError::TooSmall { .. })
        ));
        assert!(patch_positions(100, 96, 97).is_err());
        assert!(patch_positions(100, 96, 0).is_err());
    }

    fn random_volume(size: [usize; 3]) -> Volume {
        let n: usize = size.iter().product();
        let vals: Vec<i16> = (0..n).map(|i| ((i * 7919) % 2003) as i16 - 1000).collect();
        Volume::from_vec(
            Geometry::new(size, [0.8, 1.1, 2.0]).with_origin([3.0, -4.0, 5.5]),
            vals,
        )
        .unwrap()
    }

    #[test]
    fn split_counts_and_records() {
        let v = random_volume([100, 100, 100]);
        let patches = split_patches("case", &v, Some(&v), [96; 3], [48; 3]).unwrap();
        assert_eq!(patches.len(), 8);
        let last = &patches[7].record;
        assert_eq!(last.index_offset, [4, 4, 4]);
        assert_eq!(last.patch_stem, "case__z4_y4_x4");
        let p = &patches[7].image;
        assert_eq!(p.value([0, 0, 0]), v.value([4, 4, 4]));
        assert_eq!(p.origin(), v.index_to_physical([4.0, 4.0, 4.0]));
    }

    #[test]
    fn single_patch_is_source() {
        let v = random_volume([6, 6, 6]);
        let patches = split_patches("a", &v, None, [6; 3], [6; 3]).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].image, v);
    }

    #[test]
    fn assemble_inverts_split() {
        let v = random_volume([10, 9, 7]);
        for stride in [[1, 1, 1], [2, 3, 1], [4, 4, 4], [5, 5, 5]] {
            let patches = split_patches("s", &v, None, [5, 5, 5], stride).unwrap();
            let pairs: Vec<_> = patches.iter().map(|p| (&p.image, &p.record)).collect();
            for reduce in [Reduce::Mean, Reduce::Max] {
                let back = assemble_patches(&pairs, reduce).unwrap();
                assert!(back.data().bit_eq(v.data()), "stride {stride:?}");
                assert!(back.geometry_close(&v, 1e-9));
            }
        }
    }

    #[test]
    fn mean_uses_coverage_counts() {
        // Overlapping windows carrying different constants average per voxel.
        let g = Geometry::new([1, 1, 3], [1.0; 3]);
        let a = Volume::from_vec(Geometry::new([1, 1, 2], [1.0; 3]), vec![2.0f64, 2.0]).unwrap();
        let mut b = Volume::from_vec(Geometry::new([1, 1, 2], [1.0; 3]), vec![4.0f64, 4.0]).unwrap();
        b = b.rebuild(Geometry { origin: g.index_to_physical([0.0, 0.0, 1.0]), ..*b.geometry() }, b.data().clone()).unwrap();
        let rec = |off: usize| CropMetaRecord {
            patch_stem: format!("p{off}"),
            source_stem: "p".into(),
            index_offset: [0, 0, off],
            patch_size: [1, 1, 2],
            stride: [1, 1, 1],
            source_size: [1, 1, 3],
        };
        let (ra, rb) = (rec(0), rec(1));
        let out = assemble_patches(&[(&a, &ra), (&b, &rb)], Reduce::Mean).unwrap();
        assert_eq!(out.data(), &VoxelBuffer::Float64(vec![2.0, 3.0, 4.0]));
        let out = assemble_patches(&[(&a, &ra), (&b, &rb)], Reduce::Max).unwrap();
        assert_eq!(out.data(), &VoxelBuffer::Float64(vec![2.0, 4.0, 4.0]));
    }
}
