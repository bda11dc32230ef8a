use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::volume::{Scalar, Volume};
use crate::with_buffer;

/// Old label to new label. Labels not in the map become 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap {
    pub mapping: BTreeMap<i64, i64>,
}

impl LabelMap {
    pub fn new(pairs: impl IntoIterator<Item = (i64, i64)>) -> Result<Self, PreprocessError> {
        let mapping: BTreeMap<i64, i64> = pairs.into_iter().collect();
        if let Some((k, v)) = mapping.iter().find(|(k, v)| **k < 0 || **v < 0) {
            return Err(PreprocessError::InvalidSpec(format!(
                "label map entries must be non-negative, got {k}:{v}"
            )));
        }
        Ok(LabelMap { mapping })
    }

    /// Maps every listed label to itself: keeps only those classes.
    pub fn keep(labels: impl IntoIterator<Item = i64>) -> Result<Self, PreprocessError> {
        Self::new(labels.into_iter().map(|l| (l, l)))
    }

    pub fn get(&self, label: i64) -> i64 {
        self.mapping.get(&label).copied().unwrap_or(0)
    }
}

/// Parses `old:new,old:new`, e.g. `1:1,2:1,5:2`.
impl FromStr for LabelMap {
    type Err = PreprocessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PreprocessError::InvalidSpec(format!("cannot parse label map {s:?}, expected old:new,..."));
        let mut pairs = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (a, b) = item.split_once(':').ok_or_else(bad)?;
            let a = a.trim().parse().map_err(|_| bad())?;
            let b = b.trim().parse().map_err(|_| bad())?;
            pairs.push((a, b));
        }
        Self::new(pairs)
    }
}

fn remap_typed<T: Scalar>(values: &[T], m: &LabelMap) -> Result<Vec<T>, PreprocessError> {
    let (lo, hi) = T::ELEMENT_TYPE.range();
    if let Some(&v) = m.mapping.values().find(|&&v| (v as f64) < lo || (v as f64) > hi) {
        return Err(PreprocessError::LabelOutOfRange(v));
    }
    let table: Vec<(T, T)> = m
        .mapping
        .iter()
        .filter(|(k, _)| (**k as f64) >= lo && (**k as f64) <= hi)
        .map(|(&k, &v)| (T::from_f64(k as f64), T::from_f64(v as f64)))
        .collect();
    let zero = T::from_f64(0.0);
    Ok(values
        .iter()
        .map(|x| {
            table
                .iter()
                .find(|(k, _)| k == x)
                .map_or(zero, |&(_, v)| v)
        })
        .collect())
}

/// Substitutes label values voxel by voxel; the element type is kept.
pub fn remap_labels(v: &Volume, m: &LabelMap) -> Result<Volume, PreprocessError> {
    if !v.element_type().is_integer() {
        return Err(PreprocessError::NotIntegerLabels(v.element_type().to_string()));
    }
    let data = with_buffer!(v.data(), src => Scalar::wrap(remap_typed(src, m)?));
    Ok(v.with_data(data)?)
}

/// Sorted distinct values of an integer label volume.
pub fn label_classes(v: &Volume) -> Vec<i64> {
    let mut set = std::collections::BTreeSet::new();
    with_buffer!(v.data(), src => {
        for x in src {
            set.insert(x.to_f64() as i64);
        }
    });
    set.into_iter().collect()
}
