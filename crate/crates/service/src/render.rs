use std::str::FromStr;

use voxkit_core::preprocess::{crop, window_level};
use voxkit_core::Volume;

/// Slicing axis, named after the index axis held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Z,
    Y,
    X,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "z" | "Z" => Ok(Axis::Z),
            "y" | "Y" => Ok(Axis::Y),
            "x" | "X" => Ok(Axis::X),
            other => Err(format!("axis must be z, y or x, got {other:?}")),
        }
    }
}

/// Fixed label colours; class `c` uses entry `c % 32`, class 0 is drawn
/// transparent.
pub const PALETTE: [[u8; 3]; 32] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
    [128, 128, 0],
    [255, 215, 180],
    [0, 0, 128],
    [128, 128, 128],
    [255, 255, 255],
    [255, 99, 71],
    [46, 139, 87],
    [218, 165, 32],
    [65, 105, 225],
    [199, 21, 133],
    [0, 206, 209],
    [154, 205, 50],
    [255, 140, 0],
    [106, 90, 205],
    [188, 143, 143],
];

/// One plane of `v` as a thin volume, plus its `(height, width)` in
/// `[slower, faster]` order of the two remaining axes.
fn plane(v: &Volume, axis: Axis, index: usize) -> Result<(Volume, u32, u32), String> {
    let size = v.size();
    let a = axis.index();
    if index >= size[a] {
        return Err(format!("index {index} out of range for axis of length {}", size[a]));
    }
    let mut offset = [0; 3];
    let mut extent = size;
    offset[a] = index;
    extent[a] = 1;
    let slab = crop(v, offset, extent).map_err(|e| e.to_string())?;
    let rest: Vec<usize> = (0..3).filter(|&k| k != a).map(|k| size[k]).collect();
    Ok((slab, rest[0] as u32, rest[1] as u32))
}

fn encode(data: &[u8], width: u32, height: u32, color: png::ColorType) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// Out-of-range `index` is an error carrying a message.
pub fn slice_png(v: &Volume, axis: Axis, index: usize, center: f64, width: f64) -> Result<Vec<u8>, String> {
    let (slab, h, w) = plane(v, axis, index)?;
    let windowed = window_level(&slab, center, width).map_err(|e| e.to_string())?;
    let gray: Vec<u8> = windowed
        .data()
        .to_f64_vec()
        .iter()
        .map(|&x| (x * 255.0).round() as u8)
        .collect();
    Ok(encode(&gray, w, h, png::ColorType::Grayscale))
}

pub fn mask_slice_png(mask: &Volume, axis: Axis, index: usize) -> Result<Vec<u8>, String> {
    let (slab, h, w) = plane(mask, axis, index)?;
    let mut rgba = Vec::with_capacity(slab.len() * 4);
    for c in slab.data().to_f64_vec() {
        let c = c.max(0.0) as usize;
        if c == 0 {
            rgba.extend_from_slice(&[0, 0, 0, 0]);
        } else {
            let [r, g, b] = PALETTE[c % 32];
            rgba.extend_from_slice(&[r, g, b, 255]);
        }
    }
    Ok(encode(&rgba, w, h, png::ColorType::Rgba))
}
