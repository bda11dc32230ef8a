//! Deterministic fixtures shared by the benchmarks.

use voxkit_core::{Geometry, Volume};

/// CT-like volume: a soft-tissue ellipsoid with a dense core in air.
pub fn phantom(size: [usize; 3]) -> Volume {
    let g = Geometry::new(size, [2.5, 0.8, 0.8]).with_origin([-100.0, -150.0, 20.0]);
    let c = size.map(|l| l as f64 / 2.0);
    let data: Vec<i16> = (0..g.voxel_count())
        .map(|i| {
            let idx = g.unravel(i);
            let r2: f64 = (0..3).map(|a| ((idx[a] as f64 - c[a]) / c[a]).powi(2)).sum();
            let noise = ((i * 2654435761) % 41) as i16 - 20;
            noise + if r2 < 0.1 { 300 } else if r2 < 0.6 { 40 } else { -1000 }
        })
        .collect();
    Volume::from_vec(g, data).unwrap()
}

/// Label map matching [`phantom`]: 0 air, 1 tissue, 2 core.
pub fn phantom_labels(size: [usize; 3]) -> Volume {
    let g = Geometry::new(size, [2.5, 0.8, 0.8]).with_origin([-100.0, -150.0, 20.0]);
    let c = size.map(|l| l as f64 / 2.0);
    let data: Vec<u8> = (0..g.voxel_count())
        .map(|i| {
            let idx = g.unravel(i);
            let r2: f64 = (0..3).map(|a| ((idx[a] as f64 - c[a]) / c[a]).powi(2)).sum();
            u8::from(r2 < 0.6) + u8::from(r2 < 0.1)
        })
        .collect();
    Volume::from_vec(g, data).unwrap()
}
