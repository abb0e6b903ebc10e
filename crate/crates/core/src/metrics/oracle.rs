//! All-pairs reference implementation of surface distances.
//!
//! Quadratic in the number of boundary voxels; meant for verifying the
//! distance-transform path on small grids (up to about 32³).

use super::{boundary_voxels, SurfaceDistanceSet};
use crate::error::{Error, Result};
use crate::volume::BinaryMask;

pub fn brute_force_surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<SurfaceDistanceSet> {
    a.geometry().check_same_grid(b.geometry())?;
    let ba = boundary_voxels(a);
    let bb = boundary_voxels(b);
    if ba.is_empty() || bb.is_empty() {
        return Err(Error::EmptyMask("surface distances need two non-empty masks".into()));
    }
    let s = a.spacing().as_array();
    Ok(SurfaceDistanceSet {
        a_to_b: nearest_all_pairs(&ba, &bb, s),
        b_to_a: nearest_all_pairs(&bb, &ba, s),
    })
}

fn nearest_all_pairs(from: &[[usize; 3]], to: &[[usize; 3]], s: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    let dx = (p[0] as f64 - q[0] as f64) * s[0];
                    let dy = (p[1] as f64 - q[1] as f64) * s[1];
                    let dz = (p[2] as f64 - q[2] as f64) * s[2];
                    dx * dx + dy * dy + dz * dz
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}
