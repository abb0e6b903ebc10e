//! Seeded synthetic abdomen with all 13 regions, plus an observer model
//! that perturbs label boundaries with a smooth displacement field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::{apply_fan, balance_fan, world_fan_angle, FanConfig, FanPartition};
use crate::rng::SeededRng;
use crate::volume::{
    BinaryMask, Geometry, LabelVolume, RegionId, ScalarType, ScalarVolume, Spacing, WorldTransform,
};

/// Smallest extent per axis that still hosts all 13 regions.
pub const MIN_PHANTOM_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    /// Share of torso voxels that become small bowel.
    pub bowel_fraction: f64,
}

impl PhantomSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Self {
        PhantomSpec {
            dims,
            spacing,
            seed,
            bowel_fraction: 0.2,
        }
    }

    pub fn validate(&self) -> Result<Spacing> {
        if self.dims.iter().any(|&d| d < MIN_PHANTOM_DIM) {
            return Err(Error::invalid(format!(
                "phantom dims {:?} too small to host 13 regions (need at least {MIN_PHANTOM_DIM} per axis)",
                self.dims
            )));
        }
        if !(self.bowel_fraction > 0.0 && self.bowel_fraction < 0.5) {
            return Err(Error::invalid(format!(
                "bowel fraction must lie in (0, 0.5), got {}",
                self.bowel_fraction
            )));
        }
        Spacing::from_array(self.spacing)
    }
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub ct: ScalarVolume,
    pub labels: LabelVolume,
    /// Ground-truth fan; re-balancing the bowel with it reproduces regions
    /// 9-12 exactly, each holding a quarter of the bowel.
    pub fan: FanPartition,
}

/// Regions 0-8 tile the torso as a 3×3 grid in the coronal plane; the
/// small bowel is the anterior, most central part of the torso, split into
/// regions 9-12 by a fan around a jittered root.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let spacing = spec.validate()?;
    let [nx, _, nz] = spec.dims;
    let mut rng = SeededRng::new(spec.seed);

    // centered on the world origin; f32-exact so files round-trip unchanged
    let origin = [0, 1, 2].map(|a| (-(spec.dims[a] as f64 - 1.0) / 2.0 * spacing.as_array()[a]) as f32 as f64);
    let geometry = Geometry::new(spec.dims, spacing, WorldTransform::with_origin(origin))?;

    let center = spec.dims.map(|d| (d as f64 - 1.0) / 2.0);
    let semi = spec.dims.map(|d| 0.45 * d as f64);
    let norm = |idx: [usize; 3], a: usize| (idx[a] as f64 - center[a]) / semi[a];

    let mut labels = vec![0u8; geometry.len()];
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    let mut torso = 0usize;
    for i in 0..geometry.len() {
        let idx = geometry.coords(i);
        let (u, v, w) = (norm(idx, 0), norm(idx, 1), norm(idx, 2));
        if u * u + v * v + w * w > 1.0 {
            continue;
        }
        torso += 1;
        labels[i] = tile_region(u, w).stored_label();
        if v > 0.0 {
            candidates.push((u * u + w * w, i));
        }
    }

    let quota = ((spec.bowel_fraction * torso as f64).round() as usize).min(candidates.len());
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.truncate(quota);

    let jitter = |rng: &mut SeededRng, a: usize| center[a] + rng.uniform(-0.1, 0.1) * semi[a];
    let root_voxel = [jitter(&mut rng, 0), center[1], jitter(&mut rng, 2)];
    let cfg = FanConfig::new(geometry.continuous_to_world(root_voxel));

    // Trim every sector to the smallest one so the quarters are exact.
    let mut bowel = BinaryMask::empty(geometry);
    for &(_, i) in &candidates {
        bowel.set(geometry.coords(i), true);
    }
    let first = balance_fan(&bowel, &cfg)?;
    let mut by_sector: [Vec<(f64, usize)>; 4] = Default::default();
    for &(score, i) in &candidates {
        let w = geometry.continuous_to_world(geometry.coords(i).map(|v| v as f64));
        let s = first.sector_of(world_fan_angle(w, &cfg));
        by_sector[s].push((score, i));
    }
    let keep = by_sector.iter().map(Vec::len).min().unwrap_or(0);
    for sector in &mut by_sector {
        for &(_, i) in &sector[keep..] {
            bowel.set(geometry.coords(i), false);
        }
    }
    let fan = balance_fan(&bowel, &cfg)?;
    let fan_labels = apply_fan(&bowel, &fan)?;
    for (l, &f) in labels.iter_mut().zip(fan_labels.data()) {
        if f > 0 {
            *l = f;
        }
    }
    let labels = LabelVolume::new(geometry, labels)?;

    let ct: Vec<f32> = (0..geometry.len())
        .map(|i| {
            let l = labels.data()[i];
            let [x, _, z] = geometry.coords(i);
            let base = match l {
                0 if is_outside(&geometry.coords(i), center, semi) => -1000.0,
                0 => -100.0,
                1..=9 => 30.0 + 8.0 * (l % 3) as f64,
                _ => 60.0,
            };
            let field = 15.0
                * (std::f64::consts::TAU * x as f64 / nx as f64).sin()
                * (std::f64::consts::TAU * z as f64 / nz as f64).cos();
            (base + field + rng.uniform(-10.0, 10.0)).round() as f32
        })
        .collect();
    let ct = ScalarVolume::with_storage(geometry, ct, ScalarType::I16)?;
    Ok(Phantom { ct, labels, fan })
}

fn is_outside(idx: &[usize; 3], center: [f64; 3], semi: [f64; 3]) -> bool {
    let r2: f64 = (0..3).map(|a| ((idx[a] as f64 - center[a]) / semi[a]).powi(2)).sum();
    r2 > 1.0
}

/// Region of the 3×3 coronal tiling; `u` grows towards patient right
/// (+x), `w` towards superior, both in [-1, 1].
fn tile_region(u: f64, w: f64) -> RegionId {
    let third = |t: f64| ((t + 1.0) * 1.5).floor().clamp(0.0, 2.0) as usize;
    // rows: inferior, middle, superior; columns: patient left, center, right
    const GRID: [[u8; 3]; 3] = [[5, 6, 7], [4, 0, 8], [3, 2, 1]];
    RegionId::new(GRID[third(w)][third(u)]).expect("grid holds valid regions")
}

/// Control-point spacing of the displacement field.
const LATTICE_MM: f64 = 16.0;

/// Resamples `labels` through a smooth random displacement whose length is
/// at most `magnitude_mm` everywhere. Zero magnitude returns the input.
pub fn perturb_labels(labels: &LabelVolume, magnitude_mm: f64, seed: u64) -> Result<LabelVolume> {
    if !(magnitude_mm >= 0.0 && magnitude_mm.is_finite()) {
        return Err(Error::invalid(format!(
            "perturbation magnitude must be finite and non-negative, got {magnitude_mm}"
        )));
    }
    if magnitude_mm == 0.0 {
        return Ok(labels.clone());
    }
    let geometry = *labels.geometry();
    let dims = geometry.dims;
    let s = geometry.spacing.as_array();
    let lattice: [usize; 3] =
        [0, 1, 2].map(|a| ((dims[a] as f64 - 1.0) * s[a] / LATTICE_MM).ceil() as usize + 2);
    let mut rng = SeededRng::new(seed);
    let control: Vec<[f64; 3]> = (0..lattice.iter().product::<usize>())
        .map(|_| rng.in_ball(magnitude_mm))
        .collect();
    let at = |c: [usize; 3]| control[c[0] + lattice[0] * (c[1] + lattice[1] * c[2])];

    let src = labels.data();
    let mut out = vec![0u8; src.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let idx = geometry.coords(i);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = idx[a] as f64 * s[a] / LATTICE_MM;
            base[a] = (t.floor() as usize).min(lattice[a] - 2);
            frac[a] = t - base[a] as f64;
        }
        // trilinear blend; a convex combination of in-ball vectors stays in the ball
        let mut d = [0.0; 3];
        for corner in 0..8 {
            let mut wgt = 1.0;
            let mut c = base;
            for a in 0..3 {
                if corner >> a & 1 == 1 {
                    c[a] += 1;
                    wgt *= frac[a];
                } else {
                    wgt *= 1.0 - frac[a];
                }
            }
            let v = at(c);
            for a in 0..3 {
                d[a] += wgt * v[a];
            }
        }
        let mut from = [0usize; 3];
        for a in 0..3 {
            let p = (idx[a] as f64 + d[a] / s[a]).round();
            from[a] = p.clamp(0.0, dims[a] as f64 - 1.0) as usize;
        }
        *o = src[geometry.index(from)];
    }
    LabelVolume::new(geometry, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::NUM_REGIONS;

    fn small() -> Phantom {
        generate_phantom(&PhantomSpec::new([48, 40, 44], [1.0, 1.2, 1.5], 7)).unwrap()
    }

    #[test]
    fn every_region_present() {
        let p = small();
        let h = p.labels.histogram();
        for l in 1..=NUM_REGIONS {
            assert!(h[l] >= 100, "label {l} has {} voxels", h[l]);
        }
    }

    #[test]
    fn fan_is_exactly_balanced_and_reproducible() {
        let p = small();
        let h = p.labels.histogram();
        assert!(h[10] == h[11] && h[11] == h[12] && h[12] == h[13]);
        assert_eq!(p.fan.achieved_fractions, [0.25; 4]);

        let mut bowel = BinaryMask::empty(*p.labels.geometry());
        for (i, &l) in p.labels.data().iter().enumerate() {
            if l >= 10 {
                bowel.set(p.labels.geometry().coords(i), true);
            }
        }
        let again = balance_fan(&bowel, &p.fan.config).unwrap();
        assert_eq!(again.achieved_fractions, [0.25; 4]);
        let relabel = apply_fan(&bowel, &again).unwrap();
        for (&a, &b) in relabel.data().iter().zip(p.labels.data()) {
            assert!(a == 0 || a == b);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = small();
        let b = small();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.ct.data(), b.ct.data());
        let c = generate_phantom(&PhantomSpec::new([48, 40, 44], [1.0, 1.2, 1.5], 8)).unwrap();
        assert_ne!(a.ct.data(), c.ct.data());
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(generate_phantom(&PhantomSpec::new([31, 64, 64], [1.0; 3], 0)).is_err());
        let mut s = PhantomSpec::new([32; 3], [1.0; 3], 0);
        s.bowel_fraction = 0.0;
        assert!(generate_phantom(&s).is_err());
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let p = small();
        assert_eq!(perturb_labels(&p.labels, 0.0, 3).unwrap(), p.labels);
        assert!(perturb_labels(&p.labels, -1.0, 3).is_err());
    }

    #[test]
    fn perturbation_moves_voxels_within_bound() {
        let p = small();
        let m = 3.0;
        let q = perturb_labels(&p.labels, m, 21).unwrap();
        assert_ne!(q, p.labels);
        // each output label must occur in the input within m mm (plus half a
        // voxel of rounding per axis)
        let g = p.labels.geometry();
        let s = g.spacing.as_array();
        let reach = [0, 1, 2].map(|a| ((m + 0.5 * s[a]) / s[a]).ceil() as i64);
        let dims = g.dims;
        for i in (0..g.len()).step_by(37) {
            let [x, y, z] = g.coords(i);
            let want = q.data()[i];
            let mut found = false;
            'search: for dz in -reach[2]..=reach[2] {
                for dy in -reach[1]..=reach[1] {
                    for dx in -reach[0]..=reach[0] {
                        let c = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                        if (0..3).any(|a| c[a] < 0 || c[a] >= dims[a] as i64) {
                            continue;
                        }
                        let c = c.map(|v| v as usize);
                        if p.labels.get(c) == want {
                            found = true;
                            break 'search;
                        }
                    }
                }
            }
            assert!(found, "label {want} at {:?} not within reach", [x, y, z]);
        }
    }
}
