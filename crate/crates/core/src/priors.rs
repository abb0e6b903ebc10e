//! Small-bowel fan prior: regions 9-12 as four angular sectors radiating
//! from the mesenteric root, balanced to a quarter of the bowel volume each.
//!
//! Angles are taken in the coronal plane, i.e. about the anteroposterior
//! axis. World coordinates follow the NIfTI RAS+ convention (+x right,
//! +y anterior, +z superior), so the base angle is measured from superior
//! (0) towards patient left (π/2).

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Geometry, LabelVolume, RegionId};

/// Plane in which fan angles are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FanPlane {
    /// Angles about the anteroposterior axis.
    #[default]
    Coronal,
}

/// Direction in which sector angles grow, starting from `start_angle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    /// Superior towards patient left (clockwise in a radiological coronal
    /// view, where patient left is on the viewer's right).
    #[default]
    Left,
    /// Superior towards patient right.
    Right,
}

impl Sweep {
    pub fn sign(self) -> f64 {
        match self {
            Sweep::Left => 1.0,
            Sweep::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanConfig {
    /// Mesenteric root at the level of the Treitz ligament, world mm.
    pub root_world: [f64; 3],
    #[serde(default)]
    pub plane: FanPlane,
    /// Base-frame direction (radians from superior towards patient left)
    /// where the first sector begins.
    pub start_angle: f64,
    pub sweep: Sweep,
    /// Region assigned to each sector in sweep order.
    pub region_order: [RegionId; 4],
}

impl FanConfig {
    /// Superior start, sweep towards patient left, regions 9, 10, 11, 12.
    pub fn new(root_world: [f64; 3]) -> Self {
        FanConfig {
            root_world,
            plane: FanPlane::Coronal,
            start_angle: 0.0,
            sweep: Sweep::Left,
            region_order: default_order(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.root_world.iter().all(|v| v.is_finite()) || !self.start_angle.is_finite() {
            return Err(Error::invalid("fan root and start angle must be finite"));
        }
        let mut seen = self.region_order.map(|r| r.index());
        seen.sort_unstable();
        if seen != [9, 10, 11, 12] {
            return Err(Error::invalid(format!(
                "region order must be a permutation of 9..=12, got {:?}",
                self.region_order.map(|r| r.index())
            )));
        }
        Ok(())
    }
}

fn default_order() -> [RegionId; 4] {
    [9, 10, 11, 12].map(|i| RegionId::new(i).expect("valid region"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanPartition {
    pub config: FanConfig,
    /// Sector boundaries in radians, strictly increasing, relative to the
    /// start angle along the sweep. Sector `i` is `[cut[i-1], cut[i])`.
    pub cut_angles: [f64; 3],
    /// Share of bowel volume in each sector.
    pub achieved_fractions: [f64; 4],
}

impl FanPartition {
    /// Sector index (0..4) of a fan angle; a voxel on a cut belongs to the
    /// sector above it.
    pub fn sector_of(&self, angle: f64) -> usize {
        self.cut_angles.iter().filter(|&&c| c <= angle).count()
    }
}

/// Fan angle in `[0, 2π)` of a world point. The root itself maps to 0.
pub fn world_fan_angle(w: [f64; 3], cfg: &FanConfig) -> f64 {
    let left = -(w[0] - cfg.root_world[0]);
    let superior = w[2] - cfg.root_world[2];
    if left == 0.0 && superior == 0.0 {
        return 0.0;
    }
    let base = left.atan2(superior);
    let a = (cfg.sweep.sign() * (base - cfg.start_angle)).rem_euclid(TAU) + 0.0;
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Fan angle of a voxel center.
pub fn voxel_fan_angle(idx: [usize; 3], geometry: &Geometry, cfg: &FanConfig) -> Result<f64> {
    Ok(world_fan_angle(geometry.voxel_to_world(idx)?, cfg))
}

fn mask_angles(mask: &BinaryMask, cfg: &FanConfig) -> Vec<(usize, f64)> {
    let g = mask.geometry();
    mask.data()
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| {
            let w = g.continuous_to_world(g.coords(i).map(|v| v as f64));
            (i, world_fan_angle(w, cfg))
        })
        .collect()
}

/// Places the three cuts at the volume quartiles of the bowel's fan angles.
///
/// Voxels all have the same volume on a regular grid, so each cut is the
/// distinct voxel angle whose below-count is closest to the target quartile
/// count (the smaller angle on ties).
pub fn balance_fan(small_bowel: &BinaryMask, cfg: &FanConfig) -> Result<FanPartition> {
    cfg.validate()?;
    let mut angles: Vec<f64> = mask_angles(small_bowel, cfg).into_iter().map(|(_, a)| a).collect();
    if angles.is_empty() {
        return Err(Error::EmptyMask("small-bowel mask is empty".into()));
    }
    angles.sort_by(f64::total_cmp);
    let n = angles.len() as u64;
    if angles[0] == angles[angles.len() - 1] {
        return Err(Error::DegenerateFan("all bowel voxels lie at one angle".into()));
    }

    // (distinct angle, number of voxels strictly below it)
    let mut distinct: Vec<(f64, u64)> = Vec::new();
    for (i, &a) in angles.iter().enumerate() {
        if distinct.last().is_none_or(|&(prev, _)| prev != a) {
            distinct.push((a, i as u64));
        }
    }

    let mut cut_angles = [0.0; 3];
    let mut below = [0u64; 3];
    for q in 1..=3u64 {
        // compare 4·below against q·n to stay in integers
        let target = q * n;
        let (angle, count) = distinct
            .iter()
            .copied()
            .min_by_key(|&(_, b)| (4 * b).abs_diff(target))
            .expect("non-empty");
        cut_angles[(q - 1) as usize] = angle;
        below[(q - 1) as usize] = count;
    }
    if !(cut_angles[0] < cut_angles[1] && cut_angles[1] < cut_angles[2]) {
        return Err(Error::DegenerateFan(format!(
            "quartile cuts coincide: {cut_angles:?}"
        )));
    }
    let counts = [below[0], below[1] - below[0], below[2] - below[1], n - below[2]];
    Ok(FanPartition {
        config: *cfg,
        cut_angles,
        achieved_fractions: counts.map(|c| c as f64 / n as f64),
    })
}

/// Labels each bowel voxel with the region of its sector; other voxels are 0.
pub fn apply_fan(small_bowel: &BinaryMask, partition: &FanPartition) -> Result<LabelVolume> {
    let mut data = vec![0u8; small_bowel.geometry().len()];
    for (i, a) in mask_angles(small_bowel, &partition.config) {
        data[i] = partition.config.region_order[partition.sector_of(a)].stored_label();
    }
    LabelVolume::new(*small_bowel.geometry(), data)
}

/// Bowel voxel count per sector.
pub fn sector_counts(small_bowel: &BinaryMask, partition: &FanPartition) -> [usize; 4] {
    let mut counts = [0usize; 4];
    for (_, a) in mask_angles(small_bowel, &partition.config) {
        counts[partition.sector_of(a)] += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Spacing;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn flat_geometry(n: usize) -> Geometry {
        Geometry::simple([n, 1, n], Spacing::isotropic(1.0).unwrap()).unwrap()
    }

    /// Disc (or half disc) in the coronal plane around a root placed between
    /// voxel centers.
    fn disc(n: usize, r_in: f64, r_out: f64, left_only: bool) -> (BinaryMask, FanConfig) {
        let g = flat_geometry(n);
        let c = n as f64 / 2.0 - 0.5;
        let cfg = FanConfig::new([c, 0.0, c]);
        let mut m = BinaryMask::empty(g);
        for z in 0..n {
            for x in 0..n {
                let (dx, dz) = (x as f64 - c, z as f64 - c);
                let r = (dx * dx + dz * dz).sqrt();
                if r >= r_in && r <= r_out && (!left_only || dx < 0.0) {
                    m.set([x, 0, z], true);
                }
            }
        }
        (m, cfg)
    }

    #[test]
    fn cardinal_angles() {
        let g = Geometry::simple([5, 5, 5], Spacing::isotropic(1.0).unwrap()).unwrap();
        let cfg = FanConfig::new([2.0, 2.0, 2.0]);
        assert_eq!(voxel_fan_angle([2, 0, 4], &g, &cfg).unwrap(), 0.0);
        assert_eq!(voxel_fan_angle([0, 3, 2], &g, &cfg).unwrap(), FRAC_PI_2);
        assert_eq!(voxel_fan_angle([2, 2, 0], &g, &cfg).unwrap(), PI);
        assert_eq!(voxel_fan_angle([4, 1, 2], &g, &cfg).unwrap(), 3.0 * FRAC_PI_2);
        // on the root (any AP offset) → 0
        assert_eq!(voxel_fan_angle([2, 4, 2], &g, &cfg).unwrap(), 0.0);

        let mirrored = FanConfig {
            sweep: Sweep::Right,
            ..cfg
        };
        assert_eq!(voxel_fan_angle([4, 1, 2], &g, &mirrored).unwrap(), FRAC_PI_2);
    }

    #[test]
    fn angles_match_independent_formula() {
        let mut rng = crate::rng::SeededRng::new(11);
        let g = Geometry::simple([20, 20, 20], Spacing::new(0.8, 1.0, 2.5).unwrap()).unwrap();
        let cfg = FanConfig {
            start_angle: 0.7,
            ..FanConfig::new([7.3, 4.0, 21.1])
        };
        for _ in 0..100 {
            let idx = [rng.below(20), rng.below(20), rng.below(20)];
            let w = g.voxel_to_world(idx).unwrap();
            // rotate (left, superior) by −start, then measure from +superior
            let (l, s) = (-(w[0] - 7.3), w[2] - 21.1);
            let (sin, cos) = 0.7f64.sin_cos();
            let (l2, s2) = (l * cos - s * sin, s * cos + l * sin);
            let mut expected = l2.atan2(s2);
            if expected < 0.0 {
                expected += TAU;
            }
            let got = voxel_fan_angle(idx, &g, &cfg).unwrap();
            let diff = (got - expected).abs().min(TAU - (got - expected).abs());
            assert!(diff < 1e-9, "{idx:?}: {got} vs {expected}");
        }
    }

    #[test]
    fn half_disc_cuts_at_45_90_135() {
        let (m, cfg) = disc(120, 0.0, 55.0, true);
        let p = balance_fan(&m, &cfg).unwrap();
        let quantum = 1.0 / 55.0;
        for (cut, want) in p.cut_angles.iter().zip([45.0f64, 90.0, 135.0]) {
            assert!((cut - want.to_radians()).abs() <= quantum, "{cut} vs {want}");
        }
        let labels = apply_fan(&m, &p).unwrap();
        let h = labels.histogram();
        assert_eq!(h[10] + h[11] + h[12] + h[13], m.count());
        for f in p.achieved_fractions {
            assert!((f - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn full_annulus_cuts_at_quarters() {
        let (m, cfg) = disc(120, 20.0, 55.0, false);
        let p = balance_fan(&m, &cfg).unwrap();
        for (cut, want) in p.cut_angles.iter().zip([90.0f64, 180.0, 270.0]) {
            assert!((cut - want.to_radians()).abs() <= 1.0 / 20.0, "{cut} vs {want}");
        }
        let total: f64 = p.achieved_fractions.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cuts_match_quadratic_scan_oracle() {
        // lopsided blob: dense on the left, sparse on the right
        let g = flat_geometry(60);
        let cfg = FanConfig::new([30.3, 0.0, 29.6]);
        let mut m = BinaryMask::empty(g);
        let mut rng = crate::rng::SeededRng::new(5);
        for z in 0..60 {
            for x in 0..60 {
                let keep = if x < 30 { 0.9 } else { 0.2 };
                if rng.unit() < keep {
                    m.set([x, 0, z], true);
                }
            }
        }
        let p = balance_fan(&m, &cfg).unwrap();
        let angles: Vec<f64> = mask_angles(&m, &cfg).into_iter().map(|(_, a)| a).collect();
        let n = angles.len();
        for q in 1..=3usize {
            let mut best: Option<(usize, f64)> = None;
            for &cand in &angles {
                let below = angles.iter().filter(|&&a| a < cand).count();
                let err = (4 * below).abs_diff(q * n);
                best = match best {
                    Some((e, a)) if e < err || (e == err && a <= cand) => Some((e, a)),
                    _ => Some((err, cand)),
                };
            }
            assert_eq!(p.cut_angles[q - 1], best.unwrap().1);
        }
        let counts = sector_counts(&m, &p);
        for (c, f) in counts.iter().zip(p.achieved_fractions) {
            assert_eq!(*c as f64 / n as f64, f);
            assert!((f - 0.25).abs() <= 2.0 / n as f64 * 60.0);
        }
    }

    #[test]
    fn voxel_on_cut_goes_to_higher_sector() {
        let p = FanPartition {
            config: FanConfig::new([0.0; 3]),
            cut_angles: [1.0, 2.0, 3.0],
            achieved_fractions: [0.25; 4],
        };
        assert_eq!(p.sector_of(0.999), 0);
        assert_eq!(p.sector_of(1.0), 1);
        assert_eq!(p.sector_of(3.0), 3);
    }

    #[test]
    fn degenerate_inputs() {
        let g = flat_geometry(10);
        let cfg = FanConfig::new([4.5, 0.0, 4.5]);
        assert!(matches!(
            balance_fan(&BinaryMask::empty(g), &cfg),
            Err(Error::EmptyMask(_))
        ));
        let mut m = BinaryMask::empty(g);
        m.set([4, 0, 7], true);
        m.set([4, 0, 8], true);
        m.set([4, 0, 9], true);
        // root at x = 4.0 puts the whole column on one ray
        let on_ray = FanConfig::new([4.0, 0.0, 1.0]);
        assert!(matches!(balance_fan(&m, &on_ray), Err(Error::DegenerateFan(_))));

        let bad = FanConfig {
            region_order: [9, 9, 11, 12].map(|i| RegionId::new(i).unwrap()),
            ..cfg
        };
        assert!(balance_fan(&m, &bad).is_err());
    }

    #[test]
    fn rotation_with_start_angle_keeps_fractions() {
        let g = flat_geometry(41);
        let cfg = FanConfig::new([20.0, 0.0, 20.0]);
        let mut rng = crate::rng::SeededRng::new(9);
        let mut a = BinaryMask::empty(g);
        let mut b = BinaryMask::empty(g);
        for z in 0..41 {
            for x in 0..41 {
                let (dx, dz) = (x as i64 - 20, z as i64 - 20);
                if dx * dx + dz * dz <= 400 && rng.unit() < 0.5 + 0.4 * (dx as f64 / 20.0) {
                    a.set([x, 0, z], true);
                    // quarter turn towards patient left: superior → left
                    let (rx, rz) = (20 - dz, 20 + dx);
                    b.set([rx as usize, 0, rz as usize], true);
                }
            }
        }
        let pa = balance_fan(&a, &cfg).unwrap();
        let rotated = FanConfig {
            start_angle: FRAC_PI_2,
            ..cfg
        };
        let pb = balance_fan(&b, &rotated).unwrap();
        let one = 1.0 / a.count() as f64;
        for (fa, fb) in pa.achieved_fractions.iter().zip(pb.achieved_fractions) {
            assert!((fa - fb).abs() <= one + 1e-12, "{fa} vs {fb}");
        }
    }
}
