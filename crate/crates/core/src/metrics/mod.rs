//! Per-region overlap and boundary metrics: Dice, HD95 and ASD.
//!
//! Surfaces are the foreground voxels with at least one 6-connected
//! background neighbour (out-of-grid counts as background). Surface distances
//! are measured between voxel centers in mm and pooled over both directions
//! before taking the 95th percentile or the mean.

mod edt;
mod oracle;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    copy_box, BinaryMask, BoundingBox, LabelVolume, RegionId, Spacing, MAX_LABEL, NUM_REGIONS,
};

pub(crate) use edt::squared_edt;
pub use oracle::brute_force_surface_distances;

/// Directed boundary-to-boundary distances (mm) in both directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistanceSet {
    /// From each boundary voxel of A (x-fastest order) to the nearest
    /// boundary voxel of B.
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

impl SurfaceDistanceSet {
    /// Both directions merged and sorted ascending.
    pub fn pooled_sorted(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.a_to_b.iter().chain(&self.b_to_a).copied().collect();
        all.sort_by(f64::total_cmp);
        all
    }

    pub fn is_empty(&self) -> bool {
        self.a_to_b.is_empty() || self.b_to_a.is_empty()
    }

    /// Largest pooled distance (classic Hausdorff distance).
    pub fn hd100(&self) -> Result<f64> {
        self.check()?;
        Ok(self
            .a_to_b
            .iter()
            .chain(&self.b_to_a)
            .copied()
            .fold(0.0, f64::max))
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyMask("surface distance set has an empty direction".into()))
        } else {
            Ok(())
        }
    }
}

/// Percentile of sorted data with linear interpolation between order
/// statistics at rank `q * (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        return Some(sorted[lo]);
    }
    let frac = rank - lo as f64;
    Some(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// 95th percentile of the pooled surface distances.
pub fn hd95(s: &SurfaceDistanceSet) -> Result<f64> {
    s.check()?;
    Ok(percentile_sorted(&s.pooled_sorted(), 0.95).expect("non-empty"))
}

/// Mean of the pooled surface distances.
pub fn asd(s: &SurfaceDistanceSet) -> Result<f64> {
    s.check()?;
    let n = s.a_to_b.len() + s.b_to_a.len();
    let sum: f64 = s.a_to_b.iter().chain(&s.b_to_a).sum();
    Ok(sum / n as f64)
}

/// `2|A∩B| / (|A|+|B|)`; 1 when both are empty.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.geometry().check_same_grid(b.geometry())?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    Ok(dice_from_counts(na, nb, both))
}

pub(crate) fn dice_from_counts(na: usize, nb: usize, both: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

/// Distance (mm) from every voxel center to the nearest foreground voxel
/// center.
pub fn distance_field(mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("distance field of an empty mask".into()));
    }
    let sq = edt::squared_edt(mask.data(), mask.dims(), mask.spacing().as_array());
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// Foreground voxels with a background (or out-of-grid) 6-neighbour, in
/// x-fastest order.
pub fn boundary_voxels(mask: &BinaryMask) -> Vec<[usize; 3]> {
    let g = mask.geometry();
    boundary_flags(mask.data(), g.dims)
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| g.coords(i))
        .collect()
}

pub(crate) fn boundary_flags(data: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut out = vec![false; data.len()];
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if data[i] {
                    out[i] = x == 0
                        || x + 1 == nx
                        || y == 0
                        || y + 1 == ny
                        || z == 0
                        || z + 1 == nz
                        || !data[i - 1]
                        || !data[i + 1]
                        || !data[i - nx]
                        || !data[i + nx]
                        || !data[i - nx * ny]
                        || !data[i + nx * ny];
                }
                i += 1;
            }
        }
    }
    out
}

/// Surface distances between two non-empty masks on the same grid.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<SurfaceDistanceSet> {
    a.geometry().check_same_grid(b.geometry())?;
    let (Some(ba), Some(bb)) = (a.bounding_box(), b.bounding_box()) else {
        return Err(Error::EmptyMask("surface distances need two non-empty masks".into()));
    };
    let bbox = ba.union(&bb);
    let dims = a.dims();
    let sa = copy_box(a.data(), dims, &bbox);
    let sb = copy_box(b.data(), dims, &bbox);
    Ok(surface_distances_boxed(&sa, &sb, bbox.dims(), a.spacing()).expect("masks are non-empty"))
}

/// Surface distances on a sub-box holding both masks entirely. Restricting
/// the grid to such a box changes neither the boundaries nor any distance.
fn surface_distances_boxed(
    a: &[bool],
    b: &[bool],
    dims: [usize; 3],
    spacing: Spacing,
) -> Option<SurfaceDistanceSet> {
    let fa = boundary_flags(a, dims);
    let fb = boundary_flags(b, dims);
    if !fa.contains(&true) || !fb.contains(&true) {
        return None;
    }
    let s = spacing.as_array();
    let directed = |from: &[bool], to: &[bool]| -> Vec<f64> {
        let field = edt::squared_edt(to, dims, s);
        from.iter()
            .zip(&field)
            .filter(|(&f, _)| f)
            .map(|(_, &d)| d.sqrt())
            .collect()
    };
    Some(SurfaceDistanceSet {
        a_to_b: directed(&fa, &fb),
        b_to_a: directed(&fb, &fa),
    })
}

/// Metrics of one region given both masks cut to a box that holds them.
pub(crate) fn region_metrics_boxed(
    region: RegionId,
    a: &[bool],
    b: &[bool],
    dims: [usize; 3],
    spacing: Spacing,
) -> RegionMetrics {
    let na = a.iter().filter(|&&v| v).count();
    let nb = b.iter().filter(|&&v| v).count();
    if na == 0 && nb == 0 {
        return RegionMetrics::undefined(region);
    }
    let both = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let surf = if na > 0 && nb > 0 {
        surface_distances_boxed(a, b, dims, spacing)
    } else {
        None
    };
    RegionMetrics {
        region,
        dice: Some(dice_from_counts(na, nb, both)),
        hd95_mm: surf.as_ref().and_then(|s| hd95(s).ok()),
        asd_mm: surf.as_ref().and_then(|s| asd(s).ok()),
        excluded: 0,
    }
}

/// Metrics for one region of one (reference, candidate) comparison.
///
/// `None` marks an undefined value: distances whenever either mask is empty,
/// and every metric when the region is absent from both volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMetrics {
    pub region: RegionId,
    pub dice: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub asd_mm: Option<f64>,
    /// Comparisons left out of averaged values because they were undefined.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub excluded: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl RegionMetrics {
    pub fn undefined(region: RegionId) -> Self {
        RegionMetrics {
            region,
            dice: None,
            hd95_mm: None,
            asd_mm: None,
            excluded: 0,
        }
    }

    /// Metrics of `a` (reference) against `b` (candidate) on a shared grid.
    pub fn from_masks(region: RegionId, a: &BinaryMask, b: &BinaryMask) -> Result<Self> {
        a.geometry().check_same_grid(b.geometry())?;
        let (na, nb) = (a.count(), b.count());
        if na == 0 && nb == 0 {
            return Ok(Self::undefined(region));
        }
        let d = dice(a, b)?;
        let (hd, av) = if na > 0 && nb > 0 {
            let s = surface_distances(a, b)?;
            (Some(hd95(&s)?), Some(asd(&s)?))
        } else {
            (None, None)
        };
        Ok(RegionMetrics {
            region,
            dice: Some(d),
            hd95_mm: hd,
            asd_mm: av,
            excluded: 0,
        })
    }

    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dice => self.dice,
            Metric::Hd95 => self.hd95_mm,
            Metric::Asd => self.asd_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dice,
    Hd95,
    Asd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dice, Metric::Hd95, Metric::Asd];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Dice => "Dice",
            Metric::Hd95 => "HD95 (mm)",
            Metric::Asd => "ASD (mm)",
        }
    }

    /// Short lowercase identifier.
    pub fn key(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Hd95 => "hd95",
            Metric::Asd => "asd",
        }
    }
}

/// Across-region means for one patient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub dice: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub asd_mm: Option<f64>,
}

/// All 13 region results for one patient, plus their across-region means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMetrics {
    pub patient_id: String,
    pub regions: Vec<RegionMetrics>,
    pub overall: OverallMetrics,
}

impl PatientMetrics {
    /// Builds the record and its overall row; expects one entry per region.
    pub fn new(patient_id: impl Into<String>, mut regions: Vec<RegionMetrics>) -> Result<Self> {
        regions.sort_by_key(|r| r.region);
        let ok = regions.len() == NUM_REGIONS
            && regions.iter().zip(RegionId::all()).all(|(m, r)| m.region == r);
        if !ok {
            return Err(Error::invalid("patient metrics need exactly one entry per region 0..=12"));
        }
        let mean = |metric: Metric| {
            let vals: Vec<f64> = regions.iter().filter_map(|r| r.value(metric)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let overall = OverallMetrics {
            dice: mean(Metric::Dice),
            hd95_mm: mean(Metric::Hd95),
            asd_mm: mean(Metric::Asd),
        };
        Ok(PatientMetrics {
            patient_id: patient_id.into(),
            regions,
            overall,
        })
    }

    pub fn region(&self, r: RegionId) -> &RegionMetrics {
        &self.regions[r.index() as usize]
    }
}

pub(crate) struct LabelStats {
    pub(crate) bbox: [Option<BoundingBox>; MAX_LABEL as usize + 1],
}

impl LabelStats {
    pub(crate) fn scan(lv: &LabelVolume) -> Self {
        let mut bbox: [Option<BoundingBox>; MAX_LABEL as usize + 1] = [None; MAX_LABEL as usize + 1];
        let [nx, ny, nz] = lv.dims();
        let data = lv.data();
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let l = data[i] as usize;
                    if l > 0 {
                        match bbox[l].as_mut() {
                            Some(b) => b.include([x, y, z]),
                            None => bbox[l] = Some(BoundingBox::point([x, y, z])),
                        }
                    }
                    i += 1;
                }
            }
        }
        LabelStats { bbox }
    }
}

/// Per-region metrics of `pred` against `gt`. Regions absent from both are
/// undefined and left out of the overall means.
pub fn evaluate_pair(
    patient_id: &str,
    gt: &LabelVolume,
    pred: &LabelVolume,
) -> Result<PatientMetrics> {
    gt.geometry().check_same_grid(pred.geometry())?;
    let sg = LabelStats::scan(gt);
    let sp = LabelStats::scan(pred);
    let dims = gt.dims();
    let spacing = gt.spacing();
    let regions: Vec<RegionMetrics> = RegionId::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|r| {
            let l = r.stored_label();
            let bbox = match (sg.bbox[l as usize], sp.bbox[l as usize]) {
                (Some(a), Some(b)) => a.union(&b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => return RegionMetrics::undefined(r),
            };
            let cut = |lv: &LabelVolume| -> Vec<bool> {
                copy_box(lv.data(), dims, &bbox).into_iter().map(|v| v == l).collect()
            };
            region_metrics_boxed(r, &cut(gt), &cut(pred), bbox.dims(), spacing)
        })
        .collect();
    PatientMetrics::new(patient_id, regions)
}

/// Ground-truth voxels the prediction missed or labelled differently,
/// carrying the ground-truth label.
pub fn false_negative_mask(gt: &LabelVolume, pred: &LabelVolume) -> Result<LabelVolume> {
    gt.geometry().check_same_grid(pred.geometry())?;
    let data = gt
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&g, &p)| if g > 0 && p != g { g } else { 0 })
        .collect();
    LabelVolume::new(*gt.geometry(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{extract_region_mask, Geometry};

    fn grid(dims: [usize; 3], s: [f64; 3]) -> Geometry {
        Geometry::simple(dims, Spacing::from_array(s).unwrap()).unwrap()
    }

    fn cube(g: Geometry, lo: [usize; 3], side: usize) -> BinaryMask {
        let mut m = BinaryMask::empty(g);
        for z in lo[2]..lo[2] + side {
            for y in lo[1]..lo[1] + side {
                for x in lo[0]..lo[0] + side {
                    m.set([x, y, z], true);
                }
            }
        }
        m
    }

    #[test]
    fn dice_conventions() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let e = BinaryMask::empty(g);
        let c = cube(g, [0, 0, 0], 2);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &c).unwrap(), 0.0);
        assert_eq!(dice(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn dice_of_shifted_cube() {
        let g = grid([16, 12, 12], [1.0; 3]);
        let a = cube(g, [1, 1, 1], 10);
        let b = cube(g, [3, 1, 1], 10);
        assert_eq!(dice(&a, &b).unwrap(), 0.8);
        assert_eq!(dice(&b, &a).unwrap(), 0.8);
    }

    #[test]
    fn dice_dims_mismatch() {
        let a = BinaryMask::empty(grid([4, 4, 4], [1.0; 3]));
        let b = BinaryMask::empty(grid([4, 4, 5], [1.0; 3]));
        assert!(matches!(dice(&a, &b), Err(Error::DimsMismatch { .. })));
    }

    #[test]
    fn boundary_of_solid_cube() {
        let g = grid([9, 9, 9], [1.0; 3]);
        let c = cube(g, [2, 2, 2], 5);
        assert_eq!(boundary_voxels(&c).len(), 98);
        let single = cube(g, [4, 4, 4], 1);
        assert_eq!(boundary_voxels(&single), vec![[4, 4, 4]]);
        // Filling the grid: only voxels on the grid faces are boundary.
        let full = cube(grid([3, 3, 3], [1.0; 3]), [0, 0, 0], 3);
        assert_eq!(boundary_voxels(&full).len(), 26);
    }

    #[test]
    fn distance_field_cases() {
        let g = grid([6, 6, 1], [1.0; 3]);
        let mut m = BinaryMask::empty(g);
        m.set([0, 0, 0], true);
        let f = distance_field(&m).unwrap();
        assert_eq!(f[g.index([0, 0, 0])], 0.0);
        assert_eq!(f[g.index([3, 4, 0])], 5.0);
        assert!(distance_field(&BinaryMask::empty(g)).is_err());
    }

    #[test]
    fn single_voxels_three_mm_apart() {
        let g = grid([8, 3, 3], [1.0; 3]);
        let mut a = BinaryMask::empty(g);
        let mut b = BinaryMask::empty(g);
        a.set([1, 1, 1], true);
        b.set([4, 1, 1], true);
        let s = surface_distances(&a, &b).unwrap();
        assert_eq!(s.a_to_b, vec![3.0]);
        assert_eq!(s.b_to_a, vec![3.0]);
        assert_eq!(hd95(&s).unwrap(), 3.0);
        assert_eq!(asd(&s).unwrap(), 3.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn identical_masks_have_zero_distances() {
        let g = grid([10, 10, 10], [0.8, 1.1, 3.0]);
        let a = cube(g, [2, 3, 1], 5);
        let s = surface_distances(&a, &a).unwrap();
        assert!(s.a_to_b.iter().chain(&s.b_to_a).all(|&d| d == 0.0));
        assert_eq!(hd95(&s).unwrap(), 0.0);
        assert_eq!(asd(&s).unwrap(), 0.0);
    }

    #[test]
    fn surface_distances_need_both_masks() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let a = cube(g, [0, 0, 0], 2);
        assert!(matches!(
            surface_distances(&a, &BinaryMask::empty(g)),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile_sorted(&s, 0.5), Some(2.0));
        assert_eq!(percentile_sorted(&s, 0.95), Some(3.8));
        assert_eq!(percentile_sorted(&[3.0, 3.0], 0.95), Some(3.0));
        assert_eq!(percentile_sorted(&[], 0.95), None);
    }

    #[test]
    fn false_negative_cases() {
        let g = grid([4, 4, 4], [1.0; 3]);
        let mut data = vec![0u8; g.len()];
        data[5] = 7;
        data[6] = 3;
        let gt = LabelVolume::new(g, data.clone()).unwrap();
        assert!(false_negative_mask(&gt, &gt).unwrap().data().iter().all(|&v| v == 0));
        let bg = LabelVolume::background(g);
        assert_eq!(false_negative_mask(&gt, &bg).unwrap(), gt);
        data[5] = 9;
        let pred = LabelVolume::new(g, data).unwrap();
        let fn_mask = false_negative_mask(&gt, &pred).unwrap();
        let hits: Vec<_> = fn_mask.data().iter().enumerate().filter(|(_, &v)| v > 0).collect();
        assert_eq!(hits, vec![(5, &7u8)]);
    }

    #[test]
    fn evaluate_pair_self_and_background() {
        let g = grid([12, 12, 12], [1.0, 1.0, 2.0]);
        let data: Vec<u8> = (0..g.len()).map(|i| ((i / 120) % 14) as u8).collect();
        let gt = LabelVolume::new(g, data).unwrap();
        let m = evaluate_pair("p", &gt, &gt).unwrap();
        for r in &m.regions {
            assert_eq!(r.dice, Some(1.0));
            assert_eq!(r.hd95_mm, Some(0.0));
            assert_eq!(r.asd_mm, Some(0.0));
        }
        let bg = LabelVolume::background(g);
        let m = evaluate_pair("p", &gt, &bg).unwrap();
        for r in &m.regions {
            assert_eq!(r.dice, Some(0.0));
            assert_eq!(r.hd95_mm, None);
            assert_eq!(r.asd_mm, None);
        }
        assert_eq!(m.overall.dice, Some(0.0));
        assert_eq!(m.overall.hd95_mm, None);
    }

    #[test]
    fn evaluate_pair_matches_per_region_composition() {
        let g = grid([14, 13, 12], [0.9, 1.3, 2.5]);
        let gt_data: Vec<u8> = (0..g.len()).map(|i| ((i / 97) % 14) as u8).collect();
        let pred_data: Vec<u8> = (0..g.len()).map(|i| (((i + 40) / 101) % 14) as u8).collect();
        let gt = LabelVolume::new(g, gt_data).unwrap();
        let pred = LabelVolume::new(g, pred_data).unwrap();
        let m = evaluate_pair("p", &gt, &pred).unwrap();
        for r in RegionId::all() {
            let a = extract_region_mask(&gt, r);
            let b = extract_region_mask(&pred, r);
            assert_eq!(m.region(r), &RegionMetrics::from_masks(r, &a, &b).unwrap());
        }
    }
}
