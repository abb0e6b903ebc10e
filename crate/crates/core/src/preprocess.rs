//! Mask-bounded cropping with a metric margin, and distance-based
//! multi-label dilation.
//!
//! The pipeline order is crop, then dilate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::squared_edt;
use crate::volume::{copy_box, label_bounding_box, BoundingBox, LabelVolume, ScalarVolume, Spacing};

pub const DEFAULT_MARGIN_MM: f64 = 15.0;
pub const DEFAULT_RADIUS_MM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub margin_mm: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            margin_mm: DEFAULT_MARGIN_MM,
        }
    }
}

impl CropSpec {
    pub fn new(margin_mm: f64) -> Result<Self> {
        check_length("margin_mm", margin_mm)?;
        Ok(CropSpec { margin_mm })
    }

    /// Margin in whole voxels per axis, never covering less than the margin.
    pub fn margin_voxels(&self, spacing: Spacing) -> [usize; 3] {
        spacing.as_array().map(|s| (self.margin_mm / s).ceil() as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DilationSpec {
    pub radius_mm: f64,
}

impl Default for DilationSpec {
    fn default() -> Self {
        DilationSpec {
            radius_mm: DEFAULT_RADIUS_MM,
        }
    }
}

impl DilationSpec {
    pub fn new(radius_mm: f64) -> Result<Self> {
        check_length("radius_mm", radius_mm)?;
        Ok(DilationSpec { radius_mm })
    }
}

fn check_length(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// Box kept by [`crop_with_margin`]: the label bounding box grown by the
/// margin on every side, clamped to the grid.
pub fn crop_box(labels: &LabelVolume, spec: CropSpec) -> Result<BoundingBox> {
    check_length("margin_mm", spec.margin_mm)?;
    let bbox = label_bounding_box(labels)?;
    Ok(bbox.expanded(spec.margin_voxels(labels.spacing()), labels.dims()))
}

/// Crops the CT and its labels to the label bounding box plus margin.
/// Retained voxels keep their world coordinates.
pub fn crop_with_margin(
    ct: &ScalarVolume,
    labels: &LabelVolume,
    spec: CropSpec,
) -> Result<(ScalarVolume, LabelVolume)> {
    ct.geometry().check_same_placement(labels.geometry())?;
    let bbox = crop_box(labels, spec)?;
    Ok((ct.crop(&bbox), labels.crop(&bbox)))
}

/// Gives every background voxel within `radius_mm` of a labelled voxel the
/// label of its nearest labelled voxel (distances between voxel centers, in
/// world mm). Equidistant labels resolve to the smallest one. Labelled
/// voxels are never changed.
pub fn dilate_labels(labels: &LabelVolume, spec: DilationSpec) -> Result<LabelVolume> {
    check_length("radius_mm", spec.radius_mm)?;
    let r = spec.radius_mm;
    if r == 0.0 {
        return Ok(labels.clone());
    }
    let g = labels.geometry();
    let dims = g.dims;
    let spacing = labels.spacing().as_array();
    let pad = spacing.map(|s| (r / s).ceil() as usize);
    let data = labels.data();

    let mut boxes: [Option<BoundingBox>; 14] = [None; 14];
    for (i, &v) in data.iter().enumerate() {
        if v > 0 {
            let p = g.coords(i);
            match boxes[v as usize].as_mut() {
                Some(b) => b.include(p),
                None => boxes[v as usize] = Some(BoundingBox::point(p)),
            }
        }
    }

    let mut out = data.to_vec();
    let mut best = vec![f64::INFINITY; data.len()];
    for (label, bbox) in boxes.iter().enumerate().skip(1) {
        let Some(bbox) = bbox else { continue };
        let bbox = bbox.expanded(pad, dims);
        let label = label as u8;
        let seeds: Vec<bool> = copy_box(data, dims, &bbox).into_iter().map(|v| v == label).collect();
        let sq = squared_edt(&seeds, bbox.dims(), spacing);
        let bx = bbox.dims();
        let mut k = 0;
        for z in bbox.lo[2]..=bbox.hi[2] {
            for y in bbox.lo[1]..=bbox.hi[1] {
                let row = dims[0] * (y + dims[1] * z);
                for x in bbox.lo[0]..=bbox.hi[0] {
                    let i = row + x;
                    if data[i] == 0 {
                        let d2 = sq[k];
                        // labels ascend, so strict < keeps the smaller label on ties
                        if d2.sqrt() <= r && d2 < best[i] {
                            best[i] = d2;
                            out[i] = label;
                        }
                    }
                    k += 1;
                }
            }
        }
        debug_assert_eq!(k, bx[0] * bx[1] * bx[2]);
    }
    LabelVolume::new(*g, out)
}
