//! Volume data model: voxel geometry, label and intensity volumes, binary masks.
//!
//! All buffers are stored x-fastest: voxel `(x, y, z)` lives at
//! `x + nx * (y + ny * z)`, matching the NIfTI on-disk order.

mod nifti;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::{
    read_labels, read_scalar, read_volume, write_labels, write_scalar, write_volume, AnyVolume,
    VolumeKind,
};

/// Largest stored label value: 13 regions shifted by one, 0 is background.
pub const MAX_LABEL: u8 = 13;
/// Number of rPCI regions.
pub const NUM_REGIONS: usize = 13;

const REGION_NAMES: [&str; NUM_REGIONS] = [
    "central",
    "right upper",
    "epigastrium",
    "left upper",
    "left flank",
    "left lower",
    "pelvis",
    "right lower",
    "right flank",
    "upper jejunum",
    "lower jejunum",
    "upper ileum",
    "lower ileum",
];

/// Voxel edge lengths in mm along x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing([f64; 3]);

impl Spacing {
    pub fn new(dx: f64, dy: f64, dz: f64) -> Result<Self> {
        Self::from_array([dx, dy, dz])
    }

    pub fn from_array(s: [f64; 3]) -> Result<Self> {
        if s.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Spacing(s))
        } else {
            Err(Error::invalid(format!(
                "spacing must be finite and positive, got {s:?}"
            )))
        }
    }

    pub fn isotropic(d: f64) -> Result<Self> {
        Self::new(d, d, d)
    }

    #[inline]
    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    pub fn dx(&self) -> f64 {
        self.0[0]
    }

    pub fn dy(&self) -> f64 {
        self.0[1]
    }

    pub fn dz(&self) -> f64 {
        self.0[2]
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.0[0] * self.0[1] * self.0[2]
    }

    /// Length of the voxel diagonal in mm.
    pub fn diagonal(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        Self::from_array(self.0.map(|v| v * k))
    }
}

/// Affine placement of the voxel grid in world (scanner) space.
///
/// `direction` is stored row-major; its columns are the world directions of
/// the x, y and z voxel axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldTransform {
    pub origin: [f64; 3],
    pub direction: [[f64; 3]; 3],
}

impl Default for WorldTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl WorldTransform {
    pub fn identity() -> Self {
        WorldTransform {
            origin: [0.0; 3],
            direction: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn new(origin: [f64; 3], direction: [[f64; 3]; 3]) -> Result<Self> {
        let t = WorldTransform { origin, direction };
        t.validate()?;
        Ok(t)
    }

    pub fn with_origin(origin: [f64; 3]) -> Self {
        WorldTransform {
            origin,
            ..Self::identity()
        }
    }

    pub fn column(&self, axis: usize) -> [f64; 3] {
        [
            self.direction[0][axis],
            self.direction[1][axis],
            self.direction[2][axis],
        ]
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.direction)
    }

    /// Checks that the direction columns are orthonormal to within 1e-6.
    pub fn validate(&self) -> Result<()> {
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("transform origin must be finite"));
        }
        for i in 0..3 {
            for j in 0..3 {
                let ci = self.column(i);
                let cj = self.column(j);
                let dot: f64 = (0..3).map(|k| ci[k] * cj[k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if !dot.is_finite() || (dot - want).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "direction matrix is not orthonormal (col {i}·col {j} = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Grid shape plus world placement; shared by every volume type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub transform: WorldTransform,
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: Spacing, transform: WorldTransform) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::invalid(format!("dims must be positive, got {dims:?}")));
        }
        transform.validate()?;
        Ok(Geometry {
            dims,
            spacing,
            transform,
        })
    }

    /// Axis-aligned grid at the world origin.
    pub fn simple(dims: [usize; 3], spacing: Spacing) -> Result<Self> {
        Self::new(dims, spacing, WorldTransform::identity())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, [x, y, z]: [usize; 3]) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn contains(&self, idx: [usize; 3]) -> bool {
        idx.iter().zip(self.dims.iter()).all(|(i, n)| i < n)
    }

    /// World position (mm) of a voxel center.
    pub fn voxel_to_world(&self, idx: [usize; 3]) -> Result<[f64; 3]> {
        if !self.contains(idx) {
            return Err(Error::invalid(format!(
                "voxel index {idx:?} outside grid {:?}",
                self.dims
            )));
        }
        Ok(self.continuous_to_world(idx.map(|v| v as f64)))
    }

    /// `origin + direction · (p ∘ spacing)` for a continuous voxel position.
    pub fn continuous_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.spacing.as_array();
        let scaled = [p[0] * s[0], p[1] * s[1], p[2] * s[2]];
        let d = &self.transform.direction;
        let o = &self.transform.origin;
        [
            o[0] + d[0][0] * scaled[0] + d[0][1] * scaled[1] + d[0][2] * scaled[2],
            o[1] + d[1][0] * scaled[0] + d[1][1] * scaled[1] + d[1][2] * scaled[2],
            o[2] + d[2][0] * scaled[0] + d[2][1] * scaled[1] + d[2][2] * scaled[2],
        ]
    }

    /// Continuous voxel coordinates of a world point.
    pub fn world_to_voxel(&self, w: [f64; 3]) -> [f64; 3] {
        let inv = inverse3(&self.transform.direction);
        let o = &self.transform.origin;
        let r = [w[0] - o[0], w[1] - o[1], w[2] - o[2]];
        let s = self.spacing.as_array();
        let mut out = [0.0; 3];
        for (i, v) in out.iter_mut().enumerate() {
            *v = (inv[i][0] * r[0] + inv[i][1] * r[1] + inv[i][2] * r[2]) / s[i];
        }
        out
    }

    /// Nearest grid voxel of a world point, if it falls inside the grid.
    pub fn world_to_index(&self, w: [f64; 3]) -> Option<[usize; 3]> {
        let p = self.world_to_voxel(w);
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let r = p[a].round();
            if r < 0.0 || r >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = r as usize;
        }
        Some(idx)
    }

    /// Sub-grid covering `bbox`, placed so that retained voxels keep their
    /// world coordinates.
    pub fn cropped(&self, bbox: &BoundingBox) -> Geometry {
        let origin = self.continuous_to_world(bbox.lo.map(|v| v as f64));
        Geometry {
            dims: bbox.dims(),
            spacing: self.spacing,
            transform: WorldTransform {
                origin,
                direction: self.transform.direction,
            },
        }
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            lo: [0; 3],
            hi: self.dims.map(|n| n - 1),
        }
    }

    /// Errors unless `other` has the same dims and spacing.
    pub fn check_same_grid(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimsMismatch {
                left: self.dims,
                right: other.dims,
            });
        }
        let a = self.spacing.as_array();
        let b = other.spacing.as_array();
        if (0..3).any(|i| (a[i] - b[i]).abs() > 1e-6 * a[i].max(1.0)) {
            return Err(Error::GeometryMismatch(format!(
                "spacing {a:?} vs {b:?}"
            )));
        }
        Ok(())
    }

    /// Same grid and same world placement (origin within 1e-4 mm,
    /// direction within 1e-6).
    pub fn check_same_placement(&self, other: &Geometry) -> Result<()> {
        self.check_same_grid(other)?;
        let (ta, tb) = (&self.transform, &other.transform);
        let origin_ok = (0..3).all(|i| (ta.origin[i] - tb.origin[i]).abs() <= 1e-4);
        let dir_ok = (0..3)
            .all(|i| (0..3).all(|j| (ta.direction[i][j] - tb.direction[i][j]).abs() <= 1e-6));
        if origin_ok && dir_ok {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "world transforms differ: {ta:?} vs {tb:?}"
            )))
        }
    }

    /// Geometric equality up to `tol` on spacing and transform entries.
    pub fn approx_eq(&self, other: &Geometry, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
        self.dims == other.dims
            && (0..3).all(|i| close(self.spacing.0[i], other.spacing.0[i]))
            && (0..3).all(|i| close(self.transform.origin[i], other.transform.origin[i]))
            && (0..3).all(|i| {
                (0..3).all(|j| {
                    close(
                        self.transform.direction[i][j],
                        other.transform.direction[i][j],
                    )
                })
            })
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = det3(m);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

/// One of the 13 rPCI regions, indexed 0..=12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RegionId(u8);

impl RegionId {
    pub fn new(index: u8) -> Result<Self> {
        if (index as usize) < NUM_REGIONS {
            Ok(RegionId(index))
        } else {
            Err(Error::invalid(format!("region index {index} outside 0..=12")))
        }
    }

    pub fn all() -> impl Iterator<Item = RegionId> + Clone {
        (0..NUM_REGIONS as u8).map(RegionId)
    }

    pub fn from_stored(label: u8) -> Option<Self> {
        (1..=MAX_LABEL).contains(&label).then(|| RegionId(label - 1))
    }

    #[inline]
    pub fn index(self) -> u8 {
        self.0
    }

    /// Voxel value used for this region on disk and in memory.
    #[inline]
    pub fn stored_label(self) -> u8 {
        self.0 + 1
    }

    pub fn name(self) -> &'static str {
        REGION_NAMES[self.0 as usize]
    }
}

impl TryFrom<u8> for RegionId {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        RegionId::new(v)
    }
}

impl From<RegionId> for u8 {
    fn from(r: RegionId) -> u8 {
        r.0
    }
}

impl std::fmt::Display for RegionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "R{}", self.0)
    }
}

/// Inclusive voxel-index box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn point(p: [usize; 3]) -> Self {
        BoundingBox { lo: p, hi: p }
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.hi[a] - self.lo[a] + 1)
    }

    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn include(&mut self, p: [usize; 3]) {
        for a in 0..3 {
            self.lo[a] = self.lo[a].min(p[a]);
            self.hi[a] = self.hi[a].max(p[a]);
        }
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        let mut b = *self;
        b.include(other.lo);
        b.include(other.hi);
        b
    }

    /// Grows by `pad[a]` voxels per side along each axis, clamped to `dims`.
    pub fn expanded(&self, pad: [usize; 3], dims: [usize; 3]) -> BoundingBox {
        BoundingBox {
            lo: [0, 1, 2].map(|a| self.lo[a].saturating_sub(pad[a])),
            hi: [0, 1, 2].map(|a| (self.hi[a] + pad[a]).min(dims[a] - 1)),
        }
    }
}

/// Bounding box of the voxels selected by `pred`, or `None` when nothing is.
pub(crate) fn bounding_box_where<T>(
    geometry: &Geometry,
    data: &[T],
    mut pred: impl FnMut(&T) -> bool,
) -> Option<BoundingBox> {
    let mut bbox: Option<BoundingBox> = None;
    for (i, v) in data.iter().enumerate() {
        if pred(v) {
            let p = geometry.coords(i);
            match bbox.as_mut() {
                Some(b) => b.include(p),
                None => bbox = Some(BoundingBox::point(p)),
            }
        }
    }
    bbox
}

/// Copies the voxels of `bbox` out of an x-fastest buffer of shape `dims`.
pub(crate) fn copy_box<T: Copy>(data: &[T], dims: [usize; 3], bbox: &BoundingBox) -> Vec<T> {
    let [bx, by, bz] = bbox.dims();
    let mut out = Vec::with_capacity(bx * by * bz);
    for z in bbox.lo[2]..=bbox.hi[2] {
        for y in bbox.lo[1]..=bbox.hi[1] {
            let start = bbox.lo[0] + dims[0] * (y + dims[1] * z);
            out.extend_from_slice(&data[start..start + bx]);
        }
    }
    out
}

/// Storage type used when writing a scalar volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarType {
    U8,
    I16,
    U16,
    F32,
}

/// Intensity volume (CT, Hounsfield units).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    geometry: Geometry,
    data: Vec<f32>,
    storage: ScalarType,
}

impl ScalarVolume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        Self::with_storage(geometry, data, ScalarType::F32)
    }

    pub fn with_storage(geometry: Geometry, data: Vec<f32>, storage: ScalarType) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(ScalarVolume {
            geometry,
            data,
            storage,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn storage(&self) -> ScalarType {
        self.storage
    }

    pub fn crop(&self, bbox: &BoundingBox) -> ScalarVolume {
        ScalarVolume {
            geometry: self.geometry.cropped(bbox),
            data: copy_box(&self.data, self.geometry.dims, bbox),
            storage: self.storage,
        }
    }
}

/// Segmentation volume with stored labels in `0..=13`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        if let Some(&bad) = data.iter().find(|&&v| v > MAX_LABEL) {
            return Err(Error::LabelOutOfRange {
                value: bad as i64,
                max: MAX_LABEL,
            });
        }
        Ok(LabelVolume { geometry, data })
    }

    pub fn background(geometry: Geometry) -> Self {
        LabelVolume {
            data: vec![0; geometry.len()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, idx: [usize; 3]) -> u8 {
        self.data[self.geometry.index(idx)]
    }

    /// Voxel count per stored label value `0..=13`.
    pub fn histogram(&self) -> [usize; MAX_LABEL as usize + 1] {
        let mut h = [0usize; MAX_LABEL as usize + 1];
        for &v in &self.data {
            h[v as usize] += 1;
        }
        h
    }

    pub fn crop(&self, bbox: &BoundingBox) -> LabelVolume {
        LabelVolume {
            geometry: self.geometry.cropped(bbox),
            data: copy_box(&self.data, self.geometry.dims, bbox),
        }
    }

    /// Replaces the world transform, keeping dims, spacing and data.
    pub fn with_transform(mut self, transform: WorldTransform) -> Self {
        self.geometry.transform = transform;
        self
    }
}

/// Binary mask on a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                geometry.dims
            )));
        }
        Ok(BinaryMask { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        BinaryMask {
            data: vec![false; geometry.len()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.data[self.geometry.index(idx)]
    }

    pub fn set(&mut self, idx: [usize; 3], v: bool) {
        let i = self.geometry.index(idx);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        bounding_box_where(&self.geometry, &self.data, |&v| v)
    }
}

/// Mask of the voxels whose stored label is `region.index() + 1`.
pub fn extract_region_mask(labels: &LabelVolume, region: RegionId) -> BinaryMask {
    let target = region.stored_label();
    BinaryMask {
        geometry: labels.geometry,
        data: labels.data.iter().map(|&v| v == target).collect(),
    }
}

/// Tightest box containing every non-background voxel.
pub fn label_bounding_box(labels: &LabelVolume) -> Result<BoundingBox> {
    bounding_box_where(&labels.geometry, &labels.data, |&v| v > 0)
        .ok_or_else(|| Error::EmptyMask("label volume is all background".into()))
}
