//! Geometry-aware refinement: threshold a probability field into a pseudo
//! skeleton, read a scale per voxel from the scale probabilities, rebuild a
//! soft tube shape as a sum of truncated Gaussian kernels, weight it by the
//! segmentation probability, and binarize.
//!
//! Each skeleton voxel `u` with scale `s` contributes
//! `exp(-||v - u||^2 / (2 * (s/3)^2))` to every voxel `v` within the
//! truncation radius `m * s/3`; the normalization constant of the Gaussian
//! density cancels against the peak-normalizing factor, so a lone skeleton
//! voxel always peaks at exactly 1.
//!
//! Splatting accumulates into an f64 buffer with skeleton voxels visited in
//! linear-index order per output slice. Slices are independent, so outputs
//! are identical for any thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::loss::{ProbabilityField, ScaleProbabilityField};
use crate::volume::{Geometry, LabelMap, Volume};

/// Default skeleton and binarization thresholds.
pub const DEFAULT_TP: f64 = 0.98;
pub const DEFAULT_TR: f64 = 0.5;

/// Default Gaussian truncation multiplier: support ends at `m * sigma`.
/// At 4 sigma the dropped tail is exp(-8), about 3.4e-4 per kernel.
pub const DEFAULT_TRUNC_MULTIPLIER: f64 = 4.0;

/// Binary pseudo skeleton obtained by thresholding a probability field.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonMap {
    geom: Geometry,
    data: Vec<u8>,
    threshold: f64,
}

impl SkeletonMap {
    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, idx: usize) -> bool {
        self.data[idx] == 1
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&s| s == 1).count()
    }

    /// Skeleton voxel coordinates in linear-index order.
    pub fn voxels(&self) -> Vec<[usize; 3]> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .map(|(i, _)| self.geom.coord(i))
            .collect()
    }

    pub fn to_label_map(&self) -> LabelMap {
        let vol = Volume::new(self.geom.dims(), self.geom.spacing(), self.data.clone())
            .expect("geometry is valid by construction");
        LabelMap::new(vol).expect("values are binary by construction")
    }
}

/// Predicted scale class per voxel, in `1..=k` everywhere. Only the values
/// at skeleton voxels are meaningful to the reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleMap {
    geom: Geometry,
    k: u16,
    data: Vec<u16>,
}

impl ScaleMap {
    pub fn from_raw(dims: [usize; 3], spacing: [f64; 3], k: u16, data: Vec<u16>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid_parameter("k", "must be at least 1"));
        }
        let geom = Geometry::new(dims, spacing)?;
        if data.len() != geom.len() {
            return Err(Error::GeometryMismatch(format!(
                "scale data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if let Some(&bad) = data.iter().find(|&&z| z == 0 || z > k) {
            return Err(Error::DegenerateInput(format!(
                "predicted scale {bad} outside 1..={k}"
            )));
        }
        Ok(ScaleMap { geom, k, data })
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn k(&self) -> u16 {
        self.k
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, idx: usize) -> u16 {
        self.data[idx]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftShapeKind {
    /// Sum of unit-peak kernels (shape reconstruction).
    Reconstruction,
    /// Kernels weighted by the segmentation probability at their centre.
    Refinement,
}

/// Nonnegative real field produced by soft reconstruction or refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftShape {
    geom: Geometry,
    kind: SoftShapeKind,
    data: Vec<f64>,
}

impl SoftShape {
    pub(crate) fn from_raw(geom: Geometry, kind: SoftShapeKind, data: Vec<f64>) -> Self {
        debug_assert_eq!(geom.len(), data.len());
        SoftShape { geom, kind, data }
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn kind(&self) -> SoftShapeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_f32_volume(&self) -> Volume<f32> {
        Volume::new(
            self.geom.dims(),
            self.geom.spacing(),
            self.data.iter().map(|&x| x as f32).collect(),
        )
        .expect("geometry is valid by construction")
    }
}

/// Thresholds and truncation used by [`gar_pipeline`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GarParams {
    tp: f64,
    tr: f64,
    trunc_multiplier: f64,
}

impl GarParams {
    pub fn new(tp: f64, tr: f64, trunc_multiplier: f64) -> Result<Self> {
        if !(tp > 0.0 && tp < 1.0) {
            return Err(Error::invalid_parameter(
                "tp",
                format!("skeleton threshold must lie in (0, 1), got {tp}"),
            ));
        }
        if !tr.is_finite() || tr <= 0.0 {
            return Err(Error::invalid_parameter(
                "tr",
                format!("refinement threshold must be positive, got {tr}"),
            ));
        }
        if !trunc_multiplier.is_finite() || trunc_multiplier < 3.0 {
            return Err(Error::invalid_parameter(
                "trunc-sigma",
                format!("truncation multiplier must be at least 3, got {trunc_multiplier}"),
            ));
        }
        Ok(GarParams {
            tp,
            tr,
            trunc_multiplier,
        })
    }

    pub fn tp(&self) -> f64 {
        self.tp
    }

    pub fn tr(&self) -> f64 {
        self.tr
    }

    pub fn trunc_multiplier(&self) -> f64 {
        self.trunc_multiplier
    }
}

impl Default for GarParams {
    fn default() -> Self {
        GarParams {
            tp: DEFAULT_TP,
            tr: DEFAULT_TR,
            trunc_multiplier: DEFAULT_TRUNC_MULTIPLIER,
        }
    }
}

/// Skeleton voxel: 1 wherever `p > tp`, strict.
pub fn pseudo_skeleton(p: &ProbabilityField, tp: f64) -> SkeletonMap {
    SkeletonMap {
        geom: p.geometry(),
        data: p.data().iter().map(|&x| u8::from(x > tp)).collect(),
        threshold: tp,
    }
}

/// Argmax scale class per voxel, ties toward the smallest class.
pub fn predicted_scales(g: &ScaleProbabilityField) -> ScaleMap {
    let n = g.geometry().len();
    ScaleMap {
        geom: g.geometry(),
        k: g.k() as u16,
        data: (0..n).map(|v| g.argmax_class(v)).collect(),
    }
}

/// Union of Euclidean balls `||v - u|| <= scale(u)` over skeleton voxels.
pub fn reconstruct_hard(s: &SkeletonMap, scales: &ScaleMap) -> LabelMap {
    assert!(
        s.geometry().same_dims(&scales.geometry()),
        "skeleton and scale map must share dims"
    );
    let geom = s.geometry();
    let dims = geom.dims();
    let mut out = vec![0u8; geom.len()];
    for (idx, _) in s.data.iter().enumerate().filter(|(_, &v)| v == 1) {
        let u = geom.coord(idx);
        let r = scales.data()[idx] as i64;
        let r2 = r * r;
        for dz in -r..=r {
            let z = u[2] as i64 + dz;
            if z < 0 || z as usize >= dims[2] {
                continue;
            }
            for dy in -r..=r {
                let y = u[1] as i64 + dy;
                if y < 0 || y as usize >= dims[1] {
                    continue;
                }
                for dx in -r..=r {
                    let x = u[0] as i64 + dx;
                    if x < 0 || x as usize >= dims[0] {
                        continue;
                    }
                    if dx * dx + dy * dy + dz * dz <= r2 {
                        out[geom.index([x as usize, y as usize, z as usize])] = 1;
                    }
                }
            }
        }
    }
    let vol = Volume::new(dims, geom.spacing(), out).expect("geometry is valid");
    LabelMap::new(vol).expect("values are binary")
}

/// One Gaussian source: centre, sigma, and peak weight.
struct Splat {
    u: [usize; 3],
    sigma: f64,
    weight: f64,
}

/// Accumulate truncated Gaussians into an f64 buffer, slice-parallel.
fn splat_field(geom: Geometry, splats: &[Splat], trunc_multiplier: f64) -> Vec<f64> {
    let dims = geom.dims();
    let (nx, ny) = (dims[0], dims[1]);
    let slab = nx * ny;
    let mut data = vec![0.0f64; geom.len()];
    data.par_chunks_mut(slab).enumerate().for_each(|(z, out)| {
        for s in splats {
            let radius = trunc_multiplier * s.sigma;
            let dz = z as f64 - s.u[2] as f64;
            let rem2 = radius * radius - dz * dz;
            if rem2 < 0.0 {
                continue;
            }
            let rxy = rem2.sqrt();
            let x0 = (s.u[0] as f64 - rxy).ceil().max(0.0) as usize;
            let x1 = (s.u[0] as f64 + rxy).floor().min(nx as f64 - 1.0) as usize;
            let y0 = (s.u[1] as f64 - rxy).ceil().max(0.0) as usize;
            let y1 = (s.u[1] as f64 + rxy).floor().min(ny as f64 - 1.0) as usize;
            let inv_two_sigma2 = 1.0 / (2.0 * s.sigma * s.sigma);
            let r2 = radius * radius;
            for y in y0..=y1 {
                let dy = y as f64 - s.u[1] as f64;
                for x in x0..=x1 {
                    let dx = x as f64 - s.u[0] as f64;
                    let d2 = dx * dx + dy * dy + dz * dz;
                    if d2 <= r2 {
                        out[x + nx * y] += s.weight * (-d2 * inv_two_sigma2).exp();
                    }
                }
            }
        }
    });
    data
}

fn gather_splats(
    s: &SkeletonMap,
    scales: &ScaleMap,
    p: Option<&ProbabilityField>,
) -> Vec<Splat> {
    let geom = s.geometry();
    s.data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(idx, _)| Splat {
            u: geom.coord(idx),
            sigma: scales.data()[idx] as f64 / 3.0,
            weight: p.map_or(1.0, |p| p.data()[idx]),
        })
        .collect()
}

/// Soft shape reconstruction: unit-peak truncated Gaussians at each
/// skeleton voxel, sigma = scale / 3.
pub fn reconstruct_soft(s: &SkeletonMap, scales: &ScaleMap, trunc_multiplier: f64) -> SoftShape {
    assert!(
        s.geometry().same_dims(&scales.geometry()),
        "skeleton and scale map must share dims"
    );
    let splats = gather_splats(s, scales, None);
    SoftShape {
        geom: s.geometry(),
        kind: SoftShapeKind::Reconstruction,
        data: splat_field(s.geometry(), &splats, trunc_multiplier),
    }
}

/// Like [`reconstruct_soft`] but each kernel is weighted by the
/// segmentation probability at its skeleton voxel.
pub fn refine_map(
    s: &SkeletonMap,
    scales: &ScaleMap,
    p: &ProbabilityField,
    trunc_multiplier: f64,
) -> Result<SoftShape> {
    s.geometry()
        .check_same_dims(&scales.geometry(), "skeleton vs scale map")?;
    s.geometry()
        .check_same_dims(&p.geometry(), "skeleton vs probability field")?;
    let splats = gather_splats(s, scales, Some(p));
    Ok(SoftShape {
        geom: s.geometry(),
        kind: SoftShapeKind::Refinement,
        data: splat_field(s.geometry(), &splats, trunc_multiplier),
    })
}

/// Final mask: 1 wherever the soft value exceeds `tr`, strict.
pub fn binarize(r: &SoftShape, tr: f64) -> LabelMap {
    let geom = r.geometry();
    let data = r.data().iter().map(|&x| u8::from(x > tr)).collect();
    let vol = Volume::new(geom.dims(), geom.spacing(), data).expect("geometry is valid");
    LabelMap::new(vol).expect("values are binary")
}

/// All intermediates of the refinement pipeline.
#[derive(Clone, Debug)]
pub struct GarOutput {
    pub mask: LabelMap,
    pub skeleton: SkeletonMap,
    pub scales: ScaleMap,
    pub soft: SoftShape,
}

/// Full pipeline: pseudo skeleton, predicted scales, probability-weighted
/// soft reconstruction, binarization.
pub fn gar_pipeline(
    p: &ProbabilityField,
    g: &ScaleProbabilityField,
    params: &GarParams,
) -> Result<GarOutput> {
    p.geometry()
        .check_same_dims(&g.geometry(), "probability field vs scale probabilities")?;
    let skeleton = pseudo_skeleton(p, params.tp);
    let scales = predicted_scales(g);
    let soft = refine_map(&skeleton, &scales, p, params.trunc_multiplier)?;
    let mask = binarize(&soft, params.tr);
    Ok(GarOutput {
        mask,
        skeleton,
        scales,
        soft,
    })
}
