//! Synthetic tubular phantoms with analytic ground truth, synthetic network
//! outputs, and brute-force oracles for the fast kernels.
//!
//! A phantom realizes a tube as the set of voxels whose centre lies within
//! the local radius of a centre curve; the curve's voxelization, with its
//! per-voxel radius, is the analytic skeleton. Coordinates and radii are in
//! voxel units throughout; voxel `(x, y, z)` has its centre at the
//! continuous point `(x, y, z)`.
//!
//! The oracles here deliberately use exhaustive minimization and dense
//! evaluation, independent of the separable and truncated fast paths they
//! check. They carry a size guard because of their quadratic cost.

use std::collections::HashMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edt::{
    distance_transform, quantize, surface_mask, surface_voxels, DistanceMap, DistanceUnit,
};
use crate::error::{Error, Result};
use crate::loss::{ProbabilityField, ScaleProbabilityField};
use crate::refine::{ScaleMap, SkeletonMap, SoftShape, SoftShapeKind};
use crate::volume::{Geometry, LabelMap, Volume};

/// Maximum voxel count accepted by the brute-force oracles (64 cubed).
pub const ORACLE_VOXEL_LIMIT: usize = 64 * 64 * 64;

/// Probability assigned to confident foreground by [`synth_fields`].
pub const SYNTH_FOREGROUND_P: f64 = 0.99;

fn default_spacing() -> [f64; 3] {
    [1.0; 3]
}

/// One tubular primitive. All lengths are voxel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Straight tube around the segment from `start` to `end`.
    Cylinder {
        start: [f64; 3],
        end: [f64; 3],
        radius: f64,
    },
    /// Tube around a circular arc in the plane z = center.z, counter
    /// clockwise from `arc_start_deg` to `arc_end_deg`.
    TorusSegment {
        center: [f64; 3],
        major_radius: f64,
        tube_radius: f64,
        arc_start_deg: f64,
        arc_end_deg: f64,
    },
    /// Tube around a helix with axis along z through `(center.x, center.y)`
    /// starting at angle 0 and height `center.z`; `pitch` is the z advance
    /// per full turn.
    Helix {
        center: [f64; 3],
        radius: f64,
        pitch: f64,
        tube_radius: f64,
        turns: f64,
    },
}

impl Primitive {
    fn tube_radius(&self) -> f64 {
        match self {
            Primitive::Cylinder { radius, .. } => *radius,
            Primitive::TorusSegment { tube_radius, .. } => *tube_radius,
            Primitive::Helix { tube_radius, .. } => *tube_radius,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tube_radius() < 1.0 {
            return Err(Error::invalid_parameter(
                "radius",
                format!("tube radius must be at least 1 voxel, got {}", self.tube_radius()),
            ));
        }
        match self {
            Primitive::Cylinder { start, end, .. } => {
                if start == end {
                    return Err(Error::invalid_parameter("cylinder", "start equals end"));
                }
            }
            Primitive::TorusSegment {
                major_radius,
                arc_start_deg,
                arc_end_deg,
                ..
            } => {
                if *major_radius <= 0.0 {
                    return Err(Error::invalid_parameter("major_radius", "must be positive"));
                }
                let span = arc_end_deg - arc_start_deg;
                if !(span > 0.0 && span <= 360.0) {
                    return Err(Error::invalid_parameter(
                        "arc",
                        format!("arc span must lie in (0, 360] degrees, got {span}"),
                    ));
                }
            }
            Primitive::Helix { radius, turns, pitch, .. } => {
                if *radius <= 0.0 {
                    return Err(Error::invalid_parameter("radius", "helix radius must be positive"));
                }
                if !turns.is_finite() || *turns <= 0.0 {
                    return Err(Error::invalid_parameter("turns", "must be positive"));
                }
                if *pitch < 0.0 {
                    return Err(Error::invalid_parameter("pitch", "must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    /// Points along the centre curve no further than `step` voxels apart,
    /// each with the local tube radius.
    fn curve_samples(&self, step: f64) -> Vec<([f64; 3], f64)> {
        match self {
            Primitive::Cylinder { start, end, radius } => {
                let length = dist(*start, *end);
                let n = (length / step).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|i| {
                        let t = i as f64 / n as f64;
                        (lerp(*start, *end, t), *radius)
                    })
                    .collect()
            }
            Primitive::TorusSegment {
                center,
                major_radius,
                tube_radius,
                arc_start_deg,
                arc_end_deg,
            } => {
                let t0 = arc_start_deg.to_radians();
                let t1 = arc_end_deg.to_radians();
                let n = ((t1 - t0) * major_radius / step).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|i| {
                        let th = t0 + (t1 - t0) * i as f64 / n as f64;
                        (
                            [
                                center[0] + major_radius * th.cos(),
                                center[1] + major_radius * th.sin(),
                                center[2],
                            ],
                            *tube_radius,
                        )
                    })
                    .collect()
            }
            Primitive::Helix {
                center,
                radius,
                pitch,
                tube_radius,
                turns,
            } => {
                let theta_end = turns * std::f64::consts::TAU;
                let speed = (radius * radius + (pitch / std::f64::consts::TAU).powi(2)).sqrt();
                let n = (theta_end * speed / step).ceil().max(1.0) as usize;
                (0..=n)
                    .map(|i| {
                        let th = theta_end * i as f64 / n as f64;
                        (helix_point(center, *radius, *pitch, th), *tube_radius)
                    })
                    .collect()
            }
        }
    }

    /// Exact (to solver precision for the helix) distance from a point to
    /// the centre curve.
    fn curve_distance(&self, p: [f64; 3]) -> f64 {
        match self {
            Primitive::Cylinder { start, end, .. } => segment_distance(p, *start, *end),
            Primitive::TorusSegment {
                center,
                major_radius,
                arc_start_deg,
                arc_end_deg,
                ..
            } => arc_distance(p, *center, *major_radius, *arc_start_deg, *arc_end_deg),
            Primitive::Helix {
                center,
                radius,
                pitch,
                turns,
                ..
            } => helix_distance(p, *center, *radius, *pitch, *turns),
        }
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0);
    dist(p, lerp(a, b, t))
}

fn arc_distance(p: [f64; 3], center: [f64; 3], major: f64, start_deg: f64, end_deg: f64) -> f64 {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    let theta = dy.atan2(dx);
    let t0 = start_deg.to_radians();
    let span = (end_deg - start_deg).to_radians();
    // angle of p relative to the arc start, wrapped into [0, 2pi)
    let rel = (theta - t0).rem_euclid(std::f64::consts::TAU);
    if rel <= span {
        let rho = (dx * dx + dy * dy).sqrt();
        ((rho - major).powi(2) + (p[2] - center[2]).powi(2)).sqrt()
    } else {
        let end_a = [
            center[0] + major * t0.cos(),
            center[1] + major * t0.sin(),
            center[2],
        ];
        let t1 = end_deg.to_radians();
        let end_b = [
            center[0] + major * t1.cos(),
            center[1] + major * t1.sin(),
            center[2],
        ];
        dist(p, end_a).min(dist(p, end_b))
    }
}

fn helix_point(center: &[f64; 3], radius: f64, pitch: f64, theta: f64) -> [f64; 3] {
    [
        center[0] + radius * theta.cos(),
        center[1] + radius * theta.sin(),
        center[2] + pitch * theta / std::f64::consts::TAU,
    ]
}

/// Distance to a helix via coarse sampling plus golden-section refinement
/// of the best brackets. Accurate to well below 1e-9 voxels.
fn helix_distance(p: [f64; 3], center: [f64; 3], radius: f64, pitch: f64, turns: f64) -> f64 {
    let theta_end = turns * std::f64::consts::TAU;
    let d2 = |theta: f64| {
        let q = helix_point(&center, radius, pitch, theta);
        (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)
    };
    let n = ((theta_end / 0.05).ceil() as usize).max(8);
    let step = theta_end / n as f64;
    let coarse: Vec<f64> = (0..=n).map(|i| d2(i as f64 * step)).collect();

    // refine around every local minimum of the coarse scan
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let left = if i > 0 { coarse[i - 1] } else { f64::INFINITY };
        let right = if i < n { coarse[i + 1] } else { f64::INFINITY };
        if coarse[i] <= left && coarse[i] <= right {
            let lo = (i as f64 - 1.0).max(0.0) * step;
            let hi = ((i + 1) as f64).min(n as f64) * step;
            best = best.min(golden_min(lo, hi, &d2));
        }
    }
    best.sqrt()
}

fn golden_min(mut lo: f64, mut hi: f64, f: &impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INVPHI * (hi - lo);
    let mut d = lo + INVPHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..70 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INVPHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INVPHI * (hi - lo);
            fd = f(d);
        }
    }
    fc.min(fd)
}

/// Declarative description of a phantom volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    #[serde(default = "default_spacing")]
    pub spacing_mm: [f64; 3],
    pub primitives: Vec<Primitive>,
}

/// One analytic skeleton voxel with its true tube radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkeletonPoint {
    pub voxel: [usize; 3],
    pub radius: f64,
}

/// Generated phantom: label map plus analytic skeleton ground truth.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub label: LabelMap,
    pub skeleton: Vec<SkeletonPoint>,
    pub spec: PhantomSpec,
}

impl Phantom {
    pub fn max_radius(&self) -> f64 {
        self.skeleton.iter().map(|s| s.radius).fold(0.0, f64::max)
    }

    /// Skeleton as a binary map, for feeding the reconstruction ops.
    pub fn skeleton_label(&self) -> LabelMap {
        let mut label = LabelMap::zeros(self.label.dims(), self.label.spacing())
            .expect("geometry is valid");
        let geom = label.geometry();
        for s in &self.skeleton {
            label.set(geom.index(s.voxel), true);
        }
        label
    }
}

/// Voxelize a spec: a voxel is foreground iff its centre lies within the
/// local tube radius of some primitive's centre curve.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.primitives.is_empty() {
        return Err(Error::DegenerateInput("phantom spec has no primitives".into()));
    }
    let geom = Geometry::new(spec.dims, spec.spacing_mm)?;
    let mut sample_sets = Vec::with_capacity(spec.primitives.len());
    for prim in &spec.primitives {
        prim.validate()?;
        let samples = prim.curve_samples(0.1);
        let r = prim.tube_radius();
        for (q, _) in &samples {
            for (a, &qa) in q.iter().enumerate() {
                if qa - r < 0.0 || qa + r > spec.dims[a] as f64 - 1.0 {
                    return Err(Error::invalid_parameter(
                        "primitives",
                        format!(
                            "tube extends to {:.2} along axis {a}, outside voxel centres 0..{}",
                            if qa - r < 0.0 { qa - r } else { qa + r },
                            spec.dims[a] - 1
                        ),
                    ));
                }
            }
        }
        sample_sets.push(samples);
    }

    let prims = &spec.primitives;
    let data: Vec<u8> = (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let c = geom.coord(i);
            let p = [c[0] as f64, c[1] as f64, c[2] as f64];
            u8::from(
                prims
                    .iter()
                    .any(|prim| prim.curve_distance(p) <= prim.tube_radius()),
            )
        })
        .collect();
    let label = LabelMap::new(Volume::new(spec.dims, spec.spacing_mm, data)?)?;

    // voxelized skeleton: snap curve samples to voxels, largest radius wins
    let mut radii: HashMap<usize, f64> = HashMap::new();
    for samples in &sample_sets {
        for (q, r) in samples {
            let v = [
                q[0].round() as usize,
                q[1].round() as usize,
                q[2].round() as usize,
            ];
            let idx = geom.index(v);
            let entry = radii.entry(idx).or_insert(0.0);
            if *r > *entry {
                *entry = *r;
            }
        }
    }
    let mut indices: Vec<usize> = radii.keys().copied().collect();
    indices.sort_unstable();
    let skeleton = indices
        .into_iter()
        .map(|idx| SkeletonPoint {
            voxel: geom.coord(idx),
            radius: radii[&idx],
        })
        .collect();

    Ok(Phantom {
        label,
        skeleton,
        spec: spec.clone(),
    })
}

/// Noise model for [`synth_fields`]. All parameters surfaced, none hidden.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthNoise {
    /// Erosion depth in voxels below which the probability ramps off.
    pub boundary_sigma: f64,
    /// Fraction of voxels replaced with uniform noise.
    pub flip_rate: f64,
    /// Gaussian blur (in class units) of the one-hot scale rows.
    pub class_blur: f64,
    pub seed: u64,
}

impl SynthNoise {
    pub fn noiseless(seed: u64) -> Self {
        SynthNoise {
            boundary_sigma: 0.0,
            flip_rate: 0.0,
            class_blur: 0.0,
            seed,
        }
    }
}

/// Emulate a trained network's outputs on a phantom: a probability field
/// that is high inside the mask (eroded and ramped by `boundary_sigma`,
/// with a `flip_rate` fraction of voxels replaced by uniform noise) and a
/// scale probability field centred on the true quantized distances.
pub fn synth_fields(
    ph: &Phantom,
    noise: &SynthNoise,
    k: u16,
) -> Result<(ProbabilityField, ScaleProbabilityField)> {
    if !(0.0..=1.0).contains(&noise.flip_rate) {
        return Err(Error::invalid_parameter("flip-rate", "must lie in [0, 1]"));
    }
    if noise.boundary_sigma < 0.0 || noise.class_blur < 0.0 {
        return Err(Error::invalid_parameter(
            "noise",
            "boundary sigma and class blur must be nonnegative",
        ));
    }
    let max_r = ph.max_radius();
    let needed = (max_r + 0.5).floor() as u16;
    if k < needed.max(1) {
        return Err(Error::invalid_parameter(
            "k",
            format!("k = {k} is below the rounded maximum true radius {needed}"),
        ));
    }

    let geom = ph.label.geometry();
    let n = geom.len();
    let mut p = vec![0.0f64; n];
    if noise.boundary_sigma == 0.0 {
        for (i, out) in p.iter_mut().enumerate() {
            *out = if ph.label.get(i) { SYNTH_FOREGROUND_P } else { 0.0 };
        }
    } else {
        let seeds = surface_mask(&ph.label);
        let sq = crate::edt::seeded_sq_edt_voxel(&seeds, geom.dims(), [0, 1, 2]);
        let sb = noise.boundary_sigma;
        for (i, out) in p.iter_mut().enumerate() {
            let d = (sq[i] as f64).sqrt();
            let signed = if ph.label.get(i) { d } else { -d };
            *out = SYNTH_FOREGROUND_P * ((signed + sb) / (2.0 * sb)).clamp(0.0, 1.0);
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
    let flips = ((noise.flip_rate * n as f64).round() as usize).min(n);
    if flips > 0 {
        for idx in sample_indices(&mut rng, n, flips) {
            p[idx] = rng.gen_range(0.0..1.0);
        }
    }

    let z = quantize(&distance_transform(&ph.label, DistanceUnit::Voxel), k)?;
    let kk = k as usize;
    let mut g = vec![0.0f64; n * kk];
    for v in 0..n {
        let center = z.data()[v].max(1) as f64;
        let row = &mut g[v * kk..(v + 1) * kk];
        if noise.class_blur == 0.0 {
            row[center as usize - 1] = 1.0;
        } else {
            let two_b2 = 2.0 * noise.class_blur * noise.class_blur;
            let mut sum = 0.0;
            for (j, slot) in row.iter_mut().enumerate() {
                let c = j as f64 + 1.0;
                *slot = (-(c - center) * (c - center) / two_b2).exp();
                sum += *slot;
            }
            for slot in row.iter_mut() {
                *slot /= sum;
            }
        }
    }

    Ok((
        ProbabilityField::new(geom.dims(), geom.spacing(), p)?,
        ScaleProbabilityField::new(geom.dims(), geom.spacing(), kk, g)?,
    ))
}

fn guard_size(n: usize) -> Result<()> {
    if n > ORACLE_VOXEL_LIMIT {
        return Err(Error::OracleSizeGuard {
            voxels: n,
            limit: ORACLE_VOXEL_LIMIT,
        });
    }
    Ok(())
}

/// Exhaustive squared voxel-unit distances: for each foreground voxel the
/// minimum over every surface voxel, 0 on background.
pub fn oracle_squared_voxels(label: &LabelMap) -> Result<Vec<i64>> {
    let geom = label.geometry();
    guard_size(geom.len())?;
    let surface = surface_voxels(label);
    let surf = surface.voxels();
    Ok((0..geom.len())
        .map(|i| {
            if !label.get(i) {
                return 0;
            }
            let p = geom.coord(i);
            surf.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| {
                            let d = p[a] as i64 - q[a] as i64;
                            d * d
                        })
                        .sum::<i64>()
                })
                .min()
                .expect("foreground voxel with empty surface set is impossible")
        })
        .collect())
}

/// Reference distance transform by exhaustive minimization, voxel units.
pub fn oracle_distance(label: &LabelMap) -> Result<DistanceMap> {
    let sq = oracle_squared_voxels(label)?;
    let geom = label.geometry();
    DistanceMap::from_raw(
        geom.dims(),
        geom.spacing(),
        DistanceUnit::Voxel,
        sq.iter().map(|&s| (s as f64).sqrt() as f32).collect(),
    )
}

/// Dense, untruncated soft reconstruction: every skeleton voxel contributes
/// to every voxel of the volume.
pub fn oracle_reconstruct(s: &SkeletonMap, scales: &ScaleMap) -> Result<SoftShape> {
    let geom = s.geometry();
    geom.check_same_dims(&scales.geometry(), "skeleton vs scale map")?;
    guard_size(geom.len())?;
    let sources: Vec<([usize; 3], f64)> = s
        .voxels()
        .into_iter()
        .map(|u| (u, scales.data()[geom.index(u)] as f64 / 3.0))
        .collect();
    let data = (0..geom.len())
        .map(|i| {
            let v = geom.coord(i);
            let mut acc = 0.0f64;
            for (u, sigma) in &sources {
                let d2: f64 = (0..3)
                    .map(|a| {
                        let d = v[a] as f64 - u[a] as f64;
                        d * d
                    })
                    .sum();
                acc += (-d2 / (2.0 * sigma * sigma)).exp();
            }
            acc
        })
        .collect();
    Ok(SoftShape::from_raw(geom, SoftShapeKind::Reconstruction, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edt::squared_distance_voxels;
    use crate::refine::{pseudo_skeleton, reconstruct_soft};

    fn straight_cylinder(dims: [usize; 3], radius: f64) -> PhantomSpec {
        let mid = [(dims[1] / 2) as f64, (dims[2] / 2) as f64];
        PhantomSpec {
            dims,
            spacing_mm: [1.0; 3],
            primitives: vec![Primitive::Cylinder {
                start: [5.0, mid[0], mid[1]],
                end: [dims[0] as f64 - 6.0, mid[0], mid[1]],
                radius,
            }],
        }
    }

    #[test]
    fn cylinder_matches_brute_force_point_in_tube() {
        let spec = straight_cylinder([32, 32, 32], 3.0);
        let ph = generate_phantom(&spec).unwrap();
        let geom = ph.label.geometry();
        let (start, end) = ([5.0, 16.0, 16.0], [26.0, 16.0, 16.0]);
        let mut count = 0usize;
        for i in 0..geom.len() {
            let c = geom.coord(i);
            let p = [c[0] as f64, c[1] as f64, c[2] as f64];
            let inside = segment_distance(p, start, end) <= 3.0;
            assert_eq!(ph.label.get(i), inside, "voxel {c:?}");
            count += usize::from(inside);
        }
        assert_eq!(ph.label.foreground_count(), count);
        assert!(count > 0);
    }

    #[test]
    fn sub_voxel_radius_is_rejected() {
        let mut spec = straight_cylinder([16, 16, 16], 0.4);
        assert!(generate_phantom(&spec).is_err());
        spec.primitives = vec![Primitive::Helix {
            center: [8.0, 8.0, 2.0],
            radius: 4.0,
            pitch: 4.0,
            tube_radius: 0.9,
            turns: 1.0,
        }];
        assert!(generate_phantom(&spec).is_err());
    }

    #[test]
    fn out_of_bounds_primitive_is_rejected() {
        let spec = PhantomSpec {
            dims: [16, 16, 16],
            spacing_mm: [1.0; 3],
            primitives: vec![Primitive::Cylinder {
                start: [2.0, 8.0, 8.0],
                end: [14.5, 8.0, 8.0],
                radius: 2.0,
            }],
        };
        assert!(generate_phantom(&spec).is_err());
    }

    #[test]
    fn skeleton_voxels_are_foreground_and_carry_the_radius() {
        let ph = generate_phantom(&straight_cylinder([32, 24, 24], 3.0)).unwrap();
        assert!(!ph.skeleton.is_empty());
        for s in &ph.skeleton {
            assert!(ph.label.get_at(s.voxel), "skeleton voxel {:?}", s.voxel);
            assert_eq!(s.radius, 3.0);
        }
        assert_eq!(ph.max_radius(), 3.0);
    }

    #[test]
    fn every_labeled_voxel_is_near_a_skeleton_voxel() {
        // the voxelized skeleton sits within half a lattice diagonal of
        // the centre curve, so labels stay within radius + 1 of it
        let ph = generate_phantom(&straight_cylinder([28, 20, 20], 3.0)).unwrap();
        let geom = ph.label.geometry();
        for i in 0..geom.len() {
            if !ph.label.get(i) {
                continue;
            }
            let v = geom.coord(i);
            let nearest = ph
                .skeleton
                .iter()
                .map(|s| {
                    (0..3)
                        .map(|a| (v[a] as f64 - s.voxel[a] as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 3.0 + 1.0, "voxel {v:?} is {nearest} from the skeleton");
        }
    }

    #[test]
    fn axis_edt_is_within_one_voxel_of_the_radius() {
        let ph = generate_phantom(&straight_cylinder([40, 24, 24], 4.0)).unwrap();
        let sq = squared_distance_voxels(&ph.label);
        let geom = ph.label.geometry();
        // interior axis voxels, away from the end caps
        for x in 12..28 {
            let d = (sq[geom.index([x, 12, 12])] as f64).sqrt();
            assert!((d - 4.0).abs() <= 1.0, "axis EDT {d} at x = {x}");
        }
    }

    #[test]
    fn torus_matches_independent_formula() {
        let spec = PhantomSpec {
            dims: [40, 40, 16],
            spacing_mm: [1.0; 3],
            primitives: vec![Primitive::TorusSegment {
                center: [19.5, 19.3, 7.2],
                major_radius: 11.3,
                tube_radius: 3.1,
                arc_start_deg: 20.0,
                arc_end_deg: 250.0,
            }],
        };
        let ph = generate_phantom(&spec).unwrap();
        let geom = ph.label.geometry();
        let mut fg = 0usize;
        for i in 0..geom.len() {
            let c = geom.coord(i);
            let p = [c[0] as f64, c[1] as f64, c[2] as f64];
            // independent evaluation: minimize over a dense arc sample
            let mut best = f64::INFINITY;
            let n = 4000;
            for j in 0..=n {
                let th = (20.0 + 230.0 * j as f64 / n as f64).to_radians();
                let q = [
                    19.5 + 11.3 * th.cos(),
                    19.3 + 11.3 * th.sin(),
                    7.2,
                ];
                best = best.min(dist(p, q));
            }
            let inside = best <= 3.1;
            // dense sampling is itself approximate near the boundary
            if (best - 3.1).abs() > 1e-3 {
                assert_eq!(ph.label.get(i), inside, "voxel {c:?}, distance {best}");
            }
            fg += usize::from(ph.label.get(i));
        }
        assert!(fg > 500, "torus phantom too small: {fg}");
    }

    #[test]
    fn helix_matches_dense_sampling_outside_a_boundary_band() {
        let spec = PhantomSpec {
            dims: [28, 28, 30],
            spacing_mm: [1.0; 3],
            primitives: vec![Primitive::Helix {
                center: [13.6, 13.4, 4.3],
                radius: 7.2,
                pitch: 9.7,
                tube_radius: 2.3,
                turns: 2.0,
            }],
        };
        let ph = generate_phantom(&spec).unwrap();
        let geom = ph.label.geometry();
        let theta_end = 2.0 * std::f64::consts::TAU;
        let n = 20000;
        for i in 0..geom.len() {
            let c = geom.coord(i);
            let p = [c[0] as f64, c[1] as f64, c[2] as f64];
            let mut best = f64::INFINITY;
            for j in 0..=n {
                let th = theta_end * j as f64 / n as f64;
                let q = helix_point(&[13.6, 13.4, 4.3], 7.2, 9.7, th);
                best = best.min(dist(p, q));
            }
            if (best - 2.3).abs() > 1e-3 {
                assert_eq!(ph.label.get(i), best <= 2.3, "voxel {c:?}, distance {best}");
            }
        }
        assert!(ph.label.foreground_count() > 300);
    }

    #[test]
    fn oracle_agrees_with_fast_kernel_on_random_maps() {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        for _ in 0..4 {
            let dims = [
                rng.gen_range(4..17),
                rng.gen_range(4..17),
                rng.gen_range(4..17),
            ];
            let label = LabelMap::from_fn(dims, [1.0; 3], |_| rng.gen_bool(0.3)).unwrap();
            assert_eq!(
                oracle_squared_voxels(&label).unwrap(),
                squared_distance_voxels(&label)
            );
        }
    }

    #[test]
    fn oracle_empty_map_is_all_zeros() {
        let label = LabelMap::zeros([6, 6, 6], [1.0; 3]).unwrap();
        assert!(oracle_squared_voxels(&label).unwrap().iter().all(|&s| s == 0));
    }

    #[test]
    fn oracle_size_guard_trips() {
        let label = LabelMap::zeros([65, 65, 65], [1.0; 3]).unwrap();
        assert!(matches!(
            oracle_squared_voxels(&label),
            Err(Error::OracleSizeGuard { .. })
        ));
    }

    #[test]
    fn noiseless_fields_are_scaled_mask_and_one_hot() {
        let ph = generate_phantom(&straight_cylinder([24, 20, 20], 3.0)).unwrap();
        let (p, g) = synth_fields(&ph, &SynthNoise::noiseless(1), 4).unwrap();
        let z = quantize(&distance_transform(&ph.label, DistanceUnit::Voxel), 4).unwrap();
        for i in 0..p.data().len() {
            let expect = if ph.label.get(i) { SYNTH_FOREGROUND_P } else { 0.0 };
            assert_eq!(p.data()[i], expect);
            let row = g.row(i);
            let hot = z.data()[i].max(1) as usize - 1;
            for (j, &gj) in row.iter().enumerate() {
                assert_eq!(gj, if j == hot { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn full_flip_rate_is_pure_noise() {
        let ph = generate_phantom(&straight_cylinder([20, 16, 16], 3.0)).unwrap();
        let (p, _) = synth_fields(
            &ph,
            &SynthNoise {
                boundary_sigma: 0.0,
                flip_rate: 1.0,
                class_blur: 0.0,
                seed: 3,
            },
            4,
        )
        .unwrap();
        // every voxel replaced: background no longer identically zero
        let bg_nonzero = (0..p.data().len())
            .filter(|&i| !ph.label.get(i) && p.data()[i] > 0.0)
            .count();
        assert!(bg_nonzero > p.data().len() / 4);
        assert!(p.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn synth_rejects_k_below_max_radius() {
        let ph = generate_phantom(&straight_cylinder([24, 20, 20], 4.0)).unwrap();
        assert!(synth_fields(&ph, &SynthNoise::noiseless(0), 3).is_err());
        assert!(synth_fields(&ph, &SynthNoise::noiseless(0), 4).is_ok());
    }

    #[test]
    fn class_blur_spreads_rows_and_keeps_them_normalized() {
        let ph = generate_phantom(&straight_cylinder([24, 20, 20], 3.0)).unwrap();
        let (_, g) = synth_fields(
            &ph,
            &SynthNoise {
                boundary_sigma: 0.0,
                flip_rate: 0.0,
                class_blur: 0.8,
                seed: 0,
            },
            5,
        )
        .unwrap();
        for v in 0..g.geometry().len() {
            let row = g.row(v);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn truncated_splat_tracks_the_dense_oracle() {
        let ph = generate_phantom(&straight_cylinder([32, 20, 20], 3.0)).unwrap();
        let geom = ph.label.geometry();
        let mut pd = vec![0.0; geom.len()];
        for s in &ph.skeleton {
            pd[geom.index(s.voxel)] = 1.0;
        }
        let pfield = ProbabilityField::new(geom.dims(), geom.spacing(), pd).unwrap();
        let skel = pseudo_skeleton(&pfield, 0.5);
        let scales = ScaleMap::from_raw(
            geom.dims(),
            geom.spacing(),
            4,
            (0..geom.len())
                .map(|i| {
                    ph.skeleton
                        .iter()
                        .find(|s| geom.index(s.voxel) == i)
                        .map_or(1, |s| s.radius.round() as u16)
                })
                .collect(),
        )
        .unwrap();
        let fast = reconstruct_soft(&skel, &scales, 4.0);
        let dense = oracle_reconstruct(&skel, &scales).unwrap();
        let max_dev = fast
            .data()
            .iter()
            .zip(dense.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev <= 1e-2, "max deviation {max_dev}");
    }
}
