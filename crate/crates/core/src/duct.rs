//! Dilated-duct screening: flag cases whose predicted duct carries a large
//! cross-sectional scale, locate the duct ends by geodesic distance, and
//! cut candidate regions around them.
//!
//! Geodesics run over the 26-connected voxel graph with step weights 1,
//! sqrt(2) and sqrt(3). Step counts per weight accumulate as integers, so
//! path lengths compare exactly and ties break on the smallest linear
//! index. The extreme points of a component come from the usual two-pass
//! farthest-point sweep: from an arbitrary (smallest-index) seed to the
//! farthest voxel e1, then from e1 to its farthest voxel e2.

use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::refine::ScaleMap;
use crate::volume::{shifted_crop_origin, LabelMap};

/// Scale classes above this count as dilated, strict comparison.
pub const DEFAULT_SCALE_THRESHOLD: f64 = 3.0;

/// Default candidate region edge in voxels.
pub const DEFAULT_REGION_EDGE: usize = 48;

/// An edge-cubed axis-aligned box fully inside the volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CandidateBox {
    pub origin: [usize; 3],
    pub edge: usize,
}

/// Screening result for one case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DuctFinding {
    /// Predicted duct voxel count.
    #[serde(rename = "N")]
    pub n_voxels: usize,
    /// Largest predicted scale over the duct voxels, 0 when empty.
    pub max_scale: u16,
    pub dilated: bool,
    pub extreme_points: Vec<[usize; 3]>,
    pub candidates: Vec<CandidateBox>,
}

/// Step 1 of the screening workflow: a case is dilated iff it has duct
/// voxels and their largest scale exceeds `scale_threshold` (strict).
/// Extreme points and candidates are left empty here.
pub fn detect_dilated(
    mask: &LabelMap,
    scales: &ScaleMap,
    scale_threshold: f64,
) -> Result<DuctFinding> {
    mask.geometry()
        .check_same_dims(&scales.geometry(), "duct mask vs scale map")?;
    let mut n_voxels = 0usize;
    let mut max_scale = 0u16;
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 1 {
            n_voxels += 1;
            max_scale = max_scale.max(scales.get(i));
        }
    }
    let dilated = n_voxels > 0 && (max_scale as f64) > scale_threshold;
    Ok(DuctFinding {
        n_voxels,
        max_scale,
        dilated,
        extreme_points: Vec::new(),
        candidates: Vec::new(),
    })
}

/// Exact geodesic length as integer counts of the three step kinds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct StepLength {
    axis: u32,
    face_diag: u32,
    cube_diag: u32,
}

impl StepLength {
    fn value(self) -> f64 {
        self.axis as f64
            + self.face_diag as f64 * std::f64::consts::SQRT_2
            + self.cube_diag as f64 * 3.0f64.sqrt()
    }

    fn step(self, kind: u32) -> StepLength {
        let mut out = self;
        match kind {
            1 => out.axis += 1,
            2 => out.face_diag += 1,
            _ => out.cube_diag += 1,
        }
        out
    }
}

/// Extreme points of one 26-connected component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentExtremes {
    pub component: usize,
    pub endpoints: ([usize; 3], [usize; 3]),
    pub geodesic_length: f64,
}

fn neighbors_26(dims: [usize; 3], p: [usize; 3]) -> impl Iterator<Item = ([usize; 3], u32)> {
    let mut out = Vec::with_capacity(26);
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let q = [p[0] as i64 + dx, p[1] as i64 + dy, p[2] as i64 + dz];
                if q.iter().zip(dims).all(|(&c, d)| c >= 0 && (c as usize) < d) {
                    let kind = (dx.abs() + dy.abs() + dz.abs()) as u32;
                    out.push(([q[0] as usize, q[1] as usize, q[2] as usize], kind));
                }
            }
        }
    }
    out.into_iter()
}

#[derive(PartialEq)]
struct QueueEntry {
    dist: f64,
    idx: usize,
    len: StepLength,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // min-heap on distance, then smallest index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Geodesic distances from `seed` to every voxel of its component.
/// Returns the farthest voxel (ties to the smallest linear index), its
/// step-exact length, and the dense distance array.
fn geodesic_sweep(
    mask: &LabelMap,
    seed: usize,
) -> (usize, StepLength, Vec<Option<StepLength>>) {
    let geom = mask.geometry();
    let dims = geom.dims();
    let mut dist: Vec<Option<StepLength>> = vec![None; geom.len()];
    let mut settled = vec![false; geom.len()];
    let mut heap = BinaryHeap::new();
    dist[seed] = Some(StepLength::default());
    heap.push(QueueEntry {
        dist: 0.0,
        idx: seed,
        len: StepLength::default(),
    });
    let mut far_idx = seed;
    let mut far_len = StepLength::default();
    while let Some(QueueEntry { idx, len, .. }) = heap.pop() {
        if settled[idx] {
            continue;
        }
        settled[idx] = true;
        // pops arrive in distance order with smaller indices first, so a
        // strict comparison keeps the smallest index among ties
        if len.value() > far_len.value() {
            far_idx = idx;
            far_len = len;
        }
        for (q, kind) in neighbors_26(dims, geom.coord(idx)) {
            let qi = geom.index(q);
            if !mask.get(qi) || settled[qi] {
                continue;
            }
            let cand = len.step(kind);
            let better = match dist[qi] {
                None => true,
                Some(cur) => cand.value() < cur.value(),
            };
            if better {
                dist[qi] = Some(cand);
                heap.push(QueueEntry {
                    dist: cand.value(),
                    idx: qi,
                    len: cand,
                });
            }
        }
    }
    (far_idx, far_len, dist)
}

/// Two-pass farthest-point extreme points per 26-connected component,
/// ordered by component discovery (smallest linear index first).
pub fn geodesic_extreme_points(mask: &LabelMap) -> Result<Vec<ComponentExtremes>> {
    if mask.foreground_count() == 0 {
        return Err(Error::DegenerateInput(
            "geodesic extreme points need a nonempty mask".into(),
        ));
    }
    let geom = mask.geometry();
    let dims = geom.dims();
    let mut component = vec![usize::MAX; geom.len()];
    let mut results = Vec::new();
    let mut comp_id = 0usize;
    for start in 0..geom.len() {
        if !mask.get(start) || component[start] != usize::MAX {
            continue;
        }
        // flood fill this component
        let mut stack = vec![start];
        component[start] = comp_id;
        while let Some(idx) = stack.pop() {
            for (q, _) in neighbors_26(dims, geom.coord(idx)) {
                let qi = geom.index(q);
                if mask.get(qi) && component[qi] == usize::MAX {
                    component[qi] = comp_id;
                    stack.push(qi);
                }
            }
        }
        let (e1, _, _) = geodesic_sweep(mask, start);
        let (e2, len, _) = geodesic_sweep(mask, e1);
        results.push(ComponentExtremes {
            component: comp_id,
            endpoints: (geom.coord(e1), geom.coord(e2)),
            geodesic_length: len.value(),
        });
        comp_id += 1;
    }
    Ok(results)
}

/// One shifted-inward box per endpoint, skipping endpoints inside the
/// optional exclusion mask. Identical boxes are emitted once.
pub fn candidate_regions(
    points: &[[usize; 3]],
    edge: usize,
    dims: [usize; 3],
    exclude: Option<&LabelMap>,
) -> Result<Vec<CandidateBox>> {
    if let Some(ex) = exclude {
        if ex.dims() != dims {
            return Err(Error::GeometryMismatch(format!(
                "exclusion mask dims {:?} vs volume dims {dims:?}",
                ex.dims()
            )));
        }
    }
    let mut boxes: Vec<CandidateBox> = Vec::new();
    for &p in points {
        if let Some(ex) = exclude {
            if ex.get_at(p) {
                continue;
            }
        }
        let origin = shifted_crop_origin(p, edge, dims)?;
        let b = CandidateBox { origin, edge };
        if !boxes.contains(&b) {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

/// Steps 1 and 2 of the screening workflow: dilation test, then extreme
/// points and candidate boxes for dilated cases.
pub fn screen_duct(
    mask: &LabelMap,
    scales: &ScaleMap,
    scale_threshold: f64,
    edge: usize,
    exclude: Option<&LabelMap>,
) -> Result<DuctFinding> {
    let mut finding = detect_dilated(mask, scales, scale_threshold)?;
    if !finding.dilated {
        return Ok(finding);
    }
    let extremes = geodesic_extreme_points(mask)?;
    for e in &extremes {
        finding.extreme_points.push(e.endpoints.0);
        finding.extreme_points.push(e.endpoints.1);
    }
    finding.candidates =
        candidate_regions(&finding.extreme_points, edge, mask.dims(), exclude)?;
    Ok(finding)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_mask(dims: [usize; 3], y: usize, z: usize, x0: usize, x1: usize) -> LabelMap {
        LabelMap::from_fn(dims, [1.0; 3], |p| p[1] == y && p[2] == z && (x0..x1).contains(&p[0]))
            .unwrap()
    }

    fn uniform_scales(mask: &LabelMap, k: u16, v: u16) -> ScaleMap {
        ScaleMap::from_raw(
            mask.dims(),
            mask.spacing(),
            k,
            vec![v; mask.geometry().len()],
        )
        .unwrap()
    }

    #[test]
    fn empty_mask_is_negative() {
        let mask = LabelMap::zeros([8; 3], [1.0; 3]).unwrap();
        let scales = uniform_scales(&mask, 6, 6);
        let f = detect_dilated(&mask, &scales, 3.0).unwrap();
        assert_eq!(f.n_voxels, 0);
        assert!(!f.dilated);
    }

    #[test]
    fn dilation_threshold_is_strict() {
        let mask = line_mask([10, 5, 5], 2, 2, 1, 6);
        let over = uniform_scales(&mask, 6, 4);
        assert!(detect_dilated(&mask, &over, 3.0).unwrap().dilated);
        let at = uniform_scales(&mask, 6, 3);
        let f = detect_dilated(&mask, &at, 3.0).unwrap();
        assert_eq!(f.max_scale, 3);
        assert!(!f.dilated, "max scale equal to the threshold is negative");
    }

    #[test]
    fn raising_the_threshold_never_creates_a_dilated_finding() {
        let mask = line_mask([12, 6, 6], 3, 3, 2, 9);
        let scales = uniform_scales(&mask, 8, 5);
        let mut was_dilated = true;
        for ts in [0.0, 2.0, 4.0, 4.9, 5.0, 6.0, 9.0] {
            let now = detect_dilated(&mask, &scales, ts).unwrap().dilated;
            assert!(!(now && !was_dilated), "dilated reappeared at ts = {ts}");
            was_dilated = now;
        }
    }

    #[test]
    fn empty_mask_has_no_extreme_points() {
        let mask = LabelMap::zeros([6; 3], [1.0; 3]).unwrap();
        assert!(geodesic_extreme_points(&mask).is_err());
    }

    #[test]
    fn single_voxel_component_has_zero_length() {
        let mask = LabelMap::from_fn([6; 3], [1.0; 3], |p| p == [3, 3, 3]).unwrap();
        let ex = geodesic_extreme_points(&mask).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].endpoints, ([3, 3, 3], [3, 3, 3]));
        assert_eq!(ex[0].geodesic_length, 0.0);
    }

    #[test]
    fn straight_segment_ends_and_length() {
        let mask = line_mask([24, 5, 5], 2, 2, 1, 21);
        let ex = geodesic_extreme_points(&mask).unwrap();
        assert_eq!(ex.len(), 1);
        let (a, b) = ex[0].endpoints;
        assert_eq!(a, [20, 2, 2], "farthest from the smallest-index seed");
        assert_eq!(b, [1, 2, 2]);
        assert_eq!(ex[0].geodesic_length, 19.0);
    }

    #[test]
    fn l_shape_selects_the_free_ends() {
        // arm along x then arm along y, sharing the corner at (8, 1, 2)
        let mask = LabelMap::from_fn([10, 10, 5], [1.0; 3], |p| {
            (p[2] == 2 && p[1] == 1 && (1..9).contains(&p[0]))
                || (p[2] == 2 && p[0] == 8 && (1..9).contains(&p[1]))
        })
        .unwrap();
        let ex = geodesic_extreme_points(&mask).unwrap();
        assert_eq!(ex.len(), 1);
        let (a, b) = ex[0].endpoints;
        let free_ends = [[1usize, 1, 2], [8, 8, 2]];
        assert!(free_ends.contains(&a), "endpoint {a:?}");
        assert!(free_ends.contains(&b), "endpoint {b:?}");
        assert_ne!(a, b);

        // oracle: all-pairs geodesic maximum equals the reported length
        let geom = mask.geometry();
        let voxels: Vec<usize> = (0..geom.len()).filter(|&i| mask.get(i)).collect();
        let mut diameter = 0.0f64;
        for &s in &voxels {
            let (_, far, _) = super::geodesic_sweep(&mask, s);
            diameter = diameter.max(far.value());
        }
        assert!((ex[0].geodesic_length - diameter).abs() < 1e-9);
    }

    #[test]
    fn second_endpoint_attains_the_maximum_from_the_first() {
        let mask = LabelMap::from_fn([12, 12, 6], [1.0; 3], |p| {
            p[2] == 2 && (p[0] as i64 - 6).pow(2) + (p[1] as i64 - 6).pow(2) <= 20
        })
        .unwrap();
        let ex = geodesic_extreme_points(&mask).unwrap();
        let geom = mask.geometry();
        let e1 = geom.index(ex[0].endpoints.0);
        let (far, len, dists) = super::geodesic_sweep(&mask, e1);
        assert_eq!(geom.coord(far), ex[0].endpoints.1);
        assert_eq!(len.value(), ex[0].geodesic_length);
        let max_seen = dists
            .iter()
            .flatten()
            .map(|l| l.value())
            .fold(0.0f64, f64::max);
        assert!((max_seen - ex[0].geodesic_length).abs() < 1e-12);
    }

    #[test]
    fn geodesic_dominates_euclidean() {
        let mask = LabelMap::from_fn([14, 14, 6], [1.0; 3], |p| {
            p[2] == 2 && (p[1] == 1 || p[0] == 12) && p[0] >= 1 && p[1] <= 11
        })
        .unwrap();
        for e in geodesic_extreme_points(&mask).unwrap() {
            let (a, b) = e.endpoints;
            let euclid: f64 = (0..3)
                .map(|i| (a[i] as f64 - b[i] as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(e.geodesic_length >= euclid - 1e-12);
        }
    }

    #[test]
    fn two_components_are_reported_separately() {
        let mask = LabelMap::from_fn([20, 6, 6], [1.0; 3], |p| {
            p[1] == 2 && p[2] == 2 && ((2..7).contains(&p[0]) || (12..18).contains(&p[0]))
        })
        .unwrap();
        let ex = geodesic_extreme_points(&mask).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].component, 0);
        assert_eq!(ex[1].component, 1);
        assert_eq!(ex[0].geodesic_length, 4.0);
        assert_eq!(ex[1].geodesic_length, 5.0);
    }

    #[test]
    fn candidate_boxes_shift_inward_and_dedupe() {
        let points = [[2usize, 2, 2], [2, 2, 2], [30, 30, 30]];
        let boxes = candidate_regions(&points, 16, [32, 32, 32], None).unwrap();
        assert_eq!(boxes.len(), 2);
        assert_eq!(boxes[0], CandidateBox { origin: [0, 0, 0], edge: 16 });
        assert_eq!(boxes[1], CandidateBox { origin: [16, 16, 16], edge: 16 });
    }

    #[test]
    fn excluded_endpoints_produce_no_box() {
        let exclude = LabelMap::from_fn([16; 3], [1.0; 3], |p| p[0] < 8).unwrap();
        let points = [[2usize, 2, 2], [12, 12, 12]];
        let boxes = candidate_regions(&points, 8, [16; 3], Some(&exclude)).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].origin, [8, 8, 8]);
    }

    #[test]
    fn oversized_edge_is_an_error() {
        assert!(candidate_regions(&[[0, 0, 0]], 40, [32, 48, 48], None).is_err());
    }

    #[test]
    fn screening_composes_and_skips_negative_cases() {
        let mask = line_mask([40, 12, 12], 6, 6, 4, 32);
        let dilated = uniform_scales(&mask, 8, 5);
        let f = screen_duct(&mask, &dilated, 3.0, 12, None).unwrap();
        assert!(f.dilated);
        assert_eq!(f.extreme_points.len(), 2);
        assert!(!f.candidates.is_empty());
        for b in &f.candidates {
            for a in 0..3 {
                assert!(b.origin[a] + b.edge <= mask.dims()[a]);
            }
        }

        let thin = uniform_scales(&mask, 8, 2);
        let f = screen_duct(&mask, &thin, 3.0, 12, None).unwrap();
        assert!(!f.dilated);
        assert!(f.extreme_points.is_empty() && f.candidates.is_empty());
    }
}
