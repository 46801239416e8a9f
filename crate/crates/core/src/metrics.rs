//! Segmentation and case-level evaluation: Dice coefficient, symmetrized
//! mean surface distance, and screening tallies.

use crate::edt::{seeded_sq_edt_mm, surface_mask};
use crate::error::{Error, Result};
use crate::volume::LabelMap;

/// Dice-Sorensen coefficient `2|A and B| / (|A| + |B|)`.
///
/// Two empty masks count as identical (DSC 1), which keeps parameter
/// sweeps over degenerate settings well defined.
pub fn dsc(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    a.geometry()
        .check_same_dims(&b.geometry(), "dsc operands")?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += usize::from(x == 1 && y == 1);
        total += usize::from(x == 1) + usize::from(y == 1);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Symmetrized mean surface distance in millimetres: the mean distance
/// from A's surface voxels to B's surface, averaged with the reverse
/// direction. Surfaces use the 6-neighbour border convention; distances
/// come from the exact seeded transform with anisotropic spacing.
pub fn mean_surface_distance(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    a.geometry()
        .check_same_dims(&b.geometry(), "surface distance operands")?;
    if a.spacing() != b.spacing() {
        return Err(Error::GeometryMismatch(format!(
            "spacing differs: {:?} vs {:?}",
            a.spacing(),
            b.spacing()
        )));
    }
    if a.foreground_count() == 0 || b.foreground_count() == 0 {
        return Err(Error::DegenerateInput(
            "mean surface distance needs two nonempty masks".into(),
        ));
    }
    Ok((directed_mean(a, b)? + directed_mean(b, a)?) / 2.0)
}

fn directed_mean(from: &LabelMap, to: &LabelMap) -> Result<f64> {
    let geom = from.geometry();
    let from_surface = surface_mask(from);
    let to_surface = surface_mask(to);
    let dist_sq = seeded_sq_edt_mm(&to_surface, geom.dims(), geom.spacing());
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, &on) in from_surface.iter().enumerate() {
        if on {
            sum += dist_sq[i].sqrt();
            count += 1;
        }
    }
    debug_assert!(count > 0, "nonempty mask implies a nonempty surface");
    Ok(sum / count as f64)
}

/// Truth or prediction for one screening case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseLabel {
    Normal,
    Abnormal,
}

/// One case in a normal-vs-abnormal screening experiment.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CaseOutcome {
    pub id: String,
    pub truth: CaseLabel,
    pub predicted: CaseLabel,
}

/// Aggregate screening counts and rates.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct CaseTally {
    pub total_abnormal: usize,
    pub total_normal: usize,
    /// Abnormal cases predicted normal.
    pub misses: usize,
    /// Normal cases predicted abnormal.
    pub false_positives: usize,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Sensitivity, specificity and miss count over a list of case outcomes.
/// Both truth classes must be present for the rates to be defined.
pub fn case_tally(outcomes: &[CaseOutcome]) -> Result<CaseTally> {
    let mut total_abnormal = 0usize;
    let mut total_normal = 0usize;
    let mut misses = 0usize;
    let mut false_positives = 0usize;
    for c in outcomes {
        match c.truth {
            CaseLabel::Abnormal => {
                total_abnormal += 1;
                if c.predicted == CaseLabel::Normal {
                    misses += 1;
                }
            }
            CaseLabel::Normal => {
                total_normal += 1;
                if c.predicted == CaseLabel::Abnormal {
                    false_positives += 1;
                }
            }
        }
    }
    if total_abnormal == 0 || total_normal == 0 {
        return Err(Error::DegenerateInput(format!(
            "case tally needs both truth classes, got {total_abnormal} abnormal / {total_normal} normal"
        )));
    }
    Ok(CaseTally {
        total_abnormal,
        total_normal,
        misses,
        false_positives,
        sensitivity: (total_abnormal - misses) as f64 / total_abnormal as f64,
        specificity: (total_normal - false_positives) as f64 / total_normal as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plate(dims: [usize; 3], spacing: [f64; 3], z: usize) -> LabelMap {
        LabelMap::from_fn(dims, spacing, |p| p[2] == z).unwrap()
    }

    #[test]
    fn dsc_identical_disjoint_and_nested() {
        let a = LabelMap::from_fn([6; 3], [1.0; 3], |p| p[0] < 3).unwrap();
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);

        let b = LabelMap::from_fn([6; 3], [1.0; 3], |p| p[0] >= 3).unwrap();
        assert_eq!(dsc(&a, &b).unwrap(), 0.0);

        // |A| = 50 inside |B| = 100: DSC = 2*50/150 = 2/3
        let a = LabelMap::from_fn([10, 10, 1], [1.0; 3], |p| p[1] < 5).unwrap();
        let b = LabelMap::from_fn([10, 10, 1], [1.0; 3], |_| true).unwrap();
        assert!((dsc(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dsc_of_two_empty_masks_is_one() {
        let a = LabelMap::zeros([4; 3], [1.0; 3]).unwrap();
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn dsc_is_symmetric() {
        let a = LabelMap::from_fn([8; 3], [1.0; 3], |p| (p[0] + p[1]) % 3 == 0).unwrap();
        let b = LabelMap::from_fn([8; 3], [1.0; 3], |p| p[2] % 2 == 0).unwrap();
        assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
    }

    #[test]
    fn dsc_rejects_mismatched_dims() {
        let a = LabelMap::zeros([4; 3], [1.0; 3]).unwrap();
        let b = LabelMap::zeros([5; 3], [1.0; 3]).unwrap();
        assert!(dsc(&a, &b).is_err());
    }

    #[test]
    fn msd_identical_masks_is_zero() {
        let a = LabelMap::from_fn([8; 3], [0.5; 3], |p| p.iter().all(|&c| (2..6).contains(&c)))
            .unwrap();
        assert_eq!(mean_surface_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn msd_parallel_plates_two_voxels_apart_at_half_mm() {
        // every surface voxel of one plate is exactly 2 voxels = 1.0 mm
        // from the other plate
        let a = plate([8, 8, 8], [0.5; 3], 2);
        let b = plate([8, 8, 8], [0.5; 3], 4);
        let msd = mean_surface_distance(&a, &b).unwrap();
        assert!((msd - 1.0).abs() < 1e-9, "msd {msd}");
    }

    #[test]
    fn msd_single_voxels_three_apart() {
        let a = LabelMap::from_fn([8, 4, 4], [1.0; 3], |p| p == [1, 2, 2]).unwrap();
        let b = LabelMap::from_fn([8, 4, 4], [1.0; 3], |p| p == [4, 2, 2]).unwrap();
        let msd = mean_surface_distance(&a, &b).unwrap();
        assert!((msd - 3.0).abs() < 1e-9, "msd {msd}");
    }

    #[test]
    fn msd_is_symmetric_by_construction() {
        let a = LabelMap::from_fn([10; 3], [0.7; 3], |p| p[0] < 4 && p[1] < 6).unwrap();
        let b = LabelMap::from_fn([10; 3], [0.7; 3], |p| p[0] >= 2 && p[2] > 1).unwrap();
        let ab = mean_surface_distance(&a, &b).unwrap();
        let ba = mean_surface_distance(&b, &a).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn msd_rejects_empty_masks() {
        let a = LabelMap::zeros([4; 3], [1.0; 3]).unwrap();
        let b = LabelMap::from_fn([4; 3], [1.0; 3], |p| p == [1, 1, 1]).unwrap();
        assert!(mean_surface_distance(&a, &b).is_err());
    }

    fn outcomes(abnormal: usize, misses: usize, normal: usize, fps: usize) -> Vec<CaseOutcome> {
        let mut v = Vec::new();
        for i in 0..abnormal {
            v.push(CaseOutcome {
                id: format!("a{i}"),
                truth: CaseLabel::Abnormal,
                predicted: if i < misses {
                    CaseLabel::Normal
                } else {
                    CaseLabel::Abnormal
                },
            });
        }
        for i in 0..normal {
            v.push(CaseOutcome {
                id: format!("n{i}"),
                truth: CaseLabel::Normal,
                predicted: if i < fps {
                    CaseLabel::Abnormal
                } else {
                    CaseLabel::Normal
                },
            });
        }
        v
    }

    #[test]
    fn tally_reproduces_screening_rates() {
        let t = case_tally(&outcomes(136, 8, 197, 3)).unwrap();
        assert_eq!(t.misses, 8);
        assert!((t.sensitivity * 1000.0).round() / 10.0 == 94.1);
        assert!((t.specificity * 1000.0).round() / 10.0 == 98.5);

        let t = case_tally(&outcomes(136, 4, 197, 3)).unwrap();
        assert!((t.sensitivity * 1000.0).round() / 10.0 == 97.1);
    }

    #[test]
    fn tally_all_normals_correct_gives_full_specificity() {
        let t = case_tally(&outcomes(2, 0, 50, 0)).unwrap();
        assert_eq!(t.specificity, 1.0);
        assert_eq!(t.sensitivity, 1.0);
    }

    #[test]
    fn tally_is_permutation_invariant() {
        let mut cases = outcomes(10, 3, 20, 2);
        let before = case_tally(&cases).unwrap();
        cases.reverse();
        cases.swap(0, 7);
        assert_eq!(case_tally(&cases).unwrap(), before);
    }

    #[test]
    fn tally_rejects_missing_class() {
        assert!(case_tally(&outcomes(5, 1, 0, 0)).is_err());
        assert!(case_tally(&outcomes(0, 0, 5, 1)).is_err());
        assert!(case_tally(&[]).is_err());
    }
}
