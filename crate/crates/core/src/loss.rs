//! Reference implementations of the segmentation losses and their analytic
//! gradients, for verifying training code and for desk-scale checks.
//!
//! Both losses operate on probability fields, not logits, and use natural
//! logs. Probabilities are clamped to `[1e-7, 1 - 1e-7]` before any log;
//! the gradient is zero wherever the clamp is active.
//!
//! The classification loss over a binary label map `y` is
//!
//! ```text
//! L_cls = -sum_v [ beta_p * y_v * ln p_v  +  beta_n * (1 - y_v) * ln(1 - p_v) ]
//! ```
//!
//! with `beta_p = 0.5 / #foreground` and `beta_n = 0.5 / #background`.
//!
//! The distance loss over a scale class map `z` (classes `1..=K` take part,
//! class 0 is excluded) is
//!
//! ```text
//! L_dis = -beta_p * sum_{v: z_v >= 1} [ ln g_v^{z_v}
//!          + lambda * w_v * ln(1 - max_l g_v^l) ]
//! w_v = |argmax_l g_v^l - z_v| / K
//! ```
//!
//! When `w_v = 0` the second term contributes exactly 0 even if the max
//! probability is 1. Gradients treat `w_v` and the argmax index as
//! constants; the max branch routes gradient to the argmax component only.
//!
//! Per-voxel terms accumulate through a fixed pairwise reduction so results
//! are reproducible and carry little rounding.

use crate::edt::ScaleClassMap;
use crate::error::{Error, Result};
use crate::volume::{Geometry, LabelMap};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Default trade-off weight between the two distance-loss terms.
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Per-voxel foreground probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityField {
    geom: Geometry,
    data: Vec<f64>,
}

impl ProbabilityField {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self> {
        let geom = Geometry::new(dims, spacing)?;
        if data.len() != geom.len() {
            return Err(Error::GeometryMismatch(format!(
                "probability data length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        if data.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::DegenerateInput(
                "probability field contains values outside [0, 1]".into(),
            ));
        }
        Ok(ProbabilityField { geom, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], p: f64) -> Result<Self> {
        let geom = Geometry::new(dims, spacing)?;
        let n = geom.len();
        Self::new(dims, spacing, vec![p; n])
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Per-voxel probability vector over scale classes `1..=k`, stored
/// voxel-major: the row for voxel `v` is `data[v*k .. (v+1)*k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleProbabilityField {
    geom: Geometry,
    k: usize,
    data: Vec<f64>,
}

impl ScaleProbabilityField {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 || k > u16::MAX as usize {
            return Err(Error::invalid_parameter(
                "k",
                format!("must lie in 1..=65535, got {k}"),
            ));
        }
        let geom = Geometry::new(dims, spacing)?;
        if data.len() != geom.len() * k {
            return Err(Error::GeometryMismatch(format!(
                "scale probability data length {} does not match dims {dims:?} with k = {k}",
                data.len()
            )));
        }
        if data.iter().any(|&g| !g.is_finite() || g < 0.0) {
            return Err(Error::DegenerateInput(
                "scale probabilities must be finite and nonnegative".into(),
            ));
        }
        for v in 0..geom.len() {
            let sum: f64 = data[v * k..(v + 1) * k].iter().sum();
            if sum > 1.0 + 1e-6 {
                return Err(Error::DegenerateInput(format!(
                    "scale probability row {v} sums to {sum}, above 1 + 1e-6"
                )));
            }
        }
        Ok(ScaleProbabilityField { geom, k, data })
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, voxel: usize) -> &[f64] {
        &self.data[voxel * self.k..(voxel + 1) * self.k]
    }

    /// Argmax class in `1..=k`, ties broken toward the smallest class.
    pub fn argmax_class(&self, voxel: usize) -> u16 {
        let row = self.row(voxel);
        let mut best = 0usize;
        for (i, &g) in row.iter().enumerate().skip(1) {
            if g > row[best] {
                best = i;
            }
        }
        (best + 1) as u16
    }
}

/// Components of the total training loss.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_dis: f64,
    pub l_total: f64,
    pub beta_p: f64,
    pub beta_n: f64,
}

/// Deterministic pairwise sum; order is fixed, rounding grows with log n.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Class weights `beta_p = 0.5 / #fg` and `beta_n = 0.5 / #bg`.
pub fn class_weights(label: &LabelMap) -> Result<(f64, f64)> {
    let fg = label.foreground_count();
    let bg = label.geometry().len() - fg;
    if fg == 0 || bg == 0 {
        return Err(Error::DegenerateInput(format!(
            "class weights need both classes present, got {fg} foreground / {bg} background"
        )));
    }
    Ok((0.5 / fg as f64, 0.5 / bg as f64))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Weighted cross-entropy loss and its gradient with respect to each `p_v`.
pub fn cls_loss(p: &ProbabilityField, label: &LabelMap) -> Result<(f64, Vec<f64>)> {
    p.geometry()
        .check_same_dims(&label.geometry(), "probability field vs label map")?;
    let (beta_p, beta_n) = class_weights(label)?;

    let n = p.data().len();
    let mut terms = vec![0.0f64; n];
    let mut grad = vec![0.0f64; n];
    for i in 0..n {
        let raw = p.data()[i];
        let pc = clamp_prob(raw);
        let clamped = !(PROB_EPS..=1.0 - PROB_EPS).contains(&raw);
        if label.get(i) {
            terms[i] = -beta_p * pc.ln();
            grad[i] = if clamped { 0.0 } else { -beta_p / pc };
        } else {
            terms[i] = -beta_n * (1.0 - pc).ln();
            grad[i] = if clamped { 0.0 } else { beta_n / (1.0 - pc) };
        }
    }
    Ok((pairwise_sum(&terms), grad))
}

/// Distance loss and its gradient with respect to each `g_v^k`.
///
/// `beta_p` comes from [`class_weights`] on the same instance.
pub fn dis_loss(
    g: &ScaleProbabilityField,
    z: &ScaleClassMap,
    beta_p: f64,
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    g.geometry()
        .check_same_dims(&z.geometry(), "scale probabilities vs scale classes")?;
    if g.k() != z.k() as usize {
        return Err(Error::GeometryMismatch(format!(
            "scale probability field has k = {}, class map has k = {}",
            g.k(),
            z.k()
        )));
    }

    let k = g.k();
    let n = g.geometry().len();
    let mut terms = vec![0.0f64; n];
    let mut grad = vec![0.0f64; g.data().len()];
    for v in 0..n {
        let zv = z.data()[v];
        if zv == 0 {
            continue;
        }
        let row = g.row(v);
        let m = g.argmax_class(v) as usize; // 1-based
        let omega = (m as f64 - zv as f64).abs() / k as f64;

        let g_z = row[zv as usize - 1];
        let g_zc = g_z.clamp(PROB_EPS, 1.0);
        let mut term = -g_zc.ln();
        if (PROB_EPS..=1.0).contains(&g_z) {
            grad[v * k + zv as usize - 1] += -beta_p / g_zc;
        }

        if omega != 0.0 {
            let g_m = row[m - 1];
            let g_mc = g_m.min(1.0 - PROB_EPS);
            term += -lambda * omega * (1.0 - g_mc).ln();
            if g_m < 1.0 - PROB_EPS {
                grad[v * k + m - 1] += beta_p * lambda * omega / (1.0 - g_mc);
            }
        }
        terms[v] = beta_p * term;
    }
    Ok((pairwise_sum(&terms), grad))
}

/// Evaluate both losses on one instance and return the breakdown.
pub fn total_loss(
    p: &ProbabilityField,
    g: &ScaleProbabilityField,
    label: &LabelMap,
    z: &ScaleClassMap,
    lambda: f64,
) -> Result<LossBreakdown> {
    let (beta_p, beta_n) = class_weights(label)?;
    let (l_cls, _) = cls_loss(p, label)?;
    let (l_dis, _) = dis_loss(g, z, beta_p, lambda)?;
    Ok(LossBreakdown {
        l_cls,
        l_dis,
        l_total: l_cls + l_dis,
        beta_p,
        beta_n,
    })
}

fn check_margin(value: f64, lo: f64, hi: f64, step: f64, what: &str) -> Result<()> {
    if value - lo < 10.0 * step || hi - value < 10.0 * step {
        return Err(Error::DegenerateInput(format!(
            "{what} = {value} is within 10 steps of a clamp boundary; instance rejected"
        )));
    }
    Ok(())
}

/// Central-difference check of the classification-loss gradient.
///
/// Returns the maximum relative error over all coordinates. Instances with
/// any probability closer than `10 * eps` to the clamp boundaries are
/// rejected.
pub fn finite_difference_check_cls(
    p: &ProbabilityField,
    label: &LabelMap,
    eps: f64,
) -> Result<f64> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::invalid_parameter("eps", "must be positive"));
    }
    for &pv in p.data() {
        check_margin(pv, PROB_EPS, 1.0 - PROB_EPS, eps, "probability")?;
    }
    let (_, grad) = cls_loss(p, label)?;
    let mut work = p.clone();
    let mut max_rel = 0.0f64;
    for (i, &gi) in grad.iter().enumerate() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + eps;
        let (hi, _) = cls_loss(&work, label)?;
        work.data_mut()[i] = orig - eps;
        let (lo, _) = cls_loss(&work, label)?;
        work.data_mut()[i] = orig;
        let fd = (hi - lo) / (2.0 * eps);
        max_rel = max_rel.max(relative_error(fd, gi));
    }
    Ok(max_rel)
}

/// Central-difference check of the distance-loss gradient.
///
/// Rejects instances whose argmax gap or distance to the clamp boundaries
/// is below `10 * eps` on any voxel that takes part in the loss.
pub fn finite_difference_check_dis(
    g: &ScaleProbabilityField,
    z: &ScaleClassMap,
    beta_p: f64,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::invalid_parameter("eps", "must be positive"));
    }
    let k = g.k();
    for v in 0..g.geometry().len() {
        if z.data()[v] == 0 {
            continue;
        }
        let row = g.row(v);
        for &gv in row {
            check_margin(gv, PROB_EPS, 1.0 - PROB_EPS, eps, "scale probability")?;
        }
        let m = g.argmax_class(v) as usize - 1;
        let best = row[m];
        let second = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != m)
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        if k > 1 && best - second < 10.0 * eps {
            return Err(Error::DegenerateInput(format!(
                "argmax gap {} on voxel {v} is below 10 steps; instance rejected",
                best - second
            )));
        }
    }

    let (_, grad) = dis_loss(g, z, beta_p, lambda)?;
    let mut work = g.clone();
    let mut max_rel = 0.0f64;
    for (i, &gi) in grad.iter().enumerate() {
        let orig = work.data()[i];
        work.data_mut()[i] = orig + eps;
        let (hi, _) = dis_loss(&work, z, beta_p, lambda)?;
        work.data_mut()[i] = orig - eps;
        let (lo, _) = dis_loss(&work, z, beta_p, lambda)?;
        work.data_mut()[i] = orig;
        let fd = (hi - lo) / (2.0 * eps);
        max_rel = max_rel.max(relative_error(fd, gi));
    }
    Ok(max_rel)
}

fn relative_error(fd: f64, analytic: f64) -> f64 {
    let scale = fd.abs().max(analytic.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (fd - analytic).abs() / scale
    }
}
