//! Loss kernels with analytic gradients.
//!
//! * two-step classification: focal loss on the first-step logit over the
//!   low levels plus focal loss on the max-in-out face logit over the anchors
//!   that survive first-step filtering, each normalized by its positive count;
//! * two-step regression: smooth-L1 over the first-step deltas of positive
//!   high-level anchors plus smooth-L1 over the second-step deltas of positive
//!   survivors, unnormalized;
//! * attention: pixel-wise sigmoid cross-entropy, averaged per level and
//!   summed over levels;
//! * hybrid: the plain sum of the three.
//!
//! Assignments, survivors and attention masks are constants with respect to
//! the score maps; no gradient flows through them.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::assign::AssignmentResult;
use crate::attention::AttentionTarget;
use crate::error::{Error, Result};
use crate::maps::ScoreMaps;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sigmoid focal loss of one logit and its derivative with respect to the logit.
pub fn sigmoid_focal_loss(logit: f64, label: u8, params: &FocalParams) -> (f64, f64) {
    let (s, sign, alpha_t) = if label == 1 {
        (logit, 1.0, params.alpha)
    } else {
        (-logit, -1.0, 1.0 - params.alpha)
    };
    let p_t = sigmoid(s);
    let q = sigmoid(-s);
    let log_pt = -softplus(-s);
    let mod_factor = if params.gamma == 0.0 { 1.0 } else { q.powf(params.gamma) };
    let loss = -alpha_t * mod_factor * log_pt;
    let d_s = alpha_t * mod_factor * (params.gamma * p_t * log_pt - q);
    (loss, sign * d_s)
}

/// Smooth-L1 with unit transition point; returns loss and d/d(pred).
pub fn smooth_l1(pred: f64, target: f64) -> (f64, f64) {
    let x = pred - target;
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Binary sigmoid cross-entropy; returns loss and d/d(logit).
pub fn sigmoid_cross_entropy(logit: f64, target: f64) -> (f64, f64) {
    (softplus(logit) - target * logit, sigmoid(logit) - target)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxInOutScore {
    pub pos: f64,
    pub neg: f64,
    /// `pos - neg`, the logit of the face probability.
    pub face_logit: f64,
    pub pos_arg: usize,
    pub neg_arg: usize,
}

fn arg_max(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Max over each score group. Ties resolve to the lowest index, which only
/// affects where the subgradient is routed.
pub fn max_in_out_reduce(pos_logits: &[f64], neg_logits: &[f64]) -> MaxInOutScore {
    assert!(!pos_logits.is_empty() && !neg_logits.is_empty(), "empty max-in-out group");
    let (pos_arg, pos) = arg_max(pos_logits);
    let (neg_arg, neg) = arg_max(neg_logits);
    MaxInOutScore { pos, neg, face_logit: pos - neg, pos_arg, neg_arg }
}

/// Focal loss on the max-in-out face logit; gradient with respect to all
/// `cp + cn` raw logits (written into `grad`, positives first).
pub fn max_in_out_focal(
    pos_logits: &[f64],
    neg_logits: &[f64],
    label: u8,
    params: &FocalParams,
    grad: &mut [f64],
) -> f64 {
    let r = max_in_out_reduce(pos_logits, neg_logits);
    let (loss, d) = sigmoid_focal_loss(r.face_logit, label, params);
    grad.fill(0.0);
    grad[r.pos_arg] = d;
    grad[pos_logits.len() + r.neg_arg] = -d;
    loss
}

/// A loss value with its gradient laid out like the score maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: ScoreMaps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub stc: f64,
    pub str: f64,
    pub att: f64,
    pub total: f64,
    pub grad: ScoreMaps,
}

/// Everything the composite kernels need besides the maps.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub anchors: &'a AnchorSet,
    pub first: &'a AssignmentResult,
    pub second: &'a AssignmentResult,
    /// Per-anchor flag: kept by the first-step filter.
    pub survivors: &'a [bool],
    pub masks: &'a AttentionTarget,
}

impl LossInputs<'_> {
    fn check(&self, maps: &ScoreMaps) -> Result<()> {
        maps.validate(self.anchors)?;
        let n = self.anchors.len();
        for (what, len) in [
            ("first assignment", self.first.len()),
            ("second assignment", self.second.len()),
            ("survivor mask", self.survivors.len()),
        ] {
            if len != n {
                return Err(Error::ShapeMismatch(format!("{what}: expected {n} anchors, got {len}")));
            }
        }
        Ok(())
    }
}

/// Converts survivor indices into a per-anchor mask.
pub fn survivor_mask(indices: &[usize], num_anchors: usize) -> Vec<bool> {
    let mut m = vec![false; num_anchors];
    for &i in indices {
        m[i] = true;
    }
    m
}

pub fn stc_loss(maps: &ScoreMaps, inputs: &LossInputs, params: &FocalParams) -> Result<LossOutput> {
    inputs.check(maps)?;
    let mut grad = maps.zeros_like();
    let stc = inputs.anchors.stc_range();

    let n_s1 = stc.clone().filter(|&i| inputs.first.labels[i].is_positive()).count().max(1) as f64;
    let mut first_sum = 0.0;
    for i in stc {
        let Some(label) = inputs.first.labels[i].class_target() else { continue };
        let (l, d) = sigmoid_focal_loss(maps.first_logits[i], label, params);
        first_sum += l;
        grad.first_logits[i] = d / n_s1;
    }

    let n_s2 = (0..inputs.anchors.len())
        .filter(|&i| inputs.survivors[i] && inputs.second.labels[i].is_positive())
        .count()
        .max(1) as f64;
    let gs = maps.group_size();
    let mut second_sum = 0.0;
    let mut g = vec![0.0; gs];
    for i in 0..inputs.anchors.len() {
        if !inputs.survivors[i] {
            continue;
        }
        let Some(label) = inputs.second.labels[i].class_target() else { continue };
        let (pos, neg) = maps.second_groups(i);
        second_sum += max_in_out_focal(pos, neg, label, params, &mut g);
        for (dst, src) in grad.second_logits[i * gs..(i + 1) * gs].iter_mut().zip(&g) {
            *dst = src / n_s2;
        }
    }

    Ok(LossOutput { value: first_sum / n_s1 + second_sum / n_s2, grad })
}

pub fn str_loss(maps: &ScoreMaps, inputs: &LossInputs) -> Result<LossOutput> {
    inputs.check(maps)?;
    let mut grad = maps.zeros_like();
    let str_range = inputs.anchors.str_range();
    let offset = str_range.start;

    let missing = |step: &str, i: usize| {
        Error::ShapeMismatch(format!("{step} positive anchor {i} has no regression target"))
    };

    let mut value = 0.0;
    for i in str_range {
        if !inputs.first.labels[i].is_positive() {
            continue;
        }
        let target = inputs.first.reg_targets[i].ok_or_else(|| missing("first-step", i))?;
        let pred = maps.first_deltas[i - offset];
        for (k, t) in target.to_array().into_iter().enumerate() {
            let (l, d) = smooth_l1(pred[k], t);
            value += l;
            grad.first_deltas[i - offset][k] = d;
        }
    }
    for i in 0..inputs.anchors.len() {
        if !(inputs.survivors[i] && inputs.second.labels[i].is_positive()) {
            continue;
        }
        let target = inputs.second.reg_targets[i].ok_or_else(|| missing("second-step", i))?;
        let pred = maps.second_deltas[i];
        for (k, t) in target.to_array().into_iter().enumerate() {
            let (l, d) = smooth_l1(pred[k], t);
            value += l;
            grad.second_deltas[i][k] = d;
        }
    }
    Ok(LossOutput { value, grad })
}

/// Per-level mean sigmoid cross-entropy, summed over levels.
pub fn attention_loss(pred: &[Vec<f64>], masks: &AttentionTarget) -> Result<(f64, Vec<Vec<f64>>)> {
    if pred.len() != masks.levels.len() {
        return Err(Error::ShapeMismatch(format!(
            "attention: {} predicted levels vs {} mask levels",
            pred.len(),
            masks.levels.len()
        )));
    }
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (l, (p, m)) in pred.iter().zip(&masks.levels).enumerate() {
        if p.len() != m.cells.len() {
            return Err(Error::ShapeMismatch(format!(
                "attention level {l}: {} logits vs {} mask cells",
                p.len(),
                m.cells.len()
            )));
        }
        if p.is_empty() {
            grads.push(Vec::new());
            continue;
        }
        let inv = 1.0 / p.len() as f64;
        let mut sum = 0.0;
        let mut g = Vec::with_capacity(p.len());
        for (&z, &y) in p.iter().zip(&m.cells) {
            let (loss, d) = sigmoid_cross_entropy(z, y as f64);
            sum += loss;
            g.push(d * inv);
        }
        value += sum * inv;
        grads.push(g);
    }
    Ok((value, grads))
}

pub fn hybrid_loss(maps: &ScoreMaps, inputs: &LossInputs, params: &FocalParams) -> Result<LossBreakdown> {
    let stc = stc_loss(maps, inputs, params)?;
    let str_ = str_loss(maps, inputs)?;
    let (att, att_grad) = attention_loss(&maps.attention, inputs.masks)?;

    let mut grad = stc.grad;
    grad.first_deltas = str_.grad.first_deltas;
    grad.second_deltas = str_.grad.second_deltas;
    grad.attention = att_grad;

    Ok(LossBreakdown {
        stc: stc.value,
        str: str_.value,
        att,
        total: stc.value + str_.value + att,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-5;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn focal_examples() {
        let p = FocalParams::default();
        assert!(sigmoid_focal_loss(50.0, 1, &p).0 < 1e-20);
        assert!(sigmoid_focal_loss(-50.0, 0, &p).0 < 1e-20);
        let ce = FocalParams { alpha: 0.5, gamma: 0.0 };
        assert_abs_diff_eq!(sigmoid_focal_loss(0.0, 1, &ce).0, 0.5 * 2f64.ln(), epsilon = 1e-15);
        // stable at large magnitudes
        let (l, d) = sigmoid_focal_loss(-100.0, 1, &p);
        assert!(l.is_finite() && d.is_finite());
        assert_abs_diff_eq!(l, 0.25 * 100.0, epsilon = 1e-9);
        let (l, d) = sigmoid_focal_loss(100.0, 0, &p);
        assert_abs_diff_eq!(l, 0.75 * 100.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d, 0.75, epsilon = 1e-9);
    }

    #[test]
    fn focal_gradient_spot_checks() {
        let p = FocalParams::default();
        for &z in &[-6.0, -1.3, -0.2, 0.0, 0.7, 2.5, 7.0] {
            for label in [0u8, 1] {
                let (_, d) = sigmoid_focal_loss(z, label, &p);
                let num = fd(|x| sigmoid_focal_loss(x, label, &p).0, z);
                assert!((d - num).abs() <= 1e-6 * d.abs().max(1e-3), "z={z} label={label}");
            }
        }
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0, 0.0), (0.0, 0.0));
        assert_eq!(smooth_l1(0.5, 0.0).0, 0.125);
        assert_eq!(smooth_l1(2.0, 0.0), (1.5, 1.0));
        assert_eq!(smooth_l1(-3.0, 0.0), (2.5, -1.0));
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(sigmoid_cross_entropy(0.0, 0.0).0, 2f64.ln(), epsilon = 1e-15);
        assert!(sigmoid_cross_entropy(50.0, 1.0).0 < 1e-20);
        assert!(sigmoid_cross_entropy(-50.0, 0.0).0 < 1e-20);
    }

    #[test]
    fn max_in_out_examples() {
        let r = max_in_out_reduce(&[0.2, 1.5, -0.3], &[0.0, 0.0, 0.0]);
        assert_eq!(r.pos, 1.5);
        assert_eq!(r.pos_arg, 1);
        let r = max_in_out_reduce(&[0.4; 3], &[0.4; 3]);
        assert_eq!(r.face_logit, 0.0);
        assert_eq!(sigmoid(r.face_logit), 0.5);
        let a = max_in_out_reduce(&[0.1, -2.0, 0.9], &[0.3, 1.1, -0.4]);
        let b = max_in_out_reduce(&[0.9, 0.1, -2.0], &[-0.4, 0.3, 1.1]);
        assert_eq!((a.pos, a.neg, a.face_logit), (b.pos, b.neg, b.face_logit));
    }

    #[test]
    fn max_in_out_focal_routes_to_argmax() {
        let p = FocalParams::default();
        let mut g = vec![0.0; 6];
        max_in_out_focal(&[0.1, 2.0, -1.0], &[0.5, -0.5, 0.7], 1, &p, &mut g);
        assert_eq!(g[0], 0.0);
        assert!(g[1] < 0.0);
        assert_eq!(g[5], -g[1]);
        assert_eq!(g.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn attention_uniform_zero_mask() {
        use crate::attention::{AttentionTarget, LevelMask};
        let masks = AttentionTarget {
            levels: vec![
                LevelMask { grid_w: 2, grid_h: 2, cells: vec![0; 4] },
                LevelMask { grid_w: 1, grid_h: 1, cells: vec![0] },
            ],
        };
        let (v, g) = attention_loss(&[vec![0.0; 4], vec![0.0]], &masks).unwrap();
        assert_abs_diff_eq!(v, 2.0 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(g[0][0], 0.125, epsilon = 1e-15);
        assert!(attention_loss(&[vec![0.0; 3], vec![0.0]], &masks).is_err());
    }
}
