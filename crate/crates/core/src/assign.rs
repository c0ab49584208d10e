//! Two-step anchor labeling.
//!
//! An anchor whose best IoU with any ground truth reaches `theta_p` becomes
//! positive for that ground truth, one below `theta_n` becomes background, and
//! anything in between is ignored. Afterwards every ground truth claims its
//! single best anchor regardless of thresholds, so faces whose scale falls
//! between anchor scales still receive at least one positive.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::geometry::{encode, iou_matrix, BBox, EncodedDelta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchThresholds {
    pub theta_n: f64,
    pub theta_p: f64,
    pub step: Step,
}

impl MatchThresholds {
    pub const FIRST: Self = Self { theta_n: 0.3, theta_p: 0.7, step: Step::First };
    pub const SECOND: Self = Self { theta_n: 0.35, theta_p: 0.35, step: Step::Second };

    pub fn new(theta_n: f64, theta_p: f64, step: Step) -> Result<Self> {
        let th = Self { theta_n, theta_p, step };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.theta_n && self.theta_n <= self.theta_p && self.theta_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "thresholds must satisfy 0 <= theta_n <= theta_p <= 1, got ({}, {})",
                self.theta_n, self.theta_p
            )));
        }
        Ok(())
    }

    pub fn for_step(step: Step) -> Self {
        match step {
            Step::First => Self::FIRST,
            Step::Second => Self::SECOND,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorLabel {
    Positive(usize),
    Negative,
    Ignored,
}

impl AnchorLabel {
    pub fn is_positive(&self) -> bool {
        matches!(self, AnchorLabel::Positive(_))
    }

    pub fn is_negative(&self) -> bool {
        matches!(self, AnchorLabel::Negative)
    }

    pub fn is_ignored(&self) -> bool {
        matches!(self, AnchorLabel::Ignored)
    }

    pub fn gt(&self) -> Option<usize> {
        match self {
            AnchorLabel::Positive(g) => Some(*g),
            _ => None,
        }
    }

    /// Binary class target, `None` for ignored anchors.
    pub fn class_target(&self) -> Option<u8> {
        match self {
            AnchorLabel::Positive(_) => Some(1),
            AnchorLabel::Negative => Some(0),
            AnchorLabel::Ignored => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub labels: Vec<AnchorLabel>,
    /// Regression target of every positive anchor, `None` elsewhere.
    pub reg_targets: Vec<Option<EncodedDelta>>,
    pub max_iou: Vec<f64>,
    /// Anchors that became positive only through the best-anchor rule.
    pub forced: Vec<bool>,
}

impl AssignmentResult {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.is_positive()).count()
    }

    pub fn num_negative(&self) -> usize {
        self.labels.iter().filter(|l| l.is_negative()).count()
    }

    pub fn num_ignored(&self) -> usize {
        self.labels.iter().filter(|l| l.is_ignored()).count()
    }

    /// Positive-anchor count per ground truth.
    pub fn matches_per_gt(&self, num_gts: usize) -> Vec<usize> {
        let mut counts = vec![0; num_gts];
        for g in self.labels.iter().filter_map(AnchorLabel::gt) {
            counts[g] += 1;
        }
        counts
    }
}

/// Labels every box in `anchors` against `gts`.
///
/// Ties are resolved towards the lowest index: an anchor equally close to two
/// faces takes the lower face index, a face with two equally good anchors
/// claims the lower anchor index. When several faces claim the same best
/// anchor, the face with the highest IoU keeps it.
pub fn assign(anchors: &[BBox], gts: &[BBox], th: &MatchThresholds) -> Result<AssignmentResult> {
    assign_with(anchors, gts, th, true)
}

pub fn assign_with(
    anchors: &[BBox],
    gts: &[BBox],
    th: &MatchThresholds,
    force_best: bool,
) -> Result<AssignmentResult> {
    th.validate()?;
    let n = anchors.len();
    let m = iou_matrix(anchors, gts);

    let mut labels = vec![AnchorLabel::Negative; n];
    let mut max_iou = vec![0.0; n];
    let mut forced = vec![false; n];

    for i in 0..n {
        let row = m.row(i);
        let mut best: Option<(usize, f64)> = None;
        for (j, &v) in row.iter().enumerate() {
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            max_iou[i] = v;
            labels[i] = if v >= th.theta_p && v > 0.0 {
                AnchorLabel::Positive(j)
            } else if v < th.theta_n {
                AnchorLabel::Negative
            } else {
                AnchorLabel::Ignored
            };
        }
    }

    if force_best && n > 0 {
        // claimant per anchor: (gt, iou)
        let mut claims: Vec<Option<(usize, f64)>> = vec![None; n];
        for j in 0..gts.len() {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                let v = m.get(i, j);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((i, v));
                }
            }
            let Some((i, v)) = best else { continue };
            if v <= 0.0 {
                continue;
            }
            match claims[i] {
                Some((_, cv)) if cv >= v => {}
                _ => claims[i] = Some((j, v)),
            }
        }
        for (i, claim) in claims.iter().enumerate() {
            if let Some((j, _)) = *claim {
                if labels[i] != AnchorLabel::Positive(j) {
                    forced[i] = true;
                }
                labels[i] = AnchorLabel::Positive(j);
            }
        }
    }

    let reg_targets = labels
        .iter()
        .zip(anchors)
        .map(|(label, a)| label.gt().map(|g| encode(a, &gts[g])).transpose())
        .collect::<Result<Vec<_>>>()?;

    Ok(AssignmentResult { labels, reg_targets, max_iou, forced })
}

/// Reference boxes for the second-step assignment: the refined boxes on the
/// regression levels and the untouched anchors everywhere else.
///
/// `refined_high` holds one box per anchor of [`AnchorSet::str_range`].
pub fn second_step_inputs(anchors: &AnchorSet, refined_high: &[BBox]) -> Result<Vec<BBox>> {
    let range = anchors.str_range();
    if refined_high.len() != range.len() {
        return Err(Error::LevelMismatch(format!(
            "expected {} refined boxes for the regression levels, got {}",
            range.len(),
            refined_high.len()
        )));
    }
    let mut boxes = anchors.boxes.clone();
    boxes[range].copy_from_slice(refined_high);
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{build_pyramid, generate_anchors};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    // anchor (0,0,10,10) vs a gt sharing its left part: IoU = w/10 for gt (0,0,w,10)
    fn pair(iou_target: f64) -> (Vec<BBox>, Vec<BBox>) {
        (vec![b(0., 0., 10., 10.)], vec![b(0., 0., 10. * iou_target, 10.)])
    }

    #[test]
    fn first_step_positive_and_ignored() {
        let no_force = |a: &[BBox], g: &[BBox], th| assign_with(a, g, th, false).unwrap();
        let (a, g) = pair(0.75);
        assert_eq!(no_force(&a, &g, &MatchThresholds::FIRST).labels[0], AnchorLabel::Positive(0));
        let (a, g) = pair(0.5);
        assert_eq!(no_force(&a, &g, &MatchThresholds::FIRST).labels[0], AnchorLabel::Ignored);
        assert_eq!(no_force(&a, &g, &MatchThresholds::SECOND).labels[0], AnchorLabel::Positive(0));
        let (a, g) = pair(0.2);
        assert_eq!(no_force(&a, &g, &MatchThresholds::FIRST).labels[0], AnchorLabel::Negative);
    }

    #[test]
    fn forced_match_overrides_thresholds() {
        let (a, g) = pair(0.5);
        let r = assign(&a, &g, &MatchThresholds::FIRST).unwrap();
        assert_eq!(r.labels[0], AnchorLabel::Positive(0));
        assert!(r.forced[0]);
        assert!(r.reg_targets[0].is_some());
    }

    #[test]
    fn no_gts_all_negative() {
        let a = vec![b(0., 0., 4., 4.), b(2., 2., 9., 9.)];
        let r = assign(&a, &[], &MatchThresholds::FIRST).unwrap();
        assert!(r.labels.iter().all(AnchorLabel::is_negative));
        assert!(r.reg_targets.iter().all(Option::is_none));
    }

    #[test]
    fn anchor_takes_best_gt_lowest_index_on_tie() {
        let a = vec![b(0., 0., 10., 10.)];
        let g = vec![b(0., 0., 10., 8.), b(0., 2., 10., 10.)];
        let r = assign_with(&a, &g, &MatchThresholds::FIRST, false).unwrap();
        assert_eq!(r.labels[0], AnchorLabel::Positive(0));
    }

    #[test]
    fn contested_best_anchor_goes_to_higher_iou() {
        let a = vec![b(0., 0., 10., 10.), b(100., 100., 101., 101.)];
        let g = vec![b(0., 0., 4., 10.), b(0., 0., 6., 10.)];
        let r = assign(&a, &g, &MatchThresholds::FIRST).unwrap();
        assert_eq!(r.labels[0], AnchorLabel::Positive(1));
        assert_eq!(r.matches_per_gt(2), vec![0, 1]);
    }

    #[test]
    fn invalid_thresholds_rejected() {
        assert!(MatchThresholds::new(0.8, 0.7, Step::First).is_err());
        assert!(MatchThresholds::new(0.3, 1.2, Step::First).is_err());
    }

    #[test]
    fn second_step_identity_refinement() {
        let set = generate_anchors(&build_pyramid(64, 64).unwrap());
        let high = set.boxes[set.str_range()].to_vec();
        let boxes = second_step_inputs(&set, &high).unwrap();
        assert_eq!(boxes, set.boxes);
        assert!(second_step_inputs(&set, &high[1..]).is_err());
    }

    #[test]
    fn second_step_refined_box_hits_gt() {
        let set = generate_anchors(&build_pyramid(256, 256).unwrap());
        let gt = b(40., 60., 180., 230.);
        let mut high = set.boxes[set.str_range()].to_vec();
        high[3] = gt;
        let boxes = second_step_inputs(&set, &high).unwrap();
        let idx = set.str_range().start + 3;
        let r = assign(&boxes, &[gt], &MatchThresholds::SECOND).unwrap();
        assert_eq!(r.max_iou[idx], 1.0);
        assert_eq!(r.labels[idx], AnchorLabel::Positive(0));
        // low levels untouched
        assert_eq!(boxes[set.stc_range()], set.boxes[set.stc_range()]);
    }
}
