//! Precision/recall and average precision against WIDER FACE ground truth.
//!
//! Detections are matched greedily in score order at a fixed IoU. A detection
//! whose best overlap is an ignored face (flagged invalid, or outside the
//! difficulty subset) counts as neither a true nor a false positive.
//!
//! AP is the step integral `Σ (r_k − r_{k−1}) · p_k` over every distinct score
//! cutoff, so it depends on the ranking only. The exported curve samples the
//! same counts at evenly spaced cutoffs in `(0, 1]`.

use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::postprocess::Detection;
use crate::wider::ImageRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// A ground-truth face as seen by the evaluator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalGt {
    pub bbox: BBox,
    pub ignored: bool,
}

/// A scored detection outcome pooled across images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub outcome: MatchOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// Descending score cutoffs.
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ap: f64,
}

impl PrCurve {
    /// `threshold,precision,recall` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for ((t, p), r) in self.thresholds.iter().zip(&self.precision).zip(&self.recall) {
            s.push_str(&format!("{t:.3},{p:.6},{r:.6}\n"));
        }
        s
    }
}

/// Matches one image's detections, which must already be sorted by
/// descending score.
pub fn match_image(dets: &[Detection], gts: &[EvalGt], iou_threshold: f64) -> Vec<MatchOutcome> {
    let mut claimed = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if claimed[j] && !g.ignored {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, v)) if v >= iou_threshold => {
                    if gts[j].ignored {
                        MatchOutcome::Ignored
                    } else {
                        claimed[j] = true;
                        MatchOutcome::TruePositive
                    }
                }
                _ => MatchOutcome::FalsePositive,
            }
        })
        .collect()
}

/// Builds the curve from pooled matches. `n_thresholds` evenly spaced cutoffs
/// `1, 1 − 1/n, …, 1/n` are sampled for the exported arrays.
pub fn pr_curve(matches: &[ScoredMatch], total_valid_gt: usize, n_thresholds: usize) -> PrCurve {
    let counted: Vec<&ScoredMatch> =
        matches.iter().filter(|m| m.outcome != MatchOutcome::Ignored).collect();
    if total_valid_gt == 0 && !counted.is_empty() {
        warn!("no valid ground truth; average precision is defined as 0");
    }

    let mut sorted = counted.clone();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let total = total_valid_gt as f64;
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut k = 0;
    while k < sorted.len() {
        let s = sorted[k].score;
        while k < sorted.len() && sorted[k].score == s {
            match sorted[k].outcome {
                MatchOutcome::TruePositive => tp += 1,
                _ => fp += 1,
            }
            k += 1;
        }
        if total_valid_gt > 0 {
            let recall = tp as f64 / total;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
    }

    let mut thresholds = Vec::with_capacity(n_thresholds);
    let mut precision = Vec::with_capacity(n_thresholds);
    let mut recall = Vec::with_capacity(n_thresholds);
    let mut ptr = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    for t in 0..n_thresholds {
        let cutoff = (n_thresholds - t) as f64 / n_thresholds as f64;
        while ptr < sorted.len() && sorted[ptr].score >= cutoff {
            match sorted[ptr].outcome {
                MatchOutcome::TruePositive => tp += 1,
                _ => fp += 1,
            }
            ptr += 1;
        }
        thresholds.push(cutoff);
        precision.push(if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 });
        recall.push(if total_valid_gt > 0 { tp as f64 / total } else { 0.0 });
    }

    PrCurve { thresholds, precision, recall, ap: ap.clamp(0.0, 1.0) }
}

/// Outcome of pooling one or more images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchPool {
    pub matches: Vec<ScoredMatch>,
    pub total_valid_gt: usize,
}

impl MatchPool {
    pub fn add_image(&mut self, dets: &[Detection], gts: &[EvalGt], iou_threshold: f64) {
        let mut sorted = dets.to_vec();
        crate::postprocess::sort_by_score(&mut sorted);
        let outcomes = match_image(&sorted, gts, iou_threshold);
        self.total_valid_gt += gts.iter().filter(|g| !g.ignored).count();
        self.matches.extend(
            sorted.iter().zip(outcomes).map(|(d, outcome)| ScoredMatch { score: d.score, outcome }),
        );
    }

    pub fn merge(mut self, other: MatchPool) -> MatchPool {
        self.matches.extend(other.matches);
        self.total_valid_gt += other.total_valid_gt;
        self
    }
}

/// Evaluator-side view of an image's faces. Faces flagged invalid, or not in
/// `keep` when one is supplied, are ignored.
pub fn eval_gts(record: &ImageRecord, keep: Option<&[usize]>) -> Vec<EvalGt> {
    record
        .faces
        .iter()
        .enumerate()
        .map(|(k, f)| EvalGt {
            bbox: f.bbox,
            ignored: f.is_invalid() || keep.is_some_and(|ks| !ks.contains(&k)),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalParams {
    pub iou_threshold: f64,
    pub n_thresholds: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self { iou_threshold: 0.5, n_thresholds: 1000 }
    }
}

/// Pools every annotated image and computes the curve. Images without a
/// detection entry contribute only their ground truth.
pub fn evaluate_subset(
    detections: &[(String, Vec<Detection>)],
    annotations: &[ImageRecord],
    keep: Option<&[(String, Vec<usize>)]>,
    params: &EvalParams,
) -> Result<PrCurve> {
    let by_path: HashMap<&str, &ImageRecord> =
        annotations.iter().map(|r| (r.relative_path.as_str(), r)).collect();
    let mut dets_by_path: HashMap<&str, Vec<Detection>> = HashMap::new();
    for (path, dets) in detections {
        if !by_path.contains_key(path.as_str()) {
            return Err(Error::UnknownImage(path.clone()));
        }
        dets_by_path.entry(path.as_str()).or_default().extend(dets.iter().copied());
    }
    let keep_by_path: Option<HashMap<&str, &[usize]>> =
        keep.map(|k| k.iter().map(|(p, v)| (p.as_str(), v.as_slice())).collect());

    let mut pool = MatchPool::default();
    for rec in annotations {
        let keep_here = keep_by_path
            .as_ref()
            .map(|m| m.get(rec.relative_path.as_str()).copied().unwrap_or(&[]));
        let gts = eval_gts(rec, keep_here);
        let dets = dets_by_path.get(rec.relative_path.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        pool.add_image(dets, &gts, params.iou_threshold);
    }
    Ok(pr_curve(&pool.matches, pool.total_valid_gt, params.n_thresholds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn gt(b: BBox) -> EvalGt {
        EvalGt { bbox: b, ignored: false }
    }

    fn m(score: f64, outcome: MatchOutcome) -> ScoredMatch {
        ScoredMatch { score, outcome }
    }

    #[test]
    fn match_examples() {
        let g = bx(0., 0., 10., 10.);
        let d = |s| Detection { bbox: g, score: s };
        assert_eq!(match_image(&[d(0.9)], &[gt(g)], 0.5), vec![MatchOutcome::TruePositive]);
        assert_eq!(
            match_image(&[d(0.9), d(0.8)], &[gt(g)], 0.5),
            vec![MatchOutcome::TruePositive, MatchOutcome::FalsePositive]
        );
        let ign = EvalGt { bbox: g, ignored: true };
        assert_eq!(match_image(&[d(0.9), d(0.8)], &[ign], 0.5), vec![MatchOutcome::Ignored; 2]);
        assert_eq!(match_image(&[d(0.9)], &[], 0.5), vec![MatchOutcome::FalsePositive]);
    }

    #[test]
    fn hand_computed_ap() {
        use MatchOutcome::*;
        let c = pr_curve(&[m(0.9, FalsePositive), m(0.8, TruePositive), m(0.7, TruePositive)], 2, 1000);
        assert_abs_diff_eq!(c.ap, 0.5 * 0.5 + 0.5 * (2.0 / 3.0), epsilon = 1e-12);
        assert_eq!(c.thresholds.len(), 1000);
        assert_eq!(c.thresholds[0], 1.0);
        assert_abs_diff_eq!(*c.thresholds.last().unwrap(), 0.001);
        assert_abs_diff_eq!(c.recall[999], 1.0);
        assert_abs_diff_eq!(c.precision[999], 2.0 / 3.0);
        assert!(c.recall.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn degenerate_curves() {
        use MatchOutcome::*;
        let perfect = pr_curve(&[m(0.9, TruePositive), m(0.4, TruePositive)], 2, 1000);
        assert_eq!(perfect.ap, 1.0);
        assert_eq!(pr_curve(&[], 3, 1000).ap, 0.0);
        assert_eq!(pr_curve(&[m(0.9, FalsePositive)], 0, 1000).ap, 0.0);
        assert_eq!(pr_curve(&[m(0.9, Ignored), m(0.5, TruePositive)], 1, 10).ap, 1.0);
    }

    #[test]
    fn subset_rejects_unknown_image() {
        let err = evaluate_subset(&[("nope.jpg".into(), vec![])], &[], None, &EvalParams::default());
        assert!(matches!(err, Err(Error::UnknownImage(_))));
    }
}
