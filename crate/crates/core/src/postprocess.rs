//! Inference-side decoding: first-step filtering on the low levels, cascade
//! refinement on the high levels, max-in-out scoring, second-step decode and
//! greedy NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::assign::second_step_inputs;
use crate::error::{Error, Result};
use crate::geometry::{decode, iou, BBox, EncodedDelta};
use crate::loss::{max_in_out_reduce, sigmoid};
use crate::maps::ScoreMaps;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Low-level anchors whose first-step face probability does not exceed
    /// this are dropped.
    pub stc_threshold: f64,
    /// Minimum second-step face probability for a candidate detection.
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_keep: usize,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { stc_threshold: 0.01, score_threshold: 0.05, nms_iou: 0.5, max_keep: 750 }
    }
}

/// Indices (ascending) of anchors that survive first-step filtering. Only the
/// classification levels are filtered; every other anchor passes. A threshold
/// of zero or less keeps everything.
pub fn stc_filter(anchors: &AnchorSet, first_logits: &[f64], threshold: f64) -> Result<Vec<usize>> {
    let stc = anchors.stc_range();
    if first_logits.len() != stc.len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} first-step logits, got {}",
            stc.len(),
            first_logits.len()
        )));
    }
    let mut keep: Vec<usize> = stc
        .filter(|&i| threshold <= 0.0 || sigmoid(first_logits[i]) > threshold)
        .collect();
    keep.extend(anchors.str_range());
    Ok(keep)
}

/// Applies the first-step deltas to the high-level anchors. Returns one box
/// per anchor; low-level anchors are copied unchanged.
pub fn str_refine(anchors: &AnchorSet, first_deltas: &[[f64; 4]]) -> Result<Vec<BBox>> {
    let range = anchors.str_range();
    if first_deltas.len() != range.len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} first-step deltas, got {}",
            range.len(),
            first_deltas.len()
        )));
    }
    let refined: Vec<BBox> = anchors.boxes[range]
        .iter()
        .zip(first_deltas)
        .map(|(a, d)| decode(a, &EncodedDelta::from_array(*d)))
        .collect();
    second_step_inputs(anchors, &refined)
}

/// Orders detections by descending score; equal scores keep their input order.
pub fn sort_by_score(dets: &mut [Detection]) {
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
}

/// Candidate detections before suppression, sorted by descending score with
/// ties in anchor order.
pub fn decode_detections(
    maps: &ScoreMaps,
    anchors: &AnchorSet,
    image_dims: (f64, f64),
    params: &DecodeParams,
) -> Result<Vec<Detection>> {
    maps.validate(anchors)?;
    let survivors = stc_filter(anchors, &maps.first_logits, params.stc_threshold)?;
    let bases = str_refine(anchors, &maps.first_deltas)?;
    let mut dets = Vec::new();
    for i in survivors {
        let (pos, neg) = maps.second_groups(i);
        let score = sigmoid(max_in_out_reduce(pos, neg).face_logit);
        if score < params.score_threshold {
            continue;
        }
        let bbox = decode(&bases[i], &maps.second_delta(i)).clip(image_dims.0, image_dims.1);
        if bbox.width() <= 0.0 || bbox.height() <= 0.0 {
            continue;
        }
        dets.push(Detection { bbox, score });
    }
    sort_by_score(&mut dets);
    Ok(dets)
}

/// Greedy suppression: keep the best remaining box, drop every box whose IoU
/// with it exceeds `iou_threshold`, repeat until `max_keep` boxes are kept.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_keep: usize) -> Vec<Detection> {
    nms_indices(dets, iou_threshold, max_keep).into_iter().map(|i| dets[i]).collect()
}

/// Same as [`nms`] but returns the indices of the kept detections in `dets`,
/// best first.
pub fn nms_indices(dets: &[Detection], iou_threshold: f64, max_keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap_or(Ordering::Equal));
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if keep.len() >= max_keep {
            break;
        }
        if suppressed[i] {
            continue;
        }
        let cur = dets[order[i]].bbox;
        keep.push(order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(&cur, &dets[order[j]].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Decode followed by NMS.
pub fn detect(
    maps: &ScoreMaps,
    anchors: &AnchorSet,
    image_dims: (f64, f64),
    params: &DecodeParams,
) -> Result<Vec<Detection>> {
    let candidates = decode_detections(maps, anchors, image_dims, params)?;
    Ok(nms(&candidates, params.nms_iou, params.max_keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{build_pyramid, generate_anchors};
    use crate::geometry::encode;

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> Detection {
        Detection { bbox: BBox::new(x0, y0, x1, y1).unwrap(), score }
    }

    #[test]
    fn stc_filter_thresholds() {
        let set = generate_anchors(&build_pyramid(32, 32).unwrap());
        let n_stc = set.stc_range().len();
        let all = stc_filter(&set, &vec![-50.0; n_stc], 0.0).unwrap();
        assert_eq!(all.len(), set.len());
        let none = stc_filter(&set, &vec![-50.0; n_stc], 0.01).unwrap();
        assert_eq!(none, set.str_range().collect::<Vec<_>>());
        assert!(stc_filter(&set, &[0.0], 0.01).is_err());
    }

    #[test]
    fn str_refine_identity_and_low_levels() {
        let set = generate_anchors(&build_pyramid(200, 120).unwrap());
        let zero = vec![[0.0; 4]; set.str_range().len()];
        assert_boxes_close(&str_refine(&set, &zero).unwrap(), &set.boxes);
        let deltas: Vec<[f64; 4]> = (0..set.str_range().len())
            .map(|k| [0.1 * (k % 3) as f64, -0.05, 0.2, -0.1])
            .collect();
        let out = str_refine(&set, &deltas).unwrap();
        assert_eq!(out[set.stc_range()], set.boxes[set.stc_range()]);
        assert_ne!(out[set.str_range()], set.boxes[set.str_range()]);
    }

    #[test]
    fn cascade_composition() {
        let a = BBox::new(10., 20., 60., 90.).unwrap();
        let target = BBox::new(5., 30., 80., 120.).unwrap();
        let first = EncodedDelta { dx: 0.1, dy: -0.2, dw: 0.3, dh: -0.1 };
        let refined = decode(&a, &first);
        let second = encode(&refined, &target).unwrap();
        let out = decode(&refined, &second);
        for (u, v) in [(out.x_min, target.x_min), (out.y_max, target.y_max)] {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn nms_examples() {
        let one = [det(0., 0., 10., 10., 0.3)];
        assert_eq!(nms(&one, 0.5, 10), one.to_vec());
        let two = [det(0., 0., 10., 10., 0.8), det(0., 0., 10., 10., 0.9)];
        assert_eq!(nms(&two, 0.5, 10), vec![two[1]]);
        let apart = [det(0., 0., 10., 10., 0.8), det(20., 0., 30., 10., 0.9), det(40., 0., 50., 10., 0.1)];
        assert_eq!(nms(&apart, 0.5, 2), vec![apart[1], apart[0]]);
        assert!(nms(&[], 0.5, 10).is_empty());
    }

    #[test]
    fn nms_tie_keeps_input_order() {
        let d = [det(0., 0., 10., 10., 0.5), det(1., 0., 11., 10., 0.5)];
        assert_eq!(nms(&d, 0.5, 10), vec![d[0]]);
    }

    #[test]
    fn all_negative_maps_decode_empty() {
        let set = generate_anchors(&build_pyramid(64, 64).unwrap());
        let mut maps = ScoreMaps::zeros(&set, 3, 3);
        for i in 0..set.len() {
            let (p, n) = maps.second_groups_mut(i);
            p.fill(-50.0);
            n.fill(50.0);
        }
        maps.first_logits.fill(-50.0);
        let dets = decode_detections(&maps, &set, (64., 64.), &DecodeParams::default()).unwrap();
        assert!(dets.is_empty());
    }

    #[test]
    fn equal_scores_follow_anchor_order() {
        let set = generate_anchors(&build_pyramid(32, 32).unwrap());
        let maps = ScoreMaps::zeros(&set, 3, 3);
        let params = DecodeParams { stc_threshold: 0.0, score_threshold: 0.0, ..Default::default() };
        let dets = decode_detections(&maps, &set, (32., 32.), &params).unwrap();
        // every anchor scores 0.5; order must follow the anchors
        let expect: Vec<BBox> = set.boxes.iter().map(|b| b.clip(32., 32.)).collect();
        assert_boxes_close(&dets.iter().map(|d| d.bbox).collect::<Vec<_>>(), &expect);
    }

    fn assert_boxes_close(a: &[BBox], b: &[BBox]) {
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(b) {
            for (p, q) in [(u.x_min, v.x_min), (u.y_min, v.y_min), (u.x_max, v.x_max), (u.y_max, v.y_max)] {
                assert!((p - q).abs() < 1e-9, "{u:?} vs {v:?}");
            }
        }
    }
}
