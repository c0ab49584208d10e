//! Synthetic end-to-end closure check: random face layouts, score maps that a
//! perfect network would emit for them, and the full decode → NMS → evaluate
//! path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::anchors::{anchors_for, AnchorSet};
use crate::assign::assign_with;
use crate::attention::{level_assignments, rasterize};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{pr_curve, EvalGt, MatchPool};
use crate::geometry::BBox;
use crate::maps::ScoreMaps;
use crate::postprocess::{detect, str_refine, Detection};

/// Logit magnitude used for "certain" oracle predictions.
pub const ORACLE_LOGIT: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub faces: Vec<BBox>,
}

/// Per-image generator; image `index` always gets the same stream for a seed.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Random image with up to `max_faces` separated faces fully inside it.
pub fn random_image<R: Rng + ?Sized>(rng: &mut R, index: usize, max_faces: usize) -> SynthImage {
    let width = rng.random_range(240..=480u32);
    let height = rng.random_range(240..=480u32);
    let want = rng.random_range(1..=max_faces.max(1));
    let max_side = (width.min(height) as f64 / 2.0).max(16.0);
    let mut faces: Vec<BBox> = Vec::new();
    let mut attempts = 0;
    while faces.len() < want && attempts < 200 {
        attempts += 1;
        let s = (rng.random_range(12f64.ln()..max_side.ln())).exp();
        let ratio = rng.random_range(1.0..1.5f64);
        let (w, h) = (s / ratio.sqrt(), s * ratio.sqrt());
        let x = rng.random_range(0.0..(width as f64 - w));
        let y = rng.random_range(0.0..(height as f64 - h));
        let b = BBox { x_min: x, y_min: y, x_max: x + w, y_max: y + h };
        // keep faces at least half a face apart
        let grown = BBox {
            x_min: b.x_min - 0.5 * w,
            y_min: b.y_min - 0.5 * h,
            x_max: b.x_max + 0.5 * w,
            y_max: b.y_max + 0.5 * h,
        };
        if faces.iter().all(|f| grown.intersection_area(f) == 0.0) {
            faces.push(b);
        }
    }
    SynthImage { path: format!("synth/{index:05}.jpg"), width, height, faces }
}

/// Score maps that decode exactly to `gts`: confident first-step logits and
/// exact first-step deltas for matched anchors, exact second-step deltas and
/// confident max-in-out groups for second-step positives, and attention logits
/// following the rasterized masks.
pub fn oracle_maps(anchors: &AnchorSet, gts: &[BBox], cfg: &Config) -> Result<ScoreMaps> {
    let mut maps = ScoreMaps::zeros(anchors, cfg.cp, cfg.cn);
    let first = assign_with(&anchors.boxes, gts, &cfg.first_step, cfg.force_best_match)?;

    let offset = anchors.str_range().start;
    for i in anchors.str_range() {
        if let Some(t) = first.reg_targets[i] {
            maps.first_deltas[i - offset] = t.to_array();
        }
    }
    let bases = str_refine(anchors, &maps.first_deltas)?;
    let second = assign_with(&bases, gts, &cfg.second_step, cfg.force_best_match)?;

    for i in anchors.stc_range() {
        let face = first.labels[i].is_positive() || second.labels[i].is_positive();
        maps.first_logits[i] = if face { ORACLE_LOGIT } else { -ORACLE_LOGIT };
    }
    for i in 0..anchors.len() {
        let face = second.labels[i].is_positive();
        let (pos, neg) = maps.second_groups_mut(i);
        pos.fill(if face { ORACLE_LOGIT } else { -ORACLE_LOGIT });
        neg.fill(if face { -ORACLE_LOGIT } else { ORACLE_LOGIT });
        if let Some(t) = second.reg_targets[i] {
            maps.second_deltas[i] = t.to_array();
        }
    }
    let masks = rasterize(gts, &level_assignments(anchors, &second, gts.len()), anchors.levels());
    for (grid, mask) in maps.attention.iter_mut().zip(&masks.levels) {
        for (z, &m) in grid.iter_mut().zip(&mask.cells) {
            *z = if m == 1 { ORACLE_LOGIT } else { -ORACLE_LOGIT };
        }
    }
    Ok(maps)
}

/// Flips every classification decision: first-step logits are negated and
/// each max-in-out group takes the other group's maximum, which negates the
/// face logit.
pub fn invert_scores(maps: &ScoreMaps) -> ScoreMaps {
    let mut out = maps.clone();
    out.first_logits.iter_mut().for_each(|z| *z = -*z);
    for i in 0..maps.num_anchors() {
        let (pos, neg) = maps.second_groups(i);
        let pmax = pos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let nmax = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (p, n) = out.second_groups_mut(i);
        p.fill(nmax);
        n.fill(pmax);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthReport {
    pub seed: u64,
    pub images: usize,
    pub faces: usize,
    pub detections: usize,
    pub true_positives: usize,
    pub ap: f64,
    pub inverted_detections: usize,
    pub inverted_ap: f64,
}

impl std::fmt::Display for SynthReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "seed: {}", self.seed)?;
        writeln!(f, "images: {}", self.images)?;
        writeln!(f, "faces: {}", self.faces)?;
        writeln!(f, "detections: {}", self.detections)?;
        writeln!(f, "true positives: {}", self.true_positives)?;
        writeln!(f, "AP: {:.6}", self.ap)?;
        writeln!(f, "inverted detections: {}", self.inverted_detections)?;
        writeln!(f, "inverted AP: {:.6}", self.inverted_ap)
    }
}

struct ImageOutcome {
    faces: usize,
    dets: Vec<Detection>,
    inverted: Vec<Detection>,
    gts: Vec<EvalGt>,
}

fn run_image(seed: u64, index: usize, max_faces: usize, cfg: &Config) -> Result<ImageOutcome> {
    let mut rng = image_rng(seed, index);
    let img = random_image(&mut rng, index, max_faces);
    let anchors = anchors_for(&cfg.anchors, img.width, img.height)?;
    let maps = oracle_maps(&anchors, &img.faces, cfg)?;
    let dims = (img.width as f64, img.height as f64);
    let params = cfg.decode_params();
    let dets = detect(&maps, &anchors, dims, &params)?;
    let inverted = detect(&invert_scores(&maps), &anchors, dims, &params)?;
    let gts = img.faces.iter().map(|&b| EvalGt { bbox: b, ignored: false }).collect();
    Ok(ImageOutcome { faces: img.faces.len(), dets, inverted, gts })
}

/// Runs the closure check over `n_images` random images.
pub fn synth_e2e(seed: u64, n_images: usize, max_faces: usize, cfg: &Config) -> Result<SynthReport> {
    if n_images == 0 {
        return Err(Error::InvalidArgument("n_images must be at least 1".into()));
    }
    let outcomes: Vec<ImageOutcome> = (0..n_images)
        .into_par_iter()
        .map(|i| run_image(seed, i, max_faces, cfg))
        .collect::<Result<_>>()?;

    let mut pool = MatchPool::default();
    let mut inv_pool = MatchPool::default();
    for o in &outcomes {
        pool.add_image(&o.dets, &o.gts, cfg.eval_iou);
        inv_pool.add_image(&o.inverted, &o.gts, cfg.eval_iou);
    }
    let curve = pr_curve(&pool.matches, pool.total_valid_gt, cfg.eval_thresholds);
    let inv_curve = pr_curve(&inv_pool.matches, inv_pool.total_valid_gt, cfg.eval_thresholds);

    Ok(SynthReport {
        seed,
        images: n_images,
        faces: outcomes.iter().map(|o| o.faces).sum(),
        detections: pool.matches.len(),
        true_positives: pool
            .matches
            .iter()
            .filter(|m| m.outcome == crate::eval::MatchOutcome::TruePositive)
            .count(),
        ap: curve.ap,
        inverted_detections: inv_pool.matches.len(),
        inverted_ap: inv_curve.ap,
    })
}
