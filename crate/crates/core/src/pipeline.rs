//! Glue that derives every loss input from ground truth and score maps.

use crate::anchors::AnchorSet;
use crate::assign::{assign_with, AssignmentResult};
use crate::attention::{level_assignments, rasterize, AttentionTarget};
use crate::config::Config;
use crate::error::Result;
use crate::geometry::BBox;
use crate::loss::{hybrid_loss, survivor_mask, LossBreakdown, LossInputs};
use crate::maps::ScoreMaps;
use crate::postprocess::{stc_filter, str_refine};

/// Per-image training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTargets {
    pub first: AssignmentResult,
    pub second: AssignmentResult,
    /// Second-step reference box of every anchor.
    pub second_boxes: Vec<BBox>,
    pub survivors: Vec<bool>,
    pub masks: AttentionTarget,
}

impl TrainingTargets {
    pub fn inputs<'a>(&'a self, anchors: &'a AnchorSet) -> LossInputs<'a> {
        LossInputs {
            anchors,
            first: &self.first,
            second: &self.second,
            survivors: &self.survivors,
            masks: &self.masks,
        }
    }
}

/// First-step assignment on raw anchors, first-step filtering and refinement
/// from the maps, second-step assignment on the refined geometry, and
/// attention masks from the second-step matches. `gts` should already exclude
/// faces that must not be trained on.
pub fn training_targets(
    maps: &ScoreMaps,
    anchors: &AnchorSet,
    gts: &[BBox],
    cfg: &Config,
) -> Result<TrainingTargets> {
    maps.validate(anchors)?;
    let first = assign_with(&anchors.boxes, gts, &cfg.first_step, cfg.force_best_match)?;
    let kept = stc_filter(anchors, &maps.first_logits, cfg.stc_threshold)?;
    let survivors = survivor_mask(&kept, anchors.len());
    let second_boxes = str_refine(anchors, &maps.first_deltas)?;
    let second = assign_with(&second_boxes, gts, &cfg.second_step, cfg.force_best_match)?;
    let masks = rasterize(gts, &level_assignments(anchors, &second, gts.len()), anchors.levels());
    Ok(TrainingTargets { first, second, second_boxes, survivors, masks })
}

pub fn training_losses(
    maps: &ScoreMaps,
    anchors: &AnchorSet,
    gts: &[BBox],
    cfg: &Config,
) -> Result<LossBreakdown> {
    let targets = training_targets(maps, anchors, gts, cfg)?;
    hybrid_loss(maps, &targets.inputs(anchors), &cfg.focal)
}
