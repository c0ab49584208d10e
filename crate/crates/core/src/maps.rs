//! Per-anchor network outputs consumed by the loss kernels and the decoder.

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};
use crate::geometry::EncodedDelta;

/// Raw predictions for one image, laid out along the flat anchor order.
///
/// * `first_logits`: one first-step face logit per classification-level anchor
///   ([`AnchorSet::stc_range`]).
/// * `first_deltas`: one first-step delta per regression-level anchor
///   ([`AnchorSet::str_range`]).
/// * `second_logits`: `cp + cn` logits per anchor, positives first.
/// * `second_deltas`: one second-step delta per anchor.
/// * `attention`: one row-major logit grid per pyramid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMaps {
    pub cp: usize,
    pub cn: usize,
    pub first_logits: Vec<f64>,
    pub first_deltas: Vec<[f64; 4]>,
    pub second_logits: Vec<f64>,
    pub second_deltas: Vec<[f64; 4]>,
    pub attention: Vec<Vec<f64>>,
}

impl ScoreMaps {
    pub fn zeros(anchors: &AnchorSet, cp: usize, cn: usize) -> Self {
        Self {
            cp,
            cn,
            first_logits: vec![0.0; anchors.stc_range().len()],
            first_deltas: vec![[0.0; 4]; anchors.str_range().len()],
            second_logits: vec![0.0; anchors.len() * (cp + cn)],
            second_deltas: vec![[0.0; 4]; anchors.len()],
            attention: anchors.levels().iter().map(|l| vec![0.0; l.num_cells()]).collect(),
        }
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            cp: self.cp,
            cn: self.cn,
            first_logits: vec![0.0; self.first_logits.len()],
            first_deltas: vec![[0.0; 4]; self.first_deltas.len()],
            second_logits: vec![0.0; self.second_logits.len()],
            second_deltas: vec![[0.0; 4]; self.second_deltas.len()],
            attention: self.attention.iter().map(|l| vec![0.0; l.len()]).collect(),
        }
    }

    pub fn group_size(&self) -> usize {
        self.cp + self.cn
    }

    pub fn num_anchors(&self) -> usize {
        self.second_deltas.len()
    }

    /// Positive and negative second-step logits of anchor `i`.
    pub fn second_groups(&self, i: usize) -> (&[f64], &[f64]) {
        let g = &self.second_logits[i * self.group_size()..(i + 1) * self.group_size()];
        g.split_at(self.cp)
    }

    pub fn second_groups_mut(&mut self, i: usize) -> (&mut [f64], &mut [f64]) {
        let gs = self.group_size();
        let cp = self.cp;
        self.second_logits[i * gs..(i + 1) * gs].split_at_mut(cp)
    }

    pub fn first_delta(&self, str_index: usize) -> EncodedDelta {
        EncodedDelta::from_array(self.first_deltas[str_index])
    }

    pub fn second_delta(&self, i: usize) -> EncodedDelta {
        EncodedDelta::from_array(self.second_deltas[i])
    }

    pub fn validate(&self, anchors: &AnchorSet) -> Result<()> {
        let mismatch = |what: &str, want: usize, got: usize| {
            Err(Error::ShapeMismatch(format!("{what}: expected {want} entries, got {got}")))
        };
        if self.cp == 0 || self.cn == 0 {
            return Err(Error::ShapeMismatch("max-in-out groups must be non-empty".into()));
        }
        if self.first_logits.len() != anchors.stc_range().len() {
            return mismatch("first_logits", anchors.stc_range().len(), self.first_logits.len());
        }
        if self.first_deltas.len() != anchors.str_range().len() {
            return mismatch("first_deltas", anchors.str_range().len(), self.first_deltas.len());
        }
        if self.second_logits.len() != anchors.len() * self.group_size() {
            return mismatch(
                "second_logits",
                anchors.len() * self.group_size(),
                self.second_logits.len(),
            );
        }
        if self.second_deltas.len() != anchors.len() {
            return mismatch("second_deltas", anchors.len(), self.second_deltas.len());
        }
        if self.attention.len() != anchors.levels().len() {
            return mismatch("attention levels", anchors.levels().len(), self.attention.len());
        }
        for (l, (grid, spec)) in self.attention.iter().zip(anchors.levels()).enumerate() {
            if grid.len() != spec.num_cells() {
                return mismatch(&format!("attention level {l}"), spec.num_cells(), grid.len());
            }
        }
        let finite = self.first_logits.iter().all(|v| v.is_finite())
            && self.second_logits.iter().all(|v| v.is_finite())
            && self.first_deltas.iter().flatten().all(|v| v.is_finite())
            && self.second_deltas.iter().flatten().all(|v| v.is_finite())
            && self.attention.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("score maps contain non-finite values".into()));
        }
        Ok(())
    }

    /// Visits every scalar entry mutably in a fixed order. Used by finite
    /// difference checks and optimizers.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        self.first_logits.iter_mut().for_each(&mut f);
        self.first_deltas.iter_mut().flatten().for_each(&mut f);
        self.second_logits.iter_mut().for_each(&mut f);
        self.second_deltas.iter_mut().flatten().for_each(&mut f);
        self.attention.iter_mut().flatten().for_each(&mut f);
    }

    /// All scalar entries in [`Self::for_each_mut`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.first_logits);
        out.extend(self.first_deltas.iter().flatten());
        out.extend(&self.second_logits);
        out.extend(self.second_deltas.iter().flatten());
        out.extend(self.attention.iter().flatten());
        out
    }
}

/// Maps for one image plus the identity needed to pair them with annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMaps {
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub maps: ScoreMaps,
}

/// On-disk container: a JSON object `{"images": [ImageMaps, ...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MapsFile {
    pub images: Vec<ImageMaps>,
}

impl MapsFile {
    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn to_writer(&self, w: impl std::io::Write) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }
}
