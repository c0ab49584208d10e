//! Six-level anchor pyramid.
//!
//! Every pyramid level of stride `S` tiles its feature grid with two anchors per
//! cell, of scales `2S` and `2√2·S`, both with height/width ratio 1.25 and area
//! equal to the squared scale. With strides 4..128 this spans scales 8 to ~362.
//!
//! Anchors are flattened level by level (P2 first), then row-major over cells,
//! then by scale slot. The low levels (two-step classification) therefore
//! occupy a contiguous prefix of the flat index space and the high levels
//! (two-step regression) the suffix.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Anchors per feature cell.
pub const ANCHORS_PER_CELL: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub strides: Vec<u32>,
    /// Anchor side length as a multiple of the stride, one per scale slot.
    pub scale_factors: [f64; ANCHORS_PER_CELL],
    /// Height over width.
    pub aspect_ratio: f64,
    /// Number of leading levels that run the first-step classifier; the rest
    /// run the first-step regressor.
    pub stc_levels: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            strides: vec![4, 8, 16, 32, 64, 128],
            scale_factors: [2.0, 2.0 * std::f64::consts::SQRT_2],
            aspect_ratio: 1.25,
            stc_levels: 3,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.contains(&0) {
            return Err(Error::Config("anchor strides must be non-empty and positive".into()));
        }
        if self.scale_factors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("anchor scale factors must be positive".into()));
        }
        if !(self.aspect_ratio.is_finite() && self.aspect_ratio > 0.0) {
            return Err(Error::Config("anchor aspect ratio must be positive".into()));
        }
        if self.stc_levels > self.strides.len() {
            return Err(Error::Config("stc_levels exceeds the number of levels".into()));
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.strides.len()
    }

    /// Primary (smallest) anchor scale of every level, smallest level first.
    pub fn primary_scales(&self) -> Vec<f64> {
        self.strides.iter().map(|&s| self.scale_factors[0] * s as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevelSpec {
    /// Position in the pyramid, 0 for the finest level.
    pub level: usize,
    pub stride: u32,
    pub scales: [f64; ANCHORS_PER_CELL],
    pub aspect_ratio: f64,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl PyramidLevelSpec {
    /// Conventional `P<k>` name, where `2^k` is the stride.
    pub fn name(&self) -> String {
        format!("P{}", self.stride.trailing_zeros())
    }

    pub fn num_cells(&self) -> usize {
        self.grid_w * self.grid_h
    }

    pub fn num_anchors(&self) -> usize {
        self.num_cells() * ANCHORS_PER_CELL
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = self.stride as f64;
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }
}

/// Pyramid for the default anchor configuration.
pub fn build_pyramid(input_w: u32, input_h: u32) -> Result<Vec<PyramidLevelSpec>> {
    build_pyramid_with(&AnchorConfig::default(), input_w, input_h)
}

pub fn build_pyramid_with(
    cfg: &AnchorConfig,
    input_w: u32,
    input_h: u32,
) -> Result<Vec<PyramidLevelSpec>> {
    cfg.validate()?;
    if input_w == 0 || input_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "input size must be positive, got {input_w}x{input_h}"
        )));
    }
    Ok(cfg
        .strides
        .iter()
        .enumerate()
        .map(|(level, &stride)| PyramidLevelSpec {
            level,
            stride,
            scales: cfg.scale_factors.map(|f| f * stride as f64),
            aspect_ratio: cfg.aspect_ratio,
            grid_w: input_w.div_ceil(stride) as usize,
            grid_h: input_h.div_ceil(stride) as usize,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchorCell {
    pub row: usize,
    pub col: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub boxes: Vec<BBox>,
    pub level_of: Vec<usize>,
    pub cell_of: Vec<AnchorCell>,
    levels: Vec<PyramidLevelSpec>,
    level_offsets: Vec<usize>,
    stc_levels: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn levels(&self) -> &[PyramidLevelSpec] {
        &self.levels
    }

    /// Flat index range of the anchors on `level`.
    pub fn level_range(&self, level: usize) -> Range<usize> {
        self.level_offsets[level]..self.level_offsets[level + 1]
    }

    /// Number of leading levels handled by the first-step classifier.
    pub fn stc_level_count(&self) -> usize {
        self.stc_levels
    }

    /// Anchors on the first-step classification levels (a flat prefix).
    pub fn stc_range(&self) -> Range<usize> {
        0..self.level_offsets[self.stc_levels]
    }

    /// Anchors on the first-step regression levels (a flat suffix).
    pub fn str_range(&self) -> Range<usize> {
        self.level_offsets[self.stc_levels]..self.len()
    }

    pub fn is_stc_level(&self, level: usize) -> bool {
        level < self.stc_levels
    }

    pub fn is_str_level(&self, level: usize) -> bool {
        level >= self.stc_levels
    }

    pub fn scale(&self, index: usize) -> Result<f64> {
        scale_of(&self.boxes[index])
    }
}

pub fn generate_anchors(specs: &[PyramidLevelSpec]) -> AnchorSet {
    generate_anchors_split(specs, AnchorConfig::default().stc_levels.min(specs.len()))
}

/// Generates anchors, marking the first `stc_levels` levels as first-step
/// classification levels.
pub fn generate_anchors_split(specs: &[PyramidLevelSpec], stc_levels: usize) -> AnchorSet {
    let total: usize = specs.iter().map(PyramidLevelSpec::num_anchors).sum();
    let mut boxes = Vec::with_capacity(total);
    let mut level_of = Vec::with_capacity(total);
    let mut cell_of = Vec::with_capacity(total);
    let mut level_offsets = Vec::with_capacity(specs.len() + 1);
    level_offsets.push(0);

    for (level, spec) in specs.iter().enumerate() {
        let sqrt_ratio = spec.aspect_ratio.sqrt();
        for row in 0..spec.grid_h {
            for col in 0..spec.grid_w {
                let (cx, cy) = spec.cell_center(row, col);
                for (slot, &s) in spec.scales.iter().enumerate() {
                    boxes.push(BBox::from_center(cx, cy, s / sqrt_ratio, s * sqrt_ratio));
                    level_of.push(level);
                    cell_of.push(AnchorCell { row, col, slot });
                }
            }
        }
        level_offsets.push(boxes.len());
    }

    AnchorSet {
        boxes,
        level_of,
        cell_of,
        levels: specs.to_vec(),
        level_offsets,
        stc_levels: stc_levels.min(specs.len()),
    }
}

/// Pyramid and anchors for an input size under `cfg`.
pub fn anchors_for(cfg: &AnchorConfig, input_w: u32, input_h: u32) -> Result<AnchorSet> {
    let specs = build_pyramid_with(cfg, input_w, input_h)?;
    Ok(generate_anchors_split(&specs, cfg.stc_levels))
}

/// Geometric-mean side length.
pub fn scale_of(anchor: &BBox) -> Result<f64> {
    let (w, h) = (anchor.width(), anchor.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateAnchor(*anchor));
    }
    Ok((w * h).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pyramid_640() {
        let specs = build_pyramid(640, 640).unwrap();
        let strides: Vec<u32> = specs.iter().map(|s| s.stride).collect();
        assert_eq!(strides, [4, 8, 16, 32, 64, 128]);
        let grids: Vec<(usize, usize)> = specs.iter().map(|s| (s.grid_w, s.grid_h)).collect();
        assert_eq!(grids, [(160, 160), (80, 80), (40, 40), (20, 20), (10, 10), (5, 5)]);
        let names: Vec<String> = specs.iter().map(|s| s.name()).collect();
        assert_eq!(names, ["P2", "P3", "P4", "P5", "P6", "P7"]);
        for s in &specs {
            assert_abs_diff_eq!(s.scales[1] / s.scales[0], 2f64.sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn pyramid_tiny_and_odd() {
        let specs = build_pyramid(4, 4).unwrap();
        assert!(specs.iter().all(|s| s.grid_w == 1 && s.grid_h == 1));
        let specs = build_pyramid(641, 640).unwrap();
        assert_eq!(specs[0].grid_w, 161);
        assert_eq!(specs[0].grid_h, 160);
        assert!(build_pyramid(0, 10).is_err());
    }

    #[test]
    fn anchor_counts_and_range() {
        let set = generate_anchors(&build_pyramid(640, 640).unwrap());
        assert_eq!(set.len(), 68_250);
        let scales: Vec<f64> = (0..set.len()).map(|i| set.scale(i).unwrap()).collect();
        let min = scales.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scales.iter().cloned().fold(0.0, f64::max);
        assert_abs_diff_eq!(min, 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(max, 362.038671967, epsilon = 1e-6);
        for (l, spec) in set.levels().iter().enumerate() {
            assert_eq!(set.level_range(l).len(), spec.num_anchors());
        }
        assert_eq!(set.stc_range(), 0..2 * (160 * 160 + 80 * 80 + 40 * 40));
        assert_eq!(set.str_range().end, set.len());
    }

    #[test]
    fn anchor_layout() {
        let set = generate_anchors(&build_pyramid(32, 32).unwrap());
        // level 0, cell (0,0), slot 0: center (2,2), scale 8, ratio 1.25
        let a = set.boxes[0];
        assert_abs_diff_eq!(a.center().0, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.center().1, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.height() / a.width(), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(scale_of(&a).unwrap(), 8.0, epsilon = 1e-12);
        // neighbouring cell on the same level, same slot
        let b = set.boxes[2];
        assert_eq!(set.cell_of[2], AnchorCell { row: 0, col: 1, slot: 0 });
        assert_abs_diff_eq!(b.center().0 - a.center().0, 4.0);
        // next row
        let below = set.boxes[2 * 8];
        assert_abs_diff_eq!(below.center().1 - a.center().1, 4.0);
    }

    #[test]
    fn scale_of_examples() {
        assert_eq!(scale_of(&BBox::new(0., 0., 8., 8.).unwrap()).unwrap(), 8.0);
        let w = 8.0 / 1.25f64.sqrt();
        let h = 8.0 * 1.25f64.sqrt();
        assert_abs_diff_eq!(
            scale_of(&BBox::new(0., 0., w, h).unwrap()).unwrap(),
            8.0,
            epsilon = 1e-6
        );
        assert!(scale_of(&BBox::new(0., 0., 0., 8.).unwrap()).is_err());
    }

    #[test]
    fn deterministic() {
        let a = generate_anchors(&build_pyramid(300, 200).unwrap());
        let b = generate_anchors(&build_pyramid(300, 200).unwrap());
        assert_eq!(a, b);
    }
}
