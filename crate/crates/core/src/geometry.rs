//! Axis-aligned box arithmetic and the center/log-size delta parameterization
//! shared by both regression steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in continuous pixel coordinates, corner form.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box from corners. Errors if the corners are non-finite or inverted.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self { x_min, y_min, x_max, y_max };
        if !b.is_valid() {
            return Err(Error::InvalidBox(b));
        }
        Ok(b)
    }

    /// WIDER-style `(x, y, w, h)` to corner form.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x_min: cx - 0.5 * w,
            y_min: cy - 0.5 * h,
            x_max: cx + 0.5 * w,
            y_max: cy + 0.5 * h,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_max >= self.x_min
            && self.y_max >= self.y_min
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Self {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        Self {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    /// Clips to an arbitrary window.
    pub fn clip_to(&self, window: &BBox) -> Self {
        Self {
            x_min: self.x_min.clamp(window.x_min, window.x_max),
            y_min: self.y_min.clamp(window.y_min, window.y_max),
            x_max: self.x_max.clamp(window.x_min, window.x_max),
            y_max: self.y_max.clamp(window.y_min, window.y_max),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }
}

/// Regression target relative to a reference box: center offsets normalized by
/// the reference size and log size ratios. Unit variances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EncodedDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl EncodedDelta {
    pub const ZERO: Self = Self { dx: 0.0, dy: 0.0, dw: 0.0, dh: 0.0 };

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { dx: a[0], dy: a[1], dw: a[2], dh: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.dx.is_finite() && self.dy.is_finite() && self.dw.is_finite() && self.dh.is_finite()
    }
}

/// Intersection over union. Zero-area or disjoint inputs give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).min(1.0)
}

/// Row-major `anchors.len() x gts.len()` IoU matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IouMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl IouMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

pub fn iou_matrix(anchors: &[BBox], gts: &[BBox]) -> IouMatrix {
    let mut data = Vec::with_capacity(anchors.len() * gts.len());
    for a in anchors {
        data.extend(gts.iter().map(|g| iou(a, g)));
    }
    IouMatrix { rows: anchors.len(), cols: gts.len(), data }
}

/// Encodes `target` relative to `anchor`.
pub fn encode(anchor: &BBox, target: &BBox) -> Result<EncodedDelta> {
    let (wa, ha) = (anchor.width(), anchor.height());
    if !(wa > 0.0 && ha > 0.0) {
        return Err(Error::DegenerateAnchor(*anchor));
    }
    let (wt, ht) = (target.width(), target.height());
    if !(wt > 0.0 && ht > 0.0) || !target.is_valid() {
        return Err(Error::InvalidGroundTruth(*target));
    }
    let (cxa, cya) = anchor.center();
    let (cxt, cyt) = target.center();
    Ok(EncodedDelta {
        dx: (cxt - cxa) / wa,
        dy: (cyt - cya) / ha,
        dw: (wt / wa).ln(),
        dh: (ht / ha).ln(),
    })
}

/// Inverse of [`encode`]. The result is not clipped.
pub fn decode(anchor: &BBox, delta: &EncodedDelta) -> BBox {
    let (wa, ha) = (anchor.width(), anchor.height());
    let (cxa, cya) = anchor.center();
    let cx = cxa + delta.dx * wa;
    let cy = cya + delta.dy * ha;
    let w = wa * delta.dw.exp();
    let h = ha * delta.dh.exp();
    BBox::from_center(cx, cy, w, h)
}
