//! Data-anchor-sampling.
//!
//! Picks a face, draws a target anchor scale no larger than one step above
//! the face's nearest anchor scale, resizes the image so the face lands near
//! that scale, and places a fixed-size crop that contains the face. Only
//! geometry is produced; resampling pixels is left to the image backend.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Anchor-scale table indexed by pyramid level, plus the crop size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub anchor_scales: Vec<f64>,
    pub crop_size: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            anchor_scales: vec![8.0, 16.0, 32.0, 64.0, 128.0, 256.0],
            crop_size: 640.0,
        }
    }
}

impl SamplerConfig {
    pub fn max_index(&self) -> usize {
        self.anchor_scales.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub selected_face: usize,
    pub face_size: f64,
    pub i_anchor: usize,
    pub i_target: usize,
    pub scale: f64,
    /// Top-left corner of the crop in resized-image coordinates.
    pub crop_origin: (f64, f64),
    pub crop_size: f64,
}

impl SamplePlan {
    pub fn crop_window(&self) -> BBox {
        let (x, y) = self.crop_origin;
        BBox { x_min: x, y_min: y, x_max: x + self.crop_size, y_max: y + self.crop_size }
    }
}

/// Result of applying a plan to one image's annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct CropResult {
    /// Crop window in resized-image coordinates.
    pub window: BBox,
    pub resized_dims: (f64, f64),
    /// Surviving boxes in crop coordinates, clipped to the crop.
    pub boxes: Vec<BBox>,
    /// Index of each surviving box in the input annotation list.
    pub kept: Vec<usize>,
}

pub fn face_size(face: &BBox) -> Result<f64> {
    let (w, h) = (face.width(), face.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::InvalidArgument(format!("face {face:?} has zero area")));
    }
    Ok((w * h).sqrt())
}

/// Index of the anchor scale nearest to `face_size`; ties go to the smaller index.
pub fn nearest_anchor_index(face_size: f64, anchor_scales: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &s) in anchor_scales.iter().enumerate() {
        let d = (s - face_size).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Range of admissible crop origins along one axis.
fn origin_range(face_lo: f64, face_hi: f64, image_extent: f64, crop: f64) -> (f64, f64) {
    let lo = (face_hi - crop).max((image_extent - crop).min(0.0));
    let hi = face_lo.min((image_extent - crop).max(0.0));
    (lo, hi)
}

fn draw_origin<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.random_range(lo..=hi)
    } else if lo == hi {
        lo
    } else {
        // face larger than the crop: center the window on it
        0.5 * (lo + hi)
    }
}

/// Draws a sampling plan for one image.
///
/// The face is chosen uniformly among the faces with positive area, the target
/// index uniformly in `0..=min(max_index, i_anchor + 1)`, and the resized face
/// size uniformly in `[S/2, 2S]` for the target anchor scale `S`. The crop
/// origin is uniform over the positions that keep the resized face inside the
/// crop and, where the resized image is large enough, keep the crop inside the
/// image.
pub fn draw_plan<R: Rng + ?Sized>(
    image_dims: (f64, f64),
    faces: &[BBox],
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SamplePlan> {
    if cfg.anchor_scales.is_empty() {
        return Err(Error::Config("empty anchor scale table".into()));
    }
    let usable: Vec<usize> = (0..faces.len()).filter(|&i| faces[i].area() > 0.0).collect();
    if usable.is_empty() {
        return Err(Error::NoFaces);
    }
    let selected_face = usable[rng.random_range(0..usable.len())];
    let face = faces[selected_face];
    let s_face = face_size(&face)?;

    let i_anchor = nearest_anchor_index(s_face, &cfg.anchor_scales);
    let i_max = cfg.max_index().min(i_anchor + 1);
    let i_target = rng.random_range(0..=i_max);
    let s_target = cfg.anchor_scales[i_target];
    let scale = rng.random_range(s_target / 2.0..=s_target * 2.0) / s_face;

    let resized = face.scale(scale);
    let (w, h) = (image_dims.0 * scale, image_dims.1 * scale);
    let (xl, xh) = origin_range(resized.x_min, resized.x_max, w, cfg.crop_size);
    let (yl, yh) = origin_range(resized.y_min, resized.y_max, h, cfg.crop_size);
    let crop_origin = (draw_origin(rng, xl, xh), draw_origin(rng, yl, yh));

    Ok(SamplePlan {
        selected_face,
        face_size: s_face,
        i_anchor,
        i_target,
        scale,
        crop_origin,
        crop_size: cfg.crop_size,
    })
}

/// Resizes and crops the annotations. A box survives iff its center lies
/// inside the crop; survivors are clipped to the crop and expressed in crop
/// coordinates.
pub fn apply_plan(image_dims: (f64, f64), annotations: &[BBox], plan: &SamplePlan) -> CropResult {
    let window = plan.crop_window();
    let (ox, oy) = plan.crop_origin;
    let mut boxes = Vec::new();
    let mut kept = Vec::new();
    for (i, b) in annotations.iter().enumerate() {
        let r = b.scale(plan.scale);
        let (cx, cy) = r.center();
        if window.contains_point(cx, cy) {
            boxes.push(r.clip_to(&window).translate(-ox, -oy));
            kept.push(i);
        }
    }
    CropResult {
        window,
        resized_dims: (image_dims.0 * plan.scale, image_dims.1 * plan.scale),
        boxes,
        kept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn face_size_examples() {
        assert_eq!(face_size(&b(0., 0., 20., 20.)).unwrap(), 20.0);
        assert_eq!(face_size(&b(0., 0., 10., 40.)).unwrap(), 20.0);
        assert!(face_size(&b(0., 0., 0., 10.)).is_err());
    }

    #[test]
    fn nearest_index_examples() {
        let t = SamplerConfig::default().anchor_scales;
        assert_eq!(nearest_anchor_index(20.0, &t), 1);
        assert_eq!(nearest_anchor_index(8.0, &t), 0);
        assert_eq!(nearest_anchor_index(12.0, &t), 0);
        assert_eq!(nearest_anchor_index(300.0, &t), 5);
        assert_eq!(nearest_anchor_index(1.0, &t), 0);
    }

    #[test]
    fn plan_bounds_small_face() {
        let cfg = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let faces = [b(100., 100., 120., 120.)];
        for _ in 0..2000 {
            let p = draw_plan((1024., 768.), &faces, &cfg, &mut rng).unwrap();
            assert_eq!(p.i_anchor, 1);
            assert!(p.i_target <= 2);
            let s_t = cfg.anchor_scales[p.i_target];
            let resized = p.scale * p.face_size;
            assert!(resized >= s_t / 2.0 - 1e-9 && resized <= 2.0 * s_t + 1e-9);
            if p.i_target == 0 {
                assert!(p.scale >= 0.2 - 1e-12 && p.scale <= 0.8 + 1e-12);
            }
        }
    }

    #[test]
    fn plan_large_face_reaches_top_index() {
        let cfg = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let faces = [b(0., 0., 300., 300.)];
        let mut seen = [false; 6];
        for _ in 0..2000 {
            let p = draw_plan((600., 600.), &faces, &cfg, &mut rng).unwrap();
            assert_eq!(p.i_anchor, 5);
            seen[p.i_target] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn empty_faces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SamplerConfig::default();
        assert!(matches!(draw_plan((10., 10.), &[], &cfg, &mut rng), Err(Error::NoFaces)));
        let degenerate = [b(1., 1., 1., 5.)];
        assert!(matches!(draw_plan((10., 10.), &degenerate, &cfg, &mut rng), Err(Error::NoFaces)));
    }

    #[test]
    fn replay_is_deterministic() {
        let cfg = SamplerConfig::default();
        let faces = [b(10., 10., 50., 60.), b(200., 100., 230., 140.)];
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| draw_plan((800., 600.), &faces, &cfg, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn identity_plan_leaves_annotations() {
        let anns = [b(10., 10., 50., 60.), b(600., 600., 630., 639.)];
        let plan = SamplePlan {
            selected_face: 0,
            face_size: face_size(&anns[0]).unwrap(),
            i_anchor: 3,
            i_target: 3,
            scale: 1.0,
            crop_origin: (0.0, 0.0),
            crop_size: 640.0,
        };
        let out = apply_plan((640., 640.), &anns, &plan);
        assert_eq!(out.boxes, anns.to_vec());
        assert_eq!(out.kept, vec![0, 1]);
    }

    #[test]
    fn crop_drops_and_clips() {
        let anns = [b(10., 10., 50., 50.), b(90., 90., 130., 130.), b(95., 0., 140., 20.)];
        let plan = SamplePlan {
            selected_face: 0,
            face_size: 40.0,
            i_anchor: 2,
            i_target: 2,
            scale: 1.0,
            crop_origin: (0.0, 0.0),
            crop_size: 100.0,
        };
        let out = apply_plan((200., 200.), &anns, &plan);
        // box 1 has center (110,110) outside; box 2 center (117.5, 10) outside
        assert_eq!(out.kept, vec![0]);

        let plan = SamplePlan { crop_origin: (20.0, 20.0), ..plan };
        let out = apply_plan((200., 200.), &anns, &plan);
        assert_eq!(out.kept, vec![0, 1]);
        assert_eq!(out.boxes[1], b(70., 70., 100., 100.));
        assert_eq!(out.boxes[0], b(0., 0., 30., 30.));
    }

    #[test]
    fn small_image_crop_extends_past_image() {
        let cfg = SamplerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let faces = [b(40., 40., 80., 80.)];
        for _ in 0..200 {
            let p = draw_plan((200., 150.), &faces, &cfg, &mut rng).unwrap();
            let win = p.crop_window();
            let (w, h) = (200. * p.scale, 150. * p.scale);
            if w < cfg.crop_size {
                assert!(win.x_min <= 0.0 && win.x_max >= w - 1e-9);
            }
            if h < cfg.crop_size {
                assert!(win.y_min <= 0.0 && win.y_max >= h - 1e-9);
            }
            assert!(win.contains(&faces[0].scale(p.scale)));
        }
    }

    #[test]
    fn resized_face_inside_crop() {
        let cfg = SamplerConfig::default();
        let faces = [b(300., 200., 340., 250.), b(900., 50., 1000., 180.), b(5., 5., 14., 16.)];
        for seed in 0..500u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = draw_plan((1024., 768.), &faces, &cfg, &mut rng).unwrap();
            let out = apply_plan((1024., 768.), &faces, &p);
            let resized = faces[p.selected_face].scale(p.scale);
            assert!(p.crop_window().contains(&resized));
            let pos = out.kept.iter().position(|&k| k == p.selected_face).unwrap();
            let back = out.boxes[pos].translate(p.crop_origin.0, p.crop_origin.1);
            assert_abs_diff_eq!(back.x_min, resized.x_min, epsilon = 1e-9);
            assert_abs_diff_eq!(back.y_max, resized.y_max, epsilon = 1e-9);
        }
    }
}
