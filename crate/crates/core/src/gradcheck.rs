//! Central finite-difference checks of every analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::anchors::{anchors_for, AnchorSet};
use crate::config::Config;
use crate::error::Result;
use crate::geometry::BBox;
use crate::loss::{
    attention_loss, hybrid_loss, max_in_out_focal, sigmoid_cross_entropy, sigmoid_focal_loss,
    smooth_l1, FocalParams, LossBreakdown,
};
use crate::maps::ScoreMaps;
use crate::pipeline::{training_targets, TrainingTargets};

pub const FD_STEP: f64 = 1e-5;
/// Points this close to a smooth-L1 kink or a max-in-out tie are skipped.
pub const KINK_MARGIN: f64 = 1e-4;

/// Denominator floor of [`relative_error`]. Central differences of a loss of
/// magnitude `L` carry roundoff of about `ε·L/h ≈ 1e-10`, which would swamp
/// the relative error of gradients below ~1e-6.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `|a − b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// A small random training instance: anchors for a tiny input, a few faces,
/// random score maps and the targets derived from them.
#[derive(Debug, Clone)]
pub struct MiniInstance {
    pub anchors: AnchorSet,
    pub gts: Vec<BBox>,
    pub maps: ScoreMaps,
    pub targets: TrainingTargets,
}

impl MiniInstance {
    /// Input sides are drawn from 16..=24 px so every instance has at most
    /// about a hundred anchors.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, cfg: &Config) -> Result<Self> {
        let w = rng.random_range(16..=20u32);
        let h = rng.random_range(16..=20u32);
        let anchors = anchors_for(&cfg.anchors, w, h)?;
        let n_gts = rng.random_range(0..=3usize);
        let gts: Vec<BBox> = (0..n_gts)
            .map(|_| {
                let bw = rng.random_range(3.0..14.0);
                let bh = rng.random_range(3.0..14.0);
                let x = rng.random_range(-2.0..(w as f64 - 2.0));
                let y = rng.random_range(-2.0..(h as f64 - 2.0));
                BBox { x_min: x, y_min: y, x_max: x + bw, y_max: y + bh }
            })
            .collect();

        let mut maps = ScoreMaps::zeros(&anchors, cfg.cp, cfg.cn);
        maps.first_logits.iter_mut().for_each(|v| *v = rng.random_range(-4.0..4.0));
        maps.second_logits.iter_mut().for_each(|v| *v = rng.random_range(-4.0..4.0));
        maps.first_deltas.iter_mut().flatten().for_each(|v| *v = rng.random_range(-1.5..1.5));
        maps.second_deltas.iter_mut().flatten().for_each(|v| *v = rng.random_range(-1.5..1.5));
        maps.attention.iter_mut().flatten().for_each(|v| *v = rng.random_range(-4.0..4.0));

        let mut local = cfg.clone();
        local.stc_threshold = 0.2;
        let targets = training_targets(&maps, &anchors, &gts, &local)?;
        Ok(Self { anchors, gts, maps, targets })
    }

    pub fn loss(&self, maps: &ScoreMaps, focal: &FocalParams) -> Result<LossBreakdown> {
        hybrid_loss(maps, &self.targets.inputs(&self.anchors), focal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelCheck {
    pub kernel: &'static str,
    pub points: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<KernelCheck>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }
}

impl std::fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "seed: {}", self.seed)?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<16} points={:<6} skipped={:<4} max_rel_err={:.3e}",
                c.kernel, c.points, c.skipped, c.max_rel_err
            )?;
        }
        writeln!(f, "overall max_rel_err={:.3e}", self.max_rel_err())
    }
}

fn check_scalar(
    kernel: &'static str,
    points: usize,
    mut sample: impl FnMut() -> Option<(f64, f64)>,
) -> KernelCheck {
    let mut max_rel_err: f64 = 0.0;
    let mut skipped = 0;
    for _ in 0..points {
        match sample() {
            Some((a, n)) => max_rel_err = max_rel_err.max(relative_error(a, n)),
            None => skipped += 1,
        }
    }
    KernelCheck { kernel, points, skipped, max_rel_err }
}

/// Runs the scalar-kernel checks at `points` random points each, plus a full
/// hybrid-loss check on `instances` miniature instances.
pub fn run_gradcheck(seed: u64, points: usize, instances: usize, cfg: &Config) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FD_STEP;
    let mut checks = Vec::new();

    checks.push(check_scalar("focal", points, || {
        let z = rng.random_range(-8.0..8.0);
        let label = rng.random_range(0..=1u8);
        let p = FocalParams { alpha: rng.random_range(0.05..0.95), gamma: rng.random_range(0.0..4.0) };
        let (_, d) = sigmoid_focal_loss(z, label, &p);
        Some((d, central_difference(|x| sigmoid_focal_loss(x, label, &p).0, z, h)))
    }));

    checks.push(check_scalar("smooth_l1", points, || {
        let pred: f64 = rng.random_range(-4.0..4.0);
        let target: f64 = rng.random_range(-2.0..2.0);
        if ((pred - target).abs() - 1.0).abs() < KINK_MARGIN {
            return None;
        }
        let (_, d) = smooth_l1(pred, target);
        Some((d, central_difference(|x| smooth_l1(x, target).0, pred, h)))
    }));

    checks.push(check_scalar("attention_ce", points, || {
        let z = rng.random_range(-8.0..8.0);
        let y = rng.random_range(0..=1u8) as f64;
        let (_, d) = sigmoid_cross_entropy(z, y);
        Some((d, central_difference(|x| sigmoid_cross_entropy(x, y).0, z, h)))
    }));

    let (cp, cn) = (cfg.cp, cfg.cn);
    checks.push(check_scalar("max_in_out_focal", points, || {
        let raw: Vec<f64> = (0..cp + cn).map(|_| rng.random_range(-8.0..8.0)).collect();
        if near_tie(&raw[..cp]) || near_tie(&raw[cp..]) {
            return None;
        }
        let label = rng.random_range(0..=1u8);
        let k = rng.random_range(0..cp + cn);
        let mut g = vec![0.0; cp + cn];
        max_in_out_focal(&raw[..cp], &raw[cp..], label, &cfg.focal, &mut g);
        let f = |x: f64| {
            let mut v = raw.clone();
            v[k] = x;
            let mut scratch = vec![0.0; cp + cn];
            max_in_out_focal(&v[..cp], &v[cp..], label, &cfg.focal, &mut scratch)
        };
        Some((g[k], central_difference(f, raw[k], h)))
    }));

    let mut hybrid = KernelCheck { kernel: "hybrid", points: 0, skipped: 0, max_rel_err: 0.0 };
    let mut attention = KernelCheck { kernel: "attention_loss", points: 0, skipped: 0, max_rel_err: 0.0 };
    for _ in 0..instances {
        let inst = MiniInstance::random(&mut rng, cfg)?;
        let c = check_instance(&inst, &cfg.focal)?;
        hybrid.points += c.points;
        hybrid.skipped += c.skipped;
        hybrid.max_rel_err = hybrid.max_rel_err.max(c.max_rel_err);

        let (_, grads) = attention_loss(&inst.maps.attention, &inst.targets.masks)?;
        for (l, level) in inst.maps.attention.iter().enumerate() {
            for k in 0..level.len() {
                let f = |x: f64| {
                    let mut m = inst.maps.attention.clone();
                    m[l][k] = x;
                    attention_loss(&m, &inst.targets.masks).map(|r| r.0).unwrap_or(f64::NAN)
                };
                let n = central_difference(f, level[k], h);
                attention.points += 1;
                attention.max_rel_err = attention.max_rel_err.max(relative_error(grads[l][k], n));
            }
        }
    }
    checks.push(attention);
    checks.push(hybrid);

    Ok(GradcheckReport { seed, checks })
}

fn near_tie(group: &[f64]) -> bool {
    let mut v = group.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v.len() > 1 && v[0] - v[1] < KINK_MARGIN
}

/// Checks every entry of the hybrid-loss gradient of one instance.
pub fn check_instance(inst: &MiniInstance, focal: &FocalParams) -> Result<KernelCheck> {
    let base = inst.loss(&inst.maps, focal)?;
    let analytic = base.grad.flatten();
    let skip = skip_mask(inst);
    let mut out = KernelCheck { kernel: "hybrid", points: 0, skipped: 0, max_rel_err: 0.0 };
    let values = inst.maps.flatten();
    for (k, &x) in values.iter().enumerate() {
        if skip[k] {
            out.skipped += 1;
            continue;
        }
        let eval = |v: f64| -> f64 {
            let mut m = inst.maps.clone();
            let mut idx = 0;
            m.for_each_mut(|e| {
                if idx == k {
                    *e = v;
                }
                idx += 1;
            });
            inst.loss(&m, focal).map(|b| b.total).unwrap_or(f64::NAN)
        };
        let n = central_difference(eval, x, FD_STEP);
        out.points += 1;
        out.max_rel_err = out.max_rel_err.max(relative_error(analytic[k], n));
    }
    Ok(out)
}

/// Entries within [`KINK_MARGIN`] of a smooth-L1 kink or of a max-in-out tie.
fn skip_mask(inst: &MiniInstance) -> Vec<bool> {
    let maps = &inst.maps;
    let t = &inst.targets;
    let mut skip = Vec::with_capacity(maps.flatten().len());
    skip.extend(std::iter::repeat_n(false, maps.first_logits.len()));

    let off = inst.anchors.str_range().start;
    for (j, d) in maps.first_deltas.iter().enumerate() {
        let target = t.first.reg_targets[off + j].map(|x| x.to_array());
        for (k, &v) in d.iter().enumerate() {
            skip.push(target.is_some_and(|tg| ((v - tg[k]).abs() - 1.0).abs() < KINK_MARGIN));
        }
    }
    for i in 0..maps.num_anchors() {
        let (p, n) = maps.second_groups(i);
        let tie = near_tie(p) || near_tie(n);
        skip.extend(std::iter::repeat_n(tie, maps.group_size()));
    }
    for (i, d) in maps.second_deltas.iter().enumerate() {
        let target = t.second.reg_targets[i].map(|x| x.to_array());
        for (k, &v) in d.iter().enumerate() {
            skip.push(target.is_some_and(|tg| ((v - tg[k]).abs() - 1.0).abs() < KINK_MARGIN));
        }
    }
    skip.extend(std::iter::repeat_n(false, maps.attention.iter().map(Vec::len).sum()));
    skip
}
