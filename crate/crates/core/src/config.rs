//! Flat `key = value` configuration. Every constant used by the pipeline is a
//! key here; defaults reproduce the detector's published settings.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchors::AnchorConfig;
use crate::assign::{MatchThresholds, Step};
use crate::das::SamplerConfig;
use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::loss::FocalParams;
use crate::postprocess::DecodeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub anchors: AnchorConfig,
    pub first_step: MatchThresholds,
    pub second_step: MatchThresholds,
    pub force_best_match: bool,
    pub stc_threshold: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_keep: usize,
    pub focal: FocalParams,
    pub cp: usize,
    pub cn: usize,
    pub crop_size: f64,
    pub eval_iou: f64,
    pub eval_thresholds: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            anchors: AnchorConfig::default(),
            first_step: MatchThresholds::FIRST,
            second_step: MatchThresholds::SECOND,
            force_best_match: true,
            stc_threshold: 0.01,
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_keep: 750,
            focal: FocalParams::default(),
            cp: 3,
            cn: 3,
            crop_size: 640.0,
            eval_iou: 0.5,
            eval_thresholds: 1000,
            seed: 0,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Config {
    pub const KEYS: [&'static str; 20] = [
        "anchor.strides",
        "anchor.scale_factors",
        "anchor.aspect_ratio",
        "anchor.stc_levels",
        "match.first.theta_n",
        "match.first.theta_p",
        "match.second.theta_n",
        "match.second.theta_p",
        "match.force_best",
        "stc.threshold",
        "det.score_threshold",
        "nms.iou",
        "nms.max_keep",
        "focal.alpha",
        "focal.gamma",
        "max_in_out.cp",
        "max_in_out.cn",
        "das.crop_size",
        "eval.iou",
        "eval.thresholds",
    ];

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "anchor.strides" => {
                self.anchors.strides = value
                    .split(',')
                    .map(|s| parse_usize(key, s).map(|v| v as u32))
                    .collect::<Result<_>>()?
            }
            "anchor.scale_factors" => {
                let v: Vec<f64> = value.split(',').map(|s| parse_f64(key, s)).collect::<Result<_>>()?;
                self.anchors.scale_factors = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected two values")))?;
            }
            "anchor.aspect_ratio" => self.anchors.aspect_ratio = parse_f64(key, value)?,
            "anchor.stc_levels" => self.anchors.stc_levels = parse_usize(key, value)?,
            "match.first.theta_n" => self.first_step.theta_n = parse_f64(key, value)?,
            "match.first.theta_p" => self.first_step.theta_p = parse_f64(key, value)?,
            "match.second.theta_n" => self.second_step.theta_n = parse_f64(key, value)?,
            "match.second.theta_p" => self.second_step.theta_p = parse_f64(key, value)?,
            "match.force_best" => self.force_best_match = parse_bool(key, value)?,
            "stc.threshold" => self.stc_threshold = parse_f64(key, value)?,
            "det.score_threshold" => self.score_threshold = parse_f64(key, value)?,
            "nms.iou" => self.nms_iou = parse_f64(key, value)?,
            "nms.max_keep" => self.max_keep = parse_usize(key, value)?,
            "focal.alpha" => self.focal.alpha = parse_f64(key, value)?,
            "focal.gamma" => self.focal.gamma = parse_f64(key, value)?,
            "max_in_out.cp" => self.cp = parse_usize(key, value)?,
            "max_in_out.cn" => self.cn = parse_usize(key, value)?,
            "das.crop_size" => self.crop_size = parse_f64(key, value)?,
            "eval.iou" => self.eval_iou = parse_f64(key, value)?,
            "eval.thresholds" => self.eval_thresholds = parse_usize(key, value)?,
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: expected an integer, got {value:?}")))?
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Parses a config file on top of the defaults. Blank lines and `#`
    /// comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        self.first_step.validate()?;
        self.second_step.validate()?;
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("stc.threshold", self.stc_threshold)?;
        unit("det.score_threshold", self.score_threshold)?;
        unit("nms.iou", self.nms_iou)?;
        unit("eval.iou", self.eval_iou)?;
        if !(self.focal.alpha > 0.0 && self.focal.alpha < 1.0) || self.focal.gamma < 0.0 {
            return Err(Error::Config("focal: need 0 < alpha < 1 and gamma >= 0".into()));
        }
        if self.cp == 0 || self.cn == 0 {
            return Err(Error::Config("max_in_out groups must be non-empty".into()));
        }
        if !(self.crop_size > 0.0) {
            return Err(Error::Config("das.crop_size must be positive".into()));
        }
        if self.eval_thresholds == 0 {
            return Err(Error::Config("eval.thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Serializes every key; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "anchor.strides = {}", join(&self.anchors.strides));
        let _ = writeln!(s, "anchor.scale_factors = {}", join(&self.anchors.scale_factors));
        let _ = writeln!(s, "anchor.aspect_ratio = {}", self.anchors.aspect_ratio);
        let _ = writeln!(s, "anchor.stc_levels = {}", self.anchors.stc_levels);
        let _ = writeln!(s, "match.first.theta_n = {}", self.first_step.theta_n);
        let _ = writeln!(s, "match.first.theta_p = {}", self.first_step.theta_p);
        let _ = writeln!(s, "match.second.theta_n = {}", self.second_step.theta_n);
        let _ = writeln!(s, "match.second.theta_p = {}", self.second_step.theta_p);
        let _ = writeln!(s, "match.force_best = {}", self.force_best_match);
        let _ = writeln!(s, "stc.threshold = {}", self.stc_threshold);
        let _ = writeln!(s, "det.score_threshold = {}", self.score_threshold);
        let _ = writeln!(s, "nms.iou = {}", self.nms_iou);
        let _ = writeln!(s, "nms.max_keep = {}", self.max_keep);
        let _ = writeln!(s, "focal.alpha = {}", self.focal.alpha);
        let _ = writeln!(s, "focal.gamma = {}", self.focal.gamma);
        let _ = writeln!(s, "max_in_out.cp = {}", self.cp);
        let _ = writeln!(s, "max_in_out.cn = {}", self.cn);
        let _ = writeln!(s, "das.crop_size = {}", self.crop_size);
        let _ = writeln!(s, "eval.iou = {}", self.eval_iou);
        let _ = writeln!(s, "eval.thresholds = {}", self.eval_thresholds);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn thresholds(&self, step: Step) -> MatchThresholds {
        match step {
            Step::First => self.first_step,
            Step::Second => self.second_step,
        }
    }

    pub fn decode_params(&self) -> DecodeParams {
        DecodeParams {
            stc_threshold: self.stc_threshold,
            score_threshold: self.score_threshold,
            nms_iou: self.nms_iou,
            max_keep: self.max_keep,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { anchor_scales: self.anchors.primary_scales(), crop_size: self.crop_size }
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams { iou_threshold: self.eval_iou, n_thresholds: self.eval_thresholds }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_constants() {
        let c = Config::default();
        assert_eq!((c.first_step.theta_n, c.first_step.theta_p), (0.3, 0.7));
        assert_eq!((c.second_step.theta_n, c.second_step.theta_p), (0.35, 0.35));
        assert_eq!(c.anchors.aspect_ratio, 1.25);
        assert_eq!((c.cp, c.cn), (3, 3));
        assert_eq!(c.crop_size, 640.0);
        assert_eq!(c.sampler().anchor_scales, vec![8., 16., 32., 64., 128., 256.]);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::default();
        c.apply_override("nms.iou=0.4").unwrap();
        c.apply_override("anchor.strides=8,16,32").unwrap();
        c.apply_override("anchor.stc_levels = 1").unwrap();
        c.seed = 99;
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        assert_eq!(Config::KEYS.len() + 1, c.to_text().lines().count());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("bogus = 1").is_err());
        assert!(Config::parse("nms.iou").is_err());
        assert!(Config::parse("nms.iou = 2").is_err());
        assert!(Config::parse("match.first.theta_n = 0.9").is_err());
        assert!(Config::parse("# comment\n\nfocal.gamma = 0 # plain CE\n").is_ok());
    }
}
