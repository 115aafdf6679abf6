//! The flat run configuration. Every key is optional in a config file and
//! unknown keys are rejected. The effective configuration of a run is
//! echoed to `config.json` in its run directory.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::field::{EncodingConfig, FieldConfig};
use crate::optim::AdamConfig;
use crate::render::RenderConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            _ => Err(Error::Config(format!("unknown precision {s:?} (expected f32 or f64)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Rays per iteration.
    pub rays: usize,
    pub iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub distortion: bool,
    pub content: bool,
    pub seed: u64,
    pub eval_every: usize,
    /// Lower bound on a pixel's recorded loss in the content-aware sampler.
    pub floor_eps: f64,
    pub chunk_rays: usize,
    pub log_wall_time: bool,
    /// Arithmetic precision of the fields during training.
    pub precision: Precision,

    pub n_coarse: usize,
    pub n_fine: usize,
    /// Added to every coarse weight before fine resampling.
    pub pdf_padding: f64,

    pub net_depth: usize,
    pub net_width: usize,
    pub color_width: usize,
    pub pos_octaves: usize,
    pub pos_identity: bool,
    pub dir_octaves: usize,
    pub dir_identity: bool,
    pub density_scale: f64,
    pub zero_density_head: bool,

    /// Side of the square high/low-frequency evaluation crops.
    pub crop: usize,
    pub crop_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let r = RenderConfig::default();
        let f = FieldConfig::default();
        Self {
            rays: t.rays_per_iter,
            iters: t.total_iters,
            lr_start: t.lr_start,
            lr_end: t.lr_end,
            adam_beta1: t.adam.beta1,
            adam_beta2: t.adam.beta2,
            adam_epsilon: t.adam.epsilon,
            distortion: t.distortion_aware,
            content: t.content_aware,
            seed: t.seed,
            eval_every: t.eval_every,
            floor_eps: t.floor_eps,
            chunk_rays: t.chunk_rays,
            log_wall_time: t.log_wall_time,
            precision: Precision::F32,
            n_coarse: r.n_coarse,
            n_fine: r.n_fine,
            pdf_padding: r.pdf_padding,
            net_depth: f.depth,
            net_width: f.width,
            color_width: f.color_width,
            pos_octaves: f.position_encoding.octaves,
            pos_identity: f.position_encoding.include_identity,
            dir_octaves: f.direction_encoding.octaves,
            dir_identity: f.direction_encoding.include_identity,
            density_scale: f.density_scale,
            zero_density_head: f.zero_density_head,
            crop: t.crop,
            crop_stride: t.crop_stride,
        }
    }
}

impl RunConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            rays_per_iter: self.rays,
            total_iters: self.iters,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
            distortion_aware: self.distortion,
            content_aware: self.content,
            seed: self.seed,
            eval_every: self.eval_every,
            floor_eps: self.floor_eps,
            chunk_rays: self.chunk_rays,
            crop: self.crop,
            crop_stride: self.crop_stride,
            log_wall_time: self.log_wall_time,
        }
    }

    pub fn render(&self) -> RenderConfig {
        RenderConfig {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            pdf_padding: self.pdf_padding,
        }
    }

    /// `position_scale` is left at 1; training derives it from the dataset.
    pub fn field(&self) -> FieldConfig {
        FieldConfig {
            depth: self.net_depth,
            width: self.net_width,
            color_width: self.color_width,
            position_encoding: EncodingConfig::new(self.pos_octaves, self.pos_identity),
            direction_encoding: EncodingConfig::new(self.dir_octaves, self.dir_identity),
            position_scale: 1.0,
            density_scale: self.density_scale,
            zero_density_head: self.zero_density_head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train().validate()?;
        self.render().validate()?;
        self.field().validate()?;
        if self.crop == 0 || self.crop_stride == 0 {
            return Err(Error::Config("crop and crop_stride must be >= 1".into()));
        }
        if !(self.floor_eps > 0.0 && self.floor_eps.is_finite()) {
            return Err(Error::Config("floor_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::data(path, "config is not UTF-8"))?;
        Self::from_json(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_component_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.train(), TrainConfig::default());
        assert_eq!(c.render(), RenderConfig::default());
        assert_eq!(c.field(), FieldConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn missing_keys_take_defaults() {
        let c = RunConfig::from_json(r#"{"iters": 7, "content": false}"#).unwrap();
        assert_eq!(c.iters, 7);
        assert!(!c.content);
        assert_eq!(c.rays, 2048);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"iterz": 7}"#).unwrap_err();
        assert!(err.to_string().contains("iterz"), "{err}");
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig {
            precision: Precision::F64,
            lr_start: 1.0 / 3.0,
            seed: u64::MAX,
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn invalid_values_fail_validation() {
        let bad = [
            RunConfig { rays: 0, ..Default::default() },
            RunConfig { n_coarse: 0, ..Default::default() },
            RunConfig { net_width: 0, ..Default::default() },
            RunConfig { lr_end: 0.0, ..Default::default() },
            RunConfig { crop_stride: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
