//! JSON run configuration shared by every CLI subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{FocussConfig, TvConfig};
use crate::error::{Error, Result};
use crate::eval::{desk_arch, AdaptStudyConfig};
use crate::network::ArchConfig;
use crate::phantom::PhantomFamily;
use crate::train::{AcquisitionGeometry, AdaptConfig, TrainConfig};

/// Every tunable of the pipeline. Missing fields take their defaults and
/// unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Image side in pixels.
    pub size: usize,
    pub family: PhantomFamily,
    /// Slices per phantom batch (training corpus or evaluation set).
    pub slices: usize,
    /// View counts of the evaluation matrix.
    pub eval_views: Vec<usize>,
    pub geometry: AcquisitionGeometry,
    pub arch: ArchConfig,
    pub pretrain: TrainConfig,
    pub finetune: AdaptConfig,
    pub tv: TvConfig,
    pub focuss: FocussConfig,
    pub adapt_study: AdaptStudyConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            size: 64,
            family: PhantomFamily::Brain,
            slices: 6,
            eval_views: vec![30, 40, 60],
            geometry: AcquisitionGeometry::default(),
            arch: desk_arch(),
            pretrain: TrainConfig::default(),
            finetune: AdaptConfig::default(),
            tv: TvConfig::default(),
            focuss: FocussConfig::default(),
            adapt_study: AdaptStudyConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % self.arch.size_multiple() != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {} must be >= 16 and divisible by {}",
                self.size,
                self.arch.size_multiple()
            )));
        }
        if self.slices == 0 {
            return Err(Error::InvalidArgument("slices must be >= 1".into()));
        }
        self.arch.validate()?;
        self.pretrain.validate(&self.arch)?;
        self.finetune.train.validate(&self.arch)?;
        self.tv.validate()?;
        self.focuss.validate()?;
        self.adapt_study.validate()
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::from_json(&text)
}
