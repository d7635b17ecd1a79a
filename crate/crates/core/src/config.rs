//! Run configuration. Every field is optional in the JSON file; missing
//! fields take the defaults below. The effective config is echoed into
//! every output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::validate_scale;
use crate::inference::mock::MockSettings;
use crate::proposals::{FilterConfig, FilterPromptList};
use crate::scoring::{EnsembleWeights, PatchPadding, PromptEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterChoice {
    /// Ask the segmentation backend.
    #[default]
    Model,
    /// Rasterize the detector box.
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detector box threshold for baseline localization.
    pub sigma_g: f64,
    /// Damage threshold on the ensemble score.
    pub sigma_tilde: f64,
    pub epsilon: f64,
    pub weights: EnsembleWeights,
    pub prompts: PromptEnsemble,
    pub filter: FilterConfig,
    pub filter_prompts: FilterPromptList,
    pub scales: Vec<f64>,
    pub pad: f64,
    pub min_side: f64,
    pub confidence_fraction: f64,
    pub segmenter: SegmenterChoice,
    /// Mock backend world. The seed inside is mandatory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSettings>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sigma_g: 0.35,
            sigma_tilde: 0.0,
            epsilon: 0.01,
            weights: EnsembleWeights::default(),
            prompts: PromptEnsemble::default(),
            filter: FilterConfig::default(),
            filter_prompts: FilterPromptList::default(),
            scales: vec![1.0, 0.5],
            pad: 10.0,
            min_side: 50.0,
            confidence_fraction: 0.1,
            segmenter: SegmenterChoice::Model,
            mock: None,
        }
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} outside [0,1]")))
    }
}

impl PipelineConfig {
    pub fn padding(&self) -> PatchPadding {
        PatchPadding { pad: self.pad, min_side: self.min_side }
    }

    pub fn validate(&self) -> Result<()> {
        unit("sigma_g", self.sigma_g)?;
        if !self.sigma_tilde.is_finite() {
            return Err(Error::Config("sigma_tilde must be finite".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon = {} must be a finite non-negative number", self.epsilon)));
        }
        let EnsembleWeights { change, post } = self.weights;
        if !(change >= 0.0 && post >= 0.0 && (change + post - 1.0).abs() <= 1e-9) {
            return Err(Error::Config(format!("ensemble weights {change} + {post} must be non-negative and sum to 1")));
        }
        self.prompts.validate()?;
        self.filter.validate()?;
        self.filter_prompts.validate()?;
        if self.filter.sigma_g_prime > self.sigma_g {
            return Err(Error::Config(format!(
                "filter.sigma_g_prime = {} exceeds sigma_g = {}",
                self.filter.sigma_g_prime, self.sigma_g
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("scales must not be empty".into()));
        }
        for (i, &s) in self.scales.iter().enumerate() {
            validate_scale(s)?;
            let expected = if i == 0 { 1.0 } else { self.scales[i - 1] / 2.0 };
            if (s - expected).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "scales must start at 1 and halve at each step, got {:?}",
                    self.scales
                )));
            }
        }
        if !(self.pad.is_finite() && self.pad >= 0.0) {
            return Err(Error::Config(format!("pad = {} must be non-negative", self.pad)));
        }
        if !(self.min_side.is_finite() && self.min_side >= 1.0) {
            return Err(Error::Config(format!("min_side = {} must be at least 1", self.min_side)));
        }
        if !(self.confidence_fraction > 0.0 && self.confidence_fraction <= 1.0) {
            return Err(Error::Config(format!("confidence_fraction = {} outside (0,1]", self.confidence_fraction)));
        }
        if let Some(m) = &self.mock {
            m.validate_noise()?;
        }
        Ok(())
    }

    /// Parse and validate. Syntax and schema problems are config errors.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_bytes(&bytes).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("config serializes");
        out.push(b'\n');
        out
    }
}
