//! The `--config <json>` pipeline configuration: optional nested sections
//! mirroring each module's config. Explicit command-line flags always win
//! over config values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use spinalis::augment::GlideConfig;
use spinalis::cnn::TrainConfig;
use spinalis::fcm::FcmConfig;
use spinalis::features::FeatureConfig;
use spinalis::forest::ForestConfig;
use spinalis::segment::{PreprocessConfig, RelevanceConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Train/test split by source volume.
    #[serde(default)]
    pub split_ratio: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub fcm: Option<FcmConfig>,
    #[serde(default)]
    pub forest: Option<ForestConfig>,
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub relevance: Option<RelevanceConfig>,
    #[serde(default)]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default)]
    pub glide: Option<GlideConfig>,
    #[serde(default)]
    pub min_scale: Option<f64>,
    #[serde(default)]
    pub cnn_train: Option<TrainConfig>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.split_ratio {
            if !(0.0 < r && r < 1.0) {
                bail!("split_ratio must lie in (0, 1), got {r}");
            }
        }
        if let Some(fcm) = &self.fcm {
            fcm.validate().map_err(|e| anyhow::anyhow!("fcm section: {e}"))?;
        }
        if let Some(forest) = &self.forest {
            forest.validate().map_err(|e| anyhow::anyhow!("forest section: {e}"))?;
        }
        if let Some(glide) = &self.glide {
            glide.validate().map_err(|e| anyhow::anyhow!("glide section: {e}"))?;
        }
        if let Some(s) = self.min_scale {
            if !(0.0 < s && s <= 1.0) {
                bail!("min_scale must lie in (0, 1], got {s}");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let config: PipelineConfig = serde_json::from_str("{}").unwrap();
        config.validate().unwrap();
        assert!(config.fcm.is_none());
    }

    #[test]
    fn nested_sections_parse() {
        let json = r#"{
            "split_ratio": 0.8,
            "seed": 7,
            "fcm": {"c": 5, "m": 2.0, "epsilon": 1e-5, "max_iter": 100, "seed": 0},
            "relevance": {
                "intensity_z_threshold": 1.5,
                "min_component_px": 40,
                "compactness_max": 40.0,
                "csf_proximity_px": 10,
                "manual_override": null
            }
        }"#;
        let config: PipelineConfig = serde_json::from_str(json).unwrap();
        config.validate().unwrap();
        assert_eq!(config.fcm.unwrap().c, 5);
        assert_eq!(config.relevance.unwrap().min_component_px, 40);
    }

    #[test]
    fn bad_ratio_rejected() {
        let config: PipelineConfig = serde_json::from_str(r#"{"split_ratio": 1.5}"#).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let parsed: Result<PipelineConfig, _> = serde_json::from_str(r#"{"splitratio": 0.5}"#);
        assert!(parsed.is_err());
    }
}
