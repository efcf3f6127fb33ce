//! Optional TOML configuration file. Command-line flags and environment
//! variables (handled by clap) take precedence over values read here, which
//! in turn override built-in defaults.

use std::path::Path;

use anyhow::Context;
use lrexplain_core::gmm::GmmOptions;
use lrexplain_providers::chat::GenerationConfig;
use lrexplain_providers::embed::EmbeddingConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    /// `offline` or `remote`.
    pub embedder: Option<String>,
    pub generation: GenerationConfig,
    pub embedding: EmbeddingConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub components: usize,
    pub covariance: String,
    pub variance_target: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub reg: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let g = GmmOptions::default();
        Self {
            components: g.components,
            covariance: "full".into(),
            variance_target: lrexplain_core::pca::DEFAULT_VARIANCE_TARGET,
            tol: g.tol,
            max_iter: g.max_iter,
            reg: g.reg,
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| crate::error::usage(format!("config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_defaults() {
        let c: FileConfig = toml::from_str(
            r#"
            seed = 9
            embedder = "remote"
            [generation]
            base_url = "http://localhost:8000/v1"
            model_name = "vlm"
            [train]
            components = 2
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(9));
        assert_eq!(c.generation.temperature, 0.7);
        assert_eq!(c.train.components, 2);
        assert_eq!(c.train.variance_target, 0.97);
        assert_eq!(c.embedding.model_name, "text-embedding-3-small");
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
