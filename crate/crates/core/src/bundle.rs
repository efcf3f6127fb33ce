//! The frozen artifact handed from training to scoring: one PCA transform,
//! two class-conditional mixtures, and the provenance of the embedding
//! space they live in.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{GmmModel, Hypothesis};
use crate::json;
use crate::pca::PcaModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("invalid bundle: {0}")]
    Invalid(String),
    #[error("bundle format version {found} is newer than supported version {FORMAT_VERSION}")]
    UnsupportedVersion { found: u32 },
    #[error("malformed bundle: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub provider_tag: String,
    pub pca: PcaModel,
    pub gmm_h0: GmmModel,
    pub gmm_h1: GmmModel,
    #[serde(default)]
    pub training_metadata: BTreeMap<String, serde_json::Value>,
}

impl ModelBundle {
    pub fn new(
        provider_tag: impl Into<String>,
        pca: PcaModel,
        gmm_h0: GmmModel,
        gmm_h1: GmmModel,
        training_metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self, BundleError> {
        let b = Self {
            format_version: FORMAT_VERSION,
            provider_tag: provider_tag.into(),
            pca,
            gmm_h0,
            gmm_h1,
            training_metadata,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        if self.format_version > FORMAT_VERSION {
            return Err(BundleError::UnsupportedVersion {
                found: self.format_version,
            });
        }
        if self.provider_tag.is_empty() {
            return Err(BundleError::Invalid("provider_tag is empty".into()));
        }
        if self.gmm_h0.hypothesis() != Hypothesis::H0 {
            return Err(BundleError::Invalid("gmm_h0 is not an H0 model".into()));
        }
        if self.gmm_h1.hypothesis() != Hypothesis::H1 {
            return Err(BundleError::Invalid("gmm_h1 is not an H1 model".into()));
        }
        let k = self.pca.k();
        if self.gmm_h0.dim() != k || self.gmm_h1.dim() != k {
            return Err(BundleError::Invalid(format!(
                "PCA keeps {k} dimensions but mixtures have {} and {}",
                self.gmm_h0.dim(),
                self.gmm_h1.dim()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, BundleError> {
        Ok(json::to_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let b: ModelBundle = serde_json::from_str(text)?;
        b.validate()?;
        Ok(b)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), BundleError> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, BundleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{fit_gmm, GmmOptions};
    use crate::pca::fit_pca;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_bundle() -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let shift = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![shift + rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.1..0.1)]
            })
            .collect();
        let pca = fit_pca(&rows, 0.97).unwrap();
        let z = pca.transform_rows(&rows).unwrap();
        let pick = |parity: usize| {
            let idx: Vec<usize> = (0..rows.len()).filter(|i| i % 2 == parity).collect();
            DMatrix::from_fn(idx.len(), z.ncols(), |i, j| z[(idx[i], j)])
        };
        let opts = GmmOptions { components: 2, ..Default::default() };
        let (h0, _) = fit_gmm(&pick(0), Hypothesis::H0, &opts).unwrap();
        let (h1, _) = fit_gmm(&pick(1), Hypothesis::H1, &opts).unwrap();
        ModelBundle::new("offline", pca, h0, h1, BTreeMap::new()).unwrap()
    }

    #[test]
    fn role_and_dimension_checks() {
        let b = small_bundle();
        let swapped = ModelBundle::new(
            "offline",
            b.pca.clone(),
            b.gmm_h1.clone(),
            b.gmm_h0.clone(),
            BTreeMap::new(),
        );
        assert!(matches!(swapped, Err(BundleError::Invalid(_))));
        assert!(matches!(
            ModelBundle::new("", b.pca.clone(), b.gmm_h0.clone(), b.gmm_h1.clone(), BTreeMap::new()),
            Err(BundleError::Invalid(_))
        ));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let b = small_bundle();
        let back = ModelBundle::from_json(&b.to_json().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn newer_versions_are_refused() {
        let b = small_bundle();
        let mut v: serde_json::Value = serde_json::from_str(&b.to_json().unwrap()).unwrap();
        v["format_version"] = serde_json::json!(FORMAT_VERSION + 1);
        assert!(matches!(
            ModelBundle::from_json(&v.to_string()),
            Err(BundleError::UnsupportedVersion { .. })
        ));
    }
}
