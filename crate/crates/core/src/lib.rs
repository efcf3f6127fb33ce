//! Core of the explanation likelihood-ratio toolkit.
//!
//! Explanations of face-pair verification decisions are embedded, reduced
//! with PCA, and scored against two class-conditional Gaussian mixtures
//! (genuine `H0`, impostor `H1`). The log likelihood ratio and its bounded
//! logistic score measure how strongly an explanation supports a match.
//!
//! Module map:
//! - [`data`]: manifests, pair records, verdict parsing
//! - [`embedding`]: embedding vectors and the [`Embedder`](embedding::Embedder) trait
//! - [`prompts`]: prompt templates for the four prompting regimes
//! - [`pca`]: variance-targeted PCA
//! - [`gmm`]: EM-fitted Gaussian mixtures
//! - [`lr`]: likelihood-ratio scoring
//! - [`metrics`]: ROC, confusion matrices, cluster separability, 2-D projection
//! - [`synth`]: seeded synthetic data and analytic oracles
//! - [`bundle`]: the frozen model bundle passed from training to scoring

pub mod bundle;
pub mod data;
pub mod embedding;
pub mod gmm;
pub mod json;
pub mod lr;
pub mod math;
pub mod metrics;
pub mod pca;
pub mod prompts;
pub mod synth;

pub use bundle::ModelBundle;
pub use data::{
    FrDecision, Manifest, PairLabel, PairRecord, PromptRegime, Verdict,
};
pub use embedding::{Embedder, EmbeddingVector};
pub use gmm::{CovarianceKind, EmFitReport, GmmModel, GmmOptions, Hypothesis};
pub use lr::LrResult;
pub use pca::PcaModel;
