//! Seeded synthetic embeddings with known generating densities.
//!
//! Genuine vectors are centred at `+Δ/2` and impostor vectors at `−Δ/2` on
//! the first axis. Each class is an equal-weight mixture of isotropic
//! Gaussians with standard deviation `σ`; with more than one component per
//! class the component means are spread `3σ` apart along the second axis
//! (the first axis when `k = 1`). Random numbers come from ChaCha8 seeded
//! with `SynthSpec::seed`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Manifest, PairLabel, PairRecord, PromptRegime, Verdict};
use crate::embedding::EmbeddingVector;
use crate::gmm::{CovarianceKind, GmmModel, Hypothesis};
use crate::math::{log_sum_exp, normal_cdf, sigmoid, LN_2PI};

/// Provider tag carried by synthetic embeddings.
pub const SYNTH_PROVIDER_TAG: &str = "synthetic";

const COMPONENT_SPACING: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub n_per_class: usize,
    /// Δ, distance between the class centres.
    pub mean_separation: f64,
    /// σ, per-axis standard deviation of every component.
    pub covariance_scale: f64,
    pub mixture_components_per_class: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.n_per_class < 2 {
            return bad(format!("n_per_class must be at least 2, got {}", self.n_per_class));
        }
        if !(self.mean_separation >= 0.0 && self.mean_separation.is_finite()) {
            return bad(format!("mean separation must be finite and >= 0, got {}", self.mean_separation));
        }
        if !(self.covariance_scale > 0.0 && self.covariance_scale.is_finite()) {
            return bad(format!("covariance scale must be finite and > 0, got {}", self.covariance_scale));
        }
        if self.mixture_components_per_class == 0 {
            return bad("at least one mixture component per class is required".into());
        }
        Ok(())
    }
}

/// One class's generating mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl ClassMixture {
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let k = z.len() as f64;
        let var = self.sigma * self.sigma;
        let norm = -0.5 * k * (LN_2PI + var.ln());
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| {
                let sq: f64 = z.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() + norm - 0.5 * sq / var
            })
            .collect();
        log_sum_exp(&terms)
    }

    /// The same mixture as a [`GmmModel`].
    pub fn to_gmm(&self, hypothesis: Hypothesis) -> GmmModel {
        let k = self.means[0].len();
        GmmModel::new(
            hypothesis,
            CovarianceKind::Full,
            self.weights.clone(),
            self.means.iter().map(|m| DVector::from_column_slice(m)).collect(),
            vec![DMatrix::identity(k, k) * (self.sigma * self.sigma); self.means.len()],
        )
        .expect("synthetic mixture parameters are valid by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub genuine: ClassMixture,
    pub impostor: ClassMixture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub genuine: Vec<Vec<f64>>,
    pub impostor: Vec<Vec<f64>>,
    pub params: TrueParams,
}

fn class_mixture(spec: &SynthSpec, centre: f64) -> ClassMixture {
    let j = spec.mixture_components_per_class;
    let axis = if spec.k >= 2 { 1 } else { 0 };
    let means = (0..j)
        .map(|c| {
            let mut m = vec![0.0; spec.k];
            m[0] = centre;
            m[axis] += COMPONENT_SPACING * spec.covariance_scale * (c as f64 - (j - 1) as f64 / 2.0);
            m
        })
        .collect();
    ClassMixture {
        weights: vec![1.0 / j as f64; j],
        means,
        sigma: spec.covariance_scale,
    }
}

pub fn true_params(spec: &SynthSpec) -> Result<TrueParams, SynthError> {
    spec.validate()?;
    let half = spec.mean_separation / 2.0;
    Ok(TrueParams {
        genuine: class_mixture(spec, half),
        impostor: class_mixture(spec, -half),
    })
}

fn draw(mix: &ClassMixture, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let c = rng.random_range(0..mix.means.len());
            mix.means[c]
                .iter()
                .map(|m| {
                    let e: f64 = rng.sample(StandardNormal);
                    m + mix.sigma * e
                })
                .collect()
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    let params = true_params(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let genuine = draw(&params.genuine, spec.n_per_class, &mut rng);
    let impostor = draw(&params.impostor, spec.n_per_class, &mut rng);
    Ok(SynthData {
        genuine,
        impostor,
        params,
    })
}

/// `log P0(z) − log P1(z)` under the generating mixtures.
pub fn analytic_log_lr(params: &TrueParams, z: &[f64]) -> f64 {
    params.genuine.log_density(z) - params.impostor.log_density(z)
}

/// Closed-form AUC `Φ(Δ / (σ√2))` of the Bayes-optimal score. Only defined
/// for one component per class.
pub fn bayes_auc(spec: &SynthSpec) -> Option<f64> {
    (spec.mixture_components_per_class == 1).then(|| {
        normal_cdf(spec.mean_separation / (spec.covariance_scale * std::f64::consts::SQRT_2))
    })
}

/// Options for turning synthetic vectors into a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestOptions {
    pub regime: PromptRegime,
    /// Verdicts are Uncertain when the true posterior is within this
    /// distance of 0.5.
    pub uncertain_band: f64,
    pub id_prefix: String,
}

impl Default for ManifestOptions {
    fn default() -> Self {
        Self {
            regime: PromptRegime::NoScore,
            uncertain_band: 0.05,
            id_prefix: "synth".into(),
        }
    }
}

/// Embedding-bearing manifest for the synthetic vectors.
///
/// Each record gets a simulated verdict: Uncertain inside the band around
/// posterior 0.5, otherwise Match with probability equal to the true
/// posterior. The explanation is the bare verdict line.
pub fn to_manifest(
    data: &SynthData,
    spec: &SynthSpec,
    options: &ManifestOptions,
) -> Result<Manifest, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let labelled = data
        .genuine
        .iter()
        .map(|v| (PairLabel::Genuine, v))
        .chain(data.impostor.iter().map(|v| (PairLabel::Impostor, v)));
    let mut records = Vec::with_capacity(data.genuine.len() + data.impostor.len());
    for (i, (label, v)) in labelled.enumerate() {
        let posterior = sigmoid(analytic_log_lr(&data.params, v));
        let u: f64 = rng.random();
        let verdict = if (posterior - 0.5).abs() < options.uncertain_band {
            Verdict::Uncertain
        } else if u < posterior {
            Verdict::Match
        } else {
            Verdict::NonMatch
        };
        let id = format!("{}-{:06}", options.id_prefix, i);
        let mut r = PairRecord::new(
            id.clone(),
            format!("{id}-a"),
            format!("{id}-b"),
            label,
            options.regime,
        );
        r.explanation = Some(format!("Match Verdict: {}", verdict_word(verdict)));
        r.verdict = Some(verdict);
        r.embedding = Some(
            EmbeddingVector::new(v.clone(), SYNTH_PROVIDER_TAG)
                .expect("synthetic vectors are finite and non-empty"),
        );
        records.push(r);
    }
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "synth_spec".to_string(),
        serde_json::to_value(spec).expect("spec serializes"),
    );
    Ok(Manifest::new(records, metadata)?)
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Match => "Match",
        Verdict::NonMatch => "Non-match",
        Verdict::Uncertain => "Uncertain",
    }
}
