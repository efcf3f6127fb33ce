//! Likelihood-ratio scoring.
//!
//! For a reduced embedding `z`, `log Λ = log P0(z) − log P1(z)` and the
//! bounded score is `S = Λ / (1 + Λ) = σ(log Λ)`. Everything is computed in
//! log space; `Λ` itself is never formed. The logistic is evaluated on
//! `log Λ` clamped to `±700`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::ModelBundle;
use crate::data::{Manifest, PairLabel, PromptRegime, Verdict};
use crate::embedding::{Embedder, EmbeddingVector};
use crate::gmm::{GmmError, GmmModel, Hypothesis};
use crate::json::{self, extended_f64};
use crate::math::sigmoid;
use crate::pca::PcaError;

/// `|log Λ|` bound applied before the logistic map.
pub const LOG_LR_CLAMP: f64 = 700.0;

#[derive(Debug, Error)]
pub enum LrError {
    #[error("expected an {expected:?} model in that position, got {found:?}")]
    RoleMismatch {
        expected: Hypothesis,
        found: Hypothesis,
    },
    #[error("H0 model has dimension {h0}, H1 model has {h1}")]
    ModelDimensions { h0: usize, h1: usize },
    #[error(transparent)]
    Density(#[from] GmmError),
    #[error(transparent)]
    Projection(#[from] PcaError),
    #[error("embedding space mismatch for {context}: bundle was trained on {bundle:?}, got {found:?}")]
    ProviderMismatch {
        context: String,
        bundle: String,
        found: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("score file line {line}: {message}")]
    ScoreFile { line: usize, message: String },
}

/// Densities, log ratio and bounded score for one explanation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    #[serde(with = "extended_f64")]
    pub log_p0: f64,
    #[serde(with = "extended_f64")]
    pub log_p1: f64,
    #[serde(with = "extended_f64")]
    pub log_lr: f64,
    pub s_expl: f64,
}

/// `σ(clamp(log_lr, ±700))`.
pub fn bounded_score(log_lr: f64) -> f64 {
    sigmoid(log_lr.clamp(-LOG_LR_CLAMP, LOG_LR_CLAMP))
}

impl LrResult {
    pub fn from_log_densities(log_p0: f64, log_p1: f64) -> Self {
        let log_lr = log_p0 - log_p1;
        Self {
            log_p0,
            log_p1,
            log_lr,
            s_expl: bounded_score(log_lr),
        }
    }

    /// `Λ` itself; overflows to `+∞` for large ratios.
    pub fn likelihood_ratio(&self) -> f64 {
        self.log_lr.exp()
    }
}

fn check_roles(h0: &GmmModel, h1: &GmmModel) -> Result<(), LrError> {
    if h0.hypothesis() != Hypothesis::H0 {
        return Err(LrError::RoleMismatch {
            expected: Hypothesis::H0,
            found: h0.hypothesis(),
        });
    }
    if h1.hypothesis() != Hypothesis::H1 {
        return Err(LrError::RoleMismatch {
            expected: Hypothesis::H1,
            found: h1.hypothesis(),
        });
    }
    if h0.dim() != h1.dim() {
        return Err(LrError::ModelDimensions {
            h0: h0.dim(),
            h1: h1.dim(),
        });
    }
    Ok(())
}

/// Scores a reduced vector against the genuine and impostor mixtures.
pub fn score_pair(genuine: &GmmModel, impostor: &GmmModel, z: &[f64]) -> Result<LrResult, LrError> {
    check_roles(genuine, impostor)?;
    let log_p0 = genuine.log_density(z)?;
    let log_p1 = impostor.log_density(z)?;
    Ok(LrResult::from_log_densities(log_p0, log_p1))
}

/// Projects an embedding with the bundle's PCA and scores it.
pub fn score_embedding(bundle: &ModelBundle, x: &EmbeddingVector) -> Result<LrResult, LrError> {
    if x.provider_tag() != bundle.provider_tag {
        return Err(LrError::ProviderMismatch {
            context: "embedding".into(),
            bundle: bundle.provider_tag.clone(),
            found: x.provider_tag().to_string(),
        });
    }
    let z = bundle.pca.transform(x.values())?;
    score_pair(&bundle.gmm_h0, &bundle.gmm_h1, z.as_slice())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair_id: String,
    pub label: PairLabel,
    pub regime: PromptRegime,
    pub lr: LrResult,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnscoredRecord {
    pub pair_id: String,
    pub reason: String,
}

/// Outcome of scoring a manifest. Every record lands in exactly one list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreReport {
    /// In manifest order.
    pub scored: Vec<ScoredPair>,
    /// Records with neither explanation text nor an embedding, or text but
    /// no embedder to encode it.
    pub skipped: Vec<UnscoredRecord>,
    /// Records whose embedding request failed.
    pub failed: Vec<UnscoredRecord>,
    /// Number of embeddings computed by the embedder.
    pub embedded: usize,
}

/// Scores every record of a test manifest.
///
/// Precomputed embeddings are used as-is; records with only explanation
/// text are embedded through `embedder`. Uncertain verdicts are scored like
/// any other record. A precomputed embedding or an embedder from a
/// different embedding space than the bundle is a hard error.
pub fn score_manifest(
    bundle: &ModelBundle,
    manifest: &Manifest,
    embedder: Option<&dyn Embedder>,
) -> Result<ScoreReport, LrError> {
    for r in manifest.records() {
        if let Some(e) = &r.embedding {
            if e.provider_tag() != bundle.provider_tag {
                return Err(LrError::ProviderMismatch {
                    context: format!("record {:?}", r.pair_id),
                    bundle: bundle.provider_tag.clone(),
                    found: e.provider_tag().to_string(),
                });
            }
        }
    }

    let needs: Vec<usize> = manifest
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.embedding.is_none() && r.explanation.as_deref().is_some_and(|t| !t.trim().is_empty())
        })
        .map(|(i, _)| i)
        .collect();

    let mut computed: Vec<Option<Result<EmbeddingVector, String>>> =
        vec![None; manifest.len()];
    let mut report = ScoreReport::default();
    if let (Some(emb), false) = (embedder, needs.is_empty()) {
        if emb.provider_tag() != bundle.provider_tag {
            return Err(LrError::ProviderMismatch {
                context: "embedder".into(),
                bundle: bundle.provider_tag.clone(),
                found: emb.provider_tag().to_string(),
            });
        }
        let texts: Vec<&str> = needs
            .iter()
            .map(|&i| manifest.records()[i].explanation.as_deref().unwrap_or_default())
            .collect();
        let outcomes = emb.embed_many(&texts);
        for (&i, outcome) in needs.iter().zip(outcomes) {
            computed[i] = Some(outcome.map_err(|e| e.to_string()));
        }
        report.embedded = needs.len();
    }

    for (i, r) in manifest.records().iter().enumerate() {
        let embedding = match (&r.embedding, computed[i].take()) {
            (Some(e), _) => e.clone(),
            (None, Some(Ok(e))) => {
                if e.provider_tag() != bundle.provider_tag {
                    return Err(LrError::ProviderMismatch {
                        context: format!("record {:?}", r.pair_id),
                        bundle: bundle.provider_tag.clone(),
                        found: e.provider_tag().to_string(),
                    });
                }
                e
            }
            (None, Some(Err(message))) => {
                report.failed.push(UnscoredRecord {
                    pair_id: r.pair_id.clone(),
                    reason: message,
                });
                continue;
            }
            (None, None) => {
                let reason = if r.explanation.as_deref().is_some_and(|t| !t.trim().is_empty()) {
                    "explanation present but no embedder configured"
                } else {
                    "record has neither explanation text nor an embedding"
                };
                report.skipped.push(UnscoredRecord {
                    pair_id: r.pair_id.clone(),
                    reason: reason.into(),
                });
                continue;
            }
        };
        let lr = score_embedding(bundle, &embedding)?;
        report.scored.push(ScoredPair {
            pair_id: r.pair_id.clone(),
            label: r.label,
            regime: r.regime,
            lr,
            verdict: r.effective_verdict().unwrap_or(Verdict::Uncertain),
        });
    }
    Ok(report)
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreLine {
    pub pair_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PairLabel>,
    pub regime: PromptRegime,
    #[serde(with = "extended_f64")]
    pub log_lr: f64,
    pub s_expl: f64,
    pub verdict: Verdict,
    #[serde(with = "extended_f64")]
    pub log_p0: f64,
    #[serde(with = "extended_f64")]
    pub log_p1: f64,
}

impl From<&ScoredPair> for ScoreLine {
    fn from(s: &ScoredPair) -> Self {
        ScoreLine {
            pair_id: s.pair_id.clone(),
            label: s.label.is_known().then_some(s.label),
            regime: s.regime,
            log_lr: s.lr.log_lr,
            s_expl: s.lr.s_expl,
            verdict: s.verdict,
            log_p0: s.lr.log_p0,
            log_p1: s.lr.log_p1,
        }
    }
}

pub fn serialize_scores(scored: &[ScoredPair]) -> Result<String, serde_json::Error> {
    let mut out = String::new();
    for s in scored {
        out.push_str(&json::to_line(&ScoreLine::from(s))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_score_file(path: impl AsRef<Path>, scored: &[ScoredPair]) -> Result<(), LrError> {
    let path = path.as_ref();
    let text = serialize_scores(scored).map_err(|e| LrError::ScoreFile {
        line: 0,
        message: e.to_string(),
    })?;
    std::fs::write(path, text).map_err(|source| LrError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_score_lines(text: &str) -> Result<Vec<ScoreLine>, LrError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LrError::ScoreFile {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_score_file(path: impl AsRef<Path>) -> Result<Vec<ScoreLine>, LrError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| LrError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_score_lines(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PairRecord;
    use crate::gmm::CovarianceKind;
    use crate::pca::fit_pca;
    use nalgebra::{DMatrix, DVector};
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn normal_1d(h: Hypothesis, mean: f64) -> GmmModel {
        GmmModel::new(
            h,
            CovarianceKind::Full,
            vec![1.0],
            vec![DVector::from_element(1, mean)],
            vec![DMatrix::identity(1, 1)],
        )
        .unwrap()
    }

    #[test]
    fn equal_evidence_point() {
        let r = LrResult::from_log_densities(-3.2, -3.2);
        assert_eq!(r.log_lr, 0.0);
        assert_eq!(r.s_expl, 0.5);
    }

    #[test]
    fn one_dimensional_hand_example() {
        // -(0.5-1)^2/2 + (0.5+1)^2/2 = -0.125 + 1.125
        let r = score_pair(&normal_1d(Hypothesis::H0, 1.0), &normal_1d(Hypothesis::H1, -1.0), &[0.5]).unwrap();
        assert!((r.log_lr - 1.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        assert!((r.s_expl - e / (1.0 + e)).abs() < 1e-12);
        assert!((r.s_expl - 0.731_059).abs() < 1e-6);
    }

    #[test]
    fn saturation_after_clamp() {
        let r = LrResult::from_log_densities(1e6, 0.0);
        assert_eq!(r.s_expl, 1.0);
        assert_eq!(r.log_lr, 1e6);
        let r = LrResult::from_log_densities(0.0, 1e6);
        assert_eq!(r.s_expl, 0.0);
        assert!(r.s_expl.is_finite());
    }

    #[test]
    fn role_mismatch_and_dimension_errors() {
        let a = normal_1d(Hypothesis::H0, 0.0);
        assert!(matches!(
            score_pair(&a, &a, &[0.0]),
            Err(LrError::RoleMismatch { expected: Hypothesis::H1, .. })
        ));
        let b = normal_1d(Hypothesis::H1, 0.0);
        assert!(matches!(score_pair(&a, &b, &[0.0, 1.0]), Err(LrError::Density(_))));
    }

    #[test]
    fn swapping_models_is_exactly_antisymmetric() {
        let g = normal_1d(Hypothesis::H0, 0.3);
        let i = normal_1d(Hypothesis::H1, -1.7);
        for z in [-4.0, -0.2, 0.0, 0.9, 13.0] {
            let a = score_pair(&g, &i, &[z]).unwrap();
            let b = score_pair(
                &i.clone().with_hypothesis(Hypothesis::H0),
                &g.clone().with_hypothesis(Hypothesis::H1),
                &[z],
            )
            .unwrap();
            assert_eq!(b.log_lr, -a.log_lr);
            assert_eq!(b.s_expl, 1.0 - a.s_expl);
        }
    }

    struct CountingEmbedder {
        calls: AtomicUsize,
        tag: String,
    }

    impl Embedder for CountingEmbedder {
        fn provider_tag(&self) -> &str {
            &self.tag
        }

        fn embed(&self, text: &str) -> Result<EmbeddingVector, crate::embedding::EmbedError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if text.contains("fail") {
                return Err("simulated outage".into());
            }
            let v = if text.contains("Match Verdict: Match") { 1.0 } else { -1.0 };
            Ok(EmbeddingVector::new(vec![v, 0.1 * text.len() as f64], self.tag.clone()).unwrap())
        }
    }

    fn toy_bundle(tag: &str) -> ModelBundle {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 2) as f64 * 2.0 - 1.0, 0.01 * i as f64]).collect();
        let pca = fit_pca(&rows, 0.5).unwrap();
        assert_eq!(pca.k(), 1);
        let h0 = normal_1d(Hypothesis::H0, pca.transform(&[1.0, 0.2]).unwrap()[0]);
        let h1 = normal_1d(Hypothesis::H1, pca.transform(&[-1.0, 0.2]).unwrap()[0]);
        ModelBundle::new(tag, pca, h0, h1, BTreeMap::new()).unwrap()
    }

    fn record(id: &str, text: Option<&str>, emb: Option<Vec<f64>>, tag: &str) -> PairRecord {
        let mut r = PairRecord::new(id, "a", "b", PairLabel::Genuine, PromptRegime::NoScore);
        r.explanation = text.map(String::from);
        r.embedding = emb.map(|v| EmbeddingVector::new(v, tag).unwrap());
        r
    }

    #[test]
    fn precomputed_embeddings_need_no_embedder_calls() {
        let b = toy_bundle("t");
        let m = Manifest::new(
            vec![record("p1", None, Some(vec![1.0, 0.0]), "t"), record("p2", None, Some(vec![-1.0, 0.0]), "t")],
            BTreeMap::new(),
        )
        .unwrap();
        let e = CountingEmbedder { calls: AtomicUsize::new(0), tag: "t".into() };
        let rep = score_manifest(&b, &m, Some(&e)).unwrap();
        assert_eq!(e.calls.load(Ordering::SeqCst), 0);
        assert_eq!(rep.embedded, 0);
        assert_eq!(rep.scored.len(), 2);
        assert!(rep.scored[0].lr.log_lr > 0.0 && rep.scored[1].lr.log_lr < 0.0);
        assert_eq!(rep.scored[0].verdict, Verdict::Uncertain);
    }

    #[test]
    fn every_record_is_accounted_for() {
        let b = toy_bundle("t");
        let m = Manifest::new(
            vec![
                record("text", Some("Match Verdict: Match"), None, "t"),
                record("empty", None, None, "t"),
                record("boom", Some("fail please"), None, "t"),
                record("uncertain", Some("Match Verdict: uncertain"), None, "t"),
            ],
            BTreeMap::new(),
        )
        .unwrap();
        let e = CountingEmbedder { calls: AtomicUsize::new(0), tag: "t".into() };
        let rep = score_manifest(&b, &m, Some(&e)).unwrap();
        let ids: Vec<&str> = rep.scored.iter().map(|s| s.pair_id.as_str()).collect();
        assert_eq!(ids, ["text", "uncertain"]);
        assert_eq!(rep.scored[0].verdict, Verdict::Match);
        assert_eq!(rep.scored[1].verdict, Verdict::Uncertain);
        assert_eq!(rep.skipped, vec![UnscoredRecord { pair_id: "empty".into(), reason: "record has neither explanation text nor an embedding".into() }]);
        assert_eq!(rep.failed.len(), 1);
        assert_eq!(rep.failed[0].pair_id, "boom");
        assert_eq!(rep.embedded, 3);

        let no_embedder = score_manifest(&b, &m, None).unwrap();
        assert_eq!(no_embedder.scored.len(), 0);
        assert_eq!(no_embedder.skipped.len(), 4);
    }

    #[test]
    fn provider_mismatch_is_fatal() {
        let b = toy_bundle("t");
        let m = Manifest::new(vec![record("p", None, Some(vec![1.0, 0.0]), "other")], BTreeMap::new()).unwrap();
        assert!(matches!(score_manifest(&b, &m, None), Err(LrError::ProviderMismatch { .. })));
        let m = Manifest::new(vec![record("p", Some("x"), None, "t")], BTreeMap::new()).unwrap();
        let e = CountingEmbedder { calls: AtomicUsize::new(0), tag: "other".into() };
        assert!(matches!(score_manifest(&b, &m, Some(&e)), Err(LrError::ProviderMismatch { .. })));
        assert_eq!(e.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn score_file_round_trip() {
        let s = ScoredPair {
            pair_id: "p".into(),
            label: PairLabel::Unknown,
            regime: PromptRegime::ScorePlusDecision,
            lr: LrResult::from_log_densities(-1.25, -3.0),
            verdict: Verdict::NonMatch,
        };
        let text = serialize_scores(&[s.clone()]).unwrap();
        assert!(!text.contains("label"));
        let lines = parse_score_lines(&text).unwrap();
        assert_eq!(lines[0], ScoreLine::from(&s));
        assert_eq!(lines[0].log_lr, s.lr.log_lr);
        assert!(matches!(parse_score_lines("{}\n"), Err(LrError::ScoreFile { line: 1, .. })));
    }

    proptest::proptest! {
        #[test]
        fn score_is_logistic_of_log_lr(a in -2000.0f64..2000.0, b in -2000.0f64..2000.0) {
            let r = LrResult::from_log_densities(a, b);
            let x = r.log_lr.clamp(-LOG_LR_CLAMP, LOG_LR_CLAMP);
            let reference = 1.0 / (1.0 + (-x).exp());
            proptest::prop_assert!((r.s_expl - reference).abs() <= 1e-12);
            proptest::prop_assert!((0.0..=1.0).contains(&r.s_expl));
        }

        #[test]
        fn score_is_monotone_in_log_lr(x in -30.0f64..30.0, dx in 1e-6f64..10.0) {
            let lo = LrResult::from_log_densities(x, 0.0);
            let hi = LrResult::from_log_densities(x + dx, 0.0);
            proptest::prop_assert!(lo.s_expl < hi.s_expl);
        }
    }
}
