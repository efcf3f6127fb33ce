//! Two-cluster separability indices for genuine vs impostor embeddings.
//!
//! All distances are Euclidean. The pairwise work is spread over points
//! with rayon; each point's sums are sequential and the per-point results
//! are reduced in input order, so reports are bit-reproducible.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::json::extended_f64;

/// The space the vectors were taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSpace {
    OriginalEmbedding,
    PcaReduced,
}

/// Formula used for each index; written into every report.
pub const DEFINITIONS: [(&str, &str); 5] = [
    (
        "silhouette",
        "mean over all points of (b - a) / max(a, b); a = mean distance to the other members of the own class, b = mean distance to the other class",
    ),
    (
        "davies_bouldin",
        "(S0 + S1) / M01; S_c = mean distance of class members to the class centroid, M01 = centroid distance",
    ),
    (
        "calinski_harabasz",
        "[sum_c n_c |mu_c - mu|^2 / (C - 1)] / [sum_c sum_i |x_i - mu_c|^2 / (n - C)], C = 2",
    ),
    (
        "inter_intra_ratio",
        "mean pairwise inter-class distance / mean pairwise intra-class distance pooled over both classes",
    ),
    (
        "fisher_ratio",
        "|mu0 - mu1|^2 / (tr(Sigma0) + tr(Sigma1)), Sigma_c = per-class sample covariance (n_c - 1 denominator)",
    ),
];

/// Degenerate denominators (zero scatter, coincident centroids) give `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub silhouette: f64,
    #[serde(with = "extended_f64")]
    pub davies_bouldin: f64,
    #[serde(with = "extended_f64")]
    pub calinski_harabasz: f64,
    #[serde(with = "extended_f64")]
    pub inter_intra_ratio: f64,
    #[serde(with = "extended_f64")]
    pub fisher_ratio: f64,
    pub space: EmbeddingSpace,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub dim: usize,
    pub definitions: BTreeMap<String, String>,
}

fn validate<R: AsRef<[f64]>>(
    vectors: &[R],
    class: &'static str,
    offset: usize,
    dim: usize,
) -> Result<(), MetricsError> {
    if vectors.len() < 2 {
        return Err(MetricsError::TooFewPerClass {
            class,
            found: vectors.len(),
        });
    }
    for (i, v) in vectors.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(MetricsError::DimensionMismatch {
                index: offset + i,
                expected: dim,
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricsError::NonFinite { index: offset + i });
        }
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn centroid(vectors: &[&[f64]], dim: usize) -> DVector<f64> {
    let mut c = DVector::zeros(dim);
    for v in vectors {
        for (acc, x) in c.iter_mut().zip(v.iter()) {
            *acc += x;
        }
    }
    c / vectors.len() as f64
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        // Both numerator and denominator vanish: no separation to report.
        0.0
    }
}

/// Computes all five indices for the genuine (class 0) and impostor
/// (class 1) clusters.
pub fn separability<R: AsRef<[f64]> + Sync>(
    genuine: &[R],
    impostor: &[R],
    space: EmbeddingSpace,
) -> Result<SeparabilityReport, MetricsError> {
    let dim = genuine.first().map_or(0, |v| v.as_ref().len());
    validate(genuine, "genuine", 0, dim)?;
    validate(impostor, "impostor", genuine.len(), dim)?;

    let points: Vec<(&[f64], usize)> = genuine
        .iter()
        .map(|v| (v.as_ref(), 0))
        .chain(impostor.iter().map(|v| (v.as_ref(), 1)))
        .collect();
    let sizes = [genuine.len(), impostor.len()];
    let n = points.len();

    // Per point: summed distance to own class and to the other class.
    let sums: Vec<(f64, f64)> = points
        .par_iter()
        .map(|&(x, c)| {
            let mut own = 0.0;
            let mut other = 0.0;
            for &(y, d) in &points {
                let dist = distance(x, y);
                if d == c {
                    own += dist;
                } else {
                    other += dist;
                }
            }
            (own, other)
        })
        .collect();

    let mut silhouette_sum = 0.0;
    let mut intra_total = 0.0;
    let mut inter_total = 0.0;
    for (&(_, c), &(own, other)) in points.iter().zip(&sums) {
        let a = own / (sizes[c] - 1) as f64;
        let b = other / sizes[1 - c] as f64;
        let m = a.max(b);
        if m > 0.0 {
            silhouette_sum += (b - a) / m;
        }
        intra_total += own;
        inter_total += other;
    }
    let silhouette = silhouette_sum / n as f64;
    let intra_pairs = (sizes[0] * (sizes[0] - 1) + sizes[1] * (sizes[1] - 1)) as f64;
    let inter_pairs = (2 * sizes[0] * sizes[1]) as f64;
    let inter_intra_ratio = ratio(inter_total / inter_pairs, intra_total / intra_pairs);

    let class_vectors: [Vec<&[f64]>; 2] = [
        genuine.iter().map(AsRef::as_ref).collect(),
        impostor.iter().map(AsRef::as_ref).collect(),
    ];
    let mu = [
        centroid(&class_vectors[0], dim),
        centroid(&class_vectors[1], dim),
    ];
    let overall = (&mu[0] * sizes[0] as f64 + &mu[1] * sizes[1] as f64) / n as f64;

    let mut mean_to_centroid = [0.0; 2];
    let mut scatter = [0.0; 2];
    for c in 0..2 {
        let centre = mu[c].as_slice();
        for v in &class_vectors[c] {
            let d = distance(v, centre);
            mean_to_centroid[c] += d;
            scatter[c] += d * d;
        }
        mean_to_centroid[c] /= sizes[c] as f64;
    }
    let centroid_gap = (&mu[0] - &mu[1]).norm();
    let davies_bouldin = ratio(mean_to_centroid[0] + mean_to_centroid[1], centroid_gap);

    let between: f64 = (0..2)
        .map(|c| sizes[c] as f64 * (&mu[c] - &overall).norm_squared())
        .sum();
    let within = scatter[0] + scatter[1];
    let calinski_harabasz = ratio(between, within / (n - 2) as f64);

    let traces = scatter[0] / (sizes[0] - 1) as f64 + scatter[1] / (sizes[1] - 1) as f64;
    let fisher_ratio = ratio(centroid_gap * centroid_gap, traces);

    Ok(SeparabilityReport {
        silhouette,
        davies_bouldin,
        calinski_harabasz,
        inter_intra_ratio,
        fisher_ratio,
        space,
        n_genuine: sizes[0],
        n_impostor: sizes[1],
        dim,
        definitions: DEFINITIONS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    })
}
