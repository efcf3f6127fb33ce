//! Variance-targeted principal component analysis.
//!
//! The model is fitted by a singular value decomposition of the centered
//! data matrix and keeps the smallest number of leading components whose
//! cumulative explained-variance ratio reaches the target. Each component's
//! sign is fixed so that its largest-magnitude entry is positive, which
//! makes fitting deterministic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingVector;

/// Retained-variance target used when none is specified.
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.97;

/// Cumulative ratios within this distance of the target count as reaching it.
const TARGET_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("PCA needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {index} contains a non-finite value")]
    NonFinite { index: usize },
    #[error("input has zero total variance")]
    ZeroVariance,
    #[error("variance target {0} must lie in (0, 1]")]
    InvalidTarget(f64),
    #[error("component count must be at least 1")]
    NoComponents,
    #[error("input vector has dimension {found}, model expects {expected}")]
    InputDimension { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// A fitted, frozen PCA transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PcaWire", into = "PcaWire")]
pub struct PcaModel {
    mean: DVector<f64>,
    /// k×d, rows orthonormal.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    discarded_variance_ratio: f64,
    retained_variance_target: f64,
}

struct Decomposition {
    mean: DVector<f64>,
    /// All right singular vectors, sign-fixed, descending variance.
    axes: DMatrix<f64>,
    variances: Vec<f64>,
    total: f64,
    rank: usize,
}

fn to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>, PcaError> {
    if rows.len() < 2 {
        return Err(PcaError::TooFewSamples(rows.len()));
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(PcaError::DimensionMismatch {
            index: 0,
            expected: 1,
            found: 0,
        });
    }
    for (index, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != d {
            return Err(PcaError::DimensionMismatch {
                index,
                expected: d,
                found: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(PcaError::NonFinite { index });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i].as_ref()[j]))
}

fn decompose(data: &DMatrix<f64>) -> Result<Decomposition, PcaError> {
    let (n, d) = data.shape();
    let mean = DVector::from_fn(d, |j, _| data.column(j).mean());
    let mut centered = data.clone();
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let total_ss: f64 = centered.iter().map(|v| v * v).sum();
    if total_ss == 0.0 {
        return Err(PcaError::ZeroVariance);
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut axes = DMatrix::zeros(order.len(), d);
    let mut variances = Vec::with_capacity(order.len());
    for (row, &src) in order.iter().enumerate() {
        let mut axis = v_t.row(src).clone_owned();
        let (imax, _) = axis
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        if axis[imax] < 0.0 {
            axis.neg_mut();
        }
        axes.set_row(row, &axis);
        variances.push(sv[src] * sv[src] / (n - 1) as f64);
    }
    let total = total_ss / (n - 1) as f64;
    let sv_max = sv.max();
    let cutoff = sv_max * (n.max(d) as f64) * f64::EPSILON;
    let rank = order.iter().filter(|&&i| sv[i] > cutoff).count().max(1);
    Ok(Decomposition {
        mean,
        axes,
        variances,
        total,
        rank,
    })
}

impl PcaModel {
    fn from_decomposition(dec: Decomposition, k: usize, target: f64) -> Self {
        let components = dec.axes.rows(0, k).clone_owned();
        let explained_variance = dec.variances[..k].to_vec();
        let explained_variance_ratio: Vec<f64> =
            explained_variance.iter().map(|v| v / dec.total).collect();
        let discarded_variance_ratio = dec.variances[k..].iter().map(|v| v / dec.total).sum::<f64>();
        Self {
            mean: dec.mean,
            components,
            explained_variance,
            explained_variance_ratio,
            discarded_variance_ratio,
            retained_variance_target: target,
        }
    }

    /// Input dimension.
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    /// Retained dimension.
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    /// Per-component variance (eigenvalues of the sample covariance).
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_variance_ratio(&self) -> &[f64] {
        &self.explained_variance_ratio
    }

    /// Share of total variance in the dropped components.
    pub fn discarded_variance_ratio(&self) -> f64 {
        self.discarded_variance_ratio
    }

    pub fn retained_variance(&self) -> f64 {
        self.explained_variance_ratio.iter().sum()
    }

    pub fn retained_variance_target(&self) -> f64 {
        self.retained_variance_target
    }

    /// `z = components · (x − mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>, PcaError> {
        if x.len() != self.d() {
            return Err(PcaError::InputDimension {
                expected: self.d(),
                found: x.len(),
            });
        }
        let centered = DVector::from_fn(x.len(), |i, _| x[i] - self.mean[i]);
        Ok(&self.components * centered)
    }

    pub fn transform_embedding(&self, x: &EmbeddingVector) -> Result<DVector<f64>, PcaError> {
        self.transform(x.values())
    }

    /// Transforms every row; returns an n×k matrix.
    pub fn transform_rows<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<DMatrix<f64>, PcaError> {
        let mut out = DMatrix::zeros(rows.len(), self.k());
        for (i, r) in rows.iter().enumerate() {
            let z = self.transform(r.as_ref())?;
            out.set_row(i, &z.transpose());
        }
        Ok(out)
    }

    fn check(&self) -> Result<(), String> {
        let (k, d) = self.components.shape();
        if k == 0 || k > d {
            return Err(format!("retained dimension {k} must be in 1..={d}"));
        }
        if self.mean.len() != d {
            return Err(format!("mean has length {}, components have {d} columns", self.mean.len()));
        }
        if self.explained_variance.len() != k || self.explained_variance_ratio.len() != k {
            return Err("variance vectors must have one entry per component".into());
        }
        if !(self.retained_variance_target > 0.0 && self.retained_variance_target <= 1.0) {
            return Err(format!("retained_variance_target {} outside (0, 1]", self.retained_variance_target));
        }
        let gram = &self.components * self.components.transpose();
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - want).abs() > 1e-8 {
                    return Err(format!("component rows {i} and {j} are not orthonormal"));
                }
            }
        }
        let all = self.retained_variance() + self.discarded_variance_ratio;
        if (all - 1.0).abs() > 1e-8 {
            return Err(format!("variance ratios sum to {all}, expected 1"));
        }
        if self.mean.iter().chain(self.components.iter()).any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(())
    }
}

/// Fits PCA keeping the smallest `k` whose cumulative explained-variance
/// ratio reaches `variance_target`.
pub fn fit_pca<R: AsRef<[f64]>>(rows: &[R], variance_target: f64) -> Result<PcaModel, PcaError> {
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(PcaError::InvalidTarget(variance_target));
    }
    let data = to_matrix(rows)?;
    let dec = decompose(&data)?;
    let mut cumulative = 0.0;
    let mut k = dec.rank;
    for (i, v) in dec.variances.iter().enumerate().take(dec.rank) {
        cumulative += v / dec.total;
        if cumulative >= variance_target - TARGET_SLACK {
            k = i + 1;
            break;
        }
    }
    Ok(PcaModel::from_decomposition(dec, k, variance_target))
}

/// Fits PCA on embedding vectors.
pub fn fit_pca_embeddings(
    vectors: &[EmbeddingVector],
    variance_target: f64,
) -> Result<PcaModel, PcaError> {
    let rows: Vec<&[f64]> = vectors.iter().map(EmbeddingVector::values).collect();
    fit_pca(&rows, variance_target)
}

/// Fits PCA keeping exactly `min(n_components, numerical rank)` components.
pub fn fit_pca_components<R: AsRef<[f64]>>(
    rows: &[R],
    n_components: usize,
) -> Result<PcaModel, PcaError> {
    if n_components == 0 {
        return Err(PcaError::NoComponents);
    }
    let data = to_matrix(rows)?;
    let dec = decompose(&data)?;
    let k = n_components.min(dec.rank);
    let retained: f64 = dec.variances[..k].iter().map(|v| v / dec.total).sum();
    Ok(PcaModel::from_decomposition(dec, k, retained.clamp(f64::MIN_POSITIVE, 1.0)))
}

#[derive(Serialize, Deserialize)]
struct PcaWire {
    d: usize,
    k: usize,
    retained_variance_target: f64,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    explained_variance: Vec<f64>,
    explained_variance_ratio: Vec<f64>,
    discarded_variance_ratio: f64,
}

impl From<PcaModel> for PcaWire {
    fn from(m: PcaModel) -> Self {
        PcaWire {
            d: m.d(),
            k: m.k(),
            retained_variance_target: m.retained_variance_target,
            mean: m.mean.iter().copied().collect(),
            components: m
                .components
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            explained_variance: m.explained_variance,
            explained_variance_ratio: m.explained_variance_ratio,
            discarded_variance_ratio: m.discarded_variance_ratio,
        }
    }
}

impl TryFrom<PcaWire> for PcaModel {
    type Error = PcaError;

    fn try_from(w: PcaWire) -> Result<Self, PcaError> {
        if w.components.len() != w.k || w.mean.len() != w.d {
            return Err(PcaError::InvalidModel(format!(
                "declared k={} d={} but found {} components and mean of length {}",
                w.k,
                w.d,
                w.components.len(),
                w.mean.len()
            )));
        }
        if let Some(i) = w.components.iter().position(|r| r.len() != w.d) {
            return Err(PcaError::InvalidModel(format!("component row {i} has wrong length")));
        }
        let model = PcaModel {
            mean: DVector::from_vec(w.mean),
            components: DMatrix::from_fn(w.k, w.d, |i, j| w.components[i][j]),
            explained_variance: w.explained_variance,
            explained_variance_ratio: w.explained_variance_ratio,
            discarded_variance_ratio: w.discarded_variance_ratio,
            retained_variance_target: w.retained_variance_target,
        };
        model.check().map_err(PcaError::InvalidModel)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn four_points() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 0.1], vec![0.0, -0.1]]
    }

    /// Sample covariance of the rows of `m`.
    fn covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows();
        let mean = m.row_mean();
        let mut c = m.clone();
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        c.transpose() * &c / (n - 1) as f64
    }

    fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // anisotropic: column j scaled by 1/(j+1)
        (0..n)
            .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) / (j + 1) as f64).collect())
            .collect()
    }

    #[test]
    fn four_point_example() {
        // covariance diag(2/3, 0.02/3): ratio 0.5 / (0.5 + 0.005)
        let m = fit_pca(&four_points(), 0.97).unwrap();
        assert_eq!(m.k(), 1);
        assert!((m.explained_variance_ratio()[0] - 0.5 / 0.505).abs() < 1e-12);
        assert!((m.explained_variance_ratio()[0] - 0.9901).abs() < 1e-4);
        assert!((m.components()[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_in_three_dimensions() {
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                let t = i as f64 - 2.0;
                vec![t, 2.0 * t, -t]
            })
            .collect();
        let m = fit_pca(&rows, 0.97).unwrap();
        assert_eq!(m.k(), 1);
        assert!((m.explained_variance_ratio()[0] - 1.0).abs() < 1e-12);
        let m = fit_pca(&rows, 1.0).unwrap();
        assert_eq!(m.k(), 1);
    }

    #[test]
    fn transform_centering_and_axes() {
        let rows = random_rows(3, 50, 4);
        let m = fit_pca(&rows, 1.0).unwrap();
        let z = m.transform(m.mean().as_slice()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let x: Vec<f64> = (0..m.d()).map(|j| m.mean()[j] + m.components()[(0, j)]).collect();
        let z = m.transform(&x).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert!(z.iter().skip(1).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn transformed_training_data_is_decorrelated() {
        let rows = random_rows(7, 200, 6);
        let m = fit_pca(&rows, 0.97).unwrap();
        let z = m.transform_rows(&rows).unwrap();
        let c = covariance(&z);
        for i in 0..m.k() {
            assert!((c[(i, i)] - m.explained_variance()[i]).abs() <= 1e-8 * m.explained_variance()[i]);
            for j in 0..m.k() {
                if i != j {
                    assert!(c[(i, j)].abs() < 1e-8 * c[(i, i)].max(c[(j, j)]));
                }
            }
        }
        assert!(m.retained_variance() >= 0.97);
        assert!((m.retained_variance() + m.discarded_variance_ratio() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn errors() {
        assert_eq!(fit_pca(&[vec![1.0]], 0.9), Err(PcaError::TooFewSamples(1)));
        assert!(matches!(
            fit_pca(&[vec![1.0, 2.0], vec![1.0]], 0.9),
            Err(PcaError::DimensionMismatch { index: 1, .. })
        ));
        assert_eq!(
            fit_pca(&[vec![1.0, 2.0], vec![1.0, 2.0]], 0.9),
            Err(PcaError::ZeroVariance)
        );
        assert_eq!(fit_pca(&four_points(), 0.0), Err(PcaError::InvalidTarget(0.0)));
        assert_eq!(
            fit_pca(&[vec![f64::NAN, 2.0], vec![1.0, 2.0]], 0.9),
            Err(PcaError::NonFinite { index: 0 })
        );
        let m = fit_pca(&four_points(), 0.9).unwrap();
        assert!(matches!(m.transform(&[1.0]), Err(PcaError::InputDimension { .. })));
    }

    #[test]
    fn more_dimensions_than_samples() {
        let rows = random_rows(11, 5, 20);
        let m = fit_pca(&rows, 0.97).unwrap();
        assert!(m.k() <= 4);
        assert!(m.retained_variance() >= 0.97 - 1e-12);
        assert!((m.retained_variance() + m.discarded_variance_ratio() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fixed_component_count_caps_at_rank() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 0.5 * i as f64]).collect();
        let m = fit_pca_components(&rows, 2).unwrap();
        assert_eq!(m.k(), 1);
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let m = fit_pca(&random_rows(5, 40, 5), 0.97).unwrap();
        let s = crate::json::to_line(&m).unwrap();
        let back: PcaModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["components"][0][0] = serde_json::json!(5.0);
        assert!(serde_json::from_value::<PcaModel>(v).is_err());
    }

    proptest::proptest! {
        #[test]
        fn raising_target_never_decreases_k(seed in 0u64..500, t1 in 0.05f64..1.0, t2 in 0.05f64..1.0) {
            let rows = random_rows(seed, 30, 5);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = fit_pca(&rows, lo).unwrap();
            let b = fit_pca(&rows, hi).unwrap();
            proptest::prop_assert!(a.k() <= b.k());
            proptest::prop_assert!(b.retained_variance() >= hi - 1e-12);
        }

        #[test]
        fn row_order_does_not_matter(seed in 0u64..500) {
            let rows = random_rows(seed, 25, 4);
            let mut shuffled = rows.clone();
            shuffled.reverse();
            shuffled.swap(0, 7);
            let a = fit_pca(&rows, 0.97).unwrap();
            let b = fit_pca(&shuffled, 0.97).unwrap();
            proptest::prop_assert_eq!(a.k(), b.k());
            for (x, y) in a.components().iter().zip(b.components().iter()) {
                proptest::prop_assert!((x - y).abs() < 1e-8);
            }
        }
    }
}
