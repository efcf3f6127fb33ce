//! Deterministic 2-D coordinates for scatter plots, from the top two
//! principal directions.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::data::PairLabel;
use crate::pca::{fit_pca_components, PcaError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub label: PairLabel,
}

pub fn project_2d<R: AsRef<[f64]>>(
    vectors: &[R],
    labels: &[PairLabel],
) -> Result<Vec<ProjectedPoint>, MetricsError> {
    if vectors.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            vectors: vectors.len(),
            labels: labels.len(),
        });
    }
    if vectors.len() < 3 {
        return Err(MetricsError::TooFewPoints {
            needed: 3,
            found: vectors.len(),
        });
    }
    let model = match fit_pca_components(vectors, 2) {
        Ok(m) => m,
        Err(PcaError::ZeroVariance) => {
            return Ok(labels
                .iter()
                .map(|&label| ProjectedPoint { x: 0.0, y: 0.0, label })
                .collect())
        }
        Err(PcaError::DimensionMismatch { index, expected, found }) => {
            return Err(MetricsError::DimensionMismatch { index, expected, found })
        }
        Err(e) => return Err(e.into()),
    };
    let z = model.transform_rows(vectors)?;
    Ok((0..z.nrows())
        .map(|i| ProjectedPoint {
            x: z[(i, 0)],
            y: if z.ncols() > 1 { z[(i, 1)] } else { 0.0 },
            label: labels[i],
        })
        .collect())
}
