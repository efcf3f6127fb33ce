//! ROC curves over scores where higher means "more likely genuine".
//!
//! A pair is predicted to match when its score is `>=` the threshold. The
//! curve starts at an anchor with threshold `+∞` (nothing accepted) and
//! visits every distinct score in descending order, so it always ends at
//! `(1, 1)`.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::json::extended_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fmr: f64,
    pub tmr: f64,
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    /// Mann-Whitney estimate `P(g > i) + ½ P(g = i)`.
    pub auc: f64,
}

fn check(scores: &[f64], which: &'static str) -> Result<(), MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyScores(which));
    }
    if let Some(index) = scores.iter().position(|s| s.is_nan()) {
        return Err(MetricsError::NanScore { which, index });
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Number of elements of ascending `v` that are `>= t`.
fn count_at_least(v: &[f64], t: f64) -> usize {
    v.len() - v.partition_point(|&x| x < t)
}

pub fn roc_from_scores(genuine: &[f64], impostor: &[f64]) -> Result<RocCurve, MetricsError> {
    check(genuine, "genuine")?;
    check(impostor, "impostor")?;
    let g = sorted(genuine);
    let i = sorted(impostor);
    let (ng, ni) = (g.len() as f64, i.len() as f64);

    let mut thresholds: Vec<f64> = g.iter().chain(i.iter()).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut points = Vec::with_capacity(thresholds.len() + 1);
    points.push(RocPoint {
        fmr: 0.0,
        tmr: 0.0,
        threshold: f64::INFINITY,
    });
    for t in thresholds {
        points.push(RocPoint {
            fmr: count_at_least(&i, t) as f64 / ni,
            tmr: count_at_least(&g, t) as f64 / ng,
            threshold: t,
        });
    }

    // Twice the Mann-Whitney U, counted exactly in integers.
    let mut twice_u: u128 = 0;
    for &s in &g {
        let below = i.partition_point(|&x| x < s);
        let not_above = i.partition_point(|&x| x <= s);
        twice_u += 2 * below as u128 + (not_above - below) as u128;
    }
    let auc = twice_u as f64 / (2.0 * ng * ni);
    Ok(RocCurve { points, auc })
}

/// Largest TMR among curve points whose FMR does not exceed the target.
pub fn tmr_at_fmr(curve: &RocCurve, fmr_target: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.fmr <= fmr_target)
        .map(|p| p.tmr)
        .fold(0.0, f64::max)
}

/// Equal error rate: where FMR meets `1 − TMR`, interpolating linearly
/// between the two bracketing curve points.
pub fn eer(curve: &RocCurve) -> f64 {
    let gap = |p: &RocPoint| p.fmr - (1.0 - p.tmr);
    let mut prev = curve.points[0];
    for p in &curve.points {
        let d = gap(p);
        if d >= 0.0 {
            let d0 = gap(&prev);
            if d == 0.0 || d0 >= 0.0 {
                return p.fmr;
            }
            let t = -d0 / (d - d0);
            return prev.fmr + t * (p.fmr - prev.fmr);
        }
        prev = *p;
    }
    1.0
}
