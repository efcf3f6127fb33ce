//! 3×2 verdict confusion matrices: ground truth rows (genuine, impostor)
//! against verdict columns (match, non-match, uncertain), row-normalized.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::data::{PairLabel, Verdict};

pub const ROWS: [PairLabel; 2] = [PairLabel::Genuine, PairLabel::Impostor];
pub const COLUMNS: [Verdict; 3] = [Verdict::Match, Verdict::NonMatch, Verdict::Uncertain];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix3x2 {
    pub counts: [[u64; 3]; 2],
    /// Each non-empty row sums to 1; an empty row is all zeros.
    pub proportions: [[f64; 3]; 2],
    pub empty_rows: [bool; 2],
}

fn row_index(label: PairLabel) -> Option<usize> {
    match label {
        PairLabel::Genuine => Some(0),
        PairLabel::Impostor => Some(1),
        PairLabel::Unknown => None,
    }
}

fn column_index(verdict: Verdict) -> usize {
    match verdict {
        Verdict::Match => 0,
        Verdict::NonMatch => 1,
        Verdict::Uncertain => 2,
    }
}

impl ConfusionMatrix3x2 {
    pub fn from_counts(counts: [[u64; 3]; 2]) -> Self {
        let mut proportions = [[0.0; 3]; 2];
        let mut empty_rows = [false; 2];
        for r in 0..2 {
            let total: u64 = counts[r].iter().sum();
            if total == 0 {
                empty_rows[r] = true;
                continue;
            }
            for c in 0..3 {
                proportions[r][c] = counts[r][c] as f64 / total as f64;
            }
        }
        Self {
            counts,
            proportions,
            empty_rows,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn count(&self, label: PairLabel, verdict: Verdict) -> u64 {
        row_index(label).map_or(0, |r| self.counts[r][column_index(verdict)])
    }

    pub fn proportion(&self, label: PairLabel, verdict: Verdict) -> f64 {
        row_index(label).map_or(0.0, |r| self.proportions[r][column_index(verdict)])
    }

    /// Percentage with one decimal, e.g. `"98.6%"`.
    pub fn display(&self, label: PairLabel, verdict: Verdict) -> String {
        format!("{:.1}%", 100.0 * self.proportion(label, verdict))
    }

    /// Fraction of known-label records whose verdict agrees with the label.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / total as f64
    }
}

pub fn confusion(records: &[(PairLabel, Verdict)]) -> Result<ConfusionMatrix3x2, MetricsError> {
    let mut counts = [[0u64; 3]; 2];
    for (index, (label, verdict)) in records.iter().enumerate() {
        let r = row_index(*label).ok_or(MetricsError::UnknownLabel { index })?;
        counts[r][column_index(*verdict)] += 1;
    }
    Ok(ConfusionMatrix3x2::from_counts(counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_genuine_matches() {
        let m = confusion(&[(PairLabel::Genuine, Verdict::Match); 2]).unwrap();
        assert_eq!(m.proportions[0], [1.0, 0.0, 0.0]);
        assert_eq!(m.empty_rows, [false, true]);
        assert_eq!(m.proportions[1], [0.0; 3]);
    }

    #[test]
    fn unknown_label_rejected() {
        let r = confusion(&[(PairLabel::Genuine, Verdict::Match), (PairLabel::Unknown, Verdict::Match)]);
        assert_eq!(r, Err(MetricsError::UnknownLabel { index: 1 }));
    }

    #[test]
    fn display_strings() {
        let m = ConfusionMatrix3x2::from_counts([[751, 230, 19], [9, 986, 5]]);
        assert_eq!(m.display(PairLabel::Genuine, Verdict::Match), "75.1%");
        assert_eq!(m.display(PairLabel::Impostor, Verdict::NonMatch), "98.6%");
        assert_eq!(m.display(PairLabel::Impostor, Verdict::Uncertain), "0.5%");
        assert_eq!(m.count(PairLabel::Genuine, Verdict::Uncertain), 19);
        assert!((m.accuracy() - 1737.0 / 2000.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rows_normalize_and_nothing_is_lost(
            raw in proptest::collection::vec((0u8..2, 0u8..3), 0..300)
        ) {
            let records: Vec<(PairLabel, Verdict)> = raw
                .iter()
                .map(|&(l, v)| (ROWS[l as usize], COLUMNS[v as usize]))
                .collect();
            let m = confusion(&records).unwrap();
            prop_assert_eq!(m.total(), records.len() as u64);
            for r in 0..2 {
                let s: f64 = m.proportions[r].iter().sum();
                if m.empty_rows[r] {
                    prop_assert_eq!(s, 0.0);
                } else {
                    prop_assert!((s - 1.0).abs() <= 1e-9);
                }
            }
        }
    }
}
