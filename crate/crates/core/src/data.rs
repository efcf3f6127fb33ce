//! Pair records, manifests and verdict extraction.
//!
//! A manifest is UTF-8 JSON Lines: an optional first line
//! `{"metadata": {...}}` followed by one pair record per line.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector};
use crate::json;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate pair_id {pair_id:?} (first seen on line {first_line})")]
    DuplicatePairId {
        pair_id: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: record {pair_id:?} is invalid: {reason}")]
    Invalid {
        line: usize,
        pair_id: String,
        reason: String,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Ground truth for a face pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    /// Same identity (hypothesis H0).
    Genuine,
    /// Different identities (hypothesis H1).
    Impostor,
    /// Withheld; legal only in test-time manifests.
    Unknown,
}

impl PairLabel {
    pub fn is_known(self) -> bool {
        self != PairLabel::Unknown
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Impostor => "impostor",
            PairLabel::Unknown => "unknown",
        }
    }
}

/// Verdict emitted by the explanation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "match")]
    Match,
    #[serde(rename = "non-match")]
    NonMatch,
    #[serde(rename = "uncertain")]
    Uncertain,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Match => "match",
            Verdict::NonMatch => "non-match",
            Verdict::Uncertain => "uncertain",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Thresholded decision of a face recognition model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrDecision {
    #[serde(rename = "match")]
    Match,
    #[serde(rename = "non-match")]
    NonMatch,
}

impl FrDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            FrDecision::Match => "match",
            FrDecision::NonMatch => "non-match",
        }
    }
}

/// Amount of auxiliary information given to the explanation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptRegime {
    /// Ground-truth label supplied; training-set generation only.
    #[serde(rename = "grounded")]
    Grounded,
    #[serde(rename = "no-score")]
    NoScore,
    #[serde(rename = "score-only")]
    ScoreOnly,
    #[serde(rename = "score+decision")]
    ScorePlusDecision,
}

impl PromptRegime {
    pub const ALL: [PromptRegime; 4] = [
        PromptRegime::Grounded,
        PromptRegime::NoScore,
        PromptRegime::ScoreOnly,
        PromptRegime::ScorePlusDecision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptRegime::Grounded => "grounded",
            PromptRegime::NoScore => "no-score",
            PromptRegime::ScoreOnly => "score-only",
            PromptRegime::ScorePlusDecision => "score+decision",
        }
    }

    pub fn is_test_time(self) -> bool {
        self != PromptRegime::Grounded
    }
}

impl fmt::Display for PromptRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptRegime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grounded" => Ok(PromptRegime::Grounded),
            "no-score" | "noscore" | "no_score" => Ok(PromptRegime::NoScore),
            "score-only" | "scoreonly" | "score_only" => Ok(PromptRegime::ScoreOnly),
            "score+decision" | "score-decision" | "score_decision" | "scoreplusdecision" => {
                Ok(PromptRegime::ScorePlusDecision)
            }
            other => Err(format!(
                "unknown prompt regime {other:?} (expected grounded, no-score, score-only or score+decision)"
            )),
        }
    }
}

/// One face pair and everything known about it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    pub image_a: String,
    pub image_b: String,
    pub label: PairLabel,
    /// FR model name → similarity in `[-1, 1]`.
    pub fr_scores: BTreeMap<String, f64>,
    pub fr_decisions: BTreeMap<String, FrDecision>,
    pub regime: PromptRegime,
    pub explanation: Option<String>,
    pub verdict: Option<Verdict>,
    pub embedding: Option<EmbeddingVector>,
}

impl PairRecord {
    pub fn new(
        pair_id: impl Into<String>,
        image_a: impl Into<String>,
        image_b: impl Into<String>,
        label: PairLabel,
        regime: PromptRegime,
    ) -> Self {
        Self {
            pair_id: pair_id.into(),
            image_a: image_a.into(),
            image_b: image_b.into(),
            label,
            fr_scores: BTreeMap::new(),
            fr_decisions: BTreeMap::new(),
            regime,
            explanation: None,
            verdict: None,
            embedding: None,
        }
    }

    /// Checks the per-record invariants; returns a human-readable reason.
    pub fn validate(&self) -> Result<(), String> {
        if self.pair_id.is_empty() {
            return Err("pair_id is empty".into());
        }
        for (model, score) in &self.fr_scores {
            if !score.is_finite() || !(-1.0..=1.0).contains(score) {
                return Err(format!("fr_scores[{model:?}] = {score} is outside [-1, 1]"));
            }
        }
        if let Some(model) = self
            .fr_decisions
            .keys()
            .find(|m| !self.fr_scores.contains_key(*m))
        {
            return Err(format!("fr_decisions has {model:?} but fr_scores does not"));
        }
        if self.verdict.is_some() && self.explanation.is_none() {
            return Err("verdict present without explanation".into());
        }
        Ok(())
    }

    /// The stored verdict, or one parsed from the explanation text.
    pub fn effective_verdict(&self) -> Option<Verdict> {
        self.verdict
            .or_else(|| self.explanation.as_deref().map(parse_verdict))
    }
}

/// On-disk shape of a record line.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    pair_id: String,
    image_a: String,
    image_b: String,
    label: PairLabel,
    regime: PromptRegime,
    #[serde(default)]
    fr_scores: BTreeMap<String, f64>,
    #[serde(default)]
    fr_decisions: BTreeMap<String, FrDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding_provider: Option<String>,
}

impl From<&PairRecord> for RecordLine {
    fn from(r: &PairRecord) -> Self {
        RecordLine {
            pair_id: r.pair_id.clone(),
            image_a: r.image_a.clone(),
            image_b: r.image_b.clone(),
            label: r.label,
            regime: r.regime,
            fr_scores: r.fr_scores.clone(),
            fr_decisions: r.fr_decisions.clone(),
            explanation: r.explanation.clone(),
            verdict: r.verdict,
            embedding: r.embedding.as_ref().map(|e| e.values().to_vec()),
            embedding_provider: r.embedding.as_ref().map(|e| e.provider_tag().to_string()),
        }
    }
}

impl TryFrom<RecordLine> for PairRecord {
    type Error = String;

    fn try_from(l: RecordLine) -> Result<Self, String> {
        let embedding = match (l.embedding, l.embedding_provider) {
            (None, None) => None,
            (Some(values), Some(tag)) => Some(
                EmbeddingVector::new(values, tag)
                    .map_err(|e: EmbeddingError| format!("embedding: {e}"))?,
            ),
            (Some(_), None) => return Err("embedding present without embedding_provider".into()),
            (None, Some(_)) => return Err("embedding_provider present without embedding".into()),
        };
        Ok(PairRecord {
            pair_id: l.pair_id,
            image_a: l.image_a,
            image_b: l.image_b,
            label: l.label,
            fr_scores: l.fr_scores,
            fr_decisions: l.fr_decisions,
            regime: l.regime,
            explanation: l.explanation,
            verdict: l.verdict,
            embedding,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataLine {
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Ordered collection of pair records plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<PairRecord>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    /// Builds a manifest, validating every record and pair_id uniqueness.
    /// Line numbers in errors are 1-based record positions.
    pub fn new(
        records: Vec<PairRecord>,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self, DataError> {
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            r.validate().map_err(|reason| DataError::Invalid {
                line,
                pair_id: r.pair_id.clone(),
                reason,
            })?;
            if let Some(first_line) = seen.insert(&r.pair_id, line) {
                return Err(DataError::DuplicatePairId {
                    pair_id: r.pair_id.clone(),
                    line,
                    first_line,
                });
            }
        }
        Ok(Self { records, metadata })
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<PairRecord> {
        self.records
    }

    /// Mutable access for in-place updates that cannot break uniqueness
    /// (pair ids are not editable through this path).
    pub fn update_records<F>(&mut self, mut f: F) -> Result<(), DataError>
    where
        F: FnMut(usize, &mut PairRecord),
    {
        for (i, r) in self.records.iter_mut().enumerate() {
            let id = r.pair_id.clone();
            f(i, r);
            r.pair_id = id;
            r.validate().map_err(|reason| DataError::Invalid {
                line: i + 1,
                pair_id: r.pair_id.clone(),
                reason,
            })?;
        }
        Ok(())
    }

    pub fn get(&self, pair_id: &str) -> Option<&PairRecord> {
        self.records.iter().find(|r| r.pair_id == pair_id)
    }
}

/// Parses manifest text. Blank lines are skipped; line numbers in errors
/// refer to the physical line in `text`.
pub fn parse_manifest_str(text: &str) -> Result<Manifest, DataError> {
    let mut metadata = BTreeMap::new();
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut first_content = true;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(trimmed).map_err(|e| DataError::Parse {
                line,
                message: e.to_string(),
            })?;
        let is_header = first_content
            && value
                .as_object()
                .is_some_and(|o| o.contains_key("metadata") && !o.contains_key("pair_id"));
        first_content = false;
        if is_header {
            let header: MetadataLine =
                serde_json::from_value(value).map_err(|e| DataError::Parse {
                    line,
                    message: e.to_string(),
                })?;
            metadata = header.metadata;
            continue;
        }
        let rec_line: RecordLine = serde_json::from_value(value).map_err(|e| DataError::Parse {
            line,
            message: e.to_string(),
        })?;
        let pair_id = rec_line.pair_id.clone();
        let record = PairRecord::try_from(rec_line).map_err(|reason| DataError::Invalid {
            line,
            pair_id: pair_id.clone(),
            reason,
        })?;
        record.validate().map_err(|reason| DataError::Invalid {
            line,
            pair_id: pair_id.clone(),
            reason,
        })?;
        if let Some(&first_line) = seen.get(&pair_id) {
            return Err(DataError::DuplicatePairId {
                pair_id,
                line,
                first_line,
            });
        }
        seen.insert(pair_id, line);
        records.push(record);
    }
    Ok(Manifest { records, metadata })
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest_str(&text)
}

pub fn serialize_manifest(manifest: &Manifest) -> Result<String, DataError> {
    let mut out = String::new();
    if !manifest.metadata.is_empty() {
        out.push_str(&json::to_line(&MetadataLine {
            metadata: manifest.metadata.clone(),
        })?);
        out.push('\n');
    }
    for r in &manifest.records {
        out.push_str(&json::to_line(&RecordLine::from(r))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let text = serialize_manifest(manifest)?;
    std::fs::write(path, text).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VerdictToken {
    Match,
    NonMatch,
    Hedge,
}

const HEDGES: &[&[&str]] = &[
    &["uncertain"],
    &["undecided"],
    &["unsure"],
    &["inconclusive"],
    &["indeterminate"],
    &["undetermined"],
    &["cannot", "determine"],
    &["can", "not", "determine"],
    &["unable", "to"],
    &["not", "sure"],
];

/// Scans a word sequence for verdict tokens. Negated forms ("non-match",
/// "no match", "not a match", "mismatch") count as non-match.
fn verdict_tokens(words: &[String]) -> Vec<VerdictToken> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if let Some(h) = HEDGES
            .iter()
            .find(|h| words.len() - i >= h.len() && h.iter().zip(&words[i..]).all(|(a, b)| a == b))
        {
            out.push(VerdictToken::Hedge);
            i += h.len();
            continue;
        }
        let w = words[i].as_str();
        match w {
            "nonmatch" | "mismatch" | "nomatch" => {
                out.push(VerdictToken::NonMatch);
            }
            "non" | "no" | "not" => {
                // "non match", "no match", "not a match"
                let next = words.get(i + 1).map(String::as_str);
                let after = words.get(i + 2).map(String::as_str);
                if next == Some("match") {
                    out.push(VerdictToken::NonMatch);
                    i += 2;
                    continue;
                }
                if w == "not" && next == Some("a") && after == Some("match") {
                    out.push(VerdictToken::NonMatch);
                    i += 3;
                    continue;
                }
            }
            "match" | "matched" | "matching" => out.push(VerdictToken::Match),
            _ => {}
        }
        i += 1;
    }
    out
}

fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn decide(tokens: &[VerdictToken]) -> Verdict {
    if tokens.contains(&VerdictToken::Hedge) {
        return Verdict::Uncertain;
    }
    let has_match = tokens.contains(&VerdictToken::Match);
    let has_non = tokens.contains(&VerdictToken::NonMatch);
    match (has_match, has_non) {
        (true, false) => Verdict::Match,
        (false, true) => Verdict::NonMatch,
        _ => Verdict::Uncertain,
    }
}

/// Strips list/markdown decoration ("**", "#", "-", ">") from a line start.
fn strip_decoration(line: &str) -> &str {
    line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '-' | '>' | '_'))
}

/// Extracts the verdict from a raw model response.
///
/// The first line starting with `Match Verdict:` (case-insensitive, with
/// markdown decoration tolerated) is authoritative. Without such a line the
/// whole text is scanned; a hedge, conflicting tokens, or no token at all
/// yield [`Verdict::Uncertain`].
pub fn parse_verdict(raw_text: &str) -> Verdict {
    for line in raw_text.lines() {
        let body = strip_decoration(line);
        let words = words_of(body);
        if words.len() >= 2 && words[0] == "match" && words[1] == "verdict" {
            let after = match body.find(':') {
                Some(pos) => &body[pos + 1..],
                None => continue,
            };
            return decide(&verdict_tokens(&words_of(after)));
        }
    }
    decide(&verdict_tokens(&words_of(raw_text)))
}

/// Result of [`filter_training`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub manifest: Manifest,
    pub removed: usize,
    pub removed_ids: Vec<String>,
}

/// Drops records unusable for training: uncertain verdicts and unknown
/// labels. Records with no verdict and no explanation are kept.
pub fn filter_training(manifest: Manifest) -> FilterOutcome {
    let metadata = manifest.metadata;
    let mut kept = Vec::with_capacity(manifest.records.len());
    let mut removed_ids = Vec::new();
    for r in manifest.records {
        let drop = r.label == PairLabel::Unknown || r.effective_verdict() == Some(Verdict::Uncertain);
        if drop {
            removed_ids.push(r.pair_id);
        } else {
            kept.push(r);
        }
    }
    FilterOutcome {
        manifest: Manifest {
            records: kept,
            metadata,
        },
        removed: removed_ids.len(),
        removed_ids,
    }
}
