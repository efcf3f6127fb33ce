//! Prompt construction for the four prompting regimes.
//!
//! Templates are TOML assets (`grounded.toml`, `no_score.toml`,
//! `score_only.toml`, `score_decision.toml`) with `regime`, `version`,
//! `system` and `user` keys. The user text may contain the slots
//! `{{label}}`, `{{scores}}` and `{{decisions}}`; which slots are allowed
//! depends on the regime. Every template must request the
//! `Match Verdict` / `Similarities` / `Differences` response layout that
//! [`parse_verdict`](crate::data::parse_verdict) expects.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::data::{PairLabel, PairRecord, PromptRegime};

pub const LABEL_SLOT: &str = "{{label}}";
pub const SCORES_SLOT: &str = "{{scores}}";
pub const DECISIONS_SLOT: &str = "{{decisions}}";

/// Headings the response format must contain.
pub const RESPONSE_HEADINGS: [&str; 3] = ["Match Verdict", "Similarities", "Differences"];

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("record {pair_id:?} has no FR score for model {model:?}")]
    MissingScore { pair_id: String, model: String },
    #[error("record {pair_id:?} has no FR decision for model {model:?}")]
    MissingDecision { pair_id: String, model: String },
    #[error("record {pair_id:?} has an unknown label; grounded prompts need ground truth")]
    UnknownLabel { pair_id: String },
    #[error("regime {regime} needs at least one FR model")]
    NoModels { regime: PromptRegime },
    #[error("template for {regime}: {reason}")]
    Template { regime: PromptRegime, reason: String },
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub regime: PromptRegime,
    pub version: u32,
    pub system_text: String,
    pub user_text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    regime: PromptRegime,
    version: u32,
    system: String,
    user: String,
}

impl PromptTemplate {
    pub fn new(
        regime: PromptRegime,
        version: u32,
        system_text: impl Into<String>,
        user_text: impl Into<String>,
    ) -> Result<Self, PromptError> {
        let t = Self {
            regime,
            version,
            system_text: system_text.into(),
            user_text: user_text.into(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let f: TemplateFile = toml::from_str(text).map_err(|e| PromptError::Io {
            path: "<toml>".into(),
            reason: e.to_string(),
        })?;
        Self::new(f.regime, f.version, f.system, f.user)
    }

    fn validate(&self) -> Result<(), PromptError> {
        let has = |slot: &str| self.user_text.contains(slot) || self.system_text.contains(slot);
        let (label, scores, decisions) = match self.regime {
            PromptRegime::Grounded => (true, false, false),
            PromptRegime::NoScore => (false, false, false),
            PromptRegime::ScoreOnly => (false, true, false),
            PromptRegime::ScorePlusDecision => (false, true, true),
        };
        for (slot, wanted) in [
            (LABEL_SLOT, label),
            (SCORES_SLOT, scores),
            (DECISIONS_SLOT, decisions),
        ] {
            if has(slot) != wanted {
                let reason = if wanted {
                    format!("missing required slot {slot}")
                } else {
                    format!("slot {slot} is not allowed")
                };
                return Err(PromptError::Template {
                    regime: self.regime,
                    reason,
                });
            }
        }
        if let Some(h) = RESPONSE_HEADINGS
            .iter()
            .find(|h| !self.user_text.contains(*h))
        {
            return Err(PromptError::Template {
                regime: self.regime,
                reason: format!("response format must contain the heading {h:?}"),
            });
        }
        Ok(())
    }
}

/// Rendered prompt: system instructions plus the user turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub regime: PromptRegime,
    pub system: String,
    pub user: String,
}

impl RenderedPrompt {
    /// System and user text joined by a blank line.
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }
}

/// One template per regime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: [PromptTemplate; 4],
}

fn file_name(regime: PromptRegime) -> &'static str {
    match regime {
        PromptRegime::Grounded => "grounded.toml",
        PromptRegime::NoScore => "no_score.toml",
        PromptRegime::ScoreOnly => "score_only.toml",
        PromptRegime::ScorePlusDecision => "score_decision.toml",
    }
}

fn builtin_text(regime: PromptRegime) -> &'static str {
    match regime {
        PromptRegime::Grounded => include_str!("../assets/prompts/grounded.toml"),
        PromptRegime::NoScore => include_str!("../assets/prompts/no_score.toml"),
        PromptRegime::ScoreOnly => include_str!("../assets/prompts/score_only.toml"),
        PromptRegime::ScorePlusDecision => include_str!("../assets/prompts/score_decision.toml"),
    }
}

fn index(regime: PromptRegime) -> usize {
    match regime {
        PromptRegime::Grounded => 0,
        PromptRegime::NoScore => 1,
        PromptRegime::ScoreOnly => 2,
        PromptRegime::ScorePlusDecision => 3,
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        let load = |r: PromptRegime| {
            PromptTemplate::from_toml(builtin_text(r)).expect("built-in templates are valid")
        };
        Self {
            templates: PromptRegime::ALL.map(load),
        }
    }

    /// Loads templates from `dir`; regimes without a file keep the built-in
    /// template.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for regime in PromptRegime::ALL {
            let path = dir.as_ref().join(file_name(regime));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?;
            let t = PromptTemplate::from_toml(&text).map_err(|e| match e {
                PromptError::Io { reason, .. } => PromptError::Io {
                    path: path.display().to_string(),
                    reason,
                },
                other => other,
            })?;
            if t.regime != regime {
                return Err(PromptError::Template {
                    regime,
                    reason: format!("{} declares regime {}", path.display(), t.regime),
                });
            }
            set.templates[index(regime)] = t;
        }
        Ok(set)
    }

    pub fn template(&self, regime: PromptRegime) -> &PromptTemplate {
        &self.templates[index(regime)]
    }

    /// Renders the prompt for `record` under `regime`, injecting scores and
    /// decisions for `fr_models` (in the given order) when the regime
    /// calls for them.
    pub fn build(
        &self,
        record: &PairRecord,
        regime: PromptRegime,
        fr_models: &[String],
    ) -> Result<RenderedPrompt, PromptError> {
        let t = self.template(regime);
        let mut user = t.user_text.clone();

        if regime == PromptRegime::Grounded {
            let label = match record.label {
                PairLabel::Genuine => "genuine (both images show the same person)",
                PairLabel::Impostor => "impostor (the images show two different people)",
                PairLabel::Unknown => {
                    return Err(PromptError::UnknownLabel {
                        pair_id: record.pair_id.clone(),
                    })
                }
            };
            user = user.replace(LABEL_SLOT, label);
        }

        if matches!(
            regime,
            PromptRegime::ScoreOnly | PromptRegime::ScorePlusDecision
        ) {
            if fr_models.is_empty() {
                return Err(PromptError::NoModels { regime });
            }
            let mut score_lines = Vec::with_capacity(fr_models.len());
            let mut decision_lines = Vec::with_capacity(fr_models.len());
            for requested in fr_models {
                let (name, score) = lookup(&record.fr_scores, requested).ok_or_else(|| {
                    PromptError::MissingScore {
                        pair_id: record.pair_id.clone(),
                        model: requested.clone(),
                    }
                })?;
                score_lines.push(format!("- {name}: {score:.4}"));
                if regime == PromptRegime::ScorePlusDecision {
                    let (name, decision) = lookup(&record.fr_decisions, requested).ok_or_else(
                        || PromptError::MissingDecision {
                            pair_id: record.pair_id.clone(),
                            model: requested.clone(),
                        },
                    )?;
                    decision_lines.push(format!("- {name}: {}", decision.as_str()));
                }
            }
            user = user.replace(SCORES_SLOT, &score_lines.join("\n"));
            if regime == PromptRegime::ScorePlusDecision {
                user = user.replace(DECISIONS_SLOT, &decision_lines.join("\n"));
            }
        }

        Ok(RenderedPrompt {
            regime,
            system: t.system_text.clone(),
            user,
        })
    }
}

/// Exact key match first, then a unique case-insensitive match.
fn lookup<'a, V: Copy>(
    map: &'a std::collections::BTreeMap<String, V>,
    name: &str,
) -> Option<(&'a str, V)> {
    if let Some((k, v)) = map.get_key_value(name) {
        return Some((k.as_str(), *v));
    }
    let mut hits = map.iter().filter(|(k, _)| k.eq_ignore_ascii_case(name));
    match (hits.next(), hits.next()) {
        (Some((k, v)), None) => Some((k.as_str(), *v)),
        _ => None,
    }
}

/// Renders with the built-in templates.
pub fn build_prompt(
    record: &PairRecord,
    regime: PromptRegime,
    fr_models: &[String],
) -> Result<RenderedPrompt, PromptError> {
    PromptSet::builtin().build(record, regime, fr_models)
}

/// The six face recognition models used as auxiliary sources.
pub fn default_fr_model_names() -> Vec<String> {
    [
        "ArcFace",
        "AdaFace",
        "MagFace",
        "FaceNet-VGGFace",
        "FaceNet-CasiaWebFace",
        "KPRPE",
    ]
    .map(String::from)
    .to_vec()
}
