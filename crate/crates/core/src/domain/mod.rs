//! Dialog tasks, game configuration, and the corpus file format.

mod corpus;
mod synth;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matching::normalize;

pub use corpus::{load_corpus, read_corpus, write_corpus, CorpusError};
pub use synth::{
    appendix_profiles, generate_synthetic_corpus, synthetic_corpus, synthetic_profiles, ConversationalAct, Scenario,
    FOOD_EXPLANATION, FOOD_PROMPT, FOOD_SLOT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn agent(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Agent,
            text: text.into(),
        }
    }
}

/// One utterance-with-history and the slot workers are asked to fill.
///
/// `gold` is `None` when the dialog holds no entity for the slot. `aux_gold`
/// carries values of other slots in the same dialog (e.g. the departure city
/// when the slot is the destination) so errors can be attributed to them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogTask {
    pub task_id: String,
    pub category: String,
    pub utterances: Vec<Utterance>,
    pub slot_name: String,
    pub slot_prompt: String,
    pub slot_explanation: String,
    pub gold: Option<String>,
    #[serde(default)]
    pub aux_gold: BTreeMap<String, String>,
}

impl DialogTask {
    /// Text of the last user turn, or of the last turn if no user spoke.
    pub fn final_user_text(&self) -> Option<&str> {
        self.utterances
            .iter()
            .rev()
            .find(|u| u.speaker == Speaker::User)
            .or(self.utterances.last())
            .map(|u| u.text.as_str())
    }

    /// The whole dialog rendered one turn per line.
    pub fn transcript(&self) -> String {
        self.utterances
            .iter()
            .map(|u| {
                let who = match u.speaker {
                    Speaker::User => "user",
                    Speaker::Agent => "agent",
                };
                format!("{who}: {}", u.text)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Normalizes `gold` and every `aux_gold` value in place.
    pub fn normalize_labels(&mut self) {
        self.gold = self.gold.as_deref().map(normalize).filter(|g| !g.is_empty());
        for v in self.aux_gold.values_mut() {
            *v = normalize(v);
        }
    }
}

/// A broken task invariant: which field and which rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Checks the per-task invariants. An empty list means the task is valid.
pub fn validate_task(task: &DialogTask) -> Vec<Violation> {
    let mut out = Vec::new();
    if task.task_id.trim().is_empty() {
        out.push(Violation {
            field: "task_id",
            rule: "must be non-empty".into(),
        });
    }
    if task.utterances.is_empty() {
        out.push(Violation {
            field: "utterances",
            rule: "must contain at least one utterance".into(),
        });
    }
    if task.slot_name.trim().is_empty() {
        out.push(Violation {
            field: "slot_name",
            rule: "must be non-empty".into(),
        });
    }
    if let Some(g) = &task.gold {
        if g.is_empty() || normalize(g) != *g {
            out.push(Violation {
                field: "gold",
                rule: format!("{g:?} is not in normalized form"),
            });
        }
    }
    for (slot, v) in &task.aux_gold {
        if normalize(v) != *v {
            out.push(Violation {
                field: "aux_gold",
                rule: format!("value for {slot:?} is not in normalized form"),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// First label two different workers agree on; empty at timeout.
    EspOnly,
    /// The i-th non-empty answer by arrival.
    IthOnly,
    /// First agreed label; falls back to the i-th answer at timeout.
    EspPlusIth,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::EspOnly, Policy::IthOnly, Policy::EspPlusIth];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::EspOnly => "esp_only",
            Policy::IthOnly => "ith_only",
            Policy::EspPlusIth => "esp_plus_ith",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Policy {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ConfigError::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// The game decides as soon as the policy's answer is known.
    Live,
    /// The game records every answer until the timer runs out.
    Collection,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("time constraint must be positive, got {0}")]
    TimeConstraint(f64),
    #[error("fallback index must be at least 1")]
    FallbackIndex,
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error("profile list {field} has {got} entries, expected {expected}")]
    ProfileLength {
        field: &'static str,
        got: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub time_constraint_s: f64,
    pub policy: Policy,
    pub fallback_index_i: usize,
    pub mode: Mode,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            time_constraint_s: 20.0,
            policy: Policy::EspPlusIth,
            fallback_index_i: 1,
            mode: Mode::Live,
        }
    }
}

impl GameConfig {
    pub fn new(
        time_constraint_s: f64,
        policy: Policy,
        fallback_index_i: usize,
        mode: Mode,
    ) -> Result<Self, ConfigError> {
        let cfg = Self {
            time_constraint_s,
            policy,
            fallback_index_i,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.time_constraint_s > 0.0 && self.time_constraint_s.is_finite()) {
            return Err(ConfigError::TimeConstraint(self.time_constraint_s));
        }
        if self.fallback_index_i < 1 {
            return Err(ConfigError::FallbackIndex);
        }
        Ok(())
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_time_constraint(mut self, seconds: f64) -> Self {
        self.time_constraint_s = seconds;
        self
    }

    pub fn with_fallback_index(mut self, i: usize) -> Self {
        self.fallback_index_i = i;
        self
    }
}

/// A participant's personal entity lists for the chat scenarios.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    foods: Vec<String>,
    drinks: Vec<String>,
    countries: Vec<String>,
}

impl UserProfile {
    pub const FOODS: usize = 9;
    pub const DRINKS: usize = 3;
    pub const COUNTRIES: usize = 3;

    pub fn new<S: Into<String>>(
        foods: impl IntoIterator<Item = S>,
        drinks: impl IntoIterator<Item = S>,
        countries: impl IntoIterator<Item = S>,
    ) -> Result<Self, ConfigError> {
        let collect = |it: &mut dyn Iterator<Item = S>| it.map(Into::into).collect::<Vec<String>>();
        let foods = collect(&mut foods.into_iter());
        let drinks = collect(&mut drinks.into_iter());
        let countries = collect(&mut countries.into_iter());
        for (field, got, expected) in [
            ("foods", foods.len(), Self::FOODS),
            ("drinks", drinks.len(), Self::DRINKS),
            ("countries", countries.len(), Self::COUNTRIES),
        ] {
            if got != expected {
                return Err(ConfigError::ProfileLength {
                    field,
                    got,
                    expected,
                });
            }
        }
        Ok(Self {
            foods,
            drinks,
            countries,
        })
    }

    pub fn foods(&self) -> &[String] {
        &self.foods
    }

    pub fn drinks(&self) -> &[String] {
        &self.drinks
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }
}
