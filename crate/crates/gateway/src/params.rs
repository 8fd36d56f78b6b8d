//! The JSON parameter file shared by every subcommand. Every section and
//! field is optional.

use std::fs;
use std::path::Path;

use anyhow::Context;
use dialog_esp::crowd_sim::{presets, CrowdModel};
use dialog_esp::domain::{FOOD_EXPLANATION, FOOD_PROMPT, FOOD_SLOT};
use dialog_esp::{GameConfig, Mode, Policy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Game settings for new sessions.
    pub game: GameConfig,
    /// Crowd model for simulated recruitment.
    pub model: CrowdModel,
    pub serve: ServeParams,
    pub corpus: CorpusParams,
    pub simulate: SimulateParams,
    pub sweep: SweepParams,
    pub calibrate: CalibrateParams,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            // a 60 s window matches the fleeting-task lifetime
            game: GameConfig::new(60.0, Policy::EspPlusIth, 1, Mode::Live).expect("valid"),
            model: presets()[0].model,
            serve: ServeParams::default(),
            corpus: CorpusParams::default(),
            simulate: SimulateParams::default(),
            sweep: SweepParams::default(),
            calibrate: CalibrateParams::default(),
        }
    }
}

impl Params {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let p: Params = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        p.game.validate().context("game")?;
        p.model.validate().context("model")?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub name: String,
    pub prompt: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeParams {
    /// Virtual seconds per real second in sim mode.
    pub sim_speed: f64,
    /// Real games per playlist, not counting the tutorial.
    pub playlist_length: usize,
    pub tick_ms: u64,
    pub slots: Vec<SlotSpec>,
}

impl Default for ServeParams {
    fn default() -> Self {
        Self {
            sim_speed: 1.0,
            playlist_length: 5,
            tick_ms: 50,
            slots: vec![SlotSpec {
                name: FOOD_SLOT.into(),
                prompt: FOOD_PROMPT.into(),
                explanation: FOOD_EXPLANATION.into(),
            }],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    /// Synthetic tasks to generate; `None` uses the ten listed participants.
    pub tasks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub trials_per_task: usize,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self { trials_per_task: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub tasks: usize,
    pub workers: usize,
    pub rounds: usize,
    pub ks: Vec<usize>,
    pub correct: f64,
    pub median_s: f64,
    pub sigma: f64,
    pub answers_per_game: f64,
    pub time_constraint_s: f64,
    pub fallback_index_i: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            tasks: 200,
            workers: 10,
            rounds: 20,
            ks: (2..=10).collect(),
            correct: 0.8,
            median_s: 6.0,
            sigma: 0.5,
            answers_per_game: 1.0,
            time_constraint_s: 20.0,
            fallback_index_i: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateParams {
    /// First worker, first answer and first match means, in seconds.
    pub targets: [f64; 3],
    pub budget: usize,
    pub trials_per_candidate: usize,
    pub validation_trials: usize,
}

impl Default for CalibrateParams {
    fn default() -> Self {
        Self {
            targets: [30.83, 37.14, 40.95],
            budget: 80,
            trials_per_candidate: 200,
            validation_trials: 1000,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let p: Params = serde_json::from_str(r#"{"sweep": {"rounds": 3}, "serve": {"sim_speed": 20}}"#).unwrap();
        assert_eq!(p.sweep.rounds, 3);
        assert_eq!(p.sweep.workers, 10);
        assert_eq!(p.serve.sim_speed, 20.0);
        assert_eq!(p.game.time_constraint_s, 60.0);
        assert!(serde_json::from_str::<Params>(r#"{"swep": {}}"#).is_err());
    }
}
