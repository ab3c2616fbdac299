//! Policy training: behavior-cloned reference, staged GRPO and the PPO and
//! single-stage GRPO baselines.

mod grpo;
pub mod objective;
pub mod optim;
mod ppo;
pub mod schedule;
mod sft;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Mlp, SelectionEnv};
use crate::reward::{MockScorer, RemoteScorer, RemoteScorerConfig, RewardModel, RewardWeights, SemanticScorer, Stage};
use crate::scenario::{normalize_features, Scenario};

pub use grpo::{grpo_step, rollout_stream, train_grpo, train_vanilla_grpo, GroupSample};
pub use objective::{
    clip_ratio, clipped_surrogate, group_advantages, kl_categorical, surrogate_objective, ObjectiveEval,
    StepAdvantages, SurrogateSettings, ADVANTAGE_STD_FLOOR,
};
pub use optim::{Optimizer, OptimizerKind};
pub use ppo::{train_ppo, ValueModel};
pub use schedule::{stage_scheduler, StageDecision, StageScheduler};
pub use sft::{expert_order, sft_pretrain, SftOutcome};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerChoice {
    #[default]
    Mock,
    /// HTTP scorer at the configured or environment URL, mock on failure.
    Remote,
}

impl ScorerChoice {
    pub fn build(self, remote: &RemoteScorerConfig) -> Arc<dyn SemanticScorer> {
        match self {
            ScorerChoice::Mock => Arc::new(MockScorer),
            ScorerChoice::Remote => Arc::new(RemoteScorer::from_env(remote.clone())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Iterations after which a curriculum stage is force-advanced.
    pub stage_cap: usize,
    pub window: usize,
    pub tolerance: f64,
    /// Iteration budget of the single-stage algorithms.
    pub max_iterations: usize,
    /// Single-stage algorithms stop early once their reward plateaus.
    pub stop_on_plateau: bool,
    pub seed: u64,
    pub weights: RewardWeights,
    pub scorer: ScorerChoice,
    pub remote: RemoteScorerConfig,
    pub sft: SftConfig,
    /// Learning rate of the PPO value model.
    pub value_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_beta: 0.04,
            learning_rate: 3e-4,
            optimizer: OptimizerKind::Sgd,
            stage_cap: 400,
            window: 50,
            tolerance: 0.02,
            max_iterations: 1200,
            stop_on_plateau: true,
            seed: 0,
            weights: RewardWeights::default(),
            scorer: ScorerChoice::Mock,
            remote: RemoteScorerConfig::default(),
            sft: SftConfig::default(),
            value_learning_rate: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Validation(msg.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return bad("kl_beta must be a non-negative number");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.stage_cap == 0 || self.max_iterations == 0 {
            return bad("iteration caps must be positive");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Staged GRPO with the curriculum scheduler.
    Grpo,
    /// GRPO on the final-stage reward only.
    GrpoVanilla,
    Ppo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Grpo, Algorithm::GrpoVanilla, Algorithm::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Grpo => "grpo",
            Algorithm::GrpoVanilla => "grpo-vanilla",
            Algorithm::Ppo => "ppo",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub stage: Stage,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub objective: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
    pub clip_fraction: f64,
    /// Cumulative scorer fallbacks at the end of the iteration.
    pub fallbacks: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTransition {
    /// First iteration run under `to`.
    pub iter: usize,
    pub from: Stage,
    pub to: Stage,
    /// Advanced because the stage hit its iteration cap.
    pub forced: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<IterRecord>,
    pub transitions: Vec<StageTransition>,
}

pub const HISTORY_HEADER: &str = "iter,stage,mean_reward,max_reward,objective,mean_kl,grad_norm";

impl TrainHistory {
    pub fn stage_rewards(&self, stage: Stage) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.mean_reward)
            .collect()
    }

    /// Mean of the last `window` mean rewards (all of them if fewer).
    pub fn final_window_mean(&self, window: usize) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let w = window.clamp(1, self.records.len());
        let tail = &self.records[self.records.len() - w..];
        Some(tail.iter().map(|r| r.mean_reward).sum::<f64>() / w as f64)
    }

    pub fn fallbacks(&self) -> u64 {
        self.records.last().map_or(0, |r| r.fallbacks)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.iter,
                r.stage.number(),
                r.mean_reward,
                r.max_reward,
                r.objective,
                r.mean_kl,
                r.grad_norm
            ));
        }
        out
    }

    /// Parses the CSV columns back; fields outside the CSV are zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != HISTORY_HEADER {
            return Err(Error::Schema(format!("unexpected history header '{}'", header.join(","))));
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row[i]
                    .parse()
                    .map_err(|_| Error::Schema(format!("bad number '{}' in history", &row[i])))
            };
            let stage = Stage::try_from(num(1)? as u8)?;
            records.push(IterRecord {
                iter: num(0)? as usize,
                stage,
                mean_reward: num(2)?,
                max_reward: num(3)?,
                objective: num(4)?,
                mean_kl: num(5)?,
                grad_norm: num(6)?,
                clip_fraction: 0.0,
                fallbacks: 0,
            });
        }
        Ok(Self {
            records,
            transitions: Vec::new(),
        })
    }
}

/// Run metadata written next to the history CSV.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMetadata {
    pub algorithm: Algorithm,
    pub config: TrainConfig,
    pub seed: u64,
    pub init_seed: u64,
    pub used_sft: bool,
    pub iterations: usize,
    pub transitions: Vec<StageTransition>,
    pub scorer_fallbacks: u64,
    pub parameter_count: usize,
}

/// Writes `<dir>/<stem>.csv` and `<dir>/<stem>.meta.json`.
pub fn write_history(dir: &Path, stem: &str, history: &TrainHistory, meta: &RunMetadata) -> Result<()> {
    let csv_path = dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, history.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    let meta_path = dir.join(format!("{stem}.meta.json"));
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

/// A scenario prepared for training: decision environment plus reward model.
pub struct Problem {
    pub env: SelectionEnv,
    pub rewards: RewardModel,
    pub scorer: Arc<dyn SemanticScorer>,
}

impl Problem {
    pub fn new(scenario: &Scenario, weights: RewardWeights, scorer: Arc<dyn SemanticScorer>) -> Self {
        let normalized = Arc::new(normalize_features(scenario));
        let rewards = RewardModel::new(Arc::clone(&normalized), weights, Arc::clone(&scorer));
        let env = SelectionEnv::new(normalized, rewards.grades());
        Self { env, rewards, scorer }
    }

    pub fn from_config(scenario: &Scenario, config: &TrainConfig) -> Self {
        Self::new(scenario, config.weights.clone(), config.scorer.build(&config.remote))
    }

    pub fn scenario(&self) -> &Scenario {
        &self.env.normalized().scenario
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Mlp,
    pub history: TrainHistory,
    /// Parameters at the end of each finished stage.
    pub stage_checkpoints: Vec<(Stage, Mlp)>,
    /// Total parameters trained, including any value model.
    pub parameter_count: usize,
}
