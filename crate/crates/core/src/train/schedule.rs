//! Curriculum stage advancement.
//!
//! A stage ends when the mean reward of the last `window` iterations differs
//! from the mean of the `window` before it by less than `tolerance`
//! (relative), or when the stage has run `stage_cap` iterations. Finishing
//! stage 3 ends training.

use super::{TrainConfig, TrainHistory};
use crate::reward::Stage;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageScheduler {
    pub window: usize,
    pub tolerance: f64,
    pub stage_cap: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageDecision {
    Hold,
    /// The stage has converged, or hit its cap when `forced`.
    Advance { forced: bool },
}

impl StageScheduler {
    pub fn from_config(config: &TrainConfig) -> Self {
        Self {
            window: config.window,
            tolerance: config.tolerance,
            stage_cap: config.stage_cap,
        }
    }

    /// Relative change between the last two windows, if both are complete.
    pub fn relative_change(&self, rewards: &[f64]) -> Option<f64> {
        let w = self.window;
        if w == 0 || rewards.len() < 2 * w {
            return None;
        }
        let n = rewards.len();
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let recent = mean(&rewards[n - w..]);
        let previous = mean(&rewards[n - 2 * w..n - w]);
        Some((recent - previous).abs() / (previous.abs() + 1e-8))
    }

    /// Decision after the given mean rewards of the current stage.
    pub fn decide(&self, stage_rewards: &[f64]) -> StageDecision {
        if let Some(change) = self.relative_change(stage_rewards) {
            if change < self.tolerance {
                return StageDecision::Advance { forced: false };
            }
        }
        if stage_rewards.len() >= self.stage_cap {
            return StageDecision::Advance { forced: true };
        }
        StageDecision::Hold
    }
}

/// Stage for the next iteration given the history so far. Never regresses;
/// stays at 3 once there (ending stage 3 is a training-loop decision).
pub fn stage_scheduler(history: &TrainHistory, config: &TrainConfig) -> Stage {
    let Some(last) = history.records.last() else {
        return Stage::One;
    };
    let current = last.stage;
    let rewards = history.stage_rewards(current);
    match StageScheduler::from_config(config).decide(&rewards) {
        StageDecision::Advance { .. } => current.next().unwrap_or(current),
        StageDecision::Hold => current,
    }
}
