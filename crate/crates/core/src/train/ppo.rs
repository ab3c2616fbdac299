//! PPO baseline: clipped surrogate with a learned state-value baseline
//! instead of group normalization, on the stage-3 reward throughout.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use super::grpo::GroupSample;
use super::objective::{surrogate_objective, StepAdvantages, SurrogateSettings};
use super::optim::{Optimizer, OptimizerKind};
use super::schedule::{StageDecision, StageScheduler};
use super::{IterRecord, Problem, TrainConfig, TrainHistory, TrainOutcome};
use crate::error::{Error, Result};
use crate::policy::{Mlp, StepBatch, FEATURE_DIM};
use crate::reward::Stage;

/// Scalar value network on the mean candidate feature row of a state.
#[derive(Clone, Debug)]
pub struct ValueModel {
    pub params: Mlp,
    optimizer: Optimizer,
}

impl ValueModel {
    pub fn new(seed: u64, learning_rate: f64) -> Self {
        Self {
            params: Mlp::new(FEATURE_DIM, seed),
            optimizer: Optimizer::new(OptimizerKind::Adam, learning_rate),
        }
    }

    pub fn predict(&self, pooled: &Array2<f64>) -> Array1<f64> {
        self.params.forward(pooled.view())
    }

    /// One descent step on the mean squared error to `targets`; returns the
    /// loss before the step.
    pub fn fit_step(&mut self, pooled: &Array2<f64>, targets: &[f64]) -> f64 {
        let (pred, cache) = self.params.forward_cached(pooled.view());
        let n = targets.len() as f64;
        let residual: Array1<f64> = pred.iter().zip(targets).map(|(p, t)| p - t).collect();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
        let d_out = residual.mapv(|r| 2.0 * r / n);
        let grad = self.params.backward(&cache, d_out.view());
        self.optimizer.descend(&mut self.params, &grad);
        loss
    }
}

/// One PPO iteration; the value model is fit after the policy update on
/// the same group.
pub fn ppo_step(
    problem: &Problem,
    params: &mut Mlp,
    value: &mut ValueModel,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    iter: usize,
) -> Result<IterRecord> {
    let old = params.clone();
    let group = GroupSample::draw(problem, &old, Stage::Three, config.seed, iter, config.group_size)?;
    let pooled: Vec<Array2<f64>> = group
        .trajectories
        .par_iter()
        .map(|t| StepBatch::replay(&problem.env, &t.actions).map(|b| b.pooled_features()))
        .collect::<Result<_>>()?;
    let advantages: Vec<Vec<f64>> = pooled
        .iter()
        .zip(&group.rewards)
        .map(|(x, &r)| value.predict(x).iter().map(|v| r - v).collect())
        .collect();
    let step_adv: Vec<StepAdvantages> = advantages.iter().map(|a| StepAdvantages::PerStep(a)).collect();
    let settings = SurrogateSettings {
        epsilon: config.clip_epsilon,
        beta: 0.0,
    };
    let eval = surrogate_objective(params, None, &problem.env, &group.trajectories, &step_adv, &settings, true)?;
    let grad = eval.grad.expect("gradient requested");
    let grad_norm = grad.norm();
    if !eval.objective.is_finite() || !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "PPO iteration {iter}: objective {}, gradient norm {grad_norm}",
            eval.objective
        )));
    }
    optimizer.ascend(params, &grad);

    let rows: usize = pooled.iter().map(|x| x.nrows()).sum();
    let mut stacked = Array2::zeros((rows, FEATURE_DIM));
    let mut targets = Vec::with_capacity(rows);
    let mut at = 0;
    for (x, &r) in pooled.iter().zip(&group.rewards) {
        stacked.slice_mut(ndarray::s![at..at + x.nrows(), ..]).assign(x);
        targets.extend(std::iter::repeat_n(r, x.nrows()));
        at += x.nrows();
    }
    let value_loss = value.fit_step(&stacked, &targets);
    if !value_loss.is_finite() || !value.params.is_finite() {
        return Err(Error::NonFinite(format!("value model at PPO iteration {iter}")));
    }
    Ok(IterRecord {
        iter,
        stage: Stage::Three,
        mean_reward: group.mean_reward(),
        max_reward: group.max_reward(),
        objective: eval.objective,
        mean_kl: 0.0,
        grad_norm,
        clip_fraction: eval.clip_fraction,
        fallbacks: problem.rewards.fallback_count(),
    })
}

/// PPO from `init` for at most `max_iterations`. The value model is seeded
/// from the run seed.
pub fn train_ppo(problem: &Problem, init: &Mlp, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let scheduler = StageScheduler {
        window: config.window,
        tolerance: config.tolerance,
        stage_cap: config.max_iterations,
    };
    let mut params = init.clone();
    let mut value = ValueModel::new(config.seed ^ 0x7661_6c75, config.value_learning_rate);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut history = TrainHistory::default();
    let mut rewards = Vec::new();
    for iter in 0..config.max_iterations {
        let record = ppo_step(problem, &mut params, &mut value, &mut optimizer, config, iter)?;
        rewards.push(record.mean_reward);
        history.records.push(record);
        if config.stop_on_plateau && scheduler.decide(&rewards) == (StageDecision::Advance { forced: false }) {
            break;
        }
    }
    Ok(TrainOutcome {
        parameter_count: params.num_params() + value.params.num_params(),
        stage_checkpoints: vec![(Stage::Three, params.clone())],
        params,
        history,
    })
}
