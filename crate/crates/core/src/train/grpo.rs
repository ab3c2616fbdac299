use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::objective::{group_advantages, surrogate_objective, StepAdvantages, SurrogateSettings};
use super::optim::Optimizer;
use super::schedule::{StageDecision, StageScheduler};
use super::{IterRecord, Problem, StageTransition, TrainConfig, TrainHistory, TrainOutcome};
use crate::error::{Error, Result};
use crate::policy::{rollout, Mlp, Trajectory};
use crate::reward::Stage;

/// Rollout stream `iter·G + i` of the run seed: every trajectory has its
/// own reproducible random sequence.
pub(crate) fn rollout_rng(seed: u64, iter: usize, group_size: usize, member: usize) -> ChaCha8Rng {
    rollout_stream(seed, (iter * group_size + member) as u64)
}

pub fn rollout_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// G trajectories sampled under one parameter snapshot, scored at a stage.
#[derive(Clone, Debug)]
pub struct GroupSample {
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
}

impl GroupSample {
    pub fn draw(
        problem: &Problem,
        params: &Mlp,
        stage: Stage,
        seed: u64,
        iter: usize,
        group_size: usize,
    ) -> Result<Self> {
        let trajectories: Vec<Trajectory> = (0..group_size)
            .into_par_iter()
            .map(|i| -> Result<Trajectory> {
                let mut rng = rollout_rng(seed, iter, group_size, i);
                let mut t = rollout(params, &problem.env, &mut rng);
                t.reward = Some(problem.rewards.evaluate(&t.actions, stage)?);
                Ok(t)
            })
            .collect::<Result<_>>()?;
        let rewards = trajectories
            .iter()
            .map(|t| t.reward.as_ref().map_or(f64::NAN, |r| r.combined))
            .collect();
        Ok(Self { trajectories, rewards })
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One GRPO iteration: sample a group under the current parameters (which
/// become θ_old), normalize rewards within the group and take one ascent
/// step on the clipped, KL-penalized surrogate.
pub fn grpo_step(
    problem: &Problem,
    params: &mut Mlp,
    reference: Option<&Mlp>,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
    stage: Stage,
    iter: usize,
) -> Result<IterRecord> {
    let old = params.clone();
    let group = GroupSample::draw(problem, &old, stage, config.seed, iter, config.group_size)?;
    let advantages = group_advantages(&group.rewards)?;
    let step_adv: Vec<StepAdvantages> = advantages.iter().map(|&a| StepAdvantages::Outcome(a)).collect();
    let settings = SurrogateSettings {
        epsilon: config.clip_epsilon,
        beta: if reference.is_some() { config.kl_beta } else { 0.0 },
    };
    let eval = surrogate_objective(params, reference, &problem.env, &group.trajectories, &step_adv, &settings, true)?;
    let grad = eval.grad.expect("gradient requested");
    let grad_norm = grad.norm();
    if !eval.objective.is_finite() || !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "iteration {iter} (stage {}): objective {}, gradient norm {}, mean reward {}",
            stage.number(),
            eval.objective,
            grad_norm,
            group.mean_reward()
        )));
    }
    optimizer.ascend(params, &grad);
    if !params.is_finite() {
        return Err(Error::NonFinite(format!("parameters after iteration {iter}")));
    }
    Ok(IterRecord {
        iter,
        stage,
        mean_reward: group.mean_reward(),
        max_reward: group.max_reward(),
        objective: eval.objective,
        mean_kl: eval.mean_kl,
        grad_norm,
        clip_fraction: eval.clip_fraction,
        fallbacks: problem.rewards.fallback_count(),
    })
}

/// Staged GRPO: stages 1 → 2 → 3 under the curriculum scheduler. `init` is
/// the starting policy and `reference` the frozen KL anchor (usually both
/// the behavior-cloned policy).
pub fn train_grpo(problem: &Problem, init: &Mlp, reference: Option<&Mlp>, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let scheduler = StageScheduler::from_config(config);
    let mut params = init.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut history = TrainHistory::default();
    let mut checkpoints = Vec::new();
    let mut stage = Stage::One;
    let mut stage_rewards = Vec::new();
    let mut iter = 0;
    loop {
        let record = grpo_step(problem, &mut params, reference, &mut optimizer, config, stage, iter)?;
        log::debug!("iter {iter} stage {} reward {:.4}", stage.number(), record.mean_reward);
        stage_rewards.push(record.mean_reward);
        history.records.push(record);
        iter += 1;
        if let StageDecision::Advance { forced } = scheduler.decide(&stage_rewards) {
            checkpoints.push((stage, params.clone()));
            let Some(next) = stage.next() else { break };
            log::info!("stage {} -> {} at iteration {iter}{}", stage.number(), next.number(), if forced { " (cap)" } else { "" });
            history.transitions.push(StageTransition {
                iter,
                from: stage,
                to: next,
                forced,
            });
            stage = next;
            stage_rewards.clear();
        }
    }
    Ok(TrainOutcome {
        parameter_count: params.num_params(),
        params,
        history,
        stage_checkpoints: checkpoints,
    })
}

/// GRPO on the stage-3 reward from the first iteration, for at most
/// `max_iterations` (stopping at a plateau if configured).
pub fn train_vanilla_grpo(
    problem: &Problem,
    init: &Mlp,
    reference: Option<&Mlp>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let scheduler = StageScheduler {
        window: config.window,
        tolerance: config.tolerance,
        stage_cap: config.max_iterations,
    };
    let mut params = init.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut history = TrainHistory::default();
    let mut rewards = Vec::new();
    for iter in 0..config.max_iterations {
        let record = grpo_step(problem, &mut params, reference, &mut optimizer, config, Stage::Three, iter)?;
        rewards.push(record.mean_reward);
        history.records.push(record);
        if config.stop_on_plateau && scheduler.decide(&rewards) == (StageDecision::Advance { forced: false }) {
            break;
        }
    }
    Ok(TrainOutcome {
        parameter_count: params.num_params(),
        stage_checkpoints: vec![(Stage::Three, params.clone())],
        params,
        history,
    })
}
