//! Behavior cloning of ground-truth selections into the reference policy.

use std::sync::Arc;

use rayon::prelude::*;

use super::optim::Optimizer;
use super::SftConfig;
use crate::error::{Error, Result};
use crate::policy::{log_prob_and_grad, Mlp, SelectionEnv, Trajectory};
use crate::reward::{complaint_grades, RewardWeights, SemanticScorer};
use crate::scenario::{normalize_features, Scenario};

/// Ground-truth sites ordered by stage-1 score `w_t·t̂ + w_u·û`, highest
/// first, ties to the lower index.
pub fn expert_order(scenario: &Scenario, weights: &RewardWeights) -> Result<Vec<usize>> {
    let truth = scenario.ground_truth().ok_or(Error::NoGroundTruth)?;
    let normalized = normalize_features(scenario);
    let mut order = scenario.indices_of(truth.iter().map(String::as_str))?;
    let score = |i: usize| normalized.site_stage1_score(i, weights.w_t, weights.w_u);
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    Ok(order)
}

#[derive(Clone, Debug)]
pub struct SftOutcome {
    pub params: Mlp,
    /// Mean per-step cross-entropy before each epoch's update, plus the
    /// final loss as the last entry.
    pub losses: Vec<f64>,
    pub scenarios_used: usize,
}

struct Demo {
    env: SelectionEnv,
    trajectory: Trajectory,
}

fn demos(scenarios: &[Scenario], weights: &RewardWeights, scorer: &dyn SemanticScorer) -> Result<Vec<Demo>> {
    let mut out = Vec::new();
    for s in scenarios {
        if s.ground_truth().is_none_or(|t| t.is_empty()) {
            continue;
        }
        let order = expert_order(s, weights)?;
        let mut demo_scenario = s.clone();
        demo_scenario.select_count = order.len();
        let grades = complaint_grades(&demo_scenario, scorer);
        let env = SelectionEnv::new(Arc::new(normalize_features(&demo_scenario)), &grades);
        out.push(Demo {
            env,
            trajectory: Trajectory {
                log_probs: vec![0.0; order.len()],
                actions: order,
                reward: None,
            },
        });
    }
    if out.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    Ok(out)
}

/// Mean cross-entropy over demos and the gradient of the mean expert
/// log-likelihood (its negation).
fn loss_and_ascent(params: &Mlp, demos: &[Demo]) -> Result<(f64, Mlp)> {
    let per_demo = demos
        .par_iter()
        .map(|d| {
            let steps = d.trajectory.actions.len() as f64;
            let coeffs = vec![1.0 / (steps * demos.len() as f64); d.trajectory.actions.len()];
            let (log_probs, grad) = log_prob_and_grad(params, &d.env, &d.trajectory, &coeffs)?;
            Ok((-log_probs.iter().sum::<f64>() / steps, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut total: Option<Mlp> = None;
    for (l, g) in per_demo {
        loss += l;
        match &mut total {
            None => total = Some(g),
            Some(acc) => acc.scaled_add(1.0, &g),
        }
    }
    Ok((loss / demos.len() as f64, total.expect("at least one demo")))
}

/// Full-batch behavior cloning of every scenario with a ground truth.
/// Scenarios without one are skipped; if none has one the error says to
/// skip pretraining.
pub fn sft_pretrain(
    scenarios: &[Scenario],
    init: &Mlp,
    config: &SftConfig,
    weights: &RewardWeights,
    scorer: &dyn SemanticScorer,
) -> Result<SftOutcome> {
    let demos = demos(scenarios, weights, scorer)?;
    let mut params = init.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for _ in 0..config.epochs {
        let (loss, grad) = loss_and_ascent(&params, &demos)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("behavior cloning loss".into()));
        }
        losses.push(loss);
        optimizer.ascend(&mut params, &grad);
    }
    losses.push(loss_and_ascent(&params, &demos)?.0);
    Ok(SftOutcome {
        params,
        losses,
        scenarios_used: demos.len(),
    })
}
