//! Group-relative advantages, ratio clipping, categorical KL and the
//! clipped surrogate objective with its exact parameter gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{BatchEval, Mlp, PolicyParams, SelectionEnv, StepBatch, Trajectory};

/// Standard deviations below this are treated as zero.
pub const ADVANTAGE_STD_FLOOR: f64 = 1e-8;

/// `(R_i − mean R) / std R` with the population standard deviation. All
/// zeros when the rewards are (numerically) constant.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::Precondition(format!(
            "group advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ADVANTAGE_STD_FLOOR {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `max(min(r, 1 + ε), 1 − ε)`.
pub fn clip_ratio(ratio: f64, epsilon: f64) -> f64 {
    ratio.min(1.0 + epsilon).max(1.0 - epsilon)
}

/// `Σ p ln(p / q)` with `0 · ln(0 / q) = 0`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Contract(format!(
            "KL between distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::Contract("q has no mass where p does".into()));
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// KL between two distributions given as log-probabilities over the same
/// support.
fn kl_from_logs(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| {
            let p = lp.exp();
            if p > 0.0 {
                p * (lp - lq)
            } else {
                0.0
            }
        })
        .sum()
}

/// `min(ratio·A, clip(ratio)·A)` and whether the unclipped branch is the
/// active one (and so carries gradient).
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = clip_ratio(ratio, epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

/// Per-step baseline-corrected advantages for one trajectory.
#[derive(Clone, Debug)]
pub enum StepAdvantages<'a> {
    /// One value broadcast to every step.
    Outcome(f64),
    PerStep(&'a [f64]),
}

impl StepAdvantages<'_> {
    fn at(&self, t: usize) -> f64 {
        match self {
            StepAdvantages::Outcome(a) => *a,
            StepAdvantages::PerStep(v) => v[t],
        }
    }
}

#[derive(Clone, Debug)]
pub struct SurrogateSettings {
    pub epsilon: f64,
    /// KL coefficient; zero disables the reference term.
    pub beta: f64,
}

/// Objective value, diagnostics and gradient for one group.
#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub objective: f64,
    /// Mean surrogate term over trajectories (each averaged over its steps).
    pub surrogate: f64,
    /// Mean per-step KL to the reference.
    pub mean_kl: f64,
    /// Fraction of steps where the clipped branch was active.
    pub clip_fraction: f64,
    pub grad: Option<Mlp>,
}

struct TrajectoryTerms {
    surrogate: f64,
    kl_sum: f64,
    steps: usize,
    clipped: usize,
    grad: Option<Mlp>,
}

fn trajectory_terms(
    params: &PolicyParams,
    reference: Option<&PolicyParams>,
    env: &SelectionEnv,
    trajectory: &Trajectory,
    advantage: &StepAdvantages<'_>,
    settings: &SurrogateSettings,
    scale: f64,
    with_grad: bool,
) -> Result<TrajectoryTerms> {
    let batch = StepBatch::replay(env, &trajectory.actions)?;
    if trajectory.log_probs.len() != batch.steps() {
        return Err(Error::Contract("one old log-probability per step required".into()));
    }
    let eval = BatchEval::new(params, &batch, with_grad);
    let ref_eval = reference
        .filter(|_| settings.beta != 0.0)
        .map(|r| BatchEval::new(r, &batch, false));
    let steps = batch.steps();
    let inv_steps = 1.0 / steps as f64;
    let mut d_logits = vec![0.0; if with_grad { eval.log_probs.len() } else { 0 }];
    let mut surrogate = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped = 0;
    for (t, seg) in batch.segments.iter().enumerate() {
        let range = seg.start..seg.start + seg.len;
        let log_p = &eval.log_probs[range.clone()];
        let adv = advantage.at(t);
        let ratio = (log_p[seg.action] - trajectory.log_probs[t]).exp();
        let (surr, active) = clipped_surrogate(ratio, adv, settings.epsilon);
        surrogate += surr;
        clipped += usize::from(!active);
        let kl = match &ref_eval {
            Some(r) => kl_from_logs(log_p, &r.log_probs[range.clone()]),
            None => 0.0,
        };
        kl_sum += kl;
        if with_grad {
            let w = scale * inv_steps;
            let d = &mut d_logits[range.clone()];
            if active && adv != 0.0 {
                // d(ratio·A)/dz_j = ratio·A·([j = a] − p_j)
                for (j, g) in d.iter_mut().enumerate() {
                    let p = log_p[j].exp();
                    *g += w * ratio * adv * (if j == seg.action { 1.0 } else { 0.0 } - p);
                }
            }
            if let Some(r) = &ref_eval {
                // dKL/dz_j = p_j (ln p_j − ln q_j − KL)
                let log_q = &r.log_probs[range];
                for (j, g) in d.iter_mut().enumerate() {
                    let p = log_p[j].exp();
                    *g -= w * settings.beta * p * (log_p[j] - log_q[j] - kl);
                }
            }
        }
    }
    let grad = with_grad.then(|| eval.backward(params, &d_logits));
    Ok(TrajectoryTerms {
        surrogate: surrogate * inv_steps,
        kl_sum,
        steps,
        clipped,
        grad,
    })
}

/// Evaluates
///
/// ```text
/// J = 1/G Σ_i 1/|s_i| Σ_t [ min(ρ_it A_it, clip(ρ_it, 1−ε, 1+ε) A_it) − β KL(π_θ(·|s_it) ‖ π_ref(·|s_it)) ]
/// ```
///
/// for trajectories sampled under the policy whose log-probabilities they
/// carry. Gradients of individual trajectories are reduced in input order.
pub fn surrogate_objective(
    params: &PolicyParams,
    reference: Option<&PolicyParams>,
    env: &SelectionEnv,
    trajectories: &[Trajectory],
    advantages: &[StepAdvantages<'_>],
    settings: &SurrogateSettings,
    with_grad: bool,
) -> Result<ObjectiveEval> {
    if trajectories.is_empty() || trajectories.len() != advantages.len() {
        return Err(Error::Contract(
            "one advantage entry per trajectory, at least one trajectory".into(),
        ));
    }
    let scale = 1.0 / trajectories.len() as f64;
    let terms: Vec<TrajectoryTerms> = trajectories
        .par_iter()
        .zip(advantages.par_iter())
        .map(|(t, a)| trajectory_terms(params, reference, env, t, a, settings, scale, with_grad))
        .collect::<Result<_>>()?;

    let mut surrogate = 0.0;
    let mut kl_per_traj = 0.0;
    let mut kl_total = 0.0;
    let mut steps = 0usize;
    let mut clipped = 0usize;
    let mut grad: Option<Mlp> = None;
    for t in terms {
        surrogate += t.surrogate;
        kl_per_traj += t.kl_sum / t.steps as f64;
        kl_total += t.kl_sum;
        steps += t.steps;
        clipped += t.clipped;
        if let Some(g) = t.grad {
            match &mut grad {
                None => grad = Some(g),
                Some(acc) => acc.scaled_add(1.0, &g),
            }
        }
    }
    let surrogate = surrogate * scale;
    let objective = surrogate - settings.beta * kl_per_traj * scale;
    Ok(ObjectiveEval {
        objective,
        surrogate,
        mean_kl: kl_total / steps as f64,
        clip_fraction: clipped as f64 / steps as f64,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[1.0, 2.0, 3.0]).unwrap();
        let expected = [-1.224745, 0.0, 1.224745];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(group_advantages(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(group_advantages(&[0.0, 10.0]).unwrap(), vec![-1.0, 1.0]);
    }

    #[test]
    fn advantages_need_two_rewards() {
        assert!(matches!(group_advantages(&[1.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_ratio(1.5, 0.2), 1.2);
        assert_eq!(clip_ratio(1.0, 0.2), 1.0);
        assert_eq!(clip_ratio(0.5, 0.2), 0.8);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_categorical(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let kl = kl_categorical(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-12);
        let kl = kl_categorical(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((kl - 0.510826).abs() < 1e-6);
    }

    #[test]
    fn kl_support_mismatch_is_rejected() {
        assert!(kl_categorical(&[0.5, 0.5], &[1.0]).is_err());
        assert!(kl_categorical(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn surrogate_picks_pessimistic_branch() {
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), (1.2, false));
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2), (-1.5, true));
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2), (0.5, true));
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), (-0.8, false));
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.2), (2.0, true));
    }
}
