//! The selection policy.
//!
//! One MLP scores every remaining candidate from its own feature row; a
//! softmax over the unselected candidates gives the action distribution.
//! Sharing the scorer across candidates makes the policy independent of the
//! pool size and equivariant to candidate order, unlike a fixed-width output
//! head over a 1,000-site pool, which would tie a trained model to one
//! candidate list and one ordering.

mod checkpoint;
mod mlp;
mod state;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_FORMAT};
pub use mlp::{Dense, ForwardCache, Mlp, HIDDEN_LAYERS, HIDDEN_WIDTH};
pub use state::{SelectionEnv, SelectionState, FEATURE_DIM};

pub type PolicyParams = Mlp;

pub fn init_policy(feature_dim: usize, seed: u64) -> Result<PolicyParams> {
    if feature_dim == 0 {
        return Err(Error::Precondition("feature_dim must be at least 1".into()));
    }
    Ok(Mlp::new(feature_dim, seed))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Action distribution over all candidates. `features` has one row per
/// candidate; candidates flagged in `selected` get probability exactly 0.
pub fn forward(params: &PolicyParams, features: ArrayView2<f64>, selected: &[bool]) -> Result<Vec<f64>> {
    if features.nrows() != selected.len() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} mask entries",
            features.nrows(),
            selected.len()
        )));
    }
    let open: Vec<usize> = (0..selected.len()).filter(|&i| !selected[i]).collect();
    if open.is_empty() {
        return Err(Error::Contract("every candidate is masked".into()));
    }
    let rows = features.select(ndarray::Axis(0), &open);
    let logits = params.forward(rows.view());
    let probs = softmax(logits.as_slice().expect("contiguous logits"));
    let mut out = vec![0.0; selected.len()];
    for (&i, p) in open.iter().zip(probs) {
        out[i] = p;
    }
    Ok(out)
}

/// Inverse-CDF draw over the given order. Zero-probability entries are
/// never returned.
pub fn sample_action<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last_positive = None;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last_positive = Some(i);
            if u < cum {
                return i;
            }
        }
    }
    last_positive.expect("distribution with positive mass")
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Site indices in selection order.
    pub actions: Vec<usize>,
    /// Log-probability of each action under the sampling policy.
    pub log_probs: Vec<f64>,
    pub reward: Option<RewardBreakdown>,
}

/// Samples one complete selection of `k` sites.
pub fn rollout<R: Rng + ?Sized>(params: &PolicyParams, env: &SelectionEnv, rng: &mut R) -> Trajectory {
    let k = env.select_count();
    let mut state = env.start();
    let mut log_probs = Vec::with_capacity(k);
    let mut buf = Vec::new();
    for _ in 0..k {
        buf.clear();
        let available = env.write_features(&state, &mut buf);
        let x = ArrayView2::from_shape((available.len(), FEATURE_DIM), &buf).expect("feature rows");
        let logits = params.forward(x);
        let logits = logits.as_slice().expect("contiguous logits");
        let probs = softmax(logits);
        let pick = sample_action(&probs, rng);
        log_probs.push(log_softmax(logits)[pick]);
        env.apply(&mut state, available[pick]).expect("sampled site is available");
    }
    Trajectory {
        actions: state.order,
        log_probs,
        reward: None,
    }
}

/// Deterministic plan: the most probable candidate at every step, ties to
/// the lowest site index.
pub fn decode_greedy(params: &PolicyParams, env: &SelectionEnv) -> Vec<usize> {
    let mut state = env.start();
    for _ in 0..env.select_count() {
        let (x, available) = env.features(&state);
        let logits = params.forward(x.view());
        let pick = argmax(logits.as_slice().expect("contiguous logits"));
        env.apply(&mut state, available[pick]).expect("available site");
    }
    state.order
}

/// Rows belonging to one decision step inside a [`StepBatch`].
#[derive(Clone, Debug)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    /// Row of the chosen action, relative to `start`.
    pub action: usize,
    /// Candidate site index of each row.
    pub candidates: Vec<usize>,
}

/// Every state visited by a trajectory, stacked into one feature matrix.
#[derive(Clone, Debug)]
pub struct StepBatch {
    pub features: Array2<f64>,
    pub segments: Vec<Segment>,
}

impl StepBatch {
    /// Rebuilds the states of a selection order.
    pub fn replay(env: &SelectionEnv, actions: &[usize]) -> Result<Self> {
        if actions.len() != env.select_count() {
            return Err(Error::Contract(format!(
                "trajectory has {} actions, scenario selects {}",
                actions.len(),
                env.select_count()
            )));
        }
        let mut state = env.start();
        let mut buf = Vec::new();
        let mut segments = Vec::with_capacity(actions.len());
        for &a in actions {
            let start = buf.len() / FEATURE_DIM;
            let candidates = env.write_features(&state, &mut buf);
            let action = candidates
                .iter()
                .position(|&c| c == a)
                .ok_or_else(|| Error::Contract(format!("action {a} is not available")))?;
            segments.push(Segment {
                start,
                len: candidates.len(),
                action,
                candidates,
            });
            env.apply(&mut state, a)?;
        }
        let rows = buf.len() / FEATURE_DIM;
        Ok(Self {
            features: Array2::from_shape_vec((rows, FEATURE_DIM), buf).expect("feature rows"),
            segments,
        })
    }

    pub fn steps(&self) -> usize {
        self.segments.len()
    }

    /// Mean feature row of each step, one row per step.
    pub fn pooled_features(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.segments.len(), self.features.ncols()));
        for (t, seg) in self.segments.iter().enumerate() {
            let rows = mlp::rows(&self.features, seg.start, seg.len);
            out.row_mut(t)
                .assign(&rows.mean_axis(ndarray::Axis(0)).expect("non-empty segment"));
        }
        out
    }
}

/// Policy outputs over a [`StepBatch`].
pub struct BatchEval {
    pub logits: Array1<f64>,
    /// Per-row log-probability within its step.
    pub log_probs: Vec<f64>,
    pub cache: Option<ForwardCache>,
}

impl BatchEval {
    pub fn new(params: &PolicyParams, batch: &StepBatch, keep_cache: bool) -> Self {
        let (logits, cache) = if keep_cache {
            let (l, c) = params.forward_cached(batch.features.view());
            (l, Some(c))
        } else {
            (params.forward(batch.features.view()), None)
        };
        let mut log_probs = vec![0.0; logits.len()];
        let flat = logits.as_slice().expect("contiguous logits");
        for seg in &batch.segments {
            let lp = log_softmax(&flat[seg.start..seg.start + seg.len]);
            log_probs[seg.start..seg.start + seg.len].copy_from_slice(&lp);
        }
        Self {
            logits,
            log_probs,
            cache,
        }
    }

    pub fn action_log_probs(&self, batch: &StepBatch) -> Vec<f64> {
        batch
            .segments
            .iter()
            .map(|s| self.log_probs[s.start + s.action])
            .collect()
    }

    /// Gradient of `Σ_rows d_logits[row] · logit[row]`.
    pub fn backward(&self, params: &PolicyParams, d_logits: &[f64]) -> Mlp {
        let cache = self.cache.as_ref().expect("evaluation kept its forward cache");
        params.backward(cache, ndarray::ArrayView1::from(d_logits))
    }
}

/// Per-step log-probabilities under `params` and the gradient of
/// `Σ_t coeff_t · log π(a_t | s_t)`.
pub fn log_prob_and_grad(
    params: &PolicyParams,
    env: &SelectionEnv,
    trajectory: &Trajectory,
    coefficients: &[f64],
) -> Result<(Vec<f64>, Mlp)> {
    if coefficients.len() != trajectory.actions.len() {
        return Err(Error::Contract(format!(
            "{} coefficients for {} steps",
            coefficients.len(),
            trajectory.actions.len()
        )));
    }
    let batch = StepBatch::replay(env, &trajectory.actions)?;
    let eval = BatchEval::new(params, &batch, true);
    let mut d_logits = vec![0.0; eval.log_probs.len()];
    for (seg, &c) in batch.segments.iter().zip(coefficients) {
        // d log p_a / d z_j = [j = a] − p_j
        for j in 0..seg.len {
            let p = eval.log_probs[seg.start + j].exp();
            d_logits[seg.start + j] = c * (if j == seg.action { 1.0 } else { 0.0 } - p);
        }
    }
    let grad = eval.backward(params, &d_logits);
    Ok((eval.action_log_probs(&batch), grad))
}
