//! Staged rewards for a completed selection.
//!
//! A selection is scored from five set-level terms: mean normalized
//! throughput `t`, mean normalized users `u`, mean complaint grade `m`
//! (objections positive, scaled to [-1, 1]), mean normalized rent `e`, and a
//! cluster term `k`. The stage reward is built recursively:
//!
//! ```text
//! stage 1: r1 = w_t·t + w_u·u
//! stage 2: r2 = w_s·r1 − w_m·m − w_e·e
//! stage 3: r3 = w_s·r2 + w_k·k
//! ```
//!
//! and combined with the semantic score as `R = w1·r + w2·score`.

mod remote;
mod scorer;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Point;
use crate::scenario::{NormalizedScenario, Scenario};

pub use remote::{parse_score, render_prompt, RemoteScorer, RemoteScorerConfig, SCORER_URL_ENV};
pub use scorer::{
    mock_complaint_score, mock_semantic_score, semantic_fractions, MockScorer, SemanticFractions,
    SemanticScorer, COMPLAINT_KEYWORDS,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::One, Stage::Two, Stage::Three];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::One => Some(Stage::Two),
            Stage::Two => Some(Stage::Three),
            Stage::Three => None,
        }
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            _ => Err(Error::Precondition(format!("invalid stage {v}"))),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_t: f64,
    pub w_u: f64,
    pub w_s: f64,
    pub w_m: f64,
    pub w_e: f64,
    pub w_k: f64,
    /// Weight of the stage reward in the combined reward.
    pub w1: f64,
    /// Weight of the semantic score in the combined reward.
    pub w2: f64,
    /// Cluster length scale, meters.
    pub sigma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_t: 10.0,
            w_u: 12.0,
            w_s: 0.2,
            w_m: 5.0,
            w_e: 4.0,
            w_k: 8.0,
            w1: 1.0,
            w2: 1.0,
            sigma: 500.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub t: f64,
    pub u: f64,
    pub m: f64,
    pub e: f64,
    pub k: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub terms: RewardTerms,
    pub stage: Stage,
    pub r: f64,
    pub llm_score: f64,
    pub combined: f64,
}

/// Mean over the selection of `exp(−d_nn/σ)`, where `d_nn` is the distance
/// to the nearest other selected site. Zero for a single site.
pub fn cluster_score(positions: &[Point], sigma: f64) -> f64 {
    if positions.len() < 2 {
        return 0.0;
    }
    let total: f64 = positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nearest = positions
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| p.distance(q))
                .fold(f64::INFINITY, f64::min);
            (-nearest / sigma).exp()
        })
        .sum();
    total / positions.len() as f64
}

pub fn selection_cluster_score(selection: &[usize], scenario: &Scenario, sigma: f64) -> f64 {
    let positions: Vec<Point> = selection
        .iter()
        .map(|&i| scenario.sites[i].position)
        .collect();
    cluster_score(&positions, sigma)
}

/// One application of the stage recursion: `previous` is the reward of the
/// preceding stage (ignored for stage 1).
pub fn stage_step(stage: Stage, previous: f64, terms: &RewardTerms, w: &RewardWeights) -> f64 {
    match stage {
        Stage::One => w.w_t * terms.t + w.w_u * terms.u,
        Stage::Two => w.w_s * previous - (w.w_m * terms.m + w.w_e * terms.e),
        Stage::Three => w.w_s * previous + w.w_k * terms.k,
    }
}

pub fn stage_reward(terms: &RewardTerms, stage: Stage, w: &RewardWeights) -> f64 {
    let mut r = 0.0;
    for s in Stage::ALL.into_iter().take_while(|&s| s <= stage) {
        r = stage_step(s, r, terms, w);
    }
    r
}

/// `w1·r + w2·llm`, with `llm` clamped into [0, 10]. The flag reports
/// whether clamping happened.
pub fn combined_reward(r: f64, llm_score: f64, w: &RewardWeights) -> (f64, bool) {
    let clamped = if llm_score.is_nan() {
        0.0
    } else {
        llm_score.clamp(0.0, 10.0)
    };
    let was_clamped = clamped != llm_score;
    if was_clamped {
        log::warn!("semantic score {llm_score} outside [0, 10], clamped to {clamped}");
    }
    (w.w1 * r + w.w2 * clamped, was_clamped)
}

/// Per-site complaint grade divided by 10, in [-1, 1].
pub fn complaint_grades(scenario: &Scenario, scorer: &dyn SemanticScorer) -> Vec<f64> {
    scenario
        .sites
        .iter()
        .map(|s| scorer.score_complaint(&s.complaints_text).clamp(-10.0, 10.0) / 10.0)
        .collect()
}

/// Aggregates the set terms from precomputed complaint grades.
pub fn set_terms_with_grades(
    selection: &[usize],
    normalized: &NormalizedScenario,
    grades: &[f64],
    sigma: f64,
) -> RewardTerms {
    let n = selection.len() as f64;
    let mean = |v: &[f64]| selection.iter().map(|&i| v[i]).sum::<f64>() / n;
    RewardTerms {
        t: mean(&normalized.throughput),
        u: mean(&normalized.users),
        m: mean(grades),
        e: mean(&normalized.expense),
        k: selection_cluster_score(selection, &normalized.scenario, sigma),
    }
}

/// Set-level reward terms for a selection of site ids.
pub fn set_terms(
    selection: &[&str],
    normalized: &NormalizedScenario,
    scorer: &dyn SemanticScorer,
    sigma: f64,
) -> Result<RewardTerms> {
    if selection.is_empty() {
        return Err(Error::Precondition("selection must be non-empty".into()));
    }
    let indices = normalized.scenario.indices_of(selection.iter().copied())?;
    let grades = complaint_grades(&normalized.scenario, scorer);
    Ok(set_terms_with_grades(&indices, normalized, &grades, sigma))
}

/// Scores selections of one scenario. Semantic scores are cached per unique
/// selection for the lifetime of the model.
pub struct RewardModel {
    normalized: Arc<NormalizedScenario>,
    weights: RewardWeights,
    scorer: Arc<dyn SemanticScorer>,
    grades: Vec<f64>,
    cache: Mutex<HashMap<Vec<usize>, f64>>,
    clamps: AtomicU64,
}

impl RewardModel {
    pub fn new(
        normalized: Arc<NormalizedScenario>,
        weights: RewardWeights,
        scorer: Arc<dyn SemanticScorer>,
    ) -> Self {
        let grades = complaint_grades(&normalized.scenario, scorer.as_ref());
        Self {
            normalized,
            weights,
            scorer,
            grades,
            cache: Mutex::new(HashMap::new()),
            clamps: AtomicU64::new(0),
        }
    }

    pub fn weights(&self) -> &RewardWeights {
        &self.weights
    }

    pub fn normalized(&self) -> &NormalizedScenario {
        &self.normalized
    }

    /// Complaint grades (score/10) per site.
    pub fn grades(&self) -> &[f64] {
        &self.grades
    }

    pub fn terms(&self, selection: &[usize]) -> RewardTerms {
        set_terms_with_grades(selection, &self.normalized, &self.grades, self.weights.sigma)
    }

    pub fn semantic_score(&self, selection: &[usize]) -> f64 {
        let mut key = selection.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.lock().expect("score cache poisoned").get(&key) {
            return v;
        }
        let v = self
            .scorer
            .score_selection(selection, &self.normalized.scenario);
        self.cache
            .lock()
            .expect("score cache poisoned")
            .insert(key, v);
        v
    }

    pub fn evaluate(&self, selection: &[usize], stage: Stage) -> Result<RewardBreakdown> {
        if selection.is_empty() {
            return Err(Error::Precondition("selection must be non-empty".into()));
        }
        if let Some(&bad) = selection.iter().find(|&&i| i >= self.normalized.len()) {
            return Err(Error::Contract(format!("site index {bad} out of range")));
        }
        let terms = self.terms(selection);
        let r = stage_reward(&terms, stage, &self.weights);
        let llm = self.semantic_score(selection);
        let (combined, clamped) = combined_reward(r, llm, &self.weights);
        if clamped {
            self.clamps.fetch_add(1, Ordering::Relaxed);
        }
        Ok(RewardBreakdown {
            terms,
            stage,
            r,
            llm_score: llm.clamp(0.0, 10.0),
            combined,
        })
    }

    pub fn fallback_count(&self) -> u64 {
        self.scorer.fallback_count()
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }
}
