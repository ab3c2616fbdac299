//! Per-candidate state features.
//!
//! Each unselected candidate is described by ten numbers:
//!
//! | idx | feature                                                     |
//! |-----|-------------------------------------------------------------|
//! | 0   | normalized throughput                                       |
//! | 1   | normalized users                                            |
//! | 2   | normalized rent                                             |
//! | 3   | complaint grade / 10, in [-1, 1]                            |
//! | 4   | key area flag                                               |
//! | 5,6 | position scaled to the bounding box                         |
//! | 7   | distance to nearest selected site / bbox diagonal (1 if none)|
//! | 8   | selected count / k                                          |
//! | 9   | remaining candidate count / n                               |

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scenario::NormalizedScenario;

pub const FEATURE_DIM: usize = 10;
const STATIC_DIM: usize = 7;

/// Immutable per-scenario data needed to build states.
#[derive(Clone, Debug)]
pub struct SelectionEnv {
    normalized: Arc<NormalizedScenario>,
    static_features: Array2<f64>,
    diagonal: f64,
}

impl SelectionEnv {
    /// `grades` are per-site complaint scores divided by 10.
    pub fn new(normalized: Arc<NormalizedScenario>, grades: &[f64]) -> Self {
        let n = normalized.len();
        assert_eq!(grades.len(), n, "one complaint grade per site");
        let scenario = &normalized.scenario;
        let mut static_features = Array2::zeros((n, STATIC_DIM));
        for (i, site) in scenario.sites.iter().enumerate() {
            let (x, y) = scenario.bbox.unit_coords(&site.position);
            let row = [
                normalized.throughput[i],
                normalized.users[i],
                normalized.expense[i],
                grades[i].clamp(-1.0, 1.0),
                if site.key_area { 1.0 } else { 0.0 },
                x,
                y,
            ];
            for (j, v) in row.into_iter().enumerate() {
                static_features[[i, j]] = v;
            }
        }
        Self {
            diagonal: scenario.bbox.diagonal(),
            normalized,
            static_features,
        }
    }

    pub fn normalized(&self) -> &NormalizedScenario {
        &self.normalized
    }

    pub fn normalized_arc(&self) -> &Arc<NormalizedScenario> {
        &self.normalized
    }

    pub fn len(&self) -> usize {
        self.normalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normalized.is_empty()
    }

    pub fn select_count(&self) -> usize {
        self.normalized.select_count()
    }

    pub fn start(&self) -> SelectionState {
        SelectionState {
            selected: vec![false; self.len()],
            order: Vec::with_capacity(self.select_count()),
            nearest: vec![f64::INFINITY; self.len()],
        }
    }

    fn dist_feature(&self, meters: f64) -> f64 {
        if !meters.is_finite() {
            1.0
        } else if self.diagonal > 0.0 {
            (meters / self.diagonal).min(1.0)
        } else {
            0.0
        }
    }

    /// Writes the feature rows of the available candidates of `state` into
    /// `out` (appending), returning the candidate indices in row order.
    pub fn write_features(&self, state: &SelectionState, out: &mut Vec<f64>) -> Vec<usize> {
        let n = self.len();
        let k = self.select_count().max(1);
        let chosen = state.order.len();
        let selected_frac = chosen as f64 / k as f64;
        let remaining_frac = (n - chosen) as f64 / n as f64;
        let mut available = Vec::with_capacity(n - chosen);
        for i in (0..n).filter(|&i| !state.selected[i]) {
            out.extend(self.static_features.row(i).iter());
            out.push(self.dist_feature(state.nearest[i]));
            out.push(selected_frac);
            out.push(remaining_frac);
            available.push(i);
        }
        available
    }

    /// Feature matrix of the available candidates.
    pub fn features(&self, state: &SelectionState) -> (Array2<f64>, Vec<usize>) {
        let mut buf = Vec::new();
        let available = self.write_features(state, &mut buf);
        let rows = available.len();
        (
            Array2::from_shape_vec((rows, FEATURE_DIM), buf).expect("row-major feature buffer"),
            available,
        )
    }

    /// Feature rows for every candidate (selected ones included), in site
    /// order. Useful to inspect the scorer on the whole pool.
    pub fn full_features(&self, state: &SelectionState) -> Array2<f64> {
        let n = self.len();
        let k = self.select_count().max(1);
        let chosen = state.order.len();
        let mut out = Array2::zeros((n, FEATURE_DIM));
        for i in 0..n {
            for j in 0..STATIC_DIM {
                out[[i, j]] = self.static_features[[i, j]];
            }
            out[[i, 7]] = self.dist_feature(state.nearest[i]);
            out[[i, 8]] = chosen as f64 / k as f64;
            out[[i, 9]] = (n - chosen) as f64 / n as f64;
        }
        out
    }

    /// Marks `site` selected and updates nearest-selected distances.
    pub fn apply(&self, state: &mut SelectionState, site: usize) -> Result<()> {
        if site >= self.len() {
            return Err(Error::Contract(format!("site index {site} out of range")));
        }
        if state.selected[site] {
            return Err(Error::Contract(format!("site {site} selected twice")));
        }
        state.selected[site] = true;
        state.order.push(site);
        let sites = &self.normalized.scenario.sites;
        let p = sites[site].position;
        for (i, d) in state.nearest.iter_mut().enumerate() {
            let dist = sites[i].position.distance(&p);
            if dist < *d {
                *d = dist;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionState {
    pub selected: Vec<bool>,
    pub order: Vec<usize>,
    /// Distance to the nearest selected site, meters; infinite when none.
    pub nearest: Vec<f64>,
}

impl SelectionState {
    pub fn available_count(&self) -> usize {
        self.selected.len() - self.order.len()
    }
}
