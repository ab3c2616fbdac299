//! Candidate sites, scenarios and feature normalization.
//!
//! A [`Scenario`] is the candidate pool the planner chooses from together
//! with the number of sites to select. Positions are planar meters relative
//! to a [`GeoAnchor`]; the anchor lets plans be exported back to lon/lat.

mod generate;
mod io;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BBox, GeoAnchor, Point};

pub use generate::{generate_scenario, Profile, DEFAULT_ANCHOR};
pub use io::{load_scenario, save_scenario, ColumnMapping, CANONICAL_COLUMNS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSite {
    pub id: String,
    pub position: Point,
    /// Mbps.
    pub throughput: f64,
    pub users: u64,
    /// Currency units per year.
    pub rent: f64,
    pub key_area: bool,
    pub complaints_text: String,
    pub marketer_text: String,
    pub region_text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sites: Vec<CandidateSite>,
    pub select_count: usize,
    pub bbox: BBox,
    pub anchor: GeoAnchor,
    /// Ground truth planted by the synthetic generator.
    pub planted_optimum: Option<BTreeSet<String>>,
    /// Sites actually built, when ingested from a dataset.
    pub actual_built: Option<BTreeSet<String>>,
}

impl Scenario {
    /// Builds a scenario with a tight bounding box around the sites.
    pub fn new(sites: Vec<CandidateSite>, select_count: usize, anchor: GeoAnchor) -> Self {
        let bbox = BBox::from_points(sites.iter().map(|s| &s.position));
        Self {
            sites,
            select_count,
            bbox,
            anchor,
            planted_optimum: None,
            actual_built: None,
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Ground-truth selection: the planted optimum if present, otherwise the
    /// actually built set.
    pub fn ground_truth(&self) -> Option<&BTreeSet<String>> {
        self.planted_optimum.as_ref().or(self.actual_built.as_ref())
    }

    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.sites
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Resolves ids to site indices, preserving the iteration order.
    pub fn indices_of<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<usize>> {
        let index = self.id_index();
        ids.into_iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::UnknownSite(id.to_string()))
            })
            .collect()
    }

    pub fn ids_of(&self, indices: &[usize]) -> BTreeSet<String> {
        indices.iter().map(|&i| self.sites[i].id.clone()).collect()
    }

    /// Validates and returns the scenario, turning the first violation into
    /// an error.
    pub fn validated(self) -> Result<Self> {
        let report = validate_scenario(&self);
        match report.into_iter().next() {
            None => Ok(self),
            Some(v) => Err(Error::Validation(v.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    DuplicateId(String),
    NegativeFeature { id: String, field: &'static str },
    NonFiniteFeature { id: String, field: &'static str },
    EmptySelection,
    SelectCountExceedsPool { select_count: usize, pool: usize },
    UnknownGroundTruthId { set: &'static str, id: String },
    GroundTruthSize {
        set: &'static str,
        size: usize,
        expected: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId(id) => write!(f, "duplicate site id '{id}'"),
            Violation::NegativeFeature { id, field } => {
                write!(f, "site '{id}': {field} must be non-negative")
            }
            Violation::NonFiniteFeature { id, field } => {
                write!(f, "site '{id}': {field} must be finite")
            }
            Violation::EmptySelection => write!(f, "select_count must be at least 1"),
            Violation::SelectCountExceedsPool { select_count, pool } => write!(
                f,
                "select_count exceeds pool ({select_count} > {pool} candidates)"
            ),
            Violation::UnknownGroundTruthId { set, id } => {
                write!(f, "{set} references unknown site id '{id}'")
            }
            Violation::GroundTruthSize {
                set,
                size,
                expected,
            } => write!(f, "{set} has {size} sites, expected select_count = {expected}"),
        }
    }
}

/// Lists every violated scenario invariant. An empty report means valid.
pub fn validate_scenario(scenario: &Scenario) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for site in &scenario.sites {
        if !seen.insert(site.id.as_str()) {
            out.push(Violation::DuplicateId(site.id.clone()));
        }
        for (field, value) in [("throughput", site.throughput), ("rent", site.rent)] {
            if !value.is_finite() {
                out.push(Violation::NonFiniteFeature {
                    id: site.id.clone(),
                    field,
                });
            } else if value < 0.0 {
                out.push(Violation::NegativeFeature {
                    id: site.id.clone(),
                    field,
                });
            }
        }
        if !(site.position.x.is_finite() && site.position.y.is_finite()) {
            out.push(Violation::NonFiniteFeature {
                id: site.id.clone(),
                field: "position",
            });
        }
    }
    if scenario.select_count == 0 {
        out.push(Violation::EmptySelection);
    } else if scenario.select_count > scenario.sites.len() {
        out.push(Violation::SelectCountExceedsPool {
            select_count: scenario.select_count,
            pool: scenario.sites.len(),
        });
    }
    for (set, ids) in [
        ("planted_optimum", &scenario.planted_optimum),
        ("actual_built", &scenario.actual_built),
    ] {
        let Some(ids) = ids else { continue };
        for id in ids {
            if !seen.contains(id.as_str()) {
                out.push(Violation::UnknownGroundTruthId {
                    set,
                    id: id.clone(),
                });
            }
        }
        if ids.len() != scenario.select_count {
            out.push(Violation::GroundTruthSize {
                set,
                size: ids.len(),
                expected: scenario.select_count,
            });
        }
    }
    out
}

/// Min/max of one raw feature over the candidate pool.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub min: f64,
    pub max: f64,
}

impl FeatureBounds {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) = values
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        Self { min, max }
    }

    /// Min-max scaling; a constant feature maps to 0.
    pub fn normalize(&self, value: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            (value - self.min) / span
        } else {
            0.0
        }
    }

    pub fn denormalize(&self, scaled: f64) -> f64 {
        self.min + scaled * (self.max - self.min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationBounds {
    pub throughput: FeatureBounds,
    pub users: FeatureBounds,
    pub rent: FeatureBounds,
}

/// A scenario with per-site features scaled to [0,1] over the pool.
#[derive(Clone, Debug)]
pub struct NormalizedScenario {
    pub scenario: Scenario,
    /// Normalized throughput per site.
    pub throughput: Vec<f64>,
    /// Normalized user count per site.
    pub users: Vec<f64>,
    /// Normalized rent (expense) per site.
    pub expense: Vec<f64>,
    pub bounds: NormalizationBounds,
}

impl NormalizedScenario {
    pub fn len(&self) -> usize {
        self.scenario.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenario.sites.is_empty()
    }

    pub fn select_count(&self) -> usize {
        self.scenario.select_count
    }

    /// Weighted stage-one desirability of a single site.
    pub fn site_stage1_score(&self, site: usize, w_t: f64, w_u: f64) -> f64 {
        w_t * self.throughput[site] + w_u * self.users[site]
    }

    /// Recovers the raw `(throughput, users, rent)` of a site from the
    /// normalized values and the stored bounds.
    pub fn denormalized(&self, site: usize) -> (f64, f64, f64) {
        (
            self.bounds.throughput.denormalize(self.throughput[site]),
            self.bounds.users.denormalize(self.users[site]),
            self.bounds.rent.denormalize(self.expense[site]),
        )
    }
}

pub fn normalize_features(scenario: &Scenario) -> NormalizedScenario {
    let bounds = NormalizationBounds {
        throughput: FeatureBounds::of(scenario.sites.iter().map(|s| s.throughput)),
        users: FeatureBounds::of(scenario.sites.iter().map(|s| s.users as f64)),
        rent: FeatureBounds::of(scenario.sites.iter().map(|s| s.rent)),
    };
    let scale = |b: &FeatureBounds, f: &dyn Fn(&CandidateSite) -> f64| {
        scenario
            .sites
            .iter()
            .map(|s| b.normalize(f(s)))
            .collect::<Vec<_>>()
    };
    NormalizedScenario {
        throughput: scale(&bounds.throughput, &|s| s.throughput),
        users: scale(&bounds.users, &|s| s.users as f64),
        expense: scale(&bounds.rent, &|s| s.rent),
        bounds,
        scenario: scenario.clone(),
    }
}
