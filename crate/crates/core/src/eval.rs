//! Plan quality: overlap with a reference selection, non-learned baseline
//! planners, run comparison and GeoJSON export.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coverage::{coverage_stats, rsrp_grid, CoverageStats, GridSpec, RadioConfig};
use crate::error::{Error, Result};
use crate::geo::Point;
use crate::reward::{RewardModel, Stage};
use crate::scenario::{NormalizedScenario, Scenario};
use crate::train::TrainHistory;

/// `|planned ∩ reference| / |planned|` for equal-sized, non-empty sets.
pub fn overlap(planned: &BTreeSet<String>, reference: &BTreeSet<String>) -> Result<f64> {
    if planned.is_empty() || planned.len() != reference.len() {
        return Err(Error::Precondition(format!(
            "overlap needs equal non-empty sets, got {} and {}",
            planned.len(),
            reference.len()
        )));
    }
    Ok(planned.intersection(reference).count() as f64 / planned.len() as f64)
}

/// Adds, one at a time, the site that maximizes the stage-3 combined reward
/// of the augmented set. Ties go to the lowest index.
pub fn plan_greedy(model: &RewardModel) -> Result<Vec<usize>> {
    let n = model.normalized().len();
    let k = model.normalized().select_count();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut used = vec![false; n];
    let mut trial = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..n).filter(|&i| !used[i]) {
            trial.clear();
            trial.extend_from_slice(&chosen);
            trial.push(i);
            let r = model.evaluate(&trial, Stage::Three)?.combined;
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        let (i, _) = best.ok_or_else(|| Error::Precondition("fewer sites than select_count".into()))?;
        used[i] = true;
        chosen.push(i);
    }
    Ok(chosen)
}

fn nearest_available(p: &Point, positions: &[Point], taken: &[bool]) -> Option<usize> {
    positions
        .iter()
        .enumerate()
        .filter(|&(i, _)| !taken[i])
        .min_by(|(_, a), (_, b)| a.distance(p).total_cmp(&b.distance(p)))
        .map(|(i, _)| i)
}

fn weighted_pick<R: Rng>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = Some(i);
            if u < w {
                return Some(i);
            }
            u -= w;
        }
    }
    last
}

const KMEANS_ITERATIONS: usize = 100;

/// Weighted k-means over site positions (weights û, uniform when all are
/// zero) with k-means++ seeding and 100 Lloyd iterations; returns the site
/// nearest each centroid, next-nearest on collisions.
pub fn plan_kmeans(normalized: &NormalizedScenario, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = normalized.len();
    if k == 0 || k > n {
        return Err(Error::Precondition(format!("k-means needs 1 ≤ k ≤ {n}, got {k}")));
    }
    let positions: Vec<Point> = normalized.scenario.sites.iter().map(|s| s.position).collect();
    let mut weights = normalized.users.clone();
    if weights.iter().all(|&w| w <= 0.0) {
        weights = vec![1.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Point> = Vec::with_capacity(k);
    let first = weighted_pick(&weights, &mut rng).expect("positive total weight");
    centroids.push(positions[first]);
    let mut d2: Vec<f64> = positions.iter().map(|p| p.distance(&centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(&weights).map(|(d, w)| d * w).collect();
        let pick = weighted_pick(&scores, &mut rng)
            .or_else(|| weighted_pick(&d2, &mut rng))
            .unwrap_or_else(|| rng.gen_range(0..n));
        let c = positions[pick];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(&positions) {
            *d = d.min(p.distance(&c).powi(2));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (i, p) in positions.iter().enumerate() {
            let nearest = (0..k)
                .min_by(|&a, &b| p.distance(&centroids[a]).total_cmp(&p.distance(&centroids[b])))
                .expect("k ≥ 1");
            if assignment[i] != nearest {
                assignment[i] = nearest;
                changed = true;
            }
        }
        let mut sums = vec![(0.0, 0.0, 0.0); k];
        for ((p, &c), &w) in positions.iter().zip(&assignment).zip(&weights) {
            sums[c].0 += w * p.x;
            sums[c].1 += w * p.y;
            sums[c].2 += w;
        }
        for (c, (sx, sy, sw)) in centroids.iter_mut().zip(sums) {
            if sw > 0.0 {
                *c = Point { x: sx / sw, y: sy / sw };
            }
        }
        if !changed {
            break;
        }
    }

    let mut taken = vec![false; n];
    let mut plan = Vec::with_capacity(k);
    for c in &centroids {
        let i = nearest_available(c, &positions, &taken).expect("k ≤ n");
        taken[i] = true;
        plan.push(i);
    }
    Ok(plan)
}

/// Uniform random `k`-subset, sorted.
pub fn plan_random(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Precondition(format!("random plan needs 1 ≤ k ≤ {n}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = sample(&mut rng, n, k).into_vec();
    v.sort_unstable();
    Ok(v)
}

/// One finished run to be compared.
#[derive(Clone, Debug)]
pub struct RunInput {
    pub algorithm: String,
    pub seed: u64,
    /// File the history was read from, if any.
    pub source: Option<String>,
    pub history: TrainHistory,
    /// Selected site ids of the run's final plan.
    pub plan: Option<BTreeSet<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub algorithm: String,
    pub seed: u64,
    pub source: Option<String>,
    pub iterations: usize,
    pub final_mean_reward: f64,
    pub overlap: Option<f64>,
    pub coverage: Option<CoverageStats>,
    pub curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub algorithm: String,
    pub runs: usize,
    pub mean_final_reward: f64,
    /// Population standard deviation over seeds.
    pub std_final_reward: f64,
    pub mean_overlap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub window: usize,
    pub runs: Vec<RunRow>,
    pub panel: Vec<PanelRow>,
}

#[derive(Clone, Debug)]
pub struct CompareSettings {
    /// Final-window length for the reward summary.
    pub window: usize,
    pub radio: RadioConfig,
    pub cell_size: f64,
    /// Grid margin around the scenario's sites.
    pub margin: f64,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            window: 50,
            radio: RadioConfig::default(),
            cell_size: 20.0,
            margin: 200.0,
        }
    }
}

/// Coverage of a plan on a grid spanning all candidate sites.
pub fn plan_coverage(plan: &[usize], scenario: &Scenario, settings: &CompareSettings) -> Result<(GridSpec, CoverageStats)> {
    let all: Vec<Point> = scenario.sites.iter().map(|s| s.position).collect();
    let spec = GridSpec::covering(&all, settings.margin, settings.cell_size)?;
    let sites: Vec<Point> = plan.iter().map(|&i| scenario.sites[i].position).collect();
    let grid = rsrp_grid(&sites, &spec, &settings.radio)?;
    Ok((spec, coverage_stats(&grid.values)?))
}

pub fn compare_runs(runs: &[RunInput], scenario: Option<&Scenario>, settings: &CompareSettings) -> Result<ComparisonReport> {
    if runs.len() < 2 {
        return Err(Error::Precondition("comparison needs at least two runs".into()));
    }
    let reference = scenario.and_then(Scenario::ground_truth);
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let final_mean_reward = run
            .history
            .final_window_mean(settings.window)
            .ok_or_else(|| Error::Precondition(format!("run {} seed {} has no history", run.algorithm, run.seed)))?;
        let overlap = match (&run.plan, reference) {
            (Some(p), Some(r)) => Some(overlap(p, r)?),
            _ => None,
        };
        let coverage = match (&run.plan, scenario) {
            (Some(p), Some(s)) => {
                let idx = s.indices_of(p.iter().map(String::as_str))?;
                Some(plan_coverage(&idx, s, settings)?.1)
            }
            _ => None,
        };
        rows.push(RunRow {
            algorithm: run.algorithm.clone(),
            seed: run.seed,
            source: run.source.clone(),
            iterations: run.history.records.len(),
            final_mean_reward,
            overlap,
            coverage,
            curve: run.history.records.iter().map(|r| r.mean_reward).collect(),
        });
    }
    let mut algorithms: Vec<&str> = Vec::new();
    for r in &rows {
        if !algorithms.contains(&r.algorithm.as_str()) {
            algorithms.push(&r.algorithm);
        }
    }
    let panel = algorithms
        .iter()
        .map(|&a| {
            let group: Vec<&RunRow> = rows.iter().filter(|r| r.algorithm == a).collect();
            let m = group.len() as f64;
            let mean = group.iter().map(|r| r.final_mean_reward).sum::<f64>() / m;
            let var = group.iter().map(|r| (r.final_mean_reward - mean).powi(2)).sum::<f64>() / m;
            let overlaps: Vec<f64> = group.iter().filter_map(|r| r.overlap).collect();
            PanelRow {
                algorithm: a.to_string(),
                runs: group.len(),
                mean_final_reward: mean,
                std_final_reward: var.sqrt(),
                mean_overlap: (!overlaps.is_empty()).then(|| overlaps.iter().sum::<f64>() / overlaps.len() as f64),
            }
        })
        .collect();
    Ok(ComparisonReport {
        window: settings.window,
        runs: rows,
        panel,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ComparisonReport {
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("algorithm,seed,iterations,final_mean_reward,overlap,frac_above_80,frac_above_60,min_dbm,mean_dbm\n");
        for r in &self.runs {
            let c = r.coverage;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.algorithm,
                r.seed,
                r.iterations,
                r.final_mean_reward,
                opt_cell(r.overlap),
                opt_cell(c.map(|c| c.frac_above_80)),
                opt_cell(c.map(|c| c.frac_above_60)),
                opt_cell(c.map(|c| c.min_dbm)),
                opt_cell(c.map(|c| c.mean_dbm)),
            ));
        }
        out
    }

    pub fn panel_csv(&self) -> String {
        let mut out = String::from("algorithm,runs,mean_final_reward,std_final_reward,mean_overlap\n");
        for p in &self.panel {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.algorithm,
                p.runs,
                p.mean_final_reward,
                p.std_final_reward,
                opt_cell(p.mean_overlap)
            ));
        }
        out
    }
}

/// Every candidate site as a GeoJSON point `[lon, lat]` with properties
/// `id`, `selected` and `in_reference`.
pub fn export_geojson(plan: &BTreeSet<String>, scenario: &Scenario, reference: Option<&BTreeSet<String>>) -> Value {
    let features: Vec<Value> = scenario
        .sites
        .iter()
        .map(|s| {
            let (lat, lon) = scenario.anchor.unproject(&s.position);
            json!({
                "type": "Feature",
                "geometry": { "type": "Point", "coordinates": [lon, lat] },
                "properties": {
                    "id": s.id,
                    "selected": plan.contains(&s.id),
                    "in_reference": reference.is_some_and(|r| r.contains(&s.id)),
                },
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::reward::{MockScorer, RewardWeights};
    use crate::scenario::test_support::{scenario, site};
    use crate::scenario::{generate_scenario, normalize_features, Profile};

    fn ids(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap(&ids(&["a", "b"]), &ids(&["b", "a"])).unwrap(), 1.0);
        assert_eq!(overlap(&ids(&["a", "b"]), &ids(&["c", "d"])).unwrap(), 0.0);
        let planned: BTreeSet<String> = (0..300).map(|i| format!("s{i}")).collect();
        let reference: BTreeSet<String> = (66..366).map(|i| format!("s{i}")).collect();
        assert!((overlap(&planned, &reference).unwrap() - 0.78).abs() < 1e-12);
        assert!(overlap(&ids(&["a"]), &ids(&["a", "b"])).is_err());
    }

    fn model(s: &Scenario) -> RewardModel {
        RewardModel::new(Arc::new(normalize_features(s)), RewardWeights::default(), Arc::new(MockScorer))
    }

    #[test]
    fn greedy_single_site_is_best_singleton() {
        let mut s = generate_scenario(5, 15, 1, Profile::UrbanCluster).unwrap();
        s.select_count = 1;
        let m = model(&s);
        let plan = plan_greedy(&m).unwrap();
        let best = (0..15)
            .map(|i| m.evaluate(&[i], Stage::Three).unwrap().combined)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(m.evaluate(&plan, Stage::Three).unwrap().combined, best);
        assert_eq!(plan_greedy(&m).unwrap(), plan);
    }

    #[test]
    fn kmeans_degenerate_and_separated_cases() {
        let s = generate_scenario(1, 12, 12, Profile::Uniform).unwrap();
        let mut all = plan_kmeans(&normalize_features(&s), 12, 0).unwrap();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());

        let mut sites = Vec::new();
        for i in 0..5 {
            sites.push(site(&format!("w{i}"), i as f64 * 10.0, 0.0, 100.0, 100 + i, 1000.0));
            sites.push(site(&format!("e{i}"), 10_000.0 + i as f64 * 10.0, 0.0, 100.0, 100 + i, 1000.0));
        }
        let s = scenario(sites, 2);
        let n = normalize_features(&s);
        for seed in 0..5 {
            let plan = plan_kmeans(&n, 2, seed).unwrap();
            let west = plan.iter().filter(|&&i| s.sites[i].id.starts_with('w')).count();
            assert_eq!(west, 1, "{plan:?}");
            assert_eq!(plan_kmeans(&n, 2, seed).unwrap(), plan);
        }
    }

    #[test]
    fn random_plan_is_a_k_subset() {
        let p = plan_random(30, 7, 3).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(plan_random(30, 7, 3).unwrap(), p);
        assert!(plan_random(3, 4, 0).is_err());
    }

    #[test]
    fn geojson_structure_and_reference_flags() {
        let s = generate_scenario(2, 6, 2, Profile::Uniform).unwrap();
        let plan = s.ids_of(&[0, 1]);
        let g = export_geojson(&plan, &s, None);
        assert_eq!(g["type"], "FeatureCollection");
        let features = g["features"].as_array().unwrap();
        assert_eq!(features.len(), 6);
        for f in features {
            assert_eq!(f["type"], "Feature");
            assert_eq!(f["geometry"]["type"], "Point");
            assert_eq!(f["geometry"]["coordinates"].as_array().unwrap().len(), 2);
            assert_eq!(f["properties"]["in_reference"], false);
        }
        assert_eq!(features[0]["properties"]["selected"], true);
        assert_eq!(features[2]["properties"]["selected"], false);
    }

    #[test]
    fn geojson_coordinates_round_trip_within_a_metre() {
        let s = generate_scenario(9, 40, 5, Profile::UrbanCluster).unwrap();
        let g = export_geojson(&BTreeSet::new(), &s, None);
        for (f, site) in g["features"].as_array().unwrap().iter().zip(&s.sites) {
            let c = f["geometry"]["coordinates"].as_array().unwrap();
            let p = s.anchor.project(c[1].as_f64().unwrap(), c[0].as_f64().unwrap());
            assert!(p.distance(&site.position) < 1.0);
        }
    }
}
