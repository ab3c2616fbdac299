//! Synthetic scenario generation.
//!
//! The urban-cluster profile drops 3 to 6 Gaussian hotspots onto a square
//! region. Roughly half of the candidates fall inside a hotspot and carry
//! elevated throughput, users, rent and key-area likelihood. The planted
//! optimum is the `select_count` hotspot sites with the highest stage-one
//! score `10·t̂ + 12·û`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{normalize_features, CandidateSite, Scenario};
use crate::error::{Error, Result};
use crate::geo::{BBox, GeoAnchor, Point};

/// Anchor used for generated scenarios.
pub const DEFAULT_ANCHOR: GeoAnchor = GeoAnchor::new(31.95, 118.84);

/// Side of the square region per sqrt(candidate), meters.
const SIDE_PER_SQRT_SITE: f64 = 500.0;
const HOTSPOT_SHARE: f64 = 0.5;
/// Hotspot standard deviation as a fraction of the region side.
const HOTSPOT_SPREAD: f64 = 0.04;

const OBJECTION_COMPLAINTS: &[&str] = &[
    "Residents raised a radiation concern about a new mast",
    "Owners' committee will oppose construction on the roof",
    "Complaint about cooling fan noise from the equipment room",
    "Radiation worries and noise from existing cabinet",
];
const DEMAND_COMPLAINTS: &[&str] = &[
    "No signal indoors after 6pm, please build a station nearby",
    "Frequent call drops along the main road",
    "Slow data in the shopping mall basement",
    "No signal in the underground car park",
    "Customers say please build coverage for the new towers",
];
const HOT_REGIONS: &[&str] = &[
    "dense urban core",
    "commercial district",
    "university campus",
    "hospital and transit hub",
];
const BACKGROUND_REGIONS: &[&str] = &[
    "suburban residential",
    "industrial park",
    "rural township",
    "lakeside greenbelt",
];
const HOT_MARKETER: &[&str] = &[
    "Enterprise customers requesting 5G private network",
    "New residential towers under sale, strong subscriber growth",
    "Stadium events need capacity",
];
const BACKGROUND_MARKETER: &[&str] = &["", "Low subscriber growth expected", "Farm IoT pilot"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Uniform,
    UrbanCluster,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Uniform => "uniform",
            Profile::UrbanCluster => "urban-cluster",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Profile::Uniform),
            "urban-cluster" => Ok(Profile::UrbanCluster),
            other => Err(Error::Precondition(format!("unknown profile '{other}'"))),
        }
    }
}

struct RawSite {
    position: Point,
    hot: bool,
    throughput: f64,
    users: u64,
    rent: f64,
    key_area: bool,
    complaints: String,
    marketer: String,
    region: String,
}

fn pick<'a, R: Rng>(rng: &mut R, options: &[&'a str]) -> &'a str {
    options.choose(rng).copied().unwrap_or("")
}

fn complaint<R: Rng>(rng: &mut R, p_demand: f64, p_objection: f64) -> String {
    let u: f64 = rng.gen();
    if u < p_demand {
        pick(rng, DEMAND_COMPLAINTS).to_string()
    } else if u < p_demand + p_objection {
        pick(rng, OBJECTION_COMPLAINTS).to_string()
    } else {
        String::new()
    }
}

fn hot_site<R: Rng>(rng: &mut R, position: Point) -> RawSite {
    RawSite {
        position,
        hot: true,
        throughput: rng.gen_range(200.0..600.0),
        users: rng.gen_range(800..3000),
        rent: rng.gen_range(40_000.0..120_000.0),
        key_area: rng.gen_bool(0.6),
        complaints: complaint(rng, 0.4, 0.1),
        marketer: pick(rng, HOT_MARKETER).to_string(),
        region: pick(rng, HOT_REGIONS).to_string(),
    }
}

fn background_site<R: Rng>(rng: &mut R, position: Point, wide: bool) -> RawSite {
    let (tp, users, rent) = if wide {
        (20.0..600.0, 30..3000, 8_000.0..120_000.0)
    } else {
        (20.0..250.0, 30..900, 8_000.0..60_000.0)
    };
    RawSite {
        position,
        hot: false,
        throughput: rng.gen_range(tp),
        users: rng.gen_range(users),
        rent: rng.gen_range(rent),
        key_area: rng.gen_bool(if wide { 0.2 } else { 0.1 }),
        complaints: complaint(rng, 0.1, 0.1),
        marketer: pick(rng, BACKGROUND_MARKETER).to_string(),
        region: pick(rng, BACKGROUND_REGIONS).to_string(),
    }
}

/// Generates a deterministic synthetic scenario.
pub fn generate_scenario(
    seed: u64,
    n_candidates: usize,
    select_count: usize,
    profile: Profile,
) -> Result<Scenario> {
    if select_count == 0 {
        return Err(Error::Precondition("select_count (k) must be at least 1".into()));
    }
    if select_count > n_candidates {
        return Err(Error::Precondition(format!(
            "select_count k={select_count} must not exceed n_candidates n={n_candidates}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = SIDE_PER_SQRT_SITE * (n_candidates as f64).sqrt();
    let uniform_point = |rng: &mut ChaCha8Rng| {
        Point::new(rng.gen_range(0.0..side), rng.gen_range(0.0..side))
    };

    let raw: Vec<RawSite> = match profile {
        Profile::Uniform => (0..n_candidates)
            .map(|_| {
                let p = uniform_point(&mut rng);
                background_site(&mut rng, p, true)
            })
            .collect(),
        Profile::UrbanCluster => {
            let count = rng.gen_range(3..=6);
            let centers: Vec<Point> = (0..count)
                .map(|_| {
                    Point::new(
                        rng.gen_range(0.15 * side..0.85 * side),
                        rng.gen_range(0.15 * side..0.85 * side),
                    )
                })
                .collect();
            let jitter = Normal::new(0.0, HOTSPOT_SPREAD * side).expect("positive spread");
            (0..n_candidates)
                .map(|_| {
                    if rng.gen_bool(HOTSPOT_SHARE) {
                        let c = centers[rng.gen_range(0..count)];
                        let p = Point::new(
                            (c.x + jitter.sample(&mut rng)).clamp(0.0, side),
                            (c.y + jitter.sample(&mut rng)).clamp(0.0, side),
                        );
                        hot_site(&mut rng, p)
                    } else {
                        let p = uniform_point(&mut rng);
                        background_site(&mut rng, p, false)
                    }
                })
                .collect()
        }
    };

    // Centre the tight bounding box on the anchor.
    let center = BBox::from_points(raw.iter().map(|r| &r.position)).center();
    let sites: Vec<CandidateSite> = raw
        .iter()
        .enumerate()
        .map(|(i, r)| CandidateSite {
            id: format!("site-{i:04}"),
            position: Point::new(r.position.x - center.x, r.position.y - center.y),
            throughput: r.throughput,
            users: r.users,
            rent: r.rent,
            key_area: r.key_area,
            complaints_text: r.complaints.clone(),
            marketer_text: r.marketer.clone(),
            region_text: r.region.clone(),
        })
        .collect();

    let mut scenario = Scenario::new(sites, select_count, DEFAULT_ANCHOR);
    if profile == Profile::UrbanCluster {
        let normalized = normalize_features(&scenario);
        let mut order: Vec<usize> = (0..n_candidates).collect();
        let score = |i: usize| normalized.site_stage1_score(i, 10.0, 12.0);
        // Hotspot sites first, then by descending score, ties by index.
        order.sort_by(|&a, &b| {
            raw[b]
                .hot
                .cmp(&raw[a].hot)
                .then(score(b).total_cmp(&score(a)))
                .then(a.cmp(&b))
        });
        scenario.planted_optimum = Some(scenario.ids_of(&order[..select_count]));
    }
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::validate_scenario;

    #[test]
    fn urban_cluster_has_planted_optimum() {
        let s = generate_scenario(7, 100, 20, Profile::UrbanCluster).unwrap();
        assert_eq!(s.sites.len(), 100);
        assert_eq!(s.planted_optimum.as_ref().unwrap().len(), 20);
        assert!(validate_scenario(&s).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scenario(7, 100, 20, Profile::UrbanCluster).unwrap();
        let b = generate_scenario(7, 100, 20, Profile::UrbanCluster).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = generate_scenario(8, 100, 20, Profile::UrbanCluster).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_profile_has_no_planted_optimum() {
        let s = generate_scenario(7, 10, 10, Profile::Uniform).unwrap();
        assert_eq!(s.sites.len(), 10);
        assert!(s.planted_optimum.is_none());
        assert_eq!(s.select_count, 10);
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(matches!(
            generate_scenario(1, 10, 11, Profile::Uniform),
            Err(Error::Precondition(_))
        ));
        assert!(generate_scenario(1, 10, 0, Profile::Uniform).is_err());
    }

    #[test]
    fn bbox_is_centred_on_anchor() {
        let s = generate_scenario(3, 50, 5, Profile::UrbanCluster).unwrap();
        let c = s.bbox.center();
        assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9);
    }

    #[test]
    fn thousand_site_instance_is_fast() {
        let t = std::time::Instant::now();
        let s = generate_scenario(1, 1000, 300, Profile::UrbanCluster).unwrap();
        assert_eq!(s.planted_optimum.unwrap().len(), 300);
        assert!(t.elapsed().as_secs_f64() < 1.0);
    }
}
