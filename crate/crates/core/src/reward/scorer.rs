//! Semantic scoring of selections and complaint text.
//!
//! [`MockScorer`] is a deterministic stand-in for a language-model grader:
//! complaint text is graded by a fixed keyword table and a selection is
//! scored from key-area share, quadrant balance and objection share.

use crate::scenario::Scenario;

/// Signed complaint keywords. Positive values are objections to building a
/// site; negative values are coverage demands.
pub const COMPLAINT_KEYWORDS: [(&str, f64); 7] = [
    ("radiation", 6.0),
    ("oppose construction", 8.0),
    ("noise", 3.0),
    ("no signal", -5.0),
    ("please build", -4.0),
    ("call drops", -4.0),
    ("slow data", -3.0),
];

pub const SELECTION_SCORE_RANGE: (f64, f64) = (0.0, 10.0);
pub const COMPLAINT_SCORE_RANGE: (f64, f64) = (-10.0, 10.0);

/// Grades plans and complaint text. Implementations must be usable from
/// concurrent rollout evaluation.
pub trait SemanticScorer: Send + Sync {
    /// Score in [0, 10] for a set of selected site indices.
    fn score_selection(&self, selection: &[usize], scenario: &Scenario) -> f64;

    /// Score in [-10, 10]; positive means objections.
    fn score_complaint(&self, text: &str) -> f64;

    /// Number of times the scorer fell back to the mock implementation.
    fn fallback_count(&self) -> u64 {
        0
    }

    fn name(&self) -> &'static str;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct MockScorer;

impl SemanticScorer for MockScorer {
    fn score_selection(&self, selection: &[usize], scenario: &Scenario) -> f64 {
        mock_semantic_score(selection, scenario)
    }

    fn score_complaint(&self, text: &str) -> f64 {
        mock_complaint_score(text)
    }

    fn name(&self) -> &'static str {
        "mock"
    }
}

/// Sum of matched keyword values, each keyword counted at most once,
/// clamped to [-10, 10].
pub fn mock_complaint_score(text: &str) -> f64 {
    if text.is_empty() {
        return 0.0;
    }
    let lower = text.to_lowercase();
    let total: f64 = COMPLAINT_KEYWORDS
        .iter()
        .filter(|(kw, _)| lower.contains(kw))
        .map(|&(_, v)| v)
        .sum();
    total.clamp(COMPLAINT_SCORE_RANGE.0, COMPLAINT_SCORE_RANGE.1)
}

/// The three proxy fractions behind [`mock_semantic_score`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemanticFractions {
    pub key_area: f64,
    pub spatial_balance: f64,
    pub negative_complaints: f64,
}

pub fn semantic_fractions(selection: &[usize], scenario: &Scenario) -> SemanticFractions {
    let n = selection.len() as f64;
    let center = scenario.bbox.center();
    let mut quadrants = [0usize; 4];
    let mut key = 0usize;
    let mut negative = 0usize;
    for &i in selection {
        let site = &scenario.sites[i];
        key += site.key_area as usize;
        negative += (mock_complaint_score(&site.complaints_text) > 0.0) as usize;
        let east = (site.position.x >= center.x) as usize;
        let north = (site.position.y >= center.y) as usize;
        quadrants[2 * north + east] += 1;
    }
    let max_share = *quadrants.iter().max().unwrap_or(&0) as f64 / n;
    SemanticFractions {
        key_area: key as f64 / n,
        spatial_balance: 1.0 - (max_share - 0.25) / 0.75,
        negative_complaints: negative as f64 / n,
    }
}

/// Deterministic proxy for the semantic plan grade, in [0, 10].
pub fn mock_semantic_score(selection: &[usize], scenario: &Scenario) -> f64 {
    if selection.is_empty() {
        return 0.0;
    }
    let f = semantic_fractions(selection, scenario);
    let raw = 0.4 * f.key_area + 0.3 * f.spatial_balance + 0.3 * (1.0 - f.negative_complaints);
    10.0 * raw.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::test_support::*;

    #[test]
    fn complaint_table_lookups() {
        assert_eq!(mock_complaint_score(""), 0.0);
        assert_eq!(mock_complaint_score("radiation concern"), 6.0);
        assert_eq!(mock_complaint_score("No signal here, PLEASE BUILD"), -9.0);
        assert_eq!(mock_complaint_score("weather is nice"), 0.0);
    }

    #[test]
    fn keywords_count_once_and_clamp() {
        assert_eq!(mock_complaint_score("noise noise noise"), 3.0);
        assert_eq!(
            mock_complaint_score("radiation, noise, residents oppose construction"),
            10.0
        );
        assert_eq!(
            mock_complaint_score("no signal, please build, call drops, slow data"),
            -10.0
        );
    }

    fn quad_scenario() -> crate::scenario::Scenario {
        let mut sites = vec![
            site("ne", 10.0, 10.0, 1.0, 1, 1.0),
            site("nw", -10.0, 10.0, 1.0, 1, 1.0),
            site("sw", -10.0, -10.0, 1.0, 1, 1.0),
            site("se", 10.0, -10.0, 1.0, 1, 1.0),
            site("ne2", 9.0, 9.0, 1.0, 1, 1.0),
            site("ne3", 8.0, 8.0, 1.0, 1, 1.0),
        ];
        for s in sites.iter_mut().take(4) {
            s.key_area = true;
        }
        for s in sites.iter_mut().skip(4) {
            s.complaints_text = "radiation".into();
        }
        sites[0].complaints_text = "no signal".into();
        scenario(sites, 4)
    }

    #[test]
    fn best_case_scores_ten() {
        let s = quad_scenario();
        assert_eq!(mock_semantic_score(&[0, 1, 2, 3], &s), 10.0);
    }

    #[test]
    fn worst_case_scores_zero() {
        let mut s = quad_scenario();
        s.sites[0].complaints_text = "radiation".into();
        s.sites[0].key_area = false;
        assert_eq!(mock_semantic_score(&[0, 4, 5], &s), 0.0);
    }
}
