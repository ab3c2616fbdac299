//! HTTP-backed semantic scorer.
//!
//! Posts `{"prompt": "..."}` to the configured endpoint and expects a body
//! containing a line `Score: <number>`. Any transport, status or parse
//! failure falls back to [`mock_semantic_score`] and bumps a counter.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scorer::{mock_complaint_score, mock_semantic_score, SemanticScorer, SELECTION_SCORE_RANGE};
use crate::scenario::Scenario;

pub const SCORER_URL_ENV: &str = "TELEPLAN_SCORER_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteScorerConfig {
    pub url: String,
    pub timeout_secs: f64,
}

impl Default for RemoteScorerConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/score".into(),
            timeout_secs: 10.0,
        }
    }
}

const INSTRUCTION: &str = "\
You are reviewing a proposed 5G base station site selection plan. The sites \
listed below are the ones marked as selected; each carries its complaint \
records, requests from the marketing team and notes on regional development. \
Judge the plan on these aspects:
a) Is the geographic spread sensible, e.g. balanced across residential areas, universities and hospitals?
b) Are policy requirements such as coverage of key areas satisfied?
c) How satisfied will users be, given complaint history and expected subscriber growth?
d) Does the plan serve the development requests of the marketing team?
Coverage, throughput, complaint rate and key-area coverage are already scored \
numerically, so concentrate on the contextual and semantic factors.
Reply in exactly this format:
Score: <a number between 0 and 10, where 10 is the best possible plan and 0 the worst>
Reasoning: <a short justification covering distribution, constraints and user satisfaction>
";

/// Renders the grading prompt for a selection.
pub fn render_prompt(selection: &[usize], scenario: &Scenario) -> String {
    let mut prompt = String::from(INSTRUCTION);
    prompt.push_str("\nSelected sites:\n");
    for &i in selection {
        let s = &scenario.sites[i];
        let (lat, lon) = scenario.anchor.unproject(&s.position);
        let _ = writeln!(
            prompt,
            "- id={} lat={:.6} lon={:.6} throughput_mbps={} users={} rent={} key_area={} \
             complaints={:?} marketer={:?} region={:?}",
            s.id,
            lat,
            lon,
            s.throughput,
            s.users,
            s.rent,
            s.key_area,
            s.complaints_text,
            s.marketer_text,
            s.region_text
        );
    }
    prompt
}

fn score_from_line(line: &str) -> Option<f64> {
    let trimmed = line.trim().trim_start_matches(['*', '#', '-', ' ']);
    let rest = trimmed
        .get(..6)
        .filter(|head| head.eq_ignore_ascii_case("score:"))
        .map(|_| trimmed[6..].trim_start())?;
    let end = rest
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+')))
        .unwrap_or(rest.len());
    rest[..end].parse::<f64>().ok().filter(|v| v.is_finite())
}

fn score_in_json(value: &Value) -> Option<f64> {
    match value {
        Value::String(s) => s.lines().find_map(score_from_line),
        Value::Array(items) => items.iter().find_map(score_in_json),
        Value::Object(map) => map.values().find_map(score_in_json),
        _ => None,
    }
}

/// Extracts the `Score:` value from a response body, clamped to [0, 10].
/// Bodies that are JSON documents are searched through their string values.
pub fn parse_score(body: &str) -> Option<f64> {
    body.lines()
        .find_map(score_from_line)
        .or_else(|| serde_json::from_str::<Value>(body).ok().as_ref().and_then(score_in_json))
        .map(|v| v.clamp(SELECTION_SCORE_RANGE.0, SELECTION_SCORE_RANGE.1))
}

pub struct RemoteScorer {
    config: RemoteScorerConfig,
    agent: ureq::Agent,
    fallbacks: AtomicU64,
}

impl RemoteScorer {
    pub fn new(config: RemoteScorerConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs.max(0.001))))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            config,
            agent,
            fallbacks: AtomicU64::new(0),
        }
    }

    /// Applies the `TELEPLAN_SCORER_URL` override when set.
    pub fn from_env(mut config: RemoteScorerConfig) -> Self {
        if let Ok(url) = std::env::var(SCORER_URL_ENV) {
            if !url.is_empty() {
                config.url = url;
            }
        }
        Self::new(config)
    }

    pub fn config(&self) -> &RemoteScorerConfig {
        &self.config
    }

    fn request(&self, prompt: &str) -> Result<String, String> {
        let mut response = self
            .agent
            .post(&self.config.url)
            .send_json(serde_json::json!({ "prompt": prompt }))
            .map_err(|e| e.to_string())?;
        response.body_mut().read_to_string().map_err(|e| e.to_string())
    }
}

impl SemanticScorer for RemoteScorer {
    fn score_selection(&self, selection: &[usize], scenario: &Scenario) -> f64 {
        let prompt = render_prompt(selection, scenario);
        let outcome = self
            .request(&prompt)
            .and_then(|body| parse_score(&body).ok_or_else(|| format!("no score in response: {body:?}")));
        match outcome {
            Ok(score) => score,
            Err(reason) => {
                self.fallbacks.fetch_add(1, Ordering::Relaxed);
                log::warn!("remote scorer fell back to mock: {reason}");
                mock_semantic_score(selection, scenario)
            }
        }
    }

    fn score_complaint(&self, text: &str) -> f64 {
        mock_complaint_score(text)
    }

    fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_score_line() {
        assert_eq!(parse_score("Score: 8\nReasoning: dense cluster"), Some(8.0));
        assert_eq!(parse_score("score: 7.5/10"), Some(7.5));
        assert_eq!(parse_score("Reasoning first\nScore: 3"), Some(3.0));
    }

    #[test]
    fn rejects_non_numeric_score() {
        assert_eq!(parse_score("Score: eleven"), None);
        assert_eq!(parse_score(""), None);
    }

    #[test]
    fn clamps_out_of_range_score() {
        assert_eq!(parse_score("Score: 12"), Some(10.0));
        assert_eq!(parse_score("Score: -1"), Some(0.0));
    }

    #[test]
    fn finds_score_inside_json_body() {
        let body = r#"{"choices":[{"text":"Score: 9\nReasoning: fine"}]}"#;
        assert_eq!(parse_score(body), Some(9.0));
    }
}
