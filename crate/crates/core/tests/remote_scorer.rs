use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use teleplan::reward::{mock_semantic_score, RemoteScorer, RemoteScorerConfig, SemanticScorer, SCORER_URL_ENV};
use teleplan::scenario::{generate_scenario, Profile};

/// Answers every POST with `body` and counts requests whose JSON payload
/// carries a `prompt` string.
fn serve(body: &'static str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/score", listener.local_addr().unwrap());
    let prompts = Arc::new(AtomicUsize::new(0));
    let seen = prompts.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut payload = vec![0; length];
            reader.read_exact(&mut payload).unwrap();
            let json: serde_json::Value = serde_json::from_slice(&payload).unwrap_or_default();
            if json["prompt"].as_str().is_some_and(|p| p.contains("Score:")) {
                seen.fetch_add(1, Ordering::SeqCst);
            }
            let response = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
    });
    (url, prompts)
}

fn config(url: &str) -> RemoteScorerConfig {
    RemoteScorerConfig {
        url: url.into(),
        timeout_secs: 5.0,
    }
}

#[test]
fn valid_response_is_used() {
    let (url, prompts) = serve("Score: 7\nReasoning: balanced");
    let scenario = generate_scenario(1, 20, 4, Profile::UrbanCluster).unwrap();
    let scorer = RemoteScorer::new(config(&url));
    assert_eq!(scorer.score_selection(&[0, 1, 2, 3], &scenario), 7.0);
    assert_eq!(scorer.fallback_count(), 0);
    assert_eq!(prompts.load(Ordering::SeqCst), 1);
}

#[test]
fn unparseable_response_falls_back_to_mock() {
    let (url, _) = serve("Score: eleven");
    let scenario = generate_scenario(2, 20, 4, Profile::UrbanCluster).unwrap();
    let scorer = RemoteScorer::new(config(&url));
    let got = scorer.score_selection(&[0, 5, 9, 12], &scenario);
    assert_eq!(got, mock_semantic_score(&[0, 5, 9, 12], &scenario));
    assert_eq!(scorer.fallback_count(), 1);
}

#[test]
fn unreachable_endpoint_counts_fallbacks() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let scenario = generate_scenario(3, 20, 4, Profile::UrbanCluster).unwrap();
    let scorer = RemoteScorer::new(config(&format!("http://127.0.0.1:{port}/score")));
    for _ in 0..3 {
        let got = scorer.score_selection(&[1, 2, 3, 4], &scenario);
        assert_eq!(got, mock_semantic_score(&[1, 2, 3, 4], &scenario));
    }
    assert_eq!(scorer.fallback_count(), 3);
}

#[test]
fn environment_overrides_configured_url() {
    let (url, prompts) = serve("Score: 4");
    std::env::set_var(SCORER_URL_ENV, &url);
    let scorer = RemoteScorer::from_env(config("http://127.0.0.1:1/unused"));
    std::env::remove_var(SCORER_URL_ENV);
    assert_eq!(scorer.config().url, url);
    let scenario = generate_scenario(4, 20, 4, Profile::UrbanCluster).unwrap();
    assert_eq!(scorer.score_selection(&[0, 1, 2, 3], &scenario), 4.0);
    assert_eq!(prompts.load(Ordering::SeqCst), 1);
}
