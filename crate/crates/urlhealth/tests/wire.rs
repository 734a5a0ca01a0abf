//! Probe and archive behavior over real sockets, against the fixture server.

mod common;

use std::time::Duration;

use common::FixtureServer;
use urlhealth::archive::{ArchiveClient, ArchiveError};
use urlhealth::probe::{ProbeConfig, ProbeErrorKind, ProbeMethod, Prober};

fn fast_config() -> ProbeConfig {
    ProbeConfig {
        connect_timeout: Duration::from_secs(5),
        total_timeout: Duration::from_secs(10),
        retry_on_429: 2,
        retry_backoff: Duration::from_millis(50),
        workers: 8,
        ..ProbeConfig::default()
    }
}

#[test]
fn get_fallback_fires_for_exactly_the_three_head_hostile_statuses() {
    let server = FixtureServer::start();
    let prober = Prober::new(fast_config()).unwrap();
    let sweep = [
        200, 201, 204, 206, 300, 304, 400, 401, 402, 403, 404, 405, 406, 407, 408, 410, 418,
        451, 500, 501, 502, 503, 504, 505, 599,
    ];
    for code in sweep {
        let path = format!("/head-status/{code}");
        let result = prober.probe_one(&server.url(&path));
        let expect_fallback = matches!(code, 403 | 405 | 501);
        assert_eq!(result.fallback_applied, expect_fallback, "status {code}");
        assert_eq!(server.hits("HEAD", &path), 1, "status {code}");
        assert_eq!(
            server.hits("GET", &path),
            usize::from(expect_fallback),
            "status {code}"
        );
        if expect_fallback {
            assert_eq!(result.status, Some(200), "fallback GET lands on {code}");
            assert_eq!(result.method_used, ProbeMethod::Get);
        } else {
            assert_eq!(result.status, Some(code), "status {code}");
            assert_eq!(result.method_used, ProbeMethod::Head);
        }
    }
}

#[test]
fn redirects_collapse_to_the_final_hop() {
    let server = FixtureServer::start();
    let prober = Prober::new(fast_config()).unwrap();

    let chained = prober.probe_one(&server.url("/redirect/3"));
    assert_eq!(chained.status, Some(200));
    assert!(chained.final_url.ends_with("/redirect/0"), "{}", chained.final_url);
    assert!(!chained.fallback_applied);

    let to_missing = prober.probe_one(&server.url("/redirect-to/404"));
    assert_eq!(to_missing.status, Some(404));
    assert!(to_missing.final_url.ends_with("/status/404"));
}

#[test]
fn endless_redirects_are_a_redirect_loop() {
    let server = FixtureServer::start();
    let prober = Prober::new(fast_config()).unwrap();
    let result = prober.probe_one(&server.url("/loop/a"));
    assert_eq!(result.status, None);
    assert_eq!(result.error_kind, Some(ProbeErrorKind::RedirectLoop));
}

#[test]
fn slow_responses_time_out() {
    let server = FixtureServer::start();
    let config = ProbeConfig {
        total_timeout: Duration::from_millis(300),
        ..fast_config()
    };
    let prober = Prober::new(config).unwrap();
    let result = prober.probe_one(&server.url("/slow/5000"));
    assert_eq!(result.status, None);
    assert_eq!(result.error_kind, Some(ProbeErrorKind::Timeout));
    assert!(result.elapsed >= Duration::from_millis(250));
}

#[test]
fn non_http_bytes_are_a_protocol_error() {
    let server = FixtureServer::start();
    let prober = Prober::new(fast_config()).unwrap();
    let result = prober.probe_one(&server.url("/garbage"));
    assert_eq!(result.status, None);
    assert_eq!(result.error_kind, Some(ProbeErrorKind::ProtocolError));
}

#[test]
fn refused_connections_are_a_connect_failure() {
    let free_port = {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let prober = Prober::new(fast_config()).unwrap();
    let result = prober.probe_one(&format!("http://127.0.0.1:{free_port}/"));
    assert_eq!(result.status, None);
    assert_eq!(result.error_kind, Some(ProbeErrorKind::ConnectFailure));
}

#[test]
fn reserved_invalid_hosts_are_a_dns_failure() {
    let prober = Prober::new(fast_config()).unwrap();
    let result = prober.probe_one("http://urlhealth-fixture-never-resolves.invalid/");
    assert_eq!(result.status, None);
    assert_eq!(result.error_kind, Some(ProbeErrorKind::DnsFailure));
}

#[test]
fn transient_429_is_retried_with_backoff() {
    let server = FixtureServer::start();
    let prober = Prober::new(fast_config()).unwrap();
    let result = prober.probe_one(&server.url("/flaky/once/1"));
    assert_eq!(result.status, Some(200));
    assert_eq!(result.attempts, 2);
    assert_eq!(server.path_hits("/flaky/once/1"), 2);
    assert!(result.elapsed >= Duration::from_millis(50), "backoff must wait");
}

#[test]
fn persistent_429_is_reported_after_the_retry_budget() {
    let server = FixtureServer::start();
    let prober = Prober::new(fast_config()).unwrap();
    let result = prober.probe_one(&server.url("/flaky/always/99"));
    assert_eq!(result.status, Some(429));
    assert_eq!(result.attempts, 3);
    assert_eq!(server.path_hits("/flaky/always/99"), 3);
    assert!(
        result.elapsed >= Duration::from_millis(150),
        "two backoffs at 50ms and 100ms"
    );
}

#[test]
fn per_host_inflight_stays_under_the_cap() {
    let server = FixtureServer::start();
    let config = ProbeConfig {
        workers: 12,
        per_host_max_inflight: 3,
        ..fast_config()
    };
    let prober = Prober::new(config).unwrap();
    let urls: Vec<String> = (0..18).map(|i| server.url(&format!("/slow/30/{i}"))).collect();
    let results = prober.probe_batch(&urls, |_, _, _| {});
    assert_eq!(results.len(), 18);
    assert!(results.iter().all(|r| r.status == Some(200)));
    assert!(
        server.peak_inflight() <= 3,
        "peak {} exceeded the per-host cap",
        server.peak_inflight()
    );
}

#[test]
fn batch_and_sequential_probing_agree() {
    let server = FixtureServer::start();
    let urls: Vec<String> = vec![
        server.url("/status/200"),
        server.url("/status/404"),
        server.url("/status/500"),
        server.url("/head-status/405"),
        server.url("/head-status/403"),
        server.url("/redirect/2"),
        server.url("/redirect-to/410"),
        server.url("/loop/a"),
        server.url("/garbage"),
        server.url("/status/301"),
    ];
    let summarize = |workers: usize| -> Vec<(String, Option<u16>, Option<ProbeErrorKind>, bool)> {
        let prober = Prober::new(ProbeConfig {
            workers,
            ..fast_config()
        })
        .unwrap();
        prober
            .probe_batch(&urls, |_, _, _| {})
            .into_iter()
            .map(|r| (r.url, r.status, r.error_kind, r.fallback_applied))
            .collect()
    };
    assert_eq!(summarize(8), summarize(1));
}

#[test]
fn user_agent_header_reaches_the_server() {
    let server = FixtureServer::start();
    let config = ProbeConfig {
        user_agent: "agent-fixture/1.0".to_string(),
        ..fast_config()
    };
    let prober = Prober::new(config).unwrap();
    prober.probe_one(&server.url("/status/200"));
    assert!(server
        .user_agents()
        .iter()
        .any(|agent| agent == "agent-fixture/1.0"));
}

#[test]
fn availability_lookups_split_archived_from_unarchived() {
    let server = FixtureServer::start();
    let client = ArchiveClient::over_http(&server.wayback_endpoint(), 0.0, "tester").unwrap();

    let archived = client.lookup("https://x.example/hasarch/1").unwrap();
    assert!(archived.snapshot_exists);
    assert!(archived.closest_timestamp.is_some());
    assert!(archived.snapshot_url.is_some());

    let unarchived = client.lookup("https://x.example/plain/1").unwrap();
    assert!(!unarchived.snapshot_exists);
    assert!(unarchived.closest_timestamp.is_none());
    assert!(unarchived.snapshot_url.is_none());
}

#[test]
fn availability_success_is_cached() {
    let server = FixtureServer::start();
    let client = ArchiveClient::over_http(&server.wayback_endpoint(), 0.0, "tester").unwrap();
    client.lookup("https://x.example/hasarch/cache").unwrap();
    client.lookup("https://x.example/hasarch/cache").unwrap();
    assert_eq!(server.path_hits("/wayback"), 1);
}

#[test]
fn availability_outage_is_an_error_and_is_not_cached() {
    let server = FixtureServer::start();
    let client = ArchiveClient::over_http(&server.wayback_endpoint(), 0.0, "tester").unwrap();
    let first = client.lookup("https://x.example/archfail/1");
    assert!(matches!(first, Err(ArchiveError::Unavailable { .. })));
    let hits_after_first = server.path_hits("/wayback");
    assert!(hits_after_first >= 1);
    assert!(client.cached("https://x.example/archfail/1").is_none());
    let second = client.lookup("https://x.example/archfail/1");
    assert!(second.is_err(), "failures must be retried, not remembered");
    assert!(server.path_hits("/wayback") > hits_after_first);
}

#[test]
fn malformed_availability_json_is_an_error() {
    let server = FixtureServer::start();
    let client = ArchiveClient::over_http(&server.wayback_endpoint(), 0.0, "tester").unwrap();
    let result = client.lookup("https://x.example/badjson/1");
    assert!(matches!(result, Err(ArchiveError::Unavailable { .. })));
}
