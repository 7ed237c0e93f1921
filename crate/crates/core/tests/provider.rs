mod support {
    pub mod fake_endpoint;
}

use std::sync::Arc;
use std::time::Duration;

use annogate::model::{default_output_contract, Codebook, Dimension};
use annogate::provider::{
    estimate_cost, render_prompt, CompletionProvider, CompletionRequest, FakeClock, HttpProvider,
    ProviderConfig, ProviderError, RateLimiter, UsageRecord, Usd,
};
use annogate::TextSample;
use support::fake_endpoint::{Canned, FakeEndpoint};

fn codebook() -> Codebook {
    Codebook {
        codebook_id: "cb".into(),
        version: 1,
        parent_version: None,
        preamble: "Read the text.".into(),
        dimensions: vec![Dimension {
            key: "toxic".into(),
            name: "Toxic".into(),
            definition: "Insults a person.".into(),
        }],
        output_contract: default_output_contract(),
    }
}

fn config(url: &str) -> ProviderConfig {
    ProviderConfig {
        endpoint_url: url.to_string(),
        model_name: "test-model".into(),
        requests_per_minute: 1000,
        ..ProviderConfig::default()
    }
}

fn ok() -> Canned {
    Canned::completion("LABELS: toxic=1", 1000, 1000)
}

fn call(
    provider: &HttpProvider,
    sample: &TextSample,
) -> Result<annogate::provider::CompletionResult, ProviderError> {
    let bundle = render_prompt(&codebook(), sample);
    provider.complete(&CompletionRequest {
        sample_id: &sample.id,
        pass_index: 0,
        bundle: &bundle,
    })
}

#[test]
fn sends_documented_body() {
    let server = FakeEndpoint::start(vec![], ok());
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(config(&server.url), "sk-test", clock).unwrap();
    let sample = TextSample::new("s1", "you are \"great\"");
    let result = call(&provider, &sample).unwrap();
    assert_eq!(result.text, "LABELS: toxic=1");
    assert_eq!(result.attempt_count, 1);

    let got = server.received();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].method, "POST");
    assert_eq!(got[0].path, "/v1/chat/completions");
    assert_eq!(got[0].header("authorization"), Some("Bearer sk-test"));
    assert_eq!(got[0].header("content-type"), Some("application/json"));

    let bundle = render_prompt(&codebook(), &sample);
    let expected = format!(
        r#"{{"model":"test-model","temperature":0.6,"messages":[{{"role":"system","content":{}}},{{"role":"user","content":{}}}]}}"#,
        serde_json::to_string(&bundle.system_text).unwrap(),
        serde_json::to_string(&bundle.user_text).unwrap(),
    );
    assert_eq!(got[0].body, expected);
}

#[test]
fn retries_429_with_exponential_backoff() {
    let server = FakeEndpoint::start(vec![Canned::json(429, "{}"), Canned::json(429, "{}")], ok());
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(config(&server.url), "k", clock.clone()).unwrap();
    let result = call(&provider, &TextSample::new("s", "t")).unwrap();
    assert_eq!(result.attempt_count, 3);
    assert_eq!(server.received().len(), 3);
    assert_eq!(
        clock.sleeps(),
        vec![Duration::from_secs(1), Duration::from_secs(2)]
    );
}

#[test]
fn retry_after_header_wins() {
    let server = FakeEndpoint::start(
        vec![Canned::json(429, "{}").header("Retry-After", "7")],
        ok(),
    );
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(config(&server.url), "k", clock.clone()).unwrap();
    let result = call(&provider, &TextSample::new("s", "t")).unwrap();
    assert_eq!(result.attempt_count, 2);
    assert_eq!(clock.sleeps(), vec![Duration::from_secs(7)]);
}

#[test]
fn rate_limit_exhaustion() {
    let server = FakeEndpoint::start(vec![], Canned::json(429, "{}"));
    let clock = Arc::new(FakeClock::new());
    let cfg = ProviderConfig {
        max_retries: 2,
        ..config(&server.url)
    };
    let provider = HttpProvider::with_clock(cfg, "k", clock).unwrap();
    let err = call(&provider, &TextSample::new("s", "t")).unwrap_err();
    assert!(
        matches!(err, ProviderError::RateLimitedExhausted { attempts: 3 }),
        "{err:?}"
    );
    assert_eq!(server.received().len(), 3);
}

#[test]
fn server_errors_retry_then_fail() {
    let server = FakeEndpoint::start(vec![Canned::json(503, "busy")], ok());
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(config(&server.url), "k", clock).unwrap();
    assert_eq!(
        call(&provider, &TextSample::new("s", "t"))
            .unwrap()
            .attempt_count,
        2
    );
}

#[test]
fn auth_errors_are_not_retried() {
    let server = FakeEndpoint::start(vec![], Canned::json(401, "{}"));
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(config(&server.url), "bad", clock.clone()).unwrap();
    let err = call(&provider, &TextSample::new("s", "t")).unwrap_err();
    assert!(matches!(err, ProviderError::AuthError { status: 401 }));
    assert!(err.is_hard());
    assert_eq!(server.received().len(), 1);
    assert!(clock.sleeps().is_empty());
}

#[test]
fn other_client_errors_are_not_retried() {
    let server = FakeEndpoint::start(vec![], Canned::json(400, "bad request"));
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(config(&server.url), "k", clock).unwrap();
    let err = call(&provider, &TextSample::new("s", "t")).unwrap_err();
    assert!(matches!(
        err,
        ProviderError::EndpointError { status: 400, .. }
    ));
    assert!(!err.is_hard());
    assert_eq!(server.received().len(), 1);
}

#[test]
fn malformed_success_body() {
    let server = FakeEndpoint::start(vec![], Canned::json(200, "{\"choices\":[]}"));
    let provider =
        HttpProvider::with_clock(config(&server.url), "k", Arc::new(FakeClock::new())).unwrap();
    assert!(matches!(
        call(&provider, &TextSample::new("s", "t")),
        Err(ProviderError::MalformedResponse(_))
    ));
}

#[test]
fn never_exceeds_requests_per_minute() {
    let server = FakeEndpoint::start(vec![], ok());
    let clock = Arc::new(FakeClock::new());
    let limiter = Arc::new(RateLimiter::new(3, clock.clone()).with_log());
    let cfg = ProviderConfig {
        requests_per_minute: 3,
        ..config(&server.url)
    };
    let provider = HttpProvider::with_limiter(cfg, "k", limiter.clone()).unwrap();
    std::thread::scope(|scope| {
        for t in 0..2 {
            let provider = &provider;
            scope.spawn(move || {
                for i in 0..5 {
                    call(provider, &TextSample::new(format!("t{t}-{i}"), "x")).unwrap();
                }
            });
        }
    });
    let permits = limiter.permit_log();
    assert_eq!(permits.len(), 10);
    for (i, start) in permits.iter().enumerate() {
        let in_window = permits[i..]
            .iter()
            .filter(|t| **t < *start + Duration::from_secs(60))
            .count();
        assert!(
            in_window <= 3,
            "{in_window} permits within a minute of {start:?}"
        );
    }
    // Ten permits at three per minute need at least three full windows.
    assert!(*permits.last().unwrap() >= Duration::from_secs(180));
}

#[test]
fn usage_and_cost_from_reported_tokens() {
    let server = FakeEndpoint::start(
        vec![Canned::completion("LABELS: toxic=0", 1200, 30)],
        Canned::completion("LABELS: toxic=1", 800, 20),
    );
    let provider =
        HttpProvider::with_clock(config(&server.url), "k", Arc::new(FakeClock::new())).unwrap();
    let a = call(&provider, &TextSample::new("a", "x")).unwrap();
    let b = call(&provider, &TextSample::new("b", "y")).unwrap();
    assert_eq!((a.input_tokens, a.output_tokens), (1200, 30));
    assert_eq!((b.input_tokens, b.output_tokens), (800, 20));
    let usage = provider.usage();
    assert_eq!(usage.total_requests, 2);
    assert_eq!(usage.total_input_tokens, 2000);
    assert_eq!(usage.total_output_tokens, 50);
    // 2000/1000 * 0.03 + 50/1000 * 0.06 = 0.06 + 0.003
    assert_eq!(usage.estimated_cost, Usd::from_decimal("0.063").unwrap());
    let record = UsageRecord {
        total_requests: 2,
        total_input_tokens: 2000,
        total_output_tokens: 50,
        estimated_cost: Usd::zero(),
    };
    assert_eq!(
        estimate_cost(&record, provider.config()).to_decimal(6),
        "0.063000"
    );
}

#[test]
fn missing_usage_is_approximated() {
    let body = r#"{"choices":[{"message":{"content":"LABELS: toxic=1"}}]}"#;
    let server = FakeEndpoint::start(vec![], Canned::json(200, body));
    let provider =
        HttpProvider::with_clock(config(&server.url), "k", Arc::new(FakeClock::new())).unwrap();
    let result = call(&provider, &TextSample::new("a", "x")).unwrap();
    assert_eq!(result.output_tokens, 4);
    assert!(result.input_tokens > 0);
}

#[test]
fn unreachable_endpoint_is_soft_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let cfg = ProviderConfig {
        max_retries: 1,
        ..config(&url)
    };
    let clock = Arc::new(FakeClock::new());
    let provider = HttpProvider::with_clock(cfg, "k", clock.clone()).unwrap();
    let err = call(&provider, &TextSample::new("a", "x")).unwrap_err();
    assert!(
        matches!(err, ProviderError::Transport { attempts: 2, .. }),
        "{err:?}"
    );
    assert!(!err.is_hard());
    assert_eq!(clock.sleeps(), vec![Duration::from_secs(1)]);
}
