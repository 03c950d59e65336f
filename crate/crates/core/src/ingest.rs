//! Verified-source fetching from an Etherscan-style HTTP API, with
//! client-side rate limiting, an on-disk cache, and resumable batches.

use crate::clock::Clock;
use crate::corpus::is_hex_address;
use crate::transport::{HttpRequest, Transport, TransportError};
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

/// Env var that overrides the configured API key when set.
pub const API_KEY_ENV: &str = "ETHERSCAN_API_KEY";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed address {0:?}")]
    BadAddress(String),
    #[error("contract source not verified for {0}")]
    NotVerified(String),
    #[error("http status {0}")]
    Http(u16),
    #[error("still rate limited after {0} retries")]
    RateLimited(u32),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("malformed api response: {0}")]
    BadResponse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub endpoint: String,
    pub api_key: String,
    /// Minimum spacing per network request; slept in full before every
    /// request, so a batch of n requests takes at least n intervals.
    pub min_interval: Duration,
    pub cache_dir: PathBuf,
    pub max_retries: u32,
}

impl FetchConfig {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        cache_dir: impl Into<PathBuf>,
    ) -> FetchConfig {
        FetchConfig {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            min_interval: Duration::from_millis(2000),
            cache_dir: cache_dir.into(),
            max_retries: 3,
        }
    }
}

pub struct Fetcher<'a> {
    config: FetchConfig,
    transport: &'a dyn Transport,
    clock: &'a dyn Clock,
}

impl<'a> Fetcher<'a> {
    pub fn new(config: FetchConfig, transport: &'a dyn Transport, clock: &'a dyn Clock) -> Fetcher<'a> {
        Fetcher {
            config,
            transport,
            clock,
        }
    }

    fn cache_path(&self, address: &str) -> PathBuf {
        self.config
            .cache_dir
            .join(format!("{}.sol", address.to_ascii_lowercase()))
    }

    fn api_key(&self) -> String {
        std::env::var(API_KEY_ENV).unwrap_or_else(|_| self.config.api_key.clone())
    }

    /// Fetch one contract's verified source. Cache hits return without
    /// touching the network or the rate limiter. An API-level throttle
    /// (HTTP 429 or a "rate limit" result body) retries with doubling
    /// backoff up to max_retries.
    pub fn fetch_source(&self, address: &str) -> Result<String, IngestError> {
        if !is_hex_address(address) {
            return Err(IngestError::BadAddress(address.to_string()));
        }
        let cache_path = self.cache_path(address);
        if cache_path.exists() {
            return Ok(std::fs::read_to_string(&cache_path)?);
        }

        let url = format!(
            "{}?module=contract&action=getsourcecode&address={}&apikey={}",
            self.config.endpoint,
            address,
            self.api_key()
        );
        let mut attempt = 0u32;
        let source = loop {
            self.clock.sleep(self.config.min_interval);
            let response = self.transport.execute(&HttpRequest::get(&url))?;
            let throttled = response.status == 429
                || (response.status == 200 && body_reports_throttle(&response.body));
            if throttled {
                if attempt >= self.config.max_retries {
                    return Err(IngestError::RateLimited(self.config.max_retries));
                }
                // Doubling backoff on top of the base interval.
                self.clock
                    .sleep(self.config.min_interval * 2u32.saturating_pow(attempt));
                attempt += 1;
                continue;
            }
            if response.status != 200 {
                return Err(IngestError::Http(response.status));
            }
            break parse_source_response(&response.body, address)?;
        };

        std::fs::create_dir_all(&self.config.cache_dir)?;
        std::fs::write(&cache_path, &source)?;
        Ok(source)
    }

    /// Fetch many addresses sequentially, pacing every network request.
    /// Already-cached addresses are skipped for free, which is what
    /// makes an interrupted batch resumable. Errors never abort the
    /// batch; output order equals input order.
    pub fn fetch_batch(&self, addresses: &[String]) -> Vec<(String, Result<String, IngestError>)> {
        addresses
            .iter()
            .map(|address| (address.clone(), self.fetch_source(address)))
            .collect()
    }
}

fn body_reports_throttle(body: &str) -> bool {
    let Ok(value) = serde_json::from_str::<serde_json::Value>(body) else {
        return false;
    };
    value
        .get("result")
        .and_then(serde_json::Value::as_str)
        .is_some_and(|text| text.to_ascii_lowercase().contains("rate limit"))
}

fn parse_source_response(body: &str, address: &str) -> Result<String, IngestError> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| IngestError::BadResponse(format!("not valid JSON: {e}")))?;
    let source_code = value
        .pointer("/result/0/SourceCode")
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| IngestError::BadResponse("missing result[0].SourceCode".into()))?;
    if source_code.trim().is_empty() {
        return Err(IngestError::NotVerified(address.to_string()));
    }
    Ok(flatten_source_payload(source_code))
}

/// A verified-source payload is either plain Solidity text, a JSON map
/// of files, or a doubly-braced standard-JSON input. Multi-file
/// payloads are flattened by concatenating file contents in manifest
/// order.
fn flatten_source_payload(raw: &str) -> String {
    let trimmed = raw.trim();
    let inner = if trimmed.starts_with("{{") && trimmed.ends_with("}}") {
        &trimmed[1..trimmed.len() - 1]
    } else if trimmed.starts_with('{') {
        trimmed
    } else {
        return raw.to_string();
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(inner) else {
        return raw.to_string();
    };
    let sources = value.get("sources").unwrap_or(&value);
    let Some(map) = sources.as_object() else {
        return raw.to_string();
    };
    let contents: Vec<&str> = map
        .values()
        .map(|file| file.get("content").and_then(serde_json::Value::as_str))
        .collect::<Option<Vec<_>>>()
        .unwrap_or_default();
    if contents.is_empty() {
        return raw.to_string();
    }
    contents.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FakeClock;
    use crate::transport::{FakeTransport, HttpResponse};
    use tempfile::tempdir;

    const ADDRESS: &str = "0x1234567890abcdef1234567890abcdef12345678";

    fn ok_body(source: &str) -> String {
        serde_json::json!({
            "status": "1",
            "message": "OK",
            "result": [{
                "SourceCode": source,
                "ContractName": "Probe",
                "CompilerVersion": "v0.8.21+commit.d9974bed"
            }]
        })
        .to_string()
    }

    fn config(dir: &std::path::Path) -> FetchConfig {
        FetchConfig::new("https://api.example.invalid/api", "test-key", dir)
    }

    #[test]
    fn returns_source_verbatim() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body("contract Probe {}"));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        assert_eq!(fetcher.fetch_source(ADDRESS).unwrap(), "contract Probe {}");
        let url = &transport.requests()[0].url;
        assert!(url.contains("module=contract&action=getsourcecode"));
        assert!(url.contains(&format!("address={ADDRESS}")));
    }

    #[test]
    fn empty_source_is_not_verified() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body(""));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        assert!(matches!(
            fetcher.fetch_source(ADDRESS),
            Err(IngestError::NotVerified(_))
        ));
    }

    #[test]
    fn malformed_address_rejected_before_network() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body("x"));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        assert!(matches!(
            fetcher.fetch_source("0x123"),
            Err(IngestError::BadAddress(_))
        ));
        assert_eq!(transport.calls(), 0);
    }

    #[test]
    fn cache_hit_skips_network_and_rate_limit() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body("contract Probe {}"));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        let first = fetcher.fetch_source(ADDRESS).unwrap();
        assert_eq!(transport.calls(), 1);
        let slept_after_first = clock.total_slept();

        let second = fetcher.fetch_source(ADDRESS).unwrap();
        assert_eq!(second, first);
        assert_eq!(transport.calls(), 1, "cache hit must not touch the network");
        assert_eq!(clock.total_slept(), slept_after_first, "cache hit must not sleep");

        // A fresh fetcher over the same cache directory resumes without
        // refetching.
        let fetcher2 = Fetcher::new(config(dir.path()), &transport, &clock);
        assert_eq!(fetcher2.fetch_source(ADDRESS).unwrap(), first);
        assert_eq!(transport.calls(), 1);
    }

    #[test]
    fn batch_paces_every_network_request() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body("contract Probe {}"));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        let addresses: Vec<String> = (0..2500)
            .map(|i| format!("0x{i:040x}"))
            .collect();
        let results = fetcher.fetch_batch(&addresses);
        assert_eq!(results.len(), 2500);
        assert!(results.iter().all(|(_, r)| r.is_ok()));
        // 2500 requests at >= 2 s spacing is >= 5000 s of pacing, the
        // roughly-83-minute scale for a full pull.
        assert!(clock.now() >= Duration::from_secs(5000));
        assert_eq!(transport.calls(), 2500);
        assert!(clock
            .sleeps()
            .iter()
            .all(|&gap| gap >= Duration::from_secs(2)));
    }

    #[test]
    fn batch_preserves_order_and_absorbs_errors() {
        let dir = tempdir().unwrap();
        let good = ok_body("contract Probe {}");
        let unverified = ok_body("");
        let transport = FakeTransport::new(move |request, _| {
            let body = if request.url.contains("address=0x2222") {
                unverified.clone()
            } else {
                good.clone()
            };
            Ok(HttpResponse { status: 200, body })
        });
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        let addresses = vec![
            format!("0x1111{}", "0".repeat(36)),
            format!("0x2222{}", "0".repeat(36)),
            format!("0x3333{}", "0".repeat(36)),
        ];
        let results = fetcher.fetch_batch(&addresses);
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].0, addresses[0]);
        assert!(results[0].1.is_ok());
        assert!(matches!(results[1].1, Err(IngestError::NotVerified(_))));
        assert!(results[2].1.is_ok());
    }

    #[test]
    fn http_429_retries_with_backoff_then_succeeds() {
        let dir = tempdir().unwrap();
        let body = ok_body("contract Probe {}");
        let transport = FakeTransport::new(move |_, index| {
            Ok(if index < 2 {
                HttpResponse {
                    status: 429,
                    body: String::new(),
                }
            } else {
                HttpResponse {
                    status: 200,
                    body: body.clone(),
                }
            })
        });
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        assert_eq!(fetcher.fetch_source(ADDRESS).unwrap(), "contract Probe {}");
        assert_eq!(transport.calls(), 3);
        // Base interval per request plus backoffs of 1x and 2x.
        assert_eq!(clock.total_slept(), Duration::from_secs(2 * 3 + 2 + 4));
    }

    #[test]
    fn persistent_throttle_exhausts_retries() {
        let dir = tempdir().unwrap();
        let throttle = serde_json::json!({
            "status": "0",
            "message": "NOTOK",
            "result": "Max rate limit reached, please use API Key for higher rate limit"
        })
        .to_string();
        let transport = FakeTransport::always(throttle);
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        match fetcher.fetch_source(ADDRESS) {
            Err(IngestError::RateLimited(retries)) => assert_eq!(retries, 3),
            other => panic!("expected RateLimited, got {other:?}"),
        }
        assert_eq!(transport.calls(), 4, "initial try plus three retries");
    }

    #[test]
    fn other_http_errors_surface_status() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::new(|_, _| {
            Ok(HttpResponse {
                status: 503,
                body: String::new(),
            })
        });
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        assert!(matches!(
            fetcher.fetch_source(ADDRESS),
            Err(IngestError::Http(503))
        ));
    }

    #[test]
    fn multi_file_payload_flattens_in_manifest_order() {
        let standard_json = r#"{{"language":"Solidity","sources":{"Zfirst.sol":{"content":"contract Zfirst {}"},"Asecond.sol":{"content":"contract Asecond {}"}},"settings":{}}}"#;
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body(standard_json));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        // Manifest order wins over alphabetical order.
        assert_eq!(
            fetcher.fetch_source(ADDRESS).unwrap(),
            "contract Zfirst {}\ncontract Asecond {}"
        );
    }

    #[test]
    fn bare_sources_map_also_flattens() {
        assert_eq!(
            flatten_source_payload(r#"{"B.sol":{"content":"contract B {}"},"A.sol":{"content":"contract A {}"}}"#),
            "contract B {}\ncontract A {}"
        );
        assert_eq!(flatten_source_payload("contract Plain {}"), "contract Plain {}");
        assert_eq!(flatten_source_payload("{ not json"), "{ not json");
    }

    #[test]
    fn env_var_overrides_config_key() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(ok_body("contract Probe {}"));
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);

        std::env::set_var(API_KEY_ENV, "env-key");
        let _ = fetcher.fetch_source(ADDRESS);
        std::env::remove_var(API_KEY_ENV);
        assert!(transport.requests()[0].url.ends_with("apikey=env-key"));

        let addr2 = format!("0x9999{}", "0".repeat(36));
        let _ = fetcher.fetch_source(&addr2);
        assert!(transport.requests()[1].url.ends_with("apikey=test-key"));
    }

    #[test]
    fn missing_source_field_is_bad_response() {
        let dir = tempdir().unwrap();
        let transport = FakeTransport::always(r#"{"status":"1","result":[]}"#.to_string());
        let clock = FakeClock::new();
        let fetcher = Fetcher::new(config(dir.path()), &transport, &clock);
        assert!(matches!(
            fetcher.fetch_source(ADDRESS),
            Err(IngestError::BadResponse(_))
        ));
    }
}
