//! HTTP transport seam. Production code talks to the network through
//! the [`Transport`] trait; tests swap in [`FakeTransport`], and
//! offline runs use [`DenyTransport`] so a stray request is an error
//! instead of a socket.

use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("network: {0}")]
    Network(String),
    #[error("request timed out")]
    Timeout,
    #[error("network access is disabled")]
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

/// One request. Responses carry the status verbatim; non-2xx is not a
/// transport error, callers decide what statuses mean.
#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> HttpRequest {
        HttpRequest {
            method: Method::Get,
            url: url.into(),
            headers: Vec::new(),
            body: None,
        }
    }

    pub fn post(url: impl Into<String>, body: impl Into<String>) -> HttpRequest {
        HttpRequest {
            method: Method::Post,
            url: url.into(),
            headers: Vec::new(),
            body: Some(body.into()),
        }
    }

    pub fn with_header(mut self, name: impl Into<String>, value: impl Into<String>) -> HttpRequest {
        self.headers.push((name.into(), value.into()));
        self
    }
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Real HTTP via a blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Option<Duration>) -> Result<ReqwestTransport, TransportError> {
        let mut builder = reqwest::blocking::Client::builder();
        if let Some(timeout) = timeout {
            builder = builder.timeout(timeout);
        }
        let client = builder
            .build()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = match request.method {
            Method::Get => self.client.get(&request.url),
            Method::Post => self.client.post(&request.url),
        };
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        if let Some(body) = &request.body {
            builder = builder.body(body.clone());
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response.text().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else {
                TransportError::Network(e.to_string())
            }
        })?;
        Ok(HttpResponse { status, body })
    }
}

/// Scripted transport for tests: a handler maps (request, call index)
/// to a response, and every request is recorded.
pub struct FakeTransport {
    #[allow(clippy::type_complexity)]
    handler: Box<dyn Fn(&HttpRequest, usize) -> Result<HttpResponse, TransportError> + Send + Sync>,
    requests: Mutex<Vec<HttpRequest>>,
}

impl FakeTransport {
    pub fn new<F>(handler: F) -> FakeTransport
    where
        F: Fn(&HttpRequest, usize) -> Result<HttpResponse, TransportError> + Send + Sync + 'static,
    {
        FakeTransport {
            handler: Box::new(handler),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Same 200 body for every request.
    pub fn always(body: impl Into<String>) -> FakeTransport {
        let body = body.into();
        FakeTransport::new(move |_, _| {
            Ok(HttpResponse {
                status: 200,
                body: body.clone(),
            })
        })
    }

    pub fn requests(&self) -> Vec<HttpRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Transport for FakeTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut requests = self.requests.lock().unwrap();
        let index = requests.len();
        requests.push(request.clone());
        drop(requests);
        (self.handler)(request, index)
    }
}

/// Refuses every request. The offline default: any code path that
/// tries the network fails loudly instead of opening a socket.
pub struct DenyTransport;

impl Transport for DenyTransport {
    fn execute(&self, _request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        Err(TransportError::Disabled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fake_transport_records_and_sequences() {
        let transport = FakeTransport::new(|request, index| {
            assert_eq!(request.method, Method::Get);
            Ok(HttpResponse {
                status: if index == 0 { 429 } else { 200 },
                body: format!("call {index}"),
            })
        });
        let request = HttpRequest::get("http://example.invalid/a");
        assert_eq!(transport.execute(&request).unwrap().status, 429);
        assert_eq!(transport.execute(&request).unwrap().body, "call 1");
        assert_eq!(transport.calls(), 2);
        assert_eq!(transport.requests()[0].url, "http://example.invalid/a");
    }

    #[test]
    fn deny_transport_blocks_everything() {
        let transport = DenyTransport;
        let result = transport.execute(&HttpRequest::get("http://example.invalid"));
        assert!(matches!(result, Err(TransportError::Disabled)));
    }

    #[test]
    fn request_builder_sets_fields() {
        let request = HttpRequest::post("http://example.invalid/v1", "{}")
            .with_header("Authorization", "Bearer k");
        assert_eq!(request.method, Method::Post);
        assert_eq!(request.body.as_deref(), Some("{}"));
        assert_eq!(
            request.headers,
            vec![("Authorization".to_string(), "Bearer k".to_string())]
        );
    }
}
