//! Real HTTP tool endpoints.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use super::{missing_required, ScenarioError, ToolExecutor};
use crate::types::{Args, Observation, ObservationStatus, ToolSpec};

pub const DEFAULT_LIVE_TIMEOUT_MS: u64 = 15_000;

fn default_timeout_ms() -> u64 {
    DEFAULT_LIVE_TIMEOUT_MS
}

fn default_method() -> String {
    "GET".into()
}

fn default_auth_header() -> String {
    "Authorization".into()
}

/// One tool's HTTP binding. `{param}` placeholders in `url` are filled from
/// the call's arguments; remaining arguments go to the query string (GET,
/// DELETE) or a JSON body (POST, PUT, PATCH).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveEndpoint {
    pub url: String,
    #[serde(default = "default_method")]
    pub method: String,
    /// Environment variable holding the auth token, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default = "default_auth_header")]
    pub auth_header: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSpec {
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    pub tools: BTreeMap<String, LiveEndpoint>,
}

impl EndpointSpec {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let parse = |message: String| ScenarioError::Parse {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| parse(e.to_string()))?;
        let spec: Self = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        for (tool, ep) in &spec.tools {
            if !matches!(
                ep.method.to_ascii_uppercase().as_str(),
                "GET" | "DELETE" | "POST" | "PUT" | "PATCH"
            ) {
                return Err(parse(format!("{tool}: unsupported method {:?}", ep.method)));
            }
        }
        Ok(spec)
    }
}

/// Executes tool calls against real endpoints. Never panics or errors into
/// the engine: every outcome becomes an [`Observation`].
#[derive(Debug, Clone)]
pub struct LiveInvoker {
    spec: EndpointSpec,
    tools: Vec<ToolSpec>,
    agent: ureq::Agent,
}

impl LiveInvoker {
    pub fn new(spec: EndpointSpec, tools: Vec<ToolSpec>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(spec.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { spec, tools, agent }
    }

    pub fn spec(&self) -> &EndpointSpec {
        &self.spec
    }
}

fn encode(value: &str) -> String {
    utf8_percent_encode(value, NON_ALPHANUMERIC).to_string()
}

/// Fills `{name}` placeholders and returns the URL plus unused arguments.
fn fill_url(template: &str, args: &Args) -> (String, Args) {
    let mut url = template.to_owned();
    let mut rest = Args::new();
    for (key, value) in args {
        let placeholder = format!("{{{key}}}");
        if url.contains(&placeholder) {
            url = url.replace(&placeholder, &encode(&value.as_plain_text()));
        } else {
            rest.insert(key.clone(), value.clone());
        }
    }
    (url, rest)
}

fn with_query(url: String, extra: &Args) -> String {
    if extra.is_empty() {
        return url;
    }
    let query: Vec<String> = extra
        .iter()
        .map(|(k, v)| format!("{}={}", encode(k), encode(&v.as_plain_text())))
        .collect();
    let sep = if url.contains('?') { '&' } else { '?' };
    format!("{url}{sep}{}", query.join("&"))
}

fn is_timeout(err: &ureq::Error) -> bool {
    match err {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(e) => matches!(
            e.kind(),
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
        ),
        _ => false,
    }
}

impl ToolExecutor for LiveInvoker {
    fn invoke(&mut self, tool_name: &str, args: &Args) -> Observation {
        let fail = |status, code, message: String| {
            Observation::failure(tool_name, args, status, code, message)
        };
        let Some(endpoint) = self.spec.tools.get(tool_name) else {
            return fail(
                ObservationStatus::ToolError,
                None,
                format!("unknown tool: {tool_name}"),
            );
        };
        if let Some(spec) = self.tools.iter().find(|t| t.name == tool_name) {
            if let Some(param) = missing_required(spec, args) {
                return fail(
                    ObservationStatus::ToolError,
                    Some(400),
                    format!("missing required parameter: {param}"),
                );
            }
        }
        let token = endpoint
            .auth_env
            .as_deref()
            .and_then(|v| std::env::var(v).ok());
        let (url, extra) = fill_url(&endpoint.url, args);
        let method = endpoint.method.to_ascii_uppercase();
        let started = Instant::now();
        let result = match method.as_str() {
            "GET" | "DELETE" => {
                let url = with_query(url, &extra);
                let mut req = if method == "GET" {
                    self.agent.get(&url)
                } else {
                    self.agent.delete(&url)
                };
                if let Some(t) = &token {
                    req = req.header(endpoint.auth_header.as_str(), t.as_str());
                }
                req.call()
            }
            _ => {
                let body = serde_json::to_string(&extra).unwrap_or_else(|_| "{}".into());
                let mut req = match method.as_str() {
                    "PUT" => self.agent.put(&url),
                    "PATCH" => self.agent.patch(&url),
                    _ => self.agent.post(&url),
                }
                .header("Content-Type", "application/json");
                if let Some(t) = &token {
                    req = req.header(endpoint.auth_header.as_str(), t.as_str());
                }
                req.send(body.as_str())
            }
        };
        let latency = started.elapsed().as_millis() as u64;
        let mut response = match result {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => {
                return fail(
                    ObservationStatus::Timeout,
                    None,
                    format!("no response within {} ms", self.spec.timeout_ms),
                )
                .with_latency_ms(latency)
            }
            Err(e) => {
                return fail(ObservationStatus::ToolError, None, e.to_string())
                    .with_latency_ms(latency)
            }
        };
        let status = response.status().as_u16();
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) if is_timeout(&e) => {
                return fail(
                    ObservationStatus::Timeout,
                    None,
                    format!("no response within {} ms", self.spec.timeout_ms),
                )
                .with_latency_ms(latency)
            }
            Err(e) => {
                return fail(
                    ObservationStatus::MalformedResponse,
                    Some(status),
                    e.to_string(),
                )
                .with_latency_ms(latency)
            }
        };
        let latency = started.elapsed().as_millis() as u64;
        if (200..300).contains(&status) {
            Observation::success(tool_name, args, body).with_latency_ms(latency)
        } else {
            let message = if body.trim().is_empty() {
                format!("HTTP {status}")
            } else {
                body
            };
            fail(ObservationStatus::ToolError, Some(status), message).with_latency_ms(latency)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{StubResponse, StubServer};
    use crate::types::{args, ParamSpec};

    fn invoker(url: String, method: &str, timeout_ms: u64) -> LiveInvoker {
        let mut tools = BTreeMap::new();
        tools.insert(
            "get_weather".to_owned(),
            LiveEndpoint {
                url,
                method: method.into(),
                auth_env: Some("SUM2ACT_TEST_WEATHER_TOKEN".into()),
                auth_header: "X-Api-Key".into(),
            },
        );
        LiveInvoker::new(
            EndpointSpec { timeout_ms, tools },
            vec![ToolSpec::new("get_weather", "w").with_param(ParamSpec::required("city", "c"))],
        )
    }

    #[test]
    fn success_maps_body() {
        let server = StubServer::start(|_, _| StubResponse::new(200, "sunny 29C")).unwrap();
        let mut inv = invoker(format!("{}/weather/{{city}}", server.url()), "GET", 2000);
        let obs = inv.invoke(
            "get_weather",
            &args([("city", "San José"), ("units", "metric")]),
        );
        assert_eq!(obs.status, ObservationStatus::Success);
        assert_eq!(obs.payload, "sunny 29C");
        let req = &server.requests()[0];
        assert_eq!(req.method, "GET");
        assert_eq!(req.path, "/weather/San%20Jos%C3%A9?units=metric");
    }

    #[test]
    fn not_found_is_tool_error_with_code() {
        let server = StubServer::start(|_, _| StubResponse::new(404, "no such city")).unwrap();
        let mut inv = invoker(format!("{}/w?city={{city}}", server.url()), "GET", 2000);
        let obs = inv.invoke("get_weather", &args([("city", "Atlantis")]));
        assert_eq!(obs.status, ObservationStatus::ToolError);
        let err = obs.error.unwrap();
        assert_eq!(err.code, Some(404));
        assert_eq!(err.message, "no such city");
    }

    #[test]
    fn slow_server_is_timeout() {
        let server = StubServer::start(|_, _| {
            StubResponse::new(200, "late").delayed(Duration::from_millis(1500))
        })
        .unwrap();
        let mut inv = invoker(format!("{}/w", server.url()), "GET", 200);
        let obs = inv.invoke("get_weather", &args([("city", "Miami")]));
        assert_eq!(obs.status, ObservationStatus::Timeout);
    }

    #[test]
    fn refused_connection_is_tool_error() {
        let url = {
            let server = StubServer::start(|_, _| StubResponse::new(200, "")).unwrap();
            server.url()
        };
        let mut inv = invoker(format!("{url}/w"), "GET", 1000);
        let obs = inv.invoke("get_weather", &args([("city", "Miami")]));
        assert_eq!(obs.status, ObservationStatus::ToolError);
        assert!(obs.error.unwrap().code.is_none());
    }

    #[test]
    fn post_sends_json_and_auth() {
        let server = StubServer::start(|_, _| StubResponse::new(201, "ok")).unwrap();
        std::env::set_var("SUM2ACT_TEST_WEATHER_TOKEN", "secret");
        let mut inv = invoker(format!("{}/w", server.url()), "post", 2000);
        let obs = inv.invoke("get_weather", &args([("city", "Miami")]));
        assert!(obs.is_success());
        let req = &server.requests()[0];
        assert_eq!(req.method, "POST");
        assert_eq!(
            req.headers.get("x-api-key").map(String::as_str),
            Some("secret")
        );
        assert_eq!(req.body, r#"{"city":"Miami"}"#);
    }

    #[test]
    fn validation_before_network() {
        let server = StubServer::start(|_, _| StubResponse::new(200, "x")).unwrap();
        let mut inv = invoker(server.url(), "GET", 1000);
        let obs = inv.invoke("get_weather", &Args::new());
        assert_eq!(
            obs.error.unwrap().message,
            "missing required parameter: city"
        );
        assert_eq!(
            inv.invoke("nope", &Args::new()).error.unwrap().message,
            "unknown tool: nope"
        );
        assert_eq!(server.hits(), 0);
    }
}
