//! RFC 8484 client: one question to one resolver, one [`ResolverResponse`] back.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use dohpool_core::codec::{EncodeError, MAX_MESSAGE_LEN};
use dohpool_core::{
    decode_message, encode_message, DnsMessage, FailureKind, Question, Rcode, ResolverResponse,
};
use reqwest::header::CONTENT_TYPE;
use thiserror::Error;
use tokio::time::Instant;
use url::Url;

pub const DNS_MESSAGE_MEDIA_TYPE: &str = "application/dns-message";
/// GET requests whose URL would exceed this many bytes go out as POST.
pub const MAX_GET_URL_LEN: usize = 2048;

#[derive(Debug, Error)]
pub enum DohError {
    #[error("resolver url {0} does not use https")]
    InsecureScheme(String),
    #[error("invalid resolver url {url}: {reason}")]
    BadUrl { url: String, reason: String },
    #[error("GET url would be {len} bytes, limit is {MAX_GET_URL_LEN}")]
    MessageTooLarge { len: usize },
    #[error("message is not a recursive query")]
    NotAQuery,
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("reading trust roots: {0}")]
    TrustRoots(String),
    #[error("building http client: {0}")]
    Client(#[from] reqwest::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Post,
    Get,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "POST" => Ok(Method::Post),
            "GET" => Ok(Method::Get),
            _ => Err(format!("unknown method {s:?}, expected GET or POST")),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Post => "POST",
            Method::Get => "GET",
        })
    }
}

/// One trusted DoH resolver.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolverEndpoint {
    pub label: String,
    /// Endpoint URL. A trailing `{?dns}` URI template is accepted and stripped.
    pub url: Url,
    pub method: Method,
    pub timeout: Duration,
}

impl ResolverEndpoint {
    pub fn new(
        label: impl Into<String>,
        url: &str,
        method: Method,
        timeout: Duration,
    ) -> Result<Self, DohError> {
        let template = url.trim();
        let stripped = template.strip_suffix("{?dns}").unwrap_or(template);
        let parsed = Url::parse(stripped).map_err(|e| DohError::BadUrl {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
        if parsed.scheme() != "https" {
            return Err(DohError::InsecureScheme(url.to_string()));
        }
        Ok(ResolverEndpoint {
            label: label.into(),
            url: parsed,
            method,
            timeout,
        })
    }
}

/// An HTTP request ready to send, independent of any HTTP library.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DohRequest {
    pub method: Method,
    pub url: Url,
    pub headers: Vec<(&'static str, String)>,
    pub body: Option<Vec<u8>>,
}

/// Builds the RFC 8484 request for `msg`. The DNS id is zeroed; responses
/// are matched by question.
pub fn build_doh_request(
    endpoint: &ResolverEndpoint,
    msg: &DnsMessage,
) -> Result<DohRequest, DohError> {
    if msg.header.qr || !msg.header.rd || msg.question.is_none() {
        return Err(DohError::NotAQuery);
    }
    let mut msg = msg.clone();
    msg.header.id = 0;
    let wire = encode_message(&msg, MAX_MESSAGE_LEN)?;
    let accept = ("accept", DNS_MESSAGE_MEDIA_TYPE.to_string());
    match endpoint.method {
        Method::Post => Ok(DohRequest {
            method: Method::Post,
            url: endpoint.url.clone(),
            headers: vec![("content-type", DNS_MESSAGE_MEDIA_TYPE.to_string()), accept],
            body: Some(wire),
        }),
        Method::Get => {
            let mut url = endpoint.url.clone();
            url.query_pairs_mut()
                .append_pair("dns", &URL_SAFE_NO_PAD.encode(&wire));
            let len = url.as_str().len();
            if len > MAX_GET_URL_LEN {
                return Err(DohError::MessageTooLarge { len });
            }
            Ok(DohRequest {
                method: Method::Get,
                url,
                headers: vec![accept],
                body: None,
            })
        }
    }
}

/// Where server certificates are anchored. Validation is always on.
#[derive(Debug, Clone, Default)]
pub enum TrustRoots {
    /// The platform's trust store.
    #[default]
    System,
    /// Only these PEM-encoded roots.
    Pinned(Vec<u8>),
}

/// Shared HTTPS client. Cheap to clone; safe to use from many tasks at once.
#[derive(Debug, Clone)]
pub struct DohClient {
    http: reqwest::Client,
}

impl DohClient {
    pub fn new(trust: &TrustRoots) -> Result<Self, DohError> {
        let mut builder = reqwest::Client::builder()
            .https_only(true)
            .no_proxy()
            .user_agent(concat!("dohpool/", env!("CARGO_PKG_VERSION")));
        if let TrustRoots::Pinned(pem) = trust {
            let certs = reqwest::Certificate::from_pem_bundle(pem)
                .map_err(|e| DohError::TrustRoots(e.to_string()))?;
            if certs.is_empty() {
                return Err(DohError::TrustRoots("no certificates in bundle".into()));
            }
            builder = builder.tls_certs_only(certs);
        }
        Ok(DohClient {
            http: builder.build()?,
        })
    }

    /// Asks `endpoint` for `question`. Never returns an error: every failure
    /// is reported in the response so the caller sees partial failure.
    /// Gives up after the endpoint timeout or `budget`, whichever is shorter.
    pub async fn query(
        &self,
        endpoint: &ResolverEndpoint,
        question: &Question,
        budget: Duration,
    ) -> ResolverResponse {
        let started = Instant::now();
        let limit = endpoint.timeout.min(budget);
        let outcome = match tokio::time::timeout(limit, self.exchange(endpoint, question)).await {
            Ok(result) => result,
            Err(_) => Err(FailureKind::Timeout),
        };
        let rtt = started.elapsed();
        match outcome {
            Ok(reply) => interpret(&endpoint.label, question, reply).with_rtt(rtt),
            Err(kind) => ResolverResponse::failure(endpoint.label.clone(), kind).with_rtt(rtt),
        }
    }

    async fn exchange(
        &self,
        endpoint: &ResolverEndpoint,
        question: &Question,
    ) -> Result<DnsMessage, FailureKind> {
        if !question.qtype.is_address() {
            return Err(FailureKind::TransportError(format!(
                "query type {} is not an address type",
                question.qtype
            )));
        }
        let query = DnsMessage::query(0, question.clone());
        let request = match build_doh_request(endpoint, &query) {
            Err(DohError::MessageTooLarge { .. }) => {
                let post = ResolverEndpoint {
                    method: Method::Post,
                    ..endpoint.clone()
                };
                build_doh_request(&post, &query)
            }
            other => other,
        }
        .map_err(|e| FailureKind::TransportError(e.to_string()))?;

        let mut builder = match request.method {
            Method::Post => self.http.post(request.url),
            Method::Get => self.http.get(request.url),
        };
        for (name, value) in request.headers {
            builder = builder.header(name, value);
        }
        if let Some(body) = request.body {
            builder = builder.body(body);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| FailureKind::TransportError(error_chain(&e)))?;
        let status = response.status();
        if !status.is_success() {
            return Err(FailureKind::HttpStatus(status.as_u16()));
        }
        let content_type = response
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned)
            .unwrap_or_default();
        if !content_type
            .split(';')
            .next()
            .is_some_and(|t| t.trim().eq_ignore_ascii_case(DNS_MESSAGE_MEDIA_TYPE))
        {
            return Err(FailureKind::MalformedDnsPayload(format!(
                "content-type {content_type:?}"
            )));
        }
        let body = response
            .bytes()
            .await
            .map_err(|e| FailureKind::TransportError(error_chain(&e)))?;
        decode_message(&body).map_err(|e| FailureKind::MalformedDnsPayload(e.to_string()))
    }
}

/// Validates a decoded reply and extracts the answers that match the qtype,
/// in upstream order.
fn interpret(label: &str, question: &Question, reply: DnsMessage) -> ResolverResponse {
    if !reply.header.qr {
        return ResolverResponse::failure(
            label,
            FailureKind::MalformedDnsPayload("reply is not a response".into()),
        );
    }
    if reply.question.as_ref() != Some(question) {
        return ResolverResponse::failure(
            label,
            FailureKind::MalformedDnsPayload("reply question does not match".into()),
        );
    }
    if reply.header.rcode != Rcode::NoError {
        return ResolverResponse::failure(label, FailureKind::DnsError(reply.header.rcode));
    }
    let records = reply
        .answers
        .into_iter()
        .filter(|r| r.rtype() == question.qtype)
        .collect();
    ResolverResponse::answers(label, records)
}

fn error_chain(err: &dyn std::error::Error) -> String {
    let mut text = err.to_string();
    let mut source = err.source();
    while let Some(inner) = source {
        text.push_str(": ");
        text.push_str(&inner.to_string());
        source = inner.source();
    }
    text
}
