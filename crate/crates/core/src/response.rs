//! What one resolver said about one question.

use std::fmt;
use std::time::Duration;

use crate::codec::{AddressRecord, Rcode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureKind {
    Timeout,
    TransportError(String),
    HttpStatus(u16),
    MalformedDnsPayload(String),
    DnsError(Rcode),
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureKind::Timeout => f.write_str("timeout"),
            FailureKind::TransportError(e) => write!(f, "transport error: {e}"),
            FailureKind::HttpStatus(code) => write!(f, "http status {code}"),
            FailureKind::MalformedDnsPayload(e) => write!(f, "malformed dns payload: {e}"),
            FailureKind::DnsError(rcode) => write!(f, "dns error {rcode}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Address records in upstream answer-section order, duplicates kept.
    Answers(Vec<AddressRecord>),
    Failure(FailureKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolverResponse {
    pub resolver: String,
    pub outcome: Outcome,
    pub rtt: Duration,
    /// Set whenever a DNS message came back, whatever its rcode.
    pub rcode: Option<Rcode>,
}

impl ResolverResponse {
    pub fn answers(resolver: impl Into<String>, records: Vec<AddressRecord>) -> Self {
        ResolverResponse {
            resolver: resolver.into(),
            outcome: Outcome::Answers(records),
            rtt: Duration::ZERO,
            rcode: Some(Rcode::NoError),
        }
    }

    pub fn failure(resolver: impl Into<String>, kind: FailureKind) -> Self {
        let rcode = match &kind {
            FailureKind::DnsError(rcode) => Some(*rcode),
            _ => None,
        };
        ResolverResponse {
            resolver: resolver.into(),
            outcome: Outcome::Failure(kind),
            rtt: Duration::ZERO,
            rcode,
        }
    }

    pub fn with_rtt(mut self, rtt: Duration) -> Self {
        self.rtt = rtt;
        self
    }

    pub fn records(&self) -> Option<&[AddressRecord]> {
        match &self.outcome {
            Outcome::Answers(records) => Some(records),
            Outcome::Failure(_) => None,
        }
    }

    /// One-word summary for logs and scenario notes.
    pub fn summary(&self) -> String {
        match &self.outcome {
            Outcome::Answers(records) => format!("{} records", records.len()),
            Outcome::Failure(kind) => kind.to_string(),
        }
    }
}
