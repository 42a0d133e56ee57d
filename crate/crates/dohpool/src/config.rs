//! Service configuration: TOML file plus environment overrides.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use dohpool_core::model::fraction_threshold;
use dohpool_core::{CombinePolicy, Name};
use serde::Deserialize;
use thiserror::Error;

use crate::doh::{DohError, Method, ResolverEndpoint, TrustRoots};

/// Overrides the port of `listen`.
pub const ENV_PORT: &str = "DOHPOOL_PORT";
/// Log filter, in `tracing_subscriber::EnvFilter` syntax.
pub const ENV_LOG: &str = "DOHPOOL_LOG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("at least one resolver must be configured")]
    NoResolvers,
    #[error("resolver label {0:?} is used more than once")]
    DuplicateLabel(String),
    #[error("resolver {label}: {source}")]
    Resolver { label: String, source: DohError },
    #[error("min_responders is {min}, but only {n} resolvers are configured")]
    MinResponders { min: usize, n: usize },
    #[error("x must lie in [0, 1], got {0}")]
    Fraction(f64),
    #[error("per_query_deadline_ms must be positive")]
    ZeroDeadline,
    #[error("allowlist entry {entry:?}: {reason}")]
    Allowlist { entry: String, reason: String },
    #[error("{var}={value:?} is not a valid port")]
    EnvPort { var: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Truncate to the shortest list and interleave.
    #[default]
    Pool,
    /// Keep only addresses a strict majority of responders agree on.
    Majority,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Pool => "pool",
            Mode::Majority => "majority",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub enabled: bool,
    /// Upper bound on how long a combined answer is reused.
    pub max_ttl: Duration,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            enabled: true,
            max_ttl: Duration::from_secs(300),
        }
    }
}

/// Validated, immutable service configuration.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub resolvers: Vec<ResolverEndpoint>,
    pub mode: Mode,
    /// Assumed fraction of resolvers that are not under attack. Reported, not
    /// used to combine.
    pub x: f64,
    pub min_responders: usize,
    pub empty_is_failure: bool,
    pub per_query_deadline: Duration,
    /// Suffixes the service answers for. Empty means any name.
    pub domain_allowlist: Vec<Name>,
    pub trust: TrustRoots,
    pub cache: CacheConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default = "default_listen")]
    listen: SocketAddr,
    #[serde(default)]
    mode: Mode,
    #[serde(default = "default_x")]
    x: f64,
    min_responders: Option<usize>,
    #[serde(default)]
    empty_is_failure: bool,
    #[serde(default = "default_deadline_ms")]
    per_query_deadline_ms: u64,
    #[serde(default)]
    domain_allowlist: Vec<String>,
    /// PEM bundle; when set it replaces the system roots.
    ca_file: Option<PathBuf>,
    #[serde(default)]
    cache: RawCache,
    #[serde(default)]
    resolvers: Vec<RawResolver>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCache {
    #[serde(default = "yes")]
    enabled: bool,
    #[serde(default = "default_max_ttl")]
    max_ttl: u64,
}

impl Default for RawCache {
    fn default() -> Self {
        RawCache {
            enabled: true,
            max_ttl: default_max_ttl(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResolver {
    label: String,
    url: String,
    #[serde(default)]
    method: MethodName,
    #[serde(default = "default_timeout_ms")]
    timeout_ms: u64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
enum MethodName {
    #[default]
    Post,
    Get,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 53))
}
fn default_x() -> f64 {
    0.5
}
fn default_deadline_ms() -> u64 {
    2000
}
fn default_timeout_ms() -> u64 {
    1500
}
fn default_max_ttl() -> u64 {
    300
}
fn yes() -> bool {
    true
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Parses and validates. Relative `ca_file` paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        if raw.resolvers.is_empty() {
            return Err(ConfigError::NoResolvers);
        }
        let mut labels = HashSet::new();
        let mut resolvers = Vec::with_capacity(raw.resolvers.len());
        for r in raw.resolvers {
            if !labels.insert(r.label.clone()) {
                return Err(ConfigError::DuplicateLabel(r.label));
            }
            let method = match r.method {
                MethodName::Post => Method::Post,
                MethodName::Get => Method::Get,
            };
            let endpoint =
                ResolverEndpoint::new(&r.label, &r.url, method, Duration::from_millis(r.timeout_ms))
                    .map_err(|source| ConfigError::Resolver {
                        label: r.label.clone(),
                        source,
                    })?;
            resolvers.push(endpoint);
        }
        let n = resolvers.len();
        let min_responders = raw.min_responders.unwrap_or(n);
        if min_responders > n {
            return Err(ConfigError::MinResponders {
                min: min_responders,
                n,
            });
        }
        if !(0.0..=1.0).contains(&raw.x) {
            return Err(ConfigError::Fraction(raw.x));
        }
        if raw.per_query_deadline_ms == 0 {
            return Err(ConfigError::ZeroDeadline);
        }
        let domain_allowlist = raw
            .domain_allowlist
            .iter()
            .map(|entry| {
                entry
                    .parse::<Name>()
                    .map(|n| n.to_lowercase())
                    .map_err(|e| ConfigError::Allowlist {
                        entry: entry.clone(),
                        reason: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let trust = match raw.ca_file {
            None => TrustRoots::System,
            Some(path) => {
                let path = base.join(path);
                let pem = std::fs::read(&path).map_err(|source| ConfigError::Read { path, source })?;
                TrustRoots::Pinned(pem)
            }
        };
        Ok(ServiceConfig {
            listen: raw.listen,
            resolvers,
            mode: raw.mode,
            x: raw.x,
            min_responders,
            empty_is_failure: raw.empty_is_failure,
            per_query_deadline: Duration::from_millis(raw.per_query_deadline_ms),
            domain_allowlist,
            trust,
            cache: CacheConfig {
                enabled: raw.cache.enabled,
                max_ttl: Duration::from_secs(raw.cache.max_ttl),
            },
        })
    }

    /// Applies [`ENV_PORT`] if `lookup` yields it.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        if let Some(value) = lookup(ENV_PORT) {
            let port = value.trim().parse::<u16>().map_err(|_| ConfigError::EnvPort {
                var: ENV_PORT,
                value: value.clone(),
            })?;
            self.listen.set_port(port);
        }
        Ok(())
    }

    pub fn policy(&self) -> CombinePolicy {
        CombinePolicy {
            min_responders: self.min_responders,
            empty_is_failure: self.empty_is_failure,
        }
    }

    pub fn allows(&self, name: &Name) -> bool {
        self.domain_allowlist.is_empty()
            || self.domain_allowlist.iter().any(|s| name.is_subdomain_of(s))
    }

    /// What the configuration promises, given that at least `x` of the
    /// resolvers are honest.
    pub fn guarantee(&self) -> Guarantee {
        let n = self.resolvers.len();
        let honest = fraction_threshold(self.x, n);
        let max_compromised = n - honest.min(n);
        Guarantee {
            n,
            min_responders: self.min_responders,
            max_compromised,
            worst_case_fraction: if self.min_responders == 0 {
                1.0
            } else {
                (max_compromised as f64 / self.min_responders as f64).min(1.0)
            },
        }
    }
}

/// Worst-case attacker share of a served pool under the configured assumption.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guarantee {
    pub n: usize,
    pub min_responders: usize,
    /// Largest number of compromised resolvers consistent with `x`.
    pub max_compromised: usize,
    /// Attacker share of the pool when all of them answer and only
    /// `min_responders` resolvers respond in total.
    pub worst_case_fraction: f64,
}
