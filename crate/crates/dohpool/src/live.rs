//! Runs an attack scenario over the network: one mock DoH server per
//! resolver, queried through the real client and combined like the service.

use std::net::IpAddr;
use std::time::Duration;

use dohpool_core::sim::{AttackScenario, ScenarioOutcome};
use dohpool_core::{
    combine_pool, AddressPool, CombineError, CombinePolicy, Question, RecordType,
};

use crate::config::{CacheConfig, Mode, ServiceConfig};
use crate::doh::{Method, ResolverEndpoint, TrustRoots};
use crate::mock::{MockBehavior, MockDohServer, MockPki};
use crate::service::Resolver;

/// Plays `scenario` through local HTTPS servers and returns the measured
/// outcome. Queries `AAAA` when the benign template is all IPv6, else `A`.
pub async fn run_live(
    scenario: &AttackScenario,
    policy: CombinePolicy,
) -> anyhow::Result<ScenarioOutcome> {
    scenario.validate()?;
    let pki = MockPki::new()?;
    let mut servers = Vec::with_capacity(scenario.n);
    let mut resolvers = Vec::with_capacity(scenario.n);
    for response in scenario.synthesize() {
        let addresses: Vec<IpAddr> = response
            .records()
            .unwrap_or_default()
            .iter()
            .map(|r| r.address)
            .collect();
        let behavior = MockBehavior::Answer {
            addresses,
            ttl: scenario.ttl,
        };
        let server = MockDohServer::start(&pki, behavior).await?;
        resolvers.push(ResolverEndpoint::new(
            response.resolver.clone(),
            &server.url(),
            Method::Post,
            Duration::from_secs(5),
        )?);
        servers.push(server);
    }
    let config = ServiceConfig {
        listen: "127.0.0.1:0".parse()?,
        resolvers,
        mode: Mode::Pool,
        x: 0.5,
        min_responders: policy.min_responders,
        empty_is_failure: policy.empty_is_failure,
        per_query_deadline: Duration::from_secs(10),
        domain_allowlist: Vec::new(),
        trust: TrustRoots::Pinned(pki.ca_pem().into_bytes()),
        cache: CacheConfig {
            enabled: false,
            ..CacheConfig::default()
        },
    };
    let resolver = Resolver::new(config)?;
    let qtype = if scenario.benign_template.iter().all(IpAddr::is_ipv6) {
        RecordType::AAAA
    } else {
        RecordType::A
    };
    let input = resolver
        .fan_out(&Question::new(scenario.qname.clone(), qtype))
        .await;
    let (pool, servfail) = match combine_pool(&input) {
        Ok(pool) => (pool, false),
        Err(CombineError::EmptyPool { .. }) => (AddressPool::default(), false),
        Err(_) => (AddressPool::default(), true),
    };
    Ok(ScenarioOutcome::measure(
        scenario,
        pool,
        servfail,
        input.responses(),
    ))
}
