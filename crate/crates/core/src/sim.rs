//! In-process resolver fleets with attacker-controlled members.
//!
//! A scenario fixes which resolvers are compromised and how they lie; the
//! simulation synthesizes every resolver's answer, runs the combiner and
//! measures how much of the resulting pool came from compromised resolvers.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{AddressRecord, Name};
use crate::combine::{
    combine_pool, AddressPool, CombineError, CombineInput, CombinePolicy, PoolEntry,
};
use crate::model::{fraction_threshold, McEstimate};
use crate::response::ResolverResponse;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario needs at least one resolver")]
    NoResolvers,
    #[error("compromised index {index} is not below n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("benign template is empty")]
    EmptyTemplate,
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("strategy {strategy} needs parameter {param}")]
    MissingParam {
        strategy: &'static str,
        param: &'static str,
    },
    #[error("bad value: {0}")]
    BadValue(String),
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
}

/// How a compromised resolver answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Strategy {
    /// Return `list_length` attacker addresses to swamp a naive union.
    Overwhelm { list_length: usize },
    /// Return an empty answer list.
    Starve,
    /// Return the given attacker addresses.
    Substitute { addresses: Vec<IpAddr> },
    /// Return one address repeated `count` times.
    Duplicate { address: IpAddr, count: usize },
    /// Answer like a benign resolver.
    Honest,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Overwhelm { .. } => "overwhelm",
            Strategy::Starve => "starve",
            Strategy::Substitute { .. } => "substitute",
            Strategy::Duplicate { .. } => "duplicate",
            Strategy::Honest => "honest",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    pub n: usize,
    pub compromised: BTreeSet<usize>,
    /// Strategy for compromised resolvers without an override.
    pub strategy: Strategy,
    pub overrides: BTreeMap<usize, Strategy>,
    /// Addresses every benign resolver returns.
    pub benign_template: Vec<IpAddr>,
    /// Shuffle each benign resolver's copy of the template.
    pub jitter: bool,
    pub ttl: u32,
    pub qname: Name,
    pub seed: u64,
}

impl AttackScenario {
    pub fn new(n: usize, compromised: impl IntoIterator<Item = usize>, strategy: Strategy) -> Self {
        AttackScenario {
            n,
            compromised: compromised.into_iter().collect(),
            strategy,
            overrides: BTreeMap::new(),
            benign_template: default_benign_template(4),
            jitter: false,
            ttl: 60,
            qname: "pool.ntp.org".parse().expect("static name"),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n == 0 {
            return Err(ScenarioError::NoResolvers);
        }
        if let Some(&index) = self
            .compromised
            .iter()
            .chain(self.overrides.keys())
            .find(|&&i| i >= self.n)
        {
            return Err(ScenarioError::IndexOutOfRange { index, n: self.n });
        }
        if self.benign_template.is_empty() {
            return Err(ScenarioError::EmptyTemplate);
        }
        Ok(())
    }

    pub fn label(index: usize) -> String {
        format!("resolver-{index}")
    }

    pub fn strategy_for(&self, index: usize) -> Option<&Strategy> {
        if !self.compromised.contains(&index) {
            return None;
        }
        Some(self.overrides.get(&index).unwrap_or(&self.strategy))
    }

    fn record(&self, address: IpAddr) -> AddressRecord {
        AddressRecord::new(self.qname.clone(), self.ttl, address)
    }

    fn benign_list(&self, index: usize) -> Vec<AddressRecord> {
        let mut addrs = self.benign_template.clone();
        if self.jitter {
            addrs.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index as u64)));
        }
        addrs.into_iter().map(|a| self.record(a)).collect()
    }

    /// Every resolver's answer, in index order.
    pub fn synthesize(&self) -> Vec<ResolverResponse> {
        let v6 = self.benign_template.iter().all(IpAddr::is_ipv6);
        (0..self.n)
            .map(|i| {
                let records = match self.strategy_for(i) {
                    None | Some(Strategy::Honest) => self.benign_list(i),
                    Some(Strategy::Starve) => Vec::new(),
                    Some(Strategy::Overwhelm { list_length }) => (0..*list_length)
                        .map(|j| self.record(attacker_address(v6, i, j)))
                        .collect(),
                    Some(Strategy::Substitute { addresses }) => {
                        addresses.iter().map(|a| self.record(*a)).collect()
                    }
                    Some(Strategy::Duplicate { address, count }) => {
                        vec![self.record(*address); *count]
                    }
                };
                ResolverResponse::answers(Self::label(i), records)
            })
            .collect()
    }
}

/// `192.0.2.1 ..` (documentation range), `count` addresses.
pub fn default_benign_template(count: usize) -> Vec<IpAddr> {
    (0..count)
        .map(|i| IpAddr::V4(Ipv4Addr::from(u32::from(Ipv4Addr::new(192, 0, 2, 1)) + i as u32)))
        .collect()
}

/// Attacker addresses live in 100.64.0.0/10 or 2001:db8:bad::/48, keyed by
/// resolver and position so they never collide with benign ones.
fn attacker_address(v6: bool, resolver: usize, j: usize) -> IpAddr {
    if v6 {
        let mut o = [0u8; 16];
        o[..6].copy_from_slice(&[0x20, 0x01, 0x0d, 0xb8, 0x0b, 0xad]);
        o[6..8].copy_from_slice(&(resolver as u16).to_be_bytes());
        o[8..16].copy_from_slice(&(j as u64).to_be_bytes());
        IpAddr::V6(Ipv6Addr::from(o))
    } else {
        let base = u32::from(Ipv4Addr::new(100, 64, 0, 0));
        let offset = ((resolver as u32) << 16 | (j as u32 & 0xffff)) & 0x003f_ffff;
        IpAddr::V4(Ipv4Addr::from(base + offset))
    }
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolverNote {
    pub resolver: String,
    pub compromised: bool,
    pub strategy: Option<&'static str>,
    pub returned: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub pool: AddressPool,
    pub attacker_entries: usize,
    /// `attacker_entries / pool.len()`, zero for an empty pool.
    pub attacker_fraction: f64,
    pub servfail: bool,
    pub notes: Vec<ResolverNote>,
}

impl ScenarioOutcome {
    /// Scores `pool` against the scenario's compromised set. `responses` are
    /// the per-resolver answers the pool was built from, in index order.
    pub fn measure(
        scenario: &AttackScenario,
        pool: AddressPool,
        servfail: bool,
        responses: &[ResolverResponse],
    ) -> Self {
        let compromised_labels: BTreeSet<String> = scenario
            .compromised
            .iter()
            .map(|&i| AttackScenario::label(i))
            .collect();
        let attacker_entries = pool
            .entries
            .iter()
            .filter(|e| compromised_labels.contains(&e.resolver))
            .count();
        let attacker_fraction = if pool.is_empty() {
            0.0
        } else {
            attacker_entries as f64 / pool.len() as f64
        };
        let notes = responses
            .iter()
            .enumerate()
            .map(|(i, r)| ResolverNote {
                resolver: r.resolver.clone(),
                compromised: scenario.compromised.contains(&i),
                strategy: scenario.strategy_for(i).map(Strategy::name),
                returned: r.records().map_or(0, <[_]>::len),
            })
            .collect();
        ScenarioOutcome {
            pool,
            attacker_entries,
            attacker_fraction,
            servfail,
            notes,
        }
    }

    /// Attacker holds at least a fraction `y` of a non-empty pool.
    pub fn attacker_reaches(&self, y: f64) -> bool {
        !self.pool.is_empty() && self.attacker_entries >= fraction_threshold(y, self.pool.len())
    }
}

/// Synthesizes the fleet's answers and combines them with truncation.
pub fn run_scenario(
    scenario: &AttackScenario,
    policy: CombinePolicy,
) -> Result<ScenarioOutcome, ScenarioError> {
    scenario.validate()?;
    let responses = scenario.synthesize();
    let input = CombineInput::new(responses.clone(), policy)
        .map_err(|e| ScenarioError::BadValue(e.to_string()))?;
    let (pool, servfail) = match combine_pool(&input) {
        Ok(pool) => (pool, false),
        Err(CombineError::EmptyPool { .. }) => (AddressPool::default(), false),
        Err(_) => (AddressPool::default(), true),
    };
    Ok(ScenarioOutcome::measure(scenario, pool, servfail, &responses))
}

/// Pools every answer without truncation, the behaviour truncation exists to
/// prevent. `k` is reported as the longest list.
pub fn run_naive_baseline(scenario: &AttackScenario) -> Result<ScenarioOutcome, ScenarioError> {
    scenario.validate()?;
    let responses = scenario.synthesize();
    let mut pool = AddressPool::default();
    for r in &responses {
        let records = r.records().unwrap_or_default();
        pool.k = pool.k.max(records.len());
        pool.contributors.push(r.resolver.clone());
        pool.entries.extend(records.iter().map(|rec| PoolEntry {
            record: rec.clone(),
            resolver: r.resolver.clone(),
        }));
    }
    Ok(ScenarioOutcome::measure(scenario, pool, false, &responses))
}

/// A family of scenarios where each resolver is compromised independently
/// with probability `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub template: AttackScenario,
    pub p: f64,
    /// Pool fraction that counts as a successful attack.
    pub y: f64,
    pub runs: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub run: u64,
    pub compromised: usize,
    pub pool_size: usize,
    pub attacker_fraction: f64,
    pub servfail: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub success: McEstimate,
}

pub fn sweep(spec: &SweepSpec, policy: CombinePolicy) -> Result<SweepReport, ScenarioError> {
    spec.template.validate()?;
    if !(0.0..=1.0).contains(&spec.p) {
        return Err(ScenarioError::BadProbability(spec.p));
    }
    if spec.runs == 0 {
        return Err(ScenarioError::BadValue("runs must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(spec.runs as usize);
    let mut successes = 0u64;
    let mut scenario = spec.template.clone();
    for run in 0..spec.runs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, run));
        scenario.compromised = (0..scenario.n).filter(|_| rng.random::<f64>() < spec.p).collect();
        scenario.seed = rng.random();
        let outcome = run_scenario(&scenario, policy)?;
        let success = outcome.attacker_reaches(spec.y);
        successes += u64::from(success);
        rows.push(SweepRow {
            run,
            compromised: scenario.compromised.len(),
            pool_size: outcome.pool.len(),
            attacker_fraction: outcome.attacker_fraction,
            servfail: outcome.servfail,
            success,
        });
    }
    Ok(SweepReport {
        rows,
        success: McEstimate::from_counts(successes, spec.runs),
    })
}

#[derive(Debug, Serialize)]
struct OutcomeRow<'a> {
    mode: &'a str,
    resolver: &'a str,
    compromised: bool,
    strategy: &'a str,
    returned: usize,
    pooled: usize,
    pool_size: usize,
    k: usize,
    attacker_fraction: f64,
    servfail: bool,
}

/// One CSV row per resolver, tagged with `mode` (e.g. `truncated`, `naive`).
pub fn write_outcome_csv<W: io::Write>(
    outcomes: &[(&str, &ScenarioOutcome)],
    out: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for (mode, outcome) in outcomes {
        for note in &outcome.notes {
            w.serialize(OutcomeRow {
                mode,
                resolver: &note.resolver,
                compromised: note.compromised,
                strategy: note.strategy.unwrap_or("-"),
                returned: note.returned,
                pooled: outcome.pool.entries_from(&note.resolver).count(),
                pool_size: outcome.pool.len(),
                k: outcome.pool.k,
                attacker_fraction: outcome.attacker_fraction,
                servfail: outcome.servfail,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

// ---- scenario files ----

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    list_length: Option<usize>,
    addresses: Option<Vec<IpAddr>>,
    address: Option<IpAddr>,
    count: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideFile {
    resolver: usize,
    strategy: String,
    #[serde(default)]
    params: ParamsFile,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    min_responders: Option<usize>,
    #[serde(default)]
    empty_is_failure: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    p: f64,
    runs: u64,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFileRaw {
    n: usize,
    #[serde(default)]
    compromised: Vec<usize>,
    strategy: String,
    #[serde(default)]
    params: ParamsFile,
    #[serde(default)]
    seed: u64,
    policy: Option<PolicyFile>,
    benign: Option<Vec<IpAddr>>,
    #[serde(default)]
    jitter: bool,
    ttl: Option<u32>,
    name: Option<String>,
    y: Option<f64>,
    #[serde(default, rename = "override")]
    overrides: Vec<OverrideFile>,
    sweep: Option<SweepFile>,
}

/// A scenario as read from a TOML file, with the policy and reporting options
/// that travel with it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: AttackScenario,
    pub policy: CombinePolicy,
    /// Pool fraction that counts as attack success; defaults to 1/2.
    pub y: f64,
    pub sweep: Option<SweepSpec>,
}

fn parse_strategy(name: &str, params: &ParamsFile) -> Result<Strategy, ScenarioError> {
    Ok(match name.to_ascii_lowercase().as_str() {
        "overwhelm" => Strategy::Overwhelm {
            list_length: params.list_length.ok_or(ScenarioError::MissingParam {
                strategy: "overwhelm",
                param: "list_length",
            })?,
        },
        "starve" => Strategy::Starve,
        "substitute" => Strategy::Substitute {
            addresses: params.addresses.clone().ok_or(ScenarioError::MissingParam {
                strategy: "substitute",
                param: "addresses",
            })?,
        },
        "duplicate" => Strategy::Duplicate {
            address: params.address.ok_or(ScenarioError::MissingParam {
                strategy: "duplicate",
                param: "address",
            })?,
            count: params.count.ok_or(ScenarioError::MissingParam {
                strategy: "duplicate",
                param: "count",
            })?,
        },
        "honest" => Strategy::Honest,
        _ => return Err(ScenarioError::UnknownStrategy(name.to_string())),
    })
}

impl ScenarioFile {
    /// Parses the TOML scenario format:
    ///
    /// ```toml
    /// n = 3
    /// compromised = [0]
    /// strategy = "overwhelm"
    /// seed = 7
    ///
    /// [params]
    /// list_length = 100
    ///
    /// [policy]
    /// min_responders = 3
    /// empty_is_failure = false
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let raw: ScenarioFileRaw = toml::from_str(text)?;
        let strategy = parse_strategy(&raw.strategy, &raw.params)?;
        let mut scenario = AttackScenario::new(raw.n, raw.compromised.iter().copied(), strategy);
        scenario.seed = raw.seed;
        scenario.jitter = raw.jitter;
        if let Some(benign) = raw.benign {
            scenario.benign_template = benign;
        }
        if let Some(ttl) = raw.ttl {
            scenario.ttl = ttl;
        }
        if let Some(name) = raw.name {
            scenario.qname = name
                .parse()
                .map_err(|e| ScenarioError::BadValue(format!("name: {e}")))?;
        }
        for o in &raw.overrides {
            scenario
                .overrides
                .insert(o.resolver, parse_strategy(&o.strategy, &o.params)?);
        }
        scenario.validate()?;

        let policy = match raw.policy {
            Some(p) => CombinePolicy {
                min_responders: p.min_responders.unwrap_or(raw.n),
                empty_is_failure: p.empty_is_failure,
            },
            None => CombinePolicy::strict(raw.n),
        };
        let y = raw.y.unwrap_or(0.5);
        if !(y > 0.0 && y <= 1.0) {
            return Err(ScenarioError::BadValue(format!("y = {y} outside (0, 1]")));
        }
        let sweep = raw.sweep.map(|s| SweepSpec {
            template: scenario.clone(),
            p: s.p,
            y,
            runs: s.runs,
            seed: s.seed.unwrap_or(raw.seed),
        });
        Ok(ScenarioFile {
            scenario,
            policy,
            y,
            sweep,
        })
    }
}
