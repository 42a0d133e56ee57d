//! Browser bindings for the dohpool demo page.
//!
//! Each exported function takes plain form values and returns a JSON string,
//! or a JSON object with an `error` field when the input is rejected.

use std::net::IpAddr;

use dohpool_core::model::{security_curve, CurveRow, McSettings};
use dohpool_core::sim::{run_naive_baseline, run_scenario, AttackScenario, ScenarioOutcome, Strategy};
use dohpool_core::{
    combine_pool_allow_empty, majority_vote, AddressRecord, CombineInput, CombinePolicy, Name,
    ResolverResponse,
};
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

#[derive(Debug, Serialize)]
pub struct CurveView {
    pub rows: Vec<CurveRow>,
}

/// Attack probability for every `n` in `n_min..=n_max` and every `p` in the
/// comma-separated list. `trials == 0` skips the Monte Carlo column.
pub fn curve(n_min: usize, n_max: usize, x: f64, ps: &str, trials: u32) -> Result<CurveView, String> {
    if n_min == 0 || n_min > n_max || n_max > 64 {
        return Err("n range must satisfy 1 <= min <= max <= 64".into());
    }
    let ps = ps
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad probability {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if ps.is_empty() {
        return Err("give at least one probability".into());
    }
    let ns: Vec<usize> = (n_min..=n_max).collect();
    let mc = (trials > 0).then_some(McSettings {
        trials: trials.into(),
        seed: 1,
    });
    let rows = security_curve(&ns, x, &ps, mc).map_err(|e| e.to_string())?;
    Ok(CurveView { rows })
}

#[derive(Debug, Serialize)]
pub struct PoolEntryView {
    pub address: String,
    pub resolver: String,
    pub attacker: bool,
}

#[derive(Debug, Serialize)]
pub struct OutcomeView {
    pub entries: Vec<PoolEntryView>,
    pub k: usize,
    pub attacker_entries: usize,
    pub attacker_fraction: f64,
    pub servfail: bool,
    pub returned: Vec<usize>,
}

impl OutcomeView {
    fn from_outcome(o: &ScenarioOutcome, scenario: &AttackScenario) -> Self {
        let attacker = |label: &str| {
            scenario
                .compromised
                .iter()
                .any(|&i| AttackScenario::label(i) == label)
        };
        OutcomeView {
            entries: o
                .pool
                .entries
                .iter()
                .map(|e| PoolEntryView {
                    address: e.record.address.to_string(),
                    resolver: e.resolver.clone(),
                    attacker: attacker(&e.resolver),
                })
                .collect(),
            k: o.pool.k,
            attacker_entries: o.attacker_entries,
            attacker_fraction: o.attacker_fraction,
            servfail: o.servfail,
            returned: o.notes.iter().map(|n| n.returned).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ScenarioView {
    pub truncated: OutcomeView,
    pub naive: OutcomeView,
}

/// Runs one scenario with truncation and with a naive union.
/// `strategy` is one of overwhelm, starve, duplicate, honest; `size` is the
/// overwhelm list length or the duplicate count.
pub fn scenario(
    n: usize,
    compromised: &str,
    strategy: &str,
    size: usize,
    benign: usize,
    jitter: bool,
    seed: u64,
) -> Result<ScenarioView, String> {
    if n == 0 || n > 32 {
        return Err("n must be between 1 and 32".into());
    }
    if benign == 0 || benign > 64 {
        return Err("benign list length must be between 1 and 64".into());
    }
    if size > 10_000 {
        return Err("attack size is capped at 10000".into());
    }
    let indices = compromised
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad index {s:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    let strategy = match strategy {
        "overwhelm" => Strategy::Overwhelm { list_length: size },
        "starve" => Strategy::Starve,
        "duplicate" => Strategy::Duplicate {
            address: "198.51.100.66".parse().expect("static address"),
            count: size,
        },
        "honest" => Strategy::Honest,
        other => return Err(format!("unknown strategy {other:?}")),
    };
    let mut s = AttackScenario::new(n, indices, strategy);
    s.benign_template = dohpool_core::sim::default_benign_template(benign);
    s.jitter = jitter;
    s.seed = seed;
    let truncated = run_scenario(&s, CombinePolicy::strict(n)).map_err(|e| e.to_string())?;
    let naive = run_naive_baseline(&s).map_err(|e| e.to_string())?;
    Ok(ScenarioView {
        truncated: OutcomeView::from_outcome(&truncated, &s),
        naive: OutcomeView::from_outcome(&naive, &s),
    })
}

#[derive(Debug, Serialize)]
pub struct CombineView {
    pub mode: &'static str,
    pub k: Option<usize>,
    pub entries: Vec<PoolEntryView>,
}

/// Combines hand-written answer lists, one resolver per line:
/// `label: 192.0.2.1 192.0.2.2`. `mode` is `pool` or `majority`.
pub fn combine(lists: &str, mode: &str) -> Result<CombineView, String> {
    let name: Name = "example.test".parse().expect("static name");
    let mut responses = Vec::new();
    for (i, line) in lists.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (label, rest) = line
            .split_once(':')
            .map(|(l, r)| (l.trim().to_string(), r))
            .unwrap_or_else(|| (format!("resolver-{i}"), line));
        let records = rest
            .split([' ', ','])
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<IpAddr>()
                    .map(|a| AddressRecord::new(name.clone(), 60, a))
                    .map_err(|_| format!("line {}: bad address {s:?}", i + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        responses.push(ResolverResponse::answers(label, records));
    }
    if responses.is_empty() {
        return Err("enter at least one resolver line".into());
    }
    let n = responses.len();
    let input = CombineInput::new(responses, CombinePolicy::strict(n)).map_err(|e| e.to_string())?;
    match mode {
        "pool" => {
            let pool = combine_pool_allow_empty(&input).map_err(|e| e.to_string())?;
            Ok(CombineView {
                mode: "pool",
                k: Some(pool.k),
                entries: pool
                    .entries
                    .iter()
                    .map(|e| PoolEntryView {
                        address: e.record.address.to_string(),
                        resolver: e.resolver.clone(),
                        attacker: false,
                    })
                    .collect(),
            })
        }
        "majority" => {
            let winners = majority_vote(&input).map_err(|e| e.to_string())?;
            Ok(CombineView {
                mode: "majority",
                k: None,
                entries: winners
                    .iter()
                    .map(|r| PoolEntryView {
                        address: r.address.to_string(),
                        resolver: String::new(),
                        attacker: false,
                    })
                    .collect(),
            })
        }
        other => Err(format!("unknown mode {other:?}")),
    }
}

fn to_json<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).unwrap_or_else(|e| error_json(&e.to_string())),
        Err(e) => error_json(&e),
    }
}

fn error_json(message: &str) -> String {
    serde_json::json!({ "error": message }).to_string()
}

#[wasm_bindgen(js_name = securityCurve)]
pub fn security_curve_json(n_min: usize, n_max: usize, x: f64, ps: &str, trials: u32) -> String {
    to_json(curve(n_min, n_max, x, ps, trials))
}

#[wasm_bindgen(js_name = runScenario)]
pub fn run_scenario_json(
    n: usize,
    compromised: &str,
    strategy: &str,
    size: usize,
    benign: usize,
    jitter: bool,
    seed: u64,
) -> String {
    to_json(scenario(n, compromised, strategy, size, benign, jitter, seed))
}

#[wasm_bindgen(js_name = combineLists)]
pub fn combine_lists_json(lists: &str, mode: &str) -> String {
    to_json(combine(lists, mode))
}
