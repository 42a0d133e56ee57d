//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{addresses, distinct, query_wire, run_service, udp_exchange, Fleet};
use dohpool::mock::MockBehavior;
use dohpool_core::codec::{
    decode_message, encode_message, AddressRecord, DnsHeader, DnsMessage, Name, Question, Rcode,
    RawRecord, RecordType, Section, MAX_MESSAGE_LEN, MAX_TTL,
};
use dohpool_core::model::{
    attack_probability_closed_form, attack_probability_exact, attack_probability_montecarlo,
    fraction_threshold, security_curve, ThreatParams,
};
use dohpool_core::sim::{run_naive_baseline, run_scenario, AttackScenario, Strategy};
use dohpool_core::CombinePolicy;
use hickory_resolver::config::{NameServerConfig, ResolverConfig, ResolverOpts};
use hickory_resolver::name_server::TokioConnectionProvider;
use hickory_resolver::proto::op::ResponseCode;
use hickory_resolver::proto::xfer::Protocol;
use hickory_resolver::proto::ProtoErrorKind;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("overwhelm defence", c1_overwhelm),
        ("analytic bound", c2_analytic),
        ("oracle agreement", c3_oracle),
        ("core defence property", c4_defence),
        ("exponential decay", c5_decay),
        ("codec soundness", c6_codec),
        ("end-to-end compatibility", c7_end_to_end),
        ("deadline discipline", c8_deadline),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let ms = started.elapsed().as_millis();
        match result {
            Ok(detail) => println!("criterion {} PASS  {title}: {detail} [{ms} ms]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {title}: {detail} [{ms} ms]", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "unknown panic".into())
}

fn c1_overwhelm() -> Outcome {
    let started = Instant::now();
    let scenario = AttackScenario::new(3, [0], Strategy::Overwhelm { list_length: 100 });
    let truncated = run_scenario(&scenario, CombinePolicy::strict(3)).map_err(|e| e.to_string())?;
    let naive = run_naive_baseline(&scenario).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(
        truncated.pool.len() == 12 && truncated.attacker_entries * 3 == truncated.pool.len(),
        format!("truncated pool {}/{}", truncated.attacker_entries, truncated.pool.len()),
    )?;
    ensure(
        naive.pool.len() == 108 && naive.attacker_entries == 100,
        format!("naive pool {}/{}", naive.attacker_entries, naive.pool.len()),
    )?;
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "truncated {}/{} = 1/3, naive union {}/{}",
        truncated.attacker_entries,
        truncated.pool.len(),
        naive.attacker_entries,
        naive.pool.len()
    ))
}

/// Sums the probability of every compromise pattern with at least `m`
/// compromised resolvers.
fn enumerate_tail(n: usize, m: usize, p: f64) -> f64 {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize >= m)
        .map(|mask| {
            let c = mask.count_ones() as i32;
            p.powi(c) * (1.0 - p).powi(n as i32 - c)
        })
        .sum()
}

fn c2_analytic() -> Outcome {
    let x = 2.0 / 3.0;
    for p in [0.0, 0.1, 0.5, 1.0] {
        let got = attack_probability_closed_form(&ThreatParams::new(3, x, p)).map_err(|e| e.to_string())?;
        ensure(got == p * p, format!("closed form at p={p}: {got} != {}", p * p))?;
    }
    let exact = attack_probability_exact(&ThreatParams::new(3, x, 0.1)).map_err(|e| e.to_string())?;
    let oracle = enumerate_tail(3, 2, 0.1);
    ensure((oracle - 0.028).abs() <= 1e-12, format!("oracle {oracle}"))?;
    ensure((exact - 0.028).abs() <= 1e-12, format!("exact {exact}"))?;
    ensure((exact - oracle).abs() <= 1e-12, format!("exact {exact} vs oracle {oracle}"))?;
    Ok(format!("p^2 exact at 4 points; tail {exact:.15} vs enumeration {oracle:.15}"))
}

fn c3_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let n = rng.random_range(1..=10);
        let x = rng.random_range(0.05..=1.0);
        let p = rng.random_range(0.02..0.98);
        let params = ThreatParams::new(n, x, p);
        let exact = attack_probability_exact(&params).map_err(|e| e.to_string())?;
        let oracle = enumerate_tail(n, params.threshold(), p);
        ensure(
            (exact - oracle).abs() <= 1e-12,
            format!("draw {draw}: exact {exact} vs enumeration {oracle}"),
        )?;
        let mc = attack_probability_montecarlo(&params, 1_000_000, 1000 + draw)
            .map_err(|e| e.to_string())?;
        ensure(
            mc.agrees_with(exact, 4.0),
            format!(
                "draw {draw} (n={n}, x={x:.3}, p={p:.3}): mc {} +/- {} vs exact {exact}",
                mc.estimate, mc.stderr
            ),
        )?;
        if mc.stderr > 0.0 {
            worst = worst.max((mc.estimate - exact).abs() / mc.stderr);
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("20 draws x 10^6 trials, largest deviation {worst:.2} sigma"))
}

fn random_address(rng: &mut ChaCha8Rng, v6: bool) -> IpAddr {
    if v6 {
        IpAddr::V6(Ipv6Addr::from(rng.random::<[u8; 16]>()))
    } else {
        IpAddr::V4(Ipv4Addr::from(rng.random::<[u8; 4]>()))
    }
}

fn random_strategy(rng: &mut ChaCha8Rng, v6: bool) -> Strategy {
    match rng.random_range(0..5) {
        0 => Strategy::Overwhelm {
            list_length: rng.random_range(0..200),
        },
        1 => Strategy::Starve,
        2 => Strategy::Substitute {
            addresses: (0..rng.random_range(0..12))
                .map(|_| random_address(rng, v6))
                .collect(),
        },
        3 => Strategy::Duplicate {
            address: random_address(rng, v6),
            count: rng.random_range(0..60),
        },
        _ => Strategy::Honest,
    }
}

fn c4_defence() -> Outcome {
    const CASES: usize = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut nonempty = 0;
    for case in 0..CASES {
        let n = rng.random_range(1..=12);
        let den = rng.random_range(1..=12usize);
        let num = rng.random_range(1..=den);
        // ceil(y * n) computed exactly on integers.
        let needed = (num * n).div_ceil(den);
        let c = rng.random_range(0..needed.min(n + 1));
        let v6 = rng.random_bool(0.3);
        let mut scenario = AttackScenario::new(
            n,
            sample(&mut rng, n, c),
            random_strategy(&mut rng, v6),
        );
        for &i in &scenario.compromised.clone() {
            if rng.random_bool(0.5) {
                let s = random_strategy(&mut rng, v6);
                scenario.overrides.insert(i, s);
            }
        }
        scenario.benign_template = (0..rng.random_range(1..=8))
            .map(|_| random_address(&mut rng, v6))
            .collect();
        scenario.jitter = rng.random_bool(0.5);
        scenario.seed = rng.random();
        let policy = if rng.random_bool(0.5) {
            CombinePolicy::strict(n)
        } else {
            CombinePolicy {
                min_responders: 1,
                empty_is_failure: true,
            }
        };
        let outcome = run_scenario(&scenario, policy).map_err(|e| e.to_string())?;
        if outcome.pool.is_empty() {
            continue;
        }
        nonempty += 1;
        // attacker / pool < num / den, without floating point.
        ensure(
            outcome.attacker_entries * den < num * outcome.pool.len(),
            format!(
                "case {case}: n={n}, y={num}/{den}, compromised={:?}, attacker {}/{}",
                scenario.compromised,
                outcome.attacker_entries,
                outcome.pool.len()
            ),
        )?;
    }
    Ok(format!("{CASES} scenarios ({nonempty} with non-empty pools), no counterexample"))
}

fn c5_decay() -> Outcome {
    let ns: Vec<usize> = (2..=12).collect();
    let x = 0.5;
    let rows = security_curve(&ns, x, &[0.1], None).map_err(|e| e.to_string())?;
    let prob = |n: usize| rows.iter().find(|r| r.n == n).map(|r| r.closed_form_prob).unwrap();
    // Ratios of adjacent powers of 0.1 are 0.1 up to rounding of the two powers.
    let slack = 0.1 * 4.0 * f64::EPSILON;
    let mut checked = 0;
    for w in rows.windows(2) {
        ensure(
            w[1].closed_form_prob <= w[0].closed_form_prob,
            format!("increase from n={} to n={}", w[0].n, w[1].n),
        )?;
    }
    for n in 2..=10 {
        if fraction_threshold(x, n + 2) == fraction_threshold(x, n) + 1 {
            let ratio = prob(n + 2) / prob(n);
            ensure(ratio <= 0.1 + slack, format!("ratio at n={n} is {ratio}"))?;
            checked += 1;
        }
    }
    ensure(checked > 0, "no threshold steps checked")?;
    Ok(format!("non-increasing over n=2..12; {checked} steps with ratio <= 0.1"))
}

fn random_name(rng: &mut ChaCha8Rng) -> Name {
    loop {
        let labels: Vec<Vec<u8>> = (0..rng.random_range(0..5))
            .map(|_| {
                let len = rng.random_range(1..=63);
                (0..len).map(|_| rng.random()).collect()
            })
            .collect();
        if let Ok(name) = Name::from_labels(labels) {
            return name;
        }
    }
}

fn random_raw(rng: &mut ChaCha8Rng, section: Section, position: usize) -> RawRecord {
    let (rtype, rdata) = match rng.random_range(0..3) {
        0 => (RecordType::TXT, (0..rng.random_range(0..40)).map(|_| rng.random()).collect()),
        1 => {
            let mut wire = Vec::new();
            for l in random_name(rng).labels() {
                wire.push(l.len() as u8);
                wire.extend_from_slice(l);
            }
            wire.push(0);
            (RecordType::CNAME, wire)
        }
        _ => (RecordType(65280), (0..rng.random_range(0..8)).map(|_| rng.random()).collect()),
    };
    RawRecord {
        section,
        position,
        name: random_name(rng),
        rtype,
        class: 1,
        ttl: rng.random(),
        rdata,
    }
}

/// A message whose pass-through records sit in the order the decoder
/// produces: answer section by position, then authority, then additional.
fn random_message(rng: &mut ChaCha8Rng) -> DnsMessage {
    let header = DnsHeader {
        id: rng.random(),
        qr: rng.random(),
        opcode: rng.random_range(0..16),
        aa: rng.random(),
        tc: rng.random(),
        rd: rng.random(),
        ra: rng.random(),
        z: rng.random_range(0..8),
        rcode: Rcode::from_bits(rng.random_range(0..16)),
    };
    let question = rng.random_bool(0.9).then(|| Question {
        qname: random_name(rng),
        qtype: RecordType(rng.random()),
        qclass: rng.random(),
    });
    let answers: Vec<AddressRecord> = (0..rng.random_range(0..12))
        .map(|_| {
            let v6 = rng.random();
            AddressRecord::new(random_name(rng), rng.random_range(0..=MAX_TTL), random_address(rng, v6))
        })
        .collect();
    let raw_answers = rng.random_range(0..3);
    let total = answers.len() + raw_answers;
    let mut positions: Vec<usize> = sample(rng, total, raw_answers).into_vec();
    positions.sort_unstable();
    let mut raw_extra: Vec<RawRecord> = positions
        .into_iter()
        .map(|pos| random_raw(rng, Section::Answer, pos))
        .collect();
    for section in [Section::Authority, Section::Additional] {
        for pos in 0..rng.random_range(0..3) {
            raw_extra.push(random_raw(rng, section, pos));
        }
    }
    DnsMessage {
        header,
        question,
        answers,
        raw_extra,
    }
}

fn c6_codec() -> Outcome {
    const CASES: usize = 100_000;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
    let mut samples = Vec::new();
    for case in 0..CASES {
        let msg = random_message(&mut rng);
        let wire = encode_message(&msg, MAX_MESSAGE_LEN).map_err(|e| format!("case {case}: {e}"))?;
        let back = decode_message(&wire).map_err(|e| format!("case {case}: {e}"))?;
        ensure(back == msg, format!("case {case}: decode(encode(m)) != m"))?;
        let again = encode_message(&back, MAX_MESSAGE_LEN).map_err(|e| e.to_string())?;
        ensure(again == wire, format!("case {case}: re-encoding differs"))?;
        if case % 100 == 0 {
            samples.push(wire);
        }
    }
    let mut rejected = 0;
    for case in 0..CASES {
        let input: Vec<u8> = if case % 2 == 0 {
            (0..rng.random_range(0..600)).map(|_| rng.random()).collect()
        } else {
            let mut w = samples[rng.random_range(0..samples.len())].clone();
            for _ in 0..rng.random_range(1..6) {
                let i = rng.random_range(0..w.len());
                w[i] = rng.random();
            }
            w.truncate(rng.random_range(0..=w.len()));
            w
        };
        if decode_message(&input).is_err() {
            rejected += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "{CASES} round-trips exact; {CASES} fuzz inputs without panic ({rejected} rejected)"
    ))
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime")
}

fn stock_client(server: SocketAddr) -> hickory_resolver::TokioResolver {
    let mut config = ResolverConfig::new();
    config.add_name_server(NameServerConfig::new(server, Protocol::Udp));
    let mut opts = ResolverOpts::default();
    opts.attempts = 1;
    opts.cache_size = 0;
    opts.timeout = Duration::from_secs(5);
    hickory_resolver::Resolver::builder_with_config(config, TokioConnectionProvider::default())
        .with_options(opts)
        .build()
}

/// Answer count, or the response code hickory reported.
async fn stock_lookup(server: SocketAddr) -> Result<usize, String> {
    match stock_client(server).ipv4_lookup("pool.ntp.org.").await {
        Ok(lookup) => Ok(lookup.iter().count()),
        Err(err) => match err.proto().map(|p| p.kind()) {
            Some(ProtoErrorKind::NoRecordsFound { response_code, .. }) => {
                Err(response_code.to_string())
            }
            _ => Err(format!("lookup error: {err}")),
        },
    }
}

fn c7_end_to_end() -> Outcome {
    let started = Instant::now();
    let result = runtime().block_on(async {
        let mut fleet = Fleet::healthy(3, 3).await;
        let strict = run_service(fleet.config()).await;
        let all_up = stock_lookup(strict.addr).await;
        ensure(all_up == Ok(9), format!("all up: {all_up:?}"))?;

        drop(fleet.mocks.remove(1));
        let mut config = fleet.config();
        // Same three resolvers as before, one of them now unreachable.
        config.resolvers = strict.resolver.config().resolvers.clone();
        let one_down = stock_lookup(strict.addr).await;
        ensure(
            one_down == Err(ResponseCode::ServFail.to_string()),
            format!("one down, min_responders=3: {one_down:?}"),
        )?;

        config.min_responders = 2;
        let lenient = run_service(config).await;
        let partial = stock_lookup(lenient.addr).await;
        ensure(partial == Ok(6), format!("one down, min_responders=2: {partial:?}"))?;
        Ok::<_, String>(())
    });
    result?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), format!("took {elapsed:?}"))?;
    Ok("stock client: 9 answers; one down gives SERVFAIL at quorum 3 and 6 answers at quorum 2".into())
}

fn c8_deadline() -> Outcome {
    runtime().block_on(async {
        let fleet = Fleet::start(vec![distinct(0, 3), distinct(1, 3), MockBehavior::Hang]).await;
        let mut config = fleet.config();
        let deadline = Duration::from_millis(500);
        config.per_query_deadline = deadline;
        config.min_responders = 2;
        let svc = run_service(config).await;
        let mut worst = Duration::ZERO;
        for id in 0..3 {
            let started = Instant::now();
            let reply = udp_exchange(svc.addr, &query_wire(id, "pool.ntp.org", RecordType::A)).await;
            let elapsed = started.elapsed();
            worst = worst.max(elapsed);
            ensure(
                reply.header.rcode == Rcode::NoError && addresses(&reply).len() == 6,
                format!("query {id}: {:?} with {} answers", reply.header.rcode, reply.answers.len()),
            )?;
            ensure(
                elapsed <= deadline + Duration::from_millis(100),
                format!("query {id} took {elapsed:?}"),
            )?;
        }
        Ok(format!("slowest of 3 queries {worst:?} with a {deadline:?} deadline"))
    })
}
