use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dohpool::config::ENV_LOG;
use dohpool::{Resolver, Server, ServiceConfig};
use dohpool_core::model::{security_curve, write_curve_csv, McSettings};
use dohpool_core::sim::{
    run_naive_baseline, run_scenario, sweep, write_outcome_csv, write_sweep_csv, ScenarioFile,
};
use dohpool_core::{Name, Question, RecordType};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(version, about = "DNS stub resolver pooling answers from several DoH resolvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the DNS service on UDP and TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Resolve one name and print the pool with the resolver behind each entry.
    Query {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long = "type", value_enum, default_value = "a")]
        qtype: AddressType,
    },
    /// Run an attack scenario file and print CSV.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Serve the scenario from local HTTPS servers instead of in memory.
        #[arg(long)]
        live: bool,
    },
    /// Print attack probabilities as CSV.
    Curve {
        /// Resolver counts: `2..12` (inclusive) or `3,5,7`.
        #[arg(long)]
        n: String,
        /// Per-resolver compromise probabilities: `0.1,0.5` or `0.05..0.5:0.05`.
        #[arg(long)]
        p: String,
        /// Assumed honest fraction, decimal or `a/b`.
        #[arg(long)]
        x: String,
        /// Add a Monte Carlo column with this many trials.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AddressType {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "AAAA", alias = "aaaa")]
    Aaaa,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_env(ENV_LOG).unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    match cli.command {
        Command::Serve { config } => serve(load_config(&config)?),
        Command::Query { config, name, qtype } => query(load_config(&config)?, &name, qtype),
        Command::Simulate { scenario, live } => simulate(&scenario, live),
        Command::Curve {
            n,
            p,
            x,
            trials,
            seed,
        } => curve(&n, &p, &x, trials.map(|trials| McSettings { trials, seed })),
    }
}

fn load_config(path: &std::path::Path) -> Result<ServiceConfig> {
    let mut config = ServiceConfig::load(path)?;
    config.apply_env(|k| std::env::var(k).ok())?;
    Ok(config)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn serve(config: ServiceConfig) -> Result<()> {
    runtime()?.block_on(async {
        let listen = config.listen;
        let resolver = Arc::new(Resolver::new(config)?);
        let server = Server::bind(resolver, listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        Ok(())
    })
}

fn query(config: ServiceConfig, name: &str, qtype: AddressType) -> Result<()> {
    let name: Name = name.parse().with_context(|| format!("invalid name {name:?}"))?;
    let qtype = match qtype {
        AddressType::A => RecordType::A,
        AddressType::Aaaa => RecordType::AAAA,
    };
    let question = Question::new(name, qtype);
    let resolution = runtime()?.block_on(async {
        let resolver = Resolver::new(config)?;
        anyhow::Ok(resolver.resolve(&question).await)
    })?;

    let mut out = std::io::stdout().lock();
    for r in &resolution.responses {
        writeln!(out, "# {:<20} {:>6} ms  {}", r.resolver, r.rtt.as_millis(), r.summary())?;
    }
    writeln!(out, "# rcode {:?}", resolution.rcode)?;
    if let Some(pool) = &resolution.pool {
        writeln!(out, "# k={} n_used={} pool_size={}", pool.k, pool.n_used(), pool.len())?;
        for entry in &pool.entries {
            writeln!(out, "{}\t{}\t{}", entry.record.address, entry.record.ttl, entry.resolver)?;
        }
    } else {
        for rec in &resolution.answers {
            writeln!(out, "{}\t{}", rec.address, rec.ttl)?;
        }
    }
    Ok(())
}

fn simulate(path: &std::path::Path, live: bool) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = ScenarioFile::from_toml(&text)?;
    let stdout = std::io::stdout().lock();

    if let Some(plan) = &file.sweep {
        let report = sweep(plan, file.policy)?;
        write_sweep_csv(&report.rows, stdout)?;
        eprintln!(
            "attack success {:.6} +/- {:.6} ({} of {} runs, y = {})",
            report.success.estimate,
            report.success.stderr,
            report.success.hits,
            report.success.trials,
            plan.y
        );
        return Ok(());
    }

    let truncated = if live {
        runtime()?.block_on(dohpool::live::run_live(&file.scenario, file.policy))?
    } else {
        run_scenario(&file.scenario, file.policy)?
    };
    let naive = run_naive_baseline(&file.scenario)?;
    let mode = if live { "truncated-live" } else { "truncated" };
    write_outcome_csv(&[(mode, &truncated), ("naive-union", &naive)], stdout)?;
    for (label, o) in [(mode, &truncated), ("naive-union", &naive)] {
        eprintln!(
            "{label}: attacker holds {} of {} pool entries ({:.4}); reaches y = {}: {}",
            o.attacker_entries,
            o.pool.len(),
            o.attacker_fraction,
            file.y,
            o.attacker_reaches(file.y)
        );
    }
    Ok(())
}

fn curve(n: &str, p: &str, x: &str, mc: Option<McSettings>) -> Result<()> {
    let ns = parse_counts(n)?;
    let ps = parse_probabilities(p)?;
    let x = parse_fraction(x)?;
    let rows = security_curve(&ns, x, &ps, mc)?;
    write_curve_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

/// `a..b` (inclusive) or a comma list.
fn parse_counts(arg: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = arg.split_once("..") {
        let lo: usize = lo.trim().parse().context("range start")?;
        let hi: usize = hi.trim().parse().context("range end")?;
        if lo > hi {
            bail!("empty range {arg}");
        }
        return Ok((lo..=hi).collect());
    }
    arg.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad count {s:?}")))
        .collect()
}

/// `a..b:step` (inclusive, step defaults to 0.1) or a comma list.
fn parse_probabilities(arg: &str) -> Result<Vec<f64>> {
    if let Some((lo, rest)) = arg.split_once("..") {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "0.1"));
        let lo: f64 = lo.trim().parse().context("range start")?;
        let hi: f64 = hi.trim().parse().context("range end")?;
        let step: f64 = step.trim().parse().context("range step")?;
        if step <= 0.0 || lo > hi {
            bail!("bad range {arg}");
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize;
        return Ok((0..=count).map(|i| lo + step * i as f64).collect());
    }
    arg.split(',')
        .map(|s| parse_fraction(s.trim()))
        .collect()
}

/// Decimal or `a/b`.
fn parse_fraction(arg: &str) -> Result<f64> {
    if let Some((num, den)) = arg.split_once('/') {
        let num: f64 = num.trim().parse().context("numerator")?;
        let den: f64 = den.trim().parse().context("denominator")?;
        if den == 0.0 {
            bail!("zero denominator in {arg}");
        }
        return Ok(num / den);
    }
    arg.trim().parse().with_context(|| format!("bad number {arg:?}"))
}
