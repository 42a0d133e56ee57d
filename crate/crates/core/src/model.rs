//! Attack-probability model for a fleet of independently attackable resolvers.
//!
//! With `n` resolvers each contributing the same `k` entries to the pool, an
//! attacker needs `ceil(y * n)` compromised resolvers to own a fraction `y` of
//! the pool. Three estimates of the chance that an attacker reaches a
//! threshold of `ceil(x * n)` resolvers are provided:
//!
//! * [`attack_probability_closed_form`]: `p^M`, the chance of compromising one
//!   particular set of `M` resolvers.
//! * [`attack_probability_exact`]: the binomial tail `P[Bin(n, p) >= M]`.
//! * [`attack_probability_montecarlo`]: a seeded simulation of the tail.

use std::io;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

/// Largest fleet for which the exact tail is evaluated.
pub const EXACT_MAX_N: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{name} = {value} is outside {range}")]
    Domain {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("n = {0} exceeds the exact-summation limit of {EXACT_MAX_N}")]
    TooManyResolvers(usize),
    #[error("trials must be at least 1")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThreatParams {
    /// Number of resolvers.
    pub n: usize,
    /// Fraction of the pool the attacker needs.
    pub y: f64,
    /// Fraction of resolvers the attacker must compromise.
    pub x: f64,
    /// Independent per-resolver compromise probability.
    pub p_attack: f64,
    /// Per-resolver truncated list length.
    pub k: usize,
}

impl ThreatParams {
    pub fn new(n: usize, x: f64, p_attack: f64) -> Self {
        // With equal per-resolver weight the pool share the attacker needs
        // equals the resolver share.
        ThreatParams {
            n,
            y: x.max(f64::MIN_POSITIVE),
            x,
            p_attack,
            k: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::Domain {
                name: "n",
                value: 0.0,
                range: "n >= 1",
            });
        }
        check_range("y", self.y, false)?;
        check_range("x", self.x, true)?;
        check_range("p_attack", self.p_attack, true)
    }

    /// `M = ceil(x * n)`.
    pub fn threshold(&self) -> usize {
        fraction_threshold(self.x, self.n)
    }
}

fn check_range(name: &'static str, value: f64, zero_ok: bool) -> Result<(), ModelError> {
    let ok = if zero_ok {
        (0.0..=1.0).contains(&value)
    } else {
        value > 0.0 && value <= 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(ModelError::Domain {
            name,
            value,
            range: if zero_ok { "[0, 1]" } else { "(0, 1]" },
        })
    }
}

/// `ceil(fraction * n)`, ignoring float noise below `1e-9` so that e.g.
/// `2/3 * 3` yields 2 however the product rounds.
pub fn fraction_threshold(fraction: f64, n: usize) -> usize {
    let product = fraction * n as f64;
    let nearest = product.round();
    if (product - nearest).abs() <= 1e-9 * (n as f64).max(1.0) {
        nearest as usize
    } else {
        product.ceil() as usize
    }
}

/// Fewest compromised resolvers that give an attacker a fraction `y` of a pool
/// in which every resolver has equal weight.
pub fn min_compromised_resolvers(n: usize, y: f64) -> Result<usize, ModelError> {
    if n == 0 {
        return Err(ModelError::Domain {
            name: "n",
            value: 0.0,
            range: "n >= 1",
        });
    }
    check_range("y", y, false)?;
    Ok(fraction_threshold(y, n))
}

/// `p^M` with `M = ceil(x * n)`.
pub fn attack_probability_closed_form(params: &ThreatParams) -> Result<f64, ModelError> {
    params.validate()?;
    Ok(params.p_attack.powi(params.threshold() as i32))
}

/// Binomial tail `sum_{m >= M} C(n, m) p^m (1 - p)^(n - m)`, summed in log
/// space with Neumaier compensation.
pub fn attack_probability_exact(params: &ThreatParams) -> Result<f64, ModelError> {
    params.validate()?;
    let n = params.n;
    if n > EXACT_MAX_N {
        return Err(ModelError::TooManyResolvers(n));
    }
    let m_min = params.threshold();
    let p = params.p_attack;
    if m_min == 0 || p == 1.0 {
        return Ok(if m_min > n { 0.0 } else { 1.0 });
    }
    if p == 0.0 || m_min > n {
        return Ok(0.0);
    }
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let mut sum = NeumaierSum::default();
    for m in m_min..=n {
        let ln_term = ln_binomial(n, m) + m as f64 * ln_p + (n - m) as f64 * ln_q;
        sum.add(ln_term.exp());
    }
    Ok(sum.value().clamp(0.0, 1.0))
}

/// `ln C(n, m)` accumulated as a sum of logs.
fn ln_binomial(n: usize, m: usize) -> f64 {
    let m = m.min(n - m);
    let mut sum = NeumaierSum::default();
    for i in 0..m {
        sum.add(((n - i) as f64).ln() - ((i + 1) as f64).ln());
    }
    sum.value()
}

#[derive(Default)]
struct NeumaierSum {
    sum: f64,
    carry: f64,
}

impl NeumaierSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub hits: u64,
    pub trials: u64,
}

impl McEstimate {
    pub fn from_counts(hits: u64, trials: u64) -> Self {
        let t = trials as f64;
        let estimate = hits as f64 / t;
        // The plug-in variance is zero when every trial agrees; use the
        // half-count adjusted proportion there so the error is not zero.
        let spread = if hits == 0 || hits == trials {
            (hits as f64 + 0.5) / (t + 1.0)
        } else {
            estimate
        };
        McEstimate {
            estimate,
            stderr: (spread * (1.0 - spread) / t).sqrt(),
            hits,
            trials,
        }
    }

    /// `|estimate - reference| <= sigmas * stderr`.
    pub fn agrees_with(&self, reference: f64, sigmas: f64) -> bool {
        (self.estimate - reference).abs() <= sigmas * self.stderr
    }
}

/// Simulates `trials` fleets of `n` independent Bernoulli(p) compromises and
/// counts how often at least `ceil(x * n)` fall. Deterministic per seed.
pub fn attack_probability_montecarlo(
    params: &ThreatParams,
    trials: u64,
    seed: u64,
) -> Result<McEstimate, ModelError> {
    params.validate()?;
    if trials == 0 {
        return Err(ModelError::NoTrials);
    }
    let threshold = params.threshold();
    let p = params.p_attack;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..trials {
        let compromised = (0..params.n).filter(|_| rng.random::<f64>() < p).count();
        if compromised >= threshold {
            hits += 1;
        }
    }
    Ok(McEstimate::from_counts(hits, trials))
}

/// Resolvers that must be added for the closed form to at least halve:
/// `ceil(ln(1/2) / (x ln p))`. `None` when the probability never decays.
pub fn halving_step(x: f64, p: f64) -> Option<usize> {
    if x <= 0.0 || p <= 0.0 || p >= 1.0 {
        return None;
    }
    Some(((0.5f64).ln() / (x * p.ln())).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub n: usize,
    pub x: f64,
    pub p: f64,
    #[serde(rename = "paper_prob")]
    pub closed_form_prob: f64,
    pub exact_prob: f64,
    pub mc_estimate: Option<f64>,
    pub mc_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub trials: u64,
    pub seed: u64,
}

/// One row per `(n, p)` pair, `n` varying slowest.
pub fn security_curve(
    ns: &[usize],
    x: f64,
    ps: &[f64],
    mc: Option<McSettings>,
) -> Result<Vec<CurveRow>, ModelError> {
    let mut rows = Vec::with_capacity(ns.len() * ps.len());
    for (i, &n) in ns.iter().enumerate() {
        for (j, &p) in ps.iter().enumerate() {
            let params = ThreatParams::new(n, x, p);
            let mc = match mc {
                Some(s) => Some(attack_probability_montecarlo(
                    &params,
                    s.trials,
                    s.seed
                        .wrapping_add((i as u64) << 32)
                        .wrapping_add(j as u64),
                )?),
                None => None,
            };
            rows.push(CurveRow {
                n,
                x,
                p,
                closed_form_prob: attack_probability_closed_form(&params)?,
                exact_prob: attack_probability_exact(&params)?,
                mc_estimate: mc.map(|m| m.estimate),
                mc_stderr: mc.map(|m| m.stderr),
            });
        }
    }
    Ok(rows)
}

/// Writes the curve as CSV with columns
/// `n,x,p,paper_prob,exact_prob,mc_estimate,mc_stderr`.
pub fn write_curve_csv<W: io::Write>(rows: &[CurveRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
