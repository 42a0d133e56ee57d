//! Combining per-resolver answer lists into one address pool.
//!
//! [`combine_pool`] truncates every usable list to the length of the shortest
//! one and interleaves the prefixes, so each contributing resolver holds the
//! same share of the pool no matter how many records it returned. An attacker
//! who controls `c` of `s` contributing resolvers therefore controls exactly
//! `c / s` of the pool.
//!
//! [`majority_vote`] is the stricter alternative: an address survives only if
//! more than half of the contributing resolvers returned it.

use std::collections::{HashMap, HashSet};
use std::net::IpAddr;

use thiserror::Error;

use crate::codec::{AddressRecord, Question};
use crate::response::{Outcome, ResolverResponse};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CombineError {
    #[error("{got} usable responses, policy requires {required}")]
    InsufficientResponders { got: usize, required: usize },
    /// The shortest usable list was empty. The pool is valid but holds nothing.
    #[error("shortest response list is empty; pool of {n_used} resolvers is empty")]
    EmptyPool { n_used: usize },
    #[error("resolver label {0:?} appears more than once")]
    DuplicateResolver(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CombinePolicy {
    /// Minimum number of usable responses.
    pub min_responders: usize,
    /// Treat an empty answer list like a failed resolver instead of letting
    /// it drive the truncation length to zero.
    pub empty_is_failure: bool,
}

impl CombinePolicy {
    /// Every configured resolver must answer; empty lists count.
    pub fn strict(n_resolvers: usize) -> Self {
        CombinePolicy {
            min_responders: n_resolvers,
            empty_is_failure: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombineInput {
    responses: Vec<ResolverResponse>,
    pub policy: CombinePolicy,
}

impl CombineInput {
    /// `responses` must be in configuration order with distinct labels.
    pub fn new(
        responses: Vec<ResolverResponse>,
        policy: CombinePolicy,
    ) -> Result<Self, CombineError> {
        let mut seen = HashSet::new();
        for r in &responses {
            if !seen.insert(r.resolver.as_str()) {
                return Err(CombineError::DuplicateResolver(r.resolver.clone()));
            }
        }
        Ok(CombineInput { responses, policy })
    }

    pub fn responses(&self) -> &[ResolverResponse] {
        &self.responses
    }

    /// The responses that take part in combination, in configuration order.
    pub fn usable(&self) -> Vec<(&str, &[AddressRecord])> {
        self.responses
            .iter()
            .filter_map(|r| match &r.outcome {
                Outcome::Answers(list) if list.is_empty() && self.policy.empty_is_failure => None,
                Outcome::Answers(list) => Some((r.resolver.as_str(), list.as_slice())),
                Outcome::Failure(_) => None,
            })
            .collect()
    }

    fn checked_usable(&self) -> Result<Vec<(&str, &[AddressRecord])>, CombineError> {
        let usable = self.usable();
        if usable.len() < self.policy.min_responders {
            return Err(CombineError::InsufficientResponders {
                got: usable.len(),
                required: self.policy.min_responders,
            });
        }
        Ok(usable)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEntry {
    pub record: AddressRecord,
    /// Label of the resolver that supplied the record.
    pub resolver: String,
}

/// Ordered multiset of address records. Equal addresses from different (or
/// the same) resolvers stay separate entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AddressPool {
    pub entries: Vec<PoolEntry>,
    /// Truncation length applied to every contributing list.
    pub k: usize,
    /// Contributing resolver labels, in configuration order.
    pub contributors: Vec<String>,
}

impl AddressPool {
    pub fn n_used(&self) -> usize {
        self.contributors.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries_from<'a>(&'a self, resolver: &'a str) -> impl Iterator<Item = &'a PoolEntry> {
        self.entries.iter().filter(move |e| e.resolver == resolver)
    }

    pub fn min_ttl(&self) -> Option<u32> {
        self.entries.iter().map(|e| e.record.ttl).min()
    }
}

/// Truncates every usable list to the shortest usable length and interleaves
/// the prefixes round-robin: entry `i * s + j` is record `i` of the `j`-th
/// usable resolver.
pub fn combine_pool(input: &CombineInput) -> Result<AddressPool, CombineError> {
    let usable = input.checked_usable()?;
    let k = usable.iter().map(|(_, list)| list.len()).min().unwrap_or(0);
    if k == 0 {
        return Err(CombineError::EmptyPool {
            n_used: usable.len(),
        });
    }
    let mut entries = Vec::with_capacity(k * usable.len());
    for i in 0..k {
        for (label, list) in &usable {
            entries.push(PoolEntry {
                record: list[i].clone(),
                resolver: (*label).to_string(),
            });
        }
    }
    Ok(AddressPool {
        entries,
        k,
        contributors: usable.iter().map(|(l, _)| (*l).to_string()).collect(),
    })
}

/// Like [`combine_pool`] but maps [`CombineError::EmptyPool`] to an empty
/// pool with `k = 0`.
pub fn combine_pool_allow_empty(input: &CombineInput) -> Result<AddressPool, CombineError> {
    match combine_pool(input) {
        Err(CombineError::EmptyPool { .. }) => Ok(AddressPool {
            entries: Vec::new(),
            k: 0,
            contributors: input
                .usable()
                .iter()
                .map(|(l, _)| (*l).to_string())
                .collect(),
        }),
        other => other,
    }
}

/// Keeps the addresses returned by a strict majority of usable resolvers.
///
/// Each resolver counts once per address. Output is sorted by descending
/// support, then by address bytes; each address carries the smallest TTL any
/// supporting record had.
pub fn majority_vote(input: &CombineInput) -> Result<Vec<AddressRecord>, CombineError> {
    let usable = input.checked_usable()?;
    let responders = usable.len();

    struct Tally {
        support: usize,
        ttl: u32,
        first: AddressRecord,
    }
    let mut tallies: HashMap<IpAddr, Tally> = HashMap::new();
    for (_, list) in &usable {
        let mut seen_here: HashMap<IpAddr, u32> = HashMap::new();
        for rec in *list {
            seen_here
                .entry(rec.address)
                .and_modify(|t| *t = (*t).min(rec.ttl))
                .or_insert(rec.ttl);
        }
        for (addr, ttl) in seen_here {
            let first = list.iter().find(|r| r.address == addr).cloned();
            tallies
                .entry(addr)
                .and_modify(|t| {
                    t.support += 1;
                    t.ttl = t.ttl.min(ttl);
                })
                .or_insert_with(|| Tally {
                    support: 1,
                    ttl,
                    first: first.expect("address came from this list"),
                });
        }
    }

    let mut winners: Vec<(usize, Vec<u8>, AddressRecord)> = tallies
        .into_values()
        .filter(|t| 2 * t.support > responders)
        .map(|t| {
            let mut rec = t.first;
            rec.ttl = t.ttl;
            (t.support, address_bytes(&rec.address), rec)
        })
        .collect();
    winners.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(winners.into_iter().map(|(_, _, rec)| rec).collect())
}

fn address_bytes(addr: &IpAddr) -> Vec<u8> {
    match addr {
        IpAddr::V4(v4) => v4.octets().to_vec(),
        IpAddr::V6(v6) => v6.octets().to_vec(),
    }
}

/// Rewrites a pool as answer records for `question`: owner name becomes the
/// query name and every TTL becomes the pool minimum. Order is kept.
pub fn pool_to_answers(pool: &AddressPool, question: &Question) -> Vec<AddressRecord> {
    let ttl = pool.min_ttl().unwrap_or(0);
    pool.entries
        .iter()
        .map(|e| AddressRecord {
            name: question.qname.clone(),
            ttl,
            address: e.record.address,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Name, RecordType};
    use crate::response::FailureKind;
    use std::net::Ipv4Addr;

    fn rec(last: u8, ttl: u32) -> AddressRecord {
        AddressRecord::new(
            "pool.ntp.org".parse().unwrap(),
            ttl,
            IpAddr::V4(Ipv4Addr::new(192, 0, 2, last)),
        )
    }

    fn list(range: std::ops::Range<u8>) -> Vec<AddressRecord> {
        range.map(|i| rec(i, 60)).collect()
    }

    fn input(lists: Vec<Vec<AddressRecord>>, policy: CombinePolicy) -> CombineInput {
        let responses = lists
            .into_iter()
            .enumerate()
            .map(|(i, l)| ResolverResponse::answers(format!("r{i}"), l))
            .collect();
        CombineInput::new(responses, policy).unwrap()
    }

    #[test]
    fn truncates_to_shortest() {
        let inp = input(vec![list(0..4), list(10..15), list(20..23)], CombinePolicy::strict(3));
        let pool = combine_pool(&inp).unwrap();
        assert_eq!(pool.k, 3);
        assert_eq!(pool.len(), 9);
        assert_eq!(pool.n_used(), 3);
        for label in ["r0", "r1", "r2"] {
            assert_eq!(pool.entries_from(label).count(), 3);
        }
        // round-robin order, prefix of each list
        let lasts: Vec<u8> = pool
            .entries
            .iter()
            .map(|e| match e.record.address {
                IpAddr::V4(v4) => v4.octets()[3],
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(lasts, vec![0, 10, 20, 1, 11, 21, 2, 12, 22]);
    }

    #[test]
    fn single_resolver_identity() {
        let inp = input(vec![list(0..7)], CombinePolicy::strict(1));
        let pool = combine_pool(&inp).unwrap();
        assert_eq!(pool.k, 7);
        let records: Vec<_> = pool.entries.iter().map(|e| e.record.clone()).collect();
        assert_eq!(records, list(0..7));
    }

    #[test]
    fn overwhelm_is_truncated() {
        let attacker: Vec<_> = (0..100).map(|i| rec(i, 60)).collect();
        let inp = input(vec![attacker, list(200..204), list(210..214)], CombinePolicy::strict(3));
        let pool = combine_pool(&inp).unwrap();
        assert_eq!(pool.k, 4);
        assert_eq!(pool.len(), 12);
        assert_eq!(pool.entries_from("r0").count(), 4);
    }

    #[test]
    fn empty_list_starves_pool() {
        let inp = input(vec![Vec::new(), list(0..4), list(4..8)], CombinePolicy::strict(3));
        assert_eq!(combine_pool(&inp), Err(CombineError::EmptyPool { n_used: 3 }));
        let pool = combine_pool_allow_empty(&inp).unwrap();
        assert!(pool.is_empty());
        assert_eq!(pool.k, 0);
    }

    #[test]
    fn empty_is_failure_excludes_empty_lists() {
        let policy = CombinePolicy {
            min_responders: 2,
            empty_is_failure: true,
        };
        let inp = input(vec![Vec::new(), list(0..4), list(4..8)], policy);
        let pool = combine_pool(&inp).unwrap();
        assert_eq!((pool.k, pool.n_used(), pool.len()), (4, 2, 8));

        let policy = CombinePolicy {
            min_responders: 3,
            empty_is_failure: true,
        };
        let inp = input(vec![Vec::new(), list(0..4), list(4..8)], policy);
        assert_eq!(
            combine_pool(&inp),
            Err(CombineError::InsufficientResponders {
                got: 2,
                required: 3
            })
        );
    }

    #[test]
    fn failures_are_excluded() {
        let responses = vec![
            ResolverResponse::answers("a", list(0..3)),
            ResolverResponse::failure("b", FailureKind::Timeout),
            ResolverResponse::answers("c", list(3..6)),
        ];
        let strict = CombineInput::new(responses.clone(), CombinePolicy::strict(3)).unwrap();
        assert_eq!(
            combine_pool(&strict),
            Err(CombineError::InsufficientResponders {
                got: 2,
                required: 3
            })
        );
        let lenient = CombineInput::new(
            responses,
            CombinePolicy {
                min_responders: 2,
                empty_is_failure: false,
            },
        )
        .unwrap();
        let pool = combine_pool(&lenient).unwrap();
        assert_eq!(pool.contributors, vec!["a", "c"]);
        assert_eq!(pool.len(), 6);
    }

    #[test]
    fn duplicate_labels_rejected() {
        let responses = vec![
            ResolverResponse::answers("a", list(0..3)),
            ResolverResponse::answers("a", list(3..6)),
        ];
        assert_eq!(
            CombineInput::new(responses, CombinePolicy::strict(2)),
            Err(CombineError::DuplicateResolver("a".into()))
        );
    }

    #[test]
    fn duplicates_are_individual_entries() {
        let dup = vec![rec(1, 60); 5];
        let inp = input(vec![dup, list(1..6)], CombinePolicy::strict(2));
        let pool = combine_pool(&inp).unwrap();
        let ones = pool
            .entries
            .iter()
            .filter(|e| e.record.address == rec(1, 0).address)
            .count();
        assert_eq!(ones, 6);
    }

    #[test]
    fn majority_strictness() {
        // addr 1 in 2/3, addr 2 in 1/3
        let inp = input(
            vec![vec![rec(1, 60), rec(2, 60)], vec![rec(1, 30)], vec![rec(3, 60)]],
            CombinePolicy::strict(3),
        );
        let out = majority_vote(&inp).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].address, rec(1, 0).address);
        assert_eq!(out[0].ttl, 30);

        // N=4, exactly 2 supporters: 2 > 2 is false
        let inp = input(
            vec![vec![rec(1, 60)], vec![rec(1, 60)], vec![rec(2, 60)], vec![rec(3, 60)]],
            CombinePolicy::strict(4),
        );
        assert!(majority_vote(&inp).unwrap().is_empty());
    }

    #[test]
    fn majority_counts_each_resolver_once() {
        let inp = input(
            vec![vec![rec(9, 60); 10], vec![rec(1, 60)], vec![rec(2, 60)]],
            CombinePolicy::strict(3),
        );
        assert!(majority_vote(&inp).unwrap().is_empty());
    }

    #[test]
    fn majority_ordering() {
        let inp = input(
            vec![
                vec![rec(5, 60), rec(4, 60), rec(7, 60)],
                vec![rec(4, 60), rec(5, 60), rec(7, 60)],
                vec![rec(7, 60), rec(5, 60)],
            ],
            CombinePolicy::strict(3),
        );
        let out: Vec<_> = majority_vote(&inp).unwrap().into_iter().map(|r| r.address).collect();
        assert_eq!(out, vec![rec(5, 0).address, rec(7, 0).address, rec(4, 0).address]);
    }

    #[test]
    fn answers_use_query_name_and_min_ttl() {
        let lists = vec![vec![rec(1, 30)], vec![rec(2, 300)], vec![rec(3, 3600)]];
        let pool = combine_pool(&input(lists, CombinePolicy::strict(3))).unwrap();
        let q = Question::new("POOL.ntp.org".parse::<Name>().unwrap(), RecordType::A);
        let answers = pool_to_answers(&pool, &q);
        assert_eq!(answers.len(), 3);
        assert!(answers.iter().all(|a| a.ttl == 30));
        assert!(answers.iter().all(|a| a.name.labels()[0] == b"POOL"));
        assert!(pool_to_answers(&AddressPool::default(), &q).is_empty());
    }
}
