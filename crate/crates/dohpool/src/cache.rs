//! Cache of combined answers, keyed by lowercased name and query type.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use dohpool_core::{AddressRecord, Name, Question, RecordType};
use tokio::time::Instant;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    name: Name,
    qtype: RecordType,
}

impl Key {
    fn of(q: &Question) -> Self {
        Key {
            name: q.qname.to_lowercase(),
            qtype: q.qtype,
        }
    }
}

struct Entry {
    answers: Vec<AddressRecord>,
    stored: Instant,
    expires: Instant,
}

/// Thread-safe answer cache. Entries live for the smallest TTL among their
/// records, capped at `max_ttl`.
pub struct AnswerCache {
    max_ttl: Duration,
    entries: Mutex<HashMap<Key, Entry>>,
}

impl AnswerCache {
    pub fn new(max_ttl: Duration) -> Self {
        AnswerCache {
            max_ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    /// Returns the cached answers with TTLs reduced by the time they have
    /// been held.
    pub fn lookup(&self, q: &Question) -> Option<Vec<AddressRecord>> {
        let now = Instant::now();
        let mut entries = self.entries.lock().expect("cache lock");
        let key = Key::of(q);
        let entry = entries.get(&key)?;
        if now >= entry.expires {
            entries.remove(&key);
            return None;
        }
        let held = now.duration_since(entry.stored).as_secs() as u32;
        Some(
            entry
                .answers
                .iter()
                .map(|r| AddressRecord {
                    name: q.qname.clone(),
                    ttl: r.ttl.saturating_sub(held),
                    address: r.address,
                })
                .collect(),
        )
    }

    /// Stores `answers`. Empty sets and zero lifetimes are not stored.
    pub fn store(&self, q: &Question, answers: &[AddressRecord]) {
        let Some(min_ttl) = answers.iter().map(|r| r.ttl).min() else {
            return;
        };
        let life = Duration::from_secs(min_ttl.into()).min(self.max_ttl);
        if life.is_zero() {
            return;
        }
        let now = Instant::now();
        let mut entries = self.entries.lock().expect("cache lock");
        entries.retain(|_, e| e.expires > now);
        entries.insert(
            Key::of(q),
            Entry {
                answers: answers.to_vec(),
                stored: now,
                expires: now + life,
            },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::{IpAddr, Ipv4Addr};

    fn q(name: &str) -> Question {
        Question::new(name.parse().unwrap(), RecordType::A)
    }

    fn rec(ttl: u32) -> AddressRecord {
        AddressRecord::new("x.test".parse().unwrap(), ttl, IpAddr::V4(Ipv4Addr::LOCALHOST))
    }

    #[tokio::test(start_paused = true)]
    async fn expires_at_min_ttl() {
        let cache = AnswerCache::new(Duration::from_secs(300));
        cache.store(&q("x.test"), &[rec(30), rec(10)]);
        let hit = cache.lookup(&q("X.TEST")).unwrap();
        assert_eq!(hit.len(), 2);
        assert_eq!(hit[0].name.to_string(), "X.TEST");
        tokio::time::advance(Duration::from_secs(4)).await;
        assert_eq!(cache.lookup(&q("x.test")).unwrap()[1].ttl, 6);
        tokio::time::advance(Duration::from_secs(6)).await;
        assert!(cache.lookup(&q("x.test")).is_none());
        assert!(cache.is_empty());
    }

    #[tokio::test(start_paused = true)]
    async fn clamps_to_max_ttl() {
        let cache = AnswerCache::new(Duration::from_secs(5));
        cache.store(&q("x.test"), &[rec(3600)]);
        tokio::time::advance(Duration::from_secs(5)).await;
        assert!(cache.lookup(&q("x.test")).is_none());
    }

    #[tokio::test]
    async fn skips_empty_and_separates_types() {
        let cache = AnswerCache::new(Duration::from_secs(5));
        cache.store(&q("x.test"), &[]);
        cache.store(&q("y.test"), &[rec(0)]);
        assert!(cache.is_empty());
        cache.store(&q("x.test"), &[rec(60)]);
        let aaaa = Question::new("x.test".parse().unwrap(), RecordType::AAAA);
        assert!(cache.lookup(&aaaa).is_none());
    }
}
