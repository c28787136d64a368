// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, VecDeque};

use super::SessionTicket;
use crate::names::{ContextId, HostName};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FopCacheEntry {
    pub hostname: HostName,
    pub context: ContextId,
    pub ticket: SessionTicket,
    /// Age is measured from here: the earlier of the store time and the
    /// ticket's chain origin.
    pub issued_at: SimTime,
}

impl FopCacheEntry {
    pub fn age(&self, now: SimTime) -> u64 {
        now.saturating_sub(self.issued_at)
    }
}

/// Client-side ticket cache keyed by hostname and context. Entries are
/// single use and served oldest first.
#[derive(Clone, Debug, Default)]
pub struct TlsCache {
    entries: BTreeMap<(HostName, ContextId), VecDeque<FopCacheEntry>>,
}

impl TlsCache {
    pub fn store(&mut self, hostname: HostName, context: ContextId, ticket: SessionTicket, now: SimTime) {
        let issued_at = now.min(ticket.origin);
        let entry = FopCacheEntry {
            hostname: hostname.clone(),
            context,
            ticket,
            issued_at,
        };
        self.entries
            .entry((hostname, context))
            .or_default()
            .push_back(entry);
    }

    /// Removes and returns the oldest unexpired entry for exactly
    /// `(hostname, context)`, purging every expired entry on the way.
    pub fn take(
        &mut self,
        hostname: &HostName,
        context: ContextId,
        now: SimTime,
        lifetime_ms: u64,
    ) -> Option<FopCacheEntry> {
        self.purge(now, lifetime_ms);
        let key = (hostname.clone(), context);
        let queue = self.entries.get_mut(&key)?;
        let entry = queue.pop_front();
        if queue.is_empty() {
            self.entries.remove(&key);
        }
        entry
    }

    pub fn purge(&mut self, now: SimTime, lifetime_ms: u64) {
        self.entries.retain(|_, q| {
            q.retain(|e| e.age(now) <= lifetime_ms);
            !q.is_empty()
        });
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ticket(id: u8, origin: u64) -> SessionTicket {
        SessionTicket {
            ticket_id: [id; 16],
            resumption_secret: [0; 16],
            embedded_cookie: None,
            issued_at: SimTime::from_ms(origin),
            origin: SimTime::from_ms(origin),
        }
    }

    fn host() -> HostName {
        HostName::new("example.org").unwrap()
    }

    const FIVE_MIN: u64 = 300_000;

    #[test]
    fn store_then_take() {
        let mut c = TlsCache::default();
        let ctx = ContextId::from_label("a");
        c.store(host(), ctx, ticket(1, 0), SimTime::ZERO);
        let e = c.take(&host(), ctx, SimTime::from_ms(10), FIVE_MIN).unwrap();
        assert_eq!(e.ticket.ticket_id, [1; 16]);
        assert!(c.take(&host(), ctx, SimTime::from_ms(10), FIVE_MIN).is_none());
    }

    #[test]
    fn context_must_match() {
        let mut c = TlsCache::default();
        c.store(host(), ContextId::from_label("c1"), ticket(1, 0), SimTime::ZERO);
        assert!(c
            .take(&host(), ContextId::from_label("c2"), SimTime::ZERO, FIVE_MIN)
            .is_none());
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn lifetime_boundary() {
        let mut c = TlsCache::default();
        let ctx = ContextId::default();
        c.store(host(), ctx, ticket(1, 0), SimTime::ZERO);
        c.store(host(), ctx, ticket(2, 0), SimTime::ZERO);
        assert!(c.take(&host(), ctx, SimTime::from_ms(300_000), FIVE_MIN).is_some());
        assert!(c.take(&host(), ctx, SimTime::from_ms(300_001), FIVE_MIN).is_none());
        assert!(c.is_empty());
    }

    #[test]
    fn fifo_per_key() {
        let mut c = TlsCache::default();
        let ctx = ContextId::default();
        for id in 1..=3 {
            c.store(host(), ctx, ticket(id, 0), SimTime::ZERO);
        }
        let ids: Vec<u8> = std::iter::from_fn(|| c.take(&host(), ctx, SimTime::ZERO, FIVE_MIN))
            .map(|e| e.ticket.ticket_id[0])
            .collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn age_counts_from_chain_origin() {
        let mut c = TlsCache::default();
        let ctx = ContextId::default();
        // ticket issued by a resumption at t=250s from a chain begun at t=0
        let mut t = ticket(1, 0);
        t.issued_at = SimTime::from_ms(250_000);
        c.store(host(), ctx, t, SimTime::from_ms(250_000));
        assert!(c.take(&host(), ctx, SimTime::from_ms(300_001), FIVE_MIN).is_none());
    }

    #[test]
    fn empty_cache() {
        let mut c = TlsCache::default();
        assert!(c.take(&host(), ContextId::default(), SimTime::ZERO, 1).is_none());
    }
}
