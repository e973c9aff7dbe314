use std::collections::HashMap;

use super::{Event, NodeId};
use crate::error::{CoreError, Result};

/// Interaction count and most recent timestamp of an unordered node pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub count: u32,
    pub last_ts: f64,
}

/// Sparse ledger of pair statistics.
///
/// Holds only events from committed batches; the batch currently being
/// scored is never visible until [`InteractionHistory::commit`] is called.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionHistory {
    records: HashMap<u64, PairRecord>,
    watermark: Option<f64>,
}

#[inline]
fn key(u: NodeId, w: NodeId) -> u64 {
    let (a, b) = if u <= w { (u, w) } else { (w, u) };
    (u64::from(a) << 32) | u64::from(b)
}

impl InteractionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, u: NodeId, w: NodeId) -> Option<PairRecord> {
        self.records.get(&key(u, w)).copied()
    }

    /// Applies a batch. The whole batch is rejected, leaving the ledger
    /// untouched, if any timestamp precedes an already committed one.
    pub fn commit(&mut self, batch: &[Event]) -> Result<()> {
        let mut mark = self.watermark;
        for e in batch {
            if let Some(w) = mark {
                if e.ts < w {
                    return Err(CoreError::OutOfOrderCommit {
                        ts: e.ts,
                        watermark: w,
                    });
                }
            }
            mark = Some(e.ts);
        }
        for e in batch {
            self.records
                .entry(key(e.src, e.dst))
                .and_modify(|r| {
                    r.count += 1;
                    r.last_ts = e.ts;
                })
                .or_insert(PairRecord {
                    count: 1,
                    last_ts: e.ts,
                });
        }
        self.watermark = mark;
        Ok(())
    }

    /// Latest committed timestamp.
    pub fn watermark(&self) -> Option<f64> {
        self.watermark
    }

    /// Number of distinct pairs recorded.
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
        self.watermark = None;
    }

    /// All records as `((min, max), record)`, sorted by pair.
    pub fn snapshot(&self) -> Vec<((NodeId, NodeId), PairRecord)> {
        let mut v: Vec<_> = self
            .records
            .iter()
            .map(|(&k, &r)| (((k >> 32) as NodeId, k as NodeId), r))
            .collect();
        v.sort_by_key(|&(p, _)| p);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: NodeId, dst: NodeId, ts: f64) -> Event {
        Event {
            src,
            dst,
            ts,
            idx: 0,
            label: 0.0,
        }
    }

    #[test]
    fn never_interacted_pair_is_absent() {
        assert_eq!(InteractionHistory::new().lookup(3, 4), None);
    }

    #[test]
    fn single_commit() {
        let mut h = InteractionHistory::new();
        h.commit(&[ev(1, 2, 4.0)]).unwrap();
        assert_eq!(
            h.lookup(1, 2),
            Some(PairRecord {
                count: 1,
                last_ts: 4.0
            })
        );
    }

    #[test]
    fn counts_accumulate_and_keep_latest() {
        let mut h = InteractionHistory::new();
        h.commit(&[ev(1, 2, 4.0)]).unwrap();
        h.commit(&[ev(2, 1, 6.0)]).unwrap();
        assert_eq!(
            h.lookup(1, 2),
            Some(PairRecord {
                count: 2,
                last_ts: 6.0
            })
        );
        let mut h = InteractionHistory::new();
        h.commit(&[ev(5, 9, 2.0), ev(9, 5, 9.0)]).unwrap();
        assert_eq!(
            h.lookup(9, 5).unwrap(),
            PairRecord {
                count: 2,
                last_ts: 9.0
            }
        );
    }

    #[test]
    fn lookup_is_order_insensitive() {
        let mut h = InteractionHistory::new();
        h.commit(&[ev(7, 3, 1.0)]).unwrap();
        assert_eq!(h.lookup(7, 3), h.lookup(3, 7));
    }

    #[test]
    fn uncommitted_batch_is_invisible() {
        let mut h = InteractionHistory::new();
        h.commit(&[ev(0, 1, 1.0)]).unwrap();
        let pending = [ev(0, 1, 2.0), ev(0, 2, 2.5)];
        assert_eq!(h.lookup(0, 1).unwrap().count, 1);
        assert_eq!(h.lookup(0, 2), None);
        h.commit(&pending).unwrap();
        assert_eq!(h.lookup(0, 1).unwrap().count, 2);
    }

    #[test]
    fn regressions_are_rejected_atomically() {
        let mut h = InteractionHistory::new();
        h.commit(&[ev(0, 1, 5.0)]).unwrap();
        let before = h.clone();
        assert!(matches!(
            h.commit(&[ev(1, 2, 6.0), ev(0, 1, 4.0)]),
            Err(CoreError::OutOfOrderCommit { .. })
        ));
        assert_eq!(h, before);
    }

    #[test]
    fn snapshot_is_sorted() {
        let mut h = InteractionHistory::new();
        h.commit(&[ev(4, 1, 1.0), ev(0, 2, 2.0)]).unwrap();
        let s: Vec<_> = h.snapshot().into_iter().map(|(p, _)| p).collect();
        assert_eq!(s, vec![(0, 2), (1, 4)]);
    }
}
