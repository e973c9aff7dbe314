//! Chronological train/validation/test splits and the inductive node mask.

use std::collections::HashSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_store::{Event, EventStore, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    #[default]
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub mode: SplitMode,
    pub mask_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            val_frac: 0.15,
            mode: SplitMode::Transductive,
            mask_frac: 0.10,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.train_frac > 0.0
            && self.val_frac > 0.0
            && self.train_frac + self.val_frac <= 1.0
            && (0.0..=1.0).contains(&self.mask_frac);
        if !ok {
            return Err(CoreError::InvalidConfig(format!(
                "split fractions must be positive and sum to at most 1 (train {}, val {}, mask {})",
                self.train_frac, self.val_frac, self.mask_frac
            )));
        }
        Ok(())
    }
}

/// Contiguous event index ranges of the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits sorted timestamps at `train_frac · total` and
/// `(train_frac + val_frac) · total`; a timestamp equal to a boundary
/// belongs to the earlier range.
pub fn split_times(ts: &[f64], total: f64, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let t1 = spec.train_frac * total;
    let t2 = (spec.train_frac + spec.val_frac) * total;
    let a = ts.partition_point(|&t| t <= t1);
    let b = ts.partition_point(|&t| t <= t2);
    let s = Splits {
        train: 0..a,
        val: a..b,
        test: b..ts.len(),
    };
    for (name, r) in [
        ("train", &s.train),
        ("validation", &s.val),
        ("test", &s.test),
    ] {
        if r.is_empty() {
            return Err(CoreError::EmptySplit(name));
        }
    }
    Ok(s)
}

/// Chronological split on the shifted time axis, whose span is the
/// timestamp of the last event.
pub fn chronological_split(store: &EventStore, spec: &SplitSpec) -> Result<Splits> {
    let ts: Vec<f64> = store.events().iter().map(|e| e.ts).collect();
    split_times(&ts, store.duration(), spec)
}

/// A uniform sample of `frac` of the active nodes (at least one).
pub fn choose_masked_nodes(store: &EventStore, frac: f64, seed: u64) -> HashSet<NodeId> {
    let mut active: Vec<NodeId> = (0..store.num_nodes() as NodeId)
        .filter(|&u| !store.adjacency(u).is_empty())
        .collect();
    let k = ((active.len() as f64 * frac).round() as usize).clamp(1, active.len().max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    active.shuffle(&mut rng);
    active.truncate(k);
    active.into_iter().collect()
}

/// Event indices retained by the inductive protocol.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilteredSplits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn touches(e: &Event, masked: &HashSet<NodeId>) -> bool {
    masked.contains(&e.src) || masked.contains(&e.dst)
}

/// Training keeps links that avoid every masked node; validation and test
/// keep only links touching at least one masked node.
pub fn inductive_filter(
    events: &[Event],
    splits: &Splits,
    masked: &HashSet<NodeId>,
) -> FilteredSplits {
    let pick = |r: &Range<usize>, want: bool| -> Vec<usize> {
        r.clone()
            .filter(|&i| touches(&events[i], masked) == want)
            .collect()
    };
    FilteredSplits {
        train: pick(&splits.train, false),
        val: pick(&splits.val, true),
        test: pick(&splits.test, true),
    }
}
