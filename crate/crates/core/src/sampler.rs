//! Contextual node sampling: a fixed-shape tree of temporal neighbours
//! expanded level by level from a root `(node, t_pred)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_store::{EventStore, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingStrategy {
    /// Uniform draws with replacement from all earlier interactions.
    #[default]
    Uniform,
    /// The most recent earlier interactions, newest first.
    Recent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextualToken {
    pub node: NodeId,
    /// Time of the interaction through which the token was reached; `t_pred` for the root.
    pub ts: f64,
    pub hop: u32,
    /// Index of the sampling parent; the root is its own parent.
    pub parent: usize,
    /// Event that connects this token to its parent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_idx: Option<u32>,
    pub is_pad: bool,
}

impl ContextualToken {
    /// Feature vector of the connecting interaction, or `None` for the root
    /// and padding (which carry zeros).
    pub fn edge_feat<'a>(&self, store: &'a EventStore) -> Option<&'a [f64]> {
        self.event_idx.map(|i| store.edge_feat(i as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualSet {
    pub root: NodeId,
    pub t_pred: f64,
    pub fanouts: Vec<usize>,
    pub tokens: Vec<ContextualToken>,
}

impl ContextualSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn non_padding(&self) -> impl Iterator<Item = (usize, &ContextualToken)> {
        self.tokens.iter().enumerate().filter(|(_, t)| !t.is_pad)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("contextual set serialises")
    }
}

/// `1 + n_1 + n_1 n_2 + … + Π n_k`.
pub fn context_size(fanouts: &[usize]) -> usize {
    let mut total = 1;
    let mut level = 1;
    for &n in fanouts {
        level *= n;
        total += level;
    }
    total
}

pub fn sample_contextual(
    store: &EventStore,
    root: NodeId,
    t_pred: f64,
    fanouts: &[usize],
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<ContextualSet> {
    if !(t_pred >= 0.0) {
        return Err(CoreError::InvalidConfig(format!(
            "t_pred must be non-negative, got {t_pred}"
        )));
    }
    if fanouts.iter().any(|&n| n == 0) {
        return Err(CoreError::InvalidConfig(
            "fanouts must all be at least 1".into(),
        ));
    }
    if root as usize >= store.num_nodes() {
        return Err(CoreError::UnknownNode(u64::from(root)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(context_size(fanouts));
    tokens.push(ContextualToken {
        node: root,
        ts: t_pred,
        hop: 0,
        parent: 0,
        event_idx: None,
        is_pad: false,
    });
    let mut level = 0..1;
    for (k, &n) in fanouts.iter().enumerate() {
        let hop = k as u32 + 1;
        let start = tokens.len();
        for p in level.clone() {
            let parent = tokens[p];
            let candidates = if parent.is_pad {
                &[][..]
            } else {
                store.neighbors_before(parent.node, parent.ts)
            };
            for j in 0..n {
                let pick = match strategy {
                    _ if candidates.is_empty() => None,
                    SamplingStrategy::Uniform => {
                        Some(&candidates[rng.gen_range(0..candidates.len())])
                    }
                    SamplingStrategy::Recent => {
                        candidates.len().checked_sub(j + 1).map(|i| &candidates[i])
                    }
                };
                tokens.push(match pick {
                    Some(e) => ContextualToken {
                        node: e.neighbor,
                        ts: e.ts,
                        hop,
                        parent: p,
                        event_idx: Some(e.event_idx),
                        is_pad: false,
                    },
                    None => ContextualToken {
                        node: root,
                        ts: 0.0,
                        hop,
                        parent: p,
                        event_idx: None,
                        is_pad: true,
                    },
                });
            }
        }
        level = start..tokens.len();
    }
    Ok(ContextualSet {
        root,
        t_pred,
        fanouts: fanouts.to_vec(),
        tokens,
    })
}
