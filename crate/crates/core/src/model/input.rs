//! Assembly of one encoder sequence: tokens, their distances toward the
//! targets, node and edge features, and the attention mask.

use std::sync::Arc;

use cordgt_numerics::{Pairs, Tensor};

use crate::encoding::{proximity_to, Proximity};
use crate::error::Result;
use crate::event_store::{EventStore, InteractionHistory};
use crate::proximity::{HopIndex, TdParams};
use crate::sampler::{ContextualSet, ContextualToken};

/// Attention support over a token sequence. Row = query, column = key.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    pub size: usize,
    pub allowed: Vec<bool>,
    /// Rows with no admissible key; they attend to themselves only.
    pub fallback_rows: Vec<usize>,
}

impl AttentionMask {
    pub fn get(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.size + k]
    }
}

/// A query may attend a key iff the key is non-padding, strictly earlier,
/// and at the same or a greater hop. With `unmasked` only the padding rule
/// applies. When `sides` is given, tokens of different sides never attend
/// each other. Empty rows (and padding queries) fall back to self-attention.
pub fn build_mask(
    tokens: &[ContextualToken],
    sides: Option<&[u8]>,
    unmasked: bool,
) -> AttentionMask {
    let n = tokens.len();
    let mut allowed = vec![false; n * n];
    let mut fallback_rows = Vec::new();
    for (q, tq) in tokens.iter().enumerate() {
        let row = &mut allowed[q * n..(q + 1) * n];
        let mut any = false;
        if !tq.is_pad {
            for (k, tk) in tokens.iter().enumerate() {
                if tk.is_pad {
                    continue;
                }
                if let Some(s) = sides {
                    if s[q] != s[k] {
                        continue;
                    }
                }
                let ok = unmasked || (tk.ts < tq.ts && tk.hop >= tq.hop);
                row[k] = ok;
                any |= ok;
            }
        }
        if !any {
            row[q] = true;
            fallback_rows.push(q);
        }
    }
    AttentionMask {
        size: n,
        allowed,
        fallback_rows,
    }
}

/// How positional encodings are formed for a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionMode {
    /// Sum of the encodings toward both targets.
    Correlated,
    /// Encoding toward the root of the token's own context only.
    Unitary,
}

/// Everything the encoder needs for one sequence of one or two contexts.
#[derive(Debug, Clone)]
pub struct EncoderInput {
    pub tokens: Vec<ContextualToken>,
    /// Which context each token came from (0 or 1).
    pub side: Vec<u8>,
    /// Distances toward target 0 and target 1 (target 1 mirrors 0 for single-node inputs).
    pub prox: Vec<[Proximity; 2]>,
    pub targets: usize,
    pub mode: PositionMode,
    pub node_feats: Tensor,
    pub edge_pairs: Pairs,
    pub edge_feats: Tensor,
    pub mask: AttentionMask,
    /// Non-padding token indices of each context, for mean pooling.
    pub pools: Vec<Arc<Vec<usize>>>,
    pub t_pred: f64,
}

/// Options that shape input assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputOptions {
    pub unmasked: bool,
    pub joint: bool,
    pub unitary_only: bool,
}

impl EncoderInput {
    /// Joint sequence of the contexts of a candidate link `(u, v)` at `t_pred`.
    pub fn for_link(
        store: &EventStore,
        history: &InteractionHistory,
        ctx_u: &ContextualSet,
        ctx_v: &ContextualSet,
        td: &TdParams,
        opts: InputOptions,
    ) -> Result<Self> {
        let mode = if opts.unitary_only {
            PositionMode::Unitary
        } else {
            PositionMode::Correlated
        };
        Self::assemble(store, history, &[ctx_u, ctx_v], td, opts, mode)
    }

    /// Sequence of a single node's context with unitary encodings.
    pub fn for_node(
        store: &EventStore,
        history: &InteractionHistory,
        ctx: &ContextualSet,
        td: &TdParams,
        opts: InputOptions,
    ) -> Result<Self> {
        Self::assemble(store, history, &[ctx], td, opts, PositionMode::Unitary)
    }

    fn assemble(
        store: &EventStore,
        history: &InteractionHistory,
        ctxs: &[&ContextualSet],
        td: &TdParams,
        opts: InputOptions,
        mode: PositionMode,
    ) -> Result<Self> {
        let t_pred = ctxs[0].t_pred;
        let hop_index: Vec<HopIndex> = ctxs.iter().map(|c| HopIndex::new(c, td.sd_inf)).collect();
        let total: usize = ctxs.iter().map(|c| c.len()).sum();
        let d_n = store.node_dim();
        let d_e = store.edge_dim();

        let mut tokens = Vec::with_capacity(total);
        let mut side = Vec::with_capacity(total);
        let mut prox = Vec::with_capacity(total);
        let mut node_feats = Tensor::zeros(total, d_n);
        let mut pairs = Vec::new();
        let mut edge_rows: Vec<u32> = Vec::new();
        let mut pools = Vec::with_capacity(ctxs.len());

        for (s, ctx) in ctxs.iter().enumerate() {
            let offset = tokens.len();
            let mut pool = Vec::new();
            for (i, tok) in ctx.tokens.iter().enumerate() {
                let p0 = proximity_to(tok, &hop_index[0], history, t_pred, td)?;
                let p1 = match hop_index.get(1) {
                    Some(h) => proximity_to(tok, h, history, t_pred, td)?,
                    None => p0,
                };
                let pos = tokens.len();
                if !tok.is_pad {
                    pool.push(pos);
                    if d_n > 0 {
                        node_feats
                            .row_mut(pos)
                            .copy_from_slice(store.node_feat(tok.node));
                    }
                    if let (true, Some(ev)) = (d_e > 0, tok.event_idx) {
                        if i != 0 {
                            let parent = offset + tok.parent;
                            pairs.push((pos, parent));
                            edge_rows.push(ev);
                            pairs.push((parent, pos));
                            edge_rows.push(ev);
                        }
                    }
                }
                tokens.push(*tok);
                side.push(s as u8);
                prox.push([p0, p1]);
            }
            pools.push(Arc::new(pool));
        }

        let mut edge_feats = Tensor::zeros(edge_rows.len(), d_e);
        for (r, &ev) in edge_rows.iter().enumerate() {
            edge_feats
                .row_mut(r)
                .copy_from_slice(store.edge_feat(ev as usize));
        }
        let sides = (!opts.joint && ctxs.len() > 1).then_some(side.as_slice());
        let mask = build_mask(&tokens, sides, opts.unmasked);
        Ok(Self {
            tokens,
            side,
            prox,
            targets: ctxs.len(),
            mode,
            node_feats,
            edge_pairs: Arc::new(pairs),
            edge_feats,
            mask,
            pools,
            t_pred,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Per-token `(td, sd)` lists that feed one unitary encoding pass.
    /// `toward` selects the target; `None` means each token's own side.
    pub fn distances(&self, toward: Option<usize>) -> (Vec<f64>, Vec<f64>) {
        self.prox
            .iter()
            .zip(&self.side)
            .map(|(p, &s)| {
                let t = toward.unwrap_or(s as usize);
                (p[t].td, p[t].sd)
            })
            .unzip()
    }
}
