//! First-order proximity between a contextual node and a target: temporal
//! distance from the pair's interaction history and spatial distance from
//! the target's sampled context.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_store::{NodeId, PairRecord};
use crate::sampler::ContextualSet;

/// Weights of the intensity and recency terms plus the two sentinels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdParams {
    pub alpha: f64,
    pub beta: f64,
    /// Value used for pairs with no recorded interaction.
    pub td_max: f64,
    /// Value used for nodes absent from a target's context.
    pub sd_inf: u32,
}

impl TdParams {
    /// `td_max = max(10, α + β)` bounds every finite distance from above;
    /// `sd_inf = 2K + 1` for `K` sampling hops.
    pub fn new(alpha: f64, beta: f64, hops: usize) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(CoreError::InvalidConfig(format!(
                "alpha and beta must be positive and finite, got {alpha}, {beta}"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            td_max: f64::max(10.0, alpha + beta),
            sd_inf: 2 * hops as u32 + 1,
        })
    }

    /// Zeroes one of the two terms while keeping the sentinels.
    pub fn ablated(mut self, alpha_zero: bool, beta_zero: bool) -> Self {
        if alpha_zero {
            self.alpha = 0.0;
        }
        if beta_zero {
            self.beta = 0.0;
        }
        self
    }
}

/// Maximum-likelihood intensity `n / t_n` of a homogeneous Poisson process
/// observed through its first `n` arrivals, the last at `t_n`.
pub fn poisson_mle(count: u32, last_ts: f64) -> Result<f64> {
    if count == 0 || !(last_ts > 0.0) || !last_ts.is_finite() {
        return Err(CoreError::UndefinedIntensity {
            count,
            duration: last_ts,
        });
    }
    Ok(f64::from(count) / last_ts)
}

/// `α·t_n/(t_pred·n) + β·(t_pred − t_n)/t_pred`, i.e. the inverse estimated
/// intensity normalised by `t_pred` plus the normalised recency gap.
///
/// The node itself is at distance 0 and a pair without history at `td_max`.
/// A record at or after `t_pred` means the ledger has seen the future and is
/// reported as [`CoreError::Leak`].
pub fn temporal_distance(
    record: Option<PairRecord>,
    same_node: bool,
    t_pred: f64,
    params: &TdParams,
) -> Result<f64> {
    if same_node {
        return Ok(0.0);
    }
    let Some(rec) = record else {
        return Ok(params.td_max);
    };
    if rec.last_ts >= t_pred {
        return Err(CoreError::Leak {
            last_ts: rec.last_ts,
            t_pred,
        });
    }
    let n = f64::from(rec.count);
    Ok(params.alpha * rec.last_ts / (t_pred * n) + params.beta * (t_pred - rec.last_ts) / t_pred)
}

/// Minimum hop at which `w` occurs among the non-padding tokens of `ctx`,
/// `0` for the root and `sd_inf` when absent.
pub fn spatial_distance(ctx: &ContextualSet, w: NodeId, sd_inf: u32) -> u32 {
    if w == ctx.root {
        return 0;
    }
    ctx.non_padding()
        .filter(|(_, t)| t.node == w)
        .map(|(_, t)| t.hop)
        .min()
        .unwrap_or(sd_inf)
}

/// Precomputed minimum hops of every node in a context, for repeated lookups.
#[derive(Debug, Clone)]
pub struct HopIndex {
    root: NodeId,
    hops: std::collections::HashMap<NodeId, u32>,
    sd_inf: u32,
}

impl HopIndex {
    pub fn new(ctx: &ContextualSet, sd_inf: u32) -> Self {
        let mut hops = std::collections::HashMap::new();
        for (_, t) in ctx.non_padding() {
            hops.entry(t.node)
                .and_modify(|h: &mut u32| *h = (*h).min(t.hop))
                .or_insert(t.hop);
        }
        hops.insert(ctx.root, 0);
        Self {
            root: ctx.root,
            hops,
            sd_inf,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn get(&self, w: NodeId) -> u32 {
        self.hops.get(&w).copied().unwrap_or(self.sd_inf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::ContextualToken;

    fn rec(count: u32, last_ts: f64) -> Option<PairRecord> {
        Some(PairRecord { count, last_ts })
    }

    fn unit() -> TdParams {
        TdParams::new(1.0, 1.0, 2).unwrap()
    }

    #[test]
    fn mle_examples() {
        assert_eq!(poisson_mle(1, 1.0).unwrap(), 1.0);
        assert_eq!(poisson_mle(4, 8.0).unwrap(), 0.5);
        assert!(matches!(
            poisson_mle(3, 0.0),
            Err(CoreError::UndefinedIntensity { .. })
        ));
    }

    #[test]
    fn td_sentinels() {
        let p = unit();
        assert_eq!(temporal_distance(rec(3, 4.0), true, 9.0, &p).unwrap(), 0.0);
        assert_eq!(temporal_distance(None, false, 9.0, &p).unwrap(), 10.0);
    }

    #[test]
    fn td_worked_examples() {
        let p = unit();
        let v = temporal_distance(rec(5, 50.0), false, 100.0, &p).unwrap();
        assert!((v - 0.6).abs() < 1e-15);
        let p = TdParams::new(1.0, 10.0, 2).unwrap();
        let v = temporal_distance(rec(9, 180.0), false, 200.0, &p).unwrap();
        assert!((v - 1.1).abs() < 1e-14);
        assert_eq!(p.td_max, 11.0);
    }

    #[test]
    fn td_rejects_future_records() {
        let p = unit();
        assert!(matches!(
            temporal_distance(rec(1, 5.0), false, 5.0, &p),
            Err(CoreError::Leak { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(TdParams::new(0.0, 1.0, 2).is_err());
        assert!(TdParams::new(1.0, -1.0, 2).is_err());
        assert_eq!(TdParams::new(1.0, 1.0, 2).unwrap().sd_inf, 5);
    }

    fn tok(node: NodeId, hop: u32, is_pad: bool) -> ContextualToken {
        ContextualToken {
            node,
            ts: 0.0,
            hop,
            parent: 0,
            event_idx: None,
            is_pad,
        }
    }

    #[test]
    fn sd_cases() {
        let ctx = ContextualSet {
            root: 0,
            t_pred: 1.0,
            fanouts: vec![2, 1],
            tokens: vec![
                tok(0, 0, false),
                tok(3, 1, false),
                tok(7, 1, true),
                tok(3, 2, false),
                tok(5, 2, false),
            ],
        };
        assert_eq!(spatial_distance(&ctx, 0, 5), 0);
        assert_eq!(spatial_distance(&ctx, 3, 5), 1);
        assert_eq!(spatial_distance(&ctx, 5, 5), 2);
        // only present as padding
        assert_eq!(spatial_distance(&ctx, 7, 5), 5);
        assert_eq!(spatial_distance(&ctx, 42, 5), 5);
        let idx = HopIndex::new(&ctx, 5);
        for w in [0, 3, 5, 7, 42] {
            assert_eq!(idx.get(w), spatial_distance(&ctx, w, 5));
        }
    }
}
