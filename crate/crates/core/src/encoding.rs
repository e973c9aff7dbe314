//! Sinusoidal scalar codes and the unitary / correlated spatial-temporal
//! positional encodings built from them.

use std::collections::HashMap;
use std::sync::Arc;

use cordgt_numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_store::{InteractionHistory, NodeId};
use crate::proximity::{temporal_distance, HopIndex, TdParams};
use crate::sampler::ContextualToken;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncConfig {
    /// Number of frequencies; each code has length `2 * half_dim`.
    pub half_dim: usize,
    pub epsilon: f64,
    /// Output width of the temporal-distance projection.
    pub td_width: usize,
    /// Output width of the spatial-distance projection.
    pub sd_width: usize,
    /// Hidden width of both projections.
    pub hidden: usize,
}

impl Default for EncConfig {
    fn default() -> Self {
        // projection hidden width is twice the default model width
        Self {
            hidden: 128,
            ..Self::new(50, 100, 100)
        }
    }
}

impl EncConfig {
    pub fn new(half_dim: usize, td_width: usize, sd_width: usize) -> Self {
        Self {
            half_dim,
            epsilon: 10_000.0,
            td_width,
            sd_width,
            hidden: 2 * half_dim,
        }
    }

    pub fn code_len(&self) -> usize {
        2 * self.half_dim
    }

    pub fn output_width(&self) -> usize {
        self.td_width + self.sd_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_dim == 0 || self.td_width == 0 || self.sd_width == 0 || self.hidden == 0 {
            return Err(CoreError::InvalidConfig(
                "encoding dimensions must all be at least 1".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(CoreError::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Writes the code of `x` into `out` (length `2 * half_dim`):
/// `out[2i] = sin(εx / 10000^(2i/d))`, `out[2i+1] = cos(…)`.
pub fn enc_into(x: f64, half_dim: usize, epsilon: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), 2 * half_dim);
    for i in 0..half_dim {
        let freq = epsilon / 10_000f64.powf(2.0 * i as f64 / half_dim as f64);
        let (s, c) = (freq * x).sin_cos();
        out[2 * i] = s;
        out[2 * i + 1] = c;
    }
}

pub fn enc(x: f64, cfg: &EncConfig) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(CoreError::InvalidConfig(format!(
            "cannot encode non-finite value {x}"
        )));
    }
    let mut out = vec![0.0; cfg.code_len()];
    enc_into(x, cfg.half_dim, cfg.epsilon, &mut out);
    Ok(out)
}

/// Codes of several scalars, one per row.
pub fn enc_rows(values: &[f64], cfg: &EncConfig) -> Tensor {
    let w = cfg.code_len();
    let mut t = Tensor::zeros(values.len(), w);
    for (r, &x) in values.iter().enumerate() {
        enc_into(x, cfg.half_dim, cfg.epsilon, t.row_mut(r));
    }
    t
}

/// Two affine maps with a ReLU between them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), Tensor::xavier(input, hidden, rng)),
            b1: store.add(format!("{prefix}.b1"), Tensor::zeros(1, hidden)),
            w2: store.add(format!("{prefix}.w2"), Tensor::xavier(hidden, output, rng)),
            b2: store.add(format!("{prefix}.b2"), Tensor::zeros(1, output)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let (w1, b1, w2, b2) = (
            tape.param(store, self.w1),
            tape.param(store, self.b1),
            tape.param(store, self.w2),
            tape.param(store, self.b2),
        );
        let h = tape.matmul(x, w1);
        let h = tape.add_row(h, b1);
        let h = tape.relu(h);
        let o = tape.matmul(h, w2);
        tape.add_row(o, b2)
    }

    pub fn output_width(&self, store: &ParamStore) -> usize {
        store.get(self.w2).cols()
    }
}

/// Separate projections of the temporal- and spatial-distance codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StpeParams {
    pub td_proj: Mlp,
    pub sd_proj: Mlp,
}

/// Which halves of the encoding are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StpeMask {
    pub drop_td: bool,
    pub drop_sd: bool,
}

impl StpeParams {
    pub fn register<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncConfig, rng: &mut R) -> Self {
        Self {
            td_proj: Mlp::register(
                store,
                "stpe.td",
                cfg.code_len(),
                cfg.hidden,
                cfg.td_width,
                rng,
            ),
            sd_proj: Mlp::register(
                store,
                "stpe.sd",
                cfg.code_len(),
                cfg.hidden,
                cfg.sd_width,
                rng,
            ),
        }
    }

    /// Unitary encoding of each row: `MLP(Enc(td)) ‖ MLP(Enc(sd))`.
    /// A dropped half is replaced by zeros of the same width.
    pub fn unitary(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        cfg: &EncConfig,
        td: &[f64],
        sd: &[f64],
        mask: StpeMask,
    ) -> Var {
        assert_eq!(td.len(), sd.len(), "td/sd row count mismatch");
        let rows = td.len();
        let td_part = if mask.drop_td {
            tape.constant(Tensor::zeros(rows, cfg.td_width))
        } else {
            project_distinct(tape, store, cfg, &self.td_proj, td)
        };
        let sd_part = if mask.drop_sd {
            tape.constant(Tensor::zeros(rows, cfg.sd_width))
        } else {
            project_distinct(tape, store, cfg, &self.sd_proj, sd)
        };
        tape.concat_cols(&[td_part, sd_part])
    }
}

/// Runs the projection once per distinct value and scatters the rows back;
/// distances repeat heavily (sentinels, hop numbers) within a sequence.
fn project_distinct(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &EncConfig,
    mlp: &Mlp,
    values: &[f64],
) -> Var {
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut distinct = Vec::new();
    let idx: Vec<usize> = values
        .iter()
        .map(|&x| {
            *seen.entry(x.to_bits()).or_insert_with(|| {
                distinct.push(x);
                distinct.len() - 1
            })
        })
        .collect();
    let codes = tape.constant(enc_rows(&distinct, cfg));
    let out = mlp.forward(tape, store, codes);
    if distinct.len() == values.len() && idx.iter().enumerate().all(|(i, &j)| i == j) {
        return out;
    }
    tape.gather_rows(out, Arc::new(idx))
}

/// Temporal and spatial distance of one token toward one target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proximity {
    pub td: f64,
    pub sd: f64,
}

/// Sentinel-resolved distances of `token` toward the root of `target`.
/// Padding sits at `(td_max, sd_inf)`.
pub fn proximity_to(
    token: &ContextualToken,
    target: &HopIndex,
    history: &InteractionHistory,
    t_pred: f64,
    params: &TdParams,
) -> Result<Proximity> {
    if token.is_pad {
        return Ok(Proximity {
            td: params.td_max,
            sd: f64::from(params.sd_inf),
        });
    }
    let root: NodeId = target.root();
    let td = temporal_distance(
        history.lookup(token.node, root),
        token.node == root,
        t_pred,
        params,
    )?;
    Ok(Proximity {
        td,
        sd: f64::from(target.get(token.node)),
    })
}

/// Unitary encoding of a single `(td, sd)` pair.
pub fn stpe_u(
    td: f64,
    sd: f64,
    params: &StpeParams,
    store: &ParamStore,
    cfg: &EncConfig,
) -> Result<Vec<f64>> {
    if !td.is_finite() || !sd.is_finite() {
        return Err(CoreError::InvalidConfig("distances must be finite".into()));
    }
    let mut tape = Tape::new();
    let v = params.unitary(&mut tape, store, cfg, &[td], &[sd], StpeMask::default());
    Ok(tape.value(v).data().to_vec())
}

/// Correlated encoding of one token: the sum of its unitary encodings toward
/// both targets. With `unitary_only` only the encoding toward `own` is used.
#[allow(clippy::too_many_arguments)]
pub fn stpe_c(
    token: &ContextualToken,
    target_u: &HopIndex,
    target_v: &HopIndex,
    own: &HopIndex,
    history: &InteractionHistory,
    t_pred: f64,
    td_params: &TdParams,
    params: &StpeParams,
    store: &ParamStore,
    cfg: &EncConfig,
    unitary_only: bool,
) -> Result<Vec<f64>> {
    if unitary_only {
        let p = proximity_to(token, own, history, t_pred, td_params)?;
        return stpe_u(p.td, p.sd, params, store, cfg);
    }
    let pu = proximity_to(token, target_u, history, t_pred, td_params)?;
    let pv = proximity_to(token, target_v, history, t_pred, td_params)?;
    let mut a = stpe_u(pu.td, pu.sd, params, store, cfg)?;
    let b = stpe_u(pv.td, pv.sd, params, store, cfg)?;
    for (x, y) in a.iter_mut().zip(&b) {
        *x += y;
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn enc_of_zero() {
        let cfg = EncConfig::new(4, 3, 3);
        let e = enc(0.0, &cfg).unwrap();
        for i in 0..4 {
            assert_eq!(e[2 * i], 0.0);
            assert_eq!(e[2 * i + 1], 1.0);
        }
    }

    #[test]
    fn enc_pairs_lie_on_unit_circle() {
        let cfg = EncConfig::new(7, 3, 3);
        for x in [0.1, 1.0, 3.3, 10.0, 11.0, 1234.5] {
            let e = enc(x, &cfg).unwrap();
            for i in 0..7 {
                assert!((e[2 * i].powi(2) + e[2 * i + 1].powi(2) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn enc_of_one_with_single_frequency() {
        // reference values from an independent 50-digit evaluation of sin/cos(10000)
        let e = enc(1.0, &EncConfig::new(1, 1, 1)).unwrap();
        assert!((e[0] - (-0.305_614_388_888_252)).abs() < 1e-10);
        assert!((e[1] - (-0.952_155_368_259_015)).abs() < 1e-10);
    }

    #[test]
    fn enc_rejects_nan() {
        assert!(enc(f64::NAN, &EncConfig::default()).is_err());
    }

    #[test]
    fn default_widths() {
        let cfg = EncConfig::default();
        assert_eq!(cfg.output_width(), 200);
        let mut store = ParamStore::new();
        let p = StpeParams::register(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(stpe_u(1.0, 2.0, &p, &store, &cfg).unwrap().len(), 200);
    }

    #[test]
    fn stpe_u_is_pure() {
        let cfg = EncConfig::new(3, 4, 5);
        let mut store = ParamStore::new();
        let p = StpeParams::register(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(
            stpe_u(0.7, 1.0, &p, &store, &cfg).unwrap(),
            stpe_u(0.7, 1.0, &p, &store, &cfg).unwrap()
        );
    }

    #[test]
    fn zero_weights_give_bias_only_output() {
        let cfg = EncConfig::new(3, 2, 2);
        let mut store = ParamStore::new();
        let p = StpeParams::register(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        for id in [p.td_proj.w1, p.td_proj.w2, p.sd_proj.w1, p.sd_proj.w2] {
            let t = store.get_mut(id);
            *t = Tensor::zeros(t.rows(), t.cols());
        }
        *store.get_mut(p.td_proj.b2) = Tensor::row_vector(vec![0.5, -1.0]);
        *store.get_mut(p.sd_proj.b2) = Tensor::row_vector(vec![2.0, 3.0]);
        for (td, sd) in [(0.0, 0.0), (3.1, 5.0), (10.0, 1.0)] {
            assert_eq!(
                stpe_u(td, sd, &p, &store, &cfg).unwrap(),
                vec![0.5, -1.0, 2.0, 3.0]
            );
        }
    }
}
