//! The encoder: input projection of `features ‖ positional encoding`,
//! Pre-Norm layers of masked edge-aware multi-head attention and a
//! feed-forward block, mean pooling per target, and the link scorer.

mod decompose;
mod input;

pub use decompose::{bucket_heatmap, decompose_scores, heatmap_csv, Contribution, HeatmapCell};
pub use input::{build_mask, AttentionMask, EncoderInput, InputOptions, PositionMode};

use std::sync::Arc;

use cordgt_numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{EncConfig, Mlp, StpeMask, StpeParams};
use crate::error::{CoreError, Result};

pub const LN_EPS: f64 = 1e-5;
pub const PROB_CLAMP: f64 = 1e-7;

/// Switches that remove or replace one component of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub no_td: bool,
    pub no_sd: bool,
    pub stpe_u_only: bool,
    pub no_mask: bool,
    pub alpha_zero: bool,
    pub beta_zero: bool,
    pub recent_sampling: bool,
}

impl AblationFlags {
    pub const NAMES: [&'static str; 7] = [
        "alpha_zero",
        "beta_zero",
        "no_sd",
        "no_td",
        "stpe_u_only",
        "no_mask",
        "recent_sampling",
    ];

    pub fn validate(&self) -> Result<()> {
        if self.no_td && (self.alpha_zero || self.beta_zero) {
            return Err(CoreError::ConflictingFlags(
                "no_td removes temporal distance entirely; alpha_zero/beta_zero have nothing to act on".into(),
            ));
        }
        if self.alpha_zero && self.beta_zero {
            return Err(CoreError::ConflictingFlags(
                "alpha_zero together with beta_zero makes every finite temporal distance zero"
                    .into(),
            ));
        }
        if self.no_td && self.no_sd {
            return Err(CoreError::ConflictingFlags(
                "no_td together with no_sd leaves no positional encoding".into(),
            ));
        }
        Ok(())
    }

    /// Sets the flag called `name`.
    pub fn set(&mut self, name: &str, on: bool) -> Result<()> {
        let slot = match name {
            "no_td" => &mut self.no_td,
            "no_sd" => &mut self.no_sd,
            "stpe_u_only" => &mut self.stpe_u_only,
            "no_mask" => &mut self.no_mask,
            "alpha_zero" => &mut self.alpha_zero,
            "beta_zero" => &mut self.beta_zero,
            "recent_sampling" => &mut self.recent_sampling,
            other => {
                return Err(CoreError::InvalidConfig(format!(
                    "unknown ablation flag `{other}`"
                )))
            }
        };
        *slot = on;
        Ok(())
    }

    pub fn only(name: &str) -> Result<Self> {
        let mut f = Self::default();
        f.set(name, true)?;
        Ok(f)
    }

    pub fn active(&self) -> Vec<&'static str> {
        let on = [
            self.alpha_zero,
            self.beta_zero,
            self.no_sd,
            self.no_td,
            self.stpe_u_only,
            self.no_mask,
            self.recent_sampling,
        ];
        Self::NAMES
            .iter()
            .zip(on)
            .filter_map(|(n, b)| b.then_some(*n))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreHead {
    /// Two-layer perceptron over `z_u ‖ z_v`.
    #[default]
    Mlp,
    /// A single linear projector applied to `z_u + z_v`; scores decompose per token.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    /// Width of each attention head's queries, keys and values.
    pub head_dim: usize,
    pub ffn_mult: usize,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub enc: EncConfig,
    pub flags: AblationFlags,
    /// Encode both contexts of a link in one sequence.
    pub joint: bool,
    pub head: ScoreHead,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 6,
            hidden: 64,
            head_dim: 64,
            ffn_mult: 4,
            node_dim: 0,
            edge_dim: 0,
            enc: EncConfig::default(),
            flags: AblationFlags::default(),
            joint: true,
            head: ScoreHead::Mlp,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn input_width(&self) -> usize {
        self.node_dim + self.enc.output_width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0
            || self.heads == 0
            || self.hidden == 0
            || self.head_dim == 0
            || self.ffn_mult == 0
        {
            return Err(CoreError::InvalidConfig(
                "layers, heads, hidden, head_dim and ffn_mult must be at least 1".into(),
            ));
        }
        self.enc.validate()?;
        self.flags.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model config serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| CoreError::InvalidConfig(format!("model config: {e}")))
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wek: Option<ParamId>,
    wev: Option<ParamId>,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ffn: Mlp,
}

#[derive(Debug, Clone, Copy)]
enum HeadParams {
    Mlp(Mlp),
    Linear(ParamId),
}

/// Model parameters plus the ids that address them.
#[derive(Debug, Clone)]
pub struct CorDgt {
    cfg: ModelConfig,
    params: ParamStore,
    stpe: StpeParams,
    w_in: ParamId,
    b_in: ParamId,
    layers: Vec<LayerParams>,
    head: HeadParams,
}

/// Values from one forward pass over a link input.
#[derive(Debug, Clone, Copy)]
pub struct LinkForward {
    pub hidden: Var,
    pub z_u: Var,
    pub z_v: Var,
    pub logit: Var,
    pub prob: Var,
}

impl CorDgt {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut p = ParamStore::new();
        let stpe = StpeParams::register(&mut p, &cfg.enc, &mut rng);
        let d = cfg.hidden;
        let inner = cfg.heads * cfg.head_dim;
        let w_in = p.add("input.w", Tensor::xavier(cfg.input_width(), d, &mut rng));
        let b_in = p.add("input.b", Tensor::zeros(1, d));
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let wek = (cfg.edge_dim > 0).then(|| {
                p.add(
                    name("attn.wek"),
                    Tensor::xavier(cfg.edge_dim, inner, &mut rng),
                )
            });
            let wev = (cfg.edge_dim > 0).then(|| {
                p.add(
                    name("attn.wev"),
                    Tensor::xavier(cfg.edge_dim, inner, &mut rng),
                )
            });
            layers.push(LayerParams {
                ln1_g: p.add(name("ln1.g"), Tensor::filled(1, d, 1.0)),
                ln1_b: p.add(name("ln1.b"), Tensor::zeros(1, d)),
                wq: p.add(name("attn.wq"), Tensor::xavier(d, inner, &mut rng)),
                wk: p.add(name("attn.wk"), Tensor::xavier(d, inner, &mut rng)),
                wv: p.add(name("attn.wv"), Tensor::xavier(d, inner, &mut rng)),
                wek,
                wev,
                wo: p.add(name("attn.wo"), Tensor::xavier(inner, d, &mut rng)),
                bo: p.add(name("attn.bo"), Tensor::zeros(1, d)),
                ln2_g: p.add(name("ln2.g"), Tensor::filled(1, d, 1.0)),
                ln2_b: p.add(name("ln2.b"), Tensor::zeros(1, d)),
                ffn: Mlp::register(&mut p, &name("ffn"), d, cfg.ffn_mult * d, d, &mut rng),
            });
        }
        let head = match cfg.head {
            ScoreHead::Mlp => HeadParams::Mlp(Mlp::register(&mut p, "head", 2 * d, d, 1, &mut rng)),
            ScoreHead::Linear => {
                HeadParams::Linear(p.add("head.phi", Tensor::xavier(d, 1, &mut rng)))
            }
        };
        Ok(Self {
            cfg,
            params: p,
            stpe,
            w_in,
            b_in,
            layers,
            head,
        })
    }

    /// Rebuilds a model from a config and previously saved parameters.
    pub fn with_params(cfg: ModelConfig, params: &ParamStore) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        m.params.assign_from(params)?;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn stpe_params(&self) -> &StpeParams {
        &self.stpe
    }

    pub fn input_options(&self) -> InputOptions {
        InputOptions {
            unmasked: self.cfg.flags.no_mask,
            joint: self.cfg.joint,
            unitary_only: self.cfg.flags.stpe_u_only,
        }
    }

    fn positional(&self, tape: &mut Tape, input: &EncoderInput) -> Var {
        let mask = StpeMask {
            drop_td: self.cfg.flags.no_td,
            drop_sd: self.cfg.flags.no_sd,
        };
        let p = &self.params;
        match (input.mode, input.targets) {
            (PositionMode::Correlated, 2) => {
                let (td0, sd0) = input.distances(Some(0));
                let (td1, sd1) = input.distances(Some(1));
                let a = self.stpe.unitary(tape, p, &self.cfg.enc, &td0, &sd0, mask);
                let b = self.stpe.unitary(tape, p, &self.cfg.enc, &td1, &sd1, mask);
                tape.add(a, b)
            }
            _ => {
                let (td, sd) = input.distances(None);
                self.stpe.unitary(tape, p, &self.cfg.enc, &td, &sd, mask)
            }
        }
    }

    /// One masked edge-aware multi-head attention block on normalised input.
    pub fn attention(&self, tape: &mut Tape, layer: usize, x: Var, input: &EncoderInput) -> Var {
        self.attention_traced(tape, layer, x, input, &mut Vec::new())
    }

    fn attention_traced(
        &self,
        tape: &mut Tape,
        layer: usize,
        x: Var,
        input: &EncoderInput,
        trace: &mut Vec<Var>,
    ) -> Var {
        let lp = self.layers[layer];
        let p = &self.params;
        let (wq, wk, wv) = (
            tape.param(p, lp.wq),
            tape.param(p, lp.wk),
            tape.param(p, lp.wv),
        );
        let q = tape.matmul(x, wq);
        let k = tape.matmul(x, wk);
        let v = tape.matmul(x, wv);
        let has_edges = !input.edge_pairs.is_empty() && lp.wek.is_some();
        let (ek, ev) = if has_edges {
            let ef = tape.constant(input.edge_feats.clone());
            let wek = tape.param(p, lp.wek.expect("edge key weights"));
            let wev = tape.param(p, lp.wev.expect("edge value weights"));
            (Some(tape.matmul(ef, wek)), Some(tape.matmul(ef, wev)))
        } else {
            (None, None)
        };
        let dk = self.cfg.head_dim;
        let scale = 1.0 / (dk as f64).sqrt();
        let n = input.len();
        let mut outs = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (a, b) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q, a, b);
            let kh = tape.slice_cols(k, a, b);
            let vh = tape.slice_cols(v, a, b);
            let mut scores = tape.matmul_nt(qh, kh);
            if let Some(ek) = ek {
                let ekh = tape.slice_cols(ek, a, b);
                let extra = tape.pair_dot(qh, ekh, input.edge_pairs.clone(), n);
                scores = tape.add(scores, extra);
            }
            let scores = tape.scale(scores, scale);
            let scores = tape.masked_fill(scores, &input.mask.allowed);
            let weights = tape.row_softmax(scores);
            trace.push(weights);
            let mut out = tape.matmul(weights, vh);
            if let Some(ev) = ev {
                let evh = tape.slice_cols(ev, a, b);
                let extra = tape.pair_mix(weights, evh, input.edge_pairs.clone());
                out = tape.add(out, extra);
            }
            outs.push(out);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        let (wo, bo) = (tape.param(p, lp.wo), tape.param(p, lp.bo));
        let o = tape.matmul(cat, wo);
        tape.add_row(o, bo)
    }

    fn norm(&self, tape: &mut Tape, x: Var, g: ParamId, b: ParamId) -> Var {
        let n = tape.layer_norm(x, LN_EPS);
        let (g, b) = (tape.param(&self.params, g), tape.param(&self.params, b));
        let n = tape.mul_row(n, g);
        tape.add_row(n, b)
    }

    /// `H' = Attn(LN(H)) + H; H_out = FFN(LN(H')) + H'`.
    pub fn layer(&self, tape: &mut Tape, layer: usize, h: Var, input: &EncoderInput) -> Var {
        self.layer_traced(tape, layer, h, input, &mut Vec::new())
    }

    fn layer_traced(
        &self,
        tape: &mut Tape,
        layer: usize,
        h: Var,
        input: &EncoderInput,
        trace: &mut Vec<Var>,
    ) -> Var {
        let lp = self.layers[layer];
        let x = self.norm(tape, h, lp.ln1_g, lp.ln1_b);
        let a = self.attention_traced(tape, layer, x, input, trace);
        let h1 = tape.add(a, h);
        let x = self.norm(tape, h1, lp.ln2_g, lp.ln2_b);
        let f = lp.ffn.forward(tape, &self.params, x);
        tape.add(f, h1)
    }

    /// Final token embeddings of a sequence.
    pub fn encode(&self, tape: &mut Tape, input: &EncoderInput) -> Var {
        self.encode_traced(tape, input, &mut Vec::new())
    }

    /// Post-softmax attention weights of every layer and head, layer-major.
    pub fn attention_weights(&self, input: &EncoderInput) -> Vec<Tensor> {
        let mut tape = Tape::new();
        let mut trace = Vec::new();
        self.encode_traced(&mut tape, input, &mut trace);
        trace.into_iter().map(|w| tape.value(w).clone()).collect()
    }

    fn encode_traced(&self, tape: &mut Tape, input: &EncoderInput, trace: &mut Vec<Var>) -> Var {
        let pos = self.positional(tape, input);
        let x = if self.cfg.node_dim > 0 {
            let nf = tape.constant(input.node_feats.clone());
            tape.concat_cols(&[nf, pos])
        } else {
            pos
        };
        let (w, b) = (
            tape.param(&self.params, self.w_in),
            tape.param(&self.params, self.b_in),
        );
        let h = tape.matmul(x, w);
        let mut h = tape.add_row(h, b);
        for l in 0..self.layers.len() {
            h = self.layer_traced(tape, l, h, input, trace);
        }
        h
    }

    /// Mean of the non-padding rows belonging to target `side`.
    pub fn pool(&self, tape: &mut Tape, hidden: Var, input: &EncoderInput, side: usize) -> Var {
        tape.mean_rows(hidden, input.pools[side].clone())
    }

    /// Pre-sigmoid score of a pair of target embeddings.
    pub fn score_logit(&self, tape: &mut Tape, z_u: Var, z_v: Var) -> Var {
        match self.head {
            HeadParams::Mlp(mlp) => {
                let cat = tape.concat_cols(&[z_u, z_v]);
                mlp.forward(tape, &self.params, cat)
            }
            HeadParams::Linear(phi) => {
                let s = tape.add(z_u, z_v);
                let phi = tape.param(&self.params, phi);
                tape.matmul(s, phi)
            }
        }
    }

    pub fn link_forward(&self, tape: &mut Tape, input: &EncoderInput) -> LinkForward {
        assert_eq!(input.targets, 2, "link scoring needs two contexts");
        let hidden = self.encode(tape, input);
        let z_u = self.pool(tape, hidden, input, 0);
        let z_v = self.pool(tape, hidden, input, 1);
        let logit = self.score_logit(tape, z_u, z_v);
        let prob = tape.sigmoid(logit);
        LinkForward {
            hidden,
            z_u,
            z_v,
            logit,
            prob,
        }
    }

    /// `−log S(u,v) − log(1 − S(u,r))` for one positive and one negative input.
    pub fn link_loss(
        &self,
        tape: &mut Tape,
        pos: &EncoderInput,
        neg: &EncoderInput,
    ) -> (Var, f64, f64) {
        let fp = self.link_forward(tape, pos);
        let fneg = self.link_forward(tape, neg);
        let probs = tape.concat_rows(&[fp.prob, fneg.prob]);
        let bce = tape.bce(probs, Arc::new(vec![1.0, 0.0]), PROB_CLAMP);
        let loss = tape.scale(bce, 2.0);
        let (sp, sn) = (tape.scalar(fp.prob), tape.scalar(fneg.prob));
        (loss, sp, sn)
    }

    /// Probability of a link, without keeping the tape.
    pub fn predict(&self, input: &EncoderInput) -> f64 {
        let mut tape = Tape::new();
        let f = self.link_forward(&mut tape, input);
        tape.scalar(f.prob)
    }

    /// Mean-pooled embedding of a single-node input.
    pub fn embed_node(&self, input: &EncoderInput) -> Vec<f64> {
        let mut tape = Tape::new();
        let h = self.encode(&mut tape, input);
        let z = self.pool(&mut tape, h, input, 0);
        tape.value(z).data().to_vec()
    }

    pub(crate) fn linear_head(&self) -> Option<ParamId> {
        match self.head {
            HeadParams::Linear(phi) => Some(phi),
            HeadParams::Mlp(_) => None,
        }
    }
}

#[cfg(test)]
mod tests;
