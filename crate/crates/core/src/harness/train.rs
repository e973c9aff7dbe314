//! The training loop and the sequential evaluation protocol.

use std::collections::HashSet;
use std::ops::Range;
use std::time::Instant;

use cordgt_numerics::{Adam, AdamConfig, Grads, ParamStore, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::{
    choose_masked_nodes, chronological_split, inductive_filter, SplitMode, SplitSpec, Splits,
};
use crate::error::{CoreError, Result};
use crate::event_store::{Event, EventStore, InteractionHistory, NodeId};
use crate::metrics::{average_precision, roc_auc};
use crate::model::{decompose_scores, Contribution, CorDgt, EncoderInput, ModelConfig};
use crate::proximity::TdParams;
use crate::sampler::{sample_contextual, SamplingStrategy};

/// Whether the ledger is updated after the forward pass of a batch (the
/// leak-free order) or before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitOrder {
    #[default]
    ForwardThenCommit,
    CommitBeforeForward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub alpha: f64,
    pub beta: f64,
    pub fanouts: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub seed: u64,
    pub split: SplitSpec,
    pub commit_order: CommitOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            alpha: 1.0,
            beta: 10.0,
            fanouts: vec![20, 1],
            batch_size: 100,
            epochs: 50,
            patience: 3,
            lr: 1e-3,
            seed: 0,
            split: SplitSpec::default(),
            commit_order: CommitOrder::ForwardThenCommit,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.split.validate()?;
        if self.fanouts.is_empty() || self.fanouts.contains(&0) {
            return Err(CoreError::InvalidConfig(
                "fanouts must be non-empty and at least 1".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::InvalidConfig(
                "batch size and epochs must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(CoreError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        self.td_params().map(|_| ())
    }

    pub fn td_params(&self) -> Result<TdParams> {
        let f = self.model.flags;
        Ok(TdParams::new(self.alpha, self.beta, self.fanouts.len())?
            .ablated(f.alpha_zero, f.beta_zero))
    }

    pub fn strategy(&self) -> SamplingStrategy {
        if self.model.flags.recent_sampling {
            SamplingStrategy::Recent
        } else {
            SamplingStrategy::Uniform
        }
    }
}

/// A window of consecutive events; the selected ones are scored, and the
/// whole window is committed to the ledger batch by batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSet {
    pub window: Range<usize>,
    pub selected: Vec<usize>,
}

impl EvalSet {
    pub fn full(window: Range<usize>) -> Self {
        Self {
            selected: window.clone().collect(),
            window,
        }
    }
}

/// Everything derived from the split protocol.
#[derive(Debug, Clone)]
pub struct Plan {
    pub splits: Splits,
    pub masked: Option<HashSet<NodeId>>,
    /// Training log for the inductive protocol: the full log without masked nodes.
    pub train_store: Option<EventStore>,
    pub train_window: Range<usize>,
    pub val: EvalSet,
    pub test: EvalSet,
}

impl Plan {
    pub fn new(store: &EventStore, spec: &SplitSpec) -> Result<Self> {
        let splits = chronological_split(store, spec)?;
        match spec.mode {
            SplitMode::Transductive => Ok(Self {
                train_window: splits.train.clone(),
                val: EvalSet::full(splits.val.clone()),
                test: EvalSet::full(splits.test.clone()),
                splits,
                masked: None,
                train_store: None,
            }),
            SplitMode::Inductive => {
                let masked = choose_masked_nodes(store, spec.mask_frac, spec.seed);
                let f = inductive_filter(store.events(), &splits, &masked);
                if f.val.is_empty() {
                    return Err(CoreError::EmptySplit("inductive validation"));
                }
                if f.test.is_empty() {
                    return Err(CoreError::EmptySplit("inductive test"));
                }
                let sub =
                    store.filtered(|e| !(masked.contains(&e.src) || masked.contains(&e.dst)))?;
                let t_train = store.event(splits.train.end - 1).ts;
                let end = sub.events().partition_point(|e| e.ts <= t_train);
                if end == 0 {
                    return Err(CoreError::EmptySplit("inductive train"));
                }
                Ok(Self {
                    val: EvalSet {
                        window: splits.val.clone(),
                        selected: f.val,
                    },
                    test: EvalSet {
                        window: splits.test.clone(),
                        selected: f.test,
                    },
                    train_window: 0..end,
                    splits,
                    masked: Some(masked),
                    train_store: Some(sub),
                })
            }
        }
    }

    pub fn train_store<'a>(&'a self, full: &'a EventStore) -> &'a EventStore {
        self.train_store.as_ref().unwrap_or(full)
    }
}

/// Consecutive batches of about `size` events covering `range`, each
/// extended so that events sharing a timestamp never straddle two batches.
pub fn batches(events: &[Event], range: Range<usize>, size: usize) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = range.start;
    while start < range.end {
        let mut end = (start + size).min(range.end);
        while end < range.end && events[end].ts == events[end - 1].ts {
            end += 1;
        }
        out.push(start..end);
        start = end;
    }
    out
}

/// splitmix64 over a few words, for independent per-link seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// A node drawn uniformly from all nodes other than `u` and `v`.
pub fn negative_sample<R: Rng + ?Sized>(
    u: NodeId,
    v: NodeId,
    num_nodes: usize,
    rng: &mut R,
) -> NodeId {
    let excluded = if u == v { 1 } else { 2 };
    assert!(
        num_nodes > excluded,
        "negative sampling needs at least 3 nodes"
    );
    let (lo, hi) = (u.min(v), u.max(v));
    let mut r = rng.gen_range(0..(num_nodes - excluded) as NodeId);
    if r >= lo {
        r += 1;
    }
    if u != v && r >= hi {
        r += 1;
    }
    r
}

/// Positive `(u, v)` and negative `(u, r)` inputs of one event.
pub fn link_inputs(
    model: &CorDgt,
    store: &EventStore,
    history: &InteractionHistory,
    e: &Event,
    seed: u64,
    cfg: &TrainConfig,
    td: &TdParams,
) -> Result<(EncoderInput, EncoderInput)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = negative_sample(e.src, e.dst, store.num_nodes(), &mut rng);
    let strat = cfg.strategy();
    let ctx = |node, role| {
        sample_contextual(
            store,
            node,
            e.ts,
            &cfg.fanouts,
            strat,
            mix_seed(&[seed, role]),
        )
    };
    let (cu, cv, cr) = (ctx(e.src, 1)?, ctx(e.dst, 2)?, ctx(r, 3)?);
    let opts = model.input_options();
    let pos = EncoderInput::for_link(store, history, &cu, &cv, td, opts)?;
    let neg = EncoderInput::for_link(store, history, &cu, &cr, td, opts)?;
    Ok((pos, neg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: String,
    pub ap: f64,
    pub auc: f64,
    pub loss: f64,
    pub wall_ms: u64,
}

impl MetricRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metric record serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub ap: f64,
    pub auc: f64,
    pub loss: f64,
    pub count: usize,
}

const EVAL_STREAM: u64 = 0xe7a1;

/// Scores every selected event against one fresh negative. The ledger starts
/// with all events before the window and advances batch by batch, after
/// each batch has been scored.
pub fn evaluate(
    model: &CorDgt,
    store: &EventStore,
    set: &EvalSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EvalResult> {
    if set.selected.is_empty() {
        return Err(CoreError::EmptySplit("evaluation"));
    }
    let td = cfg.td_params()?;
    let events = store.events();
    let mut history = InteractionHistory::new();
    history.commit(&events[..set.window.start])?;
    let mut scores = Vec::with_capacity(2 * set.selected.len());
    let mut labels = Vec::with_capacity(2 * set.selected.len());
    let mut loss = 0.0;
    let mut next = 0;
    for b in batches(events, set.window.clone(), cfg.batch_size) {
        while next < set.selected.len() && set.selected[next] < b.end {
            let i = set.selected[next];
            let (pos, neg) = link_inputs(
                model,
                store,
                &history,
                &events[i],
                mix_seed(&[seed, EVAL_STREAM, i as u64]),
                cfg,
                &td,
            )?;
            let (sp, sn) = (model.predict(&pos), model.predict(&neg));
            let clamp = |p: f64| p.clamp(crate::model::PROB_CLAMP, 1.0 - crate::model::PROB_CLAMP);
            loss += -clamp(sp).ln() - (1.0 - clamp(sn)).ln();
            scores.extend([sp, sn]);
            labels.extend([true, false]);
            next += 1;
        }
        history.commit(&events[b])?;
    }
    Ok(EvalResult {
        ap: average_precision(&scores, &labels)?,
        auc: roc_auc(&scores, &labels)?,
        loss: loss / set.selected.len() as f64,
        count: set.selected.len(),
    })
}

const DECOMPOSE_STREAM: u64 = 0xdec0;

/// Per-token contributions of the positive and negative inputs of the first
/// `limit` selected events, under the evaluation ledger protocol. Needs a
/// model with the linear head.
pub fn collect_contributions(
    model: &CorDgt,
    store: &EventStore,
    set: &EvalSet,
    cfg: &TrainConfig,
    limit: usize,
) -> Result<Vec<Contribution>> {
    let td = cfg.td_params()?;
    let events = store.events();
    let mut history = InteractionHistory::new();
    history.commit(&events[..set.window.start])?;
    let mut out = Vec::new();
    let mut next = 0;
    for b in batches(events, set.window.clone(), cfg.batch_size) {
        while next < set.selected.len().min(limit) && set.selected[next] < b.end {
            let i = set.selected[next];
            let seed = mix_seed(&[cfg.seed, DECOMPOSE_STREAM, i as u64]);
            let (pos, neg) = link_inputs(model, store, &history, &events[i], seed, cfg, &td)?;
            out.extend(decompose_scores(model, &pos)?.0);
            out.extend(decompose_scores(model, &neg)?.0);
            next += 1;
        }
        if next >= set.selected.len().min(limit) {
            break;
        }
        history.commit(&events[b])?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: CorDgt,
    pub plan: Plan,
    pub records: Vec<MetricRecord>,
    pub best_epoch: usize,
    pub best_val_ap: f64,
    /// Ledger after the last training epoch.
    pub train_history: InteractionHistory,
}

/// Runs one optimisation step over a batch and returns its mean loss.
#[allow(clippy::too_many_arguments)]
fn train_batch(
    model: &mut CorDgt,
    adam: &mut Adam,
    store: &EventStore,
    history: &InteractionHistory,
    batch: Range<usize>,
    epoch: usize,
    cfg: &TrainConfig,
    td: &TdParams,
) -> Result<(f64, Grads)> {
    let mut grads = model.params().zero_grads();
    let mut total = 0.0;
    for i in batch.clone() {
        let seed = mix_seed(&[cfg.seed, epoch as u64, i as u64]);
        let (pos, neg) = link_inputs(model, store, history, store.event(i), seed, cfg, td)?;
        let mut tape = Tape::new();
        let (loss, _, _) = model.link_loss(&mut tape, &pos, &neg);
        total += tape.scalar(loss);
        tape.backward(loss, &mut grads)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let mean = total / n;
    if mean.is_finite() && grads.all_finite() {
        adam.step(model.params_mut(), &grads);
    }
    Ok((mean, grads))
}

pub fn train(
    store: &EventStore,
    cfg: &TrainConfig,
    on_record: &mut dyn FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.model.node_dim = store.node_dim();
    cfg.model.edge_dim = store.edge_dim();
    cfg.validate()?;
    let plan = Plan::new(store, &cfg.split)?;
    let td = cfg.td_params()?;
    let mut model = CorDgt::new(cfg.model.clone())?;
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let tstore = plan.train_store(store);
    let tevents = tstore.events();
    let batch_list = batches(tevents, plan.train_window.clone(), cfg.batch_size);

    let mut records = Vec::new();
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut history = InteractionHistory::new();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        history.clear();
        let mut loss_sum = 0.0;
        for (bi, b) in batch_list.iter().enumerate() {
            if cfg.commit_order == CommitOrder::CommitBeforeForward {
                history.commit(&tevents[b.clone()])?;
            }
            let (loss, grads) = train_batch(
                &mut model,
                &mut adam,
                tstore,
                &history,
                b.clone(),
                epoch,
                &cfg,
                &td,
            )?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(CoreError::Divergence { epoch, batch: bi });
            }
            loss_sum += loss * b.len() as f64;
            if cfg.commit_order == CommitOrder::ForwardThenCommit {
                history.commit(&tevents[b.clone()])?;
            }
        }
        let train_loss = loss_sum / plan.train_window.len() as f64;
        let val = evaluate(&model, store, &plan.val, &cfg, cfg.seed)?;
        let wall_ms = started.elapsed().as_millis() as u64;
        let rec = MetricRecord {
            epoch,
            split: "train".into(),
            ap: f64::NAN,
            auc: f64::NAN,
            loss: train_loss,
            wall_ms,
        };
        on_record(&rec);
        records.push(rec);
        let rec = MetricRecord {
            epoch,
            split: "val".into(),
            ap: val.ap,
            auc: val.auc,
            loss: val.loss,
            wall_ms,
        };
        on_record(&rec);
        records.push(rec);

        if best.as_ref().is_none_or(|(_, ap, _)| val.ap > *ap) {
            best = Some((epoch, val.ap, model.params().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_ap, params) = best.expect("at least one epoch ran");
    model.params_mut().assign_from(&params)?;
    Ok(TrainOutcome {
        model,
        plan,
        records,
        best_epoch,
        best_val_ap,
        train_history: history,
    })
}

/// Outcome of replaying a window under a commit order while checking every
/// lookup for information from the batch being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeakReport {
    pub checked: usize,
    /// Lookups whose record reflected an event of the current batch.
    pub leaked: usize,
}

pub fn leak_probe(
    store: &EventStore,
    window: Range<usize>,
    batch_size: usize,
    order: CommitOrder,
) -> Result<LeakReport> {
    let events = store.events();
    let mut history = InteractionHistory::new();
    let mut report = LeakReport {
        checked: 0,
        leaked: 0,
    };
    for b in batches(events, window, batch_size) {
        let batch = &events[b.clone()];
        if order == CommitOrder::CommitBeforeForward {
            history.commit(batch)?;
        }
        let first = batch[0].ts;
        for e in batch {
            report.checked += 1;
            if history
                .lookup(e.src, e.dst)
                .is_some_and(|r| r.last_ts >= first)
            {
                report.leaked += 1;
            }
        }
        if order == CommitOrder::ForwardThenCommit {
            history.commit(batch)?;
        }
    }
    Ok(report)
}
