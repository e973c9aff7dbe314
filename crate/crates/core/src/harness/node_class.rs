//! Node classification on frozen encoder embeddings.

use std::sync::Arc;

use cordgt_numerics::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{batches, mix_seed, Plan, TrainConfig};
use crate::encoding::Mlp;
use crate::error::{CoreError, Result};
use crate::event_store::{EventStore, InteractionHistory};
use crate::metrics::roc_auc;
use crate::model::{CorDgt, EncoderInput, PROB_CLAMP};
use crate::sampler::sample_contextual;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeClassConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub batch_size: usize,
    /// Embed at most this many events, evenly spaced over the log.
    pub max_events: Option<usize>,
    pub seed: u64,
}

impl Default for NodeClassConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            hidden: 64,
            batch_size: 100,
            max_events: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeClassReport {
    pub auc: f64,
    pub train_count: usize,
    pub test_count: usize,
}

/// Embedding of the source node of each selected event at its timestamp,
/// using single-target encodings and the ledger as of the previous batch.
pub fn embed_events(
    model: &CorDgt,
    store: &EventStore,
    selected: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<Vec<f64>>> {
    let td = cfg.td_params()?;
    let events = store.events();
    let mut history = InteractionHistory::new();
    let mut out = Vec::with_capacity(selected.len());
    let mut next = 0;
    for b in batches(events, 0..events.len(), cfg.batch_size) {
        while next < selected.len() && selected[next] < b.end {
            let e = &events[selected[next]];
            let seed = mix_seed(&[cfg.seed, 0x0de, e.idx as u64]);
            let ctx = sample_contextual(store, e.src, e.ts, &cfg.fanouts, cfg.strategy(), seed)?;
            let input = EncoderInput::for_node(store, &history, &ctx, &td, model.input_options())?;
            out.push(model.embed_node(&input));
            next += 1;
        }
        if next == selected.len() {
            break;
        }
        history.commit(&events[b])?;
    }
    Ok(out)
}

fn check_labels(labels: &[f64], part: &str) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l > 0.5).count();
    if pos == 0 || pos == labels.len() {
        return Err(CoreError::DegenerateLabels(format!(
            "{part} events carry a single label value ({pos} of {} positive)",
            labels.len()
        )));
    }
    Ok(())
}

/// Trains a two-layer classifier head on embeddings from the frozen model
/// over the training range and reports its AUC on the remaining events.
pub fn node_classify(
    model: &CorDgt,
    store: &EventStore,
    plan: &Plan,
    cfg: &TrainConfig,
    nc: &NodeClassConfig,
) -> Result<NodeClassReport> {
    if !store.has_labels() {
        return Err(CoreError::LabelsMissing);
    }
    let m = store.num_events();
    let stride = nc.max_events.map_or(1, |k| m.div_ceil(k.max(1)));
    let selected: Vec<usize> = (0..m).step_by(stride).collect();
    let labels: Vec<f64> = selected.iter().map(|&i| store.event(i).label).collect();
    let split_at = selected.partition_point(|&i| i < plan.splits.train.end);
    check_labels(&labels[..split_at], "training")?;
    check_labels(&labels[split_at..], "held-out")?;

    let z = embed_events(model, store, &selected, cfg)?;
    let d = z[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(nc.seed);
    let mut params = ParamStore::new();
    let head = Mlp::register(&mut params, "clf", d, nc.hidden, 1, &mut rng);
    let mut adam = Adam::new(
        &params,
        AdamConfig {
            lr: nc.lr,
            ..AdamConfig::default()
        },
    );
    let rows = |idx: &[usize]| {
        let mut t = Tensor::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            t.row_mut(r).copy_from_slice(&z[i]);
        }
        t
    };
    let mut order: Vec<usize> = (0..split_at).collect();
    for _ in 0..nc.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(nc.batch_size) {
            let mut tape = Tape::new();
            let x = tape.constant(rows(chunk));
            let logit = head.forward(&mut tape, &params, x);
            let p = tape.sigmoid(logit);
            let y: Vec<f64> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = tape.bce(p, Arc::new(y), PROB_CLAMP);
            let mut g = params.zero_grads();
            tape.backward(loss, &mut g)?;
            adam.step(&mut params, &g);
        }
    }
    let test: Vec<usize> = (split_at..selected.len()).collect();
    let mut tape = Tape::new();
    let x = tape.constant(rows(&test));
    let logit = head.forward(&mut tape, &params, x);
    let scores = tape.value(logit).data().to_vec();
    let truth: Vec<bool> = test.iter().map(|&i| labels[i] > 0.5).collect();
    Ok(NodeClassReport {
        auc: roc_auc(&scores, &truth)?,
        train_count: split_at,
        test_count: test.len(),
    })
}
