//! Synthetic logs in which every pair interacts as a homogeneous Poisson
//! process with a known intensity.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::event_store::{EventStore, NodeId, RawEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairIntensity {
    pub u: NodeId,
    pub v: NodeId,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub pairs: Vec<PairIntensity>,
    pub duration: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(CoreError::InvalidConfig(
                "synthetic duration must be positive".into(),
            ));
        }
        for p in &self.pairs {
            if !(p.rate > 0.0) || p.u as usize >= self.num_nodes || p.v as usize >= self.num_nodes {
                return Err(CoreError::InvalidConfig(format!(
                    "bad synthetic pair ({}, {}) with rate {}",
                    p.u, p.v, p.rate
                )));
            }
        }
        Ok(())
    }
}

/// Arrival times of a homogeneous Poisson process with `rate` on `[0, duration]`.
pub fn poisson_arrivals<R: Rng + ?Sized>(rate: f64, duration: f64, rng: &mut R) -> Vec<f64> {
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += exp.sample(rng);
        if t > duration {
            return out;
        }
        out.push(t);
    }
}

/// Draws every pair's arrivals independently and merges them in time order.
/// Each event's label is the `labels` entry of its source node (0 if none).
pub fn synth_generate(
    spec: &SyntheticSpec,
    labels: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<RawEvent>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    for p in &spec.pairs {
        for t in poisson_arrivals(p.rate, spec.duration, &mut rng) {
            // orientation of each interaction is random
            let (s, d) = if rng.gen_bool(0.5) {
                (p.u, p.v)
            } else {
                (p.v, p.u)
            };
            let mut e = RawEvent::new(u64::from(s), u64::from(d), t);
            e.label = labels.map_or(0.0, |l| l[s as usize]);
            events.push(e);
        }
    }
    events.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    Ok(events)
}

/// Shape of the planted-intensity benchmark: a background of random pairs
/// and a few disjoint pairs interacting `ratio` times faster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub nodes: usize,
    /// Background partners drawn per node (partnerships are symmetric, so
    /// each node ends up with about twice as many).
    pub partners_per_node: usize,
    pub high_pairs: usize,
    pub ratio: f64,
    pub background_rate: f64,
    pub target_events: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            nodes: 200,
            partners_per_node: 10,
            high_pairs: 20,
            ratio: 10.0,
            background_rate: 1.0,
            target_events: 20_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub spec: SyntheticSpec,
    /// 1 for nodes in a high-intensity pair.
    pub node_labels: Vec<f64>,
    pub events: Vec<RawEvent>,
}

impl PlantedData {
    pub fn store(&self) -> Result<EventStore> {
        EventStore::ingest(self.events.clone(), self.spec.num_nodes, None)
    }
}

pub fn planted(p: &PlantedSpec, seed: u64) -> Result<PlantedData> {
    if p.nodes < 2 * p.high_pairs.max(2) || p.partners_per_node >= p.nodes {
        return Err(CoreError::InvalidConfig(
            "planted spec has too few nodes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_9a11);
    let mut rates: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    let n = p.nodes as NodeId;
    for u in 0..n {
        let mut added = 0;
        while added < p.partners_per_node {
            let v = rng.gen_range(0..n);
            if v == u {
                continue;
            }
            rates.insert((u.min(v), u.max(v)), p.background_rate);
            added += 1;
        }
    }
    let mut nodes: Vec<NodeId> = (0..n).collect();
    nodes.shuffle(&mut rng);
    let mut node_labels = vec![0.0; p.nodes];
    for pair in nodes[..2 * p.high_pairs].chunks(2) {
        let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
        rates.insert((a, b), p.ratio * p.background_rate);
        node_labels[a as usize] = 1.0;
        node_labels[b as usize] = 1.0;
    }
    let total_rate: f64 = rates.values().sum();
    let spec = SyntheticSpec {
        num_nodes: p.nodes,
        pairs: rates
            .into_iter()
            .map(|((u, v), rate)| PairIntensity { u, v, rate })
            .collect(),
        duration: p.target_events as f64 / total_rate,
    };
    let events = synth_generate(&spec, Some(&node_labels), seed)?;
    Ok(PlantedData {
        spec,
        node_labels,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_gives_empty_log() {
        let spec = SyntheticSpec {
            num_nodes: 3,
            pairs: vec![],
            duration: 10.0,
        };
        assert!(synth_generate(&spec, None, 0).unwrap().is_empty());
    }

    #[test]
    fn planted_shape() {
        let d = planted(&PlantedSpec::default(), 1).unwrap();
        let n = d.events.len() as f64;
        assert!((n - 20_000.0).abs() < 1_000.0, "{n} events");
        assert_eq!(d.node_labels.iter().filter(|&&l| l == 1.0).count(), 40);
        assert!(d.events.windows(2).all(|w| w[0].ts <= w[1].ts));
    }
}
