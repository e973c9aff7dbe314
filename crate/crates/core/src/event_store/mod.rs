//! The immutable, time-sorted interaction log and its per-node temporal index.

mod history;
mod io;

pub use history::{InteractionHistory, PairRecord};
pub use io::{load_cache, read_jodie_csv, save_cache, CsvOptions};

use crate::error::{CoreError, Result};

pub type NodeId = u32;

/// One input interaction, before sorting and origin shifting.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub src: u64,
    pub dst: u64,
    pub ts: f64,
    pub label: f64,
    pub feat: Vec<f64>,
}

impl RawEvent {
    pub fn new(src: u64, dst: u64, ts: f64) -> Self {
        Self {
            src,
            dst,
            ts,
            label: 0.0,
            feat: Vec::new(),
        }
    }
}

/// An interaction in the store. `idx` is its position in time order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub ts: f64,
    pub idx: usize,
    pub label: f64,
}

/// Row-major `N × d_n` node features; `dim == 0` means featureless.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NodeFeatures {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl NodeFeatures {
    pub fn new(dim: usize, values: Vec<f64>) -> Self {
        Self { dim, values }
    }
}

/// One entry of a node's temporal adjacency list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjEntry {
    pub neighbor: NodeId,
    pub ts: f64,
    pub event_idx: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStore {
    num_nodes: usize,
    events: Vec<Event>,
    edge_dim: usize,
    edge_feats: Vec<f64>,
    node_feats: NodeFeatures,
    // CSR layout: adjacency of node u is entries[offsets[u]..offsets[u + 1]].
    offsets: Vec<usize>,
    entries: Vec<AdjEntry>,
    time_offset: f64,
    has_labels: bool,
}

impl EventStore {
    /// Builds a store from raw events: validates ids and widths, sorts by
    /// `(ts, input order)`, shifts the origin so the earliest event is at 0,
    /// and indexes both endpoints of every event.
    pub fn ingest(
        events: Vec<RawEvent>,
        num_nodes: usize,
        node_feats: Option<NodeFeatures>,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(CoreError::EmptyLog);
        }
        let edge_dim = events[0].feat.len();
        for (i, e) in events.iter().enumerate() {
            if !e.ts.is_finite() {
                return Err(CoreError::BadTimestamp { index: i });
            }
            for n in [e.src, e.dst] {
                if n >= num_nodes as u64 {
                    return Err(CoreError::NodeOutOfRange { node: n, num_nodes });
                }
            }
            if e.feat.len() != edge_dim {
                return Err(CoreError::FeatureWidth {
                    what: "edge feature",
                    expected: edge_dim,
                    found: e.feat.len(),
                });
            }
        }
        let node_feats = node_feats.unwrap_or_default();
        if node_feats.values.len() != num_nodes * node_feats.dim {
            return Err(CoreError::FeatureWidth {
                what: "node feature matrix",
                expected: num_nodes * node_feats.dim,
                found: node_feats.values.len(),
            });
        }

        let mut order: Vec<usize> = (0..events.len()).collect();
        order.sort_by(|&a, &b| events[a].ts.total_cmp(&events[b].ts).then(a.cmp(&b)));
        let time_offset = events[order[0]].ts;
        let has_labels = events.iter().any(|e| e.label != 0.0);

        let mut sorted = Vec::with_capacity(events.len());
        let mut edge_feats = Vec::with_capacity(events.len() * edge_dim);
        for (pos, &i) in order.iter().enumerate() {
            let e = &events[i];
            sorted.push(Event {
                src: e.src as NodeId,
                dst: e.dst as NodeId,
                ts: e.ts - time_offset,
                idx: pos,
                label: e.label,
            });
            edge_feats.extend_from_slice(&e.feat);
        }
        Ok(Self::assemble(
            num_nodes,
            sorted,
            edge_dim,
            edge_feats,
            node_feats,
            time_offset,
            has_labels,
        ))
    }

    /// Builds the index over events that are already sorted and shifted.
    pub(crate) fn assemble(
        num_nodes: usize,
        events: Vec<Event>,
        edge_dim: usize,
        edge_feats: Vec<f64>,
        node_feats: NodeFeatures,
        time_offset: f64,
        has_labels: bool,
    ) -> Self {
        let mut degree = vec![0usize; num_nodes + 1];
        for e in &events {
            degree[e.src as usize] += 1;
            if e.dst != e.src {
                degree[e.dst as usize] += 1;
            }
        }
        let mut offsets = vec![0usize; num_nodes + 1];
        for u in 0..num_nodes {
            offsets[u + 1] = offsets[u] + degree[u];
        }
        let mut fill = offsets.clone();
        let mut entries = vec![
            AdjEntry {
                neighbor: 0,
                ts: 0.0,
                event_idx: 0
            };
            offsets[num_nodes]
        ];
        // Events are visited in time order, so each list comes out sorted.
        for e in &events {
            entries[fill[e.src as usize]] = AdjEntry {
                neighbor: e.dst,
                ts: e.ts,
                event_idx: e.idx as u32,
            };
            fill[e.src as usize] += 1;
            if e.dst != e.src {
                entries[fill[e.dst as usize]] = AdjEntry {
                    neighbor: e.src,
                    ts: e.ts,
                    event_idx: e.idx as u32,
                };
                fill[e.dst as usize] += 1;
            }
        }
        Self {
            num_nodes,
            events,
            edge_dim,
            edge_feats,
            node_feats,
            offsets,
            entries,
            time_offset,
            has_labels,
        }
    }

    /// A store over the events accepted by `keep`, on the same time axis and
    /// node set. Events are renumbered densely.
    pub fn filtered(&self, keep: impl Fn(&Event) -> bool) -> Result<Self> {
        let mut events = Vec::new();
        let mut edge_feats = Vec::new();
        for e in self.events.iter().filter(|e| keep(e)) {
            events.push(Event {
                idx: events.len(),
                ..*e
            });
            edge_feats.extend_from_slice(self.edge_feat(e.idx));
        }
        if events.is_empty() {
            return Err(CoreError::EmptyLog);
        }
        Ok(Self::assemble(
            self.num_nodes,
            events,
            self.edge_dim,
            edge_feats,
            self.node_feats.clone(),
            self.time_offset,
            self.has_labels,
        ))
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_events(&self) -> usize {
        self.events.len()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, idx: usize) -> &Event {
        &self.events[idx]
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn node_dim(&self) -> usize {
        self.node_feats.dim
    }

    pub fn edge_feat(&self, idx: usize) -> &[f64] {
        &self.edge_feats[idx * self.edge_dim..(idx + 1) * self.edge_dim]
    }

    pub fn node_feat(&self, u: NodeId) -> &[f64] {
        let d = self.node_feats.dim;
        &self.node_feats.values[u as usize * d..(u as usize + 1) * d]
    }

    pub fn node_features(&self) -> &NodeFeatures {
        &self.node_feats
    }

    pub(crate) fn edge_feats_flat(&self) -> &[f64] {
        &self.edge_feats
    }

    /// The original timestamp of the shifted origin.
    pub fn time_offset(&self) -> f64 {
        self.time_offset
    }

    pub fn has_labels(&self) -> bool {
        self.has_labels
    }

    /// Timestamp of the latest event on the shifted axis.
    pub fn duration(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.ts)
    }

    /// All adjacency entries of `u`, in time order.
    pub fn adjacency(&self, u: NodeId) -> &[AdjEntry] {
        let u = u as usize;
        &self.entries[self.offsets[u]..self.offsets[u + 1]]
    }

    /// Adjacency entries of `u` strictly before `t`, found by binary search.
    pub fn neighbors_before(&self, u: NodeId, t: f64) -> &[AdjEntry] {
        let adj = self.adjacency(u);
        let cut = adj.partition_point(|e| e.ts < t);
        &adj[..cut]
    }

    /// Number of distinct nodes that take part in at least one event.
    pub fn active_nodes(&self) -> usize {
        (0..self.num_nodes)
            .filter(|&u| self.offsets[u + 1] > self.offsets[u])
            .count()
    }

    /// Average interaction intensity `2|E| / (|V| T)` over active nodes.
    pub fn average_intensity(&self) -> f64 {
        let t = self.duration();
        if t <= 0.0 {
            return f64::INFINITY;
        }
        2.0 * self.num_events() as f64 / (self.active_nodes() as f64 * t)
    }
}
