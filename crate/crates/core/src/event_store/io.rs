//! JODIE-layout CSV ingestion and the binary store cache.

use std::io::{Read, Write};

use super::{Event, EventStore, NodeFeatures, RawEvent};
use crate::error::{CoreError, Result};

const CACHE_MAGIC: &[u8; 8] = b"CDGTSTOR";
const CACHE_VERSION: u32 = 1;
const COLUMNS: [&str; 4] = ["src", "dst", "ts", "state_label"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Offset destination ids by `max(src) + 1`, for logs where the two
    /// endpoint columns number disjoint node sets (user/item).
    pub bipartite: bool,
}

fn parse_id(field: &str, column: &'static str, line: u64) -> Result<u64> {
    let f = field.trim();
    f.parse::<u64>()
        .ok()
        .or_else(|| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as u64)
        })
        .ok_or_else(|| CoreError::Parse {
            column,
            value: field.to_string(),
            line,
        })
}

fn parse_real(field: &str, column: &'static str, line: u64) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| CoreError::Parse {
        column,
        value: field.to_string(),
        line,
    })
}

/// Reads `src,dst,ts,state_label,f1,…,f_de` rows after a header line.
/// Returns the raw events and the node count implied by the largest id.
pub fn read_jodie_csv<R: Read>(reader: R, opts: CsvOptions) -> Result<(Vec<RawEvent>, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let mut events = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i as u64 + 2, |p| p.line());
        if let Some(missing) = COLUMNS.get(rec.len()) {
            return Err(CoreError::MissingColumn {
                column: missing,
                line,
            });
        }
        let src = parse_id(&rec[0], COLUMNS[0], line)?;
        let dst = parse_id(&rec[1], COLUMNS[1], line)?;
        let ts = parse_real(&rec[2], COLUMNS[2], line)?;
        let label = parse_real(&rec[3], COLUMNS[3], line)?;
        let feat = rec
            .iter()
            .skip(4)
            .map(|f| parse_real(f, "feature", line))
            .collect::<Result<Vec<_>>>()?;
        events.push(RawEvent {
            src,
            dst,
            ts,
            label,
            feat,
        });
    }
    if events.is_empty() {
        return Err(CoreError::EmptyLog);
    }
    if opts.bipartite {
        let shift = events.iter().map(|e| e.src).max().unwrap_or(0) + 1;
        for e in &mut events {
            e.dst += shift;
        }
    }
    let num_nodes = events.iter().map(|e| e.src.max(e.dst)).max().unwrap_or(0) as usize + 1;
    Ok((events, num_nodes))
}

/// Writes the sorted store: magic, version, N, M, d_e, d_n, the time
/// offset and label flag, then flat little-endian arrays
/// (src u32[M], dst u32[M], ts f64[M], label f64[M], edge f64[M·d_e], node f64[N·d_n]).
pub fn save_cache<W: Write>(store: &EventStore, mut w: W) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    for v in [
        store.num_nodes() as u64,
        store.num_events() as u64,
        store.edge_dim() as u64,
        store.node_dim() as u64,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&store.time_offset().to_le_bytes())?;
    w.write_all(&[u8::from(store.has_labels())])?;
    for e in store.events() {
        w.write_all(&e.src.to_le_bytes())?;
    }
    for e in store.events() {
        w.write_all(&e.dst.to_le_bytes())?;
    }
    for e in store.events() {
        w.write_all(&e.ts.to_le_bytes())?;
    }
    for e in store.events() {
        w.write_all(&e.label.to_le_bytes())?;
    }
    for v in store.edge_feats_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &store.node_features().values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| Ok(f64::from_le_bytes(read_array::<8, _>(r)?)))
        .collect()
}

pub fn load_cache<R: Read>(mut r: R) -> Result<EventStore> {
    if &read_array::<8, _>(&mut r)? != CACHE_MAGIC {
        return Err(CoreError::BadCache("magic bytes do not match".into()));
    }
    let version = u32::from_le_bytes(read_array::<4, _>(&mut r)?);
    if version != CACHE_VERSION {
        return Err(CoreError::BadCache(format!(
            "unsupported version {version}"
        )));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u64::from_le_bytes(read_array::<8, _>(&mut r)?) as usize;
    }
    let [n, m, d_e, d_n] = dims;
    if n > u32::MAX as usize || m > 1 << 34 || d_e > 1 << 16 || d_n > 1 << 16 {
        return Err(CoreError::BadCache("implausible header dimensions".into()));
    }
    let time_offset = f64::from_le_bytes(read_array::<8, _>(&mut r)?);
    let has_labels = read_array::<1, _>(&mut r)?[0] != 0;
    let read_ids = |r: &mut R| -> Result<Vec<u32>> {
        (0..m)
            .map(|_| Ok(u32::from_le_bytes(read_array::<4, _>(r)?)))
            .collect()
    };
    let src = read_ids(&mut r)?;
    let dst = read_ids(&mut r)?;
    let ts = read_f64s(&mut r, m)?;
    let labels = read_f64s(&mut r, m)?;
    let edge_feats = read_f64s(&mut r, m * d_e)?;
    let node_vals = read_f64s(&mut r, n * d_n)?;
    let mut events = Vec::with_capacity(m);
    for i in 0..m {
        if src[i] as usize >= n || dst[i] as usize >= n {
            return Err(CoreError::BadCache(format!(
                "event {i} has an out-of-range node"
            )));
        }
        if i > 0 && ts[i] < ts[i - 1] {
            return Err(CoreError::BadCache(format!(
                "event {i} is out of time order"
            )));
        }
        events.push(Event {
            src: src[i],
            dst: dst[i],
            ts: ts[i],
            idx: i,
            label: labels[i],
        });
    }
    Ok(EventStore::assemble(
        n,
        events,
        d_e,
        edge_feats,
        NodeFeatures::new(d_n, node_vals),
        time_offset,
        has_labels,
    ))
}
