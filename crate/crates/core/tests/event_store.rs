use cordgt_core::event_store::{
    load_cache, read_jodie_csv, save_cache, CsvOptions, EventStore, InteractionHistory, RawEvent,
};
use cordgt_core::CoreError;
use proptest::prelude::*;
use std::collections::HashMap;

fn arb_log() -> impl Strategy<Value = (usize, Vec<(u64, u64, f64)>)> {
    (2usize..12).prop_flat_map(|n| {
        let ev = (0..n as u64, 0..n as u64, (0u32..40).prop_map(f64::from));
        (Just(n), prop::collection::vec(ev, 1..120))
    })
}

fn build(n: usize, evs: &[(u64, u64, f64)]) -> EventStore {
    let raw = evs
        .iter()
        .map(|&(s, d, t)| RawEvent::new(s, d, t))
        .collect();
    EventStore::ingest(raw, n, None).unwrap()
}

proptest! {
    #[test]
    fn neighbors_before_matches_scan((n, evs) in arb_log(), t in 0.0f64..45.0) {
        let store = build(n, &evs);
        for u in 0..n as u32 {
            let got: Vec<(u32, f64, u32)> = store
                .neighbors_before(u, t)
                .iter()
                .map(|e| (e.neighbor, e.ts, e.event_idx))
                .collect();
            let mut want = Vec::new();
            for e in store.events() {
                if e.ts < t && (e.src == u || e.dst == u) {
                    let other = if e.src == u { e.dst } else { e.src };
                    want.push((other, e.ts, e.idx as u32));
                }
            }
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn committed_prefix_matches_pair_stats((n, evs) in arb_log(), cut in 0usize..120, chunk in 1usize..20) {
        let store = build(n, &evs);
        let events = store.events();
        let cut = cut.min(events.len());
        let mut hist = InteractionHistory::new();
        for c in events[..cut].chunks(chunk) {
            hist.commit(c).unwrap();
        }
        let mut want: HashMap<(u32, u32), (u32, f64)> = HashMap::new();
        for e in &events[..cut] {
            let k = (e.src.min(e.dst), e.src.max(e.dst));
            let r = want.entry(k).or_insert((0, f64::MIN));
            r.0 += 1;
            r.1 = r.1.max(e.ts);
        }
        prop_assert_eq!(hist.len(), want.len());
        prop_assert!(hist.len() <= cut);
        for (&(a, b), &(c, t)) in &want {
            let r = hist.lookup(b, a).unwrap();
            prop_assert_eq!((r.count, r.last_ts), (c, t));
        }
    }

    #[test]
    fn sorted_and_shifted((n, evs) in arb_log()) {
        let store = build(n, &evs);
        let ev = store.events();
        prop_assert_eq!(ev[0].ts, 0.0);
        prop_assert!(ev.windows(2).all(|w| w[0].ts <= w[1].ts && w[0].idx < w[1].idx));
        for u in 0..n as u32 {
            prop_assert!(store.adjacency(u).windows(2).all(|w| w[0].ts <= w[1].ts));
        }
    }
}

#[test]
fn spec_neighbor_example() {
    let s = build(3, &[(0, 1, 5.0), (0, 2, 3.0), (1, 2, 0.0)]);
    let n: Vec<_> = s
        .neighbors_before(0, 6.0)
        .iter()
        .map(|e| (e.neighbor, e.ts))
        .collect();
    assert_eq!(n, vec![(2, 3.0), (1, 5.0)]);
}

#[test]
fn regression_rejects_whole_batch() {
    let s = build(3, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]);
    let mut h = InteractionHistory::new();
    h.commit(&s.events()[2..]).unwrap();
    let err = h.commit(&s.events()[..2]).unwrap_err();
    assert!(matches!(err, CoreError::OutOfOrderCommit { .. }));
    assert_eq!(h.len(), 1);
}

#[test]
fn csv_then_cache_round_trip() {
    let csv = "user,item,ts,state_label,f1,f2\n0,0,10,0,0.5,1.5\n1,0,12,1,0.1,0.2\n0,1,11,0,-1,2\n";
    let (raw, n) = read_jodie_csv(csv.as_bytes(), CsvOptions { bipartite: true }).unwrap();
    let store = EventStore::ingest(raw, n, None).unwrap();
    assert_eq!(store.num_nodes(), 4);
    assert_eq!(store.edge_dim(), 2);
    assert!(store.has_labels());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.bin");
    save_cache(&store, std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_cache(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, store);
}
