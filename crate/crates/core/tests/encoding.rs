use cordgt_core::encoding::{enc, proximity_to, stpe_c, EncConfig, StpeMask, StpeParams};
use cordgt_core::event_store::{EventStore, InteractionHistory, RawEvent};
use cordgt_core::proximity::{HopIndex, TdParams};
use cordgt_core::sampler::{sample_contextual, SamplingStrategy};
use cordgt_numerics::gradcheck::check;
use cordgt_numerics::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sentinel_code_differs_from_every_finite_distance() {
    let cfg = EncConfig::default();
    let p = TdParams::new(1.0, 10.0, 2).unwrap();
    let top = enc(p.td_max, &cfg).unwrap();
    for i in 0..1000 {
        let td = (p.alpha + p.beta) * i as f64 / 1000.0;
        let e = enc(td, &cfg).unwrap();
        let d2: f64 = e.iter().zip(&top).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(d2.sqrt() > 0.0, "td {td} collides with the sentinel");
    }
}

#[test]
fn unitary_gradient_matches_finite_differences() {
    let cfg = EncConfig::new(4, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let params = StpeParams::register(&mut store, &cfg, &mut rng);
    // nonzero biases keep hidden units away from the ReLU kink
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with(".b1") {
            let n = store.get(id).cols();
            *store.get_mut(id) = Tensor::uniform(1, n, 0.2, 0.5, &mut rng);
        }
    }
    let td = [0.0, 0.37, 1.1, 11.0];
    let sd = [0.0, 1.0, 2.0, 5.0];
    let weights = Tensor::uniform(4, 8, -1.0, 1.0, &mut rng);
    let report = check(
        &store,
        |t, s| {
            let out = params.unitary(t, s, &cfg, &td, &sd, StpeMask::default());
            let w = t.constant(weights.clone());
            let m = t.mul(out, w);
            t.mean(m)
        },
        1e-3,
        None,
    );
    assert!(report.max_rel_err <= 1e-3, "{}", report.max_rel_err);
}

fn store() -> EventStore {
    let raw = vec![
        RawEvent::new(0, 1, 1.0),
        RawEvent::new(1, 2, 2.0),
        RawEvent::new(0, 2, 3.0),
        RawEvent::new(0, 3, 4.0),
    ];
    EventStore::ingest(raw, 5, None).unwrap()
}

#[test]
fn correlated_encoding_is_symmetric_and_uses_sentinels() {
    let s = store();
    let mut hist = InteractionHistory::new();
    hist.commit(s.events()).unwrap();
    let td = TdParams::new(1.0, 10.0, 1).unwrap();
    let cfg = EncConfig::new(6, 4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ps = ParamStore::new();
    let params = StpeParams::register(&mut ps, &cfg, &mut rng);
    let cu = sample_contextual(&s, 0, 6.0, &[3], SamplingStrategy::Uniform, 4).unwrap();
    let cv = sample_contextual(&s, 4, 6.0, &[3], SamplingStrategy::Uniform, 5).unwrap();
    let (hu, hv) = (HopIndex::new(&cu, td.sd_inf), HopIndex::new(&cv, td.sd_inf));
    for tok in &cu.tokens {
        let a = stpe_c(
            tok, &hu, &hv, &hu, &hist, 6.0, &td, &params, &ps, &cfg, false,
        )
        .unwrap();
        let b = stpe_c(
            tok, &hv, &hu, &hu, &hist, 6.0, &td, &params, &ps, &cfg, false,
        )
        .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
    // the root u toward itself, then toward a partner it never met
    let root = &cu.tokens[0];
    let pu = proximity_to(root, &hu, &hist, 6.0, &td).unwrap();
    let pv = proximity_to(root, &hv, &hist, 6.0, &td).unwrap();
    assert_eq!((pu.td, pu.sd), (0.0, 0.0));
    assert_eq!((pv.td, pv.sd), (td.td_max, f64::from(td.sd_inf)));
    let unitary = stpe_c(
        root, &hu, &hv, &hu, &hist, 6.0, &td, &params, &ps, &cfg, true,
    )
    .unwrap();
    assert_eq!(unitary.len(), 8);
}
