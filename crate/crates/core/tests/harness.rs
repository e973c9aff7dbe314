use std::collections::{BTreeMap, HashSet};

use cordgt_core::encoding::EncConfig;
use cordgt_core::event_store::{EventStore, RawEvent};
use cordgt_core::harness::{
    evaluate, inductive_filter, leak_probe, negative_sample, node_classify, planted,
    poisson_arrivals, split_times, train, CommitOrder, NodeClassConfig, Plan, PlantedSpec,
    SplitSpec, TrainConfig,
};
use cordgt_core::metrics::{average_precision, roc_auc};
use cordgt_core::model::ModelConfig;
use cordgt_core::CoreError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn negatives_are_uniform_over_the_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0usize; 100];
    let draws = 4_000_000;
    for _ in 0..draws {
        counts[negative_sample(3, 71, 100, &mut rng) as usize] += 1;
    }
    assert_eq!(counts[3] + counts[71], 0);
    let expect = draws as f64 / 98.0;
    for (w, &c) in counts.iter().enumerate() {
        if w != 3 && w != 71 {
            assert!((c as f64 / expect - 1.0).abs() <= 0.02, "node {w}: {c}");
        }
    }
}

#[test]
fn poisson_counts_and_gaps() {
    let within = (0..100u64)
        .filter(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let n = poisson_arrivals(10.0, 100.0, &mut rng).len();
            (900..=1100).contains(&n)
        })
        .count();
    assert!(within >= 95, "{within}/100");

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ts = poisson_arrivals(2.0, 5000.0, &mut rng);
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    let gaps: Vec<f64> = std::iter::once(ts[0])
        .chain(ts.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean / 0.5 - 1.0).abs() <= 0.1, "mean gap {mean}");
}

fn brute_ap(s: &[f64], l: &[bool]) -> f64 {
    let pos = l.iter().filter(|&&x| x).count() as f64;
    let mut total = 0.0;
    for (i, _) in l.iter().enumerate().filter(|(_, &x)| x) {
        let above: Vec<usize> = (0..s.len()).filter(|&j| s[j] >= s[i]).collect();
        let tp = above.iter().filter(|&&j| l[j]).count() as f64;
        total += tp / above.len() as f64;
    }
    total / pos
}

fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in (0..s.len()).filter(|&i| l[i]) {
        for j in (0..s.len()).filter(|&j| !l[j]) {
            pairs += 1.0;
            wins += if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..100 {
        let n = rng.gen_range(2..60);
        // coarse scores on half the instances to force ties
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.gen();
                if k % 2 == 0 {
                    (x * 8.0).floor() / 8.0
                } else {
                    x
                }
            })
            .collect();
        let mut l: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        l[0] = true;
        l[1] = false;
        assert!((average_precision(&s, &l).unwrap() - brute_ap(&s, &l)).abs() <= 1e-12);
        assert!((roc_auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() <= 1e-12);
    }
}

fn store_of(evs: &[(u64, u64, f64)], n: usize) -> EventStore {
    let raw = evs
        .iter()
        .map(|&(s, d, t)| RawEvent::new(s, d, t))
        .collect();
    EventStore::ingest(raw, n, None).unwrap()
}

#[test]
fn inductive_filter_matches_hand_selection() {
    let evs = [
        (0, 1, 0.0),
        (1, 2, 1.0),
        (2, 3, 2.0),
        (3, 4, 3.0),
        (0, 4, 4.0),
        (1, 3, 5.0),
        (2, 4, 6.0),
        (0, 2, 7.0),
        (1, 4, 8.0),
        (3, 0, 9.0),
    ];
    let store = store_of(&evs, 5);
    let ts: Vec<f64> = store.events().iter().map(|e| e.ts).collect();
    let splits = split_times(&ts, 9.0, &SplitSpec::default()).unwrap();
    let masked: HashSet<u32> = [3].into_iter().collect();
    let f = inductive_filter(store.events(), &splits, &masked);
    let mut brute = (vec![], vec![], vec![]);
    for (i, e) in store.events().iter().enumerate() {
        let hit = e.src == 3 || e.dst == 3;
        if splits.train.contains(&i) && !hit {
            brute.0.push(i);
        } else if splits.val.contains(&i) && hit {
            brute.1.push(i);
        } else if splits.test.contains(&i) && hit {
            brute.2.push(i);
        }
    }
    assert_eq!((f.train, f.val, f.test), brute);
}

fn small_planted() -> EventStore {
    let spec = PlantedSpec {
        nodes: 40,
        partners_per_node: 3,
        high_pairs: 4,
        target_events: 1200,
        ..PlantedSpec::default()
    };
    planted(&spec, 3).unwrap().store().unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            layers: 1,
            heads: 2,
            hidden: 16,
            head_dim: 8,
            enc: EncConfig::new(4, 8, 8),
            ..ModelConfig::default()
        },
        fanouts: vec![4, 1],
        batch_size: 50,
        epochs: 3,
        patience: 5,
        lr: 1e-3,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn small_training_run() {
    let store = small_planted();
    let cfg = small_config();
    let mut seen = Vec::new();
    let out = train(&store, &cfg, &mut |r| seen.push(r.to_json())).unwrap();
    let kept: Vec<String> = out.records.iter().map(|r| r.to_json()).collect();
    assert_eq!(seen, kept);
    let losses: Vec<f64> = out
        .records
        .iter()
        .filter(|r| r.split == "train")
        .map(|r| r.loss)
        .collect();
    assert_eq!(losses.len(), 3);
    assert!(losses[2] < losses[0], "{losses:?}");
    assert!(out.best_val_ap > 0.7, "{}", out.best_val_ap);

    // the final ledger is exactly the per-pair count and last time of the training window
    let mut brute: BTreeMap<(u32, u32), (u32, f64)> = BTreeMap::new();
    for e in &store.events()[out.plan.train_window.clone()] {
        let k = (e.src.min(e.dst), e.src.max(e.dst));
        let r = brute.entry(k).or_insert((0, 0.0));
        r.0 += 1;
        r.1 = e.ts;
    }
    let snap = out.train_history.snapshot();
    assert_eq!(snap.len(), brute.len());
    for ((k, rec), (bk, (c, t))) in snap.iter().zip(&brute) {
        assert_eq!((k, rec.count, rec.last_ts), (bk, *c, *t));
    }

    // the restored parameters reproduce the best validation score
    let val = evaluate(&out.model, &store, &out.plan.val, &cfg, cfg.seed).unwrap();
    assert_eq!(val.ap, out.best_val_ap);
}

#[test]
fn training_is_deterministic() {
    let store = small_planted();
    let cfg = TrainConfig {
        epochs: 1,
        ..small_config()
    };
    let a = train(&store, &cfg, &mut |_| {}).unwrap();
    let b = train(&store, &cfg, &mut |_| {}).unwrap();
    for id in a.model.params().ids() {
        let (x, y) = (a.model.params().get(id), b.model.params().get(id));
        assert!(x
            .data()
            .iter()
            .zip(y.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(a.records.len(), b.records.len());
    for (r, s) in a.records.iter().zip(&b.records) {
        assert_eq!(r.loss.to_bits(), s.loss.to_bits());
    }
}

#[test]
fn commit_order_is_observable() {
    let store = small_planted();
    let n = store.num_events();
    let bad = leak_probe(&store, 0..n, 100, CommitOrder::CommitBeforeForward).unwrap();
    let good = leak_probe(&store, 0..n, 100, CommitOrder::ForwardThenCommit).unwrap();
    assert_eq!(good.checked, n);
    assert_eq!(good.leaked, 0);
    assert!(bad.leaked > 0);
}

#[test]
fn node_classification_needs_both_classes() {
    let mut raw: Vec<RawEvent> = (0..40)
        .map(|i| RawEvent::new(i % 5, (i + 1) % 5, f64::from(i as u32)))
        .collect();
    for e in raw.iter_mut().skip(30) {
        e.label = 1.0;
    }
    let store = EventStore::ingest(raw.clone(), 5, None).unwrap();
    let cfg = small_config();
    let mut mcfg = cfg.model.clone();
    mcfg.enc = EncConfig::new(4, 8, 8);
    let model = cordgt_core::model::CorDgt::new(mcfg).unwrap();
    let plan = Plan::new(&store, &cfg.split).unwrap();
    let nc = NodeClassConfig::default();
    let err = node_classify(&model, &store, &plan, &cfg, &nc).unwrap_err();
    assert!(matches!(err, CoreError::DegenerateLabels(_)), "{err}");

    for e in raw.iter_mut() {
        e.label = 0.0;
    }
    let unlabeled = EventStore::ingest(raw, 5, None).unwrap();
    let err = node_classify(&model, &unlabeled, &plan, &cfg, &nc).unwrap_err();
    assert!(matches!(err, CoreError::LabelsMissing));
}

#[test]
fn node_classification_leaves_the_encoder_alone() {
    let data = planted(
        &PlantedSpec {
            nodes: 40,
            partners_per_node: 3,
            high_pairs: 4,
            target_events: 1200,
            ..PlantedSpec::default()
        },
        3,
    )
    .unwrap();
    let mut raw = data.events.clone();
    for e in raw.iter_mut() {
        e.label = data.node_labels[e.src as usize];
    }
    let store = EventStore::ingest(raw, 40, None).unwrap();
    let cfg = small_config();
    let model = cordgt_core::model::CorDgt::new(cfg.model.clone()).unwrap();
    let before = model.params().clone();
    let plan = Plan::new(&store, &cfg.split).unwrap();
    let nc = NodeClassConfig {
        epochs: 5,
        max_events: Some(400),
        ..NodeClassConfig::default()
    };
    let report = node_classify(&model, &store, &plan, &cfg, &nc).unwrap();
    assert!((0.0..=1.0).contains(&report.auc));
    assert!(report.train_count > 0 && report.test_count > 0);
    for id in before.ids() {
        assert_eq!(before.get(id).data(), model.params().get(id).data());
    }
}
