use super::*;
use crate::event_store::{EventStore, InteractionHistory, RawEvent};
use crate::proximity::TdParams;
use crate::sampler::{sample_contextual, SamplingStrategy};
use rand::Rng;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 4,
        head_dim: 3,
        enc: EncConfig::new(3, 4, 4),
        ..ModelConfig::default()
    }
}

fn set(m: &mut CorDgt, name: &str, t: Tensor) {
    let id = m
        .params()
        .lookup(name)
        .unwrap_or_else(|| panic!("no param {name}"));
    *m.params_mut().get_mut(id) = t;
}

fn zero(m: &mut CorDgt, name: &str) {
    let id = m.params().lookup(name).unwrap();
    let (r, c) = (m.params().get(id).rows(), m.params().get(id).cols());
    set(m, name, Tensor::zeros(r, c));
}

fn toy_store() -> EventStore {
    let raw = vec![
        RawEvent::new(0, 1, 1.0),
        RawEvent::new(1, 2, 2.0),
        RawEvent::new(0, 2, 3.0),
        RawEvent::new(2, 3, 4.0),
        RawEvent::new(0, 1, 5.0),
        RawEvent::new(1, 3, 6.0),
    ];
    EventStore::ingest(raw, 5, None).unwrap()
}

fn toy_input(opts: InputOptions) -> (EventStore, EncoderInput) {
    let store = toy_store();
    let mut hist = InteractionHistory::new();
    hist.commit(&store.events()[..4]).unwrap();
    let td = TdParams::new(1.0, 1.0, 2).unwrap();
    let cu = sample_contextual(&store, 0, 7.0, &[2, 1], SamplingStrategy::Uniform, 1).unwrap();
    let cv = sample_contextual(&store, 3, 7.0, &[2, 1], SamplingStrategy::Uniform, 2).unwrap();
    let input = EncoderInput::for_link(&store, &hist, &cu, &cv, &td, opts).unwrap();
    (store, input)
}

fn default_opts() -> InputOptions {
    InputOptions {
        unmasked: false,
        joint: true,
        unitary_only: false,
    }
}

#[test]
fn plain_attention_matches_reference() {
    let m = CorDgt::new(small_cfg()).unwrap();
    let (_, mut input) = toy_input(default_opts());
    let n = input.len();
    input.mask = AttentionMask {
        size: n,
        allowed: vec![true; n * n],
        fallback_rows: vec![],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform(n, 4, -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = m.attention(&mut tape, 0, xv, &input);
    let got = tape.value(out).clone();

    // independent loop implementation
    let p = m.params();
    let w = |s: &str| {
        p.get(p.lookup(&format!("layer0.attn.{s}")).unwrap())
            .clone()
    };
    let (wq, wk, wv, wo, bo) = (w("wq"), w("wk"), w("wv"), w("wo"), w("bo"));
    let proj = |w: &Tensor| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..w.cols())
                    .map(|c| (0..4).map(|k| x.get(i, k) * w.get(k, c)).sum())
                    .collect()
            })
            .collect()
    };
    let (q, k, v) = (proj(&wq), proj(&wk), proj(&wv));
    let mut cat = vec![vec![0.0; 6]; n];
    for h in 0..2 {
        let cols = h * 3..h * 3 + 3;
        for i in 0..n {
            let s: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / 3f64.sqrt())
                .collect();
            let mx = s.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = s.iter().map(|a| (a - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    for i in 0..n {
        for c in 0..4 {
            let r: f64 = (0..6).map(|k| cat[i][k] * wo.get(k, c)).sum::<f64>() + bo.get(0, c);
            assert!((got.get(i, c) - r).abs() < 1e-9);
        }
    }
}

#[test]
fn two_token_hand_example() {
    let cfg = ModelConfig {
        layers: 1,
        heads: 1,
        hidden: 1,
        head_dim: 1,
        enc: EncConfig::new(1, 1, 1),
        ..ModelConfig::default()
    };
    let mut m = CorDgt::new(cfg).unwrap();
    for n in ["wq", "wk", "wv", "wo"] {
        set(
            &mut m,
            &format!("layer0.attn.{n}"),
            Tensor::filled(1, 1, 1.0),
        );
    }
    let (_, mut input) = toy_input(default_opts());
    input.tokens.truncate(2);
    input.edge_pairs = Arc::new(vec![]);
    input.mask = AttentionMask {
        size: 2,
        allowed: vec![true; 4],
        fallback_rows: vec![],
    };
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_vec(2, 1, vec![1.0, 2.0]));
    let out = m.attention(&mut tape, 0, x, &input);
    // row 0 scores [1, 2], row 1 scores [2, 4]
    let e = std::f64::consts::E;
    let r0 = (e * 1.0 + e * e * 2.0) / (e + e * e);
    let r1 = (e.powi(2) * 1.0 + e.powi(4) * 2.0) / (e.powi(2) + e.powi(4));
    assert!((tape.value(out).get(0, 0) - r0).abs() < 1e-12);
    assert!((tape.value(out).get(1, 0) - r1).abs() < 1e-12);
}

#[test]
fn masked_weights_are_exactly_zero() {
    let m = CorDgt::new(small_cfg()).unwrap();
    let (_, input) = toy_input(default_opts());
    for w in m.attention_weights(&input) {
        for q in 0..input.len() {
            for k in 0..input.len() {
                if !input.mask.get(q, k) {
                    assert!(w.get(q, k) < 1e-30);
                }
            }
        }
    }
}

#[test]
fn perturbing_unattended_keys_changes_nothing_else() {
    let m = CorDgt::new(small_cfg()).unwrap();
    let (_, input) = toy_input(default_opts());
    let n = input.len();
    let hidden_keys: Vec<usize> = (0..n)
        .filter(|&k| (0..n).all(|q| q == k || !input.mask.get(q, k)))
        .collect();
    assert!(!hidden_keys.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::uniform(n, 4, -1.0, 1.0, &mut rng);
    let run = |x: Tensor| {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let o = m.attention(&mut tape, 0, xv, &input);
        tape.value(o).clone()
    };
    let base = run(x.clone());
    let mut y = x.clone();
    for &k in &hidden_keys {
        for c in 0..4 {
            y.set(k, c, y.get(k, c) + rng.gen_range(-5.0..5.0));
        }
    }
    let pert = run(y);
    for i in (0..n).filter(|i| !hidden_keys.contains(i)) {
        for c in 0..4 {
            assert!((base.get(i, c) - pert.get(i, c)).abs() <= 1e-30);
        }
    }
}

#[test]
fn zero_blocks_make_layer_the_identity() {
    let mut m = CorDgt::new(small_cfg()).unwrap();
    for n in ["attn.wo", "attn.bo", "ffn.w2", "ffn.b2"] {
        zero(&mut m, &format!("layer0.{n}"));
    }
    let (_, input) = toy_input(default_opts());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::uniform(input.len(), 4, -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let o = m.layer(&mut tape, 0, xv, &input);
    assert_eq!(tape.value(o), &x);
}

#[test]
fn zero_final_head_layer_scores_half() {
    let mut m = CorDgt::new(small_cfg()).unwrap();
    zero(&mut m, "head.w2");
    let (_, input) = toy_input(default_opts());
    assert_eq!(m.predict(&input), 0.5);
    let m = CorDgt::new(small_cfg()).unwrap();
    let p = m.predict(&input);
    assert!(p > 0.0 && p < 1.0);
    assert_eq!(p, m.predict(&input));
}

#[test]
fn loss_worked_values() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(2, 1, vec![0.5, 0.5]));
    let l = tape.bce(p, Arc::new(vec![1.0, 0.0]), PROB_CLAMP);
    let l = tape.scale(l, 2.0);
    assert!((tape.scalar(l) - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    let p = tape.constant(Tensor::from_vec(2, 1, vec![1.0 - 1e-7, 1e-7]));
    let l = tape.bce(p, Arc::new(vec![1.0, 0.0]), PROB_CLAMP);
    let l = tape.scale(l, 2.0);
    assert!((tape.scalar(l) - 2e-7).abs() < 1e-12);
}

#[test]
fn loss_gradient_raises_positive_and_lowers_negative() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::filled(1, 1, 0.3));
    let b = store.add("b", Tensor::filled(1, 1, -0.2));
    let mut tape = Tape::new();
    let (la, lb) = (tape.param(&store, a), tape.param(&store, b));
    let (pa, pb) = (tape.sigmoid(la), tape.sigmoid(lb));
    let probs = tape.concat_rows(&[pa, pb]);
    let loss = tape.bce(probs, Arc::new(vec![1.0, 0.0]), PROB_CLAMP);
    let mut g = store.zero_grads();
    tape.backward(loss, &mut g).unwrap();
    assert!(g.get(a).get(0, 0) < 0.0);
    assert!(g.get(b).get(0, 0) > 0.0);
}

#[test]
fn decomposition_sums_to_logit() {
    let cfg = ModelConfig {
        head: ScoreHead::Linear,
        ..small_cfg()
    };
    let mut m = CorDgt::new(cfg).unwrap();
    let (_, input) = toy_input(default_opts());
    let (cs, logit) = decompose_scores(&m, &input).unwrap();
    let mut tape = Tape::new();
    let f = m.link_forward(&mut tape, &input);
    assert!((tape.scalar(f.logit) - logit).abs() < 1e-9);
    let total: f64 = cs.iter().map(|c| c.weight * c.contribution).sum();
    assert!((total - logit).abs() < 1e-12);
    zero(&mut m, "head.phi");
    let (cs, _) = decompose_scores(&m, &input).unwrap();
    assert!(cs.iter().all(|c| c.contribution == 0.0));
}

#[test]
fn decomposition_needs_linear_head() {
    let m = CorDgt::new(small_cfg()).unwrap();
    let (_, input) = toy_input(default_opts());
    assert!(matches!(
        decompose_scores(&m, &input),
        Err(CoreError::HeadAbsent)
    ));
}

#[test]
fn flag_conflicts() {
    let mut f = AblationFlags::only("no_td").unwrap();
    f.alpha_zero = true;
    assert!(matches!(f.validate(), Err(CoreError::ConflictingFlags(_))));
    assert!(AblationFlags::only("bogus").is_err());
    for n in AblationFlags::NAMES {
        let f = AblationFlags::only(n).unwrap();
        assert!(f.validate().is_ok());
        assert_eq!(f.active(), vec![n]);
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small_cfg();
    assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn no_mask_changes_outputs() {
    let m = CorDgt::new(small_cfg()).unwrap();
    let (_, a) = toy_input(default_opts());
    let (_, b) = toy_input(InputOptions {
        unmasked: true,
        ..default_opts()
    });
    assert_ne!(m.predict(&a), m.predict(&b));
}

#[test]
fn edge_features_reach_attention() {
    let raw = vec![
        RawEvent {
            feat: vec![1.0, -1.0],
            ..RawEvent::new(0, 1, 1.0)
        },
        RawEvent {
            feat: vec![0.5, 2.0],
            ..RawEvent::new(1, 2, 2.0)
        },
    ];
    let store = EventStore::ingest(raw, 3, None).unwrap();
    let hist = InteractionHistory::new();
    let td = TdParams::new(1.0, 1.0, 1).unwrap();
    let cu = sample_contextual(&store, 0, 3.0, &[2], SamplingStrategy::Uniform, 0).unwrap();
    let cv = sample_contextual(&store, 2, 3.0, &[2], SamplingStrategy::Uniform, 0).unwrap();
    let input = EncoderInput::for_link(&store, &hist, &cu, &cv, &td, default_opts()).unwrap();
    assert_eq!(input.edge_pairs.len(), 8);
    let cfg = ModelConfig {
        edge_dim: 2,
        ..small_cfg()
    };
    let mut m = CorDgt::new(cfg).unwrap();
    let before = m.predict(&input);
    zero(&mut m, "layer0.attn.wek");
    zero(&mut m, "layer0.attn.wev");
    let mut stripped = input.clone();
    stripped.edge_pairs = Arc::new(vec![]);
    stripped.edge_feats = Tensor::zeros(0, 2);
    // with zero edge projections the edge terms vanish
    assert!((m.predict(&input) - m.predict(&stripped)).abs() < 1e-15);
    assert_ne!(before, m.predict(&input));
}
