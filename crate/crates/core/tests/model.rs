use std::sync::Arc;

use cordgt_core::encoding::EncConfig;
use cordgt_core::event_store::{EventStore, InteractionHistory, RawEvent};
use cordgt_core::model::{AttentionMask, CorDgt, EncoderInput, InputOptions, ModelConfig};
use cordgt_core::proximity::TdParams;
use cordgt_core::sampler::{sample_contextual, SamplingStrategy};
use cordgt_numerics::gradcheck::check;
use cordgt_numerics::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OPTS: InputOptions = InputOptions {
    unmasked: false,
    joint: true,
    unitary_only: false,
};

fn featured_store(zero_feats: bool) -> EventStore {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs = [
        (0, 1),
        (1, 2),
        (0, 2),
        (2, 3),
        (0, 3),
        (1, 3),
        (3, 4),
        (0, 4),
    ];
    let raw = pairs
        .iter()
        .enumerate()
        .map(|(i, &(s, d))| {
            let feat = if zero_feats {
                vec![0.0; 3]
            } else {
                Tensor::uniform(1, 3, -1.0, 1.0, &mut rng).data().to_vec()
            };
            RawEvent {
                feat,
                ..RawEvent::new(s, d, 1.0 + i as f64)
            }
        })
        .collect();
    EventStore::ingest(raw, 6, None).unwrap()
}

fn link_input(store: &EventStore, u: u32, v: u32, seed: u64) -> EncoderInput {
    let mut hist = InteractionHistory::new();
    hist.commit(&store.events()[..5]).unwrap();
    let td = TdParams::new(1.0, 2.0, 2).unwrap();
    let cu = sample_contextual(store, u, 10.0, &[2, 1], SamplingStrategy::Uniform, seed).unwrap();
    let cv =
        sample_contextual(store, v, 10.0, &[2, 1], SamplingStrategy::Uniform, seed + 1).unwrap();
    EncoderInput::for_link(store, &hist, &cu, &cv, &td, OPTS).unwrap()
}

fn tiny(edge_dim: usize) -> ModelConfig {
    ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 8,
        head_dim: 4,
        edge_dim,
        enc: EncConfig::new(3, 4, 4),
        init_seed: 9,
        ..ModelConfig::default()
    }
}

/// Reorders the tokens of an input; `perm[new] = old`.
fn permute(input: &EncoderInput, perm: &[usize]) -> EncoderInput {
    let n = perm.len();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut out = input.clone();
    out.tokens = perm.iter().map(|&o| input.tokens[o]).collect();
    out.side = perm.iter().map(|&o| input.side[o]).collect();
    out.prox = perm.iter().map(|&o| input.prox[o]).collect();
    let d = input.node_feats.cols();
    out.node_feats = Tensor::zeros(n, d);
    for (new, &old) in perm.iter().enumerate() {
        out.node_feats
            .row_mut(new)
            .copy_from_slice(input.node_feats.row(old));
    }
    out.edge_pairs = Arc::new(
        input
            .edge_pairs
            .iter()
            .map(|&(a, b)| (inv[a], inv[b]))
            .collect(),
    );
    let mut allowed = vec![false; n * n];
    for q in 0..n {
        for k in 0..n {
            allowed[q * n + k] = input.mask.get(perm[q], perm[k]);
        }
    }
    out.mask = AttentionMask {
        size: n,
        allowed,
        fallback_rows: input.mask.fallback_rows.iter().map(|&r| inv[r]).collect(),
    };
    out.pools = input
        .pools
        .iter()
        .map(|p| Arc::new(p.iter().map(|&i| inv[i]).collect()))
        .collect();
    out
}

#[test]
fn token_order_does_not_matter() {
    let store = featured_store(false);
    let model = CorDgt::new(tiny(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let input = link_input(&store, 0, 3, seed);
        let mut perm: Vec<usize> = (0..input.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = permute(&input, &perm);

        let mut t1 = Tape::new();
        let f1 = model.link_forward(&mut t1, &input);
        let mut t2 = Tape::new();
        let f2 = model.link_forward(&mut t2, &shuffled);
        let (h1, h2) = (t1.value(f1.hidden), t2.value(f2.hidden));
        for (new, &old) in perm.iter().enumerate() {
            for (a, b) in h2.row(new).iter().zip(h1.row(old)) {
                assert!((a - b).abs() <= 1e-6);
            }
        }
        assert!((t1.scalar(f1.prob) - t2.scalar(f2.prob)).abs() <= 1e-6);
    }
}

#[test]
fn whole_model_gradient_matches_finite_differences() {
    let store = featured_store(false);
    let cfg = tiny(3);
    let model = CorDgt::new(cfg.clone()).unwrap();
    let pos = link_input(&store, 0, 3, 1);
    let neg = link_input(&store, 0, 5, 2);
    assert_eq!(pos.len(), 10);
    let report = check(
        model.params(),
        |tape, params| {
            let m = CorDgt::with_params(cfg.clone(), params).unwrap();
            m.link_loss(tape, &pos, &neg).0
        },
        1e-5,
        None,
    );
    assert!(report.checked > 500);
    assert!(report.max_rel_err <= 1e-3, "{}", report.max_rel_err);
}

#[test]
fn zero_edge_features_act_like_no_edges() {
    let store = featured_store(true);
    let model = CorDgt::new(tiny(3)).unwrap();
    for seed in 0..5 {
        let input = link_input(&store, 0, 3, seed);
        assert!(!input.edge_pairs.is_empty());
        let mut bare = input.clone();
        bare.edge_pairs = Arc::new(vec![]);
        bare.edge_feats = Tensor::zeros(0, 3);
        assert!((model.predict(&input) - model.predict(&bare)).abs() <= 1e-12);
    }
}
