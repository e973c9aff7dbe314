//! Central finite-difference gradient checking.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error with a floor on the denominator so that pairs of
/// near-zero gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares tape gradients of `build` against central differences with step `h`.
///
/// `build` must construct a scalar loss from the parameters in `store`.
/// `coords` picks which entries to perturb; `None` checks every entry.
pub fn check<F>(
    store: &ParamStore,
    build: F,
    h: f64,
    coords: Option<&[(ParamId, usize)]>,
) -> GradCheckReport
where
    F: Fn(&mut Tape, &ParamStore) -> Var,
{
    let mut tape = Tape::new();
    let loss = build(&mut tape, store);
    let mut grads = store.zero_grads();
    tape.backward(loss, &mut grads).expect("backward failed");

    let all: Vec<(ParamId, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = store
                .ids()
                .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
                .collect();
            &all
        }
    };

    let mut probe = store.clone();
    let eval = |s: &ParamStore| {
        let mut t = Tape::new();
        let l = build(&mut t, s);
        t.scalar(l)
    };
    let mut max_rel_err = 0.0f64;
    for &(id, k) in coords {
        let orig = store.get(id).data()[k];
        probe.get_mut(id).data_mut()[k] = orig + h;
        let up = eval(&probe);
        probe.get_mut(id).data_mut()[k] = orig - h;
        let down = eval(&probe);
        probe.get_mut(id).data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(id).data()[k];
        max_rel_err = max_rel_err.max(relative_error(analytic, numeric));
    }
    GradCheckReport {
        max_rel_err,
        checked: coords.len(),
    }
}

/// Values bounded away from zero so ReLU kinks sit outside the difference stencil.
fn away_from_zero(rows: usize, cols: usize, rng: &mut StdRng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

fn two_params(rng: &mut StdRng, a: [usize; 2], b: [usize; 2]) -> (ParamStore, ParamId, ParamId) {
    let mut s = ParamStore::new();
    let x = s.add("a", away_from_zero(a[0], a[1], rng));
    let y = s.add("b", away_from_zero(b[0], b[1], rng));
    (s, x, y)
}

/// Reduces any node to a scalar through a fixed random projection, so every
/// output entry contributes a distinct weight to the loss.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let t = tape.value(v).clone();
    let mut rng = StdRng::seed_from_u64(seed);
    let w = tape.constant(Tensor::uniform(t.rows(), t.cols(), -1.0, 1.0, &mut rng));
    let p = tape.mul(v, w);
    tape.mean(p)
}

type Built = (ParamStore, Box<dyn Fn(&mut Tape, &ParamStore) -> Var>);

/// One operator (or a short chain of them) under test.
pub struct OpCase {
    pub name: &'static str,
    pub build: fn(&mut StdRng) -> Built,
}

/// A case for every operator the tape supports.
pub fn operator_cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "matmul",
            build: |rng| {
                let (s, a, b) = two_params(rng, [3, 4], [4, 5]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let (x, y) = (t.param(s, a), t.param(s, b));
                        let z = t.matmul(x, y);
                        project(t, z, 1)
                    }),
                )
            },
        },
        OpCase {
            name: "matmul_nt",
            build: |rng| {
                let (s, a, b) = two_params(rng, [3, 4], [5, 4]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let (x, y) = (t.param(s, a), t.param(s, b));
                        let z = t.matmul_nt(x, y);
                        project(t, z, 2)
                    }),
                )
            },
        },
        OpCase {
            name: "elementwise",
            build: |rng| {
                let (s, a, b) = two_params(rng, [3, 4], [3, 4]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let (x, y) = (t.param(s, a), t.param(s, b));
                        let p = t.add(x, y);
                        let q = t.sub(p, y);
                        let r = t.mul(q, y);
                        let z = t.scale(r, -1.7);
                        project(t, z, 3)
                    }),
                )
            },
        },
        OpCase {
            name: "add_row/mul_row",
            build: |rng| {
                let (s, a, b) = two_params(rng, [4, 3], [1, 3]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let (x, r) = (t.param(s, a), t.param(s, b));
                        let p = t.mul_row(x, r);
                        let z = t.add_row(p, r);
                        project(t, z, 4)
                    }),
                )
            },
        },
        OpCase {
            name: "concat/slice",
            build: |rng| {
                let (s, a, b) = two_params(rng, [3, 2], [3, 4]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let (x, y) = (t.param(s, a), t.param(s, b));
                        let c = t.concat_cols(&[x, y, x]);
                        let sl = t.slice_cols(c, 1, 6);
                        let r = t.concat_rows(&[sl, sl]);
                        project(t, r, 5)
                    }),
                )
            },
        },
        OpCase {
            name: "gather/mean_rows",
            build: |rng| {
                let (s, a, _) = two_params(rng, [5, 3], [1, 1]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let x = t.param(s, a);
                        let g = t.gather_rows(x, Arc::new(vec![4, 0, 4, 2]));
                        let m = t.mean_rows(g, Arc::new(vec![0, 1, 2]));
                        let both = t.concat_cols(&[m, m]);
                        project(t, both, 6)
                    }),
                )
            },
        },
        OpCase {
            name: "softmax/masked_fill",
            build: |rng| {
                let (s, a, _) = two_params(rng, [4, 4], [1, 1]);
                let allowed: Vec<bool> = (0..16).map(|k| k % 3 != 1 || k % 5 == 0).collect();
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let x = t.param(s, a);
                        let m = t.masked_fill(x, &allowed);
                        let y = t.row_softmax(m);
                        project(t, y, 7)
                    }),
                )
            },
        },
        OpCase {
            name: "layer_norm",
            build: |rng| {
                let (s, a, _) = two_params(rng, [3, 6], [1, 1]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let x = t.param(s, a);
                        let y = t.layer_norm(x, 1e-5);
                        project(t, y, 8)
                    }),
                )
            },
        },
        OpCase {
            name: "relu/sigmoid",
            build: |rng| {
                let (s, a, _) = two_params(rng, [3, 5], [1, 1]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let x = t.param(s, a);
                        let r = t.relu(x);
                        let g = t.sigmoid(x);
                        let z = t.add(r, g);
                        project(t, z, 9)
                    }),
                )
            },
        },
        OpCase {
            name: "pair_dot/pair_mix",
            build: |rng| {
                let (s, q, k) = two_params(rng, [4, 3], [5, 3]);
                let pairs = Arc::new(vec![(0, 1), (1, 0), (2, 3), (3, 2), (2, 3)]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let (qv, kv) = (t.param(s, q), t.param(s, k));
                        let scores = t.pair_dot(qv, kv, pairs.clone(), 4);
                        let w = t.row_softmax(scores);
                        let mixed = t.pair_mix(w, kv, pairs.clone());
                        project(t, mixed, 10)
                    }),
                )
            },
        },
        OpCase {
            name: "bce",
            build: |rng| {
                let (s, a, _) = two_params(rng, [6, 1], [1, 1]);
                (
                    s,
                    Box::new(move |t: &mut Tape, s: &ParamStore| {
                        let x = t.param(s, a);
                        let p = t.sigmoid(x);
                        t.bce(p, Arc::new(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]), 1e-7)
                    }),
                )
            },
        },
    ]
}

#[derive(Debug, Clone, Copy)]
pub struct OpReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub instances: u64,
}

/// Runs every operator case on `instances` random draws with step `h`.
pub fn operator_suite(instances: u64, h: f64) -> Vec<OpReport> {
    operator_cases()
        .into_iter()
        .map(|case| {
            let mut worst = 0.0f64;
            for seed in 0..instances {
                let mut rng = StdRng::seed_from_u64(seed * 7919 + 17);
                let (store, f) = (case.build)(&mut rng);
                worst = worst.max(check(&store, |t, s| f(t, s), h, None).max_rel_err);
            }
            OpReport {
                name: case.name,
                max_rel_err: worst,
                instances,
            }
        })
        .collect()
}
