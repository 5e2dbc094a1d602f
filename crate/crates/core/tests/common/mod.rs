//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hycube::config::{default_factorization, RunConfig, Variant};
use hycube::data::{Dataset, KnowledgeTuple};
use hycube::eval::{EntityScorer, EvalError};
use hycube::layers::{
    alternate_mask_stack, batchnorm_backward, batchnorm_train, dropout, embed_lookup, embed_scatter_add,
    relu, relu_backward, stack_backward, standard_stack, MaskedTuple, Mode, StackLayout,
};
use hycube::model::{max_gradient_error, Model};
use hycube::tensor::{
    affine, affine_backward, conv3d_backward, conv3d_valid, finite_diff_check, maxpool_channels,
    maxpool_channels_backward, pad_hw, pad_hw_backward, PaddingMode, Tensor,
};
use hycube::training::multiclass_log_loss;

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Direct six-deep loop over output and window coordinates, indexing the
/// flat buffers by hand.
pub fn brute_conv3d(input: &Tensor<f64>, kernels: &Tensor<f64>) -> Vec<f64> {
    let (h, w, d) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (n1, k, t) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[3]);
    let (oh, ow, od) = (h - k + 1, w - k + 1, d - t + 1);
    let x = input.data();
    let kd = kernels.data();
    let mut out = Vec::new();
    for c in 0..n1 {
        for i in 0..oh {
            for j in 0..ow {
                for z in 0..od {
                    let mut acc = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            for e in 0..t {
                                let xi = ((i + a) * w + (j + b)) * d + (z + e);
                                let ki = ((c * k + a) * k + b) * t + e;
                                acc += x[xi] * kd[ki];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Rotates an `H x W x D` cube by `(s, t)`: `out[i][j] = in[(i - s) mod H][(j - t) mod W]`.
pub fn roll_hw(x: &Tensor<f64>, s: usize, t: usize) -> Tensor<f64> {
    let (h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Tensor::from_fn(x.shape(), |idx| {
        let (i, j, z) = (idx / (w * d), (idx / d) % w, idx % d);
        x.data()[(((i + h - s % h) % h) * w + (j + w - t % w) % w) * d + z]
    })
}

// ---------------------------------------------------------------------------
// Metric fixture: 10 ranking records with logits and filters fixed by hand.

pub struct LookupScorer {
    pub logits: HashMap<(usize, Vec<usize>, usize), Vec<f64>>,
    pub transform: Box<dyn Fn(f64) -> f64>,
}

impl EntityScorer for LookupScorer {
    fn supports_arity(&self, _arity: usize) -> bool {
        true
    }

    fn score_batch(&self, batch: &[MaskedTuple]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(batch
            .iter()
            .map(|m| {
                self.logits[&(m.relation, m.entities.clone(), m.masked_pos)]
                    .iter()
                    .map(|&v| (self.transform)(v))
                    .collect()
            })
            .collect())
    }
}

fn tuple(relation: usize, entities: &[usize]) -> KnowledgeTuple {
    KnowledgeTuple {
        relation,
        entities: entities.to_vec(),
    }
}

/// Six entities, a binary relation `r0` and a ternary relation `r1`.
/// Train: r0(0,1) r0(0,2) r1(3,4,5). Test: r0(0,3) r0(1,2) r1(0,4,5) r1(3,4,2).
pub fn metric_fixture() -> (Dataset, LookupScorer) {
    let mut ds = Dataset::default();
    for e in 0..6 {
        ds.vocab.entities.intern(&format!("e{e}"));
    }
    ds.vocab.relations.intern("r0");
    ds.vocab.relations.intern("r1");
    ds.train = vec![tuple(0, &[0, 1]), tuple(0, &[0, 2]), tuple(1, &[3, 4, 5])];
    ds.test = vec![
        tuple(0, &[0, 3]),
        tuple(0, &[1, 2]),
        tuple(1, &[0, 4, 5]),
        tuple(1, &[3, 4, 2]),
    ];
    let rows: [(usize, &[usize], usize, [f64; 6]); 10] = [
        (0, &[0, 3], 0, [2.0, 1.0, 3.0, 0.5, 2.0, -1.0]),
        (0, &[0, 3], 1, [0.0, 5.0, 4.0, 3.0, 1.0, 3.5]),
        (0, &[1, 2], 0, [9.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        (0, &[1, 2], 1, [0.0; 6]),
        (1, &[0, 4, 5], 0, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        (1, &[0, 4, 5], 1, [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        (1, &[0, 4, 5], 2, [0.5, 0.5, 0.5, 0.5, 0.5, 0.4]),
        (1, &[3, 4, 2], 0, [1.0, 1.0, 1.0, 2.0, 1.0, 1.0]),
        (1, &[3, 4, 2], 1, [0.0, 3.0, 0.0, 0.0, 2.0, 2.0]),
        (1, &[3, 4, 2], 2, [0.0, 0.0, 1.0, 0.0, 0.0, 7.0]),
    ];
    let logits = rows
        .iter()
        .map(|(r, e, p, l)| ((*r, e.to_vec(), *p), l.to_vec()))
        .collect();
    (
        ds,
        LookupScorer {
            logits,
            transform: Box::new(|x| x),
        },
    )
}

/// Ranks worked out by hand, in record order.
pub const FIXTURE_RANKS: [f64; 10] = [2.5, 2.0, 1.0, 3.5, 5.0, 1.0, 6.0, 1.0, 2.5, 1.0];
pub const FIXTURE_MRR: f64 = 25.0 / 42.0;
pub const FIXTURE_HITS: [f64; 3] = [0.4, 0.7, 1.0];
pub const FIXTURE_MRR_ARITY: [(usize, f64); 2] = [(2, 153.0 / 280.0), (3, 113.0 / 180.0)];
pub const FIXTURE_MRR_POSITION: [(usize, f64); 3] = [(1, 0.65), (2, 153.0 / 280.0), (3, 7.0 / 12.0)];

// ---------------------------------------------------------------------------
// Gradient suites.

const EPS: f64 = 1e-6;

/// `sum(weights * out)`, so the upstream gradient is `weights`.
fn weighted(out: &Tensor<f64>, weights: &Tensor<f64>) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn nonzero(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen() {
            v
        } else {
            -v
        }
    })
}

/// Worst finite-difference error of one named layer on one random instance.
pub fn layer_gradient_error(layer: &str, rng: &mut ChaCha8Rng) -> f64 {
    match layer {
        "pad" => {
            let (h, w, d) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..4));
            let p = rng.gen_range(0..4);
            let mode = if rng.gen() { PaddingMode::Circular } else { PaddingMode::Zero };
            let x = random_tensor(rng, &[h, w, d]);
            let up = random_tensor(rng, &[h + 2 * p, w + 2 * p, d]);
            let g = pad_hw_backward(&up, &[h, w, d], p, mode).unwrap();
            finite_diff_check(|t| weighted(&pad_hw(t, p, mode).unwrap(), &up), &x, &g, EPS).unwrap()
        }
        "conv" => {
            let k = 2 * rng.gen_range(0..2) + 1;
            let (h, w) = (rng.gen_range(k..k + 3), rng.gen_range(k..k + 3));
            let d = rng.gen_range(1..5);
            let t = rng.gen_range(1..=d);
            let n1 = rng.gen_range(1..4);
            let x = random_tensor(rng, &[h, w, d]);
            let kern = random_tensor(rng, &[n1, k, k, t]);
            let out_shape = conv3d_valid(&x, &kern).unwrap().shape().to_vec();
            let up = random_tensor(rng, &out_shape);
            let g = conv3d_backward(&x, &kern, &up).unwrap();
            let ex = finite_diff_check(|v| weighted(&conv3d_valid(v, &kern).unwrap(), &up), &x, &g.input, EPS).unwrap();
            let ek = finite_diff_check(|v| weighted(&conv3d_valid(&x, v).unwrap(), &up), &kern, &g.kernels, EPS).unwrap();
            ex.max(ek)
        }
        "pool" => {
            let window = rng.gen_range(1..5);
            let shape = [window * rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4)];
            let x = random_tensor(rng, &shape);
            let pooled = maxpool_channels(&x, window).unwrap();
            let up = random_tensor(rng, pooled.output.shape());
            let g = maxpool_channels_backward(&up, &pooled.argmax, &shape).unwrap();
            finite_diff_check(|t| weighted(&maxpool_channels(t, window).unwrap().output, &up), &x, &g, EPS).unwrap()
        }
        "affine" => {
            let (m, o) = (rng.gen_range(1..8), rng.gen_range(1..6));
            let x = random_tensor(rng, &[m]);
            let wt = random_tensor(rng, &[o, m]);
            let b = random_tensor(rng, &[o]);
            let up = random_tensor(rng, &[o]);
            let g = affine_backward(x.data(), &wt, &b, up.data()).unwrap();
            let ex = finite_diff_check(|t| weighted(&affine(t.data(), &wt, &b).unwrap(), &up), &x, &g.input, EPS).unwrap();
            let ew = finite_diff_check(|t| weighted(&affine(x.data(), t, &b).unwrap(), &up), &wt, &g.weight, EPS).unwrap();
            let eb = finite_diff_check(|t| weighted(&affine(x.data(), &wt, t).unwrap(), &up), &b, &g.bias, EPS).unwrap();
            ex.max(ew).max(eb)
        }
        "batchnorm" => {
            let shape = [rng.gen_range(2..5), rng.gen_range(1..4), rng.gen_range(1..4)];
            let x = random_tensor(rng, &shape);
            let gamma = random_tensor(rng, &[shape[1]]);
            let beta = random_tensor(rng, &[shape[1]]);
            let up = random_tensor(rng, &shape);
            let (_, cache) = batchnorm_train(&x, &gamma, &beta).unwrap();
            let g = batchnorm_backward(&up, &cache, &gamma).unwrap();
            let f = |x: &Tensor<f64>, gm: &Tensor<f64>, bt: &Tensor<f64>| weighted(&batchnorm_train(x, gm, bt).unwrap().0, &up);
            let ex = finite_diff_check(|t| f(t, &gamma, &beta), &x, &g.input, EPS).unwrap();
            let eg = finite_diff_check(|t| f(&x, t, &beta), &gamma, &g.gamma, EPS).unwrap();
            let eb = finite_diff_check(|t| f(&x, &gamma, t), &beta, &g.beta, EPS).unwrap();
            ex.max(eg).max(eb)
        }
        "dropout" => {
            let shape = [rng.gen_range(1..10)];
            let x = random_tensor(rng, &shape);
            let up = random_tensor(rng, &shape);
            let seed = rng.gen();
            let run = |t: &Tensor<f64>| dropout(t, 0.4, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mask = run(&x).1.unwrap();
            let g = Tensor::from_fn(&shape, |i| up.data()[i] * mask[i]);
            finite_diff_check(|t| weighted(&run(t).0, &up), &x, &g, EPS).unwrap()
        }
        "relu" => {
            let shape = [rng.gen_range(1..12)];
            let x = nonzero(rng, &shape);
            let up = random_tensor(rng, &shape);
            let g = relu_backward(&relu(&x), &up);
            finite_diff_check(|t| weighted(&relu(t), &up), &x, &g, EPS).unwrap()
        }
        "embedding" => {
            let (rows, d) = (rng.gen_range(2..6), rng.gen_range(1..5));
            let table = random_tensor(rng, &[rows, d]);
            let ids: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..rows)).collect();
            let up = random_tensor(rng, &[ids.len(), d]);
            let mut g = Tensor::zeros(&[rows, d]);
            embed_scatter_add(&mut g, &ids, &up).unwrap();
            finite_diff_check(|t| weighted(&embed_lookup(t, &ids).unwrap(), &up), &table, &g, EPS).unwrap()
        }
        "stack" => {
            let (d1, d2, kept) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..5));
            let layout = if rng.gen() { StackLayout::Alternate } else { StackLayout::Standard };
            let build = |rel: &Tensor<f64>, ents: &[Tensor<f64>]| match layout {
                StackLayout::Alternate => alternate_mask_stack(rel, ents).unwrap(),
                StackLayout::Standard => standard_stack(rel, ents).unwrap(),
            };
            let rel = random_tensor(rng, &[d1, d2]);
            let ents: Vec<Tensor<f64>> = (0..kept).map(|_| random_tensor(rng, &[d1, d2])).collect();
            let up = random_tensor(rng, build(&rel, &ents).shape());
            let (g_rel, g_ents) = stack_backward(layout, &up, kept).unwrap();
            let mut worst = finite_diff_check(|t| weighted(&build(t, &ents), &up), &rel, &g_rel, EPS).unwrap();
            for (i, g) in g_ents.iter().enumerate() {
                let e = finite_diff_check(
                    |t| {
                        let mut es = ents.clone();
                        es[i] = t.clone();
                        weighted(&build(&rel, &es), &up)
                    },
                    &ents[i],
                    g,
                    EPS,
                )
                .unwrap();
                worst = worst.max(e);
            }
            worst
        }
        "loss" => {
            let n = rng.gen_range(2..12);
            let logits = random_tensor(rng, &[n]).map(|v| 3.0 * v);
            let target = rng.gen_range(0..n);
            let cands: Option<Vec<usize>> = rng
                .gen::<bool>()
                .then(|| (0..n).filter(|&c| c == target || rng.gen()).collect());
            let (_, g) = multiclass_log_loss(logits.data(), target, cands.as_deref()).unwrap();
            finite_diff_check(
                |t| multiclass_log_loss(t.data(), target, cands.as_deref()).unwrap().0,
                &logits,
                &Tensor::vector(g),
                EPS,
            )
            .unwrap()
        }
        other => panic!("unknown layer {other}"),
    }
}

pub const LAYERS: [&str; 10] = [
    "pad", "conv", "pool", "affine", "batchnorm", "dropout", "relu", "embedding", "stack", "loss",
];

/// A random toy composite (d <= 16, arities 2-5) and its worst gradient error.
pub fn composite_gradient_error(variant: Variant, seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = [4, 6, 9, 16][rng.gen_range(0..4)];
    let (d1, d2) = default_factorization(dim);
    let (channels, pool) = if rng.gen() { (4, 2) } else { (8, 4) };
    let cfg = RunConfig {
        variant,
        dim,
        d1,
        d2,
        channels,
        pool,
        pad: rng.gen_range(0..3),
        stack: if rng.gen() { StackLayout::Alternate } else { StackLayout::Standard },
        padding: if rng.gen() { PaddingMode::Circular } else { PaddingMode::Zero },
        ..RunConfig::default()
    };
    let ne = rng.gen_range(3..7);
    let nr = rng.gen_range(1..4);
    let arities: Vec<usize> = (2..=5).filter(|_| rng.gen_bool(0.6)).collect();
    let arities = if arities.is_empty() { vec![rng.gen_range(2..=5)] } else { arities };
    let mut model: Model<f64> = Model::new(cfg, ne, nr, arities.iter().copied(), &mut rng).unwrap();
    for (_, t) in model.params_mut().iter_mut() {
        if t.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    let batch: Vec<MaskedTuple> = (0..rng.gen_range(3..6))
        .map(|_| {
            let a = arities[rng.gen_range(0..arities.len())];
            let ents = (0..a).map(|_| rng.gen_range(0..ne)).collect();
            MaskedTuple::new(rng.gen_range(0..nr), ents, rng.gen_range(0..a)).unwrap()
        })
        .collect();
    max_gradient_error(&model, &batch, seed, EPS).unwrap()
}

/// Writes `ds` under `dir` and returns the path.
pub fn write_dataset(ds: &Dataset, dir: &std::path::Path) -> std::path::PathBuf {
    ds.write_dir(dir).unwrap();
    dir.to_path_buf()
}
