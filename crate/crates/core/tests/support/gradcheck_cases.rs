//! Central finite-difference oracle for every differentiable tape primitive
//! and for the end-to-end field (BCE) and denoiser (MSE) losses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfd_core::field_mlp::{FieldMlp, FieldMlpConfig};
use wfd_core::numerics::{ParamStore, Tape, Var};
use wfd_core::weight_diffusion::{DenoiserConfig, TokenLayout, TransformerDenoiser};

pub const TRIALS: usize = 64;
pub const STEP: f64 = 1e-3;
/// Step for the end-to-end model losses, small enough that the ReLU kinks
/// crossed by a perturbation are rare (and detected, see `check_store`).
pub const MODEL_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

pub struct CaseResult {
    pub name: &'static str,
    pub trials: usize,
    pub max_error: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.trials >= TRIALS && self.max_error <= TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

type Input = (Vec<usize>, Vec<f64>);

/// Largest relative error between tape gradients and central differences of
/// `loss` with respect to every coordinate of every input.
fn check(inputs: &[Input], loss: &dyn Fn(&Tape<'_, f64>, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Input]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|(s, v)| tape.variable(s.clone(), v.clone()))
            .collect();
        tape.scalar(loss(&tape, &vars))
    };
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(s, v)| tape.variable(s.clone(), v.clone()))
        .collect();
    let out = loss(&tape, &vars);
    let grads = tape.backward(out).expect("scalar loss");
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (i, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var).expect("input reaches the loss").to_vec();
        for j in 0..inputs[i].1.len() {
            let x = inputs[i].1[j];
            work[i].1[j] = x + STEP;
            let up = eval(&work);
            work[i].1[j] = x - STEP;
            let down = eval(&work);
            work[i].1[j] = x;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    worst
}

fn values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so no perturbation crosses a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Rows whose variance keeps layer-norm curvature moderate at the step size.
fn spread_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    while out.len() < rows * cols {
        let row = values(rng, cols);
        let mean = row.iter().sum::<f64>() / cols as f64;
        if row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64 > 0.1 {
            out.extend(row);
        }
    }
    out
}

/// Contracts an output with fixed random weights so every output coordinate
/// contributes to the scalar being differentiated.
fn weighted_sum(tape: &Tape<'_, f64>, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x);
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(shape, values(&mut rng, n));
    tape.sum(tape.mul(x, w))
}

fn case(
    name: &'static str,
    seed: u64,
    inputs: impl Fn(&mut ChaCha8Rng) -> Vec<Input>,
    loss: impl Fn(&Tape<'_, f64>, &[Var]) -> Var,
) -> CaseResult {
    let mut max_error = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + trial as u64);
        let ins = inputs(&mut rng);
        max_error = max_error.max(check(&ins, &loss));
    }
    CaseResult {
        name,
        trials: TRIALS,
        max_error,
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

pub fn primitive_cases() -> Vec<CaseResult> {
    let mut out = Vec::new();
    let pair = |rng: &mut ChaCha8Rng| {
        let (r, c) = dims(rng);
        vec![
            (vec![r, c], values(rng, r * c)),
            (vec![r, c], values(rng, r * c)),
        ]
    };
    let single = |rng: &mut ChaCha8Rng| {
        let (r, c) = dims(rng);
        vec![(vec![r, c], values(rng, r * c))]
    };
    out.push(case("add", 1, pair, |t, v| {
        weighted_sum(t, t.add(v[0], v[1]), 1)
    }));
    out.push(case("sub", 2, pair, |t, v| {
        weighted_sum(t, t.sub(v[0], v[1]), 2)
    }));
    out.push(case("mul", 3, pair, |t, v| {
        weighted_sum(t, t.mul(v[0], v[1]), 3)
    }));
    out.push(case("scale", 4, single, |t, v| {
        weighted_sum(t, t.scale(v[0], -1.7), 4)
    }));
    out.push(case(
        "add_row",
        5,
        |rng| {
            let (r, c) = dims(rng);
            vec![(vec![r, c], values(rng, r * c)), (vec![c], values(rng, c))]
        },
        |t, v| weighted_sum(t, t.add_row(v[0], v[1]), 5),
    ));
    for (name, trans_b, seed) in [("matmul", false, 6), ("matmul_transposed", true, 7)] {
        out.push(case(
            name,
            seed,
            move |rng| {
                let (m, k) = dims(rng);
                let n = rng.random_range(1..5);
                let b_shape = if trans_b { vec![n, k] } else { vec![k, n] };
                vec![
                    (vec![m, k], values(rng, m * k)),
                    (b_shape, values(rng, k * n)),
                ]
            },
            move |t, v| weighted_sum(t, t.matmul(v[0], v[1], trans_b), seed),
        ));
    }
    for (name, trans_b, seed) in [
        ("batch_matmul", false, 8),
        ("batch_matmul_transposed", true, 9),
    ] {
        out.push(case(
            name,
            seed,
            move |rng| {
                let g = rng.random_range(1..4);
                let (m, k) = dims(rng);
                let n = rng.random_range(1..5);
                let b_shape = if trans_b {
                    vec![g, n, k]
                } else {
                    vec![g, k, n]
                };
                vec![
                    (vec![g, m, k], values(rng, g * m * k)),
                    (b_shape, values(rng, g * k * n)),
                ]
            },
            move |t, v| weighted_sum(t, t.batch_matmul(v[0], v[1], trans_b), seed),
        ));
    }
    let kinked = |rng: &mut ChaCha8Rng| {
        let (r, c) = dims(rng);
        vec![(vec![r, c], away_from_zero(rng, r * c))]
    };
    out.push(case("relu", 10, kinked, |t, v| {
        weighted_sum(t, t.relu(v[0]), 10)
    }));
    let wide = |rng: &mut ChaCha8Rng| {
        let (r, c) = dims(rng);
        vec![(
            vec![r, c],
            values(rng, r * c).iter().map(|x| 3.0 * x).collect(),
        )]
    };
    out.push(case("gelu", 11, wide, |t, v| {
        weighted_sum(t, t.gelu(v[0]), 11)
    }));
    out.push(case("sigmoid", 12, wide, |t, v| {
        weighted_sum(t, t.sigmoid(v[0]), 12)
    }));
    out.push(case("sin", 13, wide, |t, v| {
        weighted_sum(t, t.sin(v[0]), 13)
    }));
    out.push(case("cos", 14, wide, |t, v| {
        weighted_sum(t, t.cos(v[0]), 14)
    }));
    out.push(case("softmax", 15, wide, |t, v| {
        weighted_sum(t, t.softmax(v[0]), 15)
    }));
    out.push(case(
        "layer_norm",
        16,
        |rng| {
            let r = rng.random_range(1..4);
            let c = rng.random_range(2..6);
            vec![
                (vec![r, c], spread_rows(rng, r, c)),
                (vec![c], values(rng, c)),
                (vec![c], values(rng, c)),
            ]
        },
        |t, v| weighted_sum(t, t.layer_norm(v[0], v[1], v[2]), 16),
    ));
    out.push(case("sum", 17, single, |t, v| t.sum(v[0])));
    out.push(case("mean", 18, single, |t, v| t.mean(v[0])));
    out.push(case(
        "bce_with_logits",
        19,
        |rng| {
            let n = rng.random_range(1..9);
            vec![(vec![n, 1], values(rng, n).iter().map(|x| 4.0 * x).collect())]
        },
        |t, v| {
            let n = t.shape(v[0])[0];
            let targets: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            t.bce_with_logits(v[0], &targets)
        },
    ));
    out.push(case("mse", 20, single, |t, v| {
        let n: usize = t.shape(v[0]).iter().product();
        let target: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        t.mse(v[0], &target)
    }));
    out.push(case(
        "slice_cols",
        21,
        |rng| {
            let r = rng.random_range(1..4);
            vec![(vec![r, 5], values(rng, r * 5))]
        },
        |t, v| weighted_sum(t, t.slice_cols(v[0], 1, 3), 21),
    ));
    out.push(case(
        "concat_cols",
        22,
        |rng| {
            let r = rng.random_range(1..4);
            vec![
                (vec![r, 2], values(rng, r * 2)),
                (vec![r, 3], values(rng, r * 3)),
            ]
        },
        |t, v| weighted_sum(t, t.concat_cols(&[v[0], v[1]]), 22),
    ));
    out.push(case(
        "slice_rows",
        23,
        |rng| {
            let c = rng.random_range(1..4);
            vec![(vec![5, c], values(rng, 5 * c))]
        },
        |t, v| weighted_sum(t, t.slice_rows(v[0], 2, 2), 23),
    ));
    out.push(case(
        "concat_rows",
        24,
        |rng| {
            let c = rng.random_range(1..4);
            vec![
                (vec![2, c], values(rng, 2 * c)),
                (vec![1, c], values(rng, c)),
            ]
        },
        |t, v| weighted_sum(t, t.concat_rows(&[v[0], v[1]]), 24),
    ));
    out.push(case("expand_rows", 25, single, |t, v| {
        weighted_sum(t, t.expand_rows(v[0], 3), 25)
    }));
    out.push(case(
        "split_heads",
        26,
        |rng| vec![(vec![3 * 2, 4], values(rng, 24))],
        |t, v| weighted_sum(t, t.split_heads(v[0], 3, 2, 2), 26),
    ));
    out.push(case(
        "merge_heads",
        27,
        |rng| vec![(vec![2 * 2, 3, 2], values(rng, 24))],
        |t, v| weighted_sum(t, t.merge_heads(v[0], 3, 2, 2), 27),
    ));
    out.push(case(
        "composite_mlp",
        28,
        |rng| {
            // 1 -> 3 -> 1 with biases: ten parameters.
            vec![
                (vec![3, 1], values(rng, 3)),
                (vec![3], values(rng, 3)),
                (vec![1, 3], values(rng, 3)),
                (vec![1], values(rng, 1)),
            ]
        },
        |t, v| {
            let x = t.constant(vec![5, 1], vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
            let h = t.gelu(t.add_row(t.matmul(x, v[0], true), v[1]));
            let y = t.add_row(t.matmul(h, v[2], true), v[3]);
            let fit = t.mse(y, &[0.2, -0.1, 0.4, 0.0, 0.3]);
            let cls = t.bce_with_logits(y, &[0.0, 0.0, 1.0, 1.0, 1.0]);
            t.add(fit, t.scale(cls, 0.5))
        },
    ));
    out
}

/// Finite-difference check of a loss over all parameters of a store.
/// Coordinates whose perturbation changes `pattern` (the ReLU activation
/// pattern) straddle a kink and are skipped. Returns the worst error and the
/// numbers of checked and skipped coordinates.
fn check_store(
    store: &ParamStore<f64>,
    loss: &dyn Fn(&ParamStore<f64>) -> (f64, Vec<Vec<f64>>),
    pattern: &dyn Fn(&ParamStore<f64>) -> Vec<bool>,
) -> (f64, usize, usize) {
    let (_, analytic) = loss(store);
    let base = pattern(store);
    let mut work = store.clone();
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    for p in 0..store.len() {
        for j in 0..store.get(p).len() {
            let x = store.get(p).values()[j];
            work.get_mut(p).values_mut()[j] = x + MODEL_STEP;
            let (up, up_pattern) = (loss(&work).0, pattern(&work));
            work.get_mut(p).values_mut()[j] = x - MODEL_STEP;
            let (down, down_pattern) = (loss(&work).0, pattern(&work));
            work.get_mut(p).values_mut()[j] = x;
            if up_pattern != base || down_pattern != base {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * MODEL_STEP);
            worst = worst.max(relative_error(analytic[p][j], numeric));
            checked += 1;
        }
    }
    (worst, checked, skipped)
}

/// Signs of every hidden pre-activation, from a plain forward pass.
fn relu_pattern(store: &ParamStore<f64>, encoded: &[f64], rows: usize) -> Vec<bool> {
    let layers = store.len() / 2;
    let mut h = encoded.to_vec();
    let mut pattern = Vec::new();
    for l in 0..layers - 1 {
        let (w, b) = (store.get(2 * l), store.get(2 * l + 1));
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        let mut next = vec![0.0; rows * out];
        for r in 0..rows {
            for o in 0..out {
                let z = b.values()[o]
                    + (0..inp)
                        .map(|i| h[r * inp + i] * w.values()[o * inp + i])
                        .sum::<f64>();
                pattern.push(z > 0.0);
                next[r * out + o] = z.max(0.0);
            }
        }
        h = next;
    }
    pattern
}

/// BCE of a small occupancy MLP on a 100-point batch, differentiated with
/// respect to every parameter.
pub fn field_bce_case() -> CaseResult {
    let config = FieldMlpConfig {
        width: 6,
        hidden_layers: 2,
        frequencies: 2,
        ..FieldMlpConfig::default()
    };
    let (mut max_error, mut checked, mut skipped) = (0.0f64, 0, 0);
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial as u64);
        let mlp = FieldMlp::<f32>::random(config, trial as u64)
            .unwrap()
            .cast::<f64>();
        let points: Vec<f32> = (0..300).map(|_| rng.random_range(-0.5..0.5)).collect();
        let targets: Vec<f64> = (0..100)
            .map(|_| f64::from(rng.random_bool(0.5) as u8))
            .collect();
        let encoded = mlp.encode(&points).unwrap();
        let run = |store: &ParamStore<f64>| -> (f64, Vec<Vec<f64>>) {
            let mut m = mlp.clone();
            *m.params_mut() = store.clone();
            let tape = Tape::new();
            let (logits, vars) = m.forward_tape(&tape, encoded.clone(), 100);
            let loss = tape.bce_with_logits(logits, &targets);
            let value = tape.scalar(loss);
            let grads = tape.backward(loss).unwrap();
            let g = vars
                .iter()
                .map(|&v| grads.wrt(v).unwrap().to_vec())
                .collect();
            (value, g)
        };
        let (err, c, k) = check_store(mlp.params(), &run, &|s| relu_pattern(s, &encoded, 100));
        max_error = max_error.max(err);
        checked += c;
        skipped += k;
    }
    // A handful of kink crossings is expected; a large share would mean the
    // check is not exercising the gradient.
    if skipped * 20 > checked {
        max_error = f64::INFINITY;
    }
    CaseResult {
        name: "field_mlp_bce",
        trials: TRIALS,
        max_error,
    }
}

/// x0-prediction MSE through the full transformer on a two-token layout.
pub fn denoiser_mse_case() -> CaseResult {
    let config = DenoiserConfig {
        hidden: 8,
        layers: 1,
        heads: 2,
        layout: TokenLayout::new(vec![3, 2]).unwrap(),
        ..DenoiserConfig::default()
    };
    let mut max_error = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial as u64);
        let mut model = TransformerDenoiser::<f32>::new(config.clone(), trial as u64)
            .unwrap()
            .cast::<f64>();
        // Scale the weights up so attention is far from uniform.
        for p in model.params_mut().iter_mut() {
            if p.name.ends_with("weight") && !p.name.contains("ln") {
                p.tensor.values_mut().iter_mut().for_each(|w| *w *= 20.0);
            }
        }
        let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ts = [rng.random_range(1..=500), rng.random_range(1..=500)];
        let run = |store: &ParamStore<f64>| -> (f64, Vec<Vec<f64>>) {
            let mut m = model.clone();
            *m.params_mut() = store.clone();
            let tape = Tape::new();
            let (pred, vars) = m.forward_tape(&tape, x.clone(), &ts).unwrap();
            let loss = tape.mse(pred, &target);
            let value = tape.scalar(loss);
            let grads = tape.backward(loss).unwrap();
            let g = vars
                .iter()
                .map(|&v| grads.wrt(v).unwrap().to_vec())
                .collect();
            (value, g)
        };
        max_error = max_error.max(check_store(model.params(), &run, &|_| Vec::new()).0);
    }
    CaseResult {
        name: "denoiser_mse",
        trials: TRIALS,
        max_error,
    }
}

pub fn all_cases() -> Vec<CaseResult> {
    let mut cases = primitive_cases();
    cases.push(field_bce_case());
    cases.push(denoiser_mse_case());
    cases
}
