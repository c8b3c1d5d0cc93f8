//! Finite-difference gradient suite.
//!
//! Every differentiable operation and every loss is checked against central
//! finite differences in the engine's f64 shadow mode. The reference side
//! ([`finite_difference_grad`]) never touches the backward implementation;
//! only the forward pass is replayed at perturbed inputs.

use ufse_core::align::adain_on_tape;
use ufse_core::loss::{
    content_loss, style_loss, total_loss, uncorrelation_loss, LossWeights,
};
use ufse_core::tape::{CorrelationMode, Tape, Var};
use ufse_core::tensor::Tensor;

use crate::{finite_difference_grad, max_relative_error, OracleRng};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

struct Check {
    name: &'static str,
    h: f64,
    tol: f64,
    inputs: Vec<(Vec<usize>, Vec<f64>)>,
    build: Build,
}

fn run_check(check: &Check, seed: u64) -> GradCheck {
    let total_len: usize = check.inputs.iter().map(|(_, d)| d.len()).sum();
    let mut theta = Vec::with_capacity(total_len);
    for (_, d) in &check.inputs {
        theta.extend_from_slice(d);
    }

    let eval = |theta: &[f64]| -> f64 {
        let mut tape = Tape::<f64>::new();
        let mut vars = Vec::with_capacity(check.inputs.len());
        let mut at = 0;
        for (dims, d) in &check.inputs {
            let t = Tensor::new(dims.clone(), theta[at..at + d.len()].to_vec())
                .expect("check input shapes are consistent");
            at += d.len();
            vars.push(tape.leaf(t));
        }
        let out = (check.build)(&mut tape, &vars);
        tape.value(out).item()
    };

    // Autodiff gradient.
    let mut tape = Tape::<f64>::new();
    let mut vars = Vec::with_capacity(check.inputs.len());
    let mut at = 0;
    for (dims, d) in &check.inputs {
        let t = Tensor::new(dims.clone(), theta[at..at + d.len()].to_vec())
            .expect("consistent")
            .with_grad();
        at += d.len();
        vars.push(tape.leaf(t));
    }
    let out = (check.build)(&mut tape, &vars);
    tape.backward(out).expect("backward on the check graph");
    let mut got = Vec::with_capacity(total_len);
    for (v, (_, d)) in vars.iter().zip(&check.inputs) {
        match tape.grad(*v) {
            Some(g) => got.extend_from_slice(g),
            None => got.extend(core::iter::repeat(0.0).take(d.len())),
        }
    }

    let want = finite_difference_grad(eval, &theta, check.h);
    GradCheck {
        name: check.name.to_string(),
        seed,
        max_rel_err: max_relative_error(&got, &want, 1e-4),
        tol: check.tol,
    }
}

fn uniform_vec(rng: &mut OracleRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(lo, hi)).collect()
}

/// Uniform with a margin away from zero (for kinked activations).
fn margined_vec(rng: &mut OracleRng, n: usize, margin: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u = rng.uniform(-1.0, 1.0);
            u.signum() * (margin + u.abs())
        })
        .collect()
}

/// Ensure each 2x2 pooling window has a clear maximum.
fn pool_safe_vec(rng: &mut OracleRng, c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut v = uniform_vec(rng, c * h * w, -1.0, 1.0);
    for ci in 0..c {
        for oy in 0..h / 2 {
            for ox in 0..w / 2 {
                let base = ci * h * w + 2 * oy * w + 2 * ox;
                let idx = [base, base + 1, base + w, base + w + 1];
                let mut best = idx[0];
                for &i in &idx[1..] {
                    if v[i] > v[best] {
                        best = i;
                    }
                }
                let second = idx
                    .iter()
                    .filter(|&&i| i != best)
                    .map(|&i| v[i])
                    .fold(f64::NEG_INFINITY, f64::max);
                if v[best] - second < 1e-2 {
                    v[best] += 2e-2;
                }
            }
        }
    }
    v
}

/// Random projection: mean(out * p) with a fixed constant p, so every
/// output entry's gradient is exercised.
fn projected(tape: &mut Tape<f64>, out: Var, rng: &mut OracleRng) -> Var {
    let dims = tape.value(out).dims().to_vec();
    let n = tape.value(out).len();
    let p = Tensor::new(dims, uniform_vec(rng, n, 0.5, 1.5)).expect("projection shape");
    let pv = tape.leaf(p);
    let prod = tape.mul(out, pv).expect("projection product");
    tape.reduce_mean(prod)
}

fn checks_for_seed(seed: u64) -> Vec<Check> {
    let mut rng = OracleRng::new(seed.wrapping_mul(0x9E37).wrapping_add(17));
    let mut list: Vec<Check> = Vec::new();

    // conv2d, gradients w.r.t. input, weight, and bias; stride 1 padded.
    {
        let x = uniform_vec(&mut rng, 2 * 6 * 6, -1.0, 1.0);
        let w = uniform_vec(&mut rng, 3 * 2 * 9, -0.7, 0.7);
        let b = uniform_vec(&mut rng, 3, -0.3, 0.3);
        let prng = OracleRng::new(seed ^ 0xA1);
        list.push(Check {
            name: "conv2d(stride=1, pad=1)",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![
                (vec![1, 2, 6, 6], x),
                (vec![3, 2, 3, 3], w),
                (vec![3], b),
            ],
            build: Box::new(move |tape, v| {
                let out = tape.conv2d(v[0], v[1], v[2], 1, 1).expect("conv");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    // conv2d with stride 2, no padding.
    {
        let x = uniform_vec(&mut rng, 2 * 7 * 7, -1.0, 1.0);
        let w = uniform_vec(&mut rng, 2 * 2 * 9, -0.7, 0.7);
        let b = uniform_vec(&mut rng, 2, -0.3, 0.3);
        let prng = OracleRng::new(seed ^ 0xA2);
        list.push(Check {
            name: "conv2d(stride=2, pad=0)",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![
                (vec![1, 2, 7, 7], x),
                (vec![2, 2, 3, 3], w),
                (vec![2], b),
            ],
            build: Box::new(move |tape, v| {
                let out = tape.conv2d(v[0], v[1], v[2], 2, 0).expect("conv");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = margined_vec(&mut rng, 24, 0.05);
        let prng = OracleRng::new(seed ^ 0xA3);
        list.push(Check {
            name: "relu",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![24], x)],
            build: Box::new(move |tape, v| {
                let out = tape.relu(v[0]);
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    for (name, which) in [("add", 0u8), ("sub", 1u8), ("mul", 2u8)] {
        let a = uniform_vec(&mut rng, 24, -1.0, 1.0);
        let b = uniform_vec(&mut rng, 24, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ (0xB0 + which as u64));
        list.push(Check {
            name: match which {
                0 => "add",
                1 => "sub",
                _ => "mul",
            },
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![2, 3, 4], a), (vec![2, 3, 4], b)],
            build: Box::new(move |tape, v| {
                let out = match which {
                    0 => tape.add(v[0], v[1]),
                    1 => tape.sub(v[0], v[1]),
                    _ => tape.mul(v[0], v[1]),
                }
                .expect(name);
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 12, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xB8);
        list.push(Check {
            name: "mul_scalar",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![12], x)],
            build: Box::new(move |tape, v| {
                let out = tape.mul_scalar(v[0], 1.7);
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 12, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xB9);
        list.push(Check {
            name: "add_scalar",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![12], x)],
            build: Box::new(move |tape, v| {
                let out = tape.add_scalar(v[0], -0.4);
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 12, 0.2, 2.0);
        let prng = OracleRng::new(seed ^ 0xBA);
        list.push(Check {
            name: "sqrt",
            h: 1e-6,
            tol: 1e-3,
            inputs: vec![(vec![12], x)],
            build: Box::new(move |tape, v| {
                let out = tape.sqrt(v[0]);
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 12, 0.5, 2.0);
        let prng = OracleRng::new(seed ^ 0xBB);
        list.push(Check {
            name: "recip",
            h: 1e-6,
            tol: 1e-3,
            inputs: vec![(vec![12], x)],
            build: Box::new(move |tape, v| {
                let out = tape.recip(v[0]);
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 12, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xBC);
        list.push(Check {
            name: "reshape",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![2, 6], x)],
            build: Box::new(move |tape, v| {
                let out = tape.reshape(v[0], vec![3, 4]).expect("reshape");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 24, -1.0, 1.0);
        list.push(Check {
            name: "reduce_mean",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![24], x)],
            build: Box::new(|tape, v| tape.reduce_mean(v[0])),
        });
    }
    {
        let x = uniform_vec(&mut rng, 24, -1.0, 1.0);
        list.push(Check {
            name: "reduce_var",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![24], x)],
            build: Box::new(|tape, v| tape.reduce_var(v[0]).expect("reduce_var")),
        });
    }
    {
        let x = uniform_vec(&mut rng, 2 * 3 * 16, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xBD);
        list.push(Check {
            name: "channel_mean",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![2, 3, 4, 4], x)],
            build: Box::new(move |tape, v| {
                let out = tape.channel_mean(v[0]).expect("channel_mean");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 2 * 3 * 16, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xBE);
        list.push(Check {
            name: "channel_var",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![2, 3, 4, 4], x)],
            build: Box::new(move |tape, v| {
                let out = tape.channel_var(v[0]).expect("channel_var");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    for (idx, name) in ["bc_add", "bc_sub", "bc_mul"].iter().enumerate() {
        let x = uniform_vec(&mut rng, 3 * 16, -1.0, 1.0);
        let c = uniform_vec(&mut rng, 3, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ (0xC0 + idx as u64));
        list.push(Check {
            name,
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![1, 3, 4, 4], x), (vec![1, 3, 1, 1], c)],
            build: Box::new(move |tape, v| {
                let out = match idx {
                    0 => tape.bc_add(v[0], v[1]),
                    1 => tape.bc_sub(v[0], v[1]),
                    _ => tape.bc_mul(v[0], v[1]),
                }
                .expect("broadcast");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 12, -1.0, 1.0);
        let c = uniform_vec(&mut rng, 1, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xC4);
        list.push(Check {
            name: "bc_scalar",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![3, 4], x), (Vec::new(), c)],
            build: Box::new(move |tape, v| {
                let out = tape.bc_mul(v[0], v[1]).expect("broadcast scalar");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let a = uniform_vec(&mut rng, 12, -1.0, 1.0);
        let b = uniform_vec(&mut rng, 20, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xC5);
        list.push(Check {
            name: "matmul",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![3, 4], a), (vec![4, 5], b)],
            build: Box::new(move |tape, v| {
                let out = tape.matmul(v[0], v[1]).expect("matmul");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 30, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xC6);
        list.push(Check {
            name: "gram",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![3, 10], x)],
            build: Box::new(move |tape, v| {
                let out = tape.gram(v[0], 1.0 / 30.0).expect("gram");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    for (mode, name) in [
        (CorrelationMode::Signed, "offdiag_sum(signed)"),
        (CorrelationMode::Absolute, "offdiag_sum(absolute)"),
    ] {
        let x = margined_vec(&mut rng, 16, 0.01);
        list.push(Check {
            name,
            h: 1e-6,
            tol: 1e-3,
            inputs: vec![(vec![4, 4], x)],
            build: Box::new(move |tape, v| tape.offdiag_sum(v[0], mode).expect("offdiag")),
        });
    }
    {
        let x = pool_safe_vec(&mut rng, 2, 6, 6);
        let prng = OracleRng::new(seed ^ 0xC7);
        list.push(Check {
            name: "maxpool_2x",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![1, 2, 6, 6], x)],
            build: Box::new(move |tape, v| {
                let out = tape.maxpool_2x(v[0]).expect("maxpool");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let x = uniform_vec(&mut rng, 2 * 9, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xC8);
        list.push(Check {
            name: "upsample_nearest_2x",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![1, 2, 3, 3], x)],
            build: Box::new(move |tape, v| {
                let out = tape.upsample_nearest_2x(v[0]).expect("upsample");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let xc = uniform_vec(&mut rng, 3 * 25, -1.0, 1.0);
        let xs = uniform_vec(&mut rng, 3 * 25, -1.0, 1.0);
        let prng = OracleRng::new(seed ^ 0xC9);
        list.push(Check {
            name: "adain",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![1, 3, 5, 5], xc), (vec![1, 3, 5, 5], xs)],
            build: Box::new(move |tape, v| {
                let out = adain_on_tape(tape, v[0], v[1], 1e-5).expect("adain");
                projected(tape, out, &mut prng.clone())
            }),
        });
    }
    {
        let a = uniform_vec(&mut rng, 2 * 16, -1.0, 1.0);
        let b = uniform_vec(&mut rng, 2 * 16, -1.0, 1.0);
        list.push(Check {
            name: "content_loss",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![1, 2, 4, 4], a), (vec![1, 2, 4, 4], b)],
            build: Box::new(|tape, v| content_loss(tape, v[0], v[1]).expect("content")),
        });
    }
    {
        let o1 = uniform_vec(&mut rng, 2 * 16, -1.0, 1.0);
        let o2 = uniform_vec(&mut rng, 3 * 4, -1.0, 1.0);
        let s1 = uniform_vec(&mut rng, 2 * 16, -1.0, 1.0);
        let s2 = uniform_vec(&mut rng, 3 * 4, -1.0, 1.0);
        list.push(Check {
            name: "style_loss",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![
                (vec![1, 2, 4, 4], o1),
                (vec![1, 3, 2, 2], o2),
                (vec![1, 2, 4, 4], s1),
                (vec![1, 3, 2, 2], s2),
            ],
            build: Box::new(|tape, v| {
                let out = vec![("tap1".to_string(), v[0]), ("tap2".to_string(), v[1])];
                let sty = vec![("tap1".to_string(), v[2]), ("tap2".to_string(), v[3])];
                style_loss(tape, &out, &sty).expect("style")
            }),
        });
    }
    for (mode, name) in [
        (CorrelationMode::Signed, "uncorrelation_loss(signed)"),
        (CorrelationMode::Absolute, "uncorrelation_loss(absolute)"),
    ] {
        let fc = uniform_vec(&mut rng, 4 * 16, -1.0, 1.0);
        let fs = uniform_vec(&mut rng, 4 * 16, -1.0, 1.0);
        list.push(Check {
            name,
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(vec![1, 4, 4, 4], fc), (vec![1, 4, 4, 4], fs)],
            build: Box::new(move |tape, v| {
                uncorrelation_loss(tape, v[0], v[1], mode).expect("uncorrelation")
            }),
        });
    }
    {
        let c = uniform_vec(&mut rng, 1, 0.1, 2.0);
        let s = uniform_vec(&mut rng, 1, 0.1, 2.0);
        let u = uniform_vec(&mut rng, 1, 0.1, 2.0);
        list.push(Check {
            name: "total_loss",
            h: 1e-5,
            tol: 1e-3,
            inputs: vec![(Vec::new(), c), (Vec::new(), s), (Vec::new(), u)],
            build: Box::new(|tape, v| {
                total_loss(tape, v[0], v[1], v[2], &LossWeights::default()).expect("total")
            }),
        });
    }

    list
}

/// The three-layer conv/relu network check at the coarse step size,
/// gradients w.r.t. every parameter and the input.
fn conv_net_check(seed: u64) -> Check {
    // Re-draw until every pre-activation clears the relu kink by a margin
    // comfortably above h = 1e-3.
    let mut attempt = 0u64;
    loop {
        let mut rng = OracleRng::new(seed.wrapping_mul(31).wrapping_add(attempt));
        let widths = [(2usize, 3usize), (3, 3), (3, 2)];
        let x = uniform_vec(&mut rng, 2 * 8 * 8, -1.0, 1.0);
        let mut inputs = vec![(vec![1, 2, 8, 8], x)];
        for &(ci, co) in &widths {
            inputs.push((vec![co, ci, 3, 3], uniform_vec(&mut rng, co * ci * 9, -0.5, 0.5)));
            inputs.push((vec![co], uniform_vec(&mut rng, co, -0.2, 0.2)));
        }

        let build: Build = Box::new(move |tape: &mut Tape<f64>, v: &[Var]| {
            let mut cur = v[0];
            for layer in 0..3 {
                cur = tape
                    .conv2d(cur, v[1 + 2 * layer], v[2 + 2 * layer], 1, 1)
                    .expect("conv");
                cur = tape.relu(cur);
            }
            let sq = tape.mul(cur, cur).expect("square");
            tape.reduce_mean(sq)
        });

        // Margin probe: forward once and inspect pre-relu activations.
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|(dims, d)| {
                tape.leaf(Tensor::new(dims.clone(), d.clone()).expect("consistent"))
            })
            .collect();
        let mut cur = vars[0];
        let mut margin_ok = true;
        for layer in 0..3 {
            cur = tape
                .conv2d(cur, vars[1 + 2 * layer], vars[2 + 2 * layer], 1, 1)
                .expect("conv");
            if tape.value(cur).data().iter().any(|v| v.abs() < 5e-3) {
                margin_ok = false;
                break;
            }
            cur = tape.relu(cur);
        }
        if margin_ok {
            return Check {
                name: "conv3_relu_network(all parameters, h=1e-3)",
                h: 1e-3,
                tol: 1e-3,
                inputs,
                build,
            };
        }
        attempt += 1;
        assert!(attempt < 1000, "could not find kink-free conv net inputs");
    }
}

/// Run the full suite for one seed.
pub fn run_suite(seed: u64) -> Vec<GradCheck> {
    let mut results: Vec<GradCheck> = checks_for_seed(seed)
        .iter()
        .map(|c| run_check(c, seed))
        .collect();
    results.push(run_check(&conv_net_check(seed), seed));
    results
}

/// Run the suite across seeds, returning every result.
pub fn run_suite_seeds(seeds: &[u64]) -> Vec<GradCheck> {
    seeds.iter().flat_map(|&s| run_suite(s)).collect()
}
