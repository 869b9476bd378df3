//! Finite-difference gradient checks over every differentiable op, the
//! attention blocks and a toy network, at 64-bit precision.

use std::fmt;

use mbtnet::attention::{AxialAttention, Axis, ConvResidualBlock, ResidualTransformerBlock};
use mbtnet::model::{MbtNet, ModelConfig};
use mbtnet::tensor::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use mbtnet::tensor::{Graph, Op, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Identity on the forward pass with a scaled backward pass; spliced after
/// an op to simulate a broken gradient.
struct Corrupted;

impl Op<f64> for Corrupted {
    fn name(&self) -> &'static str {
        "corrupted"
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> mbtnet::Result<Tensor<f64>> {
        Ok(inputs[0].clone())
    }

    fn backward(
        &self,
        _inputs: &[&Tensor<f64>],
        _output: &Tensor<f64>,
        grad: &Tensor<f64>,
        _wanted: &[bool],
    ) -> Vec<Option<Tensor<f64>>> {
        vec![Some(grad.map(|g| 1.5 * g))]
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi)).expect("valid shape")
}

/// Values in `[0.1, 1)` with random sign, keeping relu inputs off the kink.
fn away_from_zero(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .expect("valid shape")
}

/// Replaces every parameter with noise; norm scales are drawn around 1.
fn randomize(store: &mut ParamStore<f64>, r: &mut impl Rng, bound: f64, only_zero_inits: bool) {
    for p in store.iter_mut() {
        let zero_init = p.value.data().iter().all(|&v| v == 0.0);
        if only_zero_inits && !zero_init {
            continue;
        }
        let around_one = p.name.ends_with(".scale");
        let shape = p.value.shape().to_vec();
        p.value = Tensor::from_fn(&shape, |_| {
            let u = r.random_range(-bound..bound);
            if around_one {
                1.0 + u
            } else {
                u
            }
        })
        .expect("valid shape");
    }
}

type Build<'a> = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> mbtnet::Result<Var> + 'a>;

/// Checks `f` with its inputs as parameters, contracting the output with a
/// fixed random weighting.
fn check_inputs(inputs: Vec<Tensor<f64>>, seed: u64, corrupt: bool, f: Build<'_>) -> mbtnet::Result<GradCheckReport> {
    let mut store = ParamStore::new();
    let ids = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t))
        .collect::<mbtnet::Result<Vec<_>>>()?;
    let mut weight: Option<Tensor<f64>> = None;
    let mut r = rng(seed ^ 0x5eed);
    gradient_check(
        &mut store,
        |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let mut out = f(g, &vars)?;
            if corrupt {
                out = g.apply(Corrupted, &[out])?;
            }
            let shape = g.value(out).shape().to_vec();
            let w = weight.get_or_insert_with(|| uniform(&shape, -1.0, 1.0, &mut r)).clone();
            let wv = g.constant(w);
            let prod = g.mul(out, wv)?;
            g.sum(prod)
        },
        &GradCheckOptions::new(OP_TOLERANCE),
    )
}

type ModuleFn<'a> = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> mbtnet::Result<Var> + 'a>;

fn check_module(
    mut store: ParamStore<f64>,
    x: Tensor<f64>,
    seed: u64,
    corrupt: bool,
    module: ModuleFn<'_>,
) -> mbtnet::Result<GradCheckReport> {
    let xid = store.add("input", x)?;
    let mut weight = None;
    let mut r = rng(seed);
    gradient_check(
        &mut store,
        |g, s| {
            let xv = g.param(s, xid);
            let mut y = module(g, s, xv)?;
            if corrupt {
                y = g.apply(Corrupted, &[y])?;
            }
            let shape = g.value(y).shape().to_vec();
            let w = weight.get_or_insert_with(|| uniform(&shape, -1.0, 1.0, &mut r)).clone();
            let wv = g.constant(w);
            let p = g.mul(y, wv)?;
            g.sum(p)
        },
        &GradCheckOptions::new(OP_TOLERANCE),
    )
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: Result<GradCheckReport, String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.report.as_ref().is_ok_and(|r| r.passed())
    }

    pub fn max_rel_error(&self) -> f64 {
        self.report.as_ref().map_or(f64::INFINITY, |r| r.max_rel_error())
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        match &self.report {
            Ok(r) => write!(
                f,
                "{status} {:<24} max_rel={:.3e} tol={:.0e} checked={} refined={} skipped={}",
                self.name,
                r.max_rel_error(),
                self.tolerance,
                r.checked(),
                r.refined(),
                r.skipped()
            ),
            Err(e) => write!(f, "{status} {:<24} error: {e}", self.name),
        }
    }
}

pub const CHECK_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "max_n",
    "sum",
    "mean",
    "softmax",
    "bce_with_logits",
    "concat_channels",
    "upsample_bilinear2x",
    "matmul",
    "conv2d",
    "conv2d_stride2",
    "instance_norm",
    "axial_attention_height",
    "axial_attention_width",
    "transformer_block",
    "conv_block",
    "full_model",
];

fn run_one(name: &'static str, corrupt: bool) -> mbtnet::Result<GradCheckReport> {
    let mut r = rng(CHECK_NAMES.iter().position(|&n| n == name).unwrap_or(0) as u64 + 100);
    let s = [2, 3, 3, 4];
    let two = |r: &mut ChaCha8Rng| vec![uniform(&s, -1.0, 1.0, r), uniform(&s, -1.0, 1.0, r)];
    let seed = r.random();
    match name {
        "add" => check_inputs(two(&mut r), seed, corrupt, Box::new(|g, v| g.add(v[0], v[1]))),
        "sub" => check_inputs(two(&mut r), seed, corrupt, Box::new(|g, v| g.sub(v[0], v[1]))),
        "mul" => check_inputs(two(&mut r), seed, corrupt, Box::new(|g, v| g.mul(v[0], v[1]))),
        "scale" => check_inputs(vec![uniform(&s, -1.0, 1.0, &mut r)], seed, corrupt, Box::new(|g, v| g.scale(v[0], -1.7))),
        "relu" => check_inputs(vec![away_from_zero(&s, &mut r)], seed, corrupt, Box::new(|g, v| g.relu(v[0]))),
        "sigmoid" => check_inputs(vec![uniform(&s, -3.0, 3.0, &mut r)], seed, corrupt, Box::new(|g, v| g.sigmoid(v[0]))),
        "max_n" => {
            let inputs = vec![
                uniform(&s, -1.0, 1.0, &mut r),
                uniform(&s, -1.0, 1.0, &mut r),
                uniform(&s, -1.0, 1.0, &mut r),
            ];
            check_inputs(inputs, seed, corrupt, Box::new(|g, v| g.max_n(v)))
        }
        "sum" => check_inputs(vec![uniform(&s, -1.0, 1.0, &mut r)], seed, corrupt, Box::new(|g, v| g.sum(v[0]))),
        "mean" => check_inputs(vec![uniform(&s, -1.0, 1.0, &mut r)], seed, corrupt, Box::new(|g, v| g.mean(v[0]))),
        "softmax" => check_inputs(vec![uniform(&s, -2.0, 2.0, &mut r)], seed, corrupt, Box::new(|g, v| g.softmax(v[0], 3))),
        "bce_with_logits" => {
            let inputs = vec![uniform(&s, -3.0, 3.0, &mut r), uniform(&s, 0.0, 1.0, &mut r)];
            check_inputs(inputs, seed, corrupt, Box::new(|g, v| g.bce_with_logits(v[0], v[1])))
        }
        "concat_channels" => {
            let inputs = vec![uniform(&[1, 2, 3, 3], -1.0, 1.0, &mut r), uniform(&[1, 3, 3, 3], -1.0, 1.0, &mut r)];
            check_inputs(inputs, seed, corrupt, Box::new(|g, v| g.concat_channels(v)))
        }
        "upsample_bilinear2x" => check_inputs(
            vec![uniform(&[1, 2, 3, 4], -1.0, 1.0, &mut r)],
            seed,
            corrupt,
            Box::new(|g, v| g.upsample_bilinear2x(v[0])),
        ),
        "matmul" => {
            let inputs = vec![uniform(&[3, 4], -1.0, 1.0, &mut r), uniform(&[4, 2], -1.0, 1.0, &mut r)];
            check_inputs(inputs, seed, corrupt, Box::new(|g, v| g.matmul(v[0], v[1])))
        }
        "conv2d" | "conv2d_stride2" => {
            let stride = if name == "conv2d" { 1 } else { 2 };
            let inputs = vec![
                uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut r),
                uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r),
                uniform(&[3], -1.0, 1.0, &mut r),
            ];
            check_inputs(inputs, seed, corrupt, Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, 1)))
        }
        "instance_norm" => {
            let inputs = vec![
                uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut r),
                uniform(&[3], 0.5, 1.5, &mut r),
                uniform(&[3], -0.5, 0.5, &mut r),
            ];
            check_inputs(inputs, seed, corrupt, Box::new(|g, v| g.instance_norm(v[0], v[1], v[2])))
        }
        "axial_attention_height" | "axial_attention_width" => {
            let axis = if name.ends_with("height") { Axis::Height } else { Axis::Width };
            let mut store = ParamStore::new();
            let layer = AxialAttention::new(&mut store, "attn", 4, 2, 3, &mut r)?;
            randomize(&mut store, &mut r, 0.8, false);
            let x = uniform(&[1, 4, 4, 5], -1.0, 1.0, &mut r);
            check_module(store, x, seed, corrupt, Box::new(move |g, s, x| layer.forward(g, s, x, axis)))
        }
        "transformer_block" => {
            let mut store = ParamStore::new();
            let block = ResidualTransformerBlock::new(&mut store, "block", 8, 2, 4, 2, &mut r)?;
            randomize(&mut store, &mut r, 0.8, false);
            let x = uniform(&[1, 8, 4, 4], -1.0, 1.0, &mut r);
            check_module(store, x, seed, corrupt, Box::new(move |g, s, x| block.forward(g, s, x)))
        }
        "conv_block" => {
            let mut store = ParamStore::new();
            let block = ConvResidualBlock::new(&mut store, "block", 3, 4, 2, &mut r)?;
            randomize(&mut store, &mut r, 0.8, false);
            let x = uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut r);
            check_module(store, x, seed, corrupt, Box::new(move |g, s, x| block.forward(g, s, x)))
        }
        "full_model" => full_model(corrupt),
        other => Err(mbtnet::Error::Config {
            field: "check".into(),
            reason: format!("unknown check `{other}`"),
        }),
    }
}

/// Toy network (32x32 input, widths 4..32) under the three-branch loss.
fn full_model(corrupt: bool) -> mbtnet::Result<GradCheckReport> {
    let cfg = ModelConfig {
        tr_depth: 2,
        widths: [4, 8, 16, 32],
        heads: 2,
        span: 8,
        input_size: (32, 32),
        ..ModelConfig::default()
    };
    let (net, mut store) = MbtNet::build::<f64>(&cfg, 3)?;
    let mut r = rng(3);
    randomize(&mut store, &mut r, 0.3, true);
    let x = uniform(&[1, 1, 32, 32], 0.0, 1.0, &mut r);
    let targets: Vec<Tensor<f64>> = (0..3)
        .map(|_| Tensor::from_fn(&[1, 1, 32, 32], |_| if r.random_bool(0.2) { 1.0 } else { 0.0 }))
        .collect::<mbtnet::Result<_>>()?;
    gradient_check(
        &mut store,
        |g, s| {
            let xv = g.constant(x.clone());
            let out = net.forward(g, s, xv)?;
            let heads = [Some(out.final_logits), out.edge_logits, out.body_logits];
            let mut total: Option<Var> = None;
            for (logits, y) in heads.into_iter().flatten().zip(&targets) {
                let logits = if corrupt { g.apply(Corrupted, &[logits])? } else { logits };
                let yv = g.constant(y.clone());
                let l = g.bce_with_logits(logits, yv)?;
                total = Some(match total {
                    None => l,
                    Some(t) => g.add(t, l)?,
                });
            }
            Ok(total.expect("final head always present"))
        },
        &GradCheckOptions::new(MODEL_TOLERANCE).sampled(4),
    )
}

/// Runs the named checks (all when `only` is empty). `corrupt` names a
/// check whose gradient is deliberately broken.
pub fn run_suite(only: &[String], corrupt: Option<&str>, mut on_result: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for &name in CHECK_NAMES {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        let tolerance = if name == "full_model" { MODEL_TOLERANCE } else { OP_TOLERANCE };
        let outcome = CheckOutcome {
            name,
            tolerance,
            report: run_one(name, corrupt == Some(name)).map_err(|e| e.to_string()),
        };
        on_result(&outcome);
        out.push(outcome);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elementwise_checks_pass() {
        let names: Vec<String> = ["add", "relu", "softmax"].iter().map(|s| s.to_string()).collect();
        let results = run_suite(&names, None, |_| {});
        assert_eq!(results.len(), 3);
        assert!(results.iter().all(|r| r.passed()), "{results:?}");
    }

    #[test]
    fn corrupted_op_is_named() {
        let names = vec!["mul".to_string(), "sigmoid".to_string()];
        let results = run_suite(&names, Some("sigmoid"), |_| {});
        assert!(results[0].passed());
        assert!(!results[1].passed());
        assert!(results[1].to_string().starts_with("FAIL sigmoid"));
    }
}
