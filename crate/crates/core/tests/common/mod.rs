#![allow(dead_code)]

pub mod oracles;

use mbtnet::attention::AxialAttention;
use mbtnet::tensor::gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
use mbtnet::tensor::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
}

/// Values in `[-1, -0.1] U [0.1, 1]`, away from relu kinks.
pub fn away_from_zero(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .unwrap()
}

/// Replaces every parameter value with uniform noise. Norm scales are drawn
/// around 1 so activations stay well conditioned.
pub fn randomize(store: &mut ParamStore<f64>, rng: &mut impl Rng, bound: f64) {
    for p in store.iter_mut() {
        let around_one = p.name.ends_with(".scale");
        let shape = p.value.shape().to_vec();
        p.value = Tensor::from_fn(&shape, |_| {
            let u = rng.random_range(-bound..bound);
            if around_one {
                1.0 + u
            } else {
                u
            }
        })
        .unwrap();
    }
}

/// Gradient check of `f` with its inputs treated as parameters. The output
/// is contracted against a fixed random weighting so every output element
/// carries a distinct upstream gradient.
pub fn check_op<F>(inputs: Vec<Tensor<f64>>, seed: u64, f: F) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> mbtnet::Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t).unwrap())
        .collect();
    let mut weight: Option<Tensor<f64>> = None;
    let mut r = rng(seed ^ 0x5eed);
    gradient_check(
        &mut store,
        |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let out = f(g, &vars)?;
            let shape = g.value(out).shape().to_vec();
            let w = weight.get_or_insert_with(|| uniform(&shape, -1.0, 1.0, &mut r)).clone();
            let wv = g.constant(w);
            let prod = g.mul(out, wv)?;
            g.sum(prod)
        },
        &GradCheckOptions::new(1e-4),
    )
    .unwrap()
}

/// Splits an attention layer's weights into per-head oracle structs.
pub fn heads_of(layer: &AxialAttention, store: &ParamStore<f64>) -> Vec<oracles::Head> {
    let c = layer.in_channels;
    let (dq, dv) = (layer.key_dim, layer.value_dim);
    let rows = 2 * layer.span - 1;
    let wq = store.get(layer.w_q.weight).value.data();
    let wk = store.get(layer.w_k.weight).value.data();
    let wv = store.get(layer.w_v.weight).value.data();
    let rq = store.get(layer.r_q).value.data();
    let rk = store.get(layer.r_k).value.data();
    let rv = store.get(layer.r_v).value.data();
    (0..layer.heads)
        .map(|h| oracles::Head {
            wq: wq[h * dq * c..(h + 1) * dq * c].to_vec(),
            wk: wk[h * dq * c..(h + 1) * dq * c].to_vec(),
            wv: wv[h * dv * c..(h + 1) * dv * c].to_vec(),
            rq: rq[h * rows * dq..(h + 1) * rows * dq].to_vec(),
            rk: rk[h * rows * dq..(h + 1) * rows * dq].to_vec(),
            rv: rv[h * rows * dv..(h + 1) * rows * dv].to_vec(),
            dq,
            dv,
        })
        .collect()
}

/// Runs the dense oracle for every head and image and concatenates head
/// outputs along channels.
pub fn dense_layer(x: &Tensor<f64>, heads: &[oracles::Head], span: usize, along_width: bool) -> Vec<f64> {
    let [b, c, h, w] = x.shape()[..] else { panic!() };
    let mut out = Vec::new();
    for n in 0..b {
        let img = &x.data()[n * c * h * w..(n + 1) * c * h * w];
        for head in heads {
            out.extend(oracles::axial_head(img, c, h, w, head, span, along_width));
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
