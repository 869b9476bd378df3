mod common;

use common::oracles;
use common::{away_from_zero, check_op, max_abs_diff, rng, uniform};
use mbtnet::tensor::gradcheck::{gradient_check, GradCheckOptions};
use mbtnet::tensor::{Graph, ParamStore, Tensor};
use mbtnet::Error;
use proptest::prelude::*;
use rand::Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

#[test]
fn conv_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3]).unwrap());
    let k = g.constant(t(&[1, 1, 1, 1], &[2.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, k, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 3, 3]);
    assert!(g.value(y).data().iter().all(|&v| v == 2.0));

    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let k = g.constant(t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = g.conv2d(x, k, Some(b), 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[5.0]);
}

#[test]
fn conv_stride_two_matches_loop_oracle() {
    let mut r = rng(11);
    let x: Tensor<f32> = uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r).cast();
    let k: Tensor<f32> = uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r).cast();
    let b: Tensor<f32> = uniform(&[4], -1.0, 1.0, &mut r).cast();
    let mut g = Graph::<f32>::new();
    let (xv, kv, bv) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(b.clone()));
    let y = g.conv2d(xv, kv, Some(bv), 2, 1).unwrap();
    let (want, shape) = oracles::conv2d(
        &x.cast::<f64>().into_data(),
        [2, 3, 8, 8],
        &k.cast::<f64>().into_data(),
        [4, 3, 3, 3],
        &b.cast::<f64>().into_data(),
        2,
        1,
    );
    assert_eq!(g.value(y).shape(), &shape);
    let got = g.value(y).cast::<f64>().into_data();
    assert!(max_abs_diff(&got, &want) < 1e-6);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 2, 4, 4]).unwrap());
    let k = g.constant(Tensor::ones(&[1, 3, 3, 3]).unwrap());
    let err = g.conv2d(x, k, None, 1, 1).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("conv2d"), "{err}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let s = g.softmax(a, 0).unwrap();
    for &v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let a = g.constant(t(&[2], &[1000.0, 0.0]));
    let s = g.softmax(a, 0).unwrap();
    assert!((g.value(s).data()[0] - 1.0).abs() < 1e-12);
    assert!(g.value(s).data()[1].abs() < 1e-12);

    let mut r = rng(3);
    let v = uniform(&[5], -3.0, 3.0, &mut r);
    let a = g.constant(v.clone());
    let s = g.softmax(a, 0).unwrap();
    assert!(max_abs_diff(g.value(s).data(), &oracles::softmax(v.data())) < 1e-7);
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], &[1.0, 5.0]));
    let b = g.constant(t(&[2], &[4.0, 2.0]));
    let c = g.constant(t(&[2], &[3.0, 3.0]));
    let m = g.max_n(&[a, b, c]).unwrap();
    assert_eq!(g.value(m).data(), &[4.0, 5.0]);
    let x = g.constant(t(&[3], &[-2.0, 0.0, 3.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 3.0]);
    let err = g.add(a, x).unwrap_err().to_string();
    assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
}

#[test]
fn bilinear_example_matches_closed_form() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.upsample_bilinear2x(x).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 4, 4]);
    let want = oracles::upsample2x(&[1.0, 2.0, 3.0, 4.0], 2, 2);
    assert!(max_abs_diff(g.value(y).data(), &want) < 1e-6);
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", t(&[3], &[0.5, -1.0, 2.0])).unwrap();
    let mut g = Graph::new();
    let p = g.param(&store, id);
    let l = g.sum(p).unwrap();
    g.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[1.0, 1.0, 1.0]);

    store.zero_grads();
    let mut g = Graph::new();
    let p = g.param(&store, id);
    let sq = g.mul(p, p).unwrap();
    let l = g.sum(sq).unwrap();
    g.backward_into(l, &mut store).unwrap();
    assert_eq!(store.get(id).grad.data(), &[1.0, -2.0, 4.0]);
    assert!(g.backward(p).is_err());
}

#[test]
fn gradient_check_quadratic() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", t(&[3], &[0.3, -1.2, 2.0])).unwrap();
    let report = gradient_check(
        &mut store,
        |g, s| {
            let p = g.param(s, id);
            let sq = g.mul(p, p).unwrap();
            g.sum(sq)
        },
        &GradCheckOptions::new(1e-9),
    )
    .unwrap();
    assert!(report.max_rel_error() < 1e-9, "{report}");
}

#[test]
fn gradient_check_conv_relu_sum() {
    let mut r = rng(5);
    let x = uniform(&[1, 2, 5, 5], -1.0, 1.0, &mut r);
    let k = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let b = uniform(&[3], -0.5, 0.5, &mut r);
    let report = check_op(vec![x, k, b], 5, |g, v| {
        let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
        g.relu(y)
    });
    assert!(report.passed(), "{report}");
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut r = rng(9);
        let mut store = ParamStore::<f32>::new();
        let k = store.add_uniform("k", &[2, 1, 3, 3], 0.5, &mut r).unwrap();
        let x: Tensor<f32> = uniform(&[1, 1, 6, 6], 0.0, 1.0, &mut r).cast();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let kv = g.param(&store, k);
        let y = g.conv2d(xv, kv, None, 1, 1).unwrap();
        let y = g.upsample_bilinear2x(y).unwrap();
        let l = g.mean(y).unwrap();
        g.backward_into(l, &mut store).unwrap();
        (g.value(y).clone(), store.get(k).grad.clone())
    };
    assert_eq!(run(), run());
}

fn dims(r: &mut impl Rng) -> [usize; 4] {
    [r.random_range(1..3), r.random_range(1..4), r.random_range(2..6), r.random_range(2..6)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv_matches_oracle(seed in any::<u64>(), stride in 1usize..3, pad in 0usize..2) {
        let mut r = rng(seed);
        let [b, cin, h, w] = dims(&mut r);
        let (h, w) = (h + 1, w + 1);
        let cout = r.random_range(1..4);
        let kk = r.random_range(1..4);
        let x: Tensor<f32> = uniform(&[b, cin, h, w], -1.0, 1.0, &mut r).cast();
        let k: Tensor<f32> = uniform(&[cout, cin, kk, kk], -1.0, 1.0, &mut r).cast();
        let bias: Tensor<f32> = uniform(&[cout], -1.0, 1.0, &mut r).cast();
        let mut g = Graph::<f32>::new();
        let (xv, kv, bv) = (g.constant(x.clone()), g.constant(k.clone()), g.constant(bias.clone()));
        let y = g.conv2d(xv, kv, Some(bv), stride, pad).unwrap();
        let (want, shape) = oracles::conv2d(
            &x.cast::<f64>().into_data(), [b, cin, h, w],
            &k.cast::<f64>().into_data(), [cout, cin, kk, kk],
            &bias.cast::<f64>().into_data(), stride, pad,
        );
        prop_assert_eq!(g.value(y).shape(), &shape[..]);
        let got = g.value(y).cast::<f64>().into_data();
        prop_assert!(max_abs_diff(&got, &want) < 1e-6);
    }

    #[test]
    fn softmax_slices_are_distributions(seed in any::<u64>(), axis in 0usize..3) {
        let mut r = rng(seed);
        let x = uniform(&[3, 4, 5], -50.0, 50.0, &mut r);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x);
        let s = g.softmax(xv, axis).unwrap();
        let v = g.value(s);
        let shape = [3usize, 4, 5];
        let stride: usize = shape[axis + 1..].iter().product();
        for base in 0..60 {
            if !(base / stride).is_multiple_of(shape[axis]) {
                continue;
            }
            let total: f64 = (0..shape[axis]).map(|i| v.data()[base + i * stride]).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
        prop_assert!(v.data().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn upsample_matches_closed_form(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(1..6), r.random_range(1..6));
        let x = uniform(&[1, 1, h, w], -1.0, 1.0, &mut r);
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone());
        let y = g.upsample_bilinear2x(xv).unwrap();
        prop_assert!(max_abs_diff(g.value(y).data(), &oracles::upsample2x(x.data(), h, w)) < 1e-12);
    }

    #[test]
    fn grad_binary_ops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = dims(&mut r);
        let a = uniform(&s, -1.0, 1.0, &mut r);
        let b = uniform(&s, -1.0, 1.0, &mut r);
        for which in 0..3 {
            let rep = check_op(vec![a.clone(), b.clone()], seed, |g, v| match which {
                0 => g.add(v[0], v[1]),
                1 => g.sub(v[0], v[1]),
                _ => g.mul(v[0], v[1]),
            });
            prop_assert!(rep.passed(), "{}", rep);
        }
    }

    #[test]
    fn grad_unary_ops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = dims(&mut r);
        let a = away_from_zero(&s, &mut r);
        for which in 0..4 {
            let rep = check_op(vec![a.clone()], seed, |g, v| match which {
                0 => g.relu(v[0]),
                1 => g.sigmoid(v[0]),
                2 => g.scale(v[0], -1.7),
                _ => g.mean(v[0]),
            });
            prop_assert!(rep.passed(), "{}", rep);
        }
    }

    #[test]
    fn grad_max_of_three(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = dims(&mut r);
        let n: usize = s.iter().product();
        // distinct values so no element sits on a tie
        let mut vals: Vec<f64> = (0..3 * n).map(|i| i as f64 * 0.01).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, r.random_range(0..=i));
        }
        let parts: Vec<Tensor<f64>> = vals.chunks(n).map(|c| Tensor::new(&s, c.to_vec()).unwrap()).collect();
        let rep = check_op(parts, seed, |g, v| g.max_n(v));
        prop_assert!(rep.passed(), "{}", rep);
    }

    #[test]
    fn grad_shape_ops(seed in any::<u64>()) {
        let mut r = rng(seed);
        let [b, c, h, w] = dims(&mut r);
        let c2 = r.random_range(1..4);
        let a = uniform(&[b, c, h, w], -1.0, 1.0, &mut r);
        let a2 = uniform(&[b, c2, h, w], -1.0, 1.0, &mut r);
        let rep = check_op(vec![a.clone(), a2], seed, |g, v| g.concat_channels(v));
        prop_assert!(rep.passed(), "{}", rep);
        let rep = check_op(vec![a.clone()], seed, |g, v| g.upsample_bilinear2x(v[0]));
        prop_assert!(rep.passed(), "{}", rep);
        let (m, k, n) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let x = uniform(&[m, k], -1.0, 1.0, &mut r);
        let y = uniform(&[k, n], -1.0, 1.0, &mut r);
        let rep = check_op(vec![x, y], seed, |g, v| g.matmul(v[0], v[1]));
        prop_assert!(rep.passed(), "{}", rep);
    }

    #[test]
    fn grad_softmax(seed in any::<u64>(), axis in 0usize..4) {
        let mut r = rng(seed);
        let s = dims(&mut r);
        let a = uniform(&s, -2.0, 2.0, &mut r);
        let rep = check_op(vec![a], seed, |g, v| g.softmax(v[0], axis));
        prop_assert!(rep.passed(), "{}", rep);
    }

    #[test]
    fn grad_instance_norm(seed in any::<u64>()) {
        let mut r = rng(seed);
        let [b, c, _, _] = dims(&mut r);
        let (h, w) = (r.random_range(2..5), r.random_range(2..5));
        let x = uniform(&[b, c, h, w], -1.0, 1.0, &mut r);
        let scale = uniform(&[c], 0.5, 1.5, &mut r);
        let shift = uniform(&[c], -0.5, 0.5, &mut r);
        let rep = check_op(vec![x, scale, shift], seed, |g, v| g.instance_norm(v[0], v[1], v[2]));
        prop_assert!(rep.passed(), "{}", rep);
    }

    #[test]
    fn grad_conv2d(seed in any::<u64>(), stride in 1usize..3, pad in 0usize..2, with_bias: bool) {
        let mut r = rng(seed);
        let [b, cin, h, w] = dims(&mut r);
        let (h, w) = (h + 1, w + 1);
        let cout = r.random_range(1..4);
        let kk = r.random_range(1..4);
        let mut inputs = vec![
            uniform(&[b, cin, h, w], -1.0, 1.0, &mut r),
            uniform(&[cout, cin, kk, kk], -1.0, 1.0, &mut r),
        ];
        if with_bias {
            inputs.push(uniform(&[cout], -1.0, 1.0, &mut r));
        }
        let rep = check_op(inputs, seed, |g, v| g.conv2d(v[0], v[1], v.get(2).copied(), stride, pad));
        prop_assert!(rep.passed(), "{}", rep);
    }

    #[test]
    fn grad_bce_and_sum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = dims(&mut r);
        let z = uniform(&s, -4.0, 4.0, &mut r);
        let y = uniform(&s, 0.0, 1.0, &mut r);
        let rep = check_op(vec![z.clone()], seed, |g, v| {
            let yv = g.constant(y.clone());
            g.bce_with_logits(v[0], yv)
        });
        prop_assert!(rep.passed(), "{}", rep);
        let rep = check_op(vec![z], seed, |g, v| g.sum(v[0]));
        prop_assert!(rep.passed(), "{}", rep);
    }
}
