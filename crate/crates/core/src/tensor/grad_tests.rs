//! Finite-difference checks of every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds a scalar loss from the parameters in `store` and compares the
/// analytic gradient with central differences, probing a handful of entries.
fn check<F>(store: &mut ParamStore, build: F)
where
    F: Fn(&mut Graph, &ParamStore) -> Var,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss);
    let eps = 1e-2f32;
    for id in store.ids().collect::<Vec<_>>() {
        if !store.is_trainable(id) {
            continue;
        }
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()));
        let n = store.get(id).numel();
        let probes: Vec<usize> = (0..n).step_by((n / 7).max(1)).collect();
        for i in probes {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + eps;
            let mut gp = Graph::inference();
            let lp = build(&mut gp, store);
            let up = gp.value(lp).data()[0];
            store.get_mut(id).data_mut()[i] = orig - eps;
            let mut gm = Graph::inference();
            let lm = build(&mut gm, store);
            let down = gm.value(lm).data()[0];
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!(
                (a - numeric).abs() <= 2e-2 * (1.0 + numeric.abs()),
                "{}[{i}]: analytic {a} vs numeric {numeric}",
                store.name(id)
            );
        }
    }
}

/// Reduces any tensor to a scalar with non-uniform weights.
fn weighted_sum(g: &mut Graph, v: Var) -> Var {
    let n = g.value(v).numel();
    let flat = g.reshape(v, &[1, n]);
    let w: Vec<f32> = (0..n).map(|i| ((i * 7 % 11) as f32 - 5.0) * 0.1).collect();
    let wv = g.input(Tensor::new(&[n, 1], w));
    let out = g.linear(flat, wv, None);
    g.reshape(out, &[1])
}

#[test]
fn linear_relu_layer_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 4], &mut rng));
    let w = store.add("w", random(&[4, 5], &mut rng));
    let b = store.add("b", random(&[5], &mut rng));
    let gamma = store.add("gamma", random(&[5], &mut rng));
    let beta = store.add("beta", random(&[5], &mut rng));
    check(&mut store, |g, s| {
        let (x, w, b) = (g.param(s, x), g.param(s, w), g.param(s, b));
        let y = g.linear(x, w, Some(b));
        let y = g.relu(y);
        let (ga, be) = (g.param(s, gamma), g.param(s, beta));
        let y = g.layer_norm(y, ga, be);
        let y = g.scale(y, 0.7);
        weighted_sum(g, y)
    });
}

#[test]
fn attention_path_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let q = store.add("q", random(&[2, 3, 4], &mut rng));
    let k = store.add("k", random(&[2, 5, 4], &mut rng));
    let v = store.add("v", random(&[2, 5, 4], &mut rng));
    let pad = [false, false, false, true, true, false, false, false, false, true];
    check(&mut store, |g, s| {
        let (q, k, v) = (g.param(s, q), g.param(s, k), g.param(s, v));
        let scores = g.batch_matmul(q, k, false, true);
        let p = g.masked_softmax(scores, Some(&pad), false, 1);
        let ctx = g.batch_matmul(p, v, false, false);
        let t = g.permute(ctx, &[0, 2, 1]);
        let back = g.batch_matmul(t, q, true, true);
        let both = g.add(back, back);
        weighted_sum(g, both)
    });
}

#[test]
fn causal_softmax_zeroes_future_positions() {
    let mut g = Graph::inference();
    let s = g.input(Tensor::new(&[1, 3, 3], vec![1.0; 9]));
    let p = g.masked_softmax(s, None, true, 1);
    let p = g.value(p).data();
    assert_eq!(&p[0..3], &[1.0, 0.0, 0.0]);
    assert_eq!(&p[3..6], &[0.5, 0.5, 0.0]);
}

#[test]
fn embedding_and_cross_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let table = store.add("table", random(&[6, 4], &mut rng));
    let w = store.add("w", random(&[4, 6], &mut rng));
    check(&mut store, |g, s| {
        let t = g.param(s, table);
        let e = g.embedding(t, &[1, 3, 3, 0, 5], &[5]);
        let w = g.param(s, w);
        let logits = g.linear(e, w, None);
        g.cross_entropy(logits, &[2, 0, 4, 1, 0], 0)
    });
}

#[test]
fn conv_pool_upsample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[2, 2, 4, 4], &mut rng));
    let w = store.add("w", random(&[3, 2, 3, 3], &mut rng));
    let b = store.add("b", random(&[3], &mut rng));
    let wt = store.add("wt", random(&[3, 2, 2, 2], &mut rng));
    let bt = store.add("bt", random(&[2], &mut rng));
    let head = store.add("head", random(&[1, 4, 1, 1], &mut rng));
    let target: Vec<f32> = (0..32).map(|i| (i % 3 == 0) as u8 as f32).collect();
    check(&mut store, |g, s| {
        let xv = g.param(s, x);
        let (wv, bv) = (g.param(s, w), g.param(s, b));
        let y = g.conv2d(xv, wv, Some(bv), 1);
        let p = g.max_pool2(y);
        let (wtv, btv) = (g.param(s, wt), g.param(s, bt));
        let up = g.conv_transpose2x2(p, wtv, Some(btv));
        let cat = g.concat_channels(up, xv);
        let hv = g.param(s, head);
        let logits = g.conv2d(cat, hv, None, 0);
        g.bce_with_logits(logits, &target)
    });
}


#[test]
fn batch_norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[3, 2, 2, 3], &mut rng));
    let gamma = store.add("gamma", random(&[2], &mut rng));
    let beta = store.add("beta", random(&[2], &mut rng));
    let rm = store.add_buffer("rm", Tensor::zeros(&[2]));
    let rv = store.add_buffer("rv", Tensor::full(&[2], 1.0));
    check(&mut store, |g, s| {
        let xv = g.param(s, x);
        let y = g.batch_norm_train(s, xv, gamma, beta, (rm, rv));
        let y = g.relu(y);
        weighted_sum(g, y)
    });
}

#[test]
fn dropout_gradient_follows_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&[4, 8], &mut rng));
    let mut g = Graph::new();
    let xv = g.param(&store, x);
    let mut drng = ChaCha8Rng::seed_from_u64(9);
    let d = g.dropout(xv, 0.5, &mut drng);
    let out = g.value(d).clone();
    let loss = weighted_sum(&mut g, d);
    let grads = g.backward(loss);
    let gx = grads.get(x).unwrap();
    for (i, (&o, &gi)) in out.data().iter().zip(gx.data()).enumerate() {
        if o == 0.0 {
            assert_eq!(gi, 0.0, "dropped element {i} received gradient");
        }
    }
}

#[test]
fn adam_decreases_a_quadratic() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::new(&[2], vec![3.0, -2.0]));
    let target = store.add_buffer("t", Tensor::zeros(&[2]));
    let mut opt = Adam::new(AdamConfig::with_lr(0.1));
    for _ in 0..300 {
        let mut g = Graph::new();
        let pv = g.param(&store, p);
        let tv = g.param(&store, target);
        let neg = g.scale(tv, -1.0);
        let diff = g.add(pv, neg);
        let row = g.reshape(diff, &[1, 1, 2]);
        let sq = g.batch_matmul(row, row, false, true);
        let loss = g.reshape(sq, &[1]);
        let grads = g.backward(loss);
        opt.step(&mut store, &grads);
    }
    assert!(store.get(p).data().iter().all(|v| v.abs() < 0.05), "{:?}", store.get(p));
}
