use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbtm_core::autodiff::nn::{Activation, Lstm, Mlp, PendingStats};
use sbtm_core::autodiff::{Graph, ParamStore, Tensor, Var};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-3)
}

/// Compares every parameter gradient with a central difference of `loss`.
fn check_store(store: &mut ParamStore, h: f64, tol: f64, loss: impl Fn(&ParamStore) -> (Graph, Var)) {
    let (g, out) = loss(store);
    let grads = g.backward(out).unwrap();
    store.zero_grad();
    store.accumulate(&g.param_grads(&grads));
    let ids: Vec<_> = store.iter().filter(|(_, p)| p.requires_grad).map(|(id, _)| id).collect();
    for id in ids {
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let (gp, op) = loss(store);
            store.value_mut(id).data_mut()[i] = orig - h;
            let (gm, om) = loss(store);
            store.value_mut(id).data_mut()[i] = orig;
            let fd = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let an = store.get(id).grad.data()[i];
            assert!(
                rel_close(an, fd, tol),
                "{}[{i}]: analytic {an} vs fd {fd}",
                store.get(id).name
            );
        }
    }
}

#[test]
fn square_derivative() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn softmax_uniform_and_jvp() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0; 3]));
    let s = g.softmax(x);
    for &p in g.value(s).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    // directional derivative of w·softmax(x) along d
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = random_tensor(&mut rng, &[5], 1.0);
    let w = random_tensor(&mut rng, &[5], 1.0);
    let d = random_tensor(&mut rng, &[5], 1.0);
    let f = |x: &Tensor| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let s = g.softmax(xv);
        let p = g.mul(s, wv).unwrap();
        let out = g.sum(p);
        (g, xv, out)
    };
    let (g, xv, out) = f(&x0);
    let grads = g.backward(out).unwrap();
    let analytic: f64 = grads.wrt(xv).unwrap().data().iter().zip(d.data()).map(|(a, b)| a * b).sum();
    let h = 1e-5;
    let shift = |s: f64| {
        let t = Tensor::new(vec![5], x0.data().iter().zip(d.data()).map(|(x, dd)| x + s * dd).collect()).unwrap();
        let (g, _, out) = f(&t);
        g.value(out).item()
    };
    let fd = (shift(h) - shift(-h)) / (2.0 * h);
    assert!((analytic - fd).abs() < 1e-7);
}

/// Builds a scalar from a mix of every graph operation.
fn op_soup(store: &ParamStore, gather: &[usize], uniforms: &[f64]) -> (Graph, Var) {
    let mut g = Graph::new();
    let a = g.param(store, store.id("a").unwrap());
    let b = g.param(store, store.id("b").unwrap());
    let bias = g.param(store, store.id("bias").unwrap());
    let table = g.param(store, store.id("table").unwrap());
    let pos = g.param(store, store.id("pos").unwrap());
    let gamma = g.param(store, store.id("gamma").unwrap());
    let beta = g.param(store, store.id("beta").unwrap());
    let frac_raw = g.param(store, store.id("frac").unwrap());

    let ab = g.matmul(a, b).unwrap(); // 3×4
    let ab = g.add_bias(ab, bias).unwrap();
    let (bn, _) = g.batch_norm(ab, gamma, beta, (&[0.0; 4], &[1.0; 4]), true).unwrap();
    let sp = g.softplus(bn);
    let th = g.tanh(ab);
    let prod = g.mul(sp, th).unwrap();
    let r = g.relu(ab);
    let sum1 = g.add(prod, r).unwrap();
    let e = g.exp(pos);
    let lg = g.log(e);
    let lg = g.add_scalar(lg, 0.5);
    let q = g.div(sum1, e).unwrap();
    let q = g.sub(q, lg).unwrap();
    let dropped = g.dropout(q, 0.3, true, uniforms).unwrap();
    let sm = g.softmax(dropped);
    let lsm = g.log_softmax(ab);
    let rows = g.gather_rows(table, gather).unwrap(); // 3×4
    let mix = g.mul(sm, rows).unwrap();
    let cat = g.concat(&[mix, lsm]).unwrap(); // 3×8
    let sl = g.slice_last(cat, 2, 7).unwrap(); // 3×5
    let top = g.slice_last(sl, 0, 2).unwrap();
    let stacked = g.concat_rows(&[top, top]).unwrap(); // 6×2
    let stacked = g.clamp(stacked, -0.8, 0.8);
    let extra = g.sum(stacked);
    let frac = g.logistic(frac_raw); // 3×3
    let pi = g.stick_break(frac); // 3×4
    let lp = g.log(pi);
    let lp = g.reshape(lp, &[3, 4]).unwrap();
    let pm = g.mul(lp, sm).unwrap();
    let s1 = g.sum_last_axis(sl);
    let s2 = g.sum_last_axis(pm);
    let s = g.add(s1, s2).unwrap();
    let s = g.scale(s, 0.7);
    let m = g.mean(s);
    let one = g.scalar(2.0);
    let ex = g.expand(one, &[1]).unwrap();
    let out = g.mul(m, ex).unwrap();
    let extra = g.scale(extra, 0.1);
    let out = g.add(out, extra).unwrap();
    (g, out)
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.add("a", random_tensor(&mut rng, &[3, 2], 1.0)).unwrap();
        store.add("b", random_tensor(&mut rng, &[2, 4], 1.0)).unwrap();
        store.add("bias", random_tensor(&mut rng, &[4], 0.5)).unwrap();
        store.add("table", random_tensor(&mut rng, &[5, 4], 1.0)).unwrap();
        store.add("pos", random_tensor(&mut rng, &[3, 4], 0.5)).unwrap();
        store.add("gamma", random_tensor(&mut rng, &[4], 1.0)).unwrap();
        store.add("beta", random_tensor(&mut rng, &[4], 1.0)).unwrap();
        store.add("frac", random_tensor(&mut rng, &[3, 3], 2.0)).unwrap();
        let gather: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
        let uniforms: Vec<f64> = (0..12).map(|_| rng.random()).collect();
        check_store(&mut store, 1e-5, 1e-4, |s| op_soup(s, &gather, &uniforms));
    }
}

#[test]
fn three_layer_mlp_gradients() {
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "mlp", 4, &[6, 5, 3], Activation::Softplus, true, &mut rng).unwrap();
        let x = random_tensor(&mut rng, &[4, 4], 1.0);
        check_store(&mut store, 1e-4, 1e-4, |s| {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let mut pending = PendingStats::default();
            let h = mlp.forward(&mut g, s, xv, true, &mut pending).unwrap();
            let l = g.log_softmax(h);
            let out = g.sum(l);
            (g, out)
        });
    }
}

#[test]
fn lstm_ten_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "lstm", 3, 4, 2, &mut rng).unwrap();
    let xs: Vec<Tensor> = (0..10).map(|_| random_tensor(&mut rng, &[1, 3], 1.0)).collect();
    let w = random_tensor(&mut rng, &[1, 4], 1.0);
    check_store(&mut store, 1e-5, 1e-3, |s| {
        let mut g = Graph::new();
        let inputs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let outs = lstm.forward(&mut g, s, &inputs).unwrap();
        let wv = g.constant(w.clone());
        let last = g.mul(*outs.last().unwrap(), wv).unwrap();
        let mid = g.mul(outs[4], wv).unwrap();
        let both = g.add(last, mid).unwrap();
        let out = g.sum(both);
        (g, out)
    });
}

#[test]
fn eval_modes_are_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", 3, &[4], Activation::Relu, true, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[5, 3], 1.0);
    let run = |store: &ParamStore| {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let mut pending = PendingStats::default();
        let h = mlp.forward(&mut g, store, xv, false, &mut pending).unwrap();
        let d = g.dropout(h, 0.5, false, &[]).unwrap();
        assert_eq!(d, h);
        g.value(d).clone()
    };
    assert_eq!(run(&store), run(&store));

    // a training pass moves the running statistics
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let mut pending = PendingStats::default();
    mlp.forward(&mut g, &store, xv, true, &mut pending).unwrap();
    let before = store.by_name("mlp.0.bn.running_mean").unwrap().value.clone();
    pending.apply(&mut store);
    assert_ne!(store.by_name("mlp.0.bn.running_mean").unwrap().value, before);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("matmul") && err.contains("[2, 3]"));
}

#[test]
fn backward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "m", 3, &[4, 2], Activation::Tanh, false, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[2, 3], 1.0);
    let grads = || {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let h = mlp.forward(&mut g, &store, xv, true, &mut PendingStats::default()).unwrap();
        let out = g.sum(h);
        let gr = g.backward(out).unwrap();
        g.param_grads(&gr)
    };
    let a = grads();
    let b = grads();
    for ((ia, ta), (ib, tb)) in a.iter().zip(&b) {
        assert_eq!(ia, ib);
        assert_eq!(ta, tb);
    }
}
