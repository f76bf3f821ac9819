use super::*;
use crate::error::Error;

/// Central-difference gradient of `f` at `x`.
fn numeric_grad(x: &Tensor, f: &dyn Fn(&Tensor) -> f64, delta: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut hi = x.clone();
            hi.data_mut()[i] += delta;
            let mut lo = x.clone();
            lo.data_mut()[i] -= delta;
            (f(&hi) - f(&lo)) / (2.0 * delta)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn t(r: usize, c: usize, v: &[f64]) -> Tensor {
    Tensor::matrix(r, c, v.to_vec()).unwrap()
}

#[test]
fn affine_forward() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0));
    let y = g.affine(x, 2.0, 1.0);
    assert_eq!(g.value(y).item(), 7.0);
}

#[test]
fn hinge_values_and_kink() {
    assert_eq!(hinge(0.5), 0.0);
    assert_eq!(hinge(0.0), 1.0);
    let mut g = Graph::new();
    let mut store = ParamStore::new();
    let k = store.insert("a", t(1, 3, &[0.5, 0.0, 0.9]));
    let a = store.var(&mut g, k);
    let h = g.hinge(a);
    let l = g.mean(h);
    let grads = g.backward(l).unwrap();
    // Kink at 1/2 takes the inactive branch.
    assert_eq!(grads.param(k).unwrap().data(), &[0.0, -2.0 / 3.0, 0.0]);
}

#[test]
fn two_layer_tanh_by_hand() {
    // W1 = [[1, -1], [0.5, 2]], b1 = [0.1, -0.2], W2 = [[1], [-1]], b2 = [0.3], x = [0.2, -0.4]
    let mut g = Graph::new();
    let x = g.input(t(1, 2, &[0.2, -0.4]));
    let w1 = g.input(t(2, 2, &[1.0, -1.0, 0.5, 2.0]));
    let b1 = g.input(t(1, 2, &[0.1, -0.2]));
    let w2 = g.input(t(2, 1, &[1.0, -1.0]));
    let b2 = g.input(t(1, 1, &[0.3]));
    let h = g.matmul(x, w1).unwrap();
    let h = g.add(h, b1).unwrap();
    let h = g.tanh(h);
    let o = g.matmul(h, w2).unwrap();
    let o = g.add(o, b2).unwrap();
    // pre-activations: 0.2 - 0.2 + 0.1 = 0.1 ; -0.2 - 0.8 - 0.2 = -1.2
    let want = 0.1f64.tanh() - (-1.2f64).tanh() + 0.3;
    assert!((g.value(o).item() - want).abs() < 1e-12);
}

#[test]
fn half_squared_norm_gradient_is_identity() {
    let mut store = ParamStore::new();
    let k = store.insert("x", t(1, 4, &[1.0, -2.0, 0.5, 3.0]));
    let mut g = Graph::new();
    let x = store.var(&mut g, k);
    let s = g.squared_l2(x);
    let l = g.affine(s, 0.5, 0.0);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.param(k).unwrap().data(), store.get(k).data());
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut store = ParamStore::new();
    let k = store.insert("w", t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let mut g = Graph::new();
    let w = store.var(&mut g, k);
    let c = g.input(Tensor::scalar(5.0));
    let grads = g.backward(c).unwrap();
    assert!(grads.wrt(w).data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.input(t(1, 2, &[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::new();
    let a = g.input(t(2, 3, &[0.0; 6]));
    let b = g.input(t(2, 3, &[0.0; 6]));
    match g.matmul(a, b) {
        Err(Error::InvalidArgument(msg)) => assert!(msg.contains("node 2") && msg.contains("matmul"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
    let c = g.input(t(3, 2, &[0.0; 6]));
    assert!(g.add(a, c).is_err());
    assert!(g.softmax_xent(a, &[0, 5]).is_err());
}

/// Builds `loss(x)` for a single parameter input and checks its gradient.
fn check_op(name: &str, x0: Tensor, build: &dyn Fn(&mut Graph, Var) -> Var) {
    let mut store = ParamStore::new();
    let k = store.insert("x", x0.clone());
    let mut g = Graph::new();
    let x = store.var(&mut g, k);
    let loss = build(&mut g, x);
    let analytic = g.backward(loss).unwrap().param(k).unwrap();
    let f = |xt: &Tensor| {
        let mut g = Graph::new();
        let x = g.input(xt.clone());
        let l = build(&mut g, x);
        g.value(l).item()
    };
    let numeric = numeric_grad(&x0, &f, 1e-4);
    for (i, (a, n)) in analytic.data().iter().zip(&numeric).enumerate() {
        assert!(rel_err(*a, *n) <= 1e-5, "{name}[{i}]: analytic {a} numeric {n}");
    }
}

// Values avoid relu/hinge kinks by a wide margin.
const X: [f64; 6] = [0.3, -0.7, 1.2, -0.15, 0.85, -1.1];

#[test]
fn gradient_check_each_op() {
    let x = || t(2, 3, &X);
    let w = t(3, 2, &[0.4, -0.3, 0.2, 0.9, -0.6, 0.1]);
    let row = t(1, 3, &[0.5, -0.25, 0.75]);
    let col = t(2, 1, &[0.6, -0.4]);
    let wts = t(2, 3, &[0.2, 0.5, -0.3, 0.8, -0.1, 0.4]);

    check_op("matmul", x(), &|g, v| {
        let w = g.input(w.clone());
        let y = g.matmul(v, w).unwrap();
        let y = g.tanh(y);
        g.mean(y)
    });
    check_op("matmul_rhs", w.clone(), &|g, v| {
        let xx = g.input(x());
        let y = g.matmul(xx, v).unwrap();
        let y = g.sigmoid(y);
        g.mean(y)
    });
    check_op("add_row", x(), &|g, v| {
        let b = g.input(row.clone());
        let y = g.add(v, b).unwrap();
        g.squared_l2(y)
    });
    check_op("add_row_rhs", row.clone(), &|g, v| {
        let a = g.input(x());
        let y = g.add(a, v).unwrap();
        g.squared_l2(y)
    });
    check_op("add_col_rhs", col.clone(), &|g, v| {
        let a = g.input(x());
        let y = g.add(a, v).unwrap();
        let y = g.tanh(y);
        g.mean(y)
    });
    check_op("sub", x(), &|g, v| {
        let b = g.input(wts.clone());
        let y = g.sub(b, v).unwrap();
        g.squared_l2(y)
    });
    check_op("mul", x(), &|g, v| {
        let b = g.input(wts.clone());
        let y = g.mul(v, b).unwrap();
        let y = g.mul(y, v).unwrap();
        g.mean(y)
    });
    check_op("mul_broadcast_rhs", col.clone(), &|g, v| {
        let a = g.input(x());
        let y = g.mul(a, v).unwrap();
        g.squared_l2(y)
    });
    check_op("relu", x(), &|g, v| {
        let b = g.input(wts.clone());
        let y = g.relu(v);
        let y = g.mul(y, b).unwrap();
        g.mean(y)
    });
    check_op("tanh", x(), &|g, v| {
        let y = g.tanh(v);
        g.squared_l2(y)
    });
    check_op("sigmoid", x(), &|g, v| {
        let y = g.sigmoid(v);
        g.squared_l2(y)
    });
    check_op("softplus", x(), &|g, v| {
        let y = g.softplus(v);
        g.squared_l2(y)
    });
    check_op("hinge", x(), &|g, v| {
        let b = g.input(wts.clone());
        let y = g.hinge(v);
        let y = g.mul(y, b).unwrap();
        g.mean(y)
    });
    check_op("affine", x(), &|g, v| {
        let y = g.affine(v, -1.5, 0.25);
        g.squared_l2(y)
    });
    check_op("softmax", x(), &|g, v| {
        let b = g.input(wts.clone());
        let y = g.softmax_rows(v).unwrap();
        let y = g.mul(y, b).unwrap();
        g.mean(y)
    });
    check_op("softmax_xent", x(), &|g, v| g.softmax_xent(v, &[2, 0]).unwrap());
    check_op("mean_batch", x(), &|g, v| {
        let y = g.mean_batch(v).unwrap();
        g.squared_l2(y)
    });
    check_op("sum_cols", x(), &|g, v| {
        let y = g.sum_cols(v).unwrap();
        g.squared_l2(y)
    });
    check_op("concat", x(), &|g, v| {
        let b = g.input(col.clone());
        let y = g.concat(v, b).unwrap();
        let y = g.concat(b, y).unwrap();
        let y = g.tanh(y);
        g.squared_l2(y)
    });
}

#[test]
fn shared_param_gradients_accumulate() {
    let mut store = ParamStore::new();
    let k = store.insert("w", t(1, 1, &[3.0]));
    let mut g = Graph::new();
    let a = store.var(&mut g, k);
    let b = store.var(&mut g, k);
    assert_eq!(a, b);
    let y = g.mul(a, b).unwrap();
    let l = g.mean(y);
    assert_eq!(g.backward(l).unwrap().param(k).unwrap().item(), 6.0);
}

#[test]
fn sgd_and_zero_lr() {
    let mut store = ParamStore::new();
    let k = store.insert("p", Tensor::scalar(1.0));
    let grad = vec![(k, Tensor::scalar(2.0))];
    OptimizerState::sgd(0.1).step_with(&mut store, &grad).unwrap();
    assert!((store.get(k).item() - 0.8).abs() < 1e-15);
    OptimizerState::adam(0.0).step_with(&mut store, &grad).unwrap();
    assert!((store.get(k).item() - 0.8).abs() < 1e-15);
}

#[test]
fn adam_first_step_is_scale_free() {
    for scale in [1e-3, 1.0, 1e4] {
        let mut store = ParamStore::new();
        let k = store.insert("p", Tensor::scalar(0.0));
        let mut opt = OptimizerState::adam(0.01);
        opt.step_with(&mut store, &[(k, Tensor::scalar(scale))]).unwrap();
        assert!((store.get(k).item() + 0.01).abs() < 1e-6, "scale {scale}: {}", store.get(k).item());
    }
}

#[test]
fn nan_gradient_is_numeric_error() {
    let mut store = ParamStore::new();
    let k = store.insert("p", Tensor::scalar(0.0));
    let err = OptimizerState::adam(0.1).step_with(&mut store, &[(k, Tensor::scalar(f64::NAN))]);
    assert!(matches!(err, Err(Error::Numeric(_))));
    assert_eq!(store.get(k).item(), 0.0);
}

#[test]
fn checkpoint_round_trip_and_layout() {
    let mut store = ParamStore::new();
    store.insert("w", t(2, 2, &[1.0, -2.0, 3.5, 0.0]));
    store.insert("bias", Tensor::row(vec![0.25]));
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &store).unwrap();
    assert_eq!(&buf[..4], b"NCGL");
    assert_eq!(&buf[4..8], &1u32.to_le_bytes());
    assert_eq!(&buf[8..12], &1u32.to_le_bytes());
    assert_eq!(&buf[12..13], b"w");
    let back = read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(back, store);

    assert!(matches!(read_checkpoint(&mut &buf[..buf.len() - 3]), Err(Error::Format(_))));
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(Error::Format(_))));
}
