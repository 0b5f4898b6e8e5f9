use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, v.to_vec()).unwrap()
}

fn rand_t(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    t(
        rows,
        cols,
        &(0..rows * cols)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<_>>(),
    )
}

#[test]
fn add_of_bound_inputs() {
    let mut g = Graph::new();
    let a = g.input(1, 1);
    let b = g.input(1, 1);
    let y = g.add(a, b).unwrap();
    let out = g
        .forward(y, &[(a, Tensor::scalar(2.0)), (b, Tensor::scalar(3.0))])
        .unwrap();
    assert_eq!(out.item(), 5.0);
}

#[test]
fn relu_negative_branch_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(-1.5));
    let y = g.relu(x);
    assert_eq!(g.scalar(y).unwrap(), 0.0);
}

#[test]
fn unbound_input_and_shape_errors() {
    let mut g = Graph::new();
    let a = g.input(2, 3);
    let b = g.input(2, 2);
    let s = g.sum(a);
    assert_eq!(g.forward(s, &[]), Err(AutodiffError::UnboundLeaf(a.0)));
    match g.add(a, b) {
        Err(AutodiffError::ShapeMismatch { node, op, .. }) => {
            assert_eq!(node, g.len());
            assert_eq!(op, "add");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        g.matmul(a, b),
        Err(AutodiffError::ShapeMismatch { op: "matmul", .. })
    ));
}

// Straight-line scalar evaluation of max_c(W1 relu(W0 x + b0) + b1).
#[test]
fn two_layer_max_logit_matches_scalar_loop() {
    let w0 = [[0.5, -1.0], [1.5, 0.25], [-0.75, 0.8]];
    let b0 = [0.1, -0.2, 0.3];
    let w1 = [[1.0, -0.5, 0.25], [-1.2, 0.7, 0.9]];
    let b1 = [0.05, -0.05];
    let x = [0.6, -0.4];

    let mut h = [0.0; 3];
    for j in 0..3 {
        let z = w0[j][0] * x[0] + w0[j][1] * x[1] + b0[j];
        h[j] = if z > 0.0 { z } else { 0.0 };
    }
    let mut best = f64::NEG_INFINITY;
    for c in 0..2 {
        let z = w1[c][0] * h[0] + w1[c][1] * h[1] + w1[c][2] * h[2] + b1[c];
        best = best.max(z);
    }

    let mut g = Graph::new();
    let xv = g.constant(t(1, 2, &x));
    let w0v = g.param(t(3, 2, &w0.concat()));
    let b0v = g.param(t(1, 3, &b0));
    let w1v = g.param(t(2, 3, &w1.concat()));
    let b1v = g.param(t(1, 2, &b1));
    let z = g.matmul_t(xv, w0v, false, true).unwrap();
    let z = g.add(z, b0v).unwrap();
    let h = g.relu(z);
    let o = g.matmul_t(h, w1v, false, true).unwrap();
    let o = g.add(o, b1v).unwrap();
    let vals = g.value(o).unwrap().data().to_vec();
    let got = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!((got - best).abs() < 1e-15);
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.square(x);
    let d = g.gradient(y, &[x]).unwrap()[0];
    assert_eq!(g.scalar(d).unwrap(), 6.0);
}

#[test]
fn bilinear_gradient() {
    let mut g = Graph::new();
    let w = g.param(Tensor::row(vec![1.0, 2.0]));
    let x = g.constant(Tensor::row(vec![4.0, 5.0]));
    let p = g.mul(w, x).unwrap();
    let y = g.sum(p);
    let d = g.gradient(y, &[w]).unwrap()[0];
    assert_eq!(g.value(d).unwrap().data(), &[4.0, 5.0]);
}

#[test]
fn gradient_errors() {
    let mut g = Graph::new();
    let x = g.param(Tensor::row(vec![1.0, 2.0]));
    let y = g.square(x);
    assert!(matches!(
        g.gradient(y, &[x]),
        Err(AutodiffError::NonScalarRoot { .. })
    ));
    let s = g.sum(y);
    assert_eq!(
        g.gradient(s, &[Var(999)]),
        Err(AutodiffError::NotInGraph(999))
    );
    assert_eq!(g.gradient(s, &[y]), Err(AutodiffError::NotALeaf(y.0)));
}

#[test]
fn unused_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.0));
    let z = g.param(Tensor::row(vec![1.0, 1.0]));
    let y = g.square(x);
    let d = g.gradient(y, &[z]).unwrap()[0];
    assert_eq!(g.value(d).unwrap().data(), &[0.0, 0.0]);
}

/// Small relu net: returns (graph, x leaf, [w0, b0, w1, b1], logits).
fn tiny_net(rng: &mut ChaCha8Rng, d: usize, h: usize, k: usize) -> (Graph, Var, Vec<Var>, Var) {
    let mut g = Graph::new();
    let x = g.param(rand_t(rng, 1, d));
    let w0 = g.param(rand_t(rng, h, d));
    let b0 = g.param(rand_t(rng, 1, h));
    let w1 = g.param(rand_t(rng, k, h));
    let b1 = g.param(rand_t(rng, 1, k));
    let z = g.matmul_t(x, w0, false, true).unwrap();
    let z = g.add(z, b0).unwrap();
    let a = g.relu(z);
    let o = g.matmul_t(a, w1, false, true).unwrap();
    let o = g.add(o, b1).unwrap();
    (g, x, vec![w0, b0, w1, b1], o)
}

fn min_abs_preactivation(g: &Graph, logits: Var) -> f64 {
    // The relu input is the node feeding the MaxConst op.
    let mut m = f64::INFINITY;
    for i in 0..logits.0 {
        if let Op::MaxConst(a, _) = g.node(Var(i)).op {
            for v in g.value(a).unwrap().data() {
                m = m.min(v.abs());
            }
        }
    }
    m
}

#[test]
fn logit_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut g, _x, params, o) = tiny_net(&mut rng, 3, 6, 2);
    assert!(min_abs_preactivation(&g, o) > 1e-3);
    let c = g.select_cols(o, &[1]).unwrap();
    let root = g.sum(c);
    for &p in &params {
        let point = g.value(p).unwrap().clone();
        let r = finite_difference_check(&mut g, root, p, &point, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}

#[test]
fn mixed_second_derivative_of_relu_product() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let w = g.param(Tensor::scalar(3.0));
    let r = g.relu(x);
    let f = g.mul(w, r).unwrap();
    let dw = g.gradient(f, &[w]).unwrap()[0];
    let dxdw = g.second_order_gradient(dw, x).unwrap();
    assert_eq!(g.scalar(dxdw).unwrap(), 1.0);
}

#[test]
fn mixed_second_derivative_of_squared_product() {
    for &(xv, wv) in &[(0.7, -1.3), (2.0, 3.0), (-4.0, 0.25)] {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(xv));
        let w = g.param(Tensor::scalar(wv));
        let p = g.mul(w, x).unwrap();
        let f = g.square(p);
        let dw = g.gradient(f, &[w]).unwrap()[0];
        let dxdw = g.second_order_gradient(dw, x).unwrap();
        let expect = 4.0 * wv * xv;
        assert!((g.scalar(dxdw).unwrap() - expect).abs() < 1e-12);
    }
}

#[test]
fn contracted_parameter_gradient_wrt_input_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut g, x, params, o) = tiny_net(&mut rng, 2, 5, 3);
    assert!(min_abs_preactivation(&g, o) > 1e-3);
    let c = g.select_cols(o, &[0]).unwrap();
    let phi = g.sum(c);
    let grads = g.gradient(phi, &params).unwrap();
    // s(x) = v · grad_zeta Phi_0
    let mut s = None;
    for (&p, &gp) in params.iter().zip(&grads) {
        let (r, cc) = g.shape(p);
        let v = g.constant(rand_t(&mut rng, r, cc));
        let prod = g.mul(v, gp).unwrap();
        let part = g.sum(prod);
        s = Some(match s {
            None => part,
            Some(acc) => g.add(acc, part).unwrap(),
        });
    }
    let s = s.unwrap();
    let _ = g.second_order_gradient(s, x).unwrap();
    let point = g.value(x).unwrap().clone();
    let r = finite_difference_check(&mut g, s, x, &point, 1e-6).unwrap();
    assert!(r.max_rel_error < 1e-5, "{r:?}");
}

#[test]
fn second_order_rejects_detached_selection() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let w = g.param(Tensor::scalar(3.0));
    let p = g.mul(w, x).unwrap();
    let f = g.square(p);
    let dw = g.gradient(f, &[w]).unwrap()[0];
    // Taking the gradient value out of the graph severs its dependence on x.
    let frozen = g.detach(dw).unwrap();
    let e = g.mul(frozen, w).unwrap();
    assert!(matches!(
        g.second_order_gradient(e, x),
        Err(AutodiffError::NotDifferentiable { .. })
    ));
    // A plain forward expression has no gradient ancestry.
    assert!(matches!(
        g.second_order_gradient(f, x),
        Err(AutodiffError::NotDifferentiable { .. })
    ));
}

#[test]
fn fd_check_trivial_functions() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.square(x);
    let r = finite_difference_check(&mut g, y, x, &Tensor::scalar(3.0), 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-7);

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(1.0));
    let y = g.relu(x);
    let r = finite_difference_check(&mut g, y, x, &Tensor::scalar(1.0), 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-7);
}

#[test]
fn relu_derivative_at_kink_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.relu(x);
    let d = g.gradient(y, &[x]).unwrap()[0];
    assert_eq!(g.scalar(d).unwrap(), 0.0);
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let a = g.param(t(2, 3, &[0.5, 1.2, 2.0, 0.8, 1.5, 0.3]));
    let b = g.param(rand_t(&mut rng, 1, 3));
    let col = g.param(rand_t(&mut rng, 2, 1));
    let q = g.div(b, a).unwrap();
    let e = g.exp(q);
    let s = g.sqrt(a);
    let m = g.mul(e, s).unwrap();
    let m = g.sub(m, col).unwrap();
    let ab = g.abs(m);
    let lo = g.min_const(ab, 5.0);
    let cat = g.concat_cols(&[lo, a]).unwrap();
    let sel = g.select_cols(cat, &[0, 4, 4, 2]).unwrap();
    let rs = g.sum_cols(sel);
    let bc = g.broadcast_to(rs, 2, 3).unwrap();
    let fin = g.mul(bc, a).unwrap();
    let fin = g.mean(fin);
    for leaf in [a, b, col] {
        let p = g.value(leaf).unwrap().clone();
        let r = finite_difference_check(&mut g, fin, leaf, &p, 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}

#[test]
fn gradient_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let mut g = Graph::new();
        let x = g.param(rand_t(&mut rng, 2, 3));
        let w = g.param(rand_t(&mut rng, 3, 2));
        let m = g.matmul(x, w).unwrap();
        let r = g.relu(m);
        let f = g.sum(r);
        let sq = g.square(x);
        let gg = g.sum(sq);
        let (ca, cb) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let fa = g.scale(f, ca);
        let gb = g.scale(gg, cb);
        let comb = g.add(fa, gb).unwrap();
        let dc = g.gradient(comb, &[x]).unwrap()[0];
        let df = g.gradient(f, &[x]).unwrap()[0];
        let dg = g.gradient(gg, &[x]).unwrap()[0];
        let lhs = g.value(dc).unwrap().data().to_vec();
        let (vf, vg) = (g.value(df).unwrap(), g.value(dg).unwrap());
        for k in 0..lhs.len() {
            let rhs = ca * vf.data()[k] + cb * vg.data()[k];
            assert!((lhs[k] - rhs).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut g, x, params, o) = tiny_net(&mut rng, 4, 8, 3);
        let s = g.sum(o);
        let grads = g.gradient(s, &params).unwrap();
        let bind = rand_t(&mut rng, 1, 4);
        let out = g.forward(s, &[(x, bind)]).unwrap();
        let gv: Vec<u64> = grads
            .iter()
            .flat_map(|&v| {
                g.value(v)
                    .unwrap()
                    .data()
                    .iter()
                    .map(|f| f.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect();
        (out.item().to_bits(), gv)
    };
    assert_eq!(run(), run());
}

#[test]
fn matmul_transpose_variants_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_t(&mut rng, 3, 4);
    let b = rand_t(&mut rng, 4, 2);
    let at = t(
        4,
        3,
        &(0..12).map(|k| a.at(k % 3, k / 3)).collect::<Vec<_>>(),
    );
    let bt = t(
        2,
        4,
        &(0..8).map(|k| b.at(k % 4, k / 4)).collect::<Vec<_>>(),
    );
    let mut g = Graph::new();
    let (va, vb, vat, vbt) = (g.param(a), g.param(b), g.param(at), g.param(bt));
    let r0 = g.matmul(va, vb).unwrap();
    let r1 = g.matmul_t(vat, vb, true, false).unwrap();
    let r2 = g.matmul_t(va, vbt, false, true).unwrap();
    let r3 = g.matmul_t(vat, vbt, true, true).unwrap();
    let base = g.value(r0).unwrap().data().to_vec();
    for r in [r1, r2, r3] {
        for (x, y) in g.value(r).unwrap().data().iter().zip(&base) {
            assert!((x - y).abs() < 1e-14);
        }
    }
    // gradients of each transposed form
    for (r, leaf) in [(r1, vat), (r2, vbt), (r3, vat), (r3, vbt)] {
        let s = g.sum(r);
        let sq = g.square(s);
        let p = g.value(leaf).unwrap().clone();
        let rep = finite_difference_check(&mut g, sq, leaf, &p, 1e-6).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }
}
