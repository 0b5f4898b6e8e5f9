use super::{AutodiffError, Graph, Op, Result, Var};
use crate::tensor::Tensor;

/// Nodes that lie on some path from a `wrt` leaf to `root`.
fn relevant(g: &Graph, root: Var, wrt: &[Var]) -> Vec<bool> {
    let n = root.0 + 1;
    let mut from_leaf = vec![false; n];
    for w in wrt {
        if w.0 < n {
            from_leaf[w.0] = true;
        }
    }
    for i in 0..n {
        if !from_leaf[i] {
            from_leaf[i] = differentiable_parents(&g.node(Var(i)).op)
                .iter()
                .any(|p| from_leaf[p.0]);
        }
    }
    let mut to_root = vec![false; n];
    to_root[root.0] = true;
    for i in (0..n).rev() {
        if to_root[i] && from_leaf[i] {
            for p in differentiable_parents(&g.node(Var(i)).op) {
                to_root[p.0] = true;
            }
        }
    }
    (0..n).map(|i| from_leaf[i] && to_root[i]).collect()
}

/// Parents through which a gradient flows. Gate operands carry none.
fn differentiable_parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Gate { grad, .. } | Op::SignGate { grad, .. } => vec![*grad],
        other => other.parents(),
    }
}

fn accumulate(g: &mut Graph, adj: &mut [Option<Var>], target: Var, contrib: Var) -> Result<()> {
    adj[target.0] = Some(match adj[target.0] {
        Some(prev) => g.add(prev, contrib)?,
        None => contrib,
    });
    Ok(())
}

fn reduce_to(g: &mut Graph, v: Var, target: Var) -> Result<Var> {
    let (r, c) = g.shape(target);
    g.sum_to(v, r, c)
}

/// Adjoint contributions of node `out` (with adjoint `gv`) to its differentiable parents.
fn local_grads(g: &mut Graph, out: Var, gv: Var, keep: &[bool]) -> Result<Vec<(Var, Var)>> {
    let op = g.node(out).op.clone();
    let want = |v: &Var| keep[v.0];
    let mut res = Vec::new();
    match op {
        Op::Leaf(_) => {}
        Op::Add(a, b) => {
            if want(&a) {
                res.push((a, reduce_to(g, gv, a)?));
            }
            if want(&b) {
                res.push((b, reduce_to(g, gv, b)?));
            }
        }
        Op::Sub(a, b) => {
            if want(&a) {
                res.push((a, reduce_to(g, gv, a)?));
            }
            if want(&b) {
                let n = g.neg(gv);
                res.push((b, reduce_to(g, n, b)?));
            }
        }
        Op::Mul(a, b) => {
            if want(&a) {
                let t = g.mul(gv, b)?;
                res.push((a, reduce_to(g, t, a)?));
            }
            if want(&b) {
                let t = g.mul(gv, a)?;
                res.push((b, reduce_to(g, t, b)?));
            }
        }
        Op::Div(a, b) => {
            if want(&a) {
                let t = g.div(gv, b)?;
                res.push((a, reduce_to(g, t, a)?));
            }
            if want(&b) {
                // d(a/b)/db = -(a/b)/b
                let t = g.mul(gv, out)?;
                let t = g.div(t, b)?;
                let t = g.neg(t);
                res.push((b, reduce_to(g, t, b)?));
            }
        }
        Op::Neg(a) => res.push((a, g.neg(gv))),
        Op::Scale(a, c) => res.push((a, g.scale(gv, c))),
        Op::AddConst(a, _) => res.push((a, gv)),
        Op::MatMul { a, b, ta, tb } => {
            if want(&a) {
                let ga = if ta {
                    g.matmul_t(b, gv, tb, true)?
                } else {
                    g.matmul_t(gv, b, false, !tb)?
                };
                res.push((a, ga));
            }
            if want(&b) {
                let gb = if tb {
                    g.matmul_t(gv, a, true, ta)?
                } else {
                    g.matmul_t(a, gv, !ta, false)?
                };
                res.push((b, gb));
            }
        }
        Op::MaxConst(a, c) => res.push((a, g.gate(gv, a, c, true))),
        Op::MinConst(a, c) => res.push((a, g.gate(gv, a, c, false))),
        Op::Gate {
            grad,
            gate,
            threshold,
            above,
        } => res.push((grad, g.gate(gv, gate, threshold, above))),
        Op::Abs(a) => res.push((a, g.sign_gate(gv, a))),
        Op::SignGate { grad, gate } => res.push((grad, g.sign_gate(gv, gate))),
        Op::Square(a) => {
            let two_a = g.scale(a, 2.0);
            res.push((a, g.mul(gv, two_a)?));
        }
        Op::Sqrt(a) => {
            let half = g.scale(gv, 0.5);
            res.push((a, g.div(half, out)?));
        }
        Op::Exp(a) => res.push((a, g.mul(gv, out)?)),
        Op::Sum(a) | Op::SumTo(a) => {
            let (r, c) = g.shape(a);
            res.push((a, g.broadcast_to(gv, r, c)?));
        }
        Op::BroadcastTo(a) => res.push((a, reduce_to(g, gv, a)?)),
        Op::ConcatCols(parts) => {
            let mut start = 0;
            for p in parts {
                let w = g.shape(p).1;
                if want(&p) {
                    let idx: Vec<usize> = (start..start + w).collect();
                    res.push((p, g.select_cols(gv, &idx)?));
                }
                start += w;
            }
        }
        Op::SelectCols(a, sel) => {
            let width = g.shape(a).1;
            res.push((a, g.scatter_cols(gv, &sel, width)));
        }
        Op::ScatterCols { a, cols, .. } => res.push((a, g.select_cols(gv, &cols)?)),
    }
    Ok(res.into_iter().filter(|(p, _)| keep[p.0]).collect())
}

pub(super) fn gradient(g: &mut Graph, root: Var, wrt: &[Var]) -> Result<Vec<Var>> {
    if root.0 >= g.len() {
        return Err(AutodiffError::NotInGraph(root.0));
    }
    let shape = g.shape(root);
    if shape != (1, 1) {
        return Err(AutodiffError::NonScalarRoot {
            node: root.0,
            shape,
        });
    }
    for w in wrt {
        if w.0 >= g.len() {
            return Err(AutodiffError::NotInGraph(w.0));
        }
        if !g.is_leaf(*w) {
            return Err(AutodiffError::NotALeaf(w.0));
        }
    }
    let keep = relevant(g, root, wrt);
    let saved = g.building_backward;
    g.building_backward = true;
    let result = backprop(g, root, wrt, &keep);
    g.building_backward = saved;
    result
}

fn backprop(g: &mut Graph, root: Var, wrt: &[Var], keep: &[bool]) -> Result<Vec<Var>> {
    let mut adj: Vec<Option<Var>> = vec![None; root.0 + 1];
    if keep[root.0] {
        adj[root.0] = Some(g.constant(Tensor::scalar(1.0)));
    }
    for i in (0..=root.0).rev() {
        let Some(gv) = adj[i] else { continue };
        if !keep[i] {
            continue;
        }
        for (parent, contrib) in local_grads(g, Var(i), gv, keep)? {
            accumulate(g, &mut adj, parent, contrib)?;
        }
    }
    Ok(wrt
        .iter()
        .map(|w| match adj.get(w.0).copied().flatten() {
            Some(v) => v,
            None => {
                let (r, c) = g.shape(*w);
                g.constant(Tensor::zeros(r, c))
            }
        })
        .collect())
}

pub(super) fn second_order_gradient(g: &mut Graph, expr: Var, wrt: Var) -> Result<Var> {
    if expr.0 >= g.len() {
        return Err(AutodiffError::NotInGraph(expr.0));
    }
    if wrt.0 >= g.len() {
        return Err(AutodiffError::NotInGraph(wrt.0));
    }
    if !g.is_leaf(wrt) {
        return Err(AutodiffError::NotALeaf(wrt.0));
    }
    let mut born = vec![false; expr.0 + 1];
    for i in 0..=expr.0 {
        let node = g.node(Var(i));
        born[i] = node.from_backward || node.op.parents().iter().any(|p| born[p.0]);
    }
    if !born[expr.0] {
        return Err(AutodiffError::NotDifferentiable {
            expr: expr.0,
            leaf: wrt.0,
            reason: "expression was not built from a gradient pass",
        });
    }
    let keep = relevant(g, expr, &[wrt]);
    if !keep[expr.0] {
        return Err(AutodiffError::NotDifferentiable {
            expr: expr.0,
            leaf: wrt.0,
            reason: "no differentiable path from the leaf to the expression",
        });
    }
    Ok(gradient(g, expr, &[wrt])?[0])
}
