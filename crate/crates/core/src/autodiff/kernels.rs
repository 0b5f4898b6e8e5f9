use super::{Node, Op, Var};
use crate::tensor::Tensor;

fn val(nodes: &[Node], v: Var) -> &Tensor {
    nodes[v.0]
        .value
        .as_ref()
        .expect("parent evaluated before child")
}

fn dims(nodes: &[Node], v: Var) -> (usize, usize) {
    nodes[v.0].shape
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    t.data().iter().map(|&x| f(x)).collect()
}

fn broadcast_zip(
    nodes: &[Node],
    a: Var,
    b: Var,
    shape: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let (ta, tb) = (val(nodes, a).data(), val(nodes, b).data());
    let (sa, sb) = (dims(nodes, a), dims(nodes, b));
    if sa == shape && sb == shape {
        return ta.iter().zip(tb).map(|(&x, &y)| f(x, y)).collect();
    }
    let (r, c) = shape;
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let ia = if sa.0 == 1 { 0 } else { i };
        let ib = if sb.0 == 1 { 0 } else { i };
        for j in 0..c {
            let x = ta[ia * sa.1 + if sa.1 == 1 { 0 } else { j }];
            let y = tb[ib * sb.1 + if sb.1 == 1 { 0 } else { j }];
            out.push(f(x, y));
        }
    }
    out
}

pub(crate) fn matmul(
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    ta: bool,
    tb: bool,
) -> Vec<f64> {
    let (m, k) = if ta { (sa.1, sa.0) } else { sa };
    let n = if tb { sb.0 } else { sb.1 };
    let mut c = vec![0.0; m * n];
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let crow = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &b[p * n..(p + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += aip * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    c[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            }
        }
        (true, false) => {
            // a is stored [k, m]
            for p in 0..k {
                let arow = &a[p * m..(p + 1) * m];
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = arow[i];
                    if api == 0.0 {
                        continue;
                    }
                    let crow = &mut c[i * n..(i + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += api * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[p * m + i] * b[j * k + p];
                    }
                    c[i * n + j] = s;
                }
            }
        }
    }
    c
}

pub(crate) fn eval(op: &Op, shape: (usize, usize), nodes: &[Node]) -> Tensor {
    let (rows, cols) = shape;
    let data = match op {
        Op::Leaf(_) => unreachable!("leaves are not evaluated"),
        Op::Add(a, b) => broadcast_zip(nodes, *a, *b, shape, |x, y| x + y),
        Op::Sub(a, b) => broadcast_zip(nodes, *a, *b, shape, |x, y| x - y),
        Op::Mul(a, b) => broadcast_zip(nodes, *a, *b, shape, |x, y| x * y),
        Op::Div(a, b) => broadcast_zip(nodes, *a, *b, shape, |x, y| x / y),
        Op::Neg(a) => map(val(nodes, *a), |x| -x),
        Op::Scale(a, c) => map(val(nodes, *a), |x| x * c),
        Op::AddConst(a, c) => map(val(nodes, *a), |x| x + c),
        Op::MatMul { a, b, ta, tb } => matmul(
            val(nodes, *a).data(),
            dims(nodes, *a),
            val(nodes, *b).data(),
            dims(nodes, *b),
            *ta,
            *tb,
        ),
        Op::MaxConst(a, c) => map(val(nodes, *a), |x| if x > *c { x } else { *c }),
        Op::MinConst(a, c) => map(val(nodes, *a), |x| if x < *c { x } else { *c }),
        Op::Gate {
            grad,
            gate,
            threshold,
            above,
        } => val(nodes, *grad)
            .data()
            .iter()
            .zip(val(nodes, *gate).data())
            .map(|(&g, &z)| {
                let open = if *above {
                    z > *threshold
                } else {
                    z < *threshold
                };
                if open {
                    g
                } else {
                    0.0
                }
            })
            .collect(),
        Op::Abs(a) => map(val(nodes, *a), f64::abs),
        Op::SignGate { grad, gate } => val(nodes, *grad)
            .data()
            .iter()
            .zip(val(nodes, *gate).data())
            .map(|(&g, &z)| {
                if z > 0.0 {
                    g
                } else if z < 0.0 {
                    -g
                } else {
                    0.0
                }
            })
            .collect(),
        Op::Square(a) => map(val(nodes, *a), |x| x * x),
        Op::Sqrt(a) => map(val(nodes, *a), f64::sqrt),
        Op::Exp(a) => map(val(nodes, *a), f64::exp),
        Op::Sum(a) => vec![val(nodes, *a).data().iter().sum()],
        Op::SumTo(a) => {
            let src = val(nodes, *a).data();
            let (r, c) = dims(nodes, *a);
            let mut out = vec![0.0; rows * cols];
            for i in 0..r {
                let oi = if rows == 1 { 0 } else { i };
                for j in 0..c {
                    let oj = if cols == 1 { 0 } else { j };
                    out[oi * cols + oj] += src[i * c + j];
                }
            }
            out
        }
        Op::BroadcastTo(a) => {
            let src = val(nodes, *a).data();
            let (r, c) = dims(nodes, *a);
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let si = if r == 1 { 0 } else { i };
                for j in 0..cols {
                    let sj = if c == 1 { 0 } else { j };
                    out.push(src[si * c + sj]);
                }
            }
            out
        }
        Op::ConcatCols(parts) => {
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for &p in parts {
                    let t = val(nodes, p);
                    out.extend_from_slice(t.row_slice(i));
                }
            }
            out
        }
        Op::SelectCols(a, sel) => {
            let t = val(nodes, *a);
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let r = t.row_slice(i);
                out.extend(sel.iter().map(|&j| r[j]));
            }
            out
        }
        Op::ScatterCols {
            a,
            cols: sel,
            width,
        } => {
            let t = val(nodes, *a);
            let mut out = vec![0.0; rows * width];
            for i in 0..rows {
                let r = t.row_slice(i);
                for (k, &j) in sel.iter().enumerate() {
                    out[i * width + j] += r[k];
                }
            }
            out
        }
    };
    Tensor::from_parts(rows, cols, data)
}
