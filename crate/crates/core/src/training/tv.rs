use super::TrainError;
use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

fn pairs(height: usize, width: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut hl, mut hr, mut vt, mut vb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for r in 0..height {
        for c in 0..width {
            if c + 1 < width {
                hl.push(r * width + c);
                hr.push(r * width + c + 1);
            }
            if r + 1 < height {
                vt.push(r * width + c);
                vb.push((r + 1) * width + c);
            }
        }
    }
    (hl, hr, vt, vb)
}

fn check(d: usize, height: usize, width: usize) -> Result<(), TrainError> {
    if d != height * width {
        return Err(TrainError::Config(format!(
            "images of dimension {d} do not match {height}x{width}"
        )));
    }
    Ok(())
}

/// Mean over the batch of anisotropic total variation.
pub fn tv_loss(batch: &Tensor, height: usize, width: usize) -> Result<f64, TrainError> {
    check(batch.cols(), height, width)?;
    if batch.rows() == 0 {
        return Ok(0.0);
    }
    let (hl, hr, vt, vb) = pairs(height, width);
    let mut total = 0.0;
    for i in 0..batch.rows() {
        let p = batch.row_slice(i);
        total += hl
            .iter()
            .zip(&hr)
            .map(|(&a, &b)| (p[b] - p[a]).abs())
            .sum::<f64>();
        total += vt
            .iter()
            .zip(&vb)
            .map(|(&a, &b)| (p[b] - p[a]).abs())
            .sum::<f64>();
    }
    Ok(total / batch.rows() as f64)
}

/// Graph form of [`tv_loss`] for `x` of shape `[B, height·width]`.
pub fn tv_graph(g: &mut Graph, x: Var, height: usize, width: usize) -> Result<Var, TrainError> {
    let (b, d) = g.shape(x);
    check(d, height, width)?;
    let (hl, hr, vt, vb) = pairs(height, width);
    let mut parts = Vec::new();
    for (from, to) in [(hl, hr), (vt, vb)] {
        if from.is_empty() {
            continue;
        }
        let a = g.select_cols(x, &from)?;
        let c = g.select_cols(x, &to)?;
        let diff = g.sub(c, a)?;
        let abs = g.abs(diff);
        parts.push(g.sum(abs));
    }
    let total = match parts.as_slice() {
        [] => g.scalar_const(0.0),
        [one] => *one,
        [a, c] => g.add(*a, *c)?,
        _ => unreachable!(),
    };
    Ok(g.scale(total, 1.0 / b.max(1) as f64))
}
