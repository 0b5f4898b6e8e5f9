use super::{Graph, Result, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// max over coordinates of |analytic - numeric| / (|analytic| + 1e-12)
    pub max_rel_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares `d root / d leaf` at `point` with central differences of step `step`.
///
/// `root` may itself contain gradient nodes, in which case this checks a mixed
/// second derivative. Other leaves keep their current values. The leaf is left
/// bound to `point` afterwards.
pub fn finite_difference_check(
    graph: &mut Graph,
    root: Var,
    leaf: Var,
    point: &Tensor,
    step: f64,
) -> Result<FdReport> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let grad = graph.gradient(root, &[leaf])?[0];
    let analytic = graph.forward(grad, &[(leaf, point.clone())])?.into_data();
    let mut numeric = Vec::with_capacity(point.len());
    let mut probe = point.clone();
    for k in 0..point.len() {
        let x0 = point.data()[k];
        probe.data_mut()[k] = x0 + step;
        let up = graph.forward(root, &[(leaf, probe.clone())])?.item();
        probe.data_mut()[k] = x0 - step;
        let down = graph.forward(root, &[(leaf, probe.clone())])?.item();
        probe.data_mut()[k] = x0;
        numeric.push((up - down) / (2.0 * step));
    }
    graph.forward(root, &[(leaf, point.clone())])?;
    let max_rel_error = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-12))
        .fold(0.0, f64::max);
    Ok(FdReport {
        max_rel_error,
        analytic,
        numeric,
    })
}
