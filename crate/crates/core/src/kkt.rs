//! KKT-derived losses and diagnostics for a trained classifier.
//!
//! The stationarity loss compares `(1/N) Λ̄ζ` with the multiplier-weighted
//! average of `∇ζΦ_y − ∇ζΦ_c` over a batch. The whole sum is one gradient:
//! with weights `w_iy = Σ_{c≠y} μ_ic` and `w_ic = −μ_ic`, it equals
//! `∇ζ [(1/M) Σ_i Σ_c w_ic Φ_c(x_i)]`, so a single backward pass builds it and a
//! second one differentiates it in x and μ.

use crate::autodiff::{AutodiffError, Graph, Var};
use crate::linalg::nnls;
use crate::models::{
    classifier_forward, classifier_param_gradient, mlp_graph, MlpSpec, ModelError, ParameterVector,
};
use crate::quasi::{lambda_bar, QuasiError, QuasiHomogeneousProfile};
use crate::tensor::Tensor;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default absolute tolerance for ties in the second-place set.
pub const DEFAULT_TIE_TOL: f64 = 1e-6;

/// Added under the square root of the stationarity norm.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KktError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("classifier does not separate the data: sample {sample} has margin {margin}")]
    NotSeparating { sample: usize, margin: f64 },
    #[error("non-finite stationarity term at sample {sample}")]
    NonFinite { sample: usize },
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quasi(#[from] QuasiError),
}

impl From<AutodiffError> for KktError {
    fn from(e: AutodiffError) -> Self {
        KktError::Model(ModelError::Autodiff(e))
    }
}

pub type Result<T> = std::result::Result<T, KktError>;

/// Classes `c ≠ y` whose logit is within `tie_tol` of the best rival logit.
pub fn second_place_set(logits: &[f64], y: usize, tie_tol: f64) -> Result<Vec<usize>> {
    let k = logits.len();
    if k < 2 {
        return Err(KktError::TooFewClasses(k));
    }
    if y >= k {
        return Err(KktError::InvalidLabel {
            label: y,
            classes: k,
        });
    }
    let best = (0..k)
        .filter(|&c| c != y)
        .map(|c| logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((0..k)
        .filter(|&c| c != y && logits[c] >= best - tie_tol)
        .collect())
}

/// `μ = max(μ', 0)` elementwise.
pub fn multipliers_from_proxy(proxy: &[f64]) -> Vec<f64> {
    proxy
        .iter()
        .map(|&v| if v > 0.0 { v } else { 0.0 })
        .collect()
}

/// `[M, C]` mask with ones on second-place pairs.
pub fn second_place_mask(logits: &Tensor, y: &[usize], tie_tol: f64) -> Result<Tensor> {
    let (m, c) = (logits.rows(), logits.cols());
    if y.len() != m {
        return Err(KktError::Shape(format!("{} labels for {m} rows", y.len())));
    }
    let mut mask = vec![0.0; m * c];
    for i in 0..m {
        for k in second_place_set(logits.row_slice(i), y[i], tie_tol)? {
            mask[i * c + k] = 1.0;
        }
    }
    Ok(Tensor::from_parts(m, c, mask))
}

fn check_labels(y: &[usize], classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(KktError::TooFewClasses(classes));
    }
    match y.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(KktError::InvalidLabel { label, classes }),
        None => Ok(()),
    }
}

/// `(1/N) Λ̄_j ζ_j` per group, as tensors shaped like the groups.
pub fn stationarity_target(zeta: &ParameterVector, weights: &[f64], n_virtual: f64) -> Vec<Tensor> {
    zeta.unflatten()
        .into_iter()
        .zip(weights)
        .map(|(mut t, &w)| {
            let s = w / n_virtual;
            t.data_mut().iter_mut().for_each(|v| *v *= s);
            t
        })
        .collect()
}

/// Graph pieces of one classifier's losses on a batch.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveNodes {
    pub logits: Var,
    /// Per-group residual `(1/N)Λ̄ζ − Σ μ(∇Φ_y − ∇Φ_c)/M`.
    pub stat: Var,
    pub dual: Option<Var>,
}

/// Builds `L_stationarity` on the graph.
///
/// `zeta_leaves` must be leaves of `g` holding ζ; `x` is `[M, d]` and `mu` is `[M, C]`
/// (already nonnegative). `target` comes from [`stationarity_target`].
pub fn stationarity_graph(
    g: &mut Graph,
    spec: &MlpSpec,
    zeta_leaves: &[Var],
    target: &[Tensor],
    x: Var,
    y: &[usize],
    mu: Var,
) -> Result<(Var, Var)> {
    let logits = mlp_graph(g, spec, zeta_leaves, x)?;
    let (m, c) = g.shape(logits);
    check_labels(y, c)?;
    if y.len() != m || g.shape(mu) != (m, c) {
        return Err(KktError::Shape(format!(
            "batch of {m} with {} labels and multipliers {:?}",
            y.len(),
            g.shape(mu)
        )));
    }
    if target.len() != zeta_leaves.len() {
        return Err(KktError::Shape(
            "target does not match parameter groups".into(),
        ));
    }
    let onehot = g.one_hot(y, c)?;
    let mut off = vec![1.0; m * c];
    for (i, &l) in y.iter().enumerate() {
        off[i * c + l] = 0.0;
    }
    let off = g.constant(Tensor::from_parts(m, c, off));
    let rivals = g.mul(mu, off)?;
    let total = g.sum_cols(rivals);
    let own = g.mul(onehot, total)?;
    let w = g.sub(own, rivals)?;
    let weighted = g.mul(w, logits)?;
    let s = g.sum(weighted);
    let s = g.scale(s, 1.0 / m as f64);
    let grads = g.gradient(s, zeta_leaves)?;
    let mut acc: Option<Var> = None;
    for (gj, tj) in grads.iter().zip(target) {
        let t = g.constant(tj.clone());
        let r = g.sub(t, *gj)?;
        let sq = g.square(r);
        let part = g.sum(sq);
        acc = Some(match acc {
            None => part,
            Some(a) => g.add(a, part)?,
        });
    }
    let acc = acc.ok_or_else(|| KktError::Shape("no parameter groups".into()))?;
    let acc = g.add_const(acc, NORM_EPS);
    Ok((g.sqrt(acc), logits))
}

/// Builds `L_duality` on the graph from existing logits and a `[1, 1]` α node.
pub fn duality_graph(
    g: &mut Graph,
    logits: Var,
    y: &[usize],
    alpha: Var,
    delta: f64,
    tie_tol: f64,
) -> Result<Var> {
    let (m, c) = g.shape(logits);
    check_labels(y, c)?;
    let mask = second_place_mask(g.value(logits)?, y, tie_tol)?;
    let mask = g.constant(mask);
    let onehot = g.one_hot(y, c)?;
    let own = g.mul(logits, onehot)?;
    let own = g.sum_cols(own);
    let margins = g.sub(own, logits)?;
    let na = g.neg(alpha);
    let thr = g.exp(na);
    let d = g.sub(margins, thr)?;
    let above = g.add_const(d, -delta);
    let above = g.max_const(above, 0.0);
    let below = g.min_const(d, 0.0);
    let u = g.sub(above, below)?;
    let u = g.mul(u, mask)?;
    let s = g.sum(u);
    Ok(g.scale(s, 1.0 / m as f64))
}

/// Pointwise U-shaped penalty for a single margin.
pub fn duality_term(margin: f64, alpha: f64, delta: f64) -> f64 {
    let d = margin - (-alpha).exp();
    (d - delta).max(0.0) - d.min(0.0)
}

/// `L_duality` from logit values.
pub fn duality_loss(
    logits: &Tensor,
    y: &[usize],
    alpha: f64,
    delta: f64,
    tie_tol: f64,
) -> Result<f64> {
    let m = logits.rows();
    check_labels(y, logits.cols())?;
    let mut total = 0.0;
    for i in 0..m {
        let row = logits.row_slice(i);
        for c in second_place_set(row, y[i], tie_tol)? {
            total += duality_term(row[y[i]] - row[c], alpha, delta);
        }
    }
    Ok(total / m as f64)
}

pub fn total_loss(stat: f64, dual: f64, beta: f64) -> f64 {
    stat + beta * dual
}

fn first_bad_row(t: &Tensor) -> Option<usize> {
    (0..t.rows()).find(|&i| t.row_slice(i).iter().any(|v| !v.is_finite()))
}

/// `L_stationarity` value and residual vector for a batch `x` with multipliers `mu ≥ 0`.
pub fn stationarity_loss(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    weights: &[f64],
    n_virtual: f64,
    x: &Tensor,
    y: &[usize],
    mu: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let leaves = zeta.leaves(&mut g);
    let xv = g.constant(x.clone());
    let mv = g.constant(mu.clone());
    let target = stationarity_target(zeta, weights, n_virtual);
    let (loss, logits) = stationarity_graph(&mut g, spec, &leaves, &target, xv, y, mv)?;
    let value = g.scalar(loss)?;
    if !value.is_finite() {
        let bad = first_bad_row(x)
            .or_else(|| first_bad_row(mu))
            .or_else(|| g.value(logits).ok().and_then(first_bad_row))
            .unwrap_or(0);
        return Err(KktError::NonFinite { sample: bad });
    }
    // residual = target − average gradient difference
    let mut residual: Vec<f64> = target.iter().flat_map(|t| t.data().to_vec()).collect();
    let m = x.rows() as f64;
    for i in 0..x.rows() {
        let xi = Tensor::row(x.row_slice(i).to_vec());
        let gy = classifier_param_gradient(spec, zeta, &xi, y[i])?;
        for c in (0..mu.cols()).filter(|&c| c != y[i]) {
            let w = mu.at(i, c);
            if w == 0.0 {
                continue;
            }
            let gc = classifier_param_gradient(spec, zeta, &xi, c)?;
            for (k, r) in residual.iter_mut().enumerate() {
                *r -= w * (gy.data()[k] - gc.data()[k]) / m;
            }
        }
    }
    Ok((value, residual))
}

/// Margins `Φ_y − Φ_c` for every c (zero at c = y).
pub fn margins(logits: &Tensor, y: &[usize]) -> Vec<Vec<f64>> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row_slice(i);
            row.iter().map(|&v| row[y[i]] - v).collect()
        })
        .collect()
}

/// Minimum over samples and rival classes of `Φ_y − Φ_c`.
pub fn q_min(spec: &MlpSpec, zeta_bar: &ParameterVector, x: &Tensor, y: &[usize]) -> Result<f64> {
    let logits = classifier_forward(spec, zeta_bar, x)?;
    check_labels(y, logits.cols())?;
    let mut best = f64::INFINITY;
    for (i, row) in margins(&logits, y).iter().enumerate() {
        for (c, &m) in row.iter().enumerate() {
            if c != y[i] {
                best = best.min(m);
            }
        }
    }
    Ok(best)
}

/// One fitted multiplier of the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedMultiplier {
    pub sample: usize,
    pub class: usize,
    pub margin: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    /// `‖Λ̄ζ − Σ μ (∇Φ_y − ∇Φ_c)‖ / ‖Λ̄ζ‖`
    pub residual: f64,
    pub multipliers: Vec<FittedMultiplier>,
}

/// Fits μ ≥ 0 on second-place pairs of a labeled dataset by NNLS.
///
/// Errors unless every margin is positive.
pub fn kkt_residual_oracle(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    profile: &QuasiHomogeneousProfile,
    x: &Tensor,
    y: &[usize],
    alpha: f64,
    tie_tol: f64,
) -> Result<OracleFit> {
    let logits = classifier_forward(spec, zeta, x)?;
    check_labels(y, logits.cols())?;
    for (i, row) in margins(&logits, y).iter().enumerate() {
        let worst = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y[i])
            .map(|(_, &m)| m)
            .fold(f64::INFINITY, f64::min);
        if !(worst > 0.0) {
            return Err(KktError::NotSeparating {
                sample: i,
                margin: worst,
            });
        }
    }
    kkt_residual_unchecked(spec, zeta, profile, x, y, alpha, tie_tol)
}

/// [`kkt_residual_oracle`] without the separability precondition (for control runs).
pub fn kkt_residual_unchecked(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    profile: &QuasiHomogeneousProfile,
    x: &Tensor,
    y: &[usize],
    alpha: f64,
    tie_tol: f64,
) -> Result<OracleFit> {
    let logits = classifier_forward(spec, zeta, x)?;
    check_labels(y, logits.cols())?;
    if y.len() != x.rows() {
        return Err(KktError::Shape(format!(
            "{} labels for {} samples",
            y.len(),
            x.rows()
        )));
    }
    let weights = lambda_bar(profile, alpha);
    let target: Vec<f64> = stationarity_target(zeta, &weights, 1.0)
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect();
    let marg = margins(&logits, y);
    let mut pairs = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for i in 0..x.rows() {
        let xi = Tensor::row(x.row_slice(i).to_vec());
        let gy = classifier_param_gradient(spec, zeta, &xi, y[i])?;
        for c in second_place_set(logits.row_slice(i), y[i], tie_tol)? {
            let gc = classifier_param_gradient(spec, zeta, &xi, c)?;
            columns.push(
                gy.data()
                    .iter()
                    .zip(gc.data())
                    .map(|(a, b)| a - b)
                    .collect(),
            );
            pairs.push((i, c));
        }
    }
    let n = target.len();
    let a = DMatrix::from_fn(n, columns.len(), |r, k| columns[k][r]);
    let b = DVector::from_column_slice(&target);
    let mu = nnls(&a, &b);
    let norm = b.norm();
    let residual = if norm > 0.0 {
        (&a * &mu - &b).norm() / norm
    } else {
        0.0
    };
    let multipliers = pairs
        .iter()
        .enumerate()
        .map(|(k, &(i, c))| FittedMultiplier {
            sample: i,
            class: c,
            margin: marg[i][c],
            mu: mu[k],
        })
        .collect();
    Ok(OracleFit {
        residual,
        multipliers,
    })
}

/// Everything computed for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KktEvaluation {
    pub margins: Vec<Vec<f64>>,
    pub second_place: Vec<Vec<usize>>,
    pub mu: Vec<Vec<f64>>,
    pub residual: Vec<f64>,
    pub l_stat: f64,
    pub l_dual: f64,
    pub total: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_kkt(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    weights: &[f64],
    n_virtual: f64,
    x: &Tensor,
    y: &[usize],
    mu_proxy: &Tensor,
    alpha: f64,
    delta: f64,
    beta: f64,
    tie_tol: f64,
) -> Result<KktEvaluation> {
    let mu = Tensor::from_parts(
        mu_proxy.rows(),
        mu_proxy.cols(),
        multipliers_from_proxy(mu_proxy.data()),
    );
    let (l_stat, residual) = stationarity_loss(spec, zeta, weights, n_virtual, x, y, &mu)?;
    let logits = classifier_forward(spec, zeta, x)?;
    let l_dual = duality_loss(&logits, y, alpha, delta, tie_tol)?;
    let second_place = (0..x.rows())
        .map(|i| second_place_set(logits.row_slice(i), y[i], tie_tol))
        .collect::<Result<_>>()?;
    Ok(KktEvaluation {
        margins: margins(&logits, y),
        second_place,
        mu: (0..mu.rows()).map(|i| mu.row_slice(i).to_vec()).collect(),
        residual,
        l_stat,
        l_dual,
        total: total_loss(l_stat, l_dual, beta),
    })
}

impl KktEvaluation {
    /// Flat key-value summary for one CSV row.
    pub fn record(&self) -> Vec<(String, f64)> {
        let flat_margins: Vec<f64> = self
            .margins
            .iter()
            .zip(&self.second_place)
            .flat_map(|(row, s)| s.iter().map(|&c| row[c]).collect::<Vec<_>>())
            .collect();
        let min_margin = flat_margins.iter().copied().fold(f64::INFINITY, f64::min);
        let mean_margin = flat_margins.iter().sum::<f64>() / flat_margins.len().max(1) as f64;
        let active = self.mu.iter().flatten().filter(|&&v| v > 0.0).count();
        let residual_norm = self.residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        vec![
            ("batch".into(), self.margins.len() as f64),
            ("l_stat".into(), self.l_stat),
            ("l_dual".into(), self.l_dual),
            ("total".into(), self.total),
            ("residual_norm".into(), residual_norm),
            ("min_second_place_margin".into(), min_margin),
            ("mean_second_place_margin".into(), mean_margin),
            ("active_multipliers".into(), active as f64),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_kaiming;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn second_place_examples() {
        assert_eq!(
            second_place_set(&[3.0, 1.0, 1.0], 0, 1e-9).unwrap(),
            vec![1, 2]
        );
        assert_eq!(
            second_place_set(&[3.0, 2.0, 1.0], 0, 1e-9).unwrap(),
            vec![1]
        );
        assert_eq!(
            second_place_set(&[1.0, 3.0, 2.0], 0, 1e-9).unwrap(),
            vec![1]
        );
        assert_eq!(
            second_place_set(&[1.0], 0, 1e-9),
            Err(KktError::TooFewClasses(1))
        );
    }

    #[test]
    fn proxy_examples() {
        assert_eq!(
            multipliers_from_proxy(&[-1.0, 0.0, 2.0]),
            vec![0.0, 0.0, 2.0]
        );
        assert_eq!(multipliers_from_proxy(&[-1.0, -3.0]), vec![0.0, 0.0]);
        let once = multipliers_from_proxy(&[-0.5, 0.25, 7.0]);
        assert_eq!(multipliers_from_proxy(&once), once);
    }

    fn linear_setup() -> (MlpSpec, ParameterVector) {
        let spec = MlpSpec::uniform(vec![2, 2], true).unwrap();
        let p = ParameterVector::from_values(&spec, vec![0.5, -1.0, 2.0, 0.25, 0.1, -0.3]).unwrap();
        (spec, p)
    }

    #[test]
    fn zero_multipliers_leave_scaled_parameter_norm() {
        let (spec, p) = linear_setup();
        let w = [0.7, 1.3];
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let mu = Tensor::zeros(2, 2);
        let (loss, _) = stationarity_loss(&spec, &p, &w, 4.0, &x, &[0, 1], &mu).unwrap();
        let expect =
            (0.7f64.powi(2) * (0.25 + 1.0 + 4.0 + 0.0625) + 1.3f64.powi(2) * (0.01 + 0.09)).sqrt()
                / 4.0;
        assert!((loss - expect).abs() < 1e-10);
    }

    #[test]
    fn linear_closed_form() {
        // ∇Φ_y − ∇Φ_c for a linear net is (e_y − e_c) ⊗ [x; 1].
        let (spec, p) = linear_setup();
        let (w, n) = ([1.0, 1.0], 18.0);
        let x = [0.3, -1.2];
        let mu = 0.8;
        let xt = Tensor::matrix(1, 2, x.to_vec()).unwrap();
        let mut mut_ = Tensor::zeros(1, 2);
        mut_.data_mut()[1] = mu;
        let (loss, residual) = stationarity_loss(&spec, &p, &w, n, &xt, &[0], &mut_).unwrap();
        // weight [2,2] then bias [1,2]
        let diff = [x[0], x[1], -x[0], -x[1], 1.0, -1.0];
        let mut expect = 0.0;
        for k in 0..6 {
            let r = p.values()[k] / n - mu * diff[k];
            assert!((residual[k] - r).abs() < 1e-12);
            expect += r * r;
        }
        assert!((loss - expect.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn duplicated_batch_keeps_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = MlpSpec::uniform(vec![2, 6, 3], false).unwrap();
        let p = init_kaiming(&spec, 1);
        let xs: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mus: Vec<f64> = (0..12).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y = [0, 2, 1, 1];
        let one = stationarity_loss(
            &spec,
            &p,
            &[0.5, 0.5],
            18.0,
            &Tensor::matrix(4, 2, xs.clone()).unwrap(),
            &y,
            &Tensor::matrix(4, 3, mus.clone()).unwrap(),
        )
        .unwrap()
        .0;
        let two = stationarity_loss(
            &spec,
            &p,
            &[0.5, 0.5],
            18.0,
            &Tensor::matrix(8, 2, [xs.clone(), xs].concat()).unwrap(),
            &[y, y].concat(),
            &Tensor::matrix(8, 3, [mus.clone(), mus].concat()).unwrap(),
        )
        .unwrap()
        .0;
        assert!((one - two).abs() < 1e-12);
    }

    #[test]
    fn duality_examples() {
        let one = |m: f64| {
            let logits = Tensor::matrix(1, 2, vec![m, 0.0]).unwrap();
            duality_loss(&logits, &[0], 0.0, 0.1, DEFAULT_TIE_TOL).unwrap()
        };
        assert_eq!(one(1.05), 0.0);
        assert!((one(0.9) - 0.1).abs() < 1e-15);
        assert!((one(1.3) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn duality_alpha_gradient_flat_in_basin_and_fd_outside() {
        for (margin, flat) in [(1.05, true), (0.7, false), (1.6, false)] {
            let mut g = Graph::new();
            let logits = g.constant(Tensor::matrix(1, 3, vec![margin, 0.0, -0.5]).unwrap());
            let alpha = g.param(Tensor::scalar(0.0));
            let l = duality_graph(&mut g, logits, &[0], alpha, 0.1, DEFAULT_TIE_TOL).unwrap();
            let d = g.gradient(l, &[alpha]).unwrap()[0];
            let gv = g.scalar(d).unwrap();
            if flat {
                assert_eq!(gv, 0.0);
            } else {
                let h = 1e-6;
                let fd = (duality_term(margin, h, 0.1) - duality_term(margin, -h, 0.1)) / (2.0 * h);
                assert!((gv - fd).abs() / (gv.abs() + 1e-12) < 1e-5);
            }
        }
    }

    #[test]
    fn duality_graph_matches_value_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let logits = Tensor::matrix(5, 3, data).unwrap();
        let y = [0, 1, 2, 0, 1];
        let mut g = Graph::new();
        let lv = g.constant(logits.clone());
        let a = g.param(Tensor::scalar(0.3));
        let l = duality_graph(&mut g, lv, &y, a, 0.05, DEFAULT_TIE_TOL).unwrap();
        let expect = duality_loss(&logits, &y, 0.3, 0.05, DEFAULT_TIE_TOL).unwrap();
        assert!((g.scalar(l).unwrap() - expect).abs() < 1e-14);
        assert!(expect >= 0.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
        assert_eq!(total_loss(0.5, 0.5, 1.0), 1.0);
        let vals: Vec<f64> = [0.5, 1.0, 2.0]
            .iter()
            .map(|&b| total_loss(0.3, 0.2, b))
            .collect();
        assert!(((vals[2] - vals[1]) - 2.0 * (vals[1] - vals[0])).abs() < 1e-15);
    }

    #[test]
    fn q_min_examples() {
        let spec = MlpSpec::uniform(vec![2, 2], false).unwrap();
        let p = ParameterVector::from_values(&spec, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![2.0, 1.0]).unwrap();
        assert_eq!(q_min(&spec, &p, &x, &[0]).unwrap(), 1.0);
        let x2 = Tensor::matrix(2, 2, vec![2.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(q_min(&spec, &p, &x2, &[0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn stationarity_gradient_in_x_and_mu_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let spec = MlpSpec::uniform(vec![2, 5, 3], true).unwrap();
        let mut p = init_kaiming(&spec, 2);
        p.values_mut().iter_mut().for_each(|v| *v += 0.05);
        let target = stationarity_target(&p, &[0.0, 0.0, 0.0, 1.0], 18.0);
        let mut g = Graph::new();
        let leaves = p.leaves(&mut g);
        let xs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ms: Vec<f64> = (0..9).map(|_| rng.gen_range(0.1..1.0)).collect();
        let x = g.param(Tensor::matrix(3, 2, xs).unwrap());
        let mu = g.param(Tensor::matrix(3, 3, ms).unwrap());
        let (loss, _) =
            stationarity_graph(&mut g, &spec, &leaves, &target, x, &[0, 1, 2], mu).unwrap();
        for leaf in [x, mu] {
            let point = g.value(leaf).unwrap().clone();
            let r =
                crate::autodiff::finite_difference_check(&mut g, loss, leaf, &point, 1e-6).unwrap();
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn oracle_beats_random_multipliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let spec = MlpSpec::uniform(vec![2, 6, 3], false).unwrap();
        let p = init_kaiming(&spec, 4);
        let xs: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::matrix(8, 2, xs).unwrap();
        let logits = classifier_forward(&spec, &p, &x).unwrap();
        let y: Vec<usize> = (0..8)
            .map(|i| {
                let r = logits.row_slice(i);
                (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap()
            })
            .collect();
        let prof = QuasiHomogeneousProfile::for_params(&p, vec![0.5, 0.5]).unwrap();
        let fit = kkt_residual_oracle(&spec, &p, &prof, &x, &y, 0.0, DEFAULT_TIE_TOL).unwrap();
        let weights = lambda_bar(&prof, 0.0);
        let norm = stationarity_target(&p, &weights, 1.0)
            .iter()
            .flat_map(|t| t.data().to_vec())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        // Oracle μ expressed as a batch multiplier matrix (N = 1, M = 8 → scale by M).
        let mut mu_fit = Tensor::zeros(8, 3);
        for f in &fit.multipliers {
            mu_fit.data_mut()[f.sample * 3 + f.class] = f.mu * 8.0;
        }
        let best = stationarity_loss(&spec, &p, &weights, 1.0, &x, &y, &mu_fit)
            .unwrap()
            .0;
        assert!((best / norm - fit.residual).abs() < 1e-6);
        for _ in 0..100 {
            let mut mu = Tensor::zeros(8, 3);
            for f in &fit.multipliers {
                mu.data_mut()[f.sample * 3 + f.class] = rng.gen_range(0.0..2.0) * 8.0;
            }
            let l = stationarity_loss(&spec, &p, &weights, 1.0, &x, &y, &mu)
                .unwrap()
                .0;
            assert!(l >= best - 1e-9);
        }
    }

    #[test]
    fn oracle_rejects_non_separating_classifier() {
        let spec = MlpSpec::uniform(vec![2, 2], false).unwrap();
        let p = ParameterVector::from_values(&spec, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let prof = QuasiHomogeneousProfile::for_params(&p, vec![1.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![2.0, 1.0]).unwrap();
        assert!(matches!(
            kkt_residual_oracle(&spec, &p, &prof, &x, &[1], 0.0, DEFAULT_TIE_TOL),
            Err(KktError::NotSeparating { sample: 0, .. })
        ));
    }
}
