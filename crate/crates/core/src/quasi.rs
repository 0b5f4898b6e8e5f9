//! Quasi-homogeneity structure Λ of a classifier, stored per parameter group.
//!
//! A network is Λ-quasi-homogeneous when scaling each group j by `e^{α λ_j}`
//! scales every logit by `e^α`. Differentiating that identity at α = 0 gives
//! Euler-type equations that are linear in λ; stacking them over random inputs
//! gives a least-squares system.

use crate::autodiff::Graph;
use crate::linalg::min_norm_nonneg_lstsq;
use crate::models::{
    classifier_forward, flat_values, mlp_graph, MlpSpec, ModelError, ParameterVector,
};
use crate::tensor::Tensor;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for membership in the λ_max set.
pub const TIE_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum QuasiError {
    #[error("profile has {profile} groups, parameters have {params}")]
    GroupMismatch { profile: usize, params: usize },
    #[error("seminorm is zero; parameters are degenerate")]
    ZeroSeminorm,
    #[error("equation system has no rows")]
    EmptySystem,
    #[error("equation system is all zeros")]
    ZeroSystem,
    #[error("derivative order must be 1 or 2, got {0}")]
    InvalidOrder(usize),
    #[error("negative λ {value} for group {group}")]
    NegativeLambda { group: usize, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, QuasiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuasiHomogeneousProfile {
    pub groups: Vec<String>,
    pub lambda: Vec<f64>,
    pub lambda_max: f64,
    /// Groups with λ within [`TIE_TOL`] (relative) of λ_max.
    pub tilde: Vec<bool>,
    /// ‖A λ − b‖ of the row-equilibrated system it was solved from (0 when set by hand).
    pub residual: f64,
}

impl QuasiHomogeneousProfile {
    pub fn new(groups: Vec<String>, lambda: Vec<f64>, residual: f64) -> Result<Self> {
        if groups.len() != lambda.len() {
            return Err(QuasiError::GroupMismatch {
                profile: lambda.len(),
                params: groups.len(),
            });
        }
        if let Some((group, &value)) = lambda.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(QuasiError::NegativeLambda { group, value });
        }
        let lambda_max = lambda.iter().copied().fold(0.0, f64::max);
        let tilde = lambda
            .iter()
            .map(|&l| l >= lambda_max - TIE_TOL * lambda_max)
            .collect();
        Ok(Self {
            groups,
            lambda,
            lambda_max,
            tilde,
            residual,
        })
    }

    /// Profile with the given λ for the groups of `params`.
    pub fn for_params(params: &ParameterVector, lambda: Vec<f64>) -> Result<Self> {
        Self::new(
            params.groups().iter().map(|g| g.name.clone()).collect(),
            lambda,
            0.0,
        )
    }

    fn check(&self, params: &ParameterVector) -> Result<()> {
        let same = self.groups.len() == params.group_count()
            && self
                .groups
                .iter()
                .zip(params.groups())
                .all(|(a, b)| *a == b.name);
        if same {
            Ok(())
        } else {
            Err(QuasiError::GroupMismatch {
                profile: self.groups.len(),
                params: params.group_count(),
            })
        }
    }
}

/// `ψ_α(ζ)`: group j scaled by `e^{α λ_j}`.
pub fn scale_params(
    zeta: &ParameterVector,
    profile: &QuasiHomogeneousProfile,
    alpha: f64,
) -> Result<ParameterVector> {
    profile.check(zeta)?;
    let mut out = zeta.clone();
    for (j, &l) in profile.lambda.iter().enumerate() {
        let s = (alpha * l).exp();
        out.group_mut(j).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// `Σ_j w_j ‖ζ_j‖²`.
pub fn seminorm_sq(zeta: &ParameterVector, weights: &[f64]) -> Result<f64> {
    if weights.len() != zeta.group_count() {
        return Err(QuasiError::GroupMismatch {
            profile: weights.len(),
            params: zeta.group_count(),
        });
    }
    Ok(weights
        .iter()
        .enumerate()
        .map(|(j, w)| w * zeta.group_norm_sq(j))
        .sum())
}

/// Finds τ with `‖ψ_τ(ζ)‖²_Λ = 1` and returns `(ψ_τ(ζ), τ)`.
pub fn normalize(
    zeta: &ParameterVector,
    profile: &QuasiHomogeneousProfile,
) -> Result<(ParameterVector, f64)> {
    profile.check(zeta)?;
    let terms: Vec<(f64, f64)> = profile
        .lambda
        .iter()
        .enumerate()
        .map(|(j, &l)| (l, l * zeta.group_norm_sq(j)))
        .filter(|&(l, c)| l > 0.0 && c > 0.0)
        .collect();
    if terms.is_empty() {
        return Err(QuasiError::ZeroSeminorm);
    }
    let f = |tau: f64| {
        terms
            .iter()
            .map(|&(l, c)| c * (2.0 * tau * l).exp())
            .sum::<f64>()
    };
    let tau = if (f(0.0) - 1.0).abs() <= 1e-15 {
        0.0
    } else {
        let (mut lo, mut hi) = (-1.0, 1.0);
        while f(lo) > 1.0 {
            lo *= 2.0;
        }
        while f(hi) < 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok((scale_params(zeta, profile, tau)?, tau))
}

/// Where a row of the derivative system came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub sample: usize,
    pub output: usize,
    pub order: usize,
    /// Flat parameter index differentiated against (second-order rows only).
    pub probe: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeEquationSystem {
    pub groups: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub origin: Vec<RowOrigin>,
    /// Rows dropped because they contained non-finite values.
    pub skipped: usize,
}

impl DerivativeEquationSystem {
    fn push(&mut self, row: Vec<f64>, rhs: f64, origin: RowOrigin) {
        if rhs.is_finite() && row.iter().all(|v| v.is_finite()) {
            self.rows.push(row);
            self.rhs.push(rhs);
            self.origin.push(origin);
        } else {
            self.skipped += 1;
        }
    }
}

/// `k` standard-normal inputs of dimension `d`, shape `[k, d]`.
pub fn standard_normal_samples(k: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..k * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Tensor::from_parts(k, d, data)
}

/// Assembles the linear system in λ.
///
/// Order 1, per sample and output c: `Σ_j λ_j (ζ_j · ∇_{ζ_j} Φ_c) = Φ_c`.
///
/// Order 2 differentiates that identity in one parameter coordinate p:
/// `Σ_j λ_j ∂_p(ζ_j · ∇_{ζ_j} Φ_c) = ∂_p Φ_c`. For each group one probe is used,
/// the coordinate of that group with the largest `|∂_p Φ_c|`.
pub fn build_derivative_equations(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    samples: &Tensor,
    max_order: usize,
) -> Result<DerivativeEquationSystem> {
    if !(1..=2).contains(&max_order) {
        return Err(QuasiError::InvalidOrder(max_order));
    }
    let k = samples.rows();
    if k == 0 {
        return Err(QuasiError::EmptySystem);
    }
    let n_groups = zeta.group_count();
    let mut sys = DerivativeEquationSystem {
        groups: zeta.groups().iter().map(|g| g.name.clone()).collect(),
        rows: Vec::new(),
        rhs: Vec::new(),
        origin: Vec::new(),
        skipped: 0,
    };
    for s in 0..k {
        let mut g = Graph::new();
        let leaves = zeta.leaves(&mut g);
        let x = g.constant(Tensor::row(samples.row_slice(s).to_vec()));
        let logits = mlp_graph(&mut g, spec, &leaves, x)?;
        for c in 0..spec.output_dim() {
            let col = g.select_cols(logits, &[c]).map_err(ModelError::from)?;
            let phi = g.sum(col);
            let grads = g.gradient(phi, &leaves).map_err(ModelError::from)?;
            let mut euler = Vec::with_capacity(n_groups);
            let mut row = Vec::with_capacity(n_groups);
            for j in 0..n_groups {
                let prod = g.mul(leaves[j], grads[j]).map_err(ModelError::from)?;
                let e = g.sum(prod);
                row.push(g.scalar(e).map_err(ModelError::from)?);
                euler.push(e);
            }
            let phi_val = g.scalar(phi).map_err(ModelError::from)?;
            sys.push(
                row,
                phi_val,
                RowOrigin {
                    sample: s,
                    output: c,
                    order: 1,
                    probe: None,
                },
            );
            if max_order < 2 {
                continue;
            }
            let dphi = flat_values(&g, &grads)?;
            let probes: Vec<usize> = zeta
                .groups()
                .iter()
                .map(|info| {
                    (info.offset..info.offset + info.len)
                        .max_by(|&a, &b| dphi[a].abs().total_cmp(&dphi[b].abs()))
                        .expect("groups are nonempty")
                })
                .collect();
            // coeff[q][j] = ∂_{probe q} (ζ_j · ∇_{ζ_j} Φ_c)
            let mut coeff = vec![vec![0.0; n_groups]; n_groups];
            for (j, &e) in euler.iter().enumerate() {
                let second = g.gradient(e, &leaves).map_err(ModelError::from)?;
                let flat = flat_values(&g, &second)?;
                for (q, &p) in probes.iter().enumerate() {
                    coeff[q][j] = flat[p];
                }
            }
            for (q, &p) in probes.iter().enumerate() {
                if dphi[p] == 0.0 && coeff[q].iter().all(|&v| v == 0.0) {
                    continue;
                }
                sys.push(
                    coeff[q].clone(),
                    dphi[p],
                    RowOrigin {
                        sample: s,
                        output: c,
                        order: 2,
                        probe: Some(p),
                    },
                );
            }
        }
    }
    Ok(sys)
}

/// Least-squares λ ≥ 0; among minimizers, the one of minimum Euclidean norm.
pub fn solve_lambda(system: &DerivativeEquationSystem) -> Result<QuasiHomogeneousProfile> {
    let m = system.rows.len();
    if m == 0 {
        return Err(QuasiError::EmptySystem);
    }
    let n = system.groups.len();
    // Equilibrate rows: a consistent system keeps its solutions, and rows from
    // large-norm parameters no longer swamp the rest numerically.
    let scale: Vec<f64> = (0..m)
        .map(|i| {
            let mag = system.rows[i]
                .iter()
                .chain([&system.rhs[i]])
                .fold(0.0f64, |acc, v| acc.max(v.abs()));
            if mag > 0.0 && mag.is_finite() {
                1.0 / mag
            } else {
                1.0
            }
        })
        .collect();
    let a = DMatrix::from_fn(m, n, |i, j| system.rows[i][j] * scale[i]);
    let b = DVector::from_fn(m, |i, _| system.rhs[i] * scale[i]);
    if a.iter().all(|&v| v == 0.0) {
        return Err(QuasiError::ZeroSystem);
    }
    let x = min_norm_nonneg_lstsq(&a, &b);
    let residual = (&a * &x - &b).norm();
    let lambda = x.iter().map(|&v| v.max(0.0)).collect();
    QuasiHomogeneousProfile::new(system.groups.clone(), lambda, residual)
}

/// Max over (α, x, c) of `|Φ_c(x; ψ_α ζ) − e^α Φ_c(x; ζ)| / (|e^α Φ_c(x; ζ)| + 1e−9)`.
pub fn verify_lambda(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    profile: &QuasiHomogeneousProfile,
    alphas: &[f64],
    samples: &Tensor,
) -> Result<f64> {
    Ok(verify_lambda_detail(spec, zeta, profile, alphas, samples)?
        .iter()
        .map(|d| d.deviation)
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleDeviation {
    pub alpha: f64,
    pub sample: usize,
    /// Max over outputs for this (α, sample).
    pub deviation: f64,
}

pub fn verify_lambda_detail(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    profile: &QuasiHomogeneousProfile,
    alphas: &[f64],
    samples: &Tensor,
) -> Result<Vec<ScaleDeviation>> {
    let base = classifier_forward(spec, zeta, samples)?;
    let c = base.cols();
    let mut out = Vec::new();
    for &alpha in alphas {
        let scaled = classifier_forward(spec, &scale_params(zeta, profile, alpha)?, samples)?;
        let ea = alpha.exp();
        for s in 0..samples.rows() {
            let mut dev = 0.0f64;
            for k in 0..c {
                let target = ea * base.at(s, k);
                dev = dev.max((scaled.at(s, k) - target).abs() / (target.abs() + 1e-9));
            }
            out.push(ScaleDeviation {
                alpha,
                sample: s,
                deviation: dev,
            });
        }
    }
    Ok(out)
}

/// Per-group weights of Λ̄ = Λ̃ e^{α(2Λ − I)}.
pub fn lambda_bar(profile: &QuasiHomogeneousProfile, alpha: f64) -> Vec<f64> {
    profile
        .lambda
        .iter()
        .zip(&profile.tilde)
        .map(|(&l, &t)| {
            if t {
                profile.lambda_max * (alpha * (2.0 * l - 1.0)).exp()
            } else {
                0.0
            }
        })
        .collect()
}
