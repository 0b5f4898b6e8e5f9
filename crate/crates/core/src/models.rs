//! Fully-connected relu networks: the classifier Φ, the generator g and the multiplier net h.
//!
//! Every layer owns a weight group `layer{k}.weight` of shape `[out, in]` and, if
//! enabled, a bias group `layer{k}.bias` of shape `[1, out]`. Groups are stored
//! layer-major, weight before bias, in one flat vector.

use crate::autodiff::{AutodiffError, Graph, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("input has width {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("class index {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("{0}")]
    Conditioning(String),
    #[error("parameter vector does not match the architecture: {0}")]
    ParameterMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture of a relu MLP with identity output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    bias: Vec<bool>,
}

/// Location and shape of one parameter group in a flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupInfo {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MlpSpec {
    /// `widths` lists input, hidden and output sizes; `bias[k]` enables the bias of layer k.
    pub fn new(widths: Vec<usize>, bias: Vec<bool>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(ModelError::InvalidSpec("need at least one layer".into()));
        }
        if bias.len() != widths.len() - 1 {
            return Err(ModelError::InvalidSpec(format!(
                "{} bias flags for {} layers",
                bias.len(),
                widths.len() - 1
            )));
        }
        if widths.contains(&0) {
            return Err(ModelError::InvalidSpec("zero-width layer".into()));
        }
        Ok(Self { widths, bias })
    }

    /// Same bias flag on every layer.
    pub fn uniform(widths: Vec<usize>, bias: bool) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        Self::new(widths, vec![bias; n])
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn bias(&self) -> &[bool] {
        &self.bias
    }

    pub fn layers(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn layout(&self) -> Vec<GroupInfo> {
        let mut groups = Vec::new();
        let mut offset = 0;
        for k in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[k], self.widths[k + 1]);
            groups.push(GroupInfo {
                name: format!("layer{k}.weight"),
                offset,
                len: fan_in * fan_out,
                rows: fan_out,
                cols: fan_in,
            });
            offset += fan_in * fan_out;
            if self.bias[k] {
                groups.push(GroupInfo {
                    name: format!("layer{k}.bias"),
                    offset,
                    len: fan_out,
                    rows: 1,
                    cols: fan_out,
                });
                offset += fan_out;
            }
        }
        groups
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|g| g.len).sum()
    }

    /// Recovers the architecture from a group table written by [`MlpSpec::layout`].
    pub fn from_layout(groups: &[GroupInfo]) -> Result<Self> {
        let mut widths = Vec::new();
        let mut bias = Vec::new();
        let mut i = 0;
        let mut k = 0;
        while i < groups.len() {
            let w = &groups[i];
            if w.name != format!("layer{k}.weight") {
                return Err(ModelError::InvalidSpec(format!(
                    "unexpected group {}",
                    w.name
                )));
            }
            if widths.is_empty() {
                widths.push(w.cols);
            } else if *widths.last().unwrap() != w.cols {
                return Err(ModelError::InvalidSpec(format!(
                    "group {} has wrong fan-in",
                    w.name
                )));
            }
            widths.push(w.rows);
            i += 1;
            let has_bias = groups
                .get(i)
                .is_some_and(|b| b.name == format!("layer{k}.bias"));
            if has_bias {
                i += 1;
            }
            bias.push(has_bias);
            k += 1;
        }
        let spec = Self::new(widths, bias)?;
        if spec.layout() != groups {
            return Err(ModelError::InvalidSpec(
                "group table is not a canonical MLP layout".into(),
            ));
        }
        Ok(spec)
    }

    /// Short canonical description, e.g. `2-16-16-3/b001`.
    pub fn describe(&self) -> String {
        let w: Vec<String> = self.widths.iter().map(usize::to_string).collect();
        let b: String = self
            .bias
            .iter()
            .map(|&f| if f { '1' } else { '0' })
            .collect();
        format!("{}/b{}", w.join("-"), b)
    }

    /// First 8 bytes (little-endian) of SHA-256 over [`MlpSpec::describe`].
    pub fn spec_hash(&self) -> u64 {
        let digest = Sha256::digest(self.describe().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Flat parameter storage with a named group map.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    groups: Vec<GroupInfo>,
}

impl ParameterVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            groups: spec.layout(),
        }
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        Self::with_groups(spec.layout(), values)
    }

    /// Checks that `groups` tile `values` exactly, in order.
    pub fn with_groups(groups: Vec<GroupInfo>, values: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        for g in &groups {
            if g.offset != offset || g.len != g.rows * g.cols {
                return Err(ModelError::ParameterMismatch(format!(
                    "group {} misplaced",
                    g.name
                )));
            }
            offset += g.len;
        }
        if offset != values.len() {
            return Err(ModelError::ParameterMismatch(format!(
                "groups cover {offset} values, vector has {}",
                values.len()
            )));
        }
        Ok(Self { values, groups })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn group(&self, j: usize) -> &[f64] {
        let g = &self.groups[j];
        &self.values[g.offset..g.offset + g.len]
    }

    pub fn group_mut(&mut self, j: usize) -> &mut [f64] {
        let g = &self.groups[j];
        &mut self.values[g.offset..g.offset + g.len]
    }

    pub fn group_norm_sq(&self, j: usize) -> f64 {
        self.group(j).iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn matches(&self, spec: &MlpSpec) -> bool {
        self.groups == spec.layout()
    }

    /// One tensor per group, in group order.
    pub fn unflatten(&self) -> Vec<Tensor> {
        (0..self.groups.len())
            .map(|j| {
                let g = &self.groups[j];
                Tensor::from_parts(g.rows, g.cols, self.group(j).to_vec())
            })
            .collect()
    }

    /// Inverse of [`ParameterVector::unflatten`] for the same group map.
    pub fn flatten(groups: Vec<GroupInfo>, tensors: &[Tensor]) -> Result<Self> {
        if tensors.len() != groups.len() {
            return Err(ModelError::ParameterMismatch(format!(
                "{} tensors for {} groups",
                tensors.len(),
                groups.len()
            )));
        }
        let mut values = Vec::new();
        for (g, t) in groups.iter().zip(tensors) {
            if t.len() != g.len {
                return Err(ModelError::ParameterMismatch(format!(
                    "group {} length",
                    g.name
                )));
            }
            values.extend_from_slice(t.data());
        }
        Self::with_groups(groups, values)
    }

    /// Adds one `Param` leaf per group to `g`.
    pub fn leaves(&self, g: &mut Graph) -> Vec<Var> {
        self.unflatten().into_iter().map(|t| g.param(t)).collect()
    }
}

/// Concatenates per-group gradient values into one flat vector.
pub fn flat_values(g: &Graph, vars: &[Var]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for &v in vars {
        out.extend_from_slice(g.value(v)?.data());
    }
    Ok(out)
}

/// Builds `Φ(x)` for a batch `x` of shape `[B, d]`; `leaves` come from [`ParameterVector::leaves`].
pub fn mlp_graph(g: &mut Graph, spec: &MlpSpec, leaves: &[Var], x: Var) -> Result<Var> {
    let expected: usize = spec.bias.iter().map(|&b| 1 + usize::from(b)).sum();
    if leaves.len() != expected {
        return Err(ModelError::ParameterMismatch(format!(
            "{} leaves for {expected} groups",
            leaves.len()
        )));
    }
    let got = g.shape(x).1;
    if got != spec.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: spec.input_dim(),
            got,
        });
    }
    let mut h = x;
    let mut idx = 0;
    for k in 0..spec.layers() {
        h = g.matmul_t(h, leaves[idx], false, true)?;
        idx += 1;
        if spec.bias[k] {
            h = g.add(h, leaves[idx])?;
            idx += 1;
        }
        if k + 1 < spec.layers() {
            h = g.relu(h);
        }
    }
    Ok(h)
}

fn as_batch(x: &Tensor) -> Result<Tensor> {
    let (r, c) = x
        .dims2()
        .ok_or_else(|| ModelError::InvalidSpec(format!("input of rank {}", x.shape().len())))?;
    Ok(Tensor::from_parts(r, c, x.data().to_vec()))
}

fn check_params(spec: &MlpSpec, p: &ParameterVector) -> Result<()> {
    if p.matches(spec) {
        Ok(())
    } else {
        Err(ModelError::ParameterMismatch(format!(
            "vector of {} values does not fit {}",
            p.len(),
            spec.describe()
        )))
    }
}

/// Logits for a single input `[d]` or a batch `[B, d]`; always returns `[B, classes]`.
pub fn classifier_forward(spec: &MlpSpec, zeta: &ParameterVector, x: &Tensor) -> Result<Tensor> {
    check_params(spec, zeta)?;
    let mut g = Graph::new();
    let leaves = zeta.leaves(&mut g);
    let xv = g.constant(as_batch(x)?);
    let out = mlp_graph(&mut g, spec, &leaves, xv)?;
    Ok(g.value(out)?.clone())
}

/// Sum over the batch of `Φ_c(x_b)` as a scalar node.
pub fn class_logit_sum(g: &mut Graph, logits: Var, class: usize) -> Result<Var> {
    let classes = g.shape(logits).1;
    if class >= classes {
        return Err(ModelError::InvalidClass { class, classes });
    }
    let col = g.select_cols(logits, &[class])?;
    Ok(g.sum(col))
}

/// `∇_ζ Φ_c(x; ζ)` as a flat row `[1, |ζ|]` aligned to the group map.
/// A batch input yields the sum of per-sample gradients.
pub fn classifier_param_gradient(
    spec: &MlpSpec,
    zeta: &ParameterVector,
    x: &Tensor,
    class: usize,
) -> Result<Tensor> {
    check_params(spec, zeta)?;
    let mut g = Graph::new();
    let leaves = zeta.leaves(&mut g);
    let xv = g.constant(as_batch(x)?);
    let out = mlp_graph(&mut g, spec, &leaves, xv)?;
    let phi = class_logit_sum(&mut g, out, class)?;
    let grads = g.gradient(phi, &leaves)?;
    Ok(Tensor::row(flat_values(&g, &grads)?))
}

/// Appends one-hot label (and classifier-index) columns to `a`.
pub fn condition(
    g: &mut Graph,
    a: Var,
    y: &[usize],
    classes: usize,
    t: Option<(&[usize], usize)>,
) -> Result<Var> {
    let rows = g.shape(a).0;
    if y.len() != rows {
        return Err(ModelError::Conditioning(format!(
            "{} labels for {rows} rows",
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
        return Err(ModelError::InvalidClass {
            class: bad,
            classes,
        });
    }
    let oy = g.one_hot(y, classes)?;
    let mut parts = vec![a, oy];
    if let Some((t, count)) = t {
        if t.len() != rows {
            return Err(ModelError::Conditioning(format!(
                "{} classifier indices for {rows} rows",
                t.len()
            )));
        }
        if let Some(&bad) = t.iter().find(|&&v| v >= count) {
            return Err(ModelError::Conditioning(format!(
                "classifier index {bad} out of range for {count} classifiers"
            )));
        }
        parts.push(g.one_hot(t, count)?);
    }
    Ok(g.concat_cols(&parts)?)
}

fn check_t(classifiers: Option<usize>, t: Option<&[usize]>) -> Result<Option<(&[usize], usize)>> {
    match (classifiers, t) {
        (Some(count), Some(t)) => Ok(Some((t, count))),
        (None, None) => Ok(None),
        (Some(_), None) => Err(ModelError::Conditioning(
            "multi-classifier network needs classifier indices".into(),
        )),
        (None, Some(_)) => Err(ModelError::Conditioning(
            "single-classifier network does not take classifier indices".into(),
        )),
    }
}

/// Conditional generator `x = g(ε, y, t; θ)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub noise_dim: usize,
    pub classes: usize,
    /// Number of classifiers T when conditioned on the classifier index.
    pub classifiers: Option<usize>,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl GeneratorSpec {
    pub fn input_dim(&self) -> usize {
        self.noise_dim + self.classes + self.classifiers.unwrap_or(0)
    }

    pub fn mlp(&self) -> Result<MlpSpec> {
        let mut widths = vec![self.input_dim()];
        widths.extend(&self.hidden);
        widths.push(self.out_dim);
        MlpSpec::uniform(widths, true)
    }
}

/// Multiplier net `μ' = h(x, y, t; η)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiplierSpec {
    pub in_dim: usize,
    pub classes: usize,
    pub classifiers: Option<usize>,
    pub hidden: Vec<usize>,
}

impl MultiplierSpec {
    pub fn input_dim(&self) -> usize {
        self.in_dim + self.classes + self.classifiers.unwrap_or(0)
    }

    pub fn mlp(&self) -> Result<MlpSpec> {
        let mut widths = vec![self.input_dim()];
        widths.extend(&self.hidden);
        widths.push(self.classes);
        MlpSpec::uniform(widths, true)
    }
}

/// Graph form of the generator; `eps` is `[B, noise_dim]`.
pub fn generator_graph(
    g: &mut Graph,
    spec: &GeneratorSpec,
    leaves: &[Var],
    eps: Var,
    y: &[usize],
    t: Option<&[usize]>,
) -> Result<Var> {
    let t = check_t(spec.classifiers, t)?;
    let got = g.shape(eps).1;
    if got != spec.noise_dim {
        return Err(ModelError::DimensionMismatch {
            expected: spec.noise_dim,
            got,
        });
    }
    let input = condition(g, eps, y, spec.classes, t)?;
    mlp_graph(g, &spec.mlp()?, leaves, input)
}

/// Graph form of the multiplier net; `x` is `[B, in_dim]`.
pub fn multiplier_graph(
    g: &mut Graph,
    spec: &MultiplierSpec,
    leaves: &[Var],
    x: Var,
    y: &[usize],
    t: Option<&[usize]>,
) -> Result<Var> {
    let t = check_t(spec.classifiers, t)?;
    let got = g.shape(x).1;
    if got != spec.in_dim {
        return Err(ModelError::DimensionMismatch {
            expected: spec.in_dim,
            got,
        });
    }
    let input = condition(g, x, y, spec.classes, t)?;
    mlp_graph(g, &spec.mlp()?, leaves, input)
}

pub fn generator_forward(
    spec: &GeneratorSpec,
    theta: &ParameterVector,
    eps: &Tensor,
    y: &[usize],
    t: Option<&[usize]>,
) -> Result<Tensor> {
    check_params(&spec.mlp()?, theta)?;
    let mut g = Graph::new();
    let leaves = theta.leaves(&mut g);
    let e = g.constant(as_batch(eps)?);
    let out = generator_graph(&mut g, spec, &leaves, e, y, t)?;
    Ok(g.value(out)?.clone())
}

pub fn multiplier_forward(
    spec: &MultiplierSpec,
    eta: &ParameterVector,
    x: &Tensor,
    y: &[usize],
    t: Option<&[usize]>,
) -> Result<Tensor> {
    check_params(&spec.mlp()?, eta)?;
    let mut g = Graph::new();
    let leaves = eta.leaves(&mut g);
    let xv = g.constant(as_batch(x)?);
    let out = multiplier_graph(&mut g, spec, &leaves, xv, y, t)?;
    Ok(g.value(out)?.clone())
}

/// Weights ~ N(0, 2/fan_in), biases zero. Deterministic in `seed`.
pub fn init_kaiming(spec: &MlpSpec, seed: u64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterVector::zeros(spec);
    for j in 0..p.group_count() {
        let info = p.groups[j].clone();
        if !info.name.ends_with(".weight") {
            continue;
        }
        let normal = Normal::new(0.0, (2.0 / info.cols as f64).sqrt()).expect("positive std");
        for v in p.group_mut(j) {
            *v = normal.sample(&mut rng);
        }
    }
    p
}
