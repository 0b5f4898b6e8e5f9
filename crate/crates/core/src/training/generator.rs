//! Joint training of the conditional generator, the multiplier net and the
//! per-classifier scale offsets α against the stationarity and duality losses.
//!
//! Each step draws a fresh batch from a ChaCha8 stream keyed by the step index,
//! so a run resumed from a checkpoint replays exactly the same batches.

use super::{AdamMoments, TrainError};
use crate::autodiff::{Graph, Var};
use crate::kkt::{
    duality_graph, margins, stationarity_graph, stationarity_target, DEFAULT_TIE_TOL,
};
use crate::models::{
    classifier_forward, flat_values, generator_forward, generator_graph, init_kaiming,
    multiplier_graph, GeneratorSpec, MlpSpec, MultiplierSpec, ParameterVector,
};
use crate::quasi::{
    lambda_bar, normalize, standard_normal_samples, verify_lambda, QuasiHomogeneousProfile,
};
use crate::tensor::Tensor;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const VERIFY_ALPHAS: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];
const VERIFY_SAMPLES: usize = 16;

/// One frozen classifier together with what the losses need to know about it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierEntry {
    pub spec: MlpSpec,
    pub zeta: ParameterVector,
    pub profile: QuasiHomogeneousProfile,
    /// Virtual training-set size N.
    pub n_virtual: f64,
    /// Global label of each of the classifier's outputs.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorTrainConfig {
    pub batch_size: usize,
    pub beta: f64,
    pub delta: f64,
    pub lr_theta: f64,
    pub lr_eta: f64,
    /// One rate shared by all α, or one per classifier.
    pub lr_alpha: Vec<f64>,
    pub steps: u64,
    pub tv_weight: f64,
    /// `[height, width]` of generated images; required when `tv_weight > 0`.
    pub image_shape: Option<[usize; 2]>,
    /// Relative frequency of each global label in training batches.
    pub label_weights: Option<Vec<f64>>,
    pub seed: u64,
    pub tie_tol: f64,
    pub schedule: Schedule,
    /// Factor on the multiplier net's last-layer weights at init.
    pub multiplier_out_scale: f64,
    /// Constant fill of the multiplier net's last-layer bias at init.
    pub multiplier_out_bias: f64,
    /// α used when a probe batch gives no usable margin.
    pub alpha_fallback: f64,
    /// Upper bound on the scaling deviation a profile may show.
    pub verify_tol: f64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            beta: 1.0,
            delta: 0.05,
            lr_theta: 1e-3,
            lr_eta: 1e-3,
            lr_alpha: vec![1e-2],
            steps: 20_000,
            tv_weight: 0.0,
            image_shape: None,
            label_weights: None,
            seed: 0,
            tie_tol: DEFAULT_TIE_TOL,
            schedule: Schedule::RoundRobin,
            multiplier_out_scale: 1.0,
            multiplier_out_bias: 0.0,
            alpha_fallback: 0.0,
            verify_tol: 1e-4,
        }
    }
}

/// Which classifier losses a step optimizes when there are several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// One classifier per step, cycling from a seeded random offset.
    RoundRobin,
    /// One classifier per step, drawn uniformly.
    Uniform,
    /// The sum over all classifiers every step.
    FullSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    /// Classifier trained on this step; `None` in full-sum mode.
    pub classifier: Option<usize>,
    pub l_stat: f64,
    pub l_dual: f64,
    pub tv: f64,
    pub total: f64,
    /// α values after the update.
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTrainState {
    pub theta: ParameterVector,
    pub eta: ParameterVector,
    pub alphas: Vec<f64>,
    pub theta_moments: AdamMoments,
    pub eta_moments: AdamMoments,
    pub alpha_moments: Vec<AdamMoments>,
    /// Number of updates each α has received (its own Adam clock).
    pub alpha_updates: Vec<u64>,
    /// Steps completed.
    pub step: u64,
    /// Start of the round-robin cycle.
    pub rr_offset: usize,
    pub history: Vec<HistoryRow>,
}

/// Loss graph of one step with handles to the trainable leaves.
pub struct StepGraph {
    pub graph: Graph,
    pub theta: Vec<Var>,
    pub eta: Vec<Var>,
    /// `(classifier, α leaf)` for each classifier in the step.
    pub alphas: Vec<(usize, Var)>,
    pub total: Var,
    pub l_stat: Var,
    pub l_dual: Var,
    pub tv: Option<Var>,
}

struct Prepared {
    entry: ClassifierEntry,
    zeta_bar: ParameterVector,
}

struct Draw {
    t: usize,
    y_global: Vec<usize>,
    y_local: Vec<usize>,
    eps: Tensor,
}

pub struct GeneratorTrainer {
    classifiers: Vec<Prepared>,
    generator: GeneratorSpec,
    multiplier: MultiplierSpec,
    config: GeneratorTrainConfig,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, TrainError> {
    Err(TrainError::Config(msg.into()))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl GeneratorTrainer {
    /// Checks shapes and hyperparameters, verifies every profile, and normalizes each ζ.
    pub fn new(
        classifiers: Vec<ClassifierEntry>,
        generator: GeneratorSpec,
        multiplier: MultiplierSpec,
        config: GeneratorTrainConfig,
    ) -> Result<Self, TrainError> {
        let count = classifiers.len();
        if count == 0 {
            return config_err("at least one classifier is required");
        }
        let expect_t = if count > 1 {
            Some(count)
        } else {
            generator.classifiers
        };
        if generator.classifiers != expect_t || multiplier.classifiers != expect_t {
            return config_err(format!(
                "{count} classifiers need generator and multiplier conditioned on {count} indices"
            ));
        }
        if expect_t.is_some_and(|t| t != count) {
            return config_err("classifier-index width does not match the number of classifiers");
        }
        let classes = generator.classes;
        if multiplier.classes != classes {
            return config_err("generator and multiplier disagree on the number of classes");
        }
        if multiplier.in_dim != generator.out_dim {
            return config_err("multiplier input must match generator output");
        }
        let c = &config;
        if c.batch_size == 0 {
            return config_err("batch_size must be positive");
        }
        if !(c.beta >= 0.0) || !(c.delta >= 0.0) || !(c.tv_weight >= 0.0) {
            return config_err("beta, delta and tv_weight must be nonnegative");
        }
        if !(c.lr_theta >= 0.0) || !(c.lr_eta >= 0.0) || c.lr_alpha.iter().any(|l| !(*l >= 0.0)) {
            return config_err("learning rates must be nonnegative");
        }
        if c.lr_alpha.len() != 1 && c.lr_alpha.len() != count {
            return config_err(format!(
                "lr_alpha needs 1 or {count} entries, got {}",
                c.lr_alpha.len()
            ));
        }
        if !(c.tie_tol >= 0.0) {
            return config_err("tie_tol must be nonnegative");
        }
        if c.tv_weight > 0.0 {
            match c.image_shape {
                Some([h, w]) if h * w == generator.out_dim => {}
                _ => {
                    return config_err("tv_weight needs image_shape matching the generator output")
                }
            }
        }
        if let Some(w) = &c.label_weights {
            if w.len() != classes || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return config_err(format!("label_weights needs {classes} nonnegative entries"));
            }
        }
        let mut prepared = Vec::with_capacity(count);
        for (t, entry) in classifiers.into_iter().enumerate() {
            if entry.spec.input_dim() != generator.out_dim {
                return config_err(format!(
                    "classifier {t} input does not match generator output"
                ));
            }
            if entry.labels.len() != entry.spec.output_dim() || entry.labels.len() < 2 {
                return config_err(format!(
                    "classifier {t} needs one global label per output (at least 2)"
                ));
            }
            if entry.labels.iter().any(|&l| l >= classes) {
                return config_err(format!("classifier {t} has a label outside 0..{classes}"));
            }
            let mut sorted = entry.labels.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != entry.labels.len() {
                return config_err(format!("classifier {t} repeats a label"));
            }
            if let Some(w) = &c.label_weights {
                if entry.labels.iter().all(|&l| w[l] == 0.0) {
                    return config_err(format!(
                        "label_weights exclude every label of classifier {t}"
                    ));
                }
            }
            if !(entry.n_virtual > 0.0) {
                return config_err(format!("classifier {t} needs a positive N"));
            }
            if !entry.zeta.matches(&entry.spec) {
                return config_err(format!(
                    "classifier {t} parameters do not fit its architecture"
                ));
            }
            let probe = standard_normal_samples(VERIFY_SAMPLES, entry.spec.input_dim(), 0);
            let deviation = verify_lambda(
                &entry.spec,
                &entry.zeta,
                &entry.profile,
                &VERIFY_ALPHAS,
                &probe,
            )?;
            if !(deviation < c.verify_tol) {
                return Err(TrainError::ProfileInvalid {
                    classifier: t,
                    deviation,
                });
            }
            let (zeta_bar, _) = normalize(&entry.zeta, &entry.profile)?;
            prepared.push(Prepared { entry, zeta_bar });
        }
        Ok(Self {
            classifiers: prepared,
            generator,
            multiplier,
            config,
        })
    }

    pub fn config(&self) -> &GeneratorTrainConfig {
        &self.config
    }

    pub fn classifier_count(&self) -> usize {
        self.classifiers.len()
    }

    /// The normalized parameters the losses are evaluated at.
    pub fn zeta_bar(&self, t: usize) -> &ParameterVector {
        &self.classifiers[t].zeta_bar
    }

    fn lr_alpha(&self, t: usize) -> f64 {
        self.config.lr_alpha[if self.config.lr_alpha.len() == 1 {
            0
        } else {
            t
        }]
    }

    fn t_input(&self, t: usize, n: usize) -> Option<Vec<usize>> {
        self.generator.classifiers.map(|_| vec![t; n])
    }

    fn draw(&self, rng: &mut ChaCha8Rng, t: usize) -> Draw {
        let labels = &self.classifiers[t].entry.labels;
        let weights: Vec<f64> = match &self.config.label_weights {
            Some(w) => labels.iter().map(|&l| w[l]).collect(),
            None => vec![1.0; labels.len()],
        };
        let pick = WeightedIndex::new(&weights).expect("validated label weights");
        let m = self.config.batch_size;
        let y_local: Vec<usize> = (0..m).map(|_| pick.sample(rng)).collect();
        let y_global = y_local.iter().map(|&k| labels[k]).collect();
        let eps = (0..m * self.generator.noise_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Draw {
            t,
            y_global,
            y_local,
            eps: Tensor::from_parts(m, self.generator.noise_dim, eps),
        }
    }

    fn draws_for_step(&self, state: &GeneratorTrainState) -> Vec<Draw> {
        let mut rng = stream_rng(self.config.seed, state.step + 1);
        let count = self.classifiers.len();
        let t = match self.config.schedule {
            Schedule::FullSum => return (0..count).map(|t| self.draw(&mut rng, t)).collect(),
            Schedule::RoundRobin => ((state.rr_offset as u64 + state.step) % count as u64) as usize,
            Schedule::Uniform => rng.gen_range(0..count),
        };
        vec![self.draw(&mut rng, t)]
    }

    /// Fresh networks, α from a probe batch, zeroed optimizer state.
    pub fn init_state(&self) -> Result<GeneratorTrainState, TrainError> {
        let mut rng = stream_rng(self.config.seed, 0);
        let gen_mlp = self.generator.mlp()?;
        let mult_mlp = self.multiplier.mlp()?;
        let theta = init_kaiming(&gen_mlp, rng.gen());
        let mut eta = init_kaiming(&mult_mlp, rng.gen());
        let last = mult_mlp.layers() - 1;
        let w = eta
            .group_index(&format!("layer{last}.weight"))
            .expect("last weight group");
        eta.group_mut(w)
            .iter_mut()
            .for_each(|v| *v *= self.config.multiplier_out_scale);
        let b = eta
            .group_index(&format!("layer{last}.bias"))
            .expect("last bias group");
        eta.group_mut(b)
            .iter_mut()
            .for_each(|v| *v = self.config.multiplier_out_bias);
        let count = self.classifiers.len();
        let rr_offset = rng.gen_range(0..count);
        let mut alphas = Vec::with_capacity(count);
        for t in 0..count {
            let d = self.draw(&mut rng, t);
            let x = generator_forward(
                &self.generator,
                &theta,
                &d.eps,
                &d.y_global,
                self.t_input(t, d.eps.rows()).as_deref(),
            )?;
            alphas.push(self.probe_alpha(t, &x, &d.y_local)?);
        }
        Ok(GeneratorTrainState {
            theta_moments: AdamMoments::zeros(theta.len()),
            eta_moments: AdamMoments::zeros(eta.len()),
            theta,
            eta,
            alpha_moments: vec![AdamMoments::zeros(1); count],
            alpha_updates: vec![0; count],
            alphas,
            step: 0,
            rr_offset,
            history: Vec::new(),
        })
    }

    /// `α = −ln m₀` with m₀ the smallest positive margin of a probe batch,
    /// else the mean absolute margin, else the configured fallback.
    fn probe_alpha(&self, t: usize, x: &Tensor, y_local: &[usize]) -> Result<f64, TrainError> {
        let p = &self.classifiers[t];
        let logits = classifier_forward(&p.entry.spec, &p.zeta_bar, x)?;
        let all: Vec<f64> = margins(&logits, y_local)
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(move |(c, _)| *c != y_local[i])
                    .map(|(_, &m)| m)
            })
            .filter(|m| m.is_finite())
            .collect();
        let positive = all
            .iter()
            .copied()
            .filter(|&m| m > 0.0)
            .fold(f64::INFINITY, f64::min);
        let m0 = if positive.is_finite() {
            positive
        } else if !all.is_empty() {
            all.iter().map(|m| m.abs()).sum::<f64>() / all.len() as f64
        } else {
            0.0
        };
        Ok(if m0 > 0.0 && m0.is_finite() {
            -m0.ln()
        } else {
            self.config.alpha_fallback
        })
    }

    fn graph_for(
        &self,
        state: &GeneratorTrainState,
        draws: &[Draw],
    ) -> Result<StepGraph, TrainError> {
        let mut g = Graph::new();
        let theta = state.theta.leaves(&mut g);
        let eta = state.eta.leaves(&mut g);
        let mut alphas = Vec::new();
        let (mut stats, mut duals, mut tvs) = (Vec::new(), Vec::new(), Vec::new());
        for d in draws {
            let p = &self.classifiers[d.t];
            let m = d.eps.rows();
            let t_in = self.t_input(d.t, m);
            let eps = g.constant(d.eps.clone());
            let x = generator_graph(
                &mut g,
                &self.generator,
                &theta,
                eps,
                &d.y_global,
                t_in.as_deref(),
            )?;
            let raw = multiplier_graph(
                &mut g,
                &self.multiplier,
                &eta,
                x,
                &d.y_global,
                t_in.as_deref(),
            )?;
            let mu = g.relu(raw);
            let mu = g.select_cols(mu, &p.entry.labels)?;
            let zeta = p.zeta_bar.leaves(&mut g);
            // α enters L_stat only as a constant; its gradient comes from L_dual.
            let weights = lambda_bar(&p.entry.profile, state.alphas[d.t]);
            let target = stationarity_target(&p.zeta_bar, &weights, p.entry.n_virtual);
            let (stat, logits) =
                stationarity_graph(&mut g, &p.entry.spec, &zeta, &target, x, &d.y_local, mu)?;
            let alpha = g.param(Tensor::scalar(state.alphas[d.t]));
            let dual = duality_graph(
                &mut g,
                logits,
                &d.y_local,
                alpha,
                self.config.delta,
                self.config.tie_tol,
            )?;
            alphas.push((d.t, alpha));
            stats.push(stat);
            duals.push(dual);
            if self.config.tv_weight > 0.0 {
                let [h, w] = self.config.image_shape.expect("validated image shape");
                tvs.push(super::tv_graph(&mut g, x, h, w)?);
            }
        }
        let l_stat = sum_all(&mut g, &stats)?;
        let l_dual = sum_all(&mut g, &duals)?;
        let tv = if tvs.is_empty() {
            None
        } else {
            Some(sum_all(&mut g, &tvs)?)
        };
        let weighted = g.scale(l_dual, self.config.beta);
        let mut total = g.add(l_stat, weighted)?;
        if let Some(tv) = tv {
            let s = g.scale(tv, self.config.tv_weight);
            total = g.add(total, s)?;
        }
        Ok(StepGraph {
            graph: g,
            theta,
            eta,
            alphas,
            total,
            l_stat,
            l_dual,
            tv,
        })
    }

    /// Loss graph the next step of `state` would differentiate.
    pub fn build_step_graph(&self, state: &GeneratorTrainState) -> Result<StepGraph, TrainError> {
        let draws = self.draws_for_step(state);
        self.graph_for(state, &draws)
    }

    /// Loss the next step would see, without updating anything.
    pub fn peek_loss(&self, state: &GeneratorTrainState) -> Result<f64, TrainError> {
        let sg = self.build_step_graph(state)?;
        Ok(sg.graph.scalar(sg.total)?)
    }

    /// One optimizer step. On a non-finite loss or gradient the state is left
    /// untouched and returned inside the error.
    pub fn step(&self, state: &mut GeneratorTrainState) -> Result<HistoryRow, TrainError> {
        let step = state.step;
        let mut sg = self.build_step_graph(state)?;
        let g = &mut sg.graph;
        let total = g.scalar(sg.total)?;
        let mut wrt = sg.theta.clone();
        wrt.extend(&sg.eta);
        wrt.extend(sg.alphas.iter().map(|(_, a)| *a));
        let grads = g.gradient(sg.total, &wrt)?;
        let (nt, ne) = (sg.theta.len(), sg.eta.len());
        let g_theta = flat_values(g, &grads[..nt])?;
        let g_eta = flat_values(g, &grads[nt..nt + ne])?;
        let g_alpha = flat_values(g, &grads[nt + ne..])?;
        let finite = total.is_finite()
            && [&g_theta, &g_eta, &g_alpha]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(TrainError::Diverged {
                step,
                snapshot: Box::new(state.clone()),
            });
        }
        let row_stat = g.scalar(sg.l_stat)?;
        let row_dual = g.scalar(sg.l_dual)?;
        let row_tv = sg.tv.map(|v| g.scalar(v)).transpose()?.unwrap_or(0.0);

        let clock = step + 1;
        state.theta_moments.update(
            state.theta.values_mut(),
            &g_theta,
            self.config.lr_theta,
            clock,
        );
        state
            .eta_moments
            .update(state.eta.values_mut(), &g_eta, self.config.lr_eta, clock);
        for (k, &(t, _)) in sg.alphas.iter().enumerate() {
            state.alpha_updates[t] += 1;
            let mut a = [state.alphas[t]];
            state.alpha_moments[t].update(
                &mut a,
                &[g_alpha[k]],
                self.lr_alpha(t),
                state.alpha_updates[t],
            );
            state.alphas[t] = a[0];
        }
        state.step += 1;
        let row = HistoryRow {
            step,
            classifier: if self.config.schedule == Schedule::FullSum {
                None
            } else {
                Some(sg.alphas[0].0)
            },
            l_stat: row_stat,
            l_dual: row_dual,
            tv: row_tv,
            total,
            alphas: state.alphas.clone(),
        };
        state.history.push(row.clone());
        Ok(row)
    }

    /// Steps until `state.step == until` (or `config.steps` when `None`).
    pub fn run(
        &self,
        state: &mut GeneratorTrainState,
        until: Option<u64>,
    ) -> Result<(), TrainError> {
        let until = until.unwrap_or(self.config.steps);
        while state.step < until {
            self.step(state)?;
        }
        Ok(())
    }

    pub fn train(&self) -> Result<GeneratorTrainState, TrainError> {
        let mut state = self.init_state()?;
        self.run(&mut state, None)?;
        Ok(state)
    }
}

fn sum_all(g: &mut Graph, parts: &[Var]) -> Result<Var, TrainError> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = g.add(acc, p)?;
    }
    Ok(acc)
}

/// For each global label, the classifiers whose label set contains it.
pub fn t_table(classifier_labels: &[Vec<usize>], classes: usize) -> Vec<Vec<usize>> {
    let mut table = vec![Vec::new(); classes];
    for (t, labels) in classifier_labels.iter().enumerate() {
        for &l in labels {
            if l < classes {
                table[l].push(t);
            }
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Tensor,
    /// Classifier index each row was conditioned on (all 0 for an unconditioned generator).
    pub t: Vec<usize>,
}

/// Draws `n` samples of class `y`.
///
/// For a generator conditioned on a classifier index, `t` fixes the index;
/// otherwise it is drawn uniformly from `table[y]`.
pub fn sample(
    spec: &GeneratorSpec,
    theta: &ParameterVector,
    y: usize,
    t: Option<usize>,
    n: usize,
    seed: u64,
    table: Option<&[Vec<usize>]>,
) -> Result<Samples, TrainError> {
    if y >= spec.classes {
        return Err(TrainError::Sampling(format!(
            "label {y} outside 0..{}",
            spec.classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts: Option<Vec<usize>> = match (spec.classifiers, t) {
        (None, None) => None,
        (None, Some(t)) => {
            return Err(TrainError::Sampling(format!(
                "classifier index {t} given to a generator without classifier conditioning"
            )))
        }
        (Some(count), Some(t)) => {
            if t >= count {
                return Err(TrainError::Sampling(format!(
                    "classifier index {t} outside 0..{count}"
                )));
            }
            Some(vec![t; n])
        }
        (Some(_), None) => {
            let table =
                table.ok_or_else(|| TrainError::Sampling("no classifier table given".into()))?;
            let opts = table.get(y).filter(|o| !o.is_empty()).ok_or_else(|| {
                TrainError::Sampling(format!("no classifier was trained on label {y}"))
            })?;
            Some((0..n).map(|_| opts[rng.gen_range(0..opts.len())]).collect())
        }
    };
    if n == 0 {
        return Ok(Samples {
            x: Tensor::zeros(0, spec.out_dim),
            t: Vec::new(),
        });
    }
    let eps: Vec<f64> = (0..n * spec.noise_dim)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let eps = Tensor::from_parts(n, spec.noise_dim, eps);
    let x = generator_forward(spec, theta, &eps, &vec![y; n], ts.as_deref())?;
    Ok(Samples {
        x,
        t: ts.unwrap_or_else(|| vec![0; n]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quasi::QuasiHomogeneousProfile;

    fn toy_classifier(labels: Vec<usize>, seed: u64) -> ClassifierEntry {
        let spec = MlpSpec::uniform(vec![2, 4, labels.len()], false).unwrap();
        let zeta = init_kaiming(&spec, seed);
        let profile = QuasiHomogeneousProfile::for_params(&zeta, vec![0.5, 0.5]).unwrap();
        ClassifierEntry {
            spec,
            zeta,
            profile,
            n_virtual: 6.0,
            labels,
        }
    }

    fn specs(classes: usize, t: Option<usize>) -> (GeneratorSpec, MultiplierSpec) {
        (
            GeneratorSpec {
                noise_dim: 2,
                classes,
                classifiers: t,
                hidden: vec![6],
                out_dim: 2,
            },
            MultiplierSpec {
                in_dim: 2,
                classes,
                classifiers: t,
                hidden: vec![6],
            },
        )
    }

    fn small_config() -> GeneratorTrainConfig {
        GeneratorTrainConfig {
            batch_size: 8,
            steps: 6,
            seed: 3,
            ..Default::default()
        }
    }

    fn trainer(config: GeneratorTrainConfig) -> GeneratorTrainer {
        let (g, m) = specs(3, None);
        GeneratorTrainer::new(vec![toy_classifier(vec![0, 1, 2], 1)], g, m, config).unwrap()
    }

    #[test]
    fn zero_multipliers_without_duality_give_constant_loss() {
        let tr = trainer(GeneratorTrainConfig {
            beta: 0.0,
            lr_eta: 0.0,
            ..small_config()
        });
        let mut state = tr.init_state().unwrap();
        state.eta.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let sg = tr.build_step_graph(&state).unwrap();
        let mut g = sg.graph;
        let grads = g.gradient(sg.total, &sg.theta).unwrap();
        assert!(flat_values(&g, &grads).unwrap().iter().all(|&v| v == 0.0));
        tr.run(&mut state, None).unwrap();
        let first = state.history[0].total;
        assert!(state.history.iter().all(|r| r.total == first));
    }

    fn fd_on(tr: &GeneratorTrainer, pick: impl Fn(&StepGraph) -> Var) -> f64 {
        let state = tr.init_state().unwrap();
        let mut sg = tr.build_step_graph(&state).unwrap();
        let leaf = pick(&sg);
        let point = sg.graph.value(leaf).unwrap().clone();
        let grad = sg.graph.gradient(sg.total, &[leaf]).unwrap()[0];
        let analytic = sg.graph.value(grad).unwrap().clone();
        let h = 1e-6;
        let mut worst = 0.0f64;
        let mut probe = point.clone();
        for k in 0..point.len() {
            let x0 = point.data()[k];
            probe.data_mut()[k] = x0 + h;
            let up = sg
                .graph
                .forward(sg.total, &[(leaf, probe.clone())])
                .unwrap()
                .item();
            probe.data_mut()[k] = x0 - h;
            let down = sg
                .graph
                .forward(sg.total, &[(leaf, probe.clone())])
                .unwrap()
                .item();
            probe.data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / (1.0 + a.abs()));
        }
        worst
    }

    #[test]
    fn alpha_gradient_matches_finite_difference() {
        let tr = trainer(small_config());
        assert!(fd_on(&tr, |sg| sg.alphas[0].1) < 1e-4);
    }

    #[test]
    fn theta_gradient_matches_finite_difference() {
        let tr = trainer(small_config());
        assert!(fd_on(&tr, |sg| sg.theta[0]) < 1e-4);
        assert!(fd_on(&tr, |sg| sg.eta[2]) < 1e-4);
    }

    #[test]
    fn runs_are_reproducible_and_resumable() {
        let tr = trainer(small_config());
        let a = tr.train().unwrap();
        let b = tr.train().unwrap();
        assert_eq!(a, b);
        let mut c = tr.init_state().unwrap();
        tr.run(&mut c, Some(3)).unwrap();
        let mut resumed = c.clone();
        tr.run(&mut resumed, None).unwrap();
        assert_eq!(resumed, a);
    }

    #[test]
    fn alphas_of_two_classifiers_update_independently() {
        let (g, m) = specs(4, Some(2));
        let entries = vec![toy_classifier(vec![0, 1], 1), toy_classifier(vec![2, 3], 2)];
        let base = GeneratorTrainConfig {
            lr_theta: 0.0,
            lr_eta: 0.0,
            steps: 8,
            ..small_config()
        };
        for schedule in [Schedule::RoundRobin, Schedule::Uniform] {
            let run = |lr: Vec<f64>| {
                let cfg = GeneratorTrainConfig {
                    lr_alpha: lr,
                    schedule,
                    ..base.clone()
                };
                GeneratorTrainer::new(entries.clone(), g.clone(), m.clone(), cfg)
                    .unwrap()
                    .train()
                    .unwrap()
            };
            let both = run(vec![1e-2, 1e-2]);
            let frozen = run(vec![1e-2, 0.0]);
            assert_eq!(both.alphas[0], frozen.alphas[0]);
            assert_ne!(both.alphas[1], frozen.alphas[1]);
            assert_eq!(both.alpha_updates, frozen.alpha_updates);
            assert_eq!(both.alpha_updates.iter().sum::<u64>(), 8);
            for (t, &n) in both.alpha_updates.iter().enumerate() {
                assert_eq!(
                    n as usize,
                    both.history
                        .iter()
                        .filter(|r| r.classifier == Some(t))
                        .count()
                );
            }
        }
    }

    #[test]
    fn full_sum_updates_every_alpha_each_step() {
        let (g, m) = specs(4, Some(2));
        let entries = vec![toy_classifier(vec![0, 1], 1), toy_classifier(vec![2, 3], 2)];
        let cfg = GeneratorTrainConfig {
            schedule: Schedule::FullSum,
            steps: 3,
            ..small_config()
        };
        let s = GeneratorTrainer::new(entries, g, m, cfg)
            .unwrap()
            .train()
            .unwrap();
        assert_eq!(s.alpha_updates, vec![3, 3]);
        assert!(s.history.iter().all(|r| r.classifier.is_none()));
    }

    #[test]
    fn rejects_bad_configuration() {
        let (g, m) = specs(3, None);
        let entry = toy_classifier(vec![0, 1, 2], 1);
        let bad = |cfg: GeneratorTrainConfig| {
            GeneratorTrainer::new(vec![entry.clone()], g.clone(), m.clone(), cfg).is_err()
        };
        assert!(bad(GeneratorTrainConfig {
            batch_size: 0,
            ..small_config()
        }));
        assert!(bad(GeneratorTrainConfig {
            lr_alpha: vec![0.1, 0.1],
            ..small_config()
        }));
        assert!(bad(GeneratorTrainConfig {
            tv_weight: 1.0,
            ..small_config()
        }));
        let mut wrong = entry.clone();
        wrong.profile = QuasiHomogeneousProfile::for_params(&wrong.zeta, vec![1.0, 0.2]).unwrap();
        assert!(matches!(
            GeneratorTrainer::new(vec![wrong], g, m, small_config()),
            Err(TrainError::ProfileInvalid { .. })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_handles_edge_cases() {
        let (g, _) = specs(4, Some(2));
        let theta = init_kaiming(&g.mlp().unwrap(), 5);
        let table = t_table(&[vec![0, 1], vec![1, 2]], 4);
        assert_eq!(table, vec![vec![0], vec![0, 1], vec![1], vec![]]);
        let a = sample(&g, &theta, 1, None, 10, 7, Some(&table)).unwrap();
        let b = sample(&g, &theta, 1, None, 10, 7, Some(&table)).unwrap();
        assert_eq!(a, b);
        let single = sample(&g, &theta, 0, None, 10, 7, Some(&table)).unwrap();
        assert!(single.t.iter().all(|&t| t == 0));
        let empty = sample(&g, &theta, 2, Some(1), 0, 7, None).unwrap();
        assert_eq!(empty.x.shape(), &[0, 2]);
        assert!(sample(&g, &theta, 3, None, 4, 7, Some(&table)).is_err());
        assert!(sample(&g, &theta, 1, None, 4, 7, None).is_err());
        assert!(sample(&g, &theta, 1, Some(2), 4, 7, None).is_err());
    }
}
