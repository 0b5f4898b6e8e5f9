use crate::config::{DataKind, RunConfig, SplitName};
use crate::error::{CliError, Result};
use crate::io::{self, ClassifierSidecar, GeneratorMeta, ProfileRecord, SampleTable};
use crate::svg;
use kktgen::data::{
    argmax, circle_dataset, euclidean, nearest_neighbor, pattern_dataset, split_dataset,
    LabeledDataset, Metric, PatternKind, SplitMode,
};
use kktgen::kkt::{evaluate_kkt, q_min};
use kktgen::models::{
    classifier_forward, init_kaiming, multiplier_forward, GeneratorSpec, MlpSpec, MultiplierSpec,
};
use kktgen::quasi::{
    build_derivative_equations, lambda_bar, normalize, solve_lambda, standard_normal_samples,
    verify_lambda_detail,
};
use kktgen::training::{
    sample, t_table, train_classifier, training_accuracy, ClassifierEntry, GeneratorTrainState,
    GeneratorTrainer, TrainError,
};
use kktgen::Tensor;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

/// A loaded config and the run directory it writes into.
pub struct Ctx {
    pub config: RunConfig,
    pub hash: String,
    pub dir: PathBuf,
}

impl Ctx {
    pub fn new(config_path: &Path, out: Option<&Path>) -> Result<Self> {
        let config = RunConfig::load(config_path)?;
        let hash = config.hash();
        let dir = config.run_dir(out);
        Ok(Self { config, hash, dir })
    }

    fn generator_dir(&self) -> PathBuf {
        self.dir.join("generator")
    }

    fn classifier_count(&self) -> usize {
        match self.config.data.kind {
            DataKind::CircleSplit => 2,
            _ => 1,
        }
    }

    /// The full dataset (if any) and the dataset of each classifier.
    fn datasets(&self) -> Result<(Option<LabeledDataset>, Vec<LabeledDataset>)> {
        let d = &self.config.data;
        Ok(match d.kind {
            DataKind::Circle => (Some(circle_dataset()), vec![circle_dataset()]),
            DataKind::CircleSplit => {
                let mode = match d.split {
                    SplitName::Alternating => SplitMode::Alternating,
                    SplitName::Arc => SplitMode::Arc,
                };
                let (a, b) = split_dataset(&circle_dataset(), mode)?;
                (Some(circle_dataset()), vec![a, b])
            }
            DataKind::Patterns => {
                let p = pattern_dataset(
                    PatternKind::StripesVsChecks8x8,
                    d.per_class,
                    d.jitter,
                    d.seed,
                );
                (Some(p.clone()), vec![p])
            }
            DataKind::None => (None, Vec::new()),
        })
    }

    fn classifier_spec(&self, data: Option<&LabeledDataset>) -> Result<MlpSpec> {
        let c = &self.config.classifier;
        let pick =
            |field: &str, given: Option<usize>, inferred: Option<usize>| match (given, inferred) {
                (Some(a), Some(b)) if a != b => Err(CliError::usage(format!(
                    "config field `classifier.{field}` = {a} disagrees with the dataset ({b})"
                ))),
                (g, i) => g.or(i).ok_or_else(|| {
                    CliError::usage(format!("config field `classifier.{field}` is required"))
                }),
            };
        let input = pick("input_dim", c.input_dim, data.map(|d| d.dim()))?;
        let outputs = pick("outputs", c.outputs, data.map(|d| d.classes))?;
        let mut widths = vec![input];
        widths.extend(&c.hidden);
        widths.push(outputs);
        Ok(MlpSpec::uniform(widths, c.bias)?)
    }

    fn load_classifiers(&self) -> Result<Vec<io::ClassifierCheckpoint>> {
        (0..self.classifier_count())
            .map(|t| {
                let path = io::classifier_path(&self.dir, t);
                if !path.exists() {
                    return Err(CliError::usage(format!(
                        "{} is missing; run train-classifier first",
                        path.display()
                    )));
                }
                io::load_classifier(&path)
            })
            .collect()
    }
}

fn loss_rows(loss: &[f64]) -> Vec<Vec<String>> {
    loss.iter()
        .enumerate()
        .map(|(e, &l)| vec![e.to_string(), io::fmt_f64(l)])
        .collect()
}

pub fn train_classifier_cmd(ctx: &Ctx) -> Result<()> {
    io::ensure_dir(&ctx.dir)?;
    let (_, sets) = ctx.datasets()?;
    let header = vec!["epoch".to_string(), "loss".to_string()];
    if !ctx.config.classifier.train {
        let spec = ctx.classifier_spec(None)?;
        let zeta = init_kaiming(&spec, ctx.config.classifier.seed);
        let sidecar = ClassifierSidecar {
            widths: spec.widths().to_vec(),
            bias: spec.bias().to_vec(),
            labels: (0..spec.output_dim()).collect(),
            n_train: 0,
            config_hash: ctx.hash.clone(),
            final_loss: None,
            accuracy: None,
            threshold_epoch: None,
            profile: None,
        };
        let path = io::classifier_path(&ctx.dir, 0);
        io::save_classifier(&path, &spec, &zeta, &sidecar)?;
        println!(
            "classifier 0: {} kept at initialization -> {}",
            spec.describe(),
            path.display()
        );
        return Ok(());
    }
    for (t, d) in sets.iter().enumerate() {
        let spec = ctx.classifier_spec(Some(d))?;
        let loss_path = ctx.dir.join(format!("classifier_{t}_loss.csv"));
        let (zeta, traj) = match train_classifier(d, &spec, &ctx.config.classifier.train_config(t))
        {
            Ok(r) => r,
            Err(TrainError::NotConverged {
                epochs,
                last_loss,
                trajectory,
            }) => {
                io::write_csv(&loss_path, &header, &loss_rows(&trajectory))?;
                return Err(CliError::Numeric(format!(
                    "classifier {t}: loss {last_loss:e} above log 2/N after {epochs} epochs"
                )));
            }
            Err(e) => return Err(e.into()),
        };
        io::write_csv(&loss_path, &header, &loss_rows(&traj.loss))?;
        let accuracy = training_accuracy(&spec, &zeta, d)?;
        let final_loss = *traj.loss.last().expect("nonempty trajectory");
        let sidecar = ClassifierSidecar {
            widths: spec.widths().to_vec(),
            bias: spec.bias().to_vec(),
            labels: (0..d.classes).collect(),
            n_train: d.len(),
            config_hash: ctx.hash.clone(),
            final_loss: Some(final_loss),
            accuracy: Some(accuracy),
            threshold_epoch: traj.threshold_epoch,
            profile: None,
        };
        let path = io::classifier_path(&ctx.dir, t);
        io::save_classifier(&path, &spec, &zeta, &sidecar)?;
        println!(
            "classifier {t}: {} on {} ({} points) loss {final_loss:.3e} accuracy {accuracy:.3} threshold epoch {:?} -> {}",
            spec.describe(),
            d.name,
            d.len(),
            traj.threshold_epoch,
            path.display()
        );
        if accuracy < 1.0 {
            return Err(CliError::Numeric(format!(
                "classifier {t}: training accuracy {accuracy}"
            )));
        }
    }
    Ok(())
}

pub fn estimate_lambda_cmd(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<()> {
    let paths: Vec<PathBuf> = match checkpoint {
        Some(p) => vec![p.to_path_buf()],
        None => (0..ctx.classifier_count())
            .map(|t| io::classifier_path(&ctx.dir, t))
            .collect(),
    };
    let opts = &ctx.config.lambda;
    let mut failures = Vec::new();
    for path in paths {
        let mut ck = io::load_classifier(&path)?;
        let d = ck.spec.input_dim();
        let system = build_derivative_equations(
            &ck.spec,
            &ck.zeta,
            &standard_normal_samples(opts.samples, d, opts.seed),
            opts.max_order,
        )?;
        let profile = solve_lambda(&system)?;
        let probe = standard_normal_samples(opts.verify_samples, d, opts.verify_seed);
        let detail =
            verify_lambda_detail(&ck.spec, &ck.zeta, &profile, &opts.verify_alphas, &probe)?;
        let max_deviation = detail.iter().map(|r| r.deviation).fold(0.0, f64::max);
        let rows: Vec<Vec<String>> = detail
            .iter()
            .map(|r| {
                vec![
                    io::fmt_f64(r.alpha),
                    r.sample.to_string(),
                    io::fmt_f64(r.deviation),
                ]
            })
            .collect();
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("classifier");
        let csv = path.with_file_name(format!("{stem}_lambda_verify.csv"));
        io::write_csv(
            &csv,
            &["alpha".into(), "sample".into(), "deviation".into()],
            &rows,
        )?;
        let flagged = !(max_deviation <= opts.tolerance);
        println!(
            "{}: lambda {:?} (system residual {:.1e}, {} rows, {} skipped); max deviation {max_deviation:.3e}{}",
            path.display(),
            profile.lambda,
            profile.residual,
            system.rows.len(),
            system.skipped,
            if flagged { " FLAGGED" } else { "" }
        );
        ck.sidecar.profile = Some(ProfileRecord {
            profile,
            max_deviation,
            tolerance: opts.tolerance,
            flagged,
        });
        io::write_toml(&io::sidecar_path(&path), &ck.sidecar)?;
        if flagged {
            failures.push(format!(
                "{}: deviation {max_deviation:e} > {:e}",
                path.display(),
                opts.tolerance
            ));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failures.join("; ")))
    }
}

struct GeneratorSetup {
    trainer: GeneratorTrainer,
    meta: GeneratorMeta,
}

fn generator_setup(ctx: &Ctx) -> Result<GeneratorSetup> {
    let cks = ctx.load_classifiers()?;
    let count = cks.len();
    let classes = cks
        .iter()
        .flat_map(|c| c.sidecar.labels.iter())
        .max()
        .map_or(0, |m| m + 1);
    let mut entries = Vec::with_capacity(count);
    for (t, ck) in cks.into_iter().enumerate() {
        let record = ck.sidecar.profile.ok_or_else(|| {
            CliError::usage(format!(
                "classifier {t} has no quasi-homogeneity profile; run estimate-lambda first"
            ))
        })?;
        let profile = kktgen::quasi::QuasiHomogeneousProfile::new(
            record.profile.groups,
            record.profile.lambda,
            record.profile.residual,
        )?;
        let n_virtual = match ctx.config.generator.n_virtual {
            Some(n) => n,
            None if ck.sidecar.n_train > 0 => ck.sidecar.n_train as f64,
            None => {
                return Err(CliError::usage(
                    "config field `generator.n_virtual` is required for classifiers without training data",
                ))
            }
        };
        entries.push(ClassifierEntry {
            spec: ck.spec,
            zeta: ck.zeta,
            profile,
            n_virtual,
            labels: ck.sidecar.labels,
        });
    }
    let g = &ctx.config.generator;
    let indexed = (count > 1).then_some(count);
    let out_dim = entries[0].spec.input_dim();
    let gen = GeneratorSpec {
        noise_dim: g.noise_dim,
        classes,
        classifiers: indexed,
        hidden: g.hidden.clone(),
        out_dim,
    };
    let mult = MultiplierSpec {
        in_dim: out_dim,
        classes,
        classifiers: indexed,
        hidden: g.multiplier_hidden.clone(),
    };
    let meta = GeneratorMeta {
        config_hash: ctx.hash.clone(),
        step: 0,
        rr_offset: 0,
        alphas: vec![0.0; count],
        alpha_m: vec![0.0; count],
        alpha_v: vec![0.0; count],
        alpha_updates: vec![0; count],
        noise_dim: g.noise_dim,
        classes,
        classifiers: indexed,
        hidden: g.hidden.clone(),
        out_dim,
        multiplier_hidden: g.multiplier_hidden.clone(),
        classifier_labels: entries.iter().map(|e| e.labels.clone()).collect(),
    };
    let trainer = GeneratorTrainer::new(entries, gen, mult, g.train.clone())?;
    Ok(GeneratorSetup { trainer, meta })
}

fn sample_all(
    meta: &GeneratorMeta,
    state_theta: &kktgen::models::ParameterVector,
    labels: &[usize],
    t: Option<usize>,
    per_class: usize,
    seed: u64,
) -> Result<SampleTable> {
    let spec = meta.generator_spec();
    let table = t_table(&meta.classifier_labels, meta.classes);
    let mut data = Vec::new();
    let (mut ys, mut ts) = (Vec::new(), Vec::new());
    for &y in labels {
        let s = sample(
            &spec,
            state_theta,
            y,
            t,
            per_class,
            seed.wrapping_add(y as u64),
            Some(&table),
        )?;
        data.extend_from_slice(s.x.data());
        ys.extend(std::iter::repeat(y).take(per_class));
        ts.extend(s.t);
    }
    let x = Tensor::matrix(ys.len(), spec.out_dim, data)
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    Ok(SampleTable { x, y: ys, t: ts })
}

fn save_checkpoint(
    dir: &Path,
    meta: &mut GeneratorMeta,
    state: &GeneratorTrainState,
) -> Result<()> {
    io::sync_meta(meta, state);
    io::save_generator(dir, meta, state)
}

pub fn train_generator_cmd(ctx: &Ctx, resume: bool, until: Option<u64>) -> Result<()> {
    let GeneratorSetup { trainer, mut meta } = generator_setup(ctx)?;
    let gdir = ctx.generator_dir();
    let mut state = if resume && gdir.join("state.toml").exists() {
        let ck = io::load_generator(&gdir)?;
        if ck.meta.config_hash != ctx.hash {
            return Err(CliError::usage(
                "the generator checkpoint was written with a different config; rerun without --resume",
            ));
        }
        println!("resuming from step {}", ck.state.step);
        ck.state
    } else {
        if gdir.exists() {
            fs::remove_dir_all(&gdir).map_err(|e| CliError::file(&gdir, e))?;
        }
        trainer.init_state()?
    };
    let g = &ctx.config.generator;
    let target = until.unwrap_or(g.train.steps);
    let every = g.checkpoint_every.max(1);
    save_checkpoint(&gdir, &mut meta, &state)?;
    while state.step < target {
        let mut next = (state.step / every + 1) * every;
        if g.sample_every > 0 {
            next = next.min((state.step / g.sample_every + 1) * g.sample_every);
        }
        let next = next.min(target);
        if let Err(e) = trainer.run(&mut state, Some(next)) {
            if let TrainError::Diverged { step, snapshot } = &e {
                let snap_dir = gdir.join("diverged");
                save_checkpoint(&snap_dir, &mut meta, snapshot)?;
                eprintln!(
                    "non-finite loss at step {step}; state saved to {}",
                    snap_dir.display()
                );
            }
            return Err(e.into());
        }
        save_checkpoint(&gdir, &mut meta, &state)?;
        if g.sample_every > 0 && state.step % g.sample_every == 0 {
            let labels: Vec<usize> = (0..meta.classes).collect();
            let s = sample_all(
                &meta,
                &state.theta,
                &labels,
                None,
                ctx.config.sample.per_class,
                ctx.config.sample.seed,
            )?;
            io::write_samples(&gdir.join(format!("samples_{:06}.csv", state.step)), &s)?;
        }
        if let Some(r) = state.history.last() {
            println!(
                "step {:>6}  stat {:.4e}  dual {:.4e}  total {:.4e}  alpha {:?}",
                r.step + 1,
                r.l_stat,
                r.l_dual,
                r.total,
                r.alphas
                    .iter()
                    .map(|a| (a * 1e4).round() / 1e4)
                    .collect::<Vec<_>>()
            );
        }
    }
    println!(
        "generator checkpoint at step {} -> {}",
        state.step,
        gdir.display()
    );
    Ok(())
}

pub struct SampleArgs {
    pub label: Option<usize>,
    pub t: Option<usize>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

pub fn sample_cmd(ctx: &Ctx, args: &SampleArgs) -> Result<()> {
    let ck = io::load_generator(&ctx.generator_dir())?;
    let labels: Vec<usize> = match args.label {
        Some(y) => vec![y],
        None => (0..ck.meta.classes).collect(),
    };
    let per_class = args.n.unwrap_or(ctx.config.sample.per_class);
    let seed = args.seed.unwrap_or(ctx.config.sample.seed);
    let s = sample_all(&ck.meta, &ck.state.theta, &labels, args.t, per_class, seed)?;
    let out = args
        .output
        .clone()
        .unwrap_or_else(|| ctx.dir.join("samples.csv"));
    io::write_samples(&out, &s)?;
    println!("{} samples -> {}", s.x.rows(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ClassifierDiagnostics {
    classifier: usize,
    samples: usize,
    trained_alpha: Option<f64>,
    /// −ln of the minimum margin of the normalized classifier on its own data.
    implied_alpha: Option<f64>,
    l_stat: Option<f64>,
    l_dual: Option<f64>,
    label_fraction: f64,
    /// Share of this classifier's samples strictly nearer to its own split than to the other one.
    own_split_fraction: Option<f64>,
}

#[derive(Serialize)]
struct Evaluation {
    samples: usize,
    mean_nn_distance: f64,
    max_train_min_distance: f64,
    fraction_within_0_25: f64,
    label_fraction: f64,
    train_min_distance: Vec<f64>,
    classifiers: Vec<ClassifierDiagnostics>,
}

pub fn evaluate_cmd(ctx: &Ctx, samples: Option<&Path>) -> Result<()> {
    let path = samples
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.dir.join("samples.csv"));
    let s = io::read_samples(&path)?;
    let (full, sets) = ctx.datasets()?;
    let full = full.ok_or_else(|| CliError::usage("evaluate needs a dataset"))?;
    if s.x.rows() > 0 && s.x.cols() != full.dim() {
        return Err(CliError::usage(format!(
            "samples have dimension {}, the dataset {}",
            s.x.cols(),
            full.dim()
        )));
    }
    let cks = ctx.load_classifiers()?;
    if let Some(&bad) = s.t.iter().find(|&&t| t >= cks.len()) {
        return Err(CliError::usage(format!(
            "sample row with classifier index {bad}"
        )));
    }
    let nn = if s.x.rows() > 0 {
        nearest_neighbor(&s.x, &full.x, Metric::Euclidean)?
    } else {
        Vec::new()
    };
    let train_min: Vec<f64> = (0..full.len())
        .map(|j| {
            (0..s.x.rows())
                .map(|i| euclidean(s.x.row_slice(i), full.point(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let generator = io::load_generator(&ctx.generator_dir()).ok();
    let mut hits_total = 0usize;
    let mut diags = Vec::new();
    let mut csv_rows = Vec::new();
    let mut csv_header = vec![
        "classifier".to_string(),
        "trained_alpha".into(),
        "implied_alpha".into(),
    ];
    for (t, ck) in cks.iter().enumerate() {
        let rows: Vec<usize> = (0..s.x.rows()).filter(|&i| s.t[i] == t).collect();
        let x_t = Tensor::matrix(
            rows.len(),
            full.dim(),
            rows.iter()
                .flat_map(|&i| s.x.row_slice(i).to_vec())
                .collect(),
        )
        .map_err(|e| CliError::usage(e.to_string()))?;
        let logits = classifier_forward(&ck.spec, &ck.zeta, &x_t)?;
        let hits = rows
            .iter()
            .enumerate()
            .filter(|&(k, &i)| ck.sidecar.labels[argmax(logits.row_slice(k))] == s.y[i])
            .count();
        hits_total += hits;
        let own_split_fraction = (sets.len() == 2 && !rows.is_empty())
            .then(|| kktgen::data::fraction_nearer(&x_t, &sets[t].x, &sets[1 - t].x))
            .transpose()?;
        let mut diag = ClassifierDiagnostics {
            classifier: t,
            samples: rows.len(),
            trained_alpha: None,
            implied_alpha: None,
            l_stat: None,
            l_dual: None,
            label_fraction: if rows.is_empty() {
                0.0
            } else {
                hits as f64 / rows.len() as f64
            },
            own_split_fraction,
        };
        if let Some(record) = &ck.sidecar.profile {
            let (zeta_bar, _) = normalize(&ck.zeta, &record.profile)?;
            if let Some(d) = sets.get(t) {
                diag.implied_alpha = Some(-q_min(&ck.spec, &zeta_bar, &d.x, &d.y)?.ln());
            }
            if let Some(gck) = &generator {
                let alpha = gck.state.alphas[t];
                diag.trained_alpha = Some(alpha);
                let local: Vec<Option<usize>> = rows
                    .iter()
                    .map(|&i| ck.sidecar.labels.iter().position(|&l| l == s.y[i]))
                    .collect();
                let keep: Vec<usize> = (0..rows.len()).filter(|&k| local[k].is_some()).collect();
                if !keep.is_empty() {
                    let xk = Tensor::matrix(
                        keep.len(),
                        full.dim(),
                        keep.iter()
                            .flat_map(|&k| x_t.row_slice(k).to_vec())
                            .collect(),
                    )
                    .map_err(|e| CliError::usage(e.to_string()))?;
                    let y_global: Vec<usize> = keep.iter().map(|&k| s.y[rows[k]]).collect();
                    let y_local: Vec<usize> =
                        keep.iter().map(|&k| local[k].expect("kept")).collect();
                    let t_in = gck.meta.classifiers.map(|_| vec![t; keep.len()]);
                    let raw = multiplier_forward(
                        &gck.meta.multiplier_spec(),
                        &gck.state.eta,
                        &xk,
                        &y_global,
                        t_in.as_deref(),
                    )?;
                    let cols = &ck.sidecar.labels;
                    let mu = Tensor::matrix(
                        keep.len(),
                        cols.len(),
                        (0..keep.len())
                            .flat_map(|k| cols.iter().map(move |&c| (k, c)))
                            .map(|(k, c)| raw.at(k, c))
                            .collect(),
                    )
                    .map_err(|e| CliError::usage(e.to_string()))?;
                    let tc = &ctx.config.generator.train;
                    let n_virtual = ctx
                        .config
                        .generator
                        .n_virtual
                        .unwrap_or(ck.sidecar.n_train.max(1) as f64);
                    let ev = evaluate_kkt(
                        &ck.spec,
                        &zeta_bar,
                        &lambda_bar(&record.profile, alpha),
                        n_virtual,
                        &xk,
                        &y_local,
                        &mu,
                        alpha,
                        tc.delta,
                        tc.beta,
                        tc.tie_tol,
                    )?;
                    diag.l_stat = Some(ev.l_stat);
                    diag.l_dual = Some(ev.l_dual);
                    let record = ev.record();
                    if csv_header.len() == 3 {
                        csv_header.extend(record.iter().map(|(k, _)| k.clone()));
                    }
                    let mut row = vec![
                        t.to_string(),
                        io::fmt_f64(alpha),
                        diag.implied_alpha.map(io::fmt_f64).unwrap_or_default(),
                    ];
                    row.extend(record.iter().map(|(_, v)| io::fmt_f64(*v)));
                    csv_rows.push(row);
                }
            }
        }
        diags.push(diag);
    }
    let n = s.x.rows();
    let report = Evaluation {
        samples: n,
        mean_nn_distance: if n == 0 {
            f64::NAN
        } else {
            nn.iter().map(|p| p.1).sum::<f64>() / n as f64
        },
        max_train_min_distance: train_min.iter().copied().fold(0.0, f64::max),
        fraction_within_0_25: if n == 0 {
            0.0
        } else {
            nn.iter().filter(|p| p.1 < 0.25).count() as f64 / n as f64
        },
        label_fraction: if n == 0 {
            0.0
        } else {
            hits_total as f64 / n as f64
        },
        train_min_distance: train_min,
        classifiers: diags,
    };
    io::write_toml(&ctx.dir.join("evaluation.toml"), &report)?;
    if !csv_rows.is_empty() {
        io::write_csv(&ctx.dir.join("kkt_diagnostics.csv"), &csv_header, &csv_rows)?;
    }
    println!(
        "{n} samples: mean nn distance {:.4}, within 0.25 {:.3}, worst training-point coverage {:.4}, label agreement {:.3}",
        report.mean_nn_distance, report.fraction_within_0_25, report.max_train_min_distance, report.label_fraction
    );
    for d in &report.classifiers {
        println!(
            "  classifier {}: {} samples, alpha trained {:?} implied {:?}, own-split fraction {:?}",
            d.classifier, d.samples, d.trained_alpha, d.implied_alpha, d.own_split_fraction
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotMode {
    Scatter,
    Grid,
}

pub fn plot_cmd(
    ctx: &Ctx,
    samples: Option<&Path>,
    mode: PlotMode,
    output: Option<&Path>,
) -> Result<()> {
    let path = samples
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.dir.join("samples.csv"));
    let s = io::read_samples(&path)?;
    let full = ctx.datasets()?.0;
    let dim = if s.x.rows() > 0 {
        s.x.cols()
    } else {
        full.as_ref().map_or(s.x.cols(), |d| d.dim())
    };
    let svg_text = match mode {
        PlotMode::Scatter => {
            if dim != 2 {
                return Err(CliError::usage(format!(
                    "scatter plots need 2-dimensional data, got {dim}; use --mode grid"
                )));
            }
            let gen: Vec<[f64; 2]> = (0..s.x.rows())
                .map(|i| [s.x.at(i, 0), s.x.at(i, 1)])
                .collect();
            let train: Vec<[f64; 2]> = full
                .as_ref()
                .map(|d| {
                    (0..d.len())
                        .map(|i| [d.point(i)[0], d.point(i)[1]])
                        .collect()
                })
                .unwrap_or_default();
            let train_y = full.as_ref().map(|d| d.y.clone()).unwrap_or_default();
            svg::scatter(
                &ctx.config.name,
                &[
                    svg::Layer {
                        points: &train,
                        labels: &train_y,
                        marker: svg::Marker::Circle,
                    },
                    svg::Layer {
                        points: &gen,
                        labels: &s.y,
                        marker: svg::Marker::Cross,
                    },
                ],
            )
        }
        PlotMode::Grid => {
            let [h, w] = match ctx.config.generator.train.image_shape {
                Some(hw) => hw,
                None => {
                    let side = (dim as f64).sqrt().round() as usize;
                    if side * side != dim {
                        return Err(CliError::usage(
                            "grid plots need generator.train.image_shape or square images",
                        ));
                    }
                    [side, side]
                }
            };
            let shown: Vec<usize> = (0..s.x.rows()).take(8).collect();
            let top: Vec<&[f64]> = shown.iter().map(|&i| s.x.row_slice(i)).collect();
            let bottom: Vec<&[f64]> = match &full {
                Some(d) if !shown.is_empty() => {
                    let picked = Tensor::matrix(
                        shown.len(),
                        dim,
                        top.iter().flat_map(|r| r.to_vec()).collect(),
                    )
                    .map_err(|e| CliError::usage(e.to_string()))?;
                    nearest_neighbor(
                        &picked,
                        &d.x,
                        Metric::Ssim {
                            height: h,
                            width: w,
                        },
                    )?
                    .iter()
                    .map(|&(j, _)| d.point(j))
                    .collect()
                }
                _ => Vec::new(),
            };
            svg::image_grid(&ctx.config.name, h, w, &top, &bottom)
        }
    };
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| {
        ctx.dir.join(match mode {
            PlotMode::Scatter => "scatter.svg",
            PlotMode::Grid => "grid.svg",
        })
    });
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        io::ensure_dir(parent)?;
    }
    fs::write(&out, svg_text).map_err(|e| CliError::file(&out, e))?;
    println!("plot -> {}", out.display());
    Ok(())
}
