//! Files of a run directory: CSV tables, classifier checkpoints with TOML
//! sidecars, and the generator checkpoint directory.

use crate::error::{CliError, Result};
use kktgen::models::{GeneratorSpec, MlpSpec, MultiplierSpec, ParameterVector};
use kktgen::quasi::QuasiHomogeneousProfile;
use kktgen::serialize::{load_model, save_model};
use kktgen::training::{AdamMoments, GeneratorTrainState, HistoryRow};
use kktgen::Tensor;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Full-precision decimal; 17 significant digits round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::file(path, e))?;
    w.write_record(header)
        .map_err(|e| CliError::file(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::file(path, e))?;
    }
    w.flush().map_err(|e| CliError::file(path, e))
}

/// Header and rows of a CSV file, as strings.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::file(path, e))?;
    let header = r
        .headers()
        .map_err(|e| CliError::file(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(
            rec.map_err(|e| CliError::file(path, e))?
                .iter()
                .map(String::from)
                .collect(),
        );
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| CliError::file(path, format!("cannot parse `{field}`")))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::file(path, e))?;
    fs::write(path, text).map_err(|e| CliError::file(path, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::file(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::file(path, e))
}

/// Generated samples: coordinates, label, classifier index.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub t: Vec<usize>,
}

pub fn write_samples(path: &Path, s: &SampleTable) -> Result<()> {
    let d = s.x.cols();
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    header.push("t".into());
    let rows = (0..s.x.rows())
        .map(|i| {
            let mut r: Vec<String> = s.x.row_slice(i).iter().map(|&v| fmt_f64(v)).collect();
            r.push(s.y[i].to_string());
            r.push(s.t[i].to_string());
            r
        })
        .collect::<Vec<_>>();
    write_csv(path, &header, &rows)
}

pub fn read_samples(path: &Path) -> Result<SampleTable> {
    let (header, rows) = read_csv(path)?;
    let n = header.len();
    if n < 2 || header[n - 2] != "y" || header[n - 1] != "t" {
        return Err(CliError::file(path, "expected columns x0.., y, t"));
    }
    let d = n - 2;
    let mut data = Vec::with_capacity(rows.len() * d);
    let (mut y, mut t) = (Vec::new(), Vec::new());
    for r in &rows {
        if r.len() != n {
            return Err(CliError::file(path, "ragged row"));
        }
        for f in &r[..d] {
            data.push(parse::<f64>(path, f)?);
        }
        y.push(parse(path, &r[d])?);
        t.push(parse(path, &r[d + 1])?);
    }
    let x = Tensor::matrix(rows.len(), d, data).map_err(|e| CliError::file(path, e))?;
    Ok(SampleTable { x, y, t })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub profile: QuasiHomogeneousProfile,
    pub max_deviation: f64,
    pub tolerance: f64,
    /// Set when the deviation exceeded the tolerance.
    pub flagged: bool,
}

/// Everything about a classifier checkpoint besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSidecar {
    pub widths: Vec<usize>,
    pub bias: Vec<bool>,
    /// Global label of each output.
    pub labels: Vec<usize>,
    pub n_train: usize,
    pub config_hash: String,
    pub final_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub threshold_epoch: Option<usize>,
    pub profile: Option<ProfileRecord>,
}

pub struct ClassifierCheckpoint {
    pub spec: MlpSpec,
    pub zeta: ParameterVector,
    pub sidecar: ClassifierSidecar,
}

pub fn classifier_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("classifier_{t}.kkt"))
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("toml")
}

pub fn save_classifier(
    model: &Path,
    spec: &MlpSpec,
    zeta: &ParameterVector,
    sidecar: &ClassifierSidecar,
) -> Result<()> {
    save_model(model, spec.spec_hash(), zeta).map_err(|e| CliError::file(model, e))?;
    write_toml(&sidecar_path(model), sidecar)
}

pub fn load_classifier(model: &Path) -> Result<ClassifierCheckpoint> {
    let file = load_model(model).map_err(|e| CliError::file(model, e))?;
    let sidecar: ClassifierSidecar = read_toml(&sidecar_path(model))?;
    let spec = MlpSpec::new(sidecar.widths.clone(), sidecar.bias.clone())
        .map_err(|e| CliError::file(model, e))?;
    if spec.spec_hash() != file.spec_hash || !file.params.matches(&spec) {
        return Err(CliError::file(
            model,
            "weights do not match the architecture in the sidecar",
        ));
    }
    if sidecar.labels.len() != spec.output_dim() {
        return Err(CliError::file(
            model,
            "sidecar labels do not match the output width",
        ));
    }
    Ok(ClassifierCheckpoint {
        spec,
        zeta: file.params,
        sidecar,
    })
}

/// Scalar part of the generator checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorMeta {
    pub config_hash: String,
    pub step: u64,
    pub rr_offset: usize,
    pub alphas: Vec<f64>,
    pub alpha_m: Vec<f64>,
    pub alpha_v: Vec<f64>,
    pub alpha_updates: Vec<u64>,
    pub noise_dim: usize,
    pub classes: usize,
    pub classifiers: Option<usize>,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub multiplier_hidden: Vec<usize>,
    /// Global labels of each classifier, for the sampling table.
    pub classifier_labels: Vec<Vec<usize>>,
}

impl GeneratorMeta {
    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            noise_dim: self.noise_dim,
            classes: self.classes,
            classifiers: self.classifiers,
            hidden: self.hidden.clone(),
            out_dim: self.out_dim,
        }
    }

    pub fn multiplier_spec(&self) -> MultiplierSpec {
        MultiplierSpec {
            in_dim: self.out_dim,
            classes: self.classes,
            classifiers: self.classifiers,
            hidden: self.multiplier_hidden.clone(),
        }
    }
}

pub struct GeneratorCheckpoint {
    pub meta: GeneratorMeta,
    pub state: GeneratorTrainState,
}

const PARTS: [&str; 6] = ["theta", "eta", "theta_m", "theta_v", "eta_m", "eta_v"];

fn history_header(count: usize) -> Vec<String> {
    let mut h: Vec<String> = ["step", "classifier", "l_stat", "l_dual", "tv", "total"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((0..count).map(|t| format!("alpha_{t}")));
    h
}

fn history_row(r: &HistoryRow) -> Vec<String> {
    let mut v = vec![
        r.step.to_string(),
        r.classifier
            .map(|t| t.to_string())
            .unwrap_or_else(|| "all".into()),
        fmt_f64(r.l_stat),
        fmt_f64(r.l_dual),
        fmt_f64(r.tv),
        fmt_f64(r.total),
    ];
    v.extend(r.alphas.iter().map(|&a| fmt_f64(a)));
    v
}

pub fn write_history(path: &Path, history: &[HistoryRow], count: usize) -> Result<()> {
    let rows: Vec<_> = history.iter().map(history_row).collect();
    write_csv(path, &history_header(count), &rows)
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let (header, rows) = read_csv(path)?;
    if header.len() < 6 || header[0] != "step" {
        return Err(CliError::file(path, "not a loss history"));
    }
    rows.iter()
        .map(|r| {
            Ok(HistoryRow {
                step: parse(path, &r[0])?,
                classifier: if r[1] == "all" {
                    None
                } else {
                    Some(parse(path, &r[1])?)
                },
                l_stat: parse(path, &r[2])?,
                l_dual: parse(path, &r[3])?,
                tv: parse(path, &r[4])?,
                total: parse(path, &r[5])?,
                alphas: r[6..]
                    .iter()
                    .map(|f| parse(path, f))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn with_values(like: &ParameterVector, values: &[f64]) -> ParameterVector {
    ParameterVector::with_groups(like.groups().to_vec(), values.to_vec()).expect("same layout")
}

pub fn save_generator(dir: &Path, meta: &GeneratorMeta, state: &GeneratorTrainState) -> Result<()> {
    ensure_dir(dir)?;
    let blocks = [
        (&state.theta, state.theta.values()),
        (&state.eta, state.eta.values()),
        (&state.theta, state.theta_moments.m.as_slice()),
        (&state.theta, state.theta_moments.v.as_slice()),
        (&state.eta, state.eta_moments.m.as_slice()),
        (&state.eta, state.eta_moments.v.as_slice()),
    ];
    for (name, (like, values)) in PARTS.iter().zip(blocks) {
        let path = dir.join(format!("{name}.kkt"));
        save_model(&path, 0, &with_values(like, values)).map_err(|e| CliError::file(&path, e))?;
    }
    write_toml(&dir.join("state.toml"), meta)?;
    write_history(&dir.join("history.csv"), &state.history, meta.alphas.len())
}

pub fn load_generator(dir: &Path) -> Result<GeneratorCheckpoint> {
    let meta: GeneratorMeta = read_toml(&dir.join("state.toml"))?;
    let mut blocks = Vec::new();
    for name in PARTS {
        let path = dir.join(format!("{name}.kkt"));
        blocks.push(
            load_model(&path)
                .map_err(|e| CliError::file(&path, e))?
                .params,
        );
    }
    let gen_mlp = meta.generator_spec().mlp()?;
    let mult_mlp = meta.multiplier_spec().mlp()?;
    let fits = |p: &ParameterVector, spec: &MlpSpec| p.matches(spec);
    if !(fits(&blocks[0], &gen_mlp) && fits(&blocks[2], &gen_mlp) && fits(&blocks[3], &gen_mlp))
        || !(fits(&blocks[1], &mult_mlp)
            && fits(&blocks[4], &mult_mlp)
            && fits(&blocks[5], &mult_mlp))
    {
        return Err(CliError::file(dir, "network files do not match state.toml"));
    }
    let count = meta.alphas.len();
    if meta.alpha_m.len() != count
        || meta.alpha_v.len() != count
        || meta.alpha_updates.len() != count
    {
        return Err(CliError::file(dir, "α entries disagree in length"));
    }
    let history_path = dir.join("history.csv");
    let mut history = if history_path.exists() {
        read_history(&history_path)?
    } else {
        Vec::new()
    };
    history.retain(|r| r.step < meta.step);
    let [theta, eta, tm, tv, em, ev]: [ParameterVector; 6] = blocks.try_into().expect("six blocks");
    let state = GeneratorTrainState {
        theta,
        eta,
        alphas: meta.alphas.clone(),
        theta_moments: AdamMoments {
            m: tm.into_values(),
            v: tv.into_values(),
        },
        eta_moments: AdamMoments {
            m: em.into_values(),
            v: ev.into_values(),
        },
        alpha_moments: (0..count)
            .map(|t| AdamMoments {
                m: vec![meta.alpha_m[t]],
                v: vec![meta.alpha_v[t]],
            })
            .collect(),
        alpha_updates: meta.alpha_updates.clone(),
        step: meta.step,
        rr_offset: meta.rr_offset,
        history,
    };
    Ok(GeneratorCheckpoint { meta, state })
}

/// Copies the mutable scalars of `state` into `meta`.
pub fn sync_meta(meta: &mut GeneratorMeta, state: &GeneratorTrainState) {
    meta.step = state.step;
    meta.rr_offset = state.rr_offset;
    meta.alphas = state.alphas.clone();
    meta.alpha_m = state.alpha_moments.iter().map(|m| m.m[0]).collect();
    meta.alpha_v = state.alpha_moments.iter().map(|m| m.v[0]).collect();
    meta.alpha_updates = state.alpha_updates.clone();
}
