use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_kktgen");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn kktgen(out: &Path, args: &[&str]) -> Out {
    let o = Command::new(BIN)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("KKTGEN_OUT")
        .output()
        .expect("spawn kktgen");
    Out {
        code: o.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&o.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    }
}

fn ok(out: &Path, args: &[&str]) -> Out {
    let r = kktgen(out, args);
    assert_eq!(
        r.code, 0,
        "{args:?}\nstdout:\n{}\nstderr:\n{}",
        r.stdout, r.stderr
    );
    r
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn write_config(dir: &Path, file: &str, text: &str) -> String {
    let p = dir.join(file);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

/// Rows of a CSV file without the header.
fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let (header, rows) = csv_rows(path);
    let k = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    rows.into_iter().map(|r| r[k].clone()).collect()
}

fn prepare(out: &Path, cfg: &str) {
    ok(out, &["train-classifier", "--config", cfg]);
    ok(out, &["estimate-lambda", "--config", cfg]);
}

#[test]
fn circle_classifier_reaches_margin_regime_reproducibly() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("circle.toml");
    ok(a.path(), &["train-classifier", "--config", &cfg]);
    ok(b.path(), &["train-classifier", "--config", &cfg]);
    let dir = a.path().join("circle");
    let losses = column(&dir.join("classifier_0_loss.csv"), "loss");
    let last: f64 = losses.last().unwrap().parse().unwrap();
    assert!(last < 2f64.ln() / 18.0, "final loss {last}");
    let ka = fs::read(dir.join("classifier_0.kkt")).unwrap();
    let kb = fs::read(b.path().join("circle/classifier_0.kkt")).unwrap();
    assert_eq!(ka, kb);
}

#[test]
fn missing_data_section_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        "name = \"bad\"\n[classifier]\nhidden = [4]\n",
    );
    let r = kktgen(tmp.path(), &["train-classifier", "--config", &cfg]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("data"), "{}", r.stderr);
}

#[test]
fn unknown_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        "name = \"bad\"\n[data]\nkind = \"circle\"\nshape = 3\n",
    );
    let r = kktgen(tmp.path(), &["train-classifier", "--config", &cfg]);
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("shape"), "{}", r.stderr);
}

#[test]
fn bias_free_two_layer_profile_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "toy.toml",
        "name = \"toy\"\n[data]\nkind = \"none\"\n[classifier]\nhidden = [10]\nbias = false\ninput_dim = 2\noutputs = 1\ntrain = false\nseed = 4\n",
    );
    prepare(tmp.path(), &cfg);
    let dev = column(
        &tmp.path().join("toy/classifier_0_lambda_verify.csv"),
        "deviation",
    );
    assert_eq!(dev.len(), 5 * 16);
    let worst = dev
        .iter()
        .map(|v| v.parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "max deviation {worst}");
}

#[test]
fn trained_three_layer_bias_circle_profile_verifies() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("circle.toml")).unwrap();
    let text = text
        .replace("name = \"circle\"", "name = \"circle_bias\"")
        .replace("bias = false", "bias = true");
    let cfg = write_config(tmp.path(), "circle_bias.toml", &text);
    prepare(tmp.path(), &cfg);
    let dev = column(
        &tmp.path()
            .join("circle_bias/classifier_0_lambda_verify.csv"),
        "deviation",
    );
    let worst = dev
        .iter()
        .map(|v| v.parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "max deviation {worst}");
}

#[test]
fn corrupt_checkpoint_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("circle.toml");
    ok(tmp.path(), &["train-classifier", "--config", &cfg]);
    let model = tmp.path().join("circle/classifier_0.kkt");
    let mut bytes = fs::read(&model).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&model, bytes).unwrap();
    let r = kktgen(tmp.path(), &["estimate-lambda", "--config", &cfg]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn generator_without_profile_asks_for_estimate_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("circle.toml");
    ok(tmp.path(), &["train-classifier", "--config", &cfg]);
    let r = kktgen(
        tmp.path(),
        &["train-generator", "--config", &cfg, "--until", "10"],
    );
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("estimate-lambda"), "{}", r.stderr);
}

#[test]
fn history_step_column_is_monotone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("circle.toml");
    prepare(tmp.path(), &cfg);
    ok(
        tmp.path(),
        &["train-generator", "--config", &cfg, "--until", "300"],
    );
    let steps: Vec<u64> = column(&tmp.path().join("circle/generator/history.csv"), "step")
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    assert_eq!(steps.len(), 300);
    assert!(steps.windows(2).all(|w| w[1] == w[0] + 1));
    assert_eq!(steps[0], 0);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = config("circle.toml");
    for dir in [a.path(), b.path()] {
        prepare(dir, &cfg);
    }
    ok(
        a.path(),
        &["train-generator", "--config", &cfg, "--until", "150"],
    );
    ok(
        a.path(),
        &[
            "train-generator",
            "--config",
            &cfg,
            "--resume",
            "--until",
            "300",
        ],
    );
    ok(
        b.path(),
        &["train-generator", "--config", &cfg, "--until", "300"],
    );
    for file in ["history.csv", "theta.kkt", "eta.kkt", "state.toml"] {
        let x = fs::read(a.path().join("circle/generator").join(file)).unwrap();
        let y = fs::read(b.path().join("circle/generator").join(file)).unwrap();
        assert!(x == y, "{file} differs after resume");
    }
}

#[test]
fn two_classifier_run_logs_both_alphas_and_samples_fixed_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("circle_split.toml");
    prepare(tmp.path(), &cfg);
    ok(
        tmp.path(),
        &["train-generator", "--config", &cfg, "--until", "100"],
    );
    let (header, _) = csv_rows(&tmp.path().join("circle_split/generator/history.csv"));
    assert!(
        header.contains(&"alpha_0".to_string()) && header.contains(&"alpha_1".to_string()),
        "{header:?}"
    );
    let samples = tmp.path().join("fixed.csv");
    ok(
        tmp.path(),
        &[
            "sample",
            "--config",
            &cfg,
            "--t",
            "1",
            "--n",
            "20",
            "--output",
            samples.to_str().unwrap(),
        ],
    );
    let t = column(&samples, "t");
    assert_eq!(t.len(), 60);
    assert!(t.iter().all(|v| v == "1"), "{t:?}");
}

#[test]
fn empty_sample_file_plots_axes_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("lambda_poc.toml");
    let samples = tmp.path().join("empty.csv");
    fs::write(&samples, "x0,x1,y,t\n").unwrap();
    let svg = tmp.path().join("empty.svg");
    ok(
        tmp.path(),
        &[
            "plot",
            "--config",
            &cfg,
            "--samples",
            samples.to_str().unwrap(),
            "--output",
            svg.to_str().unwrap(),
        ],
    );
    let text = fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    assert_eq!(text.matches("class=\"axis\"").count(), 2);
    assert!(!text.contains("<circle") && !text.contains("<path"));
}

#[test]
fn scatter_of_high_dimensional_samples_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("lambda_poc.toml");
    let samples = tmp.path().join("three.csv");
    fs::write(&samples, "x0,x1,x2,y,t\n0.1,0.2,0.3,0,0\n").unwrap();
    let r = kktgen(
        tmp.path(),
        &[
            "plot",
            "--config",
            &cfg,
            "--samples",
            samples.to_str().unwrap(),
        ],
    );
    assert_eq!(r.code, 2, "{}", r.stderr);
    assert!(r.stderr.contains("grid"), "{}", r.stderr);
}

#[test]
fn evaluating_the_training_set_gives_zero_distances() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("circle.toml");
    prepare(tmp.path(), &cfg);
    ok(
        tmp.path(),
        &["train-generator", "--config", &cfg, "--until", "20"],
    );
    let data = kktgen::data::circle_dataset();
    let mut text = String::from("x0,x1,y,t\n");
    for i in 0..data.len() {
        let p = data.point(i);
        text.push_str(&format!("{:.16e},{:.16e},{},0\n", p[0], p[1], data.y[i]));
    }
    let samples = tmp.path().join("train.csv");
    fs::write(&samples, text).unwrap();
    ok(
        tmp.path(),
        &[
            "evaluate",
            "--config",
            &cfg,
            "--samples",
            samples.to_str().unwrap(),
        ],
    );
    let report: toml::Value =
        toml::from_str(&fs::read_to_string(tmp.path().join("circle/evaluation.toml")).unwrap())
            .unwrap();
    let dists = report["train_min_distance"].as_array().unwrap();
    assert_eq!(dists.len(), 18);
    assert!(
        dists.iter().all(|d| d.as_float().unwrap() == 0.0),
        "{dists:?}"
    );
    assert_eq!(report["mean_nn_distance"].as_float().unwrap(), 0.0);
    assert!(tmp.path().join("circle/kkt_diagnostics.csv").exists());
}

#[test]
fn selftest_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let r = ok(tmp.path(), &["selftest"]);
    assert_eq!(r.stdout.matches("PASS").count(), 3, "{}", r.stdout);
}

#[test]
fn output_root_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    for verb in ["train-classifier", "estimate-lambda"] {
        let o = Command::new(BIN)
            .args([verb, "--config", &config("lambda_poc.toml")])
            .env("KKTGEN_OUT", tmp.path())
            .output()
            .unwrap();
        assert!(
            o.status.success(),
            "{verb}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert!(tmp
        .path()
        .join("lambda_poc/classifier_0_lambda_verify.csv")
        .exists());
}
