//! Fast end-to-end sanity checks of the numerical core.

use crate::error::{CliError, Result};
use kktgen::autodiff::{finite_difference_check, Graph};
use kktgen::kkt::duality_term;
use kktgen::models::{init_kaiming, mlp_graph, MlpSpec};
use kktgen::quasi::{
    build_derivative_equations, solve_lambda, standard_normal_samples, verify_lambda,
};
use kktgen::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lambda_estimate() -> Result<String> {
    let spec = MlpSpec::uniform(vec![2, 10, 1], true)?;
    let zeta = init_kaiming(&spec, 11);
    let system = build_derivative_equations(&spec, &zeta, &standard_normal_samples(16, 2, 1), 2)?;
    let profile = solve_lambda(&system)?;
    let dev = verify_lambda(
        &spec,
        &zeta,
        &profile,
        &[-1.0, -0.5, 0.1, 0.5, 1.0],
        &standard_normal_samples(16, 2, 2),
    )?;
    if dev < 1e-5 {
        Ok(format!("scaling deviation {dev:.2e}"))
    } else {
        Err(CliError::Verification(format!("scaling deviation {dev:e}")))
    }
}

fn duality_shape() -> Result<String> {
    let (alpha, delta) = (0.0, 0.1);
    let base = (-alpha as f64).exp();
    let got = [
        duality_term(base - 0.1, alpha, delta),
        duality_term(base + delta / 2.0, alpha, delta),
        duality_term(base + delta + 0.2, alpha, delta),
    ];
    let want = [0.1, 0.0, 0.2];
    if got.iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12) {
        Ok(format!("{got:?}"))
    } else {
        Err(CliError::Verification(format!(
            "got {got:?}, want {want:?}"
        )))
    }
}

/// ∂/∂x of v·∇ζΦ_c(x; ζ) against central differences.
fn double_backprop() -> Result<String> {
    let spec = MlpSpec::uniform(vec![3, 6, 5, 2], true)?;
    let zeta = init_kaiming(&spec, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let mut g = Graph::new();
        let leaves = zeta.leaves(&mut g);
        let point = Tensor::row((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let x = g.param(point.clone());
        let logits = mlp_graph(&mut g, &spec, &leaves, x)?;
        let c = g.select_cols(logits, &[1])?;
        let s = g.sum(c);
        let grads = g.gradient(s, &leaves)?;
        let mut acc = None;
        for (j, gv) in grads.iter().enumerate() {
            let (r, k) = g.shape(*gv);
            let v = g.constant(
                Tensor::matrix(
                    r,
                    k,
                    (0..r * k).map(|i| ((i + j) as f64 * 0.37).sin()).collect(),
                )
                .expect("shape"),
            );
            let p = g.mul(v, *gv)?;
            let p = g.sum(p);
            acc = Some(match acc {
                None => p,
                Some(a) => g.add(a, p)?,
            });
        }
        let root = acc.expect("groups");
        let report = finite_difference_check(&mut g, root, x, &point, 1e-6)?;
        let err = report
            .analytic
            .iter()
            .zip(&report.numeric)
            .map(|(a, n)| (a - n).abs() / (1e-6 + a.abs()))
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    if worst < 1e-4 {
        Ok(format!("max relative error {worst:.2e}"))
    } else {
        Err(CliError::Verification(format!(
            "max relative error {worst:e}"
        )))
    }
}

pub fn selftest_cmd() -> Result<()> {
    let checks: [(&str, fn() -> Result<String>); 3] = [
        ("lambda-estimation", lambda_estimate),
        ("duality-shape", duality_shape),
        ("double-backprop", double_backprop),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(e) => {
                println!("FAIL {name}: {e}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "selftest failed: {}",
            failed.join(", ")
        )))
    }
}
