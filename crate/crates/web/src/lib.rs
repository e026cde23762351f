//! Browser bindings for the demo page in `www/`.
//!
//! Each export returns a flat `Float64Array`; the layout is given per function.

use std::path::Path;

use dldr::optim::{pbfgs_step, LineSearchConfig, Objective, PBfgsState, Quadratic};
use dldr::runner::{prepare_data, run_baseline, run_projected, ExperimentConfig};
use dldr::subspace::{extract_basis, Snapshots};
use dldr::SubspaceBasis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

const BLOBS: &str = "model.layers = 8,16,4
model.activation = tanh
data.source = blobs
data.classes = 4
data.per_class = 64
data.test_per_class = 32
data.dim = 8
data.spread = 0.8
baseline.lr = 0.05
baseline.batch_size = 32
sampling.include_init = true
projected.lr = 0.05
projected.schedule = 3:0.1
";

fn blobs(extra: &str) -> Result<ExperimentConfig, JsError> {
    Ok(ExperimentConfig::parse(&format!("{BLOBS}{extra}"), Path::new("."))?)
}

/// Trains the blob MLP, samples its trajectory and returns the variance ratio
/// of every component, largest first.
#[wasm_bindgen]
pub fn blob_spectrum(epochs: usize, per_epoch: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let mut cfg = blobs(&format!("baseline.epochs = {epochs}\nsampling.per_epoch = {per_epoch}\n"))?;
    cfg.seeds = dldr::runner::config::Seeds::from_run_seed(seed);
    let data = prepare_data(&cfg, None)?;
    let mut columns = Vec::new();
    run_baseline(&cfg, &data, &mut |_, w| {
        columns.push(w.to_vec());
        Ok(())
    })?;
    let dec = dldr::subspace::decompose(&Snapshots::from_columns(&columns)?)?;
    Ok(dec.explained_variance()?)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// `k` random orthonormal vectors in R^`n`.
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Result<SubspaceBasis, JsError> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v = gaussian(rng, n);
        for u in &cols {
            let r = dldr::linalg::dot(u, &v);
            dldr::linalg::axpy(-r, u, &mut v);
        }
        let len = dldr::linalg::norm(&v);
        v.iter_mut().for_each(|x| *x /= len);
        cols.push(v);
    }
    Ok(SubspaceBasis::from_columns(&cols)?)
}

/// Random `n x n` SPD matrix with eigenvalues spread log-uniformly over `[1, cond]`, row-major.
fn spd(rng: &mut ChaCha8Rng, n: usize, cond: f64) -> Vec<f64> {
    let q = orthonormal(rng, n, n).expect("gaussian columns are independent");
    let mut a = vec![0.0; n * n];
    for k in 0..n {
        let lam = cond.powf(k as f64 / (n - 1).max(1) as f64);
        let u = q.column(k);
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] += lam * u[i] * u[j];
            }
        }
    }
    a
}

/// P-BFGS against projected gradient descent (step `1 / cond`) on a random
/// quadratic in R^`n` restricted to a random `d`-dimensional subspace.
/// Returns `2 * steps` values: the P-BFGS loss gap, then the gradient-descent one.
#[wasm_bindgen]
pub fn pbfgs_vs_gd(n: usize, d: usize, cond: f64, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    if n < 2 || d == 0 || d > n || !(cond >= 1.0) {
        return Err(JsError::new("need n >= 2, 1 <= d <= n and cond >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = spd(&mut rng, n, cond);
    let b = gaussian(&mut rng, n);
    let basis = orthonormal(&mut rng, n, d)?;
    let w0 = gaussian(&mut rng, n);
    let mut f = Quadratic::new(a, b)?;

    // Reference optimum: many P-BFGS steps.
    let mut best = w0.clone();
    let mut st = PBfgsState::new(d);
    for _ in 0..(20 * d + 50) {
        pbfgs_step(&mut best, &mut f, &basis, &mut st, &LineSearchConfig::default())?;
    }
    let floor = f.loss(&best)?;

    let mut out = Vec::with_capacity(2 * steps);
    let mut w = w0.clone();
    let mut st = PBfgsState::new(d);
    for _ in 0..steps {
        pbfgs_step(&mut w, &mut f, &basis, &mut st, &LineSearchConfig::default())?;
        out.push((f.loss(&w)? - floor).max(0.0));
    }
    let mut w = w0;
    for _ in 0..steps {
        let (_, g) = f.loss_and_grad(&w)?;
        let gt = basis.project(&g)?;
        basis.lift_add(-1.0 / cond, &gt, &mut w)?;
        out.push((f.loss(&w)? - floor).max(0.0));
    }
    Ok(out)
}

/// Blob training with a fraction of labels corrupted: returns
/// `[sgd_final, sgd_best, psgd_final]` test accuracies.
#[wasm_bindgen]
pub fn noise_demo(fraction: f64, d: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let mut cfg = blobs(&format!(
        "baseline.epochs = 30\nsampling.per_epoch = 1\nprojected.epochs = 10\nprojected.schedule = 7:0.1\nsubspace.d = {d}\nnoise.fraction = {fraction}\n"
    ))?;
    cfg.seeds = dldr::runner::config::Seeds::from_run_seed(seed);
    let data = prepare_data(&cfg, None)?;
    let mut columns = Vec::new();
    let base = run_baseline(&cfg, &data, &mut |_, w| {
        columns.push(w.to_vec());
        Ok(())
    })?;
    let basis = extract_basis(&Snapshots::from_columns(&columns)?, cfg.d)?;
    let proj = run_projected(&cfg, &data, &basis, &base.w0, None)?;
    Ok(vec![base.final_test_acc, base.best_test_acc, proj.final_test_acc])
}
