//! The five commands. Each writes its artifacts into the output directory
//! atomically and returns the in-memory results for callers and tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::binio;
use crate::data::NoiseRecord;
use crate::subspace::{decompose, explained_variance, SubspaceBasis};
use crate::trajectory::{load_all, load_vector, save_vector, StepMeta, TrajectoryWriter};
use crate::{Error, Result};

use super::config::{ExperimentConfig, ProjectedOptimizer};
use super::metrics::emit_metrics;
use super::train::{prepare_data, run_baseline, run_projected, BaselineOutcome, PBfgsLogRow, ProjectedOutcome};

pub const INIT_FILE: &str = "init.dltr";
pub const FINAL_FILE: &str = "final.dltr";
pub const TRAJECTORY_FILE: &str = "trajectory.dltr";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RUN_META_FILE: &str = "run.meta";
pub const NOISE_FILE: &str = "noise.dlnz";
pub const BASIS_FILE: &str = "basis.dlbs";
pub const SPECTRUM_FILE: &str = "spectrum.csv";
pub const PROJECTED_METRICS_FILE: &str = "projected_metrics.csv";
pub const PROJECTED_FINAL_FILE: &str = "projected_final.dltr";
pub const PBFGS_LOG_FILE: &str = "pbfgs_steps.csv";
pub const NOISE_SUMMARY_FILE: &str = "noise_summary.csv";

/// SHA-256 of the little-endian bytes of `w`, as lowercase hex.
pub fn checksum(w: &[f64]) -> String {
    let mut h = Sha256::new();
    for x in w {
        h.update(x.to_le_bytes());
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sidecar `key=value` file describing a baseline run.
fn run_meta(cfg: &ExperimentConfig, out: &BaselineOutcome) -> String {
    let mut s = String::new();
    let layers: Vec<String> = cfg.model.layer_dims.iter().map(|x| x.to_string()).collect();
    writeln!(s, "n={}", out.w0.len()).unwrap();
    writeln!(s, "t={}", out.samples).unwrap();
    writeln!(s, "w0_sha256={}", checksum(&out.w0)).unwrap();
    writeln!(s, "model.layers={}", layers.join(",")).unwrap();
    writeln!(s, "seeds.init={}", cfg.seeds.init).unwrap();
    writeln!(s, "seeds.data={}", cfg.seeds.data).unwrap();
    writeln!(s, "seeds.noise={}", cfg.seeds.noise).unwrap();
    writeln!(s, "baseline.lr={}", cfg.baseline.lr).unwrap();
    writeln!(s, "baseline.momentum={}", cfg.baseline.momentum).unwrap();
    writeln!(s, "baseline.weight_decay={}", cfg.baseline.weight_decay).unwrap();
    writeln!(s, "baseline.batch_size={}", cfg.baseline.batch_size).unwrap();
    writeln!(s, "baseline.epochs={}", cfg.baseline.epochs).unwrap();
    writeln!(s, "noise.fraction={}", cfg.noise_fraction.unwrap_or(0.0)).unwrap();
    writeln!(s, "test_labels=clean").unwrap();
    s
}

fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub outcome: BaselineOutcome,
    pub dir: PathBuf,
}

/// Baseline training with trajectory sampling. Writes `init.dltr`,
/// `final.dltr`, `trajectory.dltr`, `metrics.csv`, `run.meta` and, with label
/// noise, `noise.dlnz`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainResult> {
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    let data = prepare_data(cfg, None)?;
    if let Some(record) = &data.noise {
        record.save(&dir.join(NOISE_FILE))?;
    }
    let mut writer = TrajectoryWriter::create(&dir.join(TRAJECTORY_FILE))?;
    let outcome = run_baseline(cfg, &data, &mut |meta, w| writer.record(meta, w))?;
    writer.finish()?;
    save_vector(&dir.join(INIT_FILE), StepMeta { epoch: 0, global_step: 0 }, &outcome.w0)?;
    let last = outcome.rows.len() as u64 - 1;
    let steps = crate::data::steps_per_epoch(data.train.len(), cfg.baseline.batch_size) as u64;
    save_vector(&dir.join(FINAL_FILE), StepMeta { epoch: last as u32, global_step: last * steps }, &outcome.w_final)?;
    emit_metrics(&dir.join(METRICS_FILE), &outcome.rows)?;
    binio::write_atomic(&dir.join(RUN_META_FILE), run_meta(cfg, &outcome).as_bytes())?;
    Ok(TrainResult { outcome, dir })
}

/// Variance spectrum of every trajectory component.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub sigmas: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Spectrum {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,sigma,variance_ratio,cumulative_ratio\n");
        let mut cum = 0.0;
        for (i, (sig, r)) in self.sigmas.iter().zip(&self.ratios).enumerate() {
            cum += r;
            writeln!(s, "{},{},{},{}", i + 1, sig, r, cum).unwrap();
        }
        s
    }
}

/// Writes `spectrum.csv` for the trajectory at `trajectory_path`.
pub fn cmd_spectrum(trajectory_path: &Path, out_dir: &Path) -> Result<Spectrum> {
    let snapshots = load_all(trajectory_path)?.into_snapshots()?;
    let dec = decompose(&snapshots)?;
    let sigmas: Vec<f64> = dec.eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).collect();
    let ratios = explained_variance(&sigmas)?;
    let spectrum = Spectrum { sigmas, ratios };
    create_dir(out_dir)?;
    binio::write_atomic(&out_dir.join(SPECTRUM_FILE), spectrum.to_csv().as_bytes())?;
    Ok(spectrum)
}

/// Extracts the top-`d` basis into `basis.dlbs` and writes `spectrum.csv`.
pub fn cmd_extract(trajectory_path: &Path, d: usize, out_dir: &Path) -> Result<(SubspaceBasis, Spectrum)> {
    let snapshots = load_all(trajectory_path)?.into_snapshots()?;
    if d == 0 || d > snapshots.t() {
        return Err(Error::Dimension(format!(
            "requested d = {d} but the trajectory holds t = {} snapshots",
            snapshots.t()
        )));
    }
    let dec = decompose(&snapshots)?;
    let sigmas: Vec<f64> = dec.eigenvalues().iter().map(|&l| l.max(0.0).sqrt()).collect();
    let ratios = explained_variance(&sigmas)?;
    let basis = dec.basis(d)?;
    let spectrum = Spectrum { sigmas, ratios };
    create_dir(out_dir)?;
    basis.save(&out_dir.join(BASIS_FILE))?;
    binio::write_atomic(&out_dir.join(SPECTRUM_FILE), spectrum.to_csv().as_bytes())?;
    Ok((basis, spectrum))
}

/// Per-step P-BFGS log; floats in shortest round-trip form.
pub fn pbfgs_log_csv(log: &[PBfgsLogRow]) -> String {
    let mut s = String::from(
        "epoch,step,loss_before,loss_after,alpha,backtracks,evals,slope,grad_norm,skipped_update,line_search_failed\n",
    );
    for r in log {
        let m = &r.metrics;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.step,
            m.loss_before,
            m.loss_after,
            m.alpha,
            m.backtracks,
            m.evals,
            m.slope,
            m.grad_norm,
            u8::from(m.skipped_update),
            u8::from(m.line_search_failed)
        )
        .unwrap();
    }
    s
}

/// Projected retraining from the stored `w_0`. If a `run.meta` sits next to
/// `init_path`, the checksum of `w_0` must match it; with label noise the
/// `noise.dlnz` from the same directory is reused.
pub fn cmd_ptrain(cfg: &ExperimentConfig, basis_path: &Path, init_path: &Path) -> Result<ProjectedOutcome> {
    let basis = SubspaceBasis::load(basis_path)?;
    let w0 = load_vector(init_path)?;
    let run_dir = init_path.parent().unwrap_or(Path::new("."));
    let meta_path = run_dir.join(RUN_META_FILE);
    if meta_path.exists() {
        let meta = read_meta(&meta_path)?;
        let want = meta.get("w0_sha256").ok_or_else(|| Error::Format(format!("{}: no w0_sha256", meta_path.display())))?;
        let got = checksum(&w0);
        if *want != got {
            return Err(Error::Format(format!(
                "{} does not match the w0 checksum in {} ({got} vs {want})",
                init_path.display(),
                meta_path.display()
            )));
        }
    }
    let noise = match cfg.noise_fraction {
        Some(_) => Some(NoiseRecord::load(&run_dir.join(NOISE_FILE))?),
        None => None,
    };
    let data = prepare_data(cfg, noise)?;
    let outcome = run_projected(cfg, &data, &basis, &w0, None)?;

    let dir = &cfg.output_dir;
    create_dir(dir)?;
    emit_metrics(&dir.join(PROJECTED_METRICS_FILE), &outcome.rows)?;
    save_vector(&dir.join(PROJECTED_FINAL_FILE), StepMeta { epoch: cfg.projected.epochs as u32, global_step: 0 }, &outcome.w_final)?;
    if cfg.projected.optimizer == ProjectedOptimizer::Pbfgs {
        binio::write_atomic(&dir.join(PBFGS_LOG_FILE), pbfgs_log_csv(&outcome.pbfgs_log).as_bytes())?;
    }
    Ok(outcome)
}

/// The three columns compared under label noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSummary {
    pub fraction: f64,
    pub sgd_final: f64,
    pub sgd_best: f64,
    pub psgd_final: f64,
}

impl NoiseSummary {
    pub fn to_csv(&self) -> String {
        format!(
            "fraction,sgd_final,sgd_best,psgd_final\n{},{},{},{}\n",
            self.fraction, self.sgd_final, self.sgd_best, self.psgd_final
        )
    }
}

/// Corrupts labels once, trains the baseline, extracts the basis and retrains
/// with P-SGD, all sharing the same `noise.dlnz`.
pub fn cmd_noise(cfg: &ExperimentConfig) -> Result<NoiseSummary> {
    let fraction = cfg.noise_fraction.ok_or_else(|| Error::config("noise.fraction", "required by the noise command"))?;
    let train = cmd_train(cfg)?;
    let dir = &train.dir;
    cmd_extract(&dir.join(TRAJECTORY_FILE), cfg.d, dir)?;
    let mut pcfg = cfg.clone();
    pcfg.projected.optimizer = ProjectedOptimizer::Psgd;
    let projected = cmd_ptrain(&pcfg, &dir.join(BASIS_FILE), &dir.join(INIT_FILE))?;
    let summary = NoiseSummary {
        fraction,
        sgd_final: train.outcome.final_test_acc,
        sgd_best: train.outcome.best_test_acc,
        psgd_final: projected.final_test_acc,
    };
    binio::write_atomic(&dir.join(NOISE_SUMMARY_FILE), summary.to_csv().as_bytes())?;
    Ok(summary)
}
