//! First-order optimizers in full space and in a trajectory subspace, plus
//! the projected BFGS method in [`bfgs`].

mod bfgs;

pub use bfgs::{
    bfgs_update, line_search, newton_direction, pbfgs_step, BatchObjective, BfgsUpdate, InverseHessian,
    LineSearchConfig, LineSearchOutcome, Objective, PBfgsState, PBfgsStepMetrics, Quadratic,
};

use crate::{Error, Result, SubspaceBasis};

/// Piecewise-constant learning-rate multipliers: from epoch `e` on, the base
/// rate is scaled by the product of every multiplier listed at or before `e`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LrSchedule(pub Vec<(usize, f64)>);

impl LrSchedule {
    pub fn factor(&self, epoch: usize) -> f64 {
        self.0.iter().filter(|(e, _)| *e <= epoch).map(|(_, m)| m).product()
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = String;

    /// Parses `"30:0.1,35:0.5"`; the empty string is no schedule.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut steps = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (e, m) = part.split_once(':').ok_or_else(|| format!("expected epoch:multiplier, got {part:?}"))?;
            let e: usize = e.trim().parse().map_err(|_| format!("bad epoch in {part:?}"))?;
            let m: f64 = m.trim().parse().map_err(|_| format!("bad multiplier in {part:?}"))?;
            if !(m > 0.0 && m.is_finite()) {
                return Err(format!("multiplier must be positive in {part:?}"));
            }
            steps.push((e, m));
        }
        Ok(LrSchedule(steps))
    }
}

/// SGD with momentum and weight decay. The velocity lives in whatever space
/// the step is taken in: full space for [`sgd_step`], `R^d` for [`psgd_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: Vec<f64>,
    pub base_lr: f64,
    /// Rate used by the next step; see [`SgdState::set_epoch`].
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl SgdState {
    pub fn new(len: usize, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("lr", format!("must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", format!("must be non-negative, got {weight_decay}")));
        }
        Ok(SgdState {
            velocity: vec![0.0; len],
            base_lr: lr,
            lr,
            momentum,
            weight_decay,
            schedule: LrSchedule::default(),
        })
    }

    pub fn with_schedule(mut self, schedule: LrSchedule) -> Self {
        self.schedule = schedule;
        self.lr = self.base_lr * self.schedule.factor(0);
        self
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.lr = self.base_lr * self.schedule.factor(epoch);
    }
}

/// `v <- m v + (g + wd w)`, `w <- w - lr v`.
pub fn sgd_step(w: &mut [f64], g: &[f64], state: &mut SgdState) -> Result<()> {
    if g.len() != w.len() || state.velocity.len() != w.len() {
        return Err(Error::Shape(format!(
            "sgd_step: w {}, g {}, velocity {}",
            w.len(),
            g.len(),
            state.velocity.len()
        )));
    }
    let (m, wd, lr) = (state.momentum, state.weight_decay, state.lr);
    for ((wi, &gi), vi) in w.iter_mut().zip(g).zip(state.velocity.iter_mut()) {
        *vi = m * *vi + (gi + wd * *wi);
        *wi -= lr * *vi;
    }
    Ok(())
}

/// `v~ <- m v~ + P^T (g + wd w)`, `w <- w - lr P v~`.
pub fn psgd_step(w: &mut [f64], g: &[f64], basis: &SubspaceBasis, state: &mut SgdState) -> Result<()> {
    if g.len() != w.len() || basis.n() != w.len() || state.velocity.len() != basis.dim() {
        return Err(Error::Shape(format!(
            "psgd_step: w {}, g {}, basis {}x{}, velocity {}",
            w.len(),
            g.len(),
            basis.n(),
            basis.dim(),
            state.velocity.len()
        )));
    }
    let wd = state.weight_decay;
    let full: Vec<f64> = g.iter().zip(w.iter()).map(|(gi, wi)| gi + wd * wi).collect();
    let g_tilde = basis.project(&full)?;
    for (vi, gi) in state.velocity.iter_mut().zip(&g_tilde) {
        *vi = state.momentum * *vi + gi;
    }
    basis.lift_add(-state.lr, &state.velocity, w)
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub fn adam_step(w: &mut [f64], g: &[f64], state: &mut AdamState) -> Result<()> {
    if g.len() != w.len() || state.m.len() != w.len() {
        return Err(Error::Shape(format!("adam_step: w {}, g {}, state {}", w.len(), g.len(), state.m.len())));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..w.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        w[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}
