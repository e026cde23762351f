//! Projected BFGS: a dense inverse-Hessian approximation over the subspace
//! coordinates with an Armijo backtracking line search.

use crate::linalg::{dot, norm, symmetric_eigen};
use crate::nn::{self, ModelSpec};
use crate::{Error, Result, SubspaceBasis, Tensor};

/// Loss (and gradient) as a function of the full parameter vector.
pub trait Objective {
    fn loss(&mut self, w: &[f64]) -> Result<f64>;
    fn loss_and_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Mean cross-entropy of a model on one fixed mini-batch.
pub struct BatchObjective<'a> {
    pub spec: &'a ModelSpec,
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
}

impl Objective for BatchObjective<'_> {
    fn loss(&mut self, w: &[f64]) -> Result<f64> {
        nn::loss(self.spec, w, self.inputs, self.labels)
    }

    fn loss_and_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, g) = nn::backward(self.spec, w, self.inputs, self.labels)?;
        Ok((l, g.into_inner()))
    }
}

/// `f(x) = 1/2 x^T A x - b^T x` with a dense symmetric `A` (row-major).
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Quadratic {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() * b.len() {
            return Err(Error::Shape(format!("quadratic: A has {} entries for n = {}", a.len(), b.len())));
        }
        Ok(Quadratic { a, b })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    fn ax(&self, x: &[f64]) -> Vec<f64> {
        self.a.chunks_exact(self.n()).map(|row| dot(row, x)).collect()
    }
}

impl Objective for Quadratic {
    fn loss(&mut self, w: &[f64]) -> Result<f64> {
        if w.len() != self.n() {
            return Err(Error::Shape(format!("quadratic in R^{} evaluated at length {}", self.n(), w.len())));
        }
        Ok(0.5 * dot(w, &self.ax(w)) - dot(&self.b, w))
    }

    fn loss_and_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let l = self.loss(w)?;
        let g = self.ax(w).iter().zip(&self.b).map(|(ax, b)| ax - b).collect();
        Ok((l, g))
    }
}

/// Dense symmetric `d x d` inverse-Hessian approximation, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseHessian {
    d: usize,
    data: Vec<f64>,
}

impl InverseHessian {
    pub fn identity(d: usize) -> Self {
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = 1.0;
        }
        InverseHessian { d, data }
    }

    pub fn from_rows(d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * d {
            return Err(Error::Shape(format!("{} entries do not form a {d}x{d} matrix", data.len())));
        }
        Ok(InverseHessian { d, data })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `B x`
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::Shape(format!("{}x{} matrix applied to length {}", self.d, self.d, x.len())));
        }
        Ok(self.data.chunks_exact(self.d).map(|row| dot(row, x)).collect())
    }

    /// `max |B - B^T|`
    pub fn symmetry_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in i + 1..self.d {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = symmetric_eigen(&self.data, self.d);
        eig.values.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BfgsUpdate {
    Updated(InverseHessian),
    /// `y^T s` did not clear the curvature threshold; keep `B`.
    Skipped { curvature: f64 },
}

/// Relative curvature threshold: updates need `y^T s > CURVATURE_EPS ||y|| ||s||`.
pub const CURVATURE_EPS: f64 = 1e-12;

/// Inverse BFGS update `B' = V^T B V + rho s s^T`, `V = I - rho y s^T`, `rho = 1 / y^T s`.
pub fn bfgs_update(b: &InverseHessian, y: &[f64], s: &[f64]) -> Result<BfgsUpdate> {
    let d = b.d;
    if y.len() != d || s.len() != d {
        return Err(Error::Shape(format!("bfgs_update: B is {d}x{d}, y {}, s {}", y.len(), s.len())));
    }
    let ys = dot(y, s);
    if !(ys > CURVATURE_EPS * norm(y) * norm(s)) {
        return Ok(BfgsUpdate::Skipped { curvature: ys });
    }
    let rho = 1.0 / ys;
    let by = b.apply(y)?;
    let coef = rho * rho * dot(y, &by) + rho;
    let mut data = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let v = b.get(i, j) - rho * (s[i] * by[j] + by[i] * s[j]) + coef * s[i] * s[j];
            data[i * d + j] = v;
            data[j * d + i] = v;
        }
    }
    Ok(BfgsUpdate::Updated(InverseHessian { d, data }))
}

/// `q = -B g`
pub fn newton_direction(b: &InverseHessian, g: &[f64]) -> Result<Vec<f64>> {
    Ok(b.apply(g)?.into_iter().map(|x| -x).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub c: f64,
    pub beta: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig { c: 0.4, beta: 0.55, max_backtracks: 50 }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::config("projected.c", format!("must lie in (0, 1), got {}", self.c)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config("projected.beta", format!("must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    /// Objective evaluations, including the accepted one.
    pub evals: usize,
    pub backtracks: usize,
    /// Loss at the accepted point.
    pub loss: f64,
}

/// Backtracking search for the first `alpha` in `1, beta, beta^2, ...` with
/// `L(w + alpha P q) <= L(w) - c alpha g~^T B g~`, where `q = -B g~` and
/// `slope = g~^T B g~`. The trial point is formed exactly as the caller will
/// form the step, through [`SubspaceBasis::lift_add`].
pub fn line_search(
    objective: &mut dyn Objective,
    w: &[f64],
    basis: &SubspaceBasis,
    q: &[f64],
    loss0: f64,
    slope: f64,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome> {
    let mut trial = vec![0.0; w.len()];
    let mut alpha = 1.0;
    for j in 0..=cfg.max_backtracks {
        trial.copy_from_slice(w);
        basis.lift_add(alpha, q, &mut trial)?;
        let l = objective.loss(&trial)?;
        if l <= loss0 - cfg.c * alpha * slope {
            return Ok(LineSearchOutcome { alpha, evals: j + 1, backtracks: j, loss: l });
        }
        alpha *= cfg.beta;
    }
    Err(Error::LineSearchFailed { backtracks: cfg.max_backtracks })
}

/// Optimizer state of projected BFGS.
#[derive(Debug, Clone, PartialEq)]
pub struct PBfgsState {
    pub b: InverseHessian,
    pub prev_g: Option<Vec<f64>>,
    pub prev_s: Option<Vec<f64>>,
    pub k: usize,
    pub skipped_updates: usize,
    pub failed_searches: usize,
}

impl PBfgsState {
    pub fn new(d: usize) -> Self {
        PBfgsState {
            b: InverseHessian::identity(d),
            prev_g: None,
            prev_s: None,
            k: 0,
            skipped_updates: 0,
            failed_searches: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PBfgsStepMetrics {
    pub loss_before: f64,
    pub loss_after: f64,
    /// Zero when the line search failed.
    pub alpha: f64,
    pub backtracks: usize,
    pub evals: usize,
    /// `g~^T B g~` with the `B` used for the direction.
    pub slope: f64,
    pub grad_norm: f64,
    pub skipped_update: bool,
    pub line_search_failed: bool,
}

/// One step of projected BFGS on `objective` (which must stay the same
/// mini-batch for the whole step).
///
/// On entry to step `k > 0` the previous pair `(y, s~)` with
/// `y = g~_k - g~_{k-1}` updates `B`; then `s~ = -alpha B g~` and
/// `w <- w + P s~`. A failed line search leaves `w` unchanged and drops the
/// next update pair.
pub fn pbfgs_step(
    w: &mut [f64],
    objective: &mut dyn Objective,
    basis: &SubspaceBasis,
    state: &mut PBfgsState,
    cfg: &LineSearchConfig,
) -> Result<PBfgsStepMetrics> {
    if state.b.dim() != basis.dim() {
        return Err(Error::Shape(format!("P-BFGS state is {}-dimensional, basis {}", state.b.dim(), basis.dim())));
    }
    let (loss0, g) = objective.loss_and_grad(w)?;
    let g_tilde = basis.project(&g)?;

    let mut skipped_update = false;
    if let (Some(pg), Some(ps)) = (&state.prev_g, &state.prev_s) {
        let y: Vec<f64> = g_tilde.iter().zip(pg).map(|(a, b)| a - b).collect();
        match bfgs_update(&state.b, &y, ps)? {
            BfgsUpdate::Updated(b) => state.b = b,
            BfgsUpdate::Skipped { .. } => {
                skipped_update = true;
                state.skipped_updates += 1;
            }
        }
    }

    let q = newton_direction(&state.b, &g_tilde)?;
    let slope = -dot(&g_tilde, &q);
    let grad_norm = norm(&g_tilde);
    let mut metrics = PBfgsStepMetrics {
        loss_before: loss0,
        loss_after: loss0,
        alpha: 0.0,
        backtracks: cfg.max_backtracks,
        evals: cfg.max_backtracks + 1,
        slope,
        grad_norm,
        skipped_update,
        line_search_failed: false,
    };
    match line_search(objective, w, basis, &q, loss0, slope, cfg) {
        Ok(ls) => {
            basis.lift_add(ls.alpha, &q, w)?;
            state.prev_s = Some(q.iter().map(|x| ls.alpha * x).collect());
            metrics.alpha = ls.alpha;
            metrics.backtracks = ls.backtracks;
            metrics.evals = ls.evals;
            metrics.loss_after = ls.loss;
        }
        Err(Error::LineSearchFailed { .. }) => {
            state.prev_s = None;
            state.failed_searches += 1;
            metrics.line_search_failed = true;
        }
        Err(e) => return Err(e),
    }
    state.prev_g = Some(g_tilde);
    state.k += 1;
    Ok(metrics)
}
