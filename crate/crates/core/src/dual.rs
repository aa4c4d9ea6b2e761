//! Local dual solver: stochastic dual coordinate ascent over the Fenchel
//! conjugates of the per-observation losses, plus primal recovery.
//!
//! The solver minimizes
//!
//! ```text
//! D(alpha) = sum_i f_i*(alpha_i) + 1/(2 n lambda) * alpha^T X X^T alpha
//! ```
//!
//! which is the negated maximization form of the local dual problem. For
//! squared loss each coordinate update is the exact closed form; for logistic
//! loss a safeguarded Newton iteration solves the one-dimensional
//! subproblem. The primal coefficients for a feature block `B` are recovered
//! as `beta_B = -1/(n lambda) * X_B^T alpha`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::substream;

/// Loss family for Eq.-style objectives `1/n sum_i f_i(x_i^T b) + lambda/2 |b|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// f(u) = (y - u)^2 / 2
    Squared,
    /// f(u) = ln(1 + exp(-y u)), y in {-1, +1}
    Logistic,
}

/// Solver stopping parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Maximum number of passes over the data.
    pub epochs: usize,
    /// Stop when the largest per-coordinate dual update in an epoch falls
    /// below this.
    pub tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            epochs: 500,
            tol: 1e-8,
        }
    }
}

/// Converged (or epoch-capped) dual variables plus the incrementally
/// maintained primal cache `v = X^T alpha / (n lambda)`.
#[derive(Debug, Clone)]
pub struct DualState {
    pub alpha: DVector<f64>,
    pub primal_cache: DVector<f64>,
    pub lambda: f64,
    pub loss: LossKind,
    pub converged: bool,
    pub epochs_run: usize,
    pub last_max_step: f64,
}

/// Fenchel conjugate f*(alpha) of the per-observation loss.
///
/// Squared: alpha^2/2 + alpha y. Logistic: with t = -alpha y (which must lie
/// in [0, 1]), the binary entropy t ln t + (1-t) ln(1-t), with value 0 at the
/// endpoints.
pub fn conjugate_value(loss: LossKind, alpha: f64, y: f64) -> Result<f64> {
    match loss {
        LossKind::Squared => Ok(0.5 * alpha * alpha + alpha * y),
        LossKind::Logistic => {
            let t = -alpha * y;
            if !(-1e-12..=1.0 + 1e-12).contains(&t) {
                return Err(invalid(format!(
                    "logistic conjugate needs alpha*y in [-1, 0], got {}",
                    alpha * y
                )));
            }
            let t = t.clamp(0.0, 1.0);
            Ok(xlnx(t) + xlnx(1.0 - t))
        }
    }
}

fn xlnx(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        t * t.ln()
    }
}

/// Primal coefficients for the feature block `x_block`:
/// `-1/(n lambda) x_block^T alpha`.
pub fn primal_recover(
    x_block: &DMatrix<f64>,
    alpha: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let n = x_block.nrows();
    if alpha.len() != n {
        return Err(invalid(format!(
            "primal recovery dimension mismatch: {} rows vs {} dual variables",
            n,
            alpha.len()
        )));
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(invalid(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    Ok(x_block.transpose() * alpha * (-1.0 / (n as f64 * lambda)))
}

/// Minimization-form dual objective at `state.alpha`, evaluated from scratch
/// (the incremental cache is not consulted).
pub fn dual_objective(state: &DualState, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    dual_objective_at(&state.alpha, x, y, state.lambda, state.loss)
}

pub fn dual_objective_at(
    alpha: &DVector<f64>,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loss: LossKind,
) -> Result<f64> {
    let n = x.nrows();
    if alpha.len() != n || y.len() != n {
        return Err(invalid("dual objective dimension mismatch"));
    }
    let mut conj = 0.0;
    for i in 0..n {
        conj += conjugate_value(loss, alpha[i], y[i])?;
    }
    let xt_alpha = x.transpose() * alpha;
    Ok(conj + xt_alpha.norm_squared() / (2.0 * n as f64 * lambda))
}

/// Primal objective `1/n sum f_i(x_i^T beta) + lambda/2 |beta|^2`.
pub fn primal_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
    loss: LossKind,
) -> f64 {
    let n = x.nrows() as f64;
    let preds = x * beta;
    let mut total = 0.0;
    for i in 0..x.nrows() {
        total += match loss {
            LossKind::Squared => {
                let r = y[i] - preds[i];
                0.5 * r * r
            }
            LossKind::Logistic => ln_1p_exp(-y[i] * preds[i]),
        };
    }
    total / n + 0.5 * lambda * beta.norm_squared()
}

/// Gradient of [`primal_objective`] with respect to beta.
pub fn primal_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    lambda: f64,
    loss: LossKind,
) -> DVector<f64> {
    let n = x.nrows() as f64;
    let preds = x * beta;
    let mut weights = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        weights[i] = match loss {
            LossKind::Squared => preds[i] - y[i],
            LossKind::Logistic => -y[i] * sigmoid(-y[i] * preds[i]),
        };
    }
    x.transpose() * weights / n + beta * lambda
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn ln_1p_exp(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

/// Solves the dual problem with SDCA from a zero start.
pub fn sdca_solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loss: LossKind,
    settings: SolverSettings,
    seed: u64,
) -> Result<DualState> {
    sdca_solve_warm(x, y, lambda, loss, settings, seed, None)
}

/// Solves the dual problem with SDCA, optionally warm-started from a previous
/// dual vector (useful along a lambda path; the dual feasible set does not
/// depend on lambda).
pub fn sdca_solve_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loss: LossKind,
    settings: SolverSettings,
    seed: u64,
    warm_alpha: Option<&DVector<f64>>,
) -> Result<DualState> {
    let n = x.nrows();
    let d = x.ncols();
    if n == 0 {
        return Err(invalid("sdca needs at least one observation"));
    }
    if y.len() != n {
        return Err(invalid(format!(
            "sdca dimension mismatch: {} rows vs {} responses",
            n,
            y.len()
        )));
    }
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(invalid(format!(
            "lambda must be finite and > 0, got {lambda}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("sdca inputs must be finite"));
    }
    if loss == LossKind::Logistic {
        for (i, &yi) in y.iter().enumerate() {
            if yi != 1.0 && yi != -1.0 {
                return Err(invalid(format!(
                    "logistic loss needs labels in {{-1, +1}}, row {i} has {yi}"
                )));
            }
        }
    }

    // Row-major copy: the inner loop walks one observation at a time.
    let rows = RowMajor::from_matrix(x);
    let n_lambda = n as f64 * lambda;
    let sq_norms: Vec<f64> = (0..n)
        .map(|i| rows.row(i).iter().map(|v| v * v).sum())
        .collect();

    let mut alpha = match warm_alpha {
        Some(a) => {
            if a.len() != n {
                return Err(invalid("warm start length mismatch"));
            }
            a.clone()
        }
        None => DVector::zeros(n),
    };
    // v = X^T alpha / (n lambda), maintained incrementally below.
    let mut v = if warm_alpha.is_some() {
        x.transpose() * &alpha / n_lambda
    } else {
        DVector::zeros(d)
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = substream(seed, "sdca-permutation");
    let mut converged = false;
    let mut epochs_run = 0;
    let mut last_max_step = f64::INFINITY;

    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut max_step: f64 = 0.0;
        for &i in &order {
            let xi = rows.row(i);
            let q = sq_norms[i] / n_lambda;
            let old = alpha[i];
            let new = match loss {
                LossKind::Squared => {
                    // Closed form: the unique minimizer of the coordinate
                    // subproblem given the rest of alpha.
                    let xv = dot(xi, v.as_slice());
                    -(y[i] + xv - q * old) / (1.0 + q)
                }
                LossKind::Logistic => {
                    let xv = dot(xi, v.as_slice());
                    let m = y[i] * (xv - q * old);
                    let t0 = (-old * y[i]).clamp(T_MIN, 1.0 - T_MIN);
                    let t = solve_logistic_coordinate(m, q, t0);
                    -y[i] * t
                }
            };
            let delta = new - old;
            if delta != 0.0 {
                alpha[i] = new;
                axpy(delta / n_lambda, xi, v.as_mut_slice());
            }
            max_step = max_step.max(delta.abs());
        }
        epochs_run += 1;
        last_max_step = max_step;
        if max_step < settings.tol {
            converged = true;
            break;
        }
    }

    Ok(DualState {
        alpha,
        primal_cache: v,
        lambda,
        loss,
        converged,
        epochs_run,
        last_max_step,
    })
}

const T_MIN: f64 = 1e-12;
const NEWTON_ITERS: usize = 20;

/// Root of g(t) = ln((1-t)/t) + m - q t on (0, 1); g is strictly decreasing,
/// so the root is unique. Newton steps with a bisection bracket as fallback.
fn solve_logistic_coordinate(m: f64, q: f64, t0: f64) -> f64 {
    let g = |t: f64| ((1.0 - t) / t).ln() + m - q * t;
    let mut lo = T_MIN;
    let mut hi = 1.0 - T_MIN;
    if g(lo) <= 0.0 {
        return lo;
    }
    if g(hi) >= 0.0 {
        return hi;
    }
    let mut t = t0.clamp(lo, hi);
    for _ in 0..NEWTON_ITERS {
        let gt = g(t);
        if gt > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if gt.abs() < 1e-14 {
            break;
        }
        let dg = -1.0 / (t * (1.0 - t)) - q;
        let mut next = t - gt / dg;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-16 {
            t = next;
            break;
        }
        t = next;
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

fn axpy(scale: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x.iter()) {
        *o += scale * v;
    }
}

struct RowMajor {
    data: Vec<f64>,
    cols: usize,
}

impl RowMajor {
    fn from_matrix(x: &DMatrix<f64>) -> Self {
        let (n, d) = (x.nrows(), x.ncols());
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] = x[(i, j)];
            }
        }
        Self { data, cols: d }
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}
