//! Comparison estimators: per-party independent fits (semi-naive-Bayes), the
//! single-machine optimum, and the closed-form ridge oracle.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::dual::{primal_recover, sdca_solve, LossKind, SolverSettings};
use crate::error::{invalid, Result};
use crate::pride::{validate_standardized, Partition};
use crate::rng::subseed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    SemiNaiveBayes,
    SingleMachine,
    RidgeClosedForm,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    /// Length-p coefficient vector; for semi-naive-Bayes this is the
    /// per-party blocks placed at their global indices.
    pub beta: DVector<f64>,
    pub per_party_beta: Option<Vec<DVector<f64>>>,
    pub lambda: f64,
    pub solver_converged: bool,
}

/// Ridge coefficients `(X^T X + n lambda I)^-1 X^T y` via Cholesky. `n
/// lambda` is floored at 1e-12 so an exactly-zero penalty still factors.
pub fn ridge_closed_form(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(invalid("ridge oracle dimension mismatch"));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) || !lambda.is_finite() {
        return Err(invalid("ridge oracle inputs must be finite"));
    }
    let n_lambda = (n as f64 * lambda).max(1e-12);
    let mut gram = x.transpose() * x;
    for j in 0..gram.nrows() {
        gram[(j, j)] += n_lambda;
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| invalid("ridge normal equations are not positive definite"))?;
    Ok(chol.solve(&(x.transpose() * y)))
}

/// Solves the full undistributed problem with the dual solver. This is the
/// reference estimate for error metrics.
pub fn single_machine(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loss: LossKind,
    solver: SolverSettings,
    seed: u64,
) -> Result<BaselineResult> {
    let state = sdca_solve(
        x,
        y,
        lambda,
        loss,
        solver,
        subseed(seed, "single-machine-sdca"),
    )?;
    let beta = primal_recover(x, &state.alpha, lambda)?;
    Ok(BaselineResult {
        method: BaselineMethod::SingleMachine,
        beta,
        per_party_beta: None,
        lambda,
        solver_converged: state.converged,
    })
}

/// Every party fits a regularized model on its own raw features alone; no
/// communication of any kind.
pub fn semi_naive_bayes(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    partition: &Partition,
    lambda: f64,
    loss: LossKind,
    solver: SolverSettings,
    seed: u64,
) -> Result<BaselineResult> {
    let lambdas = vec![lambda; partition.parties()];
    semi_naive_bayes_with_lambdas(x, y, partition, &lambdas, loss, solver, seed)
}

/// Per-party penalties, for the locally cross-validated regime.
pub fn semi_naive_bayes_with_lambdas(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    partition: &Partition,
    lambdas: &[f64],
    loss: LossKind,
    solver: SolverSettings,
    seed: u64,
) -> Result<BaselineResult> {
    validate_standardized(x)?;
    if partition.features() != x.ncols() {
        return Err(invalid("partition does not match the design"));
    }
    if lambdas.len() != partition.parties() {
        return Err(invalid("one penalty per party required"));
    }
    let mut beta = DVector::zeros(x.ncols());
    let mut blocks = Vec::with_capacity(partition.parties());
    let mut converged = true;
    for (k, &lambda) in lambdas.iter().enumerate() {
        let block = partition.block(x, k);
        let state = sdca_solve(
            &block,
            y,
            lambda,
            loss,
            solver,
            subseed(seed, &format!("nb-party-{k}-sdca")),
        )?;
        let beta_k = primal_recover(&block, &state.alpha, lambda)?;
        converged &= state.converged;
        for (local, &global) in partition.set(k).iter().enumerate() {
            beta[global] = beta_k[local];
        }
        blocks.push(beta_k);
    }
    Ok(BaselineResult {
        method: BaselineMethod::SemiNaiveBayes,
        beta,
        per_party_beta: Some(blocks),
        lambda: lambdas.iter().cloned().fold(f64::NAN, f64::max),
        solver_converged: converged,
    })
}
