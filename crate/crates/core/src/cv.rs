//! Regularization selection by v-fold cross-validation in two regimes:
//! global (per-fold local predictions are communicated and summed, one
//! lambda for everyone) and local (each party selects on its own local
//! design; nothing crosses party boundaries).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dual::{primal_recover, sdca_solve_warm, LossKind, SolverSettings};
use crate::error::{invalid, Result};
use crate::pride::{
    assemble_local_design, party_share, resolve_sigmas, FeatureShare, LocalDesign, Partition,
    PrivacyLevel, SigmaMode,
};
use crate::privacy::{column_range_bound, PrivacyBudget};
use crate::rng::{subseed, substream};

/// Settings shared by both CV regimes.
#[derive(Debug, Clone)]
pub struct CvSettings {
    pub folds: usize,
    /// Candidate penalties; whatever order is supplied, tables report them
    /// ascending.
    pub lambda_grid: Vec<f64>,
    pub loss: LossKind,
    pub solver: SolverSettings,
}

impl CvSettings {
    pub fn new(loss: LossKind) -> Self {
        Self {
            folds: 5,
            lambda_grid: default_lambda_grid(),
            loss,
            solver: SolverSettings::default(),
        }
    }
}

/// 30 points, log-spaced over [1e-4, 1e3].
pub fn default_lambda_grid() -> Vec<f64> {
    log_spaced_grid(1e-4, 1e3, 30)
}

pub fn log_spaced_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    assert!(min > 0.0 && max > min && count >= 2);
    let (lo, hi) = (min.ln(), max.ln());
    (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Per-lambda validation metrics, one column per fold.
#[derive(Debug, Clone)]
pub struct CvTable {
    pub lambdas: Vec<f64>,
    /// `fold_metric[l][f]` is the validation metric of `lambdas[l]` on fold `f`.
    pub fold_metric: Vec<Vec<f64>>,
    pub mean_metric: Vec<f64>,
}

impl CvTable {
    /// Index of the winning lambda: smallest mean metric, ties broken toward
    /// the smaller penalty.
    pub fn selected_index(&self) -> usize {
        let mut best = 0;
        for l in 1..self.lambdas.len() {
            if self.mean_metric[l] < self.mean_metric[best] {
                best = l;
            }
        }
        best
    }

    pub fn selected_lambda(&self) -> f64 {
        self.lambdas[self.selected_index()]
    }

    pub fn to_csv(&self) -> String {
        let folds = self.fold_metric.first().map_or(0, |row| row.len());
        let mut out = String::from("lambda");
        for f in 0..folds {
            out.push_str(&format!(",fold_{f}"));
        }
        out.push_str(",mean\n");
        for (l, &lambda) in self.lambdas.iter().enumerate() {
            out.push_str(&format!("{lambda}"));
            for f in 0..folds {
                out.push_str(&format!(",{}", self.fold_metric[l][f]));
            }
            out.push_str(&format!(",{}\n", self.mean_metric[l]));
        }
        out
    }
}

/// What each party's per-fold design contains.
#[derive(Debug, Clone, Copy)]
pub enum CvShareMode {
    /// Raw features only (single-machine and fully-local baselines).
    RawOnly,
    /// Raw features plus perturbed random features from every other party,
    /// redrawn once per fold and reused across the lambda grid.
    Projected {
        tau_subs: usize,
        privacy: PrivacyLevel,
        sigma_mode: SigmaMode,
    },
}

/// Deterministic fold assignment: a seeded shuffle dealt round-robin, so
/// fold sizes differ by at most one.
pub fn fold_ids(n: usize, folds: usize, master_seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(invalid("cross-validation needs at least 2 folds"));
    }
    if n < folds {
        return Err(invalid(format!("{n} rows cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut substream(master_seed, "cv-folds"));
    let mut ids = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        ids[row] = pos % folds;
    }
    Ok(ids)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("lambda grid is empty"));
    }
    if grid.iter().any(|&l| !l.is_finite() || l <= 0.0) {
        return Err(invalid("lambda grid entries must be finite and > 0"));
    }
    Ok(())
}

/// Validation metric: mean squared error for squared loss, mean logistic
/// loss for logistic.
fn validation_metric(loss: LossKind, y: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    match loss {
        LossKind::Squared => {
            y.iter()
                .zip(pred.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n
        }
        LossKind::Logistic => {
            y.iter()
                .zip(pred.iter())
                .map(|(a, b)| {
                    let z = -a * b;
                    if z > 30.0 {
                        z
                    } else {
                        z.exp().ln_1p()
                    }
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Solves the lambda path on one design, warm-starting each penalty from its
/// larger neighbor. Returns the dual vectors in the order of `grid_desc`.
fn lambda_path(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    grid_desc: &[f64],
    loss: LossKind,
    solver: SolverSettings,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let mut alphas = Vec::with_capacity(grid_desc.len());
    let mut warm: Option<DVector<f64>> = None;
    for &lambda in grid_desc {
        let state = sdca_solve_warm(design, y, lambda, loss, solver, seed, warm.as_ref())?;
        warm = Some(state.alpha.clone());
        alphas.push(state.alpha);
    }
    Ok(alphas)
}

/// Ascending grid plus the map from descending solve order to ascending
/// table order.
fn sorted_grid(grid: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut asc: Vec<f64> = grid.to_vec();
    asc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    asc.dedup();
    let desc_to_asc: Vec<usize> = (0..asc.len()).rev().collect();
    (asc, desc_to_asc)
}

/// Global cross-validation: per fold, every party fits its local problem for
/// each lambda; the parties' raw partial predictions on the held-out rows
/// are summed and scored against the held-out response. One lambda comes
/// back for everyone.
pub fn global_cv(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    partition: &Partition,
    mode: CvShareMode,
    settings: &CvSettings,
    master_seed: u64,
) -> Result<(f64, CvTable)> {
    validate_grid(&settings.lambda_grid)?;
    if y.len() != x.nrows() {
        return Err(invalid("global cv dimension mismatch"));
    }
    let n = x.nrows();
    let ids = fold_ids(n, settings.folds, master_seed)?;
    let (asc, desc_to_asc) = sorted_grid(&settings.lambda_grid);
    let grid_desc: Vec<f64> = asc.iter().rev().copied().collect();
    let parties = partition.parties();

    let fold_results: Vec<Result<Vec<f64>>> = (0..settings.folds)
        .into_par_iter()
        .map(|fold| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| ids[i] != fold).collect();
            let val_rows: Vec<usize> = (0..n).filter(|&i| ids[i] == fold).collect();
            let y_train =
                DVector::from_iterator(train_rows.len(), train_rows.iter().map(|&i| y[i]));
            let y_val = DVector::from_iterator(val_rows.len(), val_rows.iter().map(|&i| y[i]));
            let offset = match settings.loss {
                LossKind::Squared => y_train.sum() / y_train.len() as f64,
                LossKind::Logistic => 0.0,
            };

            let designs = build_fold_designs(x, partition, &train_rows, mode, master_seed, fold)?;

            // betas[k][l]: party k's raw-block coefficients at grid_desc[l].
            let betas: Vec<Vec<DVector<f64>>> = (0..parties)
                .into_par_iter()
                .map(|k| {
                    let alphas = lambda_path(
                        &designs[k].matrix,
                        &y_train,
                        &grid_desc,
                        settings.loss,
                        settings.solver,
                        subseed(master_seed, &format!("cv-fold-{fold}-party-{k}-sdca")),
                    )?;
                    alphas
                        .iter()
                        .zip(grid_desc.iter())
                        .map(|(alpha, &lambda)| {
                            let raw = designs[k].matrix.columns(0, designs[k].raw_cols);
                            primal_recover(&raw.into_owned(), alpha, lambda)
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;

            let val_blocks: Vec<DMatrix<f64>> = (0..parties)
                .map(|k| partition.block(x, k).select_rows(val_rows.iter()))
                .collect();

            let mut metrics = vec![0.0; grid_desc.len()];
            for (l, metric) in metrics.iter_mut().enumerate() {
                let mut pred = DVector::from_element(val_rows.len(), offset);
                for k in 0..parties {
                    pred += &val_blocks[k] * &betas[k][l];
                }
                *metric = validation_metric(settings.loss, &y_val, &pred);
            }
            Ok(metrics)
        })
        .collect();

    assemble_table(fold_results, asc, &desc_to_asc)
}

/// Builds each party's fold-train design for the requested mode.
fn build_fold_designs(
    x: &DMatrix<f64>,
    partition: &Partition,
    train_rows: &[usize],
    mode: CvShareMode,
    master_seed: u64,
    fold: usize,
) -> Result<Vec<LocalDesign>> {
    let parties = partition.parties();
    let blocks: Vec<DMatrix<f64>> = (0..parties)
        .map(|k| partition.block(x, k).select_rows(train_rows.iter()))
        .collect();
    match mode {
        CvShareMode::RawOnly => Ok(blocks
            .into_iter()
            .enumerate()
            .map(|(k, matrix)| {
                let raw_cols = matrix.ncols();
                LocalDesign {
                    party: k,
                    matrix,
                    raw_cols,
                }
            })
            .collect()),
        CvShareMode::Projected {
            tau_subs,
            privacy,
            sigma_mode,
        } => {
            let thetas: Vec<f64> = blocks
                .iter()
                .map(column_range_bound)
                .collect::<Result<Vec<_>>>()?;
            let sigmas = resolve_sigmas(privacy, sigma_mode, &thetas)?;
            let shares: Vec<FeatureShare> = (0..parties)
                .map(|k| {
                    let budget = PrivacyBudget::fixed_sigma(sigmas[k])?;
                    party_share(
                        &blocks[k],
                        tau_subs,
                        &budget,
                        k,
                        subseed(master_seed, &format!("cv-fold-{fold}-party-{k}-projection")),
                        subseed(master_seed, &format!("cv-fold-{fold}-party-{k}-noise")),
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (0..parties)
                .map(|k| {
                    let received: Vec<FeatureShare> = shares
                        .iter()
                        .filter(|s| s.origin_party != k)
                        .cloned()
                        .collect();
                    assemble_local_design(k, &blocks[k], &received)
                })
                .collect()
        }
    }
}

/// Local cross-validation for one party: folds over the rows of its local
/// design, fitting and predicting with the full local coefficient vector
/// (raw and random-feature coordinates alike).
pub fn local_cv(
    design: &LocalDesign,
    y: &DVector<f64>,
    settings: &CvSettings,
    master_seed: u64,
) -> Result<(f64, CvTable)> {
    validate_grid(&settings.lambda_grid)?;
    let n = design.matrix.nrows();
    if y.len() != n {
        return Err(invalid("local cv dimension mismatch"));
    }
    let ids = fold_ids(n, settings.folds, master_seed)?;
    let (asc, desc_to_asc) = sorted_grid(&settings.lambda_grid);
    let grid_desc: Vec<f64> = asc.iter().rev().copied().collect();
    let party = design.party;

    let fold_results: Vec<Result<Vec<f64>>> = (0..settings.folds)
        .into_par_iter()
        .map(|fold| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| ids[i] != fold).collect();
            let val_rows: Vec<usize> = (0..n).filter(|&i| ids[i] == fold).collect();
            let d_train = design.matrix.select_rows(train_rows.iter());
            let d_val = design.matrix.select_rows(val_rows.iter());
            let y_train =
                DVector::from_iterator(train_rows.len(), train_rows.iter().map(|&i| y[i]));
            let y_val = DVector::from_iterator(val_rows.len(), val_rows.iter().map(|&i| y[i]));
            let offset = match settings.loss {
                LossKind::Squared => y_train.sum() / y_train.len() as f64,
                LossKind::Logistic => 0.0,
            };

            let alphas = lambda_path(
                &d_train,
                &y_train,
                &grid_desc,
                settings.loss,
                settings.solver,
                subseed(master_seed, &format!("cv-fold-{fold}-party-{party}-sdca")),
            )?;
            let mut metrics = vec![0.0; grid_desc.len()];
            for (l, metric) in metrics.iter_mut().enumerate() {
                let coef = primal_recover(&d_train, &alphas[l], grid_desc[l])?;
                let pred = &d_val * coef + DVector::from_element(val_rows.len(), offset);
                *metric = validation_metric(settings.loss, &y_val, &pred);
            }
            Ok(metrics)
        })
        .collect();

    assemble_table(fold_results, asc, &desc_to_asc)
}

fn assemble_table(
    fold_results: Vec<Result<Vec<f64>>>,
    asc: Vec<f64>,
    desc_to_asc: &[usize],
) -> Result<(f64, CvTable)> {
    let folds = fold_results.len();
    let mut fold_metric = vec![vec![0.0; folds]; asc.len()];
    for (fold, result) in fold_results.into_iter().enumerate() {
        let metrics = result?;
        for (l_desc, value) in metrics.into_iter().enumerate() {
            fold_metric[desc_to_asc[l_desc]][fold] = value;
        }
    }
    let mean_metric: Vec<f64> = fold_metric
        .iter()
        .map(|row| row.iter().sum::<f64>() / folds as f64)
        .collect();
    let table = CvTable {
        lambdas: asc,
        fold_metric,
        mean_metric,
    };
    Ok((table.selected_lambda(), table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::standardize;
    use crate::rng::substream;
    use rand::Rng;

    fn instance(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = substream(seed, "cv-test");
        let raw = DMatrix::from_fn(n, p, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let (x, _, _) = standardize(&raw).unwrap();
        let beta = DVector::from_fn(p, |j, _| if j % 3 == 0 { 1.0 } else { -0.5 });
        let y = &x * beta + DVector::from_fn(n, |_, _| 0.3 * (rng.random::<f64>() - 0.5));
        (x, y)
    }

    #[test]
    fn folds_partition_the_rows() {
        let ids = fold_ids(23, 5, 3).unwrap();
        assert_eq!(ids.len(), 23);
        for fold in 0..5 {
            let size = ids.iter().filter(|&&f| f == fold).count();
            assert!((4..=5).contains(&size));
        }
        assert_eq!(fold_ids(23, 5, 3).unwrap(), ids);
        assert_ne!(fold_ids(23, 5, 4).unwrap(), ids);
        assert!(fold_ids(3, 5, 0).is_err());
        assert!(fold_ids(10, 1, 0).is_err());
    }

    #[test]
    fn single_lambda_grid_returns_it() {
        let (x, y) = instance(40, 8, 1);
        let partition = Partition::contiguous(8, 2).unwrap();
        let settings = CvSettings {
            lambda_grid: vec![0.25],
            ..CvSettings::new(LossKind::Squared)
        };
        let (lambda, table) =
            global_cv(&x, &y, &partition, CvShareMode::RawOnly, &settings, 7).unwrap();
        assert_eq!(lambda, 0.25);
        assert_eq!(table.lambdas, vec![0.25]);
        assert_eq!(table.fold_metric[0].len(), 5);
    }

    #[test]
    fn grid_must_be_valid() {
        let (x, y) = instance(20, 4, 2);
        let partition = Partition::contiguous(4, 1).unwrap();
        for grid in [vec![], vec![0.0], vec![-1.0]] {
            let settings = CvSettings {
                lambda_grid: grid,
                ..CvSettings::new(LossKind::Squared)
            };
            assert!(global_cv(&x, &y, &partition, CvShareMode::RawOnly, &settings, 0).is_err());
        }
    }

    #[test]
    fn single_party_local_equals_global() {
        let (x, y) = instance(60, 10, 3);
        let partition = Partition::contiguous(10, 1).unwrap();
        let settings = CvSettings {
            lambda_grid: log_spaced_grid(1e-3, 10.0, 8),
            ..CvSettings::new(LossKind::Squared)
        };
        let (gl, gt) = global_cv(&x, &y, &partition, CvShareMode::RawOnly, &settings, 11).unwrap();
        let design = LocalDesign {
            party: 0,
            matrix: x.clone(),
            raw_cols: 10,
        };
        let (ll, lt) = local_cv(&design, &y, &settings, 11).unwrap();
        assert_eq!(gl, ll);
        assert_eq!(gt.mean_metric, lt.mean_metric);
    }

    #[test]
    fn selects_sensible_lambda_against_oracle() {
        // The chosen lambda's validation score should be near the grid
        // optimum of a plain single-machine curve.
        let (x, y) = instance(80, 12, 4);
        let partition = Partition::contiguous(12, 1).unwrap();
        let settings = CvSettings {
            lambda_grid: log_spaced_grid(1e-4, 100.0, 12),
            ..CvSettings::new(LossKind::Squared)
        };
        let (lambda, table) =
            global_cv(&x, &y, &partition, CvShareMode::RawOnly, &settings, 5).unwrap();
        let best = table
            .mean_metric
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let chosen = table.mean_metric[table.selected_index()];
        assert!(
            chosen <= best * 1.05 + 1e-12,
            "chosen {chosen} vs best {best}"
        );
        assert!(lambda > 0.0);
    }

    #[test]
    fn projected_mode_runs_and_is_deterministic() {
        let (x, y) = instance(45, 12, 6);
        let partition = Partition::contiguous(12, 3).unwrap();
        let settings = CvSettings {
            lambda_grid: log_spaced_grid(1e-3, 10.0, 5),
            ..CvSettings::new(LossKind::Squared)
        };
        let mode = CvShareMode::Projected {
            tau_subs: 2,
            privacy: PrivacyLevel::EpsilonDelta {
                epsilon: 1.0,
                delta: 0.05,
            },
            sigma_mode: SigmaMode::PerParty,
        };
        let (l1, t1) = global_cv(&x, &y, &partition, mode, &settings, 9).unwrap();
        let (l2, t2) = global_cv(&x, &y, &partition, mode, &settings, 9).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(t1.mean_metric, t2.mean_metric);
    }

    #[test]
    fn table_csv_shape() {
        let table = CvTable {
            lambdas: vec![0.1, 1.0],
            fold_metric: vec![vec![0.5, 0.6], vec![0.7, 0.8]],
            mean_metric: vec![0.55, 0.75],
        };
        let csv = table.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines[0], "lambda,fold_0,fold_1,mean");
        assert_eq!(lines.len(), 3);
        assert_eq!(table.selected_index(), 0);
    }
}
