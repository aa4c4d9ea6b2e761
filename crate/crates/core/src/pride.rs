//! Multi-party protocol: partition features, exchange perturbed random
//! features, assemble local designs, solve locally and assemble the global
//! coefficient vector.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{primal_recover, sdca_solve, DualState, LossKind, SolverSettings};
use crate::error::{invalid, PrideError, Result};
use crate::privacy::{column_range_bound, gaussian_perturb, noise_sigma, PrivacyBudget};
use crate::rng::subseed;
use crate::transform::SrhtProjection;

/// Assignment of feature indices to parties: disjoint, nonempty, sorted sets
/// covering `0..p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    sets: Vec<Vec<usize>>,
    features: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Contiguous,
    Explicit(Vec<Vec<usize>>),
}

pub fn partition_features(p: usize, parties: usize, scheme: &PartitionScheme) -> Result<Partition> {
    match scheme {
        PartitionScheme::Contiguous => Partition::contiguous(p, parties),
        PartitionScheme::Explicit(sets) => {
            if sets.len() != parties {
                return Err(invalid(format!(
                    "explicit partition has {} sets for {} parties",
                    sets.len(),
                    parties
                )));
            }
            Partition::explicit(sets.clone(), p)
        }
    }
}

impl Partition {
    /// Splits `0..p` into `parties` nearly equal contiguous runs; the first
    /// `p % parties` runs take the extra feature.
    pub fn contiguous(p: usize, parties: usize) -> Result<Self> {
        if parties == 0 {
            return Err(invalid("partition needs at least one party"));
        }
        if p < parties {
            return Err(invalid(format!(
                "cannot split {p} features over {parties} parties"
            )));
        }
        let base = p / parties;
        let extra = p % parties;
        let mut sets = Vec::with_capacity(parties);
        let mut next = 0;
        for k in 0..parties {
            let size = base + usize::from(k < extra);
            sets.push((next..next + size).collect());
            next += size;
        }
        Ok(Self { sets, features: p })
    }

    /// Validates caller-supplied sets: disjoint, nonempty, jointly covering
    /// `0..p`. Sets are sorted internally.
    pub fn explicit(mut sets: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        if sets.is_empty() {
            return Err(invalid("partition needs at least one party"));
        }
        let mut seen = vec![false; p];
        for (k, set) in sets.iter_mut().enumerate() {
            if set.is_empty() {
                return Err(invalid(format!("party {k} owns no features")));
            }
            set.sort_unstable();
            for &j in set.iter() {
                if j >= p {
                    return Err(invalid(format!(
                        "party {k} references feature {j} >= p = {p}"
                    )));
                }
                if seen[j] {
                    return Err(invalid(format!(
                        "feature {j} assigned to more than one party"
                    )));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|&s| !s) {
            return Err(invalid(format!("feature {j} not assigned to any party")));
        }
        Ok(Self { sets, features: p })
    }

    pub fn parties(&self) -> usize {
        self.sets.len()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn set(&self, party: usize) -> &[usize] {
        &self.sets[party]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn min_block_size(&self) -> usize {
        self.sets.iter().map(|s| s.len()).min().unwrap_or(0)
    }

    /// Copies party `k`'s columns out of a design matrix.
    pub fn block(&self, x: &DMatrix<f64>, party: usize) -> DMatrix<f64> {
        x.select_columns(self.sets[party].iter())
    }
}

/// One party's communicated payload: perturbed random features of its block.
#[derive(Debug, Clone)]
pub struct FeatureShare {
    pub origin_party: usize,
    pub payload: DMatrix<f64>,
    pub sigma_used: f64,
    pub projection_seed: u64,
    pub noise_seed: u64,
}

/// Computes a party's share: SRHT sketch of the raw block plus Gaussian
/// noise at the budget's sigma. With sigma = 0 this is the plain sketch.
pub fn party_share(
    x_block: &DMatrix<f64>,
    tau_subs: usize,
    budget: &PrivacyBudget,
    origin_party: usize,
    projection_seed: u64,
    noise_seed: u64,
) -> Result<FeatureShare> {
    let projection = SrhtProjection::new(x_block.ncols(), tau_subs, projection_seed)?;
    let sketch = projection.apply(x_block)?;
    let payload = gaussian_perturb(&sketch, budget.sigma(), noise_seed)?;
    Ok(FeatureShare {
        origin_party,
        payload,
        sigma_used: budget.sigma(),
        projection_seed,
        noise_seed,
    })
}

/// A party's local design: its raw block followed by the received shares in
/// ascending origin-party order.
#[derive(Debug, Clone)]
pub struct LocalDesign {
    pub party: usize,
    pub matrix: DMatrix<f64>,
    pub raw_cols: usize,
}

pub fn assemble_local_design(
    party: usize,
    raw_block: &DMatrix<f64>,
    shares: &[FeatureShare],
) -> Result<LocalDesign> {
    let n = raw_block.nrows();
    let parties = shares.len() + 1;
    let mut seen = vec![false; parties];
    for share in shares {
        if share.origin_party == party {
            return Err(PrideError::Protocol(format!(
                "party {party} received its own share"
            )));
        }
        if share.origin_party >= parties {
            return Err(PrideError::Protocol(format!(
                "share origin {} out of range for {} parties",
                share.origin_party, parties
            )));
        }
        if seen[share.origin_party] {
            return Err(PrideError::Protocol(format!(
                "duplicate share from party {}",
                share.origin_party
            )));
        }
        if share.payload.nrows() != n {
            return Err(PrideError::Protocol(format!(
                "share from party {} has {} rows, expected {n}",
                share.origin_party,
                share.payload.nrows()
            )));
        }
        seen[share.origin_party] = true;
    }

    let mut ordered: Vec<&FeatureShare> = shares.iter().collect();
    ordered.sort_by_key(|s| s.origin_party);

    let total_cols = raw_block.ncols() + ordered.iter().map(|s| s.payload.ncols()).sum::<usize>();
    let mut matrix = DMatrix::zeros(n, total_cols);
    matrix
        .view_mut((0, 0), (n, raw_block.ncols()))
        .copy_from(raw_block);
    let mut offset = raw_block.ncols();
    for share in ordered {
        matrix
            .view_mut((0, offset), (n, share.payload.ncols()))
            .copy_from(&share.payload);
        offset += share.payload.ncols();
    }
    Ok(LocalDesign {
        party,
        matrix,
        raw_cols: raw_block.ncols(),
    })
}

/// Full local coefficient vector over a local design (raw block first, then
/// the random-feature coordinates). The raw-block prefix equals the party's
/// published coefficients; the remainder is only used for local prediction,
/// where test rows get fresh sketches from the same projections with fresh
/// noise at the same sigma.
pub fn local_coefficients(
    design: &LocalDesign,
    alpha: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    primal_recover(&design.matrix, alpha, lambda)
}

/// Privacy regime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrivacyLevel {
    /// Shares are communicated unperturbed (sigma = 0 for every party).
    NoPrivacy,
    /// Caller-supplied sigma applied to every party, bypassing calibration.
    FixedSigma(f64),
    /// Per Theorem-style calibration from (epsilon, delta) and each party's
    /// column range bound.
    EpsilonDelta { epsilon: f64, delta: f64 },
}

/// Whether each party uses its own calibrated sigma or all parties use the
/// largest one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    PerParty,
    GlobalMax,
}

#[derive(Debug, Clone, Copy)]
pub struct PrideConfig {
    pub tau_subs: usize,
    pub lambda: f64,
    pub privacy: PrivacyLevel,
    pub sigma_mode: SigmaMode,
    pub loss: LossKind,
    pub solver: SolverSettings,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PrideDiagnostics {
    pub thetas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub solver_epochs: Vec<usize>,
    pub solver_converged: Vec<bool>,
    pub projection_seeds: Vec<u64>,
    pub noise_seeds: Vec<u64>,
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct PrideResult {
    /// Per-party coefficient blocks, indexed by party, in the party's local
    /// feature order.
    pub per_party_beta: Vec<DVector<f64>>,
    pub per_party_alpha: Vec<DVector<f64>>,
    /// Per-party blocks placed at their global feature indices.
    pub global_beta: DVector<f64>,
    pub diagnostics: PrideDiagnostics,
}

/// Rejects matrices that are not standardized to column mean 0 and
/// population standard deviation 1.
pub fn validate_standardized(x: &DMatrix<f64>) -> Result<()> {
    let n = x.nrows();
    if n == 0 || x.ncols() == 0 {
        return Err(invalid("design matrix is empty"));
    }
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n as f64;
        if mean.abs() > 1e-6 {
            return Err(invalid(format!(
                "column {j} has mean {mean:.3e}; standardize the design first"
            )));
        }
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        if !(0.999..=1.001).contains(&std) {
            return Err(invalid(format!(
                "column {j} has standard deviation {std:.6}; standardize the design first"
            )));
        }
    }
    Ok(())
}

/// Per-party noise levels for the given privacy level and the parties'
/// column range bounds.
pub fn resolve_sigmas(
    privacy: PrivacyLevel,
    sigma_mode: SigmaMode,
    thetas: &[f64],
) -> Result<Vec<f64>> {
    let mut sigmas = match privacy {
        PrivacyLevel::NoPrivacy => vec![0.0; thetas.len()],
        PrivacyLevel::FixedSigma(sigma) => {
            if !sigma.is_finite() || sigma < 0.0 {
                return Err(invalid(format!(
                    "fixed sigma must be finite and >= 0, got {sigma}"
                )));
            }
            vec![sigma; thetas.len()]
        }
        PrivacyLevel::EpsilonDelta { epsilon, delta } => thetas
            .iter()
            .map(|&theta| noise_sigma(epsilon, delta, theta, 1.0))
            .collect::<Result<Vec<f64>>>()?,
    };
    if sigma_mode == SigmaMode::GlobalMax {
        let max = sigmas.iter().cloned().fold(0.0, f64::max);
        sigmas.iter_mut().for_each(|s| *s = max);
    }
    Ok(sigmas)
}

/// Runs the full protocol on a standardized design.
pub fn run_pride(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    partition: &Partition,
    config: &PrideConfig,
) -> Result<PrideResult> {
    let lambdas = vec![config.lambda; partition.parties()];
    run_pride_with_lambdas(x, y, partition, config, &lambdas)
}

/// Same protocol with a per-party penalty (the locally cross-validated
/// regime, where each party tunes its own lambda).
pub fn run_pride_with_lambdas(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    partition: &Partition,
    config: &PrideConfig,
    lambdas: &[f64],
) -> Result<PrideResult> {
    if partition.features() != x.ncols() {
        return Err(invalid(format!(
            "partition covers {} features but the design has {} columns",
            partition.features(),
            x.ncols()
        )));
    }
    if y.len() != x.nrows() {
        return Err(invalid(format!(
            "{} responses for {} rows",
            y.len(),
            x.nrows()
        )));
    }
    if lambdas.len() != partition.parties() {
        return Err(invalid(format!(
            "{} penalties for {} parties",
            lambdas.len(),
            partition.parties()
        )));
    }
    for &lambda in lambdas {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(invalid(format!(
                "lambda must be finite and > 0, got {lambda}"
            )));
        }
    }
    validate_standardized(x)?;
    let parties = partition.parties();
    if config.tau_subs == 0 || (parties > 1 && config.tau_subs > partition.min_block_size()) {
        return Err(invalid(format!(
            "tau_subs {} must lie in [1, min block size {}]",
            config.tau_subs,
            partition.min_block_size()
        )));
    }

    let blocks: Vec<DMatrix<f64>> = (0..parties).map(|k| partition.block(x, k)).collect();
    let thetas: Vec<f64> = blocks
        .iter()
        .map(column_range_bound)
        .collect::<Result<Vec<f64>>>()?;
    let sigmas = resolve_sigmas(config.privacy, config.sigma_mode, &thetas)?;

    let projection_seeds: Vec<u64> = (0..parties)
        .map(|k| subseed(config.master_seed, &format!("party-{k}-projection")))
        .collect();
    let noise_seeds: Vec<u64> = (0..parties)
        .map(|k| subseed(config.master_seed, &format!("party-{k}-noise")))
        .collect();

    // Share exchange barrier: every party publishes once, to everyone.
    let shares: Vec<FeatureShare> = (0..parties)
        .map(|k| {
            let budget = PrivacyBudget::fixed_sigma(sigmas[k])?;
            party_share(
                &blocks[k],
                config.tau_subs,
                &budget,
                k,
                projection_seeds[k],
                noise_seeds[k],
            )
        })
        .collect::<Result<Vec<_>>>()?;

    // Local solves are independent once the shares exist.
    let solves: Vec<Result<(DVector<f64>, DualState)>> = (0..parties)
        .into_par_iter()
        .map(|k| {
            let received: Vec<FeatureShare> = shares
                .iter()
                .filter(|s| s.origin_party != k)
                .cloned()
                .collect();
            let design = assemble_local_design(k, &blocks[k], &received)?;
            let state = sdca_solve(
                &design.matrix,
                y,
                lambdas[k],
                config.loss,
                config.solver,
                subseed(config.master_seed, &format!("party-{k}-sdca-permutation")),
            )?;
            let beta_k = primal_recover(&blocks[k], &state.alpha, lambdas[k])?;
            Ok((beta_k, state))
        })
        .collect();

    let mut per_party_beta = Vec::with_capacity(parties);
    let mut per_party_alpha = Vec::with_capacity(parties);
    let mut solver_epochs = Vec::with_capacity(parties);
    let mut solver_converged = Vec::with_capacity(parties);
    let mut global_beta = DVector::zeros(x.ncols());
    for (k, solve) in solves.into_iter().enumerate() {
        let (beta_k, state) = solve?;
        for (local, &global) in partition.set(k).iter().enumerate() {
            global_beta[global] = beta_k[local];
        }
        per_party_beta.push(beta_k);
        per_party_alpha.push(state.alpha);
        solver_epochs.push(state.epochs_run);
        solver_converged.push(state.converged);
    }

    Ok(PrideResult {
        per_party_beta,
        per_party_alpha,
        global_beta,
        diagnostics: PrideDiagnostics {
            thetas,
            sigmas,
            lambdas: lambdas.to_vec(),
            solver_epochs,
            solver_converged,
            projection_seeds,
            noise_seeds,
            master_seed: config.master_seed,
        },
    })
}

/// The unperturbed specialization: identical pipeline with sigma = 0 for
/// every party.
pub fn run_dual_loco(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    partition: &Partition,
    config: &PrideConfig,
) -> Result<PrideResult> {
    let mut cfg = *config;
    cfg.privacy = PrivacyLevel::NoPrivacy;
    run_pride(x, y, partition, &cfg)
}

/// Global prediction: each party contributes its partial linear predictor on
/// its own raw test columns and the contributions are summed.
pub fn predict_global(
    result: &PrideResult,
    x_test: &DMatrix<f64>,
    partition: &Partition,
) -> Result<DVector<f64>> {
    if x_test.ncols() != partition.features() {
        return Err(invalid(format!(
            "test matrix has {} columns, partition covers {}",
            x_test.ncols(),
            partition.features()
        )));
    }
    if result.per_party_beta.len() != partition.parties() {
        return Err(invalid(
            "result and partition disagree on the number of parties",
        ));
    }
    let mut prediction = DVector::zeros(x_test.nrows());
    for k in 0..partition.parties() {
        let block = partition.block(x_test, k);
        prediction += block * &result.per_party_beta[k];
    }
    Ok(prediction)
}
