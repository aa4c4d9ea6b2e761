//! Batch experiment runner: sweep privacy levels and projection dimensions
//! over a dataset, run the estimators, and emit a long-format metrics CSV
//! plus a seed-aggregated JSON summary.
//!
//! Detail CSVs are byte-identical across reruns with the same config and
//! master seed; wall-clock timings therefore go to a separate file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{coefficient_correlation, estimation_error, prediction_mse_normalized};
use crate::baselines::{semi_naive_bayes_with_lambdas, single_machine, BaselineResult};
use crate::cv::{global_cv, local_cv, log_spaced_grid, CvSettings, CvShareMode};
use crate::data::{
    apply_standardization, load_csv, standardize, train_test_split, BlockLabel, DataSet,
};
use crate::dual::{LossKind, SolverSettings};
use crate::error::{PrideError, Result};
use crate::pride::{
    assemble_local_design, partition_features, party_share, resolve_sigmas, run_pride_with_lambdas,
    FeatureShare, Partition, PartitionScheme, PrideConfig, PrivacyLevel, SigmaMode,
};
use crate::privacy::{column_range_bound, PrivacyBudget};
use crate::rng::subseed;
use crate::synth::{generate_confounded, SyntheticConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub partition: PartitionConfig,
    pub sweep: SweepConfig,
    pub model: ModelConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub csv: Option<CsvSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    pub path: PathBuf,
    pub response_column: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub parties: usize,
    /// Explicit feature sets; contiguous near-equal split when absent.
    #[serde(default)]
    pub sets: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Projection dimensions as fractions of the smallest block.
    #[serde(default = "default_fractions")]
    pub tau_subs_fractions: Vec<f64>,
    /// Absolute projection dimensions; takes precedence when nonempty.
    #[serde(default)]
    pub tau_subs_absolute: Vec<usize>,
    #[serde(default = "default_epsilon_grid")]
    pub epsilon_grid: Vec<f64>,
    /// Adds a no-privacy entry to the sweep (sigma = 0 shares).
    #[serde(default = "default_true")]
    pub include_no_privacy: bool,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_sigma_mode")]
    pub sigma_mode: SigmaMode,
}

fn default_fractions() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.2]
}

fn default_epsilon_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 5.0, 10.0, 20.0]
}

fn default_true() -> bool {
    true
}

fn default_delta() -> f64 {
    0.05
}

fn default_methods() -> Vec<Method> {
    vec![
        Method::Pride,
        Method::DualLoco,
        Method::SemiNb,
        Method::SingleMachine,
    ]
}

fn default_sigma_mode() -> SigmaMode {
    SigmaMode::PerParty
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pride,
    DualLoco,
    SemiNb,
    SingleMachine,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Pride => "pride",
            Method::DualLoco => "dual_loco",
            Method::SemiNb => "semi_nb",
            Method::SingleMachine => "single_machine",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    pub lambda: LambdaSpec,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub cv_lambda_grid: Option<GridSpec>,
}

fn default_loss() -> LossKind {
    LossKind::Squared
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSpec {
    Fixed { value: f64 },
    CvGlobal,
    CvLocal,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_seeds: usize,
    pub master_seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub master_seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| PrideError::Config(format!("{}: {e}", path.display())))?;
    validate_config(&config)?;
    Ok(config)
}

fn validate_config(config: &ExperimentConfig) -> Result<()> {
    let bad = |msg: String| Err(PrideError::Config(msg));
    if config.run.n_seeds == 0 {
        return bad("run.n_seeds must be at least 1".into());
    }
    if !(config.run.train_fraction > 0.0 && config.run.train_fraction < 1.0) {
        return bad(format!(
            "run.train_fraction must lie in (0, 1), got {}",
            config.run.train_fraction
        ));
    }
    if config.sweep.methods.is_empty() {
        return bad("sweep.methods is empty".into());
    }
    let needs_grid = config
        .sweep
        .methods
        .iter()
        .any(|m| matches!(m, Method::Pride));
    if needs_grid && config.sweep.epsilon_grid.is_empty() && !config.sweep.include_no_privacy {
        return bad("pride sweep needs a nonempty epsilon grid or the no-privacy entry".into());
    }
    if config
        .sweep
        .epsilon_grid
        .iter()
        .any(|&e| !e.is_finite() || e <= 0.0)
    {
        return bad("sweep.epsilon_grid entries must be finite and > 0".into());
    }
    if !(config.sweep.delta > 0.0 && config.sweep.delta < 0.5) {
        return bad(format!(
            "sweep.delta must lie in (0, 0.5), got {}",
            config.sweep.delta
        ));
    }
    let uses_projection = config
        .sweep
        .methods
        .iter()
        .any(|m| matches!(m, Method::Pride | Method::DualLoco));
    if uses_projection
        && config.sweep.tau_subs_absolute.is_empty()
        && config.sweep.tau_subs_fractions.is_empty()
    {
        return bad("sweep needs tau_subs_fractions or tau_subs_absolute".into());
    }
    if config
        .sweep
        .tau_subs_fractions
        .iter()
        .any(|&f| !(f > 0.0 && f <= 1.0))
    {
        return bad("sweep.tau_subs_fractions must lie in (0, 1]".into());
    }
    if let LambdaSpec::Fixed { value } = config.model.lambda {
        if !value.is_finite() || value <= 0.0 {
            return bad(format!(
                "model.lambda value must be finite and > 0, got {value}"
            ));
        }
    }
    if let Some(grid) = config.model.cv_lambda_grid {
        if !(grid.min > 0.0 && grid.max > grid.min && grid.count >= 2) {
            return bad("model.cv_lambda_grid must satisfy 0 < min < max and count >= 2".into());
        }
    }
    if config.dataset.kind == DatasetKind::Csv && config.dataset.csv.is_none() {
        return bad("dataset.kind = \"csv\" requires a [dataset.csv] table".into());
    }
    Ok(())
}

/// Paths of everything a run writes.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub detail_csv: PathBuf,
    pub summary_json: PathBuf,
    pub timings_csv: PathBuf,
}

/// One sweep cell: a method at a grid point for one replicate.
#[derive(Debug, Clone, Copy)]
struct Cell {
    seed_idx: usize,
    method: Method,
    /// None for the no-privacy entry and for methods without a privacy knob.
    epsilon: Option<f64>,
    tau_subs: Option<usize>,
}

#[derive(Debug, Clone, Default)]
struct CellMetrics {
    lambda: String,
    sigma_max: Option<f64>,
    theta_max: Option<f64>,
    est_err_bstar: Option<f64>,
    est_err_bstar_norm: Option<f64>,
    corr_bstar: Option<f64>,
    est_err_true: Option<f64>,
    est_err_true_norm: Option<f64>,
    est_err_true_x_norm: Option<f64>,
    est_err_true_c_norm: Option<f64>,
    train_mse_norm: Option<f64>,
    test_mse_norm: Option<f64>,
    converged: Option<bool>,
}

struct CellOutcome {
    metrics: CellMetrics,
    status: String,
    wall_ms: u128,
}

/// Everything shared by the cells of one replicate.
struct SeedContext {
    partition: Partition,
    x_train: DMatrix<f64>,
    y_fit: DVector<f64>,
    y_train_raw: DVector<f64>,
    x_test: DMatrix<f64>,
    y_test: DVector<f64>,
    y_offset: f64,
    stds: DVector<f64>,
    true_beta: Option<DVector<f64>>,
    block_labels: Option<Vec<BlockLabel>>,
    beta_star: DVector<f64>,
    sm_lambda: f64,
    sm_converged: bool,
    rep_seed: u64,
    cv_seed: u64,
}

pub fn run_experiment(config: &ExperimentConfig, overrides: &Overrides) -> Result<RunArtifacts> {
    validate_config(config)?;
    let mut config = config.clone();
    if let Some(seed) = overrides.master_seed {
        config.run.master_seed = seed;
    }
    if let Some(dir) = &overrides.output_dir {
        config.run.output_dir = dir.clone();
    }
    if let Some(jobs) = overrides.jobs {
        config.run.jobs = Some(jobs);
    }

    fs::create_dir_all(&config.run.output_dir)?;

    match config.run.jobs {
        Some(jobs) if jobs > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| PrideError::Config(format!("worker pool: {e}")))?;
            pool.install(|| execute(&config))
        }
        _ => execute(&config),
    }
}

fn execute(config: &ExperimentConfig) -> Result<RunArtifacts> {
    let base_data = match config.dataset.kind {
        DatasetKind::Csv => {
            let spec = config.dataset.csv.as_ref().expect("validated");
            Some(load_csv(&spec.path, &spec.response_column)?)
        }
        DatasetKind::Synthetic => None,
    };

    let contexts: Vec<Result<SeedContext>> = (0..config.run.n_seeds)
        .into_par_iter()
        .map(|seed_idx| build_seed_context(config, base_data.as_ref(), seed_idx))
        .collect();
    let contexts: Vec<SeedContext> = contexts.into_iter().collect::<Result<Vec<_>>>()?;

    let cells = enumerate_cells(config, &contexts)?;

    let outcomes: Vec<CellOutcome> = cells
        .par_iter()
        .map(|cell| {
            let started = Instant::now();
            let context = &contexts[cell.seed_idx];
            match run_cell(config, context, cell) {
                Ok(metrics) => CellOutcome {
                    metrics,
                    status: "ok".to_string(),
                    wall_ms: started.elapsed().as_millis(),
                },
                Err(err) => CellOutcome {
                    metrics: CellMetrics::default(),
                    status: format!("error: {err}").replace(['\n', ','], ";"),
                    wall_ms: started.elapsed().as_millis(),
                },
            }
        })
        .collect();

    write_outputs(config, &cells, &outcomes)
}

fn build_seed_context(
    config: &ExperimentConfig,
    base_data: Option<&DataSet>,
    seed_idx: usize,
) -> Result<SeedContext> {
    let rep_seed = subseed(config.run.master_seed, &format!("replicate-{seed_idx}"));
    let data = match base_data {
        Some(data) => data.clone(),
        None => {
            let mut synth = config.dataset.synthetic.clone();
            synth.seed = subseed(rep_seed, "synthetic-data");
            generate_confounded(&synth)?
        }
    };
    let (train, test) = train_test_split(&data, config.run.train_fraction, rep_seed)?;
    let (x_train, means, stds) = standardize(&train.x)?;
    let x_test = apply_standardization(&test.x, &means, &stds)?;

    let y_offset = match config.model.loss {
        LossKind::Squared => train.y.sum() / train.y.len() as f64,
        LossKind::Logistic => 0.0,
    };
    let y_fit = train.y.map(|v| v - y_offset);

    let scheme = match &config.partition.sets {
        Some(sets) => PartitionScheme::Explicit(sets.clone()),
        None => PartitionScheme::Contiguous,
    };
    let partition = partition_features(x_train.ncols(), config.partition.parties, &scheme)?;

    let cv_seed = subseed(rep_seed, "cv");
    let sm_lambda = match config.model.lambda {
        LambdaSpec::Fixed { value } => value,
        // Both CV regimes coincide for the single machine (one party, no
        // shares).
        LambdaSpec::CvGlobal | LambdaSpec::CvLocal => {
            let trivial = Partition::contiguous(x_train.ncols(), 1)?;
            let settings = cv_settings(config);
            let (lambda, _) = global_cv(
                &x_train,
                &y_fit,
                &trivial,
                CvShareMode::RawOnly,
                &settings,
                cv_seed,
            )?;
            lambda
        }
    };
    let sm = single_machine(
        &x_train,
        &y_fit,
        sm_lambda,
        config.model.loss,
        config.solver,
        subseed(rep_seed, "single-machine"),
    )?;

    Ok(SeedContext {
        partition,
        x_train,
        y_fit,
        y_train_raw: train.y,
        x_test,
        y_test: test.y,
        y_offset,
        stds,
        true_beta: train.true_beta,
        block_labels: train.block_labels,
        beta_star: sm.beta,
        sm_lambda,
        sm_converged: sm.solver_converged,
        rep_seed,
        cv_seed,
    })
}

fn cv_settings(config: &ExperimentConfig) -> CvSettings {
    let lambda_grid = match config.model.cv_lambda_grid {
        Some(grid) => log_spaced_grid(grid.min, grid.max, grid.count),
        None => crate::cv::default_lambda_grid(),
    };
    CvSettings {
        folds: config.model.cv_folds,
        lambda_grid,
        loss: config.model.loss,
        solver: config.solver,
    }
}

fn resolve_tau_grid(config: &ExperimentConfig, partition: &Partition) -> Vec<usize> {
    if !config.sweep.tau_subs_absolute.is_empty() {
        return config.sweep.tau_subs_absolute.clone();
    }
    let smallest = partition.min_block_size();
    config
        .sweep
        .tau_subs_fractions
        .iter()
        .map(|f| ((f * smallest as f64).round() as usize).clamp(1, smallest))
        .collect()
}

fn enumerate_cells(config: &ExperimentConfig, contexts: &[SeedContext]) -> Result<Vec<Cell>> {
    let tau_grid = resolve_tau_grid(config, &contexts[0].partition);
    let mut cells = Vec::new();
    for seed_idx in 0..config.run.n_seeds {
        for &method in &config.sweep.methods {
            match method {
                Method::SingleMachine | Method::SemiNb => cells.push(Cell {
                    seed_idx,
                    method,
                    epsilon: None,
                    tau_subs: None,
                }),
                Method::DualLoco => {
                    for &tau in &tau_grid {
                        cells.push(Cell {
                            seed_idx,
                            method,
                            epsilon: None,
                            tau_subs: Some(tau),
                        });
                    }
                }
                Method::Pride => {
                    for &tau in &tau_grid {
                        for &eps in &config.sweep.epsilon_grid {
                            cells.push(Cell {
                                seed_idx,
                                method,
                                epsilon: Some(eps),
                                tau_subs: Some(tau),
                            });
                        }
                        if config.sweep.include_no_privacy {
                            cells.push(Cell {
                                seed_idx,
                                method,
                                epsilon: None,
                                tau_subs: Some(tau),
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn privacy_for_cell(config: &ExperimentConfig, cell: &Cell) -> PrivacyLevel {
    match cell.epsilon {
        Some(epsilon) => PrivacyLevel::EpsilonDelta {
            epsilon,
            delta: config.sweep.delta,
        },
        None => PrivacyLevel::NoPrivacy,
    }
}

fn run_cell(config: &ExperimentConfig, context: &SeedContext, cell: &Cell) -> Result<CellMetrics> {
    let partition = &context.partition;
    match cell.method {
        Method::SingleMachine => {
            let result = BaselineResult {
                method: crate::baselines::BaselineMethod::SingleMachine,
                beta: context.beta_star.clone(),
                per_party_beta: None,
                lambda: context.sm_lambda,
                solver_converged: context.sm_converged,
            };
            let blocks = vec![result.beta.clone()];
            let trivial = Partition::contiguous(context.x_train.ncols(), 1)?;
            finish_metrics(
                config,
                context,
                &result.beta,
                &blocks,
                &trivial,
                format_lambdas(&[context.sm_lambda]),
                None,
                None,
                context.sm_converged,
            )
        }
        Method::SemiNb => {
            let lambdas = resolve_nb_lambdas(config, context)?;
            let nb = semi_naive_bayes_with_lambdas(
                &context.x_train,
                &context.y_fit,
                partition,
                &lambdas,
                config.model.loss,
                config.solver,
                subseed(context.rep_seed, "semi-nb"),
            )?;
            let blocks = nb.per_party_beta.clone().expect("nb always has blocks");
            finish_metrics(
                config,
                context,
                &nb.beta,
                &blocks,
                partition,
                format_lambdas(&lambdas),
                None,
                None,
                nb.solver_converged,
            )
        }
        Method::Pride | Method::DualLoco => {
            let tau_subs = cell.tau_subs.expect("projection methods carry tau_subs");
            let privacy = privacy_for_cell(config, cell);
            let lambdas = resolve_pride_lambdas(config, context, tau_subs, privacy)?;
            let pride_config = PrideConfig {
                tau_subs,
                lambda: lambdas[0],
                privacy,
                sigma_mode: config.sweep.sigma_mode,
                loss: config.model.loss,
                solver: config.solver,
                master_seed: context.rep_seed,
            };
            let result = run_pride_with_lambdas(
                &context.x_train,
                &context.y_fit,
                partition,
                &pride_config,
                &lambdas,
            )?;
            let sigma_max = result
                .diagnostics
                .sigmas
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            let theta_max = result
                .diagnostics
                .thetas
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            let converged = result.diagnostics.solver_converged.iter().all(|&c| c);
            finish_metrics(
                config,
                context,
                &result.global_beta,
                &result.per_party_beta,
                partition,
                format_lambdas(&lambdas),
                Some(sigma_max),
                Some(theta_max),
                converged,
            )
        }
    }
}

fn resolve_nb_lambdas(config: &ExperimentConfig, context: &SeedContext) -> Result<Vec<f64>> {
    let parties = context.partition.parties();
    match config.model.lambda {
        LambdaSpec::Fixed { value } => Ok(vec![value; parties]),
        LambdaSpec::CvGlobal => {
            let settings = cv_settings(config);
            let (lambda, _) = global_cv(
                &context.x_train,
                &context.y_fit,
                &context.partition,
                CvShareMode::RawOnly,
                &settings,
                context.cv_seed,
            )?;
            Ok(vec![lambda; parties])
        }
        LambdaSpec::CvLocal => {
            let settings = cv_settings(config);
            (0..parties)
                .map(|k| {
                    let block = context.partition.block(&context.x_train, k);
                    let raw_cols = block.ncols();
                    let design = crate::pride::LocalDesign {
                        party: k,
                        matrix: block,
                        raw_cols,
                    };
                    local_cv(&design, &context.y_fit, &settings, context.cv_seed).map(|(l, _)| l)
                })
                .collect()
        }
    }
}

fn resolve_pride_lambdas(
    config: &ExperimentConfig,
    context: &SeedContext,
    tau_subs: usize,
    privacy: PrivacyLevel,
) -> Result<Vec<f64>> {
    let parties = context.partition.parties();
    match config.model.lambda {
        LambdaSpec::Fixed { value } => Ok(vec![value; parties]),
        LambdaSpec::CvGlobal => {
            let settings = cv_settings(config);
            let mode = CvShareMode::Projected {
                tau_subs,
                privacy,
                sigma_mode: config.sweep.sigma_mode,
            };
            let (lambda, _) = global_cv(
                &context.x_train,
                &context.y_fit,
                &context.partition,
                mode,
                &settings,
                context.cv_seed,
            )?;
            Ok(vec![lambda; parties])
        }
        LambdaSpec::CvLocal => {
            // One release: the cross-validated designs are the same
            // full-training-set shares the final fit consumes.
            let designs = full_train_designs(config, context, tau_subs, privacy)?;
            let settings = cv_settings(config);
            designs
                .iter()
                .map(|design| {
                    local_cv(design, &context.y_fit, &settings, context.cv_seed).map(|(l, _)| l)
                })
                .collect()
        }
    }
}

/// Shares and local designs on the full training set, with the same seed
/// labels the final protocol run uses.
fn full_train_designs(
    config: &ExperimentConfig,
    context: &SeedContext,
    tau_subs: usize,
    privacy: PrivacyLevel,
) -> Result<Vec<crate::pride::LocalDesign>> {
    let partition = &context.partition;
    let parties = partition.parties();
    let blocks: Vec<DMatrix<f64>> = (0..parties)
        .map(|k| partition.block(&context.x_train, k))
        .collect();
    let thetas: Vec<f64> = blocks
        .iter()
        .map(column_range_bound)
        .collect::<Result<Vec<_>>>()?;
    let sigmas = resolve_sigmas(privacy, config.sweep.sigma_mode, &thetas)?;
    let shares: Vec<FeatureShare> = (0..parties)
        .map(|k| {
            let budget = PrivacyBudget::fixed_sigma(sigmas[k])?;
            party_share(
                &blocks[k],
                tau_subs,
                &budget,
                k,
                subseed(context.rep_seed, &format!("party-{k}-projection")),
                subseed(context.rep_seed, &format!("party-{k}-noise")),
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

fn format_lambdas(lambdas: &[f64]) -> String {
    let first = lambdas[0];
    if lambdas.iter().all(|&l| l == first) {
        format!("{first}")
    } else {
        lambdas
            .iter()
            .map(|l| format!("{l}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Summed partial predictors plus the response offset.
fn predict(
    partition: &Partition,
    blocks: &[DVector<f64>],
    x: &DMatrix<f64>,
    offset: f64,
) -> DVector<f64> {
    let mut pred = DVector::from_element(x.nrows(), offset);
    for (k, block_beta) in blocks.iter().enumerate() {
        pred += partition.block(x, k) * block_beta;
    }
    pred
}

#[allow(clippy::too_many_arguments)]
fn finish_metrics(
    config: &ExperimentConfig,
    context: &SeedContext,
    beta_std: &DVector<f64>,
    per_party_beta: &[DVector<f64>],
    predict_partition: &Partition,
    lambda: String,
    sigma_max: Option<f64>,
    theta_max: Option<f64>,
    converged: bool,
) -> Result<CellMetrics> {
    let mut metrics = CellMetrics {
        lambda,
        sigma_max,
        theta_max,
        converged: Some(converged),
        ..CellMetrics::default()
    };

    let vs_star = estimation_error(beta_std, &context.beta_star)?;
    metrics.est_err_bstar = Some(vs_star.l2);
    metrics.est_err_bstar_norm = Some(vs_star.normalized);
    metrics.corr_bstar = Some(coefficient_correlation(beta_std, &context.beta_star).unwrap_or(0.0));

    if let Some(true_beta) = &context.true_beta {
        // The fits live on the standardized scale; dividing by the training
        // standard deviations moves them back to the generator's units.
        let beta_orig = DVector::from_fn(beta_std.len(), |j, _| beta_std[j] / context.stds[j]);
        let vs_true = estimation_error(&beta_orig, true_beta)?;
        metrics.est_err_true = Some(vs_true.l2);
        metrics.est_err_true_norm = Some(vs_true.normalized);
        if let Some(labels) = &context.block_labels {
            for (label, slot) in [
                (BlockLabel::X, &mut metrics.est_err_true_x_norm),
                (BlockLabel::C, &mut metrics.est_err_true_c_norm),
            ] {
                let idx: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == label)
                    .map(|(j, _)| j)
                    .collect();
                if !idx.is_empty() {
                    let sub_hat =
                        DVector::from_iterator(idx.len(), idx.iter().map(|&j| beta_orig[j]));
                    let sub_ref =
                        DVector::from_iterator(idx.len(), idx.iter().map(|&j| true_beta[j]));
                    *slot = Some(estimation_error(&sub_hat, &sub_ref)?.normalized);
                }
            }
        }
    }

    let train_pred = predict(
        predict_partition,
        per_party_beta,
        &context.x_train,
        context.y_offset,
    );
    let test_pred = predict(
        predict_partition,
        per_party_beta,
        &context.x_test,
        context.y_offset,
    );
    match config.model.loss {
        LossKind::Squared => {
            metrics.train_mse_norm = Some(prediction_mse_normalized(
                &context.y_train_raw,
                &train_pred,
            )?);
            metrics.test_mse_norm = Some(prediction_mse_normalized(&context.y_test, &test_pred)?);
        }
        LossKind::Logistic => {
            // Mean logistic loss relative to the zero predictor (ln 2).
            let loss = |y: &DVector<f64>, pred: &DVector<f64>| {
                let total: f64 = y
                    .iter()
                    .zip(pred.iter())
                    .map(|(a, b)| {
                        let z = -a * b;
                        if z > 30.0 {
                            z
                        } else {
                            z.exp().ln_1p()
                        }
                    })
                    .sum();
                total / y.len() as f64 / 2.0f64.ln()
            };
            metrics.train_mse_norm = Some(loss(&context.y_train_raw, &train_pred));
            metrics.test_mse_norm = Some(loss(&context.y_test, &test_pred));
        }
    }
    Ok(metrics)
}

const DETAIL_HEADER: &str = "method,epsilon,delta,tau_subs,lambda,seed,sigma_max,theta_max,\
est_err_bstar,est_err_bstar_norm,corr_bstar,est_err_true,est_err_true_norm,\
est_err_true_x_norm,est_err_true_c_norm,train_mse_norm,test_mse_norm,converged,status";

fn write_outputs(
    config: &ExperimentConfig,
    cells: &[Cell],
    outcomes: &[CellOutcome],
) -> Result<RunArtifacts> {
    let out_dir = &config.run.output_dir;
    let detail_path = out_dir.join("detail.csv");
    let summary_path = out_dir.join("summary.json");
    let timings_path = out_dir.join("timings.csv");

    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    let epsilon_token = |cell: &Cell| match (cell.method, cell.epsilon) {
        (_, Some(eps)) => format!("{eps}"),
        (Method::Pride | Method::DualLoco, None) => "inf".to_string(),
        _ => String::new(),
    };
    let delta_token = |cell: &Cell| match cell.epsilon {
        Some(_) => format!("{}", config.sweep.delta),
        None => String::new(),
    };

    let mut detail = String::from(DETAIL_HEADER);
    detail.push('\n');
    for (cell, outcome) in cells.iter().zip(outcomes.iter()) {
        let m = &outcome.metrics;
        let row = [
            cell.method.name().to_string(),
            epsilon_token(cell),
            delta_token(cell),
            cell.tau_subs.map(|t| t.to_string()).unwrap_or_default(),
            m.lambda.clone(),
            cell.seed_idx.to_string(),
            fmt_opt(m.sigma_max),
            fmt_opt(m.theta_max),
            fmt_opt(m.est_err_bstar),
            fmt_opt(m.est_err_bstar_norm),
            fmt_opt(m.corr_bstar),
            fmt_opt(m.est_err_true),
            fmt_opt(m.est_err_true_norm),
            fmt_opt(m.est_err_true_x_norm),
            fmt_opt(m.est_err_true_c_norm),
            fmt_opt(m.train_mse_norm),
            fmt_opt(m.test_mse_norm),
            m.converged.map(|c| c.to_string()).unwrap_or_default(),
            outcome.status.clone(),
        ];
        detail.push_str(&row.join(","));
        detail.push('\n');
    }
    write_file(&detail_path, &detail)?;

    let summary = summarize(config, cells, outcomes);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| PrideError::Config(format!("summary serialization: {e}")))?;
    write_file(&summary_path, &json)?;

    let mut timings = String::from("method,epsilon,tau_subs,seed,wall_ms\n");
    for (cell, outcome) in cells.iter().zip(outcomes.iter()) {
        timings.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.method.name(),
            epsilon_token(cell),
            cell.tau_subs.map(|t| t.to_string()).unwrap_or_default(),
            cell.seed_idx,
            outcome.wall_ms
        ));
    }
    write_file(&timings_path, &timings)?;

    Ok(RunArtifacts {
        detail_csv: detail_path,
        summary_json: summary_path,
        timings_csv: timings_path,
    })
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(content.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryGroup {
    pub method: String,
    pub epsilon: Option<String>,
    pub tau_subs: Option<usize>,
    pub seeds: usize,
    pub failures: usize,
    pub metrics: std::collections::BTreeMap<String, MeanStderr>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

fn mean_stderr(values: &[f64]) -> Option<MeanStderr> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Some(MeanStderr { mean, stderr })
}

fn summarize(
    config: &ExperimentConfig,
    cells: &[Cell],
    outcomes: &[CellOutcome],
) -> Vec<SummaryGroup> {
    // Group by (method, epsilon token, tau_subs), preserving first-seen
    // order, which is deterministic because the cell list is.
    let mut keys: Vec<(Method, Option<String>, Option<usize>)> = Vec::new();
    for cell in cells {
        let eps = cell.epsilon.map(|e| format!("{e}")).or_else(|| {
            matches!(cell.method, Method::Pride | Method::DualLoco).then(|| "inf".to_string())
        });
        let key = (cell.method, eps, cell.tau_subs);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let _ = config;
    keys.into_iter()
        .map(|(method, eps, tau)| {
            let selected: Vec<(&Cell, &CellOutcome)> = cells
                .iter()
                .zip(outcomes.iter())
                .filter(|(c, _)| {
                    let c_eps = c.epsilon.map(|e| format!("{e}")).or_else(|| {
                        matches!(c.method, Method::Pride | Method::DualLoco)
                            .then(|| "inf".to_string())
                    });
                    c.method == method && c_eps == eps && c.tau_subs == tau
                })
                .collect();
            let ok: Vec<&CellOutcome> = selected
                .iter()
                .filter(|(_, o)| o.status == "ok")
                .map(|(_, o)| *o)
                .collect();
            let mut metrics = std::collections::BTreeMap::new();
            let mut put = |name: &str, extract: fn(&CellMetrics) -> Option<f64>| {
                let values: Vec<f64> = ok.iter().filter_map(|o| extract(&o.metrics)).collect();
                if let Some(ms) = mean_stderr(&values) {
                    metrics.insert(name.to_string(), ms);
                }
            };
            put("est_err_bstar_norm", |m| m.est_err_bstar_norm);
            put("corr_bstar", |m| m.corr_bstar);
            put("est_err_true_norm", |m| m.est_err_true_norm);
            put("est_err_true_x_norm", |m| m.est_err_true_x_norm);
            put("est_err_true_c_norm", |m| m.est_err_true_c_norm);
            put("train_mse_norm", |m| m.train_mse_norm);
            put("test_mse_norm", |m| m.test_mse_norm);
            put("sigma_max", |m| m.sigma_max);
            SummaryGroup {
                method: method.name().to_string(),
                epsilon: eps,
                tau_subs: tau,
                seeds: selected.len(),
                failures: selected.len() - ok.len(),
                metrics,
            }
        })
        .collect()
}

/// Writes a synthetic dataset to `<out>/synthetic.csv` (features plus a `y`
/// column) with its generating coefficients in `<out>/true_beta.csv` and the
/// generation settings in `<out>/generation.json`.
pub fn write_synthetic_csv(config: &SyntheticConfig, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let data = generate_confounded(config)?;
    let csv_path = out_dir.join("synthetic.csv");

    let mut content = String::new();
    content.push_str(&data.column_names.join(","));
    content.push_str(",y\n");
    for i in 0..data.n() {
        for j in 0..data.p() {
            content.push_str(&format!("{},", data.x[(i, j)]));
        }
        content.push_str(&format!("{}\n", data.y[i]));
    }
    write_file(&csv_path, &content)?;

    let mut beta = String::from("column,beta\n");
    let true_beta = data
        .true_beta
        .as_ref()
        .expect("synthetic data has true beta");
    for (name, value) in data.column_names.iter().zip(true_beta.iter()) {
        beta.push_str(&format!("{name},{value}\n"));
    }
    write_file(&out_dir.join("true_beta.csv"), &beta)?;

    let meta = serde_json::json!({
        "config": config,
        "rows": data.n(),
        "features": data.p(),
    });
    write_file(
        &out_dir.join("generation.json"),
        &serde_json::to_string_pretty(&meta).expect("json"),
    )?;
    Ok(csv_path)
}
