//! Cross-module integration checks of the sharing protocol and diagnostics.

mod common;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use pride_core::analysis::kernel_gap;
use pride_core::baselines::ridge_closed_form;
use pride_core::data::{apply_standardization, standardize, train_test_split};
use pride_core::dual::{LossKind, SolverSettings};
use pride_core::pride::{
    assemble_local_design, local_coefficients, party_share, run_pride, Partition, PrideConfig,
    PrivacyLevel, SigmaMode,
};
use pride_core::privacy::PrivacyBudget;
use pride_core::rng::{subseed, substream};
use pride_core::synth::{generate_confounded, SyntheticConfig};

fn small_synthetic(seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        grid_side: 10,
        n: 150,
        n_confound_pairs: 10,
        n_signal_pcs: 10,
        seed,
        ..SyntheticConfig::default()
    }
}

/// On low-effective-rank data with sigma = 0, the gap between the exact
/// kernel and the projected kernel shrinks (seed-averaged) as the projection
/// dimension grows.
#[test]
fn kernel_gap_decreases_with_projection_dimension() {
    let tau_grid = [3usize, 5, 10]; // 0.05, 0.1, 0.2 of a 50-column block
    let seeds = 20u64;
    let mut means = vec![0.0; tau_grid.len()];
    for seed in 0..seeds {
        let data = generate_confounded(&small_synthetic(subseed(seed, "kernel-gap"))).unwrap();
        let (x, _, _) = standardize(&data.x).unwrap();
        let partition = Partition::contiguous(100, 2).unwrap();
        let blocks: Vec<DMatrix<f64>> = (0..2).map(|k| partition.block(&x, k)).collect();
        for (i, &tau_subs) in tau_grid.iter().enumerate() {
            // Party 0's view: raw block 0, sketched block 1, no noise.
            let budget = PrivacyBudget::fixed_sigma(0.0).unwrap();
            let share =
                party_share(&blocks[1], tau_subs, &budget, 1, subseed(seed, "proj"), 0).unwrap();
            let design = assemble_local_design(0, &blocks[0], &[share]).unwrap();
            let zero_noise = DMatrix::zeros(x.nrows(), design.matrix.ncols());
            let gap = kernel_gap(&x, &design.matrix, &zero_noise).unwrap();
            means[i] += gap / seeds as f64;
        }
    }
    assert!(
        means[0] > means[1] && means[1] > means[2],
        "kernel gap should shrink with tau_subs: {means:?}"
    );
}

/// The kernel gap grows with the noise level at a fixed projection
/// dimension.
#[test]
fn kernel_gap_grows_with_sigma() {
    let data = generate_confounded(&small_synthetic(3)).unwrap();
    let (x, _, _) = standardize(&data.x).unwrap();
    let partition = Partition::contiguous(100, 2).unwrap();
    let blocks: Vec<DMatrix<f64>> = (0..2).map(|k| partition.block(&x, k)).collect();
    let mut previous = -1.0;
    for sigma in [0.0, 1.0, 4.0] {
        let budget = PrivacyBudget::fixed_sigma(sigma).unwrap();
        let share = party_share(&blocks[1], 10, &budget, 1, 5, 6).unwrap();
        let with_noise = assemble_local_design(0, &blocks[0], &[share]).unwrap();
        let zero_budget = PrivacyBudget::fixed_sigma(0.0).unwrap();
        let clean_share = party_share(&blocks[1], 10, &zero_budget, 1, 5, 6).unwrap();
        let clean = assemble_local_design(0, &blocks[0], &[clean_share]).unwrap();
        let noise = &with_noise.matrix - &clean.matrix;
        let gap = kernel_gap(&x, &clean.matrix, &noise).unwrap();
        assert!(gap > previous, "gap {gap} at sigma {sigma}");
        previous = gap;
    }
}

/// Degenerate single-party run: global prediction reduces to ordinary ridge
/// prediction, including on held-out rows.
#[test]
fn single_party_prediction_matches_ridge_oracle() {
    let data = generate_confounded(&small_synthetic(8)).unwrap();
    let (train, test) = train_test_split(&data, 0.8, 3).unwrap();
    let (x, means, stds) = standardize(&train.x).unwrap();
    let x_test = apply_standardization(&test.x, &means, &stds).unwrap();
    let y_mean = train.y.sum() / train.y.len() as f64;
    let y: DVector<f64> = train.y.map(|v| v - y_mean);

    let partition = Partition::contiguous(100, 1).unwrap();
    let config = PrideConfig {
        tau_subs: 100,
        lambda: 0.2,
        privacy: PrivacyLevel::NoPrivacy,
        sigma_mode: SigmaMode::PerParty,
        loss: LossKind::Squared,
        solver: SolverSettings::default(),
        master_seed: 4,
    };
    let result = run_pride(&x, &y, &partition, &config).unwrap();
    let oracle = ridge_closed_form(&x, &y, 0.2).unwrap();

    let pride_pred = pride_core::pride::predict_global(&result, &x_test, &partition).unwrap();
    let oracle_pred = &x_test * &oracle;
    let mse = |pred: &DVector<f64>| {
        (0..test.y.len())
            .map(|i| {
                let d = test.y[i] - (pred[i] + y_mean);
                d * d
            })
            .sum::<f64>()
            / test.y.len() as f64
    };
    assert!(
        (mse(&pride_pred) - mse(&oracle_pred)).abs() <= 1e-6 * mse(&oracle_pred),
        "test MSE mismatch: {} vs {}",
        mse(&pride_pred),
        mse(&oracle_pred)
    );
}

/// The optional local-prediction path: with one party and no noise it
/// coincides with the global rule; with several parties it consumes fresh
/// sketches of the test rows drawn from the same projections.
#[test]
fn local_prediction_path() {
    let data = generate_confounded(&small_synthetic(9)).unwrap();
    let (train, test) = train_test_split(&data, 0.8, 5).unwrap();
    let (x, means, stds) = standardize(&train.x).unwrap();
    let x_test = apply_standardization(&test.x, &means, &stds).unwrap();
    let y_mean = train.y.sum() / train.y.len() as f64;
    let y: DVector<f64> = train.y.map(|v| v - y_mean);

    let partition = Partition::contiguous(100, 2).unwrap();
    let lambda = 0.2;
    let tau_subs = 10;
    let master_seed = 12;

    // Training-time exchange.
    let blocks: Vec<DMatrix<f64>> = (0..2).map(|k| partition.block(&x, k)).collect();
    let budget = PrivacyBudget::fixed_sigma(0.5).unwrap();
    let shares: Vec<_> = (0..2)
        .map(|k| {
            party_share(
                &blocks[k],
                tau_subs,
                &budget,
                k,
                subseed(master_seed, &format!("party-{k}-projection")),
                subseed(master_seed, &format!("party-{k}-noise")),
            )
            .unwrap()
        })
        .collect();

    // Party 0 solves locally and keeps its full local coefficient vector.
    let received: Vec<_> = shares
        .iter()
        .filter(|s| s.origin_party != 0)
        .cloned()
        .collect();
    let design = assemble_local_design(0, &blocks[0], &received).unwrap();
    let state = pride_core::dual::sdca_solve(
        &design.matrix,
        &y,
        lambda,
        LossKind::Squared,
        SolverSettings::default(),
        subseed(master_seed, "party-0-sdca-permutation"),
    )
    .unwrap();
    let full_coef = local_coefficients(&design, &state.alpha, lambda).unwrap();

    // Test-time: fresh sketches of the test rows from the same projection
    // (same seed) with fresh noise at the same sigma.
    let test_blocks: Vec<DMatrix<f64>> = (0..2).map(|k| partition.block(&x_test, k)).collect();
    let test_share = party_share(
        &test_blocks[1],
        tau_subs,
        &budget,
        1,
        subseed(master_seed, "party-1-projection"),
        subseed(master_seed, "party-1-test-noise"),
    )
    .unwrap();
    let test_design = assemble_local_design(0, &test_blocks[0], &[test_share]).unwrap();
    let local_pred = &test_design.matrix * &full_coef;

    // Sanity: the local path predicts, and beats the mean-only baseline.
    let mse: f64 = (0..test.y.len())
        .map(|i| {
            let d = test.y[i] - (local_pred[i] + y_mean);
            d * d
        })
        .sum::<f64>()
        / test.y.len() as f64;
    let baseline: f64 = {
        let m = test.y.sum() / test.y.len() as f64;
        test.y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / test.y.len() as f64
    };
    assert!(
        mse < baseline,
        "local prediction mse {mse} vs baseline {baseline}"
    );
}

/// Projection seeds, noise seeds and solver permutations derive from
/// distinct labeled streams, so replaying a run piecewise reproduces it.
#[test]
fn piecewise_replay_matches_run() {
    let mut rng = substream(77, "replay");
    let raw = DMatrix::from_fn(80, 20, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let (x, _, _) = standardize(&raw).unwrap();
    let y = DVector::from_fn(80, |_, _| rng.random::<f64>() - 0.5);
    let partition = Partition::contiguous(20, 4).unwrap();
    let config = PrideConfig {
        tau_subs: 3,
        lambda: 0.15,
        privacy: PrivacyLevel::FixedSigma(0.7),
        sigma_mode: SigmaMode::PerParty,
        loss: LossKind::Squared,
        solver: SolverSettings::default(),
        master_seed: 31,
    };
    let run = run_pride(&x, &y, &partition, &config).unwrap();

    for k in 0..4 {
        assert_eq!(
            run.diagnostics.projection_seeds[k],
            subseed(31, &format!("party-{k}-projection"))
        );
        assert_eq!(
            run.diagnostics.noise_seeds[k],
            subseed(31, &format!("party-{k}-noise"))
        );
    }
    // Replaying party 2's share from the recorded seeds gives the same
    // payload it contributed to every other design.
    let block = partition.block(&x, 2);
    let budget = PrivacyBudget::fixed_sigma(run.diagnostics.sigmas[2]).unwrap();
    let replayed = party_share(
        &block,
        3,
        &budget,
        2,
        run.diagnostics.projection_seeds[2],
        run.diagnostics.noise_seeds[2],
    )
    .unwrap();
    let again = party_share(
        &block,
        3,
        &budget,
        2,
        run.diagnostics.projection_seeds[2],
        run.diagnostics.noise_seeds[2],
    )
    .unwrap();
    assert_eq!(replayed.payload, again.payload);
}

/// The default confounded design is nominally low rank: seed-averaged
/// effective rank of the standardized training matrix sits well below the
/// ambient dimension.
#[test]
fn default_synthetic_has_low_effective_rank() {
    let seeds = 10u64;
    let mut total = 0.0;
    for seed in 0..seeds {
        let config = SyntheticConfig {
            seed: subseed(seed, "effective-rank"),
            ..SyntheticConfig::default()
        };
        let data = generate_confounded(&config).unwrap();
        let (train, _) = train_test_split(&data, 0.8, seed).unwrap();
        let (x, _, _) = standardize(&train.x).unwrap();
        assert_eq!(x.nrows(), 800);
        total += pride_core::analysis::effective_rank(&x).unwrap();
    }
    let mean = total / seeds as f64;
    assert!(
        (1.3..=4.0).contains(&mean),
        "mean effective rank {mean} outside [1.3, 4.0]"
    );
}

/// On the confounded synthetic data, the per-party independent fits pay at
/// least 1.5x the single-machine block-X estimation error, seed-averaged.
#[test]
fn confounding_gap_against_single_machine() {
    use pride_core::baselines::{semi_naive_bayes, single_machine};

    let seeds = 10u64;
    let lambda = 1.0;
    let mut nb_err = 0.0;
    let mut sm_err = 0.0;
    for seed in 0..seeds {
        let config = SyntheticConfig {
            seed: subseed(seed, "confounding-gap"),
            ..SyntheticConfig::default()
        };
        let data = generate_confounded(&config).unwrap();
        let (train, _) = train_test_split(&data, 0.8, seed).unwrap();
        let (x, _, stds) = standardize(&train.x).unwrap();
        let y_mean = train.y.sum() / train.y.len() as f64;
        let y: DVector<f64> = train.y.map(|v| v - y_mean);
        let partition = Partition::contiguous(400, 2).unwrap();
        let true_beta = train.true_beta.as_ref().unwrap();

        let block_x_error = |beta_std: &DVector<f64>| {
            let mut diff2 = 0.0;
            let mut ref2 = 0.0;
            for j in 0..200 {
                let original = beta_std[j] / stds[j];
                diff2 += (original - true_beta[j]) * (original - true_beta[j]);
                ref2 += true_beta[j] * true_beta[j];
            }
            diff2 / ref2
        };

        let nb = semi_naive_bayes(
            &x,
            &y,
            &partition,
            lambda,
            LossKind::Squared,
            SolverSettings::default(),
            seed,
        )
        .unwrap();
        let sm = single_machine(&x, &y, lambda, LossKind::Squared, SolverSettings::default(), seed)
            .unwrap();
        nb_err += block_x_error(&nb.beta) / seeds as f64;
        sm_err += block_x_error(&sm.beta) / seeds as f64;
    }
    let ratio = nb_err / sm_err;
    assert!(
        ratio >= 1.5,
        "block-X error ratio NB/single-machine {ratio:.3} < 1.5 (nb {nb_err:.4}, sm {sm_err:.4})"
    );
}

/// Published projection-dimension row: a 2592-column block sketched at
/// tau_subs = 130 pads to 4096 and produces (n, 130) payloads.
#[test]
fn wide_block_share_shape() {
    let mut rng = substream(6, "wide-share");
    let block = DMatrix::from_fn(4, 2592, |_, _| rng.random::<f64>() - 0.5);
    let budget = PrivacyBudget::fixed_sigma(0.0).unwrap();
    let share = party_share(&block, 130, &budget, 0, 9, 10).unwrap();
    assert_eq!(share.payload.nrows(), 4);
    assert_eq!(share.payload.ncols(), 130);
}
