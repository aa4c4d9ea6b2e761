//! Confounded synthetic data: two independent Gaussian-random-field feature
//! blocks on half-grids, cross-block confounding injected by adding selected
//! confounder columns onto selected observed columns, a signal aligned with
//! the top principal components of the design (variance-share weighted), and
//! response noise scaled to a target signal-to-noise ratio.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{BlockLabel, DataSet};
use crate::error::{invalid, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Side of the square grid carrying the features; each of the two blocks
    /// occupies half of it (`grid_side` x `grid_side / 2`), so the total
    /// feature count is `grid_side^2`. Must be even.
    pub grid_side: usize,
    /// Number of observations drawn from the field.
    pub n: usize,
    /// Number of (observed column, confounder column) pairs to couple.
    pub n_confound_pairs: usize,
    /// The signal aligns with this many top right singular vectors of the
    /// column-centered design, each weighted by its share of the leading
    /// squared singular value.
    pub n_signal_pcs: usize,
    /// Var(signal) / Var(noise) of the generated response.
    pub target_snr: f64,
    /// Squared-exponential kernel length scale, in grid units.
    pub grf_length_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            grid_side: 20,
            n: 1000,
            n_confound_pairs: 20,
            n_signal_pcs: 20,
            target_snr: 5.0,
            grf_length_scale: 8.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn features_per_block(&self) -> usize {
        self.grid_side * self.grid_side / 2
    }

    pub fn total_features(&self) -> usize {
        self.grid_side * self.grid_side
    }

    fn validate(&self) -> Result<()> {
        if self.grid_side < 2 || !self.grid_side.is_multiple_of(2) {
            return Err(invalid(format!(
                "grid_side must be an even number >= 2, got {}",
                self.grid_side
            )));
        }
        if self.n < 2 {
            return Err(invalid("synthetic data needs n >= 2"));
        }
        if !self.grf_length_scale.is_finite() || self.grf_length_scale <= 0.0 {
            return Err(invalid(format!(
                "grf_length_scale must be finite and > 0, got {}",
                self.grf_length_scale
            )));
        }
        if self.n_confound_pairs > self.features_per_block() {
            return Err(invalid(format!(
                "n_confound_pairs {} exceeds block size {}",
                self.n_confound_pairs,
                self.features_per_block()
            )));
        }
        if self.n_signal_pcs == 0 || self.n_signal_pcs > self.total_features().min(self.n) {
            return Err(invalid(format!(
                "n_signal_pcs must lie in [1, min(n, p)], got {}",
                self.n_signal_pcs
            )));
        }
        if !self.target_snr.is_finite() || self.target_snr <= 0.0 {
            return Err(invalid(format!(
                "target_snr must be finite and > 0, got {}",
                self.target_snr
            )));
        }
        Ok(())
    }
}

/// Draws the confounded dataset. The observed block columns come first
/// (labelled X), the confounder block columns second (labelled C), and
/// `true_beta` records the generating coefficients.
pub fn generate_confounded(config: &SyntheticConfig) -> Result<DataSet> {
    config.validate()?;
    let per_block = config.features_per_block();
    let p = 2 * per_block;
    let n = config.n;

    // One covariance factor serves both blocks: same half-grid geometry.
    let chol = grf_cholesky(
        config.grid_side,
        config.grid_side / 2,
        config.grf_length_scale,
    )?;
    let mut x_block = sample_grf(n, &chol, substream(config.seed, "synthetic-grf-x"));
    let c_block = sample_grf(n, &chol, substream(config.seed, "synthetic-grf-c"));

    // Confounding: add chosen confounder columns onto chosen observed
    // columns, both index sets drawn without replacement.
    let mut pair_rng = substream(config.seed, "synthetic-confound-pairs");
    let mut observed_idx =
        rand::seq::index::sample(&mut pair_rng, per_block, config.n_confound_pairs).into_vec();
    let mut confounder_idx =
        rand::seq::index::sample(&mut pair_rng, per_block, config.n_confound_pairs).into_vec();
    observed_idx.sort_unstable();
    confounder_idx.sort_unstable();
    for (&ix, &jc) in observed_idx.iter().zip(confounder_idx.iter()) {
        for row in 0..n {
            x_block[(row, ix)] += c_block[(row, jc)];
        }
    }

    let mut design = DMatrix::zeros(n, p);
    design.view_mut((0, 0), (n, per_block)).copy_from(&x_block);
    design
        .view_mut((0, per_block), (n, per_block))
        .copy_from(&c_block);

    let beta = signal_coefficients(&design, config.n_signal_pcs)?;

    let signal = &design * &beta;
    let signal_mean = signal.sum() / n as f64;
    let signal_var = signal
        .iter()
        .map(|v| (v - signal_mean) * (v - signal_mean))
        .sum::<f64>()
        / n as f64;
    let noise_sd = (signal_var / config.target_snr).sqrt();
    let mut noise_rng = substream(config.seed, "synthetic-noise");
    let y = DVector::from_fn(n, |i, _| {
        let w: f64 = noise_rng.sample(StandardNormal);
        signal[i] + noise_sd * w
    });

    let mut names: Vec<String> = (0..per_block).map(|j| format!("x_{j:03}")).collect();
    names.extend((0..per_block).map(|j| format!("c_{j:03}")));
    let mut labels = vec![BlockLabel::X; per_block];
    labels.extend(vec![BlockLabel::C; per_block]);

    let mut data = DataSet::new(design, y);
    data.column_names = names;
    data.true_beta = Some(beta);
    data.block_labels = Some(labels);
    Ok(data)
}

/// Cholesky factor of the squared-exponential kernel over the Euclidean
/// distances of a `rows x cols` grid, with a small diagonal jitter.
fn grf_cholesky(
    rows: usize,
    cols: usize,
    length_scale: f64,
) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let dim = rows * cols;
    let coord = |idx: usize| -> (f64, f64) { ((idx / cols) as f64, (idx % cols) as f64) };
    let mut kernel = DMatrix::zeros(dim, dim);
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    for a in 0..dim {
        let (ar, ac) = coord(a);
        for b in a..dim {
            let (br, bc) = coord(b);
            let d2 = (ar - br) * (ar - br) + (ac - bc) * (ac - bc);
            let k = (-d2 * inv).exp();
            kernel[(a, b)] = k;
            kernel[(b, a)] = k;
        }
    }
    // The squared-exponential kernel is numerically rank-deficient at this
    // length scale; the jitter keeps the factorization positive definite.
    let mut jitter = 1e-10;
    loop {
        let mut k = kernel.clone();
        for i in 0..dim {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok(chol);
        }
        jitter *= 10.0;
        if jitter > 1e-4 {
            return Err(invalid(
                "grf kernel is not positive definite even with jitter",
            ));
        }
    }
}

fn sample_grf(n: usize, chol: &Cholesky<f64, nalgebra::Dyn>, mut rng: impl Rng) -> DMatrix<f64> {
    let dim = chol.l().nrows();
    let white = DMatrix::from_fn(n, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    white * chol.l().transpose()
}

/// Weighted sum of the top right singular vectors of the column-centered
/// design: each vector is sign-normalized (largest-magnitude entry positive)
/// and weighted by its variance share (d_j / d_1)^2, so the signal
/// concentrates on the directions the data actually expresses.
fn signal_coefficients(design: &DMatrix<f64>, n_pcs: usize) -> Result<DVector<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    let mut centered = design.clone();
    for j in 0..p {
        let mean = centered.column(j).sum() / n as f64;
        for i in 0..n {
            centered[(i, j)] -= mean;
        }
    }
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| invalid("svd failed to produce singular vectors"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let top = svd.singular_values[order[0]];
    if top <= 0.0 {
        return Err(invalid("design has no variance to align the signal with"));
    }
    let mut beta = DVector::zeros(p);
    for &rank in order.iter().take(n_pcs) {
        let row = v_t.row(rank);
        let mut dominant = 0;
        for j in 1..p {
            if row[j].abs() > row[dominant].abs() {
                dominant = j;
            }
        }
        let flip = if row[dominant] < 0.0 { -1.0 } else { 1.0 };
        let weight = (svd.singular_values[rank] / top).powi(2);
        for j in 0..p {
            beta[j] += flip * weight * row[j];
        }
    }
    Ok(beta)
}
