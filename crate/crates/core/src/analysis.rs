//! Metrics and theoretical diagnostics: estimation error, correlation,
//! normalized prediction error, effective rank, smallest non-zero singular
//! value, the approximation-error bound, the kernel-gap diagnostic and the
//! noise-as-regularizer identity check.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Raw l2 distance and the squared-relative form used in the plots.
#[derive(Debug, Clone, Copy)]
pub struct EstimationError {
    /// |beta_hat - beta_ref|_2
    pub l2: f64,
    /// |beta_hat - beta_ref|^2 / |beta_ref|^2
    pub normalized: f64,
}

pub fn estimation_error(
    beta_hat: &DVector<f64>,
    beta_ref: &DVector<f64>,
) -> Result<EstimationError> {
    if beta_hat.len() != beta_ref.len() {
        return Err(invalid("estimation error needs vectors of equal length"));
    }
    let ref_norm2 = beta_ref.norm_squared();
    if ref_norm2 == 0.0 {
        return Err(invalid("estimation error undefined for a zero reference"));
    }
    let diff2 = (beta_hat - beta_ref).norm_squared();
    Ok(EstimationError {
        l2: diff2.sqrt(),
        normalized: diff2 / ref_norm2,
    })
}

/// Pearson correlation of two coefficient vectors.
pub fn coefficient_correlation(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid(
            "correlation needs two vectors of equal length >= 2",
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(invalid("correlation undefined for zero-variance input"));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// `|y - y_hat|^2 / |y - mean(y)|^2`.
pub fn prediction_mse_normalized(y: &DVector<f64>, y_hat: &DVector<f64>) -> Result<f64> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(invalid(
            "prediction mse needs nonempty vectors of equal length",
        ));
    }
    let mean = y.sum() / y.len() as f64;
    let denom: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom == 0.0 {
        return Err(invalid("prediction mse undefined for a constant response"));
    }
    let num: f64 = y
        .iter()
        .zip(y_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(num / denom)
}

/// `tr(X^T X) / |X|_2^2`; the spectral norm comes from power iteration.
pub fn effective_rank(x: &DMatrix<f64>) -> Result<f64> {
    let trace: f64 = x.iter().map(|v| v * v).sum();
    if trace == 0.0 {
        return Err(invalid("effective rank undefined for the zero matrix"));
    }
    let top = spectral_norm_squared(x);
    Ok(trace / top)
}

/// Largest squared singular value via power iteration on X^T X (tolerance
/// 1e-6 on the Rayleigh quotient).
pub fn spectral_norm_squared(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    symmetric_top_eigenvalue(p, |v| x.transpose() * (x * v)).abs()
}

const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 10_000;

/// Dominant eigenvalue (by magnitude, signed) of a symmetric operator given
/// only matrix-vector products.
fn symmetric_top_eigenvalue(dim: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = v.norm();
    if norm == 0.0 || dim == 0 {
        return 0.0;
    }
    v /= norm;
    let mut eigenvalue = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut next = apply(&v);
        let next_norm = next.norm();
        if next_norm == 0.0 {
            return 0.0;
        }
        let rayleigh = v.dot(&next);
        next /= next_norm;
        if (rayleigh - eigenvalue).abs() <= POWER_TOL * rayleigh.abs().max(1.0) {
            return rayleigh;
        }
        eigenvalue = rayleigh;
        v = next;
    }
    eigenvalue
}

/// Smallest non-zero singular value, with "non-zero" meaning above
/// `max(n, p) * sigma_max * 1e-12`.
pub fn d_min(x: &DMatrix<f64>) -> Result<f64> {
    if x.iter().all(|&v| v == 0.0) {
        return Err(invalid("d_min undefined for the zero matrix"));
    }
    let svd = x.clone().svd(false, false);
    let values = &svd.singular_values;
    let sigma_max = values.iter().cloned().fold(0.0, f64::max);
    let threshold = x.nrows().max(x.ncols()) as f64 * sigma_max * 1e-12;
    values
        .iter()
        .cloned()
        .filter(|&s| s > threshold)
        .fold(None, |acc: Option<f64>, s| {
            Some(acc.map_or(s, |a| a.min(s)))
        })
        .ok_or_else(|| invalid("no singular value above the zero threshold"))
}

/// Numerical rank under the same threshold as [`d_min`].
pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let svd = x.clone().svd(false, false);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let threshold = x.nrows().max(x.ncols()) as f64 * sigma_max * 1e-12;
    svd.singular_values
        .iter()
        .filter(|&&s| s > threshold)
        .count()
}

/// `rho = C sqrt(r ln(2 r / xi) / tau_K)`.
pub fn rho(r: usize, tau_k: usize, c_const: f64, xi: f64) -> Result<f64> {
    if r == 0 || tau_k == 0 {
        return Err(invalid("rho needs r >= 1 and tau_K >= 1"));
    }
    if !c_const.is_finite() || c_const <= 0.0 {
        return Err(invalid(format!("C must be finite and > 0, got {c_const}")));
    }
    if xi.is_nan() || xi <= 0.0 || xi >= 1.0 {
        return Err(invalid(format!("xi must lie in (0, 1), got {xi}")));
    }
    let r = r as f64;
    Ok(c_const * (r * (2.0 * r / xi).ln() / tau_k as f64).sqrt())
}

/// Inputs of the approximation-error bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundInputs {
    /// Rank of the full design.
    pub r: usize,
    /// Total random-feature dimension (K - 1) * tau_subs.
    pub tau_k: usize,
    /// Largest per-party noise standard deviation.
    pub sigma: f64,
    /// Smallest non-zero singular value of the full design.
    pub d_min: f64,
    pub beta_star_norm: f64,
    pub parties: usize,
    /// Unspecified absolute constant, default 1.
    pub c_const: f64,
    /// Failure-probability parameter, default 0.05.
    pub xi: f64,
}

impl BoundInputs {
    pub fn new(
        r: usize,
        tau_k: usize,
        sigma: f64,
        d_min: f64,
        beta_star_norm: f64,
        parties: usize,
    ) -> Self {
        Self {
            r,
            tau_k,
            sigma,
            d_min,
            beta_star_norm,
            parties,
            c_const: 1.0,
            xi: 0.05,
        }
    }
}

/// The bound splits into the projection term (i) and the perturbation term
/// (ii); it is only defined for rho < 1/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theorem2Bound {
    /// rho >= 1/2: the bound carries no information.
    Vacuous { rho: f64 },
    Bounded {
        rho: f64,
        term_i: f64,
        term_ii: f64,
        total: f64,
    },
}

/// Evaluates
/// `sqrt(K) rho/(1-2rho) |b*| + sqrt(K) rho/(1-2rho) (s/d)(2 + (s tau_K + s tau_K^2)/d) |b*|`.
pub fn theorem2_bound(inputs: &BoundInputs) -> Result<Theorem2Bound> {
    if inputs.sigma < 0.0 || !inputs.sigma.is_finite() {
        return Err(invalid("sigma must be finite and >= 0"));
    }
    if !inputs.d_min.is_finite() || inputs.d_min <= 0.0 {
        return Err(invalid("d_min must be finite and > 0"));
    }
    if inputs.beta_star_norm < 0.0 || inputs.parties == 0 {
        return Err(invalid("bound needs beta_star_norm >= 0 and parties >= 1"));
    }
    let rho = rho(inputs.r, inputs.tau_k, inputs.c_const, inputs.xi)?;
    if rho >= 0.5 {
        return Ok(Theorem2Bound::Vacuous { rho });
    }
    let common = (inputs.parties as f64).sqrt() * rho / (1.0 - 2.0 * rho) * inputs.beta_star_norm;
    let tau_k = inputs.tau_k as f64;
    let noise_amp = inputs.sigma / inputs.d_min
        * (2.0 + (inputs.sigma * tau_k + inputs.sigma * tau_k * tau_k) / inputs.d_min);
    let term_i = common;
    let term_ii = common * noise_amp;
    Ok(Theorem2Bound::Bounded {
        rho,
        term_i,
        term_ii,
        total: term_i + term_ii,
    })
}

/// Spectral norm of `X X^T - (X Theta + E)(X Theta + E)^T` by power
/// iteration, where `x_theta = X Theta` and `e = E` are passed already
/// applied.
pub fn kernel_gap(x: &DMatrix<f64>, x_theta: &DMatrix<f64>, e: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if x_theta.nrows() != n || e.nrows() != n || x_theta.ncols() != e.ncols() {
        return Err(invalid("kernel gap dimension mismatch"));
    }
    let perturbed = x_theta + e;
    let value = symmetric_top_eigenvalue(n, |v| {
        x * (x.transpose() * v) - &perturbed * (perturbed.transpose() * v)
    });
    Ok(value.abs())
}

/// Monte-Carlo check of the noise-as-regularizer identity: the expectation
/// of `|y - (X + W) b|^2` over noise on the random-feature columns equals
/// `|y - X b|^2 + n sigma^2 sum_{random coords} b_l^2`.
///
/// Returns `(mc_mean, analytic)`. Columns `0..num_raw` are raw features and
/// receive no noise.
pub fn noise_regularizer_check(
    x_design: &DMatrix<f64>,
    y: &DVector<f64>,
    b: &DVector<f64>,
    sigma: f64,
    num_raw: usize,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = x_design.nrows();
    let q = x_design.ncols();
    if y.len() != n || b.len() != q {
        return Err(invalid("noise regularizer check dimension mismatch"));
    }
    if num_raw > q {
        return Err(invalid("num_raw exceeds the number of columns"));
    }
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(invalid("sigma must be finite and >= 0"));
    }
    if n_draws == 0 {
        return Err(invalid("need at least one draw"));
    }

    let base = y - x_design * b;
    let b_random = b.rows(num_raw, q - num_raw);
    let analytic = base.norm_squared() + sigma * sigma * n as f64 * b_random.norm_squared();

    // Noise multiplied by zero coefficients contributes nothing; returning
    // early keeps these cases exact rather than exact-up-to-summation-order.
    if sigma == 0.0 || num_raw == q || b_random.norm_squared() == 0.0 {
        return Ok((base.norm_squared(), base.norm_squared()));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_random = q - num_raw;
    let mut total = 0.0;
    for _ in 0..n_draws {
        let mut draw = 0.0;
        for i in 0..n {
            // Row of noise restricted to the random-feature coordinates.
            let mut shift = 0.0;
            for l in 0..n_random {
                let w: f64 = rng.sample(StandardNormal);
                shift += sigma * w * b_random[l];
            }
            let r = base[i] - shift;
            draw += r * r;
        }
        total += draw;
    }
    Ok((total / n_draws as f64, analytic))
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("spearman needs two slices of equal length >= 2"));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    coefficient_correlation(&DVector::from_vec(ra), &DVector::from_vec(rb))
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::SrhtProjection;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn estimation_error_basics() {
        let r = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let e = estimation_error(&r, &r).unwrap();
        assert_eq!(e.l2, 0.0);
        assert_eq!(e.normalized, 0.0);

        let zero = DVector::zeros(3);
        let e = estimation_error(&zero, &r).unwrap();
        assert_abs_diff_eq!(e.normalized, 1.0, epsilon = 1e-15);

        let e = estimation_error(&(&r * 2.0), &r).unwrap();
        assert_abs_diff_eq!(e.normalized, 1.0, epsilon = 1e-15);

        assert!(estimation_error(&r, &zero).is_err());
    }

    #[test]
    fn correlation_basics() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(
            coefficient_correlation(&a, &a).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            coefficient_correlation(&a, &(-&a)).unwrap(),
            -1.0,
            epsilon = 1e-12
        );
        // Orthogonal mean-zero pair.
        let u = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        let v = DVector::from_vec(vec![1.0, -1.0, 1.0, -1.0]);
        assert_abs_diff_eq!(
            coefficient_correlation(&u, &v).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert!(coefficient_correlation(&DVector::from_element(4, 2.0), &a).is_err());
    }

    #[test]
    fn prediction_mse_basics() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(prediction_mse_normalized(&y, &y).unwrap(), 0.0);
        let mean = DVector::from_element(3, 2.0);
        assert_abs_diff_eq!(
            prediction_mse_normalized(&y, &mean).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let worse = DVector::from_vec(vec![4.0, 2.0, 0.0]);
        assert!(prediction_mse_normalized(&y, &worse).unwrap() > 1.0);
        assert!(prediction_mse_normalized(&DVector::from_element(3, 1.0), &y).is_err());
    }

    #[test]
    fn effective_rank_and_d_min_examples() {
        let eye = DMatrix::<f64>::identity(6, 6);
        assert_abs_diff_eq!(effective_rank(&eye).unwrap(), 6.0, epsilon = 1e-4);
        assert_abs_diff_eq!(d_min(&eye).unwrap(), 1.0, epsilon = 1e-12);

        let u = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 0.0, 4.0]);
        let rank1 = &u * v.transpose();
        assert_abs_diff_eq!(effective_rank(&rank1).unwrap(), 1.0, epsilon = 1e-4);
        // d_min of u v^T is |u| |v|.
        assert_abs_diff_eq!(d_min(&rank1).unwrap(), 15.0, epsilon = 1e-9);
        assert_eq!(numerical_rank(&rank1), 1);

        assert!(effective_rank(&DMatrix::<f64>::zeros(3, 3)).is_err());
        assert!(d_min(&DMatrix::<f64>::zeros(3, 3)).is_err());
    }

    #[test]
    fn rho_known_value() {
        // r = 100, tau_K = 10000, C = 1, xi = 0.05.
        let value = rho(100, 10_000, 1.0, 0.05).unwrap();
        assert!((value - 0.2880).abs() < 5e-4, "rho {value}");
        assert!(rho(0, 10, 1.0, 0.05).is_err());
        assert!(rho(10, 10, 1.0, 1.5).is_err());
    }

    #[test]
    fn bound_sigma_zero_specialization() {
        let inputs = BoundInputs::new(100, 10_000, 0.0, 1.0, 2.0, 4);
        match theorem2_bound(&inputs).unwrap() {
            Theorem2Bound::Bounded {
                rho,
                term_i,
                term_ii,
                total,
            } => {
                assert_eq!(term_ii, 0.0);
                assert_eq!(total, term_i);
                let expected = 2.0 * rho / (1.0 - 2.0 * rho) * 2.0;
                assert_abs_diff_eq!(term_i, expected, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bound_monotone_in_sigma_and_tau_k() {
        let mut prev = 0.0;
        for sigma in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let inputs = BoundInputs::new(100, 10_000, sigma, 1.0, 1.0, 2);
            match theorem2_bound(&inputs).unwrap() {
                Theorem2Bound::Bounded { term_ii, .. } => {
                    assert!(term_ii >= prev);
                    prev = term_ii;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let mut prev = 0.0;
        for tau_k in [5_000usize, 10_000, 20_000, 40_000] {
            let inputs = BoundInputs::new(100, tau_k, 1.0, 1.0, 1.0, 2);
            match theorem2_bound(&inputs).unwrap() {
                Theorem2Bound::Bounded { term_ii, .. } => {
                    assert!(term_ii >= prev, "term_ii not monotone at tau_k {tau_k}");
                    prev = term_ii;
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn bound_vacuous_path() {
        let inputs = BoundInputs::new(100, 100, 1.0, 1.0, 1.0, 2);
        assert!(matches!(
            theorem2_bound(&inputs).unwrap(),
            Theorem2Bound::Vacuous { .. }
        ));
    }

    #[test]
    fn kernel_gap_orthonormal_is_zero() {
        // A full-sampling SRHT is orthonormal, so X Theta Theta^T X^T = X X^T.
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = DMatrix::from_fn(10, 16, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = SrhtProjection::new(16, 16, 5).unwrap();
        let x_theta = theta.apply(&x).unwrap();
        let e = DMatrix::zeros(10, 16);
        let gap = kernel_gap(&x, &x_theta, &e).unwrap();
        assert!(gap <= 1e-8, "gap {gap}");
    }

    #[test]
    fn kernel_gap_grows_with_noise() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let x = DMatrix::from_fn(20, 32, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = SrhtProjection::new(32, 8, 3).unwrap();
        let x_theta = theta.apply(&x).unwrap();
        let mut prev = -1.0;
        for sigma in [0.0, 0.5, 2.0] {
            let e = DMatrix::from_fn(20, 8, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
            let gap = kernel_gap(&x, &x_theta, &e).unwrap();
            assert!(gap > prev, "gap {gap} at sigma {sigma}");
            prev = gap;
        }
        assert!(kernel_gap(&x, &x_theta, &DMatrix::zeros(20, 9)).is_err());
    }

    #[test]
    fn noise_regularizer_trivial_cases() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let x = DMatrix::from_fn(10, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(10, |_, _| rng.sample::<f64, _>(StandardNormal));

        // b = 0: both sides are exactly |y|^2.
        let b = DVector::zeros(6);
        let (mc, analytic) = noise_regularizer_check(&x, &y, &b, 1.0, 3, 100, 1).unwrap();
        assert_eq!(mc, y.norm_squared());
        assert_eq!(analytic, y.norm_squared());

        // sigma = 0: equality for any b.
        let b = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (mc, analytic) = noise_regularizer_check(&x, &y, &b, 0.0, 3, 100, 1).unwrap();
        assert_eq!(mc, analytic);
    }

    #[test]
    fn spearman_basics() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let up = [0.1, 0.4, 0.5, 0.9];
        let down = [4.0, 3.0, 2.0, 1.0];
        assert_abs_diff_eq!(spearman(&a, &up).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&a, &down).unwrap(), -1.0, epsilon = 1e-12);
        let tied = [1.0, 1.0, 2.0, 3.0];
        assert!(spearman(&a, &tied).unwrap() > 0.8);
    }

    proptest! {
        #[test]
        fn metrics_invariant_to_simultaneous_permutation(seed in 0u64..100) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let n = 12;
            let a = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let pa = DVector::from_fn(n, |i, _| a[perm[i]]);
            let pb = DVector::from_fn(n, |i, _| b[perm[i]]);

            let e1 = estimation_error(&a, &b).unwrap();
            let e2 = estimation_error(&pa, &pb).unwrap();
            prop_assert!((e1.l2 - e2.l2).abs() < 1e-12);
            prop_assert!((e1.normalized - e2.normalized).abs() < 1e-12);

            let c1 = coefficient_correlation(&a, &b).unwrap();
            let c2 = coefficient_correlation(&pa, &pb).unwrap();
            prop_assert!((c1 - c2).abs() < 1e-12);
        }
    }
}
