//! Fast Walsh-Hadamard transform and the subsampled randomized Hadamard
//! transform (SRHT) used to sketch feature blocks before sharing.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{invalid, Result};

/// Orthonormal Walsh-Hadamard transform of a vector whose length is a power
/// of two. The transform matrix has entries of magnitude 1/sqrt(len), so
/// applying it twice returns the input.
pub fn fwht_in_place(values: &mut [f64]) -> Result<()> {
    let len = values.len();
    if len == 0 || !len.is_power_of_two() {
        return Err(invalid(format!(
            "fwht length must be a power of two, got {len}"
        )));
    }
    fwht_unnormalized(values);
    let scale = 1.0 / (len as f64).sqrt();
    for v in values.iter_mut() {
        *v *= scale;
    }
    Ok(())
}

/// Butterfly passes only; caller applies whatever scaling it folds in.
fn fwht_unnormalized(values: &mut [f64]) {
    let len = values.len();
    let mut h = 1;
    while h < len {
        let mut block = 0;
        while block < len {
            for i in block..block + h {
                let a = values[i];
                let b = values[i + h];
                values[i] = a + b;
                values[i + h] = a - b;
            }
            block += 2 * h;
        }
        h *= 2;
    }
}

/// One party's SRHT sketching matrix.
///
/// The implied dense matrix is `Pi = sqrt(padded_dim / output_dim) * D *
/// H_norm * S^T` restricted to the first `input_dim` rows, where `D` is the
/// random sign diagonal, `H_norm` the orthonormal Hadamard matrix and `S` the
/// row selection. Every entry has magnitude `1/sqrt(output_dim)`, so every
/// row has unit norm; this is what makes the mechanism's l2-sensitivity equal
/// to the column range bound.
#[derive(Debug, Clone)]
pub struct SrhtProjection {
    input_dim: usize,
    padded_dim: usize,
    output_dim: usize,
    sign_flips: Vec<f64>,
    selected_rows: Vec<usize>,
    seed: u64,
}

impl SrhtProjection {
    /// Draws the sign diagonal and the without-replacement row subsample,
    /// both deterministic in `seed`.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if output_dim == 0 {
            return Err(invalid("srht output_dim must be at least 1"));
        }
        if output_dim > input_dim {
            return Err(invalid(format!(
                "srht output_dim {output_dim} exceeds input_dim {input_dim}"
            )));
        }
        let padded_dim = input_dim.next_power_of_two();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sign_flips: Vec<f64> = (0..padded_dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut selected_rows =
            rand::seq::index::sample(&mut rng, padded_dim, output_dim).into_vec();
        selected_rows.sort_unstable();
        Ok(Self {
            input_dim,
            padded_dim,
            output_dim,
            sign_flips,
            selected_rows,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sign_flips(&self) -> &[f64] {
        &self.sign_flips
    }

    pub fn selected_rows(&self) -> &[usize] {
        &self.selected_rows
    }

    /// Applies the sketch to every row of `x`: zero-pad, sign-flip, Hadamard
    /// transform, select rows, rescale. Equals the dense product `x * Pi`.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim {
            return Err(invalid(format!(
                "srht apply expects {} columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let n = x.nrows();
        // Unnormalized butterflies followed by a single scale of
        // 1/sqrt(padded) * sqrt(padded/output) = 1/sqrt(output).
        let scale = 1.0 / (self.output_dim as f64).sqrt();
        let mut out = DMatrix::zeros(n, self.output_dim);
        let mut buf = vec![0.0; self.padded_dim];
        for i in 0..n {
            for j in 0..self.input_dim {
                buf[j] = x[(i, j)] * self.sign_flips[j];
            }
            for slot in buf[self.input_dim..].iter_mut() {
                *slot = 0.0;
            }
            fwht_unnormalized(&mut buf);
            for (c, &row) in self.selected_rows.iter().enumerate() {
                out[(i, c)] = buf[row] * scale;
            }
        }
        Ok(out)
    }

    /// Materializes the first `input_dim` rows of the dense sketching matrix
    /// (the rows that multiply real coordinates). Intended for diagnostics
    /// and tests; `apply` never forms this.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let identity = DMatrix::<f64>::identity(self.input_dim, self.input_dim);
        self.apply(&identity).expect("identity dims match")
    }
}
