//! C ABI over the core library: opaque dataset handles, status codes, a
//! thread-local last-error message, and flat-parameter entry points for the
//! noise calculator, the error-bound calculator, protocol fits and full
//! experiment runs.
//!
//! Every function returns a [`PrideStatus`]; on anything but `Ok` the
//! message is available from [`pride_last_error`] until the next call on
//! the same thread. All pointers must be valid for the stated lengths;
//! passing null where a value is required yields `InvalidArgument`.

// Pointer contracts are stated once in the module docs rather than per
// function.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use pride_core::baselines::single_machine;
use pride_core::data::{load_csv, standardize, DataSet};
use pride_core::dual::{LossKind, SolverSettings};
use pride_core::experiment::{load_config, run_experiment, Overrides};
use pride_core::pride::{run_pride, Partition, PrideConfig, PrivacyLevel, SigmaMode};
use pride_core::privacy::noise_sigma;
use pride_core::synth::{generate_confounded, SyntheticConfig};
use pride_core::PrideError;

/// Result of every C entry point. On anything but Ok, pride_last_error
/// carries the message.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrideStatus {
    Ok = 0,
    InvalidArgument = 1,
    Parse = 2,
    Protocol = 3,
    Io = 4,
    Config = 5,
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &PrideError) -> PrideStatus {
    match err {
        PrideError::InvalidArgument(_) => PrideStatus::InvalidArgument,
        PrideError::Parse { .. } => PrideStatus::Parse,
        PrideError::Protocol(_) => PrideStatus::Protocol,
        PrideError::Io(_) => PrideStatus::Io,
        PrideError::Config(_) => PrideStatus::Config,
    }
}

fn run_entry(body: impl FnOnce() -> Result<(), (PrideStatus, String)>) -> PrideStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            PrideStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PrideStatus::Internal
        }
    }
}

fn core_err(err: PrideError) -> (PrideStatus, String) {
    (status_of(&err), err.to_string())
}

fn invalid(message: impl Into<String>) -> (PrideStatus, String) {
    (PrideStatus::InvalidArgument, message.into())
}

unsafe fn required_str<'a>(
    pointer: *const c_char,
    name: &str,
) -> Result<&'a str, (PrideStatus, String)> {
    if pointer.is_null() {
        return Err(invalid(format!("{name} must not be null")));
    }
    CStr::from_ptr(pointer)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next library call from the same thread.
#[no_mangle]
pub extern "C" fn pride_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Gaussian-mechanism noise level for a release with column ranges bounded
/// by `theta` and projection sensitivity `w2` (1 for the SRHT).
#[no_mangle]
pub unsafe extern "C" fn pride_noise_sigma(
    epsilon: f64,
    delta: f64,
    theta: f64,
    w2: f64,
    out_sigma: *mut f64,
) -> PrideStatus {
    run_entry(|| {
        if out_sigma.is_null() {
            return Err(invalid("out_sigma must not be null"));
        }
        let sigma = noise_sigma(epsilon, delta, theta, w2).map_err(core_err)?;
        unsafe { *out_sigma = sigma };
        Ok(())
    })
}

/// Approximation-error bound. On success `out_vacuous` tells whether the
/// bound is informative; the term outputs are only written when it is.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pride_error_bound(
    rank: usize,
    tau_k: usize,
    sigma: f64,
    d_min: f64,
    beta_star_norm: f64,
    parties: usize,
    c_const: f64,
    xi: f64,
    out_rho: *mut f64,
    out_term_i: *mut f64,
    out_term_ii: *mut f64,
    out_total: *mut f64,
    out_vacuous: *mut bool,
) -> PrideStatus {
    run_entry(|| {
        if out_rho.is_null() || out_vacuous.is_null() {
            return Err(invalid("out_rho and out_vacuous must not be null"));
        }
        let inputs = pride_core::analysis::BoundInputs {
            r: rank,
            tau_k,
            sigma,
            d_min,
            beta_star_norm,
            parties,
            c_const,
            xi,
        };
        match pride_core::analysis::theorem2_bound(&inputs).map_err(core_err)? {
            pride_core::analysis::Theorem2Bound::Vacuous { rho } => unsafe {
                *out_rho = rho;
                *out_vacuous = true;
            },
            pride_core::analysis::Theorem2Bound::Bounded {
                rho,
                term_i,
                term_ii,
                total,
            } => unsafe {
                *out_rho = rho;
                *out_vacuous = false;
                if !out_term_i.is_null() {
                    *out_term_i = term_i;
                }
                if !out_term_ii.is_null() {
                    *out_term_ii = term_ii;
                }
                if !out_total.is_null() {
                    *out_total = total;
                }
            },
        }
        Ok(())
    })
}

/// Opaque dataset handle.
pub struct PrideDataset {
    inner: DataSet,
}

/// Generation parameters of the confounded synthetic dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PrideSyntheticParams {
    /// Side of the square feature grid; the feature count is its square.
    pub grid_side: usize,
    pub rows: usize,
    pub n_confound_pairs: usize,
    pub n_signal_pcs: usize,
    pub target_snr: f64,
    pub grf_length_scale: f64,
    pub seed: u64,
}

/// Draws a confounded synthetic dataset. The returned handle must be
/// released with `pride_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn pride_dataset_synthetic(
    params: *const PrideSyntheticParams,
    out_dataset: *mut *mut PrideDataset,
) -> PrideStatus {
    run_entry(|| {
        if params.is_null() || out_dataset.is_null() {
            return Err(invalid("params and out_dataset must not be null"));
        }
        let params = unsafe { &*params };
        let config = SyntheticConfig {
            grid_side: params.grid_side,
            n: params.rows,
            n_confound_pairs: params.n_confound_pairs,
            n_signal_pcs: params.n_signal_pcs,
            target_snr: params.target_snr,
            grf_length_scale: params.grf_length_scale,
            seed: params.seed,
        };
        let data = generate_confounded(&config).map_err(core_err)?;
        unsafe { *out_dataset = Box::into_raw(Box::new(PrideDataset { inner: data })) };
        Ok(())
    })
}

/// Loads a rectangular numeric CSV with a header row; `response_column`
/// names the response, every other column becomes a feature.
#[no_mangle]
pub unsafe extern "C" fn pride_dataset_from_csv(
    path: *const c_char,
    response_column: *const c_char,
    out_dataset: *mut *mut PrideDataset,
) -> PrideStatus {
    run_entry(|| {
        if out_dataset.is_null() {
            return Err(invalid("out_dataset must not be null"));
        }
        let path = unsafe { required_str(path, "path") }?;
        let response = unsafe { required_str(response_column, "response_column") }?;
        let data = load_csv(Path::new(path), response).map_err(core_err)?;
        unsafe { *out_dataset = Box::into_raw(Box::new(PrideDataset { inner: data })) };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pride_dataset_dims(
    dataset: *const PrideDataset,
    out_rows: *mut usize,
    out_features: *mut usize,
) -> PrideStatus {
    run_entry(|| {
        if dataset.is_null() || out_rows.is_null() || out_features.is_null() {
            return Err(invalid("dataset and outputs must not be null"));
        }
        let dataset = unsafe { &*dataset };
        unsafe {
            *out_rows = dataset.inner.n();
            *out_features = dataset.inner.p();
        }
        Ok(())
    })
}

/// Releases a dataset handle; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn pride_dataset_free(dataset: *mut PrideDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

/// Fit parameters for pride_fit.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PrideFitParams {
    /// Number of parties; features are split into contiguous near-equal
    /// blocks. Use 1 for a single-machine fit (no sharing).
    pub parties: usize,
    /// Projection dimension of each communicated sketch; ignored when
    /// `parties` is 1 (pass the block size or anything valid).
    pub tau_subs: usize,
    pub lambda: f64,
    /// Privacy parameters; ignored when `no_privacy` is true.
    pub epsilon: f64,
    pub delta: f64,
    /// Communicate sketches without perturbation (sigma = 0).
    pub no_privacy: bool,
    /// Logistic loss with labels in {-1, +1}; squared loss otherwise.
    pub logistic_loss: bool,
    pub master_seed: u64,
}

/// Runs the protocol on a dataset handle. The design is standardized
/// internally and the recovered coefficients are returned in the original
/// data units (`out_beta` must hold one value per feature). For squared
/// loss the response is centered and the model carries the implied
/// intercept; `out_sigma_max` (optional) receives the largest per-party
/// noise level used.
#[no_mangle]
pub unsafe extern "C" fn pride_fit(
    dataset: *const PrideDataset,
    params: *const PrideFitParams,
    out_beta: *mut f64,
    out_sigma_max: *mut f64,
) -> PrideStatus {
    run_entry(|| {
        if dataset.is_null() || params.is_null() || out_beta.is_null() {
            return Err(invalid("dataset, params and out_beta must not be null"));
        }
        let dataset = unsafe { &*dataset };
        let params = unsafe { &*params };
        let data = &dataset.inner;

        let (x, _, stds) = standardize(&data.x).map_err(core_err)?;
        let loss = if params.logistic_loss {
            LossKind::Logistic
        } else {
            LossKind::Squared
        };
        let y = match loss {
            LossKind::Squared => {
                let mean = data.y.sum() / data.y.len() as f64;
                data.y.map(|v| v - mean)
            }
            LossKind::Logistic => data.y.clone(),
        };

        let (beta_std, sigma_max) = if params.parties <= 1 {
            let fit = single_machine(
                &x,
                &y,
                params.lambda,
                loss,
                SolverSettings::default(),
                params.master_seed,
            )
            .map_err(core_err)?;
            (fit.beta, 0.0)
        } else {
            let partition = Partition::contiguous(x.ncols(), params.parties).map_err(core_err)?;
            let privacy = if params.no_privacy {
                PrivacyLevel::NoPrivacy
            } else {
                PrivacyLevel::EpsilonDelta {
                    epsilon: params.epsilon,
                    delta: params.delta,
                }
            };
            let config = PrideConfig {
                tau_subs: params.tau_subs,
                lambda: params.lambda,
                privacy,
                sigma_mode: SigmaMode::PerParty,
                loss,
                solver: SolverSettings::default(),
                master_seed: params.master_seed,
            };
            let result = run_pride(&x, &y, &partition, &config).map_err(core_err)?;
            let sigma_max = result
                .diagnostics
                .sigmas
                .iter()
                .cloned()
                .fold(0.0, f64::max);
            (result.global_beta, sigma_max)
        };

        let beta_original = DVector::from_fn(beta_std.len(), |j, _| beta_std[j] / stds[j]);
        unsafe {
            std::ptr::copy_nonoverlapping(
                beta_original.as_slice().as_ptr(),
                out_beta,
                beta_original.len(),
            );
            if !out_sigma_max.is_null() {
                *out_sigma_max = sigma_max;
            }
        }
        Ok(())
    })
}

/// Executes a full experiment sweep from a TOML config file, with optional
/// output-directory and seed overrides (`master_seed` may be null, `jobs`
/// may be 0 for the default pool).
#[no_mangle]
pub unsafe extern "C" fn pride_run_experiment_file(
    config_path: *const c_char,
    output_dir: *const c_char,
    master_seed: *const u64,
    jobs: usize,
) -> PrideStatus {
    run_entry(|| {
        let config_path = unsafe { required_str(config_path, "config_path") }?;
        let config = load_config(Path::new(config_path)).map_err(core_err)?;
        let output_dir = if output_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(unsafe {
                required_str(output_dir, "output_dir")
            }?))
        };
        let overrides = Overrides {
            master_seed: if master_seed.is_null() {
                None
            } else {
                Some(unsafe { *master_seed })
            },
            output_dir,
            jobs: if jobs == 0 { None } else { Some(jobs) },
        };
        run_experiment(&config, &overrides).map_err(core_err)?;
        Ok(())
    })
}
