//! C ABI for the sequential-estimation library.
//!
//! Every function returns a `SeqestStatus`; results come back through out
//! pointers. Handles are opaque and must be released with the matching
//! `_free` function. All functions are safe to call from any single thread;
//! a handle must not be shared across threads without external locking.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::DVector;
use seqest::error::Error;
use seqest::estimator::{rls_step, FisherState, NoiseModel, Observation};
use seqest::harness::kappa_equicorr;
use seqest::scalar_dp::{self, GridSpec1D, IterOpts};
use seqest::stopping::statistic;
use seqest::{AccuracyFn, Quadrature};

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqestStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Singular = 4,
    NotConverged = 5,
    NoThreshold = 6,
    BracketFailure = 7,
    HorizonExceeded = 8,
    InternalError = 9,
}

fn status_of(e: &Error) -> SeqestStatus {
    match e {
        Error::SingularInformation | Error::SingularR | Error::DegenerateCorrelation => {
            SeqestStatus::Singular
        }
        Error::DimensionMismatch { .. } => SeqestStatus::DimensionMismatch,
        Error::NotConverged { .. } => SeqestStatus::NotConverged,
        Error::NoThreshold | Error::NonIntervalStopSet => SeqestStatus::NoThreshold,
        Error::BracketFailure { .. } => SeqestStatus::BracketFailure,
        Error::HorizonExceeded(_) => SeqestStatus::HorizonExceeded,
        Error::InvalidCorrelation(_)
        | Error::NonpositiveTarget(_)
        | Error::OvershootBoundViolated { .. }
        | Error::Config(_) => SeqestStatus::InvalidArgument,
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn seqest_status_message(status: SeqestStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SeqestStatus::Ok => b"ok\0",
        SeqestStatus::NullArgument => b"null argument\0",
        SeqestStatus::InvalidArgument => b"invalid argument\0",
        SeqestStatus::DimensionMismatch => b"dimension mismatch\0",
        SeqestStatus::Singular => b"singular matrix\0",
        SeqestStatus::NotConverged => b"iteration did not converge\0",
        SeqestStatus::NoThreshold => b"no stopping threshold found\0",
        SeqestStatus::BracketFailure => b"calibration bracket failure\0",
        SeqestStatus::HorizonExceeded => b"sample horizon exceeded\0",
        SeqestStatus::InternalError => b"internal error\0",
    };
    s.as_ptr() as *const c_char
}

/// Accuracy functions selectable through the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqestAccuracy {
    Trace = 0,
    Frobenius = 1,
}

/// Opaque recursive-least-squares estimator.
pub struct SeqestEstimator {
    state: FisherState,
    noise: NoiseModel,
}

fn guard<F: FnOnce() -> SeqestStatus>(f: F) -> SeqestStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(SeqestStatus::InternalError)
}

/// Creates an estimator for an `n`-dimensional parameter with noise
/// variance `sigma2`. Returns NULL on invalid input.
#[no_mangle]
pub extern "C" fn seqest_estimator_new(n: usize, sigma2: f64) -> *mut SeqestEstimator {
    if n == 0 || !(sigma2 > 0.0) {
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(SeqestEstimator {
        state: FisherState::new(n),
        noise: NoiseModel::uniform(sigma2),
    }))
}

/// Releases an estimator. NULL is accepted and ignored.
#[no_mangle]
pub extern "C" fn seqest_estimator_free(est: *mut SeqestEstimator) {
    if !est.is_null() {
        drop(unsafe { Box::from_raw(est) });
    }
}

/// Feeds one observation `y = h . x + w` into the recursion.
///
/// # Safety
/// `h` must point to `n` readable doubles; `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqest_estimator_update(
    est: *mut SeqestEstimator,
    h: *const f64,
    n: usize,
    y: f64,
) -> SeqestStatus {
    if est.is_null() || h.is_null() {
        return SeqestStatus::NullArgument;
    }
    let est = &mut *est;
    if n != est.state.n {
        return SeqestStatus::DimensionMismatch;
    }
    let hv = DVector::from_column_slice(std::slice::from_raw_parts(h, n));
    guard(|| match rls_step(&mut est.state, &Observation::new(y, hv), &est.noise) {
        Ok(()) => SeqestStatus::Ok,
        Err(e) => status_of(&e),
    })
}

/// Copies the current estimate into `out` (length `n`).
///
/// # Safety
/// `out` must point to `n` writable doubles; `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqest_estimator_estimate(
    est: *const SeqestEstimator,
    out: *mut f64,
    n: usize,
) -> SeqestStatus {
    if est.is_null() || out.is_null() {
        return SeqestStatus::NullArgument;
    }
    let est = &*est;
    if n != est.state.n {
        return SeqestStatus::DimensionMismatch;
    }
    let dst = std::slice::from_raw_parts_mut(out, n);
    dst.copy_from_slice(est.state.xhat.as_slice());
    SeqestStatus::Ok
}

/// Writes the current accuracy statistic (the chosen function of the
/// conditional covariance) to `out`; infinity while the information matrix
/// is still singular.
///
/// # Safety
/// `out` must be a writable double; `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn seqest_estimator_statistic(
    est: *const SeqestEstimator,
    accuracy: SeqestAccuracy,
    out: *mut f64,
) -> SeqestStatus {
    if est.is_null() || out.is_null() {
        return SeqestStatus::NullArgument;
    }
    let est = &*est;
    let f = match accuracy {
        SeqestAccuracy::Trace => AccuracyFn::Trace,
        SeqestAccuracy::Frobenius => AccuracyFn::Frobenius,
    };
    guard(|| {
        *out = statistic(&est.state, f);
        SeqestStatus::Ok
    })
}

/// Number of observations consumed so far.
///
/// # Safety
/// `est` must be a live handle; NULL returns 0.
#[no_mangle]
pub unsafe extern "C" fn seqest_estimator_samples(est: *const SeqestEstimator) -> usize {
    if est.is_null() {
        return 0;
    }
    (*est).state.t
}

/// Solves the scalar dynamic program for cost `lambda` and noise variance
/// `sigma2`, writing the optimal stopping threshold to `out_threshold`.
///
/// # Safety
/// `out_threshold` must be a writable double.
#[no_mangle]
pub unsafe extern "C" fn seqest_scalar_threshold(
    lambda: f64,
    sigma2: f64,
    out_threshold: *mut f64,
) -> SeqestStatus {
    if out_threshold.is_null() {
        return SeqestStatus::NullArgument;
    }
    if !(lambda > 0.0) || !(sigma2 > 0.0) {
        return SeqestStatus::InvalidArgument;
    }
    guard(|| {
        let quad = Quadrature::gaussian_equispaced(41, 4.0);
        let table = scalar_dp::value_iteration_scalar(
            lambda,
            sigma2,
            &quad,
            GridSpec1D::for_lambda(lambda, sigma2),
            IterOpts::default(),
        );
        if !table.converged {
            return SeqestStatus::NotConverged;
        }
        match scalar_dp::extract_threshold(&table) {
            Ok(th) => {
                *out_threshold = th;
                SeqestStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Calibrates the scalar stopping threshold so the simulated mean squared
/// error meets `target_mse` (standard-normal coefficients).
///
/// # Safety
/// `out_threshold` must be a writable double.
#[no_mangle]
pub unsafe extern "C" fn seqest_calibrate_scalar(
    target_mse: f64,
    sigma2: f64,
    trials: usize,
    seed: u64,
    out_threshold: *mut f64,
) -> SeqestStatus {
    if out_threshold.is_null() {
        return SeqestStatus::NullArgument;
    }
    if !(target_mse > 0.0) || !(sigma2 > 0.0) || trials == 0 {
        return SeqestStatus::InvalidArgument;
    }
    guard(|| {
        let res = scalar_dp::calibrate_threshold(target_mse, sigma2, trials, seed, |rng| {
            use rand_distr::Distribution;
            rand_distr::StandardNormal.sample(rng)
        });
        match res {
            Ok(r) => {
                *out_threshold = r.threshold;
                SeqestStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Diagonal entry of the inverse equicorrelation matrix (closed form).
///
/// # Safety
/// `out_kappa` must be a writable double.
#[no_mangle]
pub unsafe extern "C" fn seqest_kappa_equicorr(
    n: usize,
    r: f64,
    out_kappa: *mut f64,
) -> SeqestStatus {
    if out_kappa.is_null() {
        return SeqestStatus::NullArgument;
    }
    if n == 0 {
        return SeqestStatus::InvalidArgument;
    }
    match kappa_equicorr(n, r) {
        Ok(k) => {
            *out_kappa = k;
            SeqestStatus::Ok
        }
        Err(e) => status_of(&e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_roundtrip_through_the_abi() {
        let est = seqest_estimator_new(2, 1.0);
        assert!(!est.is_null());
        // y = h . [1, -2] exactly; the estimate must recover it
        let xs = [1.0, -2.0];
        let hs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]];
        unsafe {
            for h in &hs {
                let y = h[0] * xs[0] + h[1] * xs[1];
                assert_eq!(seqest_estimator_update(est, h.as_ptr(), 2, y), SeqestStatus::Ok);
            }
            assert_eq!(seqest_estimator_samples(est), 4);
            let mut out = [0.0; 2];
            assert_eq!(seqest_estimator_estimate(est, out.as_mut_ptr(), 2), SeqestStatus::Ok);
            assert!((out[0] - 1.0).abs() < 1e-6 && (out[1] + 2.0).abs() < 1e-6);
            let mut stat = 0.0;
            assert_eq!(
                seqest_estimator_statistic(est, SeqestAccuracy::Trace, &mut stat),
                SeqestStatus::Ok
            );
            assert!(stat.is_finite() && stat > 0.0);
            seqest_estimator_free(est);
        }
    }

    #[test]
    fn null_and_dimension_errors() {
        unsafe {
            assert_eq!(
                seqest_estimator_update(std::ptr::null_mut(), [1.0].as_ptr(), 1, 0.0),
                SeqestStatus::NullArgument
            );
            let est = seqest_estimator_new(2, 1.0);
            assert_eq!(
                seqest_estimator_update(est, [1.0].as_ptr(), 1, 0.0),
                SeqestStatus::DimensionMismatch
            );
            seqest_estimator_free(est);
            seqest_estimator_free(std::ptr::null_mut());
        }
        assert!(seqest_estimator_new(0, 1.0).is_null());
        assert!(seqest_estimator_new(2, -1.0).is_null());
    }

    #[test]
    fn scalar_threshold_and_kappa() {
        unsafe {
            let mut th = 0.0;
            assert_eq!(seqest_scalar_threshold(1.0, 1.0, &mut th), SeqestStatus::Ok);
            assert!(th > 0.0);
            let mut k = 0.0;
            assert_eq!(seqest_kappa_equicorr(5, 0.9, &mut k), SeqestStatus::Ok);
            assert!((k - 8.0435).abs() < 1e-3);
            assert_eq!(seqest_kappa_equicorr(5, 1.0, &mut k), SeqestStatus::Singular);
            assert_eq!(
                seqest_scalar_threshold(-1.0, 1.0, &mut th),
                SeqestStatus::InvalidArgument
            );
        }
    }

    #[test]
    fn status_messages_are_nul_terminated() {
        for s in [SeqestStatus::Ok, SeqestStatus::Singular, SeqestStatus::InternalError] {
            let p = seqest_status_message(s);
            assert!(!p.is_null());
            let cstr = unsafe { std::ffi::CStr::from_ptr(p) };
            assert!(!cstr.to_str().unwrap().is_empty());
        }
    }
}
