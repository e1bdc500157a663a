//! Scalar unconditional stopping problem: value iteration on the inverse
//! Fisher-information coordinate `z = 1/u`, threshold extraction and
//! Monte-Carlo calibration of the stopping threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quad::Quadrature;
use crate::seeding::trial_seed;

/// Grid specification for the scalar problem.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec1D {
    pub rz: f64,
    pub nz: usize,
}

impl GridSpec1D {
    /// Default range chosen so the F = G crossing is interior, at 2001
    /// points. The crossing sits near `1/(lambda sigma^2)` for small
    /// `lambda sigma^2` but only decays like `(lambda sigma^2)^(-1/2)` for
    /// large values, so the range covers both regimes with a factor-10
    /// margin.
    pub fn for_lambda(lambda: f64, sigma2: f64) -> Self {
        let ls = lambda * sigma2;
        Self { rz: 10.0 * (1.0 / ls).max(1.0 / ls.sqrt()), nz: 2001 }
    }

    pub fn dz(&self) -> f64 {
        self.rz / (self.nz - 1) as f64
    }
}

/// Iteration controls for the value iteration.
#[derive(Debug, Clone, Copy)]
pub struct IterOpts {
    /// Stop when the sup-norm change falls below `tol_rel` times the
    /// Frobenius norm of the value table.
    pub tol_rel: f64,
    pub max_iters: usize,
}

impl Default for IterOpts {
    fn default() -> Self {
        Self { tol_rel: 1e-6, max_iters: 20_000 }
    }
}

/// Discretized optimal-cost function of the scalar problem.
#[derive(Debug, Clone)]
pub struct ValueTable1D {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    /// Stopping cost `lambda sigma^2 z` on the grid.
    pub f: Vec<f64>,
    /// Continuation cost at convergence.
    pub g: Vec<f64>,
    pub lambda: f64,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smallest pointwise increase observed between consecutive iterates;
    /// should never be materially negative (iterates are monotone in m).
    pub min_iterate_increase: f64,
}

fn interp_clamped(values: &[f64], dz: f64, q: f64) -> f64 {
    let n = values.len();
    let pos = (q / dz).clamp(0.0, (n - 1) as f64);
    let i0 = pos.floor() as usize;
    if i0 + 1 >= n {
        return values[n - 1];
    }
    let frac = pos - i0 as f64;
    values[i0] * (1.0 - frac) + values[i0 + 1] * frac
}

/// Value iteration for `V(z) = min{lambda sigma^2 z, 1 + E[V(z/(1+z h^2))]}`
/// starting from `V_0 = 0`.
pub fn value_iteration_scalar(
    lambda: f64,
    sigma2: f64,
    quad: &Quadrature,
    spec: GridSpec1D,
    opts: IterOpts,
) -> ValueTable1D {
    assert!(lambda > 0.0 && sigma2 > 0.0 && spec.nz >= 2);
    let dz = spec.dz();
    let z: Vec<f64> = (0..spec.nz).map(|i| i as f64 * dz).collect();
    let f: Vec<f64> = z.iter().map(|&zi| lambda * sigma2 * zi).collect();

    let mut v = vec![0.0; spec.nz];
    let mut v_next = vec![0.0; spec.nz];
    let mut g = vec![0.0; spec.nz];
    let mut min_increase = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        let mut dif: f64 = 0.0;
        for i in 0..spec.nz {
            let zi = z[i];
            let cont = 1.0
                + quad.expect(|h| interp_clamped(&v, dz, zi / (1.0 + zi * h * h)));
            g[i] = cont;
            let vi = f[i].min(cont);
            dif = dif.max((vi - v[i]).abs());
            min_increase = min_increase.min(vi - v[i]);
            v_next[i] = vi;
        }
        std::mem::swap(&mut v, &mut v_next);
        iterations += 1;
        let fr = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dif <= opts.tol_rel * fr {
            converged = true;
            break;
        }
    }

    ValueTable1D {
        z,
        v,
        f,
        g,
        lambda,
        sigma2,
        iterations,
        converged,
        min_iterate_increase: min_increase,
    }
}

/// Threshold `C''` in z-units: the right end of the stopping interval
/// `{z: F(z) <= G(z)}`, refined by linear interpolation of `F - G` between
/// the bracketing grid points.
pub fn extract_threshold(table: &ValueTable1D) -> Result<f64> {
    let n = table.z.len();
    let stop: Vec<bool> = (0..n).map(|i| table.f[i] <= table.g[i]).collect();
    if stop.iter().all(|&s| s) {
        // no crossing inside the grid; Rz too small
        return Err(Error::NoThreshold);
    }
    let k = stop.iter().position(|&s| !s).unwrap();
    if k == 0 {
        return Err(Error::NoThreshold);
    }
    if stop[k..].iter().any(|&s| s) {
        return Err(Error::NonIntervalStopSet);
    }
    let (zl, zr) = (table.z[k - 1], table.z[k]);
    let dl = table.g[k - 1] - table.f[k - 1]; // >= 0
    let dr = table.f[k] - table.g[k]; // > 0
    Ok(zl + (zr - zl) * dl / (dl + dr))
}

/// Outcome of the Monte-Carlo threshold calibration.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    /// `C''` in z-units (stop when `u >= 1/threshold`).
    pub threshold: f64,
    pub achieved_mse: f64,
    pub trials: usize,
    pub tolerance: f64,
}

const TRIAL_STEP_CAP: usize = 1_000_000;
const MAX_BRACKET_EXPANSIONS: usize = 60;

/// Simulates the threshold rule `T = min{t: u_t >= 1/c2}` over `trials`
/// paths and returns `(mean of sigma2/u_T, standard error)`.
pub fn simulate_mse<F>(
    c2: f64,
    sigma2: f64,
    trials: usize,
    base_seed: u64,
    coeff: &F,
) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> f64,
{
    let ustop = 1.0 / c2;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base_seed, trial as u64));
        let mut u = 0.0;
        for _ in 0..TRIAL_STEP_CAP {
            let h = coeff(&mut rng);
            u += h * h;
            if u >= ustop {
                break;
            }
        }
        let mse = if u > 0.0 { sigma2 / u } else { f64::INFINITY };
        sum += mse;
        sumsq += mse * mse;
    }
    let mean = sum / trials as f64;
    let var = (sumsq / trials as f64 - mean * mean).max(0.0);
    (mean, (var / trials as f64).sqrt())
}

/// Mean stopping time of the threshold rule `u_t >= 1/c2` over `trials`
/// simulated paths.
pub fn simulate_mean_stop_time<F>(
    c2: f64,
    trials: usize,
    base_seed: u64,
    coeff: &F,
) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> f64,
{
    let ustop = 1.0 / c2;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base_seed, trial as u64));
        let mut u = 0.0;
        let mut t = 0usize;
        while u < ustop && t < TRIAL_STEP_CAP {
            let h = coeff(&mut rng);
            u += h * h;
            t += 1;
        }
        sum += t as f64;
        sumsq += (t as f64) * (t as f64);
    }
    let mean = sum / trials as f64;
    let var = (sumsq / trials as f64 - mean * mean).max(0.0);
    (mean, (var / trials as f64).sqrt())
}

/// Bisection on `C''` until the simulated `E[sigma2/u_T]` hits the target
/// accuracy `C`. Common random numbers across evaluations keep the map
/// monotone in `C''`.
pub fn calibrate_threshold<F>(
    c: f64,
    sigma2: f64,
    trials: usize,
    base_seed: u64,
    coeff: F,
) -> Result<CalibrationResult>
where
    F: Fn(&mut ChaCha8Rng) -> f64,
{
    assert!(c > 0.0 && sigma2 > 0.0 && trials >= 1);
    let tol_of = |se: f64| (1e-3 * c).max(2.0 * se);

    // the conditional threshold C/sigma^2 always undershoots: u_T >= sigma2/C
    let mut lo = c / sigma2;
    let (m_lo, se_lo) = simulate_mse(lo, sigma2, trials, base_seed, &coeff);
    if (m_lo - c).abs() <= tol_of(se_lo) {
        return Ok(CalibrationResult {
            threshold: lo,
            achieved_mse: m_lo,
            trials,
            tolerance: tol_of(se_lo),
        });
    }

    let mut hi = lo;
    let mut found = false;
    for _ in 0..MAX_BRACKET_EXPANSIONS {
        hi *= 2.0;
        let (m_hi, se_hi) = simulate_mse(hi, sigma2, trials, base_seed, &coeff);
        if (m_hi - c).abs() <= tol_of(se_hi) {
            return Ok(CalibrationResult {
                threshold: hi,
                achieved_mse: m_hi,
                trials,
                tolerance: tol_of(se_hi),
            });
        }
        if m_hi >= c {
            found = true;
            break;
        }
        lo = hi;
    }
    if !found {
        return Err(Error::BracketFailure { expansions: MAX_BRACKET_EXPANSIONS });
    }

    let mut best = (lo, m_lo, se_lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (m, se) = simulate_mse(mid, sigma2, trials, base_seed, &coeff);
        best = (mid, m, se);
        if (m - c).abs() <= tol_of(se) {
            break;
        }
        if m > c {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CalibrationResult {
        threshold: best.0,
        achieved_mse: best.1,
        trials,
        tolerance: tol_of(best.2),
    })
}

/// Structural checks on a converged value table.
#[derive(Debug, Clone)]
pub struct ValuePropertyReport {
    /// Most negative first difference of V (want >= -1e-10).
    pub max_negative_first_diff: f64,
    /// Most positive interior second difference of V (want <= 1e-8).
    pub max_positive_second_diff: f64,
    /// Upper bound `c` solving `E[(c - lambda sigma^2/h^2)^+] > 1`, when one
    /// exists for the given coefficient distribution.
    pub bound_c: Option<f64>,
    pub bound_ok: bool,
    pub monotone_iterates_ok: bool,
}

impl ValuePropertyReport {
    pub fn all_pass(&self) -> bool {
        self.max_negative_first_diff >= -1e-10
            && self.max_positive_second_diff <= 1e-8
            && self.bound_ok
            && self.monotone_iterates_ok
    }
}

/// Smallest `c` with `E[(c - a/h^2)^+] > 1`, `a = lambda sigma^2`, or `None`
/// when no such bound exists (degenerate coefficient at zero).
pub fn value_upper_bound(lambda: f64, sigma2: f64, quad: &Quadrature) -> Option<f64> {
    let a = lambda * sigma2;
    let gap = |c: f64| {
        quad.expect(|h| {
            let h2 = h * h;
            if h2 <= 0.0 {
                0.0
            } else {
                (c - a / h2).max(0.0)
            }
        })
    };
    let mut hi = 1.0;
    let mut ok = false;
    for _ in 0..80 {
        if gap(hi) > 1.0 {
            ok = true;
            break;
        }
        hi *= 2.0;
    }
    if !ok {
        return None;
    }
    let mut lo = hi / 2.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Runs the structural property suite against a converged table.
pub fn check_value_properties(table: &ValueTable1D, quad: &Quadrature) -> ValuePropertyReport {
    let v = &table.v;
    let mut max_neg_first = 0.0f64;
    for i in 1..v.len() {
        max_neg_first = max_neg_first.min(v[i] - v[i - 1]);
    }
    let mut max_pos_second = f64::NEG_INFINITY;
    for i in 1..v.len() - 1 {
        max_pos_second = max_pos_second.max(v[i + 1] - 2.0 * v[i] + v[i - 1]);
    }
    let bound_c = value_upper_bound(table.lambda, table.sigma2, quad);
    let bound_ok = match bound_c {
        Some(c) => v
            .iter()
            .zip(&table.f)
            .all(|(&vi, &fi)| vi <= fi.min(c) + 1e-9),
        None => false,
    };
    ValuePropertyReport {
        max_negative_first_diff: max_neg_first,
        max_positive_second_diff: max_pos_second,
        bound_c,
        bound_ok,
        monotone_iterates_ok: table.min_iterate_increase >= -1e-12,
    }
}
