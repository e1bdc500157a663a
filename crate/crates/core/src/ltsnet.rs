//! Decentralized sequential estimation over a sensor network.
//!
//! Each sensor runs two level-triggered samplers per parameter dimension:
//! one on the accumulated information process `d` (one-sided, `d` is
//! non-decreasing) and one on the accumulated cross-correlation process `v`
//! (two-sided). Every trigger transmits a single bit whose fractional
//! transmission delay linearly encodes the threshold overshoot. The fusion
//! center rebuilds approximate global statistics from the bit stream, stops
//! when the running trace statistic crosses the threshold, and produces the
//! final estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::Observation;
use crate::linalg::spd_inverse;
use crate::scalar_dp::CalibrationResult;
use crate::seeding::trial_seed;

/// Default `d`-approximation floor at the fusion center.
pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Per-sensor sampler thresholds and overshoot-encoding parameters.
#[derive(Debug, Clone)]
pub struct SensorConfig {
    /// Per-dimension d-thresholds.
    pub delta: Vec<f64>,
    /// Per-dimension v-thresholds.
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub phi_d: f64,
    pub phi_v: f64,
    pub theta_d: f64,
    pub theta_v: f64,
}

impl SensorConfig {
    pub fn new(
        delta: Vec<f64>,
        gamma: Vec<f64>,
        sigma2: f64,
        phi_d: f64,
        phi_v: f64,
        theta_d: f64,
        theta_v: f64,
    ) -> Self {
        assert!(delta.iter().all(|&d| d > 0.0) && gamma.iter().all(|&g| g > 0.0));
        assert!(sigma2 > 0.0);
        // delays must land in [0, 1)
        assert!(phi_d > theta_d && phi_v > theta_v);
        Self { delta, gamma, sigma2, phi_d, phi_v, theta_d, theta_v }
    }

    pub fn dims(&self) -> usize {
        self.delta.len()
    }
}

/// Per-dimension unreported accumulations of one sensor.
#[derive(Debug, Clone)]
pub struct SensorState {
    /// Information accumulated since the last d-sample, per dimension.
    pub chi: Vec<f64>,
    /// Cross-correlation accumulated since the last v-sample, per dimension.
    pub psi: Vec<f64>,
    /// d-sample counters.
    pub d_count: Vec<usize>,
    /// v-sample counters.
    pub v_count: Vec<usize>,
}

impl SensorState {
    pub fn new(n: usize) -> Self {
        Self {
            chi: vec![0.0; n],
            psi: vec![0.0; n],
            d_count: vec![0; n],
            v_count: vec![0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    D,
    V,
}

/// One transmitted bit; the fractional part of `transmit_time` carries the
/// encoded overshoot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEvent {
    pub kind: EventKind,
    pub sensor: usize,
    pub dim: usize,
    pub transmit_time: f64,
    /// +-1 for V-events, 0 for D-events.
    pub sign: i8,
}

impl ChannelEvent {
    /// `transmit_time,kind,sensor,dim,sign` with fixed-point 9-decimal time;
    /// sign is empty for D-events.
    pub fn log_line(&self) -> String {
        let kind = match self.kind {
            EventKind::D => "D",
            EventKind::V => "V",
        };
        let sign = match self.kind {
            EventKind::D => String::new(),
            EventKind::V => format!("{:+}", self.sign),
        };
        format!("{:.9},{},{},{},{}", self.transmit_time, kind, self.sensor, self.dim, sign)
    }
}

/// Serializes an event log, one line per event, bit-exact replay input.
pub fn export_event_log(events: &[ChannelEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&ev.log_line());
        out.push('\n');
    }
    out
}

/// Advances one sensor by one observation at integer time `t`, emitting the
/// triggered events.
pub fn sensor_step(
    state: &mut SensorState,
    cfg: &SensorConfig,
    sensor: usize,
    obs: &Observation,
    t: u64,
) -> Result<Vec<ChannelEvent>> {
    let n = cfg.dims();
    if obs.h.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: obs.h.len() });
    }
    let mut events = Vec::new();
    for i in 0..n {
        let h = obs.h[i];
        state.chi[i] += h * h / cfg.sigma2;
        state.psi[i] += h * obs.y / cfg.sigma2;

        if state.chi[i] >= cfg.delta[i] {
            let q = state.chi[i] - cfg.delta[i];
            if q >= cfg.theta_d {
                return Err(Error::OvershootBoundViolated {
                    sensor,
                    dim: i,
                    overshoot: q,
                    bound: cfg.theta_d,
                });
            }
            state.d_count[i] += 1;
            events.push(ChannelEvent {
                kind: EventKind::D,
                sensor,
                dim: i,
                transmit_time: t as f64 + q / cfg.phi_d,
                sign: 0,
            });
            state.chi[i] = 0.0;
        }
        if state.psi[i].abs() >= cfg.gamma[i] {
            let eta = state.psi[i].abs() - cfg.gamma[i];
            if eta >= cfg.theta_v {
                return Err(Error::OvershootBoundViolated {
                    sensor,
                    dim: i,
                    overshoot: eta,
                    bound: cfg.theta_v,
                });
            }
            state.v_count[i] += 1;
            events.push(ChannelEvent {
                kind: EventKind::V,
                sensor,
                dim: i,
                transmit_time: t as f64 + eta / cfg.phi_v,
                sign: if state.psi[i] > 0.0 { 1 } else { -1 },
            });
            state.psi[i] = 0.0;
        }
    }
    Ok(events)
}

/// Recovers an overshoot from the fractional transmission delay.
pub fn decode_overshoot(transmit_time: f64, phi: f64) -> f64 {
    phi * transmit_time.fract()
}

/// Second-moment statistics of the coefficient vectors across the network.
#[derive(Debug, Clone)]
pub struct NetworkStats {
    pub r: DMatrix<f64>,
    pub r_inv: DMatrix<f64>,
    /// Diagonal of `R^{-1}`.
    pub kappa: Vec<f64>,
    /// Equicorrelation parameter when the matrix has that structure.
    pub equicorr: Option<f64>,
}

/// Builds the normalized correlation matrix `R` from per-sensor coefficient
/// second moments and noise variances, and extracts the `R^{-1}` diagonal.
pub fn correlation_stats(
    second_moments: &[DMatrix<f64>],
    sigma2: &[f64],
) -> Result<NetworkStats> {
    assert_eq!(second_moments.len(), sigma2.len());
    let n = second_moments[0].nrows();
    let mut acc = DMatrix::zeros(n, n);
    for (m, &s2) in second_moments.iter().zip(sigma2) {
        assert!(s2 > 0.0);
        acc += m / s2;
    }
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let rij = acc[(i, j)] / (acc[(i, i)] * acc[(j, j)]).sqrt();
                if rij.abs() >= 1.0 - RHO_SINGULAR_TOL {
                    return Err(Error::SingularR);
                }
                r[(i, j)] = rij;
            }
        }
    }
    let r_inv = spd_inverse(&r).map_err(|_| Error::SingularR)?;
    let kappa = (0..n).map(|i| r_inv[(i, i)]).collect();
    Ok(NetworkStats { r, r_inv, kappa, equicorr: None })
}

const RHO_SINGULAR_TOL: f64 = 1e-9;

impl NetworkStats {
    /// Equicorrelated coefficients: every off-diagonal of `R` equals `r`.
    pub fn equicorrelated(n: usize, r: f64) -> Result<Self> {
        if r >= 1.0 - RHO_SINGULAR_TOL || r < -1.0 / (n as f64 - 1.0) {
            return Err(Error::SingularR);
        }
        let mut m = DMatrix::from_element(n, n, r);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        let r_inv = spd_inverse(&m).map_err(|_| Error::SingularR)?;
        let kappa = (0..n).map(|i| r_inv[(i, i)]).collect();
        Ok(Self { r: m, r_inv, kappa, equicorr: Some(r) })
    }
}

/// Fusion-center approximations and the running trace statistic.
#[derive(Debug, Clone)]
pub struct FusionState {
    pub d_tilde: Vec<f64>,
    pub v_tilde: Vec<f64>,
    /// Running `Tr(U~^{-1})`, maintained by the event-driven recursion.
    pub trace: f64,
    pub kappa: Vec<f64>,
    pub r_inv: DMatrix<f64>,
    pub c_tilde: f64,
    pub epsilon: f64,
}

impl FusionState {
    pub fn new(stats: &NetworkStats, c_tilde: f64, epsilon: f64) -> Self {
        assert!(c_tilde > 0.0 && epsilon > 0.0);
        let n = stats.kappa.len();
        let trace = stats.kappa.iter().map(|k| k / epsilon).sum();
        Self {
            d_tilde: vec![epsilon; n],
            v_tilde: vec![0.0; n],
            trace,
            kappa: stats.kappa.clone(),
            r_inv: stats.r_inv.clone(),
            c_tilde,
            epsilon,
        }
    }

    /// Direct recomputation of the trace statistic; the recursion must agree
    /// with this at every event.
    pub fn trace_recomputed(&self) -> f64 {
        self.kappa.iter().zip(&self.d_tilde).map(|(k, d)| k / d).sum()
    }

    /// `dim,d_tilde,v_tilde` rows.
    pub fn snapshot_rows(&self) -> String {
        let mut out = String::new();
        for i in 0..self.d_tilde.len() {
            out.push_str(&format!("{},{},{}\n", i, self.d_tilde[i], self.v_tilde[i]));
        }
        out
    }

    /// Assembles `U~^{-1} = D~^{-1/2} R^{-1} D~^{-1/2}` and the estimate.
    pub fn estimate(&self) -> DVector<f64> {
        let n = self.d_tilde.len();
        let mut uinv = self.r_inv.clone();
        for i in 0..n {
            for j in 0..n {
                uinv[(i, j)] /= (self.d_tilde[i] * self.d_tilde[j]).sqrt();
            }
        }
        let v = DVector::from_column_slice(&self.v_tilde);
        uinv * v
    }

    /// Trace of the conditional covariance of the fusion estimate given the
    /// coefficient path: the estimate applies the weighting
    /// `A = D~^{-1/2} R^{-1} D~^{-1/2}` to the information vector, whose
    /// conditional covariance is the exact information matrix `u`, so
    /// `Cov = A u A` and this returns `Tr(A u A)`. Used by calibration,
    /// which has offline access to `u`.
    pub fn cov_trace(&self, u: &DMatrix<f64>) -> f64 {
        let n = self.d_tilde.len();
        let mut a = self.r_inv.clone();
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] /= (self.d_tilde[i] * self.d_tilde[j]).sqrt();
            }
        }
        (&a * u * &a).trace()
    }
}

/// Applies a D-bit: grows the dimension's information approximation and
/// updates the trace by the event-driven recursion.
pub fn fc_on_d_bit(fs: &mut FusionState, ev: &ChannelEvent, delta: f64, phi_d: f64) {
    debug_assert_eq!(ev.kind, EventKind::D);
    let q = decode_overshoot(ev.transmit_time, phi_d);
    let inc = delta + q;
    let d_old = fs.d_tilde[ev.dim];
    let d_new = d_old + inc;
    fs.trace -= fs.kappa[ev.dim] * inc / (d_new * d_old);
    fs.d_tilde[ev.dim] = d_new;
}

/// Applies a V-bit: signed threshold-plus-overshoot increment.
pub fn fc_on_v_bit(fs: &mut FusionState, ev: &ChannelEvent, gamma: f64, phi_v: f64) {
    debug_assert_eq!(ev.kind, EventKind::V);
    let eta = decode_overshoot(ev.transmit_time, phi_v);
    fs.v_tilde[ev.dim] += ev.sign as f64 * (gamma + eta);
}

/// Outcome of a decentralized run.
#[derive(Debug, Clone)]
pub struct DecentralizedOutcome {
    /// Stopping time `T~` (the transmit time of the stopping bit).
    pub stop_time: f64,
    pub xhat: DVector<f64>,
    pub fusion: FusionState,
    pub events: Vec<ChannelEvent>,
}

/// Runs the full decentralized protocol: sensors emit level-triggered bits,
/// the fusion center consumes them in transmit-time order and stops at the
/// first D-bit that brings the trace statistic to the threshold.
///
/// Simultaneous transmit times are processed in `(sensor, dim, D-before-V)`
/// order, which is algebraically equivalent to batching them for the trace
/// recursion.
pub fn run_decentralized<F>(
    cfgs: &[SensorConfig],
    stats: &NetworkStats,
    c_tilde: f64,
    epsilon: f64,
    horizon: u64,
    mut obs_fn: F,
) -> Result<DecentralizedOutcome>
where
    F: FnMut(usize, u64) -> Observation,
{
    let n = cfgs[0].dims();
    let mut sensors: Vec<SensorState> = cfgs.iter().map(|c| SensorState::new(c.dims())).collect();
    let mut fs = FusionState::new(stats, c_tilde, epsilon);
    let mut log: Vec<ChannelEvent> = Vec::new();
    debug_assert_eq!(stats.kappa.len(), n);

    for t in 1..=horizon {
        let mut pending: Vec<ChannelEvent> = Vec::new();
        for (k, cfg) in cfgs.iter().enumerate() {
            let obs = obs_fn(k, t);
            pending.extend(sensor_step(&mut sensors[k], cfg, k, &obs, t)?);
        }
        pending.sort_by(|a, b| {
            a.transmit_time
                .total_cmp(&b.transmit_time)
                .then(a.sensor.cmp(&b.sensor))
                .then(a.dim.cmp(&b.dim))
                .then(a.kind.cmp(&b.kind))
        });
        for ev in pending {
            let cfg = &cfgs[ev.sensor];
            match ev.kind {
                EventKind::D => {
                    fc_on_d_bit(&mut fs, &ev, cfg.delta[ev.dim], cfg.phi_d);
                    let stop = fs.trace <= fs.c_tilde;
                    let stop_time = ev.transmit_time;
                    log.push(ev);
                    if stop {
                        let xhat = fs.estimate();
                        return Ok(DecentralizedOutcome {
                            stop_time,
                            xhat,
                            fusion: fs,
                            events: log,
                        });
                    }
                }
                EventKind::V => {
                    fc_on_v_bit(&mut fs, &ev, cfg.gamma[ev.dim], cfg.phi_v);
                    log.push(ev);
                }
            }
        }
    }
    Err(Error::HorizonExceeded(horizon as usize))
}

/// Solves `gamma * tanh(gamma/2) = rhs` for the unique positive root; the
/// left side is strictly increasing from zero.
pub fn gamma_threshold(target_interval: f64, mean_stat: f64) -> Result<f64> {
    let rhs = target_interval * mean_stat;
    if rhs <= 0.0 {
        return Err(Error::NonpositiveTarget(rhs));
    }
    let g = |x: f64| x * (x / 2.0).tanh();
    let mut hi = 1.0;
    while g(hi) < rhs {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NonpositiveTarget(rhs));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < rhs {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

const MAX_BRACKET_EXPANSIONS: usize = 60;

/// Bisection on the fusion-center threshold until the simulated mean squared
/// error of the final estimate hits the target accuracy `C`.
///
/// `sim` runs one full decentralized trial at the given threshold and seed
/// and returns the squared estimation error.
pub fn calibrate_c_tilde<F>(
    c: f64,
    trials: usize,
    base_seed: u64,
    sim: F,
) -> Result<CalibrationResult>
where
    F: Fn(f64, u64) -> Result<f64>,
{
    assert!(c > 0.0 && trials >= 1);
    let tol_of = |se: f64| (1e-3 * c).max(2.0 * se);
    let eval = |c_tilde: f64| -> Result<(f64, f64)> {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for trial in 0..trials {
            let e = sim(c_tilde, trial_seed(base_seed, trial as u64))?;
            sum += e;
            sumsq += e * e;
        }
        let mean = sum / trials as f64;
        let var = (sumsq / trials as f64 - mean * mean).max(0.0);
        Ok((mean, (var / trials as f64).sqrt()))
    };

    let mut lo = c;
    let mut hi = c;
    let (m0, se0) = eval(c)?;
    if (m0 - c).abs() <= tol_of(se0) {
        return Ok(CalibrationResult { threshold: c, achieved_mse: m0, trials, tolerance: tol_of(se0) });
    }
    if m0 < c {
        // realized error undershoots: loosen the threshold
        let mut found = false;
        for _ in 0..MAX_BRACKET_EXPANSIONS {
            hi *= 2.0;
            let (m, se) = eval(hi)?;
            if (m - c).abs() <= tol_of(se) {
                return Ok(CalibrationResult { threshold: hi, achieved_mse: m, trials, tolerance: tol_of(se) });
            }
            if m >= c {
                found = true;
                break;
            }
            lo = hi;
        }
        if !found {
            return Err(Error::BracketFailure { expansions: MAX_BRACKET_EXPANSIONS });
        }
    } else {
        let mut found = false;
        for _ in 0..MAX_BRACKET_EXPANSIONS {
            lo /= 2.0;
            let (m, se) = eval(lo)?;
            if (m - c).abs() <= tol_of(se) {
                return Ok(CalibrationResult { threshold: lo, achieved_mse: m, trials, tolerance: tol_of(se) });
            }
            if m <= c {
                found = true;
                break;
            }
            hi = lo;
        }
        if !found {
            return Err(Error::BracketFailure { expansions: MAX_BRACKET_EXPANSIONS });
        }
    }

    let mut best = (lo, m0, se0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let (m, se) = eval(mid)?;
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
