//! Two-dimensional unconditional stopping problem: value iteration on the
//! `(z11, z22, rho)` grid, boundary-surface extraction and Lagrange-multiplier
//! calibration.
//!
//! Coordinates are `z11 = 1/u11`, `z22 = 1/u22` and the correlation
//! coefficient `rho = u12/sqrt(u11 u22)` of the accumulated information
//! matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::quad::Quadrature;
pub use crate::scalar_dp::IterOpts;
use crate::seeding::trial_seed;

/// Correlations this close to +-1 make the stopping cost unbounded.
pub const RHO_DEGENERATE_TOL: f64 = 1e-9;

/// Grid specification: `nz` points per z-axis on `[0, rz]`, `nr` points on
/// `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct GridSpec3D {
    pub rz: f64,
    pub nz: usize,
    pub nr: usize,
}

impl GridSpec3D {
    /// Default sizes with `Rz = 10/(lambda sigma^2)` capped at 1000.
    pub fn for_lambda(lambda: f64, sigma2: f64) -> Self {
        Self { rz: (10.0 / (lambda * sigma2)).min(1000.0), nz: 61, nr: 21 }
    }

    pub fn with_size(mut self, nz: usize, nr: usize) -> Self {
        self.nz = nz;
        self.nr = nr;
        self
    }

    pub fn dz(&self) -> f64 {
        self.rz / (self.nz - 1) as f64
    }

    pub fn dr(&self) -> f64 {
        2.0 / (self.nr - 1) as f64
    }
}

/// Discretized cost functions over the `(z11, z22, rho)` box.
#[derive(Debug, Clone)]
pub struct Grid3D {
    pub spec: GridSpec3D,
    /// Value array, `nz * nz * nr`, index `i1 + nz*(i2 + nz*i3)`.
    pub v: Vec<f64>,
    /// Stopping-cost array; `+inf` on the `|rho| = 1` slices.
    pub f: Vec<f64>,
    pub lambda: f64,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub min_iterate_increase: f64,
}

impl Grid3D {
    #[inline]
    pub fn idx(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.spec.nz * (i2 + self.spec.nz * i3)
    }

    pub fn z(&self, i: usize) -> f64 {
        i as f64 * self.spec.dz()
    }

    pub fn rho(&self, i3: usize) -> f64 {
        -1.0 + i3 as f64 * self.spec.dr()
    }
}

/// Stopping cost `lambda sigma^2 (z11 + z22)/(1 - rho^2)`.
pub fn stopping_cost_2d(
    z11: f64,
    z22: f64,
    rho: f64,
    lambda: f64,
    sigma2: f64,
) -> Result<f64> {
    assert!(z11 >= 0.0 && z22 >= 0.0);
    if rho.abs() >= 1.0 - RHO_DEGENERATE_TOL {
        return Err(Error::DegenerateCorrelation);
    }
    Ok(lambda * sigma2 * (z11 + z22) / (1.0 - rho * rho))
}

/// Trilinear interpolation of the value array at a (clamped) query point.
///
/// Per-axis weights are the distances to the bracketing grid indices; the
/// eight neighbor contributions are the multiplicative combinations of those
/// weights. Queries on a grid plane collapse to fewer distinct neighbors
/// with the weights summing unchanged.
pub fn trilinear_lookup(grid: &Grid3D, z11: f64, z22: f64, rho: f64) -> f64 {
    let nz = grid.spec.nz;
    let nr = grid.spec.nr;
    let p1 = (z11 / grid.spec.dz()).clamp(0.0, (nz - 1) as f64);
    let p2 = (z22 / grid.spec.dz()).clamp(0.0, (nz - 1) as f64);
    let p3 = ((rho + 1.0) / grid.spec.dr()).clamp(0.0, (nr - 1) as f64);
    interp3(&grid.v, nz, nr, p1, p2, p3)
}

#[inline]
fn axis(p: f64, n: usize) -> (usize, usize, f64, f64) {
    let fl = (p.floor() as usize).min(n - 1);
    let ce = (fl + 1).min(n - 1);
    let wf = 1.0 - (p - fl as f64); // weight of the floor neighbor
    (fl, ce, wf, 1.0 - wf)
}

#[inline]
fn interp3(v: &[f64], nz: usize, nr: usize, p1: f64, p2: f64, p3: f64) -> f64 {
    let (a0, a1, wa0, wa1) = axis(p1, nz);
    let (b0, b1, wb0, wb1) = axis(p2, nz);
    let (c0, c1, wc0, wc1) = axis(p3, nr);
    let plane = nz * nz;
    let at = |i1: usize, i2: usize, i3: usize| v[i1 + nz * i2 + plane * i3];
    wc0 * (wb0 * (wa0 * at(a0, b0, c0) + wa1 * at(a1, b0, c0))
        + wb1 * (wa0 * at(a0, b1, c0) + wa1 * at(a1, b1, c0)))
        + wc1
            * (wb0 * (wa0 * at(a0, b0, c1) + wa1 * at(a1, b0, c1))
                + wb1 * (wa0 * at(a0, b1, c1) + wa1 * at(a1, b1, c1)))
}

fn build_stopping_cost(spec: &GridSpec3D, lambda: f64, sigma2: f64) -> Vec<f64> {
    let (nz, nr) = (spec.nz, spec.nr);
    let dz = spec.dz();
    let dr = spec.dr();
    let mut f = vec![0.0; nz * nz * nr];
    for i3 in 0..nr {
        let rho = -1.0 + i3 as f64 * dr;
        for i2 in 0..nz {
            for i1 in 0..nz {
                let idx = i1 + nz * (i2 + nz * i3);
                f[idx] = if rho.abs() >= 1.0 - RHO_DEGENERATE_TOL {
                    f64::INFINITY
                } else {
                    lambda * sigma2 * (i1 + i2) as f64 * dz / (1.0 - rho * rho)
                };
            }
        }
    }
    f
}

/// Value iteration for the two-dimensional Bellman recursion starting from
/// `V_0 = 0`; the first sweep therefore produces `min(F, 1)`.
pub fn value_iteration_2d(
    lambda: f64,
    sigma2: f64,
    quad: &Quadrature,
    spec: GridSpec3D,
    opts: IterOpts,
) -> Grid3D {
    assert!(lambda > 0.0 && sigma2 > 0.0 && spec.nz >= 2 && spec.nr >= 3);
    let (nz, nr, nh) = (spec.nz, spec.nr, quad.len());
    let dz = spec.dz();
    let dr = spec.dr();
    let f = build_stopping_cost(&spec, lambda, sigma2);

    // per-axis tables: updated z position (in grid index units) and the
    // 1/sqrt(1 + z h^2) factor of the rho update, for every (z index, node)
    let mut zfl = vec![0usize; nz * nh];
    let mut zwf = vec![0.0f64; nz * nh];
    let mut inv_sq = vec![0.0f64; nz * nh];
    for i in 0..nz {
        let z = i as f64 * dz;
        for k in 0..nh {
            let h = quad.nodes[k];
            let denom = 1.0 + z * h * h;
            let zp = z / denom;
            let p = (zp / dz).clamp(0.0, (nz - 1) as f64);
            let fl = (p.floor() as usize).min(nz - 1);
            zfl[i * nh + k] = fl;
            zwf[i * nh + k] = 1.0 - (p - fl as f64);
            inv_sq[i * nh + k] = 1.0 / denom.sqrt();
        }
    }
    let sqz: Vec<f64> = (0..nz).map(|i| (i as f64 * dz).sqrt()).collect();

    let mut v = vec![0.0; nz * nz * nr];
    let mut v_next = vec![0.0; nz * nz * nr];
    let plane = nz * nz;
    let mut iterations = 0;
    let mut converged = false;
    let mut min_increase = f64::INFINITY;

    while iterations < opts.max_iters {
        let mut dif_sq = 0.0f64;
        for i3 in 0..nr {
            let rho = -1.0 + i3 as f64 * dr;
            // the |rho| = 1 slices map onto themselves (infinite stopping
            // cost, so V would grow without bound); their continuation
            // queries are clamped one slice inward to regularize them
            let degenerate = i3 == 0 || i3 == nr - 1;
            let (p3_lo, p3_hi) = if degenerate {
                (1.0, (nr - 2) as f64)
            } else {
                (0.0, (nr - 1) as f64)
            };
            for i2 in 0..nz {
                for i1 in 0..nz {
                    let sq12 = sqz[i1] * sqz[i2];
                    let mut cont = 0.0;
                    for k1 in 0..nh {
                        let t1 = i1 * nh + k1;
                        let (a0, wa0) = (zfl[t1], zwf[t1]);
                        let a1 = (a0 + 1).min(nz - 1);
                        let wa1 = 1.0 - wa0;
                        let h1 = quad.nodes[k1];
                        let w1 = quad.weights[k1];
                        let inv1 = inv_sq[t1];
                        let mut acc = 0.0;
                        for k2 in 0..nh {
                            let t2 = i2 * nh + k2;
                            let (b0, wb0) = (zfl[t2], zwf[t2]);
                            let b1 = (b0 + 1).min(nz - 1);
                            let wb1 = 1.0 - wb0;
                            let h2 = quad.nodes[k2];
                            let w2 = quad.weights[k2];
                            let rho_new = (rho + h1 * h2 * sq12) * inv1 * inv_sq[t2];
                            let p3 = ((rho_new + 1.0) / dr).clamp(p3_lo, p3_hi);
                            let c0 = (p3.floor() as usize).min(nr - 1);
                            let c1 = (c0 + 1).min(nr - 1);
                            let wc0 = 1.0 - (p3 - c0 as f64);
                            let wc1 = 1.0 - wc0;
                            let base0 = plane * c0;
                            let base1 = plane * c1;
                            let row0 = nz * b0;
                            let row1 = nz * b1;
                            let val0 = wb0
                                * (wa0 * v[base0 + row0 + a0] + wa1 * v[base0 + row0 + a1])
                                + wb1
                                    * (wa0 * v[base0 + row1 + a0]
                                        + wa1 * v[base0 + row1 + a1]);
                            let val1 = wb0
                                * (wa0 * v[base1 + row0 + a0] + wa1 * v[base1 + row0 + a1])
                                + wb1
                                    * (wa0 * v[base1 + row1 + a0]
                                        + wa1 * v[base1 + row1 + a1]);
                            acc += w2 * (wc0 * val0 + wc1 * val1);
                        }
                        cont += w1 * acc;
                    }
                    let idx = i1 + nz * i2 + plane * i3;
                    let vi = f[idx].min(1.0 + cont);
                    let d = vi - v[idx];
                    dif_sq += d * d;
                    min_increase = min_increase.min(d);
                    v_next[idx] = vi;
                }
            }
        }
        std::mem::swap(&mut v, &mut v_next);
        iterations += 1;
        let fr_sq: f64 = v.iter().map(|x| x * x).sum();
        if dif_sq.sqrt() <= opts.tol_rel * fr_sq.sqrt() {
            converged = true;
            break;
        }
    }

    Grid3D {
        spec,
        v,
        f,
        lambda,
        sigma2,
        iterations,
        converged,
        min_iterate_increase: min_increase,
    }
}

/// Stopping region of a converged grid plus the transition cells per
/// rho-slice.
#[derive(Debug, Clone)]
pub struct BoundarySurface {
    pub spec: GridSpec3D,
    /// True where `V = F` (stop).
    pub indicator: Vec<bool>,
    /// `(i3, i2, i1)` of the last stopping cell before each transition along
    /// the z11 axis.
    pub transitions: Vec<(usize, usize, usize)>,
}

/// Marks the cells where `V = F` and lists the transition cells.
pub fn extract_surface(grid: &Grid3D) -> BoundarySurface {
    let (nz, nr) = (grid.spec.nz, grid.spec.nr);
    let indicator: Vec<bool> = grid
        .v
        .iter()
        .zip(&grid.f)
        .map(|(&v, &f)| f.is_finite() && (v - f).abs() <= 1e-9 * (1.0 + f.abs()))
        .collect();
    let mut transitions = Vec::new();
    for i3 in 0..nr {
        for i2 in 0..nz {
            for i1 in 0..nz - 1 {
                let a = indicator[i1 + nz * (i2 + nz * i3)];
                let b = indicator[i1 + 1 + nz * (i2 + nz * i3)];
                if a && !b {
                    transitions.push((i3, i2, i1));
                }
            }
        }
    }
    BoundarySurface { spec: grid.spec, indicator, transitions }
}

impl BoundarySurface {
    /// Serializes the transition cells as `rho,z11,z22` rows.
    pub fn export_rows(&self) -> String {
        let dz = self.spec.dz();
        let dr = self.spec.dr();
        let mut out = String::new();
        for &(i3, i2, i1) in &self.transitions {
            let rho = -1.0 + i3 as f64 * dr;
            out.push_str(&format!("{rho},{},{}\n", i1 as f64 * dz, i2 as f64 * dz));
        }
        out
    }
}

/// Nearest-cell membership test of the stopping region. Queries outside the
/// grid range mean "continue".
pub fn unconditional_stop_2d(surface: &BoundarySurface, z11: f64, z22: f64, rho: f64) -> bool {
    let spec = &surface.spec;
    if z11 < 0.0 || z22 < 0.0 || z11 > spec.rz || z22 > spec.rz {
        return false;
    }
    let i1 = ((z11 / spec.dz()).round() as usize).min(spec.nz - 1);
    let i2 = ((z22 / spec.dz()).round() as usize).min(spec.nz - 1);
    let i3 = (((rho + 1.0) / spec.dr()).round().max(0.0) as usize).min(spec.nr - 1);
    surface.indicator[i1 + spec.nz * (i2 + spec.nz * i3)]
}

const TRIAL_STEP_CAP: usize = 1_000_000;

/// Simulates the surface-defined stopping rule and returns the mean and
/// standard error of the realized stopping cost
/// `sigma^2 (z11 + z22)/(1 - rho^2)`, together with the mean stopping time.
pub fn simulate_surface_cost<F>(
    surface: &BoundarySurface,
    sigma2: f64,
    trials: usize,
    base_seed: u64,
    coeff: &F,
) -> (f64, f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> (f64, f64),
{
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut tsum = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(base_seed, trial as u64));
        let (mut u11, mut u22, mut u12) = (0.0f64, 0.0f64, 0.0f64);
        let mut cost = f64::INFINITY;
        let mut t_stop = TRIAL_STEP_CAP;
        for t in 1..=TRIAL_STEP_CAP {
            let (h1, h2) = coeff(&mut rng);
            u11 += h1 * h1;
            u22 += h2 * h2;
            u12 += h1 * h2;
            if u11 > 0.0 && u22 > 0.0 {
                let z11 = 1.0 / u11;
                let z22 = 1.0 / u22;
                let rho = u12 / (u11 * u22).sqrt();
                if unconditional_stop_2d(surface, z11, z22, rho) {
                    cost = sigma2 * (z11 + z22) / (1.0 - rho * rho);
                    t_stop = t;
                    break;
                }
            }
        }
        sum += cost;
        sumsq += cost * cost;
        tsum += t_stop as f64;
    }
    let mean = sum / trials as f64;
    let var = (sumsq / trials as f64 - mean * mean).max(0.0);
    (mean, (var / trials as f64).sqrt(), tsum / trials as f64)
}

/// Controls for the lambda calibration loop.
#[derive(Debug, Clone)]
pub struct Calibrate2dOpts {
    pub sigma2: f64,
    pub nz: usize,
    pub nr: usize,
    pub iter: IterOpts,
    pub trials: usize,
    pub base_seed: u64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub max_bisections: usize,
}

impl Default for Calibrate2dOpts {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            nz: 61,
            nr: 21,
            iter: IterOpts::default(),
            trials: 2000,
            base_seed: 0,
            lambda_lo: 1e-4,
            lambda_hi: 1e4,
            max_bisections: 40,
        }
    }
}

/// Bisection on `lambda` (log scale) until the simulated mean stopping cost
/// matches the target accuracy `C`: larger `lambda` shrinks the stopping
/// region and lowers the realized cost.
pub fn calibrate_lambda<F>(
    c: f64,
    quad: &Quadrature,
    opts: &Calibrate2dOpts,
    coeff: F,
) -> Result<(f64, BoundarySurface)>
where
    F: Fn(&mut ChaCha8Rng) -> (f64, f64),
{
    assert!(c > 0.0);
    let tol_of = |se: f64| (1e-3 * c).max(2.0 * se);
    let solve = |lambda: f64| {
        let spec = GridSpec3D::for_lambda(lambda, opts.sigma2).with_size(opts.nz, opts.nr);
        let grid = value_iteration_2d(lambda, opts.sigma2, quad, spec, opts.iter);
        extract_surface(&grid)
    };
    let eval = |surface: &BoundarySurface| {
        simulate_surface_cost(surface, opts.sigma2, opts.trials, opts.base_seed, &coeff)
    };

    let mut lo = opts.lambda_lo.ln();
    let mut hi = opts.lambda_hi.ln();
    let s_lo = solve(lo.exp());
    let (c_lo, se_lo, _) = eval(&s_lo);
    if (c_lo - c).abs() <= tol_of(se_lo) {
        return Ok((lo.exp(), s_lo));
    }
    let s_hi = solve(hi.exp());
    let (c_hi, se_hi, _) = eval(&s_hi);
    if (c_hi - c).abs() <= tol_of(se_hi) {
        return Ok((hi.exp(), s_hi));
    }
    if !(c_hi <= c && c <= c_lo) {
        return Err(Error::BracketFailure { expansions: 0 });
    }

    let mut best: Option<(f64, BoundarySurface, f64, f64)> = None;
    for _ in 0..opts.max_bisections {
        let mid = 0.5 * (lo + hi);
        let s = solve(mid.exp());
        let (cm, se, _) = eval(&s);
        let done = (cm - c).abs() <= tol_of(se);
        best = Some((mid.exp(), s, cm, se));
        if done {
            break;
        }
        if cm > c {
            lo = mid; // cost too high: grow lambda
        } else {
            hi = mid;
        }
    }
    let (lambda, surface, _, _) = best.expect("at least one bisection step");
    Ok((lambda, surface))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn small_quad() -> Quadrature {
        Quadrature::gaussian_equispaced(11, 4.0)
    }

    fn small_spec() -> GridSpec3D {
        GridSpec3D { rz: 10.0, nz: 21, nr: 11 }
    }

    fn normal_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
        (StandardNormal.sample(rng), StandardNormal.sample(rng))
    }

    #[test]
    fn stopping_cost_values() {
        assert_eq!(stopping_cost_2d(1.0, 1.0, 0.0, 1.0, 1.0).unwrap(), 2.0);
        assert_eq!(stopping_cost_2d(2.0, 1.0, 0.5, 2.0, 1.0).unwrap(), 8.0);
        assert_eq!(
            stopping_cost_2d(1.0, 1.0, 1.0, 1.0, 1.0).unwrap_err(),
            Error::DegenerateCorrelation
        );
    }

    #[test]
    fn trilinear_reproduces_grid_and_linear_fields() {
        let spec = small_spec();
        let mut grid = value_iteration_2d(1.0, 1.0, &small_quad(), spec, IterOpts {
            tol_rel: 1e-6,
            max_iters: 1,
        });
        // grid point is returned exactly
        let q = trilinear_lookup(&grid, grid.z(3), grid.z(5), grid.rho(4));
        assert_eq!(q, grid.v[grid.idx(3, 5, 4)]);

        // constant field
        grid.v.iter_mut().for_each(|v| *v = 7.5);
        assert_eq!(trilinear_lookup(&grid, 1.234, 5.678, -0.3), 7.5);

        // field linear in z11: midpoint of two adjacent grid points is exact
        let nz = spec.nz;
        for i3 in 0..spec.nr {
            for i2 in 0..nz {
                for i1 in 0..nz {
                    grid.v[i1 + nz * (i2 + nz * i3)] = 3.0 * i1 as f64;
                }
            }
        }
        let mid = 0.5 * (grid.z(2) + grid.z(3));
        let got = trilinear_lookup(&grid, mid, grid.z(0), grid.rho(0));
        assert!((got - 7.5).abs() < 1e-12);
    }

    #[test]
    fn first_sweep_is_min_f_one() {
        let grid = value_iteration_2d(1.0, 1.0, &small_quad(), small_spec(), IterOpts {
            tol_rel: 1e-6,
            max_iters: 1,
        });
        for idx in 0..grid.v.len() {
            assert_eq!(grid.v[idx], grid.f[idx].min(1.0));
        }
    }

    #[test]
    fn converged_grid_symmetries() {
        let grid =
            value_iteration_2d(1.0, 1.0, &small_quad(), small_spec(), IterOpts::default());
        assert!(grid.converged);
        let (nz, nr) = (grid.spec.nz, grid.spec.nr);
        let mut max_swap = 0.0f64;
        let mut max_sign = 0.0f64;
        for i3 in 0..nr {
            for i2 in 0..nz {
                for i1 in 0..nz {
                    let a = grid.v[grid.idx(i1, i2, i3)];
                    max_swap = max_swap.max((a - grid.v[grid.idx(i2, i1, i3)]).abs());
                    max_sign = max_sign.max((a - grid.v[grid.idx(i1, i2, nr - 1 - i3)]).abs());
                }
            }
        }
        assert!(max_swap < 1e-6, "z-swap asymmetry {max_swap}");
        assert!(max_sign < 1e-6, "rho-sign asymmetry {max_sign}");
    }

    #[test]
    fn rho_update_stays_in_range() {
        let quad = small_quad();
        let spec = small_spec();
        let dz = spec.dz();
        let mut worst = 0.0f64;
        for i1 in 0..spec.nz {
            for i2 in 0..spec.nz {
                let (z1, z2) = (i1 as f64 * dz, i2 as f64 * dz);
                for i3 in 0..spec.nr {
                    let rho = -1.0 + i3 as f64 * spec.dr();
                    for &h1 in &quad.nodes {
                        for &h2 in &quad.nodes {
                            let r = (rho + h1 * h2 * (z1 * z2).sqrt())
                                / ((1.0 + z1 * h1 * h1) * (1.0 + z2 * h2 * h2)).sqrt();
                            worst = worst.max(r.abs());
                        }
                    }
                }
            }
        }
        assert!(worst <= 1.0 + 1e-12, "updated rho reached {worst}");
    }

    #[test]
    fn cheap_stop_cells_are_in_region() {
        let grid =
            value_iteration_2d(1.0, 1.0, &small_quad(), small_spec(), IterOpts::default());
        let surface = extract_surface(&grid);
        for idx in 0..grid.f.len() {
            if grid.f[idx] < 1.0 {
                assert!(surface.indicator[idx], "F < 1 cell outside stop region");
            }
        }
        assert!(unconditional_stop_2d(&surface, 0.0, 0.0, 0.0));
        assert!(!unconditional_stop_2d(&surface, grid.spec.rz * 2.0, 0.0, 0.0));
    }

    #[test]
    fn regions_nest_in_lambda() {
        let quad = small_quad();
        let spec = small_spec(); // shared grid
        let surfaces: Vec<_> = [100.0, 1.0, 0.01]
            .iter()
            .map(|&l| extract_surface(&value_iteration_2d(l, 1.0, &quad, spec, IterOpts::default())))
            .collect();
        for w in surfaces.windows(2) {
            for idx in 0..w[0].indicator.len() {
                assert!(
                    !w[0].indicator[idx] || w[1].indicator[idx],
                    "stop region does not shrink with lambda"
                );
            }
        }
    }

    #[test]
    fn simulated_cost_decreases_in_lambda() {
        let quad = small_quad();
        let mut prev = f64::INFINITY;
        for &lambda in &[0.01, 1.0, 100.0] {
            let spec = GridSpec3D::for_lambda(lambda, 1.0).with_size(21, 11);
            let grid = value_iteration_2d(lambda, 1.0, &quad, spec, IterOpts::default());
            let surface = extract_surface(&grid);
            let (cost, _, _) = simulate_surface_cost(&surface, 1.0, 500, 5, &normal_pair);
            assert!(cost <= prev, "cost not decreasing in lambda");
            prev = cost;
        }
    }

    #[test]
    fn calibration_closes_the_loop() {
        let quad = small_quad();
        let opts = Calibrate2dOpts {
            nz: 21,
            nr: 11,
            trials: 800,
            base_seed: 3,
            ..Default::default()
        };
        let (lambda, surface) = calibrate_lambda(0.5, &quad, &opts, normal_pair).unwrap();
        assert!(lambda > 0.0);
        let (cost, se, _) = simulate_surface_cost(&surface, 1.0, 800, 3, &normal_pair);
        assert!((cost - 0.5).abs() <= (1e-3 * 0.5f64).max(2.0 * se) + 3.0 * se);
    }
}
