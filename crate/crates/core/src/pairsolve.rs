//! Stationary statistics of one pair: Fredholm iteration and the exact
//! no-drive solution.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::model::PairProblem;
use crate::numerics::{
    damped_fixed_point, dot, ln_lower_incomplete_gamma, rule_weights, FixedPointError, FixedPointReport, Grid,
    NumericsError, Rule,
};
use crate::pairkernel::{KernelContext, KernelError};

/// Boundary function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl BoundaryFunction {
    /// Value at `z`, by linear interpolation inside the grid and by
    /// `e^{rate (z - z_min)}` scaling below it.
    pub fn eval(&self, z: f64, rate: f64) -> f64 {
        let nodes = &self.grid.nodes;
        let n = nodes.len();
        if z >= 0.0 {
            return self.values[n - 1];
        }
        if z <= nodes[0] {
            return self.values[0] * libm::exp(rate * (z - nodes[0]));
        }
        let h = self.grid.step();
        let pos = (z - nodes[0]) / h;
        let k = (libm::floor(pos) as usize).min(n - 2);
        let t = pos - k as f64;
        self.values[k] * (1.0 - t) + self.values[k + 1] * t
    }

    /// Strictly positive and nondecreasing.
    pub fn is_positive_nondecreasing(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0) && self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Grid nodes per e-fold of the fastest kernel rate.
    pub points_per_efold: f64,
    /// Relative size of the neglected tail below `z_min`.
    pub truncation: f64,
    /// Relative sup-norm change between iterates at which the iteration
    /// stops.
    pub tolerance: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Upper bound on the number of grid nodes; coarser spacing beyond it.
    pub max_nodes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            points_per_efold: 8.0,
            truncation: 1e-12,
            tolerance: 1e-10,
            max_iter: 10_000,
            damping: 1.0,
            max_nodes: 4000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("pair has no decay: both resets, one weight and the drive vanish")]
    Degenerate,
    #[error("non-finite value during iteration {0}")]
    NonFiniteValue(usize),
    #[error("normalization integral is not positive")]
    NonPositiveNormalization,
    #[error("negative variance ({0:e}): solution under-resolved or not converged")]
    NegativeVariance(f64),
    #[error("closed form requires an empty drive")]
    DriveNotEmpty,
    #[error("damping must lie in (0, 1]")]
    InvalidDamping,
    #[error("iteration did not converge (residual {:e})", .0.report.final_residual)]
    NotConverged(Box<PairSolution>),
}

/// Converged pair statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSolution {
    pub beta_i: f64,
    pub beta_j: f64,
    pub second_moment_i: f64,
    pub second_moment_j: f64,
    /// `E[λ_i λ_j]`, mean of the evaluations from both sides of the pair.
    pub cross_moment: f64,
    /// Difference between the two one-sided evaluations of the cross moment.
    pub cross_moment_gap: f64,
    pub correlation: f64,
    pub h_i: BoundaryFunction,
    pub h_j: BoundaryFunction,
    pub report: FixedPointReport,
    /// `|𝒩 - 1|` for the returned functions.
    pub normalization_residual: f64,
}

impl PairSolution {
    pub fn covariance(&self) -> f64 {
        self.cross_moment - self.beta_i * self.beta_j
    }

    pub fn variance_i(&self) -> f64 {
        self.second_moment_i - self.beta_i * self.beta_i
    }

    pub fn variance_j(&self) -> f64 {
        self.second_moment_j - self.beta_j * self.beta_j
    }
}

/// Second-order statistics derived from converged boundary functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub second_moment_i: f64,
    pub second_moment_j: f64,
    pub cross_moment_i: f64,
    pub cross_moment_j: f64,
    pub cross_moment: f64,
    pub correlation: f64,
}

/// The discretized Fredholm operator of a pair problem.
///
/// Kernel matrices already include quadrature weights. The Volterra part
/// uses, for row `m`, the end-corrected weights of the sub-grid `0..=m`.
#[derive(Debug, Clone)]
pub struct PairSystem {
    pub ctx_i: KernelContext,
    pub ctx_j: KernelContext,
    pub grid: Grid,
    drive_moments: [f64; 2],
    q_i: Vec<f64>,
    q_j: Vec<f64>,
    r_i: Vec<f64>,
    r_j: Vec<f64>,
    k0: Vec<f64>,
    m0: Vec<f64>,
    src_i: Vec<f64>,
    src_j: Vec<f64>,
}

/// Output of one application of the iteration map.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub h_i: Vec<f64>,
    pub h_j: Vec<f64>,
    /// Normalization integral of the input functions.
    pub normalization: f64,
}

/// Variances below this fraction of the second moment are treated as zero,
/// which is the resolution of the default grid.
const VARIANCE_FLOOR: f64 = 1e-6;

/// Grid adapted to the decay and resolution scales of `ctx`.
pub fn pair_grid(ctx: &KernelContext, config: &SolverConfig) -> Result<Grid, SolveError> {
    // h_i decays like e^{r_i z} when nothing else drives neuron i, so the
    // slower side sets the truncation point.
    let b = ctx.total_drive();
    let (b_i, b_j) = ctx.side_drive();
    let mut slow = (ctx.r_i + b_i).min(ctx.r_j + b_j) + ctx.mu_ij.min(ctx.mu_ji);
    if !(slow > 0.0) {
        slow = ctx.r_i + ctx.r_j + b;
    }
    if !(slow > 0.0) {
        return Err(SolveError::Degenerate);
    }
    if !(config.truncation > 0.0 && config.truncation < 1.0) {
        return Err(NumericsError::InvalidTolerance.into());
    }
    let fast = ctx.r_i + ctx.r_j + b + ctx.max_weight();
    let z_min = libm::log(config.truncation) / slow;
    let n = libm::ceil(-z_min * config.points_per_efold * fast) as usize;
    let n = n.clamp(8, config.max_nodes.max(9) - 1);
    Ok(Grid::uniform(z_min, n, Rule::Gregory)?)
}

impl PairSystem {
    pub fn new(problem: &PairProblem, config: &SolverConfig) -> Result<Self, SolveError> {
        let ctx = KernelContext::new(problem)?;
        let grid = pair_grid(&ctx, config)?;
        Ok(Self::on_grid(ctx, grid, problem))
    }

    /// Discretizes on a caller-supplied uniform grid.
    pub fn on_grid(ctx_i: KernelContext, grid: Grid, problem: &PairProblem) -> Self {
        let ctx_j = ctx_i.swapped();
        let n = grid.len();
        let h = grid.step();
        let z = &grid.nodes;
        let w = &grid.weights;

        let mut row_w = alloc::vec![0.0; n];
        let mut q_i = Vec::with_capacity(n * (n + 1) / 2);
        let mut q_j = Vec::with_capacity(n * (n + 1) / 2);
        let mut r_i = Vec::with_capacity(n * n);
        let mut r_j = Vec::with_capacity(n * n);
        for m in 0..n {
            rule_weights(grid.rule, m, h, &mut row_w);
            let (ri, rj) = (ctx_i.row(z[m]), ctx_j.row(z[m]));
            for l in 0..=m {
                q_i.push(ri.q(z[l]) * row_w[l]);
                q_j.push(rj.q(z[l]) * row_w[l]);
            }
            for l in 0..n {
                r_i.push(ri.r(z[l]) * w[l]);
                r_j.push(rj.r(z[l]) * w[l]);
            }
        }
        let k0 = z.iter().zip(w).map(|(&u, &wl)| ctx_i.kernel_k0(u) * wl).collect();
        let m0 = z.iter().zip(w).map(|(&u, &wl)| ctx_i.kernel_m0(u) * wl).collect();
        let src_i = z.iter().map(|&u| ctx_i.source(u)).collect();
        let src_j = z.iter().map(|&u| ctx_j.source(u)).collect();
        let drive_i: f64 = problem.drive.iter().map(|d| d.beta * d.mu_i).sum();
        let drive_j: f64 = problem.drive.iter().map(|d| d.beta * d.mu_j).sum();
        PairSystem { ctx_i, ctx_j, grid, drive_moments: [drive_i, drive_j], q_i, q_j, r_i, r_j, k0, m0, src_i, src_j }
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `𝒩 = ∫ K_ij(0,u) h_i + ∫ M_ij(0,u) h_j`.
    pub fn normalization(&self, h_i: &[f64], h_j: &[f64]) -> f64 {
        dot(&self.k0, h_i) + dot(&self.m0, h_j)
    }

    /// Initial guess `h_{i,0}(z) = r_j e^{b_i z}`, `h_{j,0}(z) = r_i e^{b_j z}`
    /// (the base rate stands in for a zero reset).
    pub fn initial_guess(&self, problem: &PairProblem) -> (Vec<f64>, Vec<f64>) {
        let (pi, pj) = (&problem.params_i, &problem.params_j);
        let scale_i = if pj.r > 0.0 { pj.r } else { pj.b };
        let scale_j = if pi.r > 0.0 { pi.r } else { pi.b };
        let h_i = self.grid.nodes.iter().map(|&z| scale_i * libm::exp(pi.b * z)).collect();
        let h_j = self.grid.nodes.iter().map(|&z| scale_j * libm::exp(pj.b * z)).collect();
        (h_i, h_j)
    }
}

fn apply(q: &[f64], r: &[f64], src: &[f64], beta: f64, own: &[f64], other: &[f64], inv_norm: f64, out: &mut [f64]) {
    let n = own.len();
    let mut off = 0;
    for m in 0..n {
        let volterra = dot(&q[off..off + m + 1], &own[..m + 1]);
        off += m + 1;
        let fredholm = dot(&r[m * n..(m + 1) * n], other);
        out[m] = (beta * src[m] - volterra - fredholm) * inv_norm;
    }
}

/// One sweep of the normalized iteration: both maps applied with
/// `β_i = h_j(0)`, `β_j = h_i(0)`, then divided by the normalization of the
/// input functions.
pub fn fredholm_step(system: &PairSystem, h_i: &[f64], h_j: &[f64]) -> Result<Step, SolveError> {
    let n = system.len();
    let norm = system.normalization(h_i, h_j);
    if !norm.is_finite() {
        return Err(SolveError::NonFiniteValue(0));
    }
    if norm <= 0.0 {
        return Err(SolveError::NonPositiveNormalization);
    }
    let (beta_i, beta_j) = (h_j[n - 1], h_i[n - 1]);
    let mut out_i = alloc::vec![0.0; n];
    let mut out_j = alloc::vec![0.0; n];
    apply(&system.q_i, &system.r_i, &system.src_i, beta_i, h_i, h_j, 1.0 / norm, &mut out_i);
    apply(&system.q_j, &system.r_j, &system.src_j, beta_j, h_j, h_i, 1.0 / norm, &mut out_j);
    Ok(Step { h_i: out_i, h_j: out_j, normalization: norm })
}

/// Second moments from the rate identity, the cross moment from the
/// derivative of the integral equation at `z = 0`, and the correlation.
pub fn pair_moments(system: &PairSystem, h_i: &[f64], h_j: &[f64]) -> Result<Moments, SolveError> {
    let n = system.len();
    let (ci, cj) = (&system.ctx_i, &system.ctx_j);
    let (beta_i, beta_j) = (h_j[n - 1], h_i[n - 1]);
    let m2_i = ci.r_i * beta_i + ci.mu_ij * beta_j + system.drive_moments[0];
    let m2_j = ci.r_j * beta_j + ci.mu_ji * beta_i + system.drive_moments[1];

    let z = &system.grid.nodes;
    let w = &system.grid.weights;
    let mut int_i = 0.0;
    let mut int_j = 0.0;
    for l in 0..n {
        int_i += w[l] * (ci.kernel_dq0(z[l]) * h_i[l] + ci.kernel_dr0(z[l]) * h_j[l]);
        int_j += w[l] * (cj.kernel_dq0(z[l]) * h_j[l] + cj.kernel_dr0(z[l]) * h_i[l]);
    }
    let base = beta_i * ci.r_i + beta_j * ci.r_j;
    let cross_i = base - int_i;
    let cross_j = base - int_j;
    let cross = 0.5 * (cross_i + cross_j);

    let var_i = m2_i - beta_i * beta_i;
    let var_j = m2_j - beta_j * beta_j;
    for (v, m2) in [(var_i, m2_i), (var_j, m2_j)] {
        if v < -VARIANCE_FLOOR * m2.abs().max(1e-300) {
            return Err(SolveError::NegativeVariance(v));
        }
    }
    let floor = VARIANCE_FLOOR;
    let correlation = if var_i <= floor * m2_i || var_j <= floor * m2_j {
        0.0
    } else {
        (cross - beta_i * beta_j) / libm::sqrt(var_i * var_j)
    };
    Ok(Moments {
        second_moment_i: m2_i,
        second_moment_j: m2_j,
        cross_moment_i: cross_i,
        cross_moment_j: cross_j,
        cross_moment: cross,
        correlation,
    })
}

fn assemble(
    system: &PairSystem,
    h_i: Vec<f64>,
    h_j: Vec<f64>,
    report: FixedPointReport,
) -> Result<PairSolution, SolveError> {
    let n = system.len();
    let mom = pair_moments(system, &h_i, &h_j)?;
    let norm = system.normalization(&h_i, &h_j);
    Ok(PairSolution {
        beta_i: h_j[n - 1],
        beta_j: h_i[n - 1],
        second_moment_i: mom.second_moment_i,
        second_moment_j: mom.second_moment_j,
        cross_moment: mom.cross_moment,
        cross_moment_gap: (mom.cross_moment_i - mom.cross_moment_j).abs(),
        correlation: mom.correlation,
        h_i: BoundaryFunction { grid: system.grid.clone(), values: h_i },
        h_j: BoundaryFunction { grid: system.grid.clone(), values: h_j },
        report,
        normalization_residual: (norm - 1.0).abs(),
    })
}

/// Solves the pair problem by the normalized fixed-point iteration.
pub fn solve_pair(problem: &PairProblem, config: &SolverConfig) -> Result<PairSolution, SolveError> {
    solve_pair_from(problem, config, None)
}

/// [`solve_pair`] starting from a previous solution (resampled onto the new
/// grid when the grids differ).
pub fn solve_pair_from(
    problem: &PairProblem,
    config: &SolverConfig,
    warm: Option<&PairSolution>,
) -> Result<PairSolution, SolveError> {
    let system = PairSystem::new(problem, config)?;
    solve_system(&system, problem, config, warm)
}

/// Iterates on an already discretized system.
pub fn solve_system(
    system: &PairSystem,
    problem: &PairProblem,
    config: &SolverConfig,
    warm: Option<&PairSolution>,
) -> Result<PairSolution, SolveError> {
    let n = system.len();
    let (h_i, h_j) = match warm {
        Some(s) => {
            let (ri, rj) = (problem.params_i.r, problem.params_j.r);
            if s.h_i.grid == system.grid {
                (s.h_i.values.clone(), s.h_j.values.clone())
            } else {
                let z = &system.grid.nodes;
                (z.iter().map(|&x| s.h_i.eval(x, ri)).collect(), z.iter().map(|&x| s.h_j.eval(x, rj)).collect())
            }
        }
        None => system.initial_guess(problem),
    };
    let mut state = h_i;
    state.extend_from_slice(&h_j);

    let map = |x: &[f64]| -> Result<Vec<f64>, SolveError> {
        let step = fredholm_step(system, &x[..n], &x[n..])?;
        let mut out = step.h_i;
        out.extend_from_slice(&step.h_j);
        Ok(out)
    };
    let (state, report) =
        damped_fixed_point(state, map, config.damping, config.tolerance, config.max_iter).map_err(|e| match e {
            FixedPointError::NonFiniteIterate(k) => SolveError::NonFiniteValue(k),
            FixedPointError::InvalidDamping => SolveError::InvalidDamping,
            FixedPointError::Map(e) => e,
        })?;
    let converged = report.converged;
    let (h_i, h_j) = (state[..n].to_vec(), state[n..].to_vec());
    let sol = assemble(system, h_i, h_j, report)?;
    if converged {
        Ok(sol)
    } else {
        Err(SolveError::NotConverged(Box::new(sol)))
    }
}

/// `ln ∫_{-∞}^z exp(r_a u + ∫_u^z r_b (e^{μ v} - 1) dv) du`.
///
/// With `x = (r_b/μ) e^{μ z}` and `s = (r_a + r_b)/μ` the integral equals
/// `e^{x - r_b z} (μ/r_b)^s γ(s, x) / μ`.
pub fn ln_a_integral(r_a: f64, r_b: f64, mu: f64, z: f64) -> Result<f64, SolveError> {
    if r_b == 0.0 || mu == 0.0 {
        if !(r_a > 0.0) {
            return Err(SolveError::Degenerate);
        }
        return Ok(r_a * z - libm::log(r_a));
    }
    if !(r_a + r_b > 0.0) {
        return Err(SolveError::Degenerate);
    }
    let s = (r_a + r_b) / mu;
    let x = r_b / mu * libm::exp(mu * z);
    Ok(x - r_b * z + s * libm::log(mu / r_b) + ln_lower_incomplete_gamma(s, x)? - libm::log(mu))
}

/// Constants `(A_i, A_j)` of the no-drive solution.
pub fn exact_constants(problem: &PairProblem) -> Result<(f64, f64), SolveError> {
    let (ri, rj) = (problem.params_i.r, problem.params_j.r);
    let a_i = libm::exp(ln_a_integral(ri, rj, problem.mu_ij, 0.0)?);
    let a_j = libm::exp(ln_a_integral(rj, ri, problem.mu_ji, 0.0)?);
    Ok((a_i, a_j))
}

/// Closed-form solution of a pair without drive, sampled on the grid the
/// iterative solver would use.
pub fn pair_exact(problem: &PairProblem) -> Result<PairSolution, SolveError> {
    pair_exact_with(problem, &SolverConfig::default())
}

pub fn pair_exact_with(problem: &PairProblem, config: &SolverConfig) -> Result<PairSolution, SolveError> {
    if problem.drive.iter().any(|d| d.beta != 0.0) {
        return Err(SolveError::DriveNotEmpty);
    }
    let mut bare = problem.clone();
    bare.drive.clear();
    let ctx = KernelContext::new(&bare)?;
    let (ri, rj) = (problem.params_i.r, problem.params_j.r);
    // A zero reset makes the closed form 0/0.
    if !(ri > 0.0 && rj > 0.0) {
        return Err(SolveError::Degenerate);
    }
    let (a_i, a_j) = exact_constants(&bare)?;
    let d = a_i * ri + a_j * rj - 1.0;
    let beta_i = a_j * ri * rj / d;
    let beta_j = a_i * ri * rj / d;
    let cross = ri * rj / d;

    let grid = pair_grid(&ctx, config)?;
    let scale = ri * rj / d;
    let mut h_i = Vec::with_capacity(grid.len());
    let mut h_j = Vec::with_capacity(grid.len());
    for &z in &grid.nodes {
        h_i.push(scale * libm::exp(ln_a_integral(ri, rj, problem.mu_ij, z)?));
        h_j.push(scale * libm::exp(ln_a_integral(rj, ri, problem.mu_ji, z)?));
    }
    let system = PairSystem::on_grid(ctx, grid.clone(), &bare);
    let norm = system.normalization(&h_i, &h_j);

    let m2_i = ri * beta_i + problem.mu_ij * beta_j;
    let m2_j = rj * beta_j + problem.mu_ji * beta_i;
    let (var_i, var_j) = (m2_i - beta_i * beta_i, m2_j - beta_j * beta_j);
    let cov = -ri * rj * (a_i * ri - 1.0) * (a_j * rj - 1.0) / (d * d);
    let floor = VARIANCE_FLOOR;
    let correlation =
        if var_i <= floor * m2_i || var_j <= floor * m2_j { 0.0 } else { cov / libm::sqrt(var_i * var_j) };
    Ok(PairSolution {
        beta_i,
        beta_j,
        second_moment_i: m2_i,
        second_moment_j: m2_j,
        cross_moment: cross,
        cross_moment_gap: 0.0,
        correlation,
        h_i: BoundaryFunction { grid: grid.clone(), values: h_i },
        h_j: BoundaryFunction { grid, values: h_j },
        report: FixedPointReport {
            iterations: 0,
            final_residual: 0.0,
            converged: true,
            damping: 1.0,
            residual_history: Vec::new(),
        },
        normalization_residual: (norm - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Drive;
    use alloc::vec;

    #[test]
    fn decoupled_pair() {
        let p = PairProblem::isolated(1.5, 1.0, 2.0, 2.0, 0.0, 0.0);
        let s = solve_pair(&p, &SolverConfig::default()).unwrap();
        assert!((s.beta_i - 1.0).abs() < 1e-6 && (s.beta_j - 2.0).abs() < 2e-6);
        assert!((s.cross_moment - 2.0).abs() < 1e-5);
        assert_eq!(s.correlation, 0.0);
        let e = pair_exact(&p).unwrap();
        assert!((e.beta_i - 1.0).abs() < 1e-12 && (e.beta_j - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_iteration() {
        for &(ri, rj, mij, mji) in &[(1.0, 1.0, 1.0, 1.0), (0.5, 2.0, 10.0, 0.5), (2.0, 1.0, 0.5, 5.0)] {
            let p = PairProblem::isolated(ri, ri, rj, rj, mij, mji);
            let e = pair_exact(&p).unwrap();
            let s = solve_pair(&p, &SolverConfig::default()).unwrap();
            assert!((s.beta_i / e.beta_i - 1.0).abs() < 1e-6, "{} {}", s.beta_i, e.beta_i);
            assert!((s.beta_j / e.beta_j - 1.0).abs() < 1e-6);
            assert!((s.correlation - e.correlation).abs() < 1e-5);
            assert!(s.cross_moment_gap < 1e-6 * s.cross_moment);
            assert!(s.normalization_residual < 1e-9);
            assert!(e.correlation <= 0.0);
        }
    }

    #[test]
    fn one_sided_coupling_exact() {
        let p = PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 0.0, 2.0);
        let e = pair_exact(&p).unwrap();
        assert!((e.beta_i - 1.0).abs() < 1e-12);
        let s = solve_pair(&p, &SolverConfig::default()).unwrap();
        assert!((s.beta_j / e.beta_j - 1.0).abs() < 1e-6);
    }

    #[test]
    fn drive_rejected_by_exact() {
        let mut p = PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        p.drive.push(Drive::new(1.0, 1.0, 0.0));
        assert_eq!(pair_exact(&p).unwrap_err(), SolveError::DriveNotEmpty);
    }

    #[test]
    fn warm_start_on_other_grid() {
        let mut p = PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 1.0, 0.0);
        p.drive = vec![Drive::new(2.0, 1.0, 0.0), Drive::new(2.0, 0.0, 1.0), Drive::new(1.0, 1.0, 1.0)];
        let cfg = SolverConfig::default();
        let s0 = solve_pair(&p, &cfg).unwrap();
        p.drive[2].beta = 1.2;
        let cold = solve_pair(&p, &cfg).unwrap();
        let warm = solve_pair_from(&p, &cfg, Some(&s0)).unwrap();
        assert!((cold.beta_i - warm.beta_i).abs() < 1e-9);
        assert!(warm.report.iterations < cold.report.iterations);
    }
}
