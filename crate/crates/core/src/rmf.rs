//! Replica mean-field self-consistency: first-order, pair-partition and
//! all-pair limits.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::model::{extract_pair_full, Drive, NetworkSpec, PairProblem, PartitionError, PartitionSpec};
use crate::numerics::FixedPointReport;
use crate::pairsolve::{pair_exact_with, solve_pair_from, PairSolution, SolveError, SolverConfig};
use crate::singlesolve::{single_rate, Input, SingleError, SingleProblem};

/// Block update order of the outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    /// Each block sees the rates updated earlier in the same sweep.
    GaussSeidel,
    /// Each block sees the rates from the start of the sweep.
    Jacobi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmfConfig {
    /// Stop when no rate moves the map by more than this.
    pub tolerance: f64,
    pub damping: f64,
    pub max_iter: usize,
    pub sweep: Sweep,
    /// Starting rates; base rates when absent.
    pub initial: Option<Vec<f64>>,
    pub solver: SolverConfig,
}

impl Default for RmfConfig {
    fn default() -> Self {
        RmfConfig {
            tolerance: 1e-9,
            damping: 1.0,
            max_iter: 2000,
            sweep: Sweep::GaussSeidel,
            initial: None,
            solver: SolverConfig { tolerance: 1e-12, ..SolverConfig::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RmfError {
    #[error("analytical limits require a network without relaxation")]
    RelaxationUnsupported,
    #[error(transparent)]
    InvalidPartition(#[from] PartitionError),
    #[error("initial rates must have one entry per neuron")]
    InitialLength,
    #[error("pair ({i},{j}): {source}")]
    Pair { i: usize, j: usize, source: SolveError },
    #[error("neuron {k}: {source}")]
    Single { k: usize, source: SingleError },
    #[error("self-consistency did not converge (residual {:e})", .0.report.final_residual)]
    NotConverged(Box<RmfSolution>),
}

/// Statistics of one pair block at the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub i: usize,
    pub j: usize,
    pub beta_i: f64,
    pub beta_j: f64,
    pub cross_moment: f64,
    pub covariance: f64,
    pub correlation: f64,
}

impl PairStats {
    fn from_solution(i: usize, j: usize, s: &PairSolution) -> Self {
        PairStats {
            i,
            j,
            beta_i: s.beta_i,
            beta_j: s.beta_j,
            cross_moment: s.cross_moment,
            covariance: s.covariance(),
            correlation: s.correlation,
        }
    }
}

/// Contextual rates of the all-pair limit.
#[derive(Debug, Clone, PartialEq)]
pub struct AllPairRates {
    /// `beta_ctx[i][j] = β_i^j`, `None` for unconnected pairs.
    pub beta_ctx: Vec<Vec<Option<f64>>>,
    /// Mean of the defined contextual rates of each neuron.
    pub aggregate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmfSolution {
    /// Per-neuron rates (aggregate rates in all-pair mode).
    pub rates: Vec<f64>,
    pub contextual: Option<AllPairRates>,
    /// Pair blocks with their second-order statistics; empty in first order.
    pub pairs: Vec<PairStats>,
    pub report: FixedPointReport,
    pub initial: Vec<f64>,
}

fn check(spec: &NetworkSpec, config: &RmfConfig) -> Result<Vec<f64>, RmfError> {
    if !spec.no_relaxation() {
        return Err(RmfError::RelaxationUnsupported);
    }
    match &config.initial {
        Some(v) if v.len() != spec.len() => Err(RmfError::InitialLength),
        Some(v) => Ok(v.clone()),
        None => Ok(spec.neurons.iter().map(|n| n.b).collect()),
    }
}

fn single_problem(spec: &NetworkSpec, k: usize, rates: &[f64]) -> SingleProblem {
    SingleProblem {
        params: spec.neurons[k],
        drive: spec.inputs(k).map(|l| Input { beta: rates[l], mu: spec.weights[k][l] }).collect(),
    }
}

fn single(spec: &NetworkSpec, k: usize, rates: &[f64]) -> Result<f64, RmfError> {
    single_rate(&single_problem(spec, k, rates)).map_err(|source| RmfError::Single { k, source })
}

fn pair_solve(problem: &PairProblem, config: &SolverConfig, warm: Option<&PairSolution>) -> Result<PairSolution, SolveError> {
    solve_pair_from(problem, config, warm)
}

fn new_report(damping: f64) -> FixedPointReport {
    FixedPointReport { iterations: 0, final_residual: f64::INFINITY, converged: false, damping, residual_history: Vec::new() }
}

/// First-order limit: every neuron is its own replica constituent.
pub fn solve_first_order(spec: &NetworkSpec, config: &RmfConfig) -> Result<RmfSolution, RmfError> {
    solve_pair_partition(spec, &PartitionSpec::all_singletons(spec.len()), config)
}

enum Block {
    Single(usize),
    Pair(usize, usize, usize),
}

/// Pair-partition limit: pairs solve the Fredholm problem, singletons the
/// one-neuron problem, all under Poisson input at the current rates.
pub fn solve_pair_partition(
    spec: &NetworkSpec,
    partition: &PartitionSpec,
    config: &RmfConfig,
) -> Result<RmfSolution, RmfError> {
    partition.validate(spec.len())?;
    let initial = check(spec, config)?;
    let k = spec.len();

    // Blocks in order of their smallest neuron.
    let mut blocks: Vec<(usize, Block)> = partition.singletons.iter().map(|&s| (s, Block::Single(s))).collect();
    for (n, &(i, j)) in partition.pairs.iter().enumerate() {
        blocks.push((i.min(j), Block::Pair(i, j, n)));
    }
    blocks.sort_by_key(|b| b.0);

    let mut rates = initial.clone();
    let mut sols: Vec<Option<PairSolution>> = vec![None; partition.pairs.len()];
    let mut report = new_report(config.damping);
    let d = config.damping;
    for it in 1..=config.max_iter {
        let snapshot = rates.clone();
        let mut res: f64 = 0.0;
        for (_, block) in &blocks {
            let view: &[f64] = if config.sweep == Sweep::Jacobi { &snapshot } else { &rates };
            match *block {
                Block::Single(s) => {
                    let new = single(spec, s, view)?;
                    res = res.max((new - rates[s]).abs());
                    rates[s] += d * (new - rates[s]);
                }
                Block::Pair(i, j, n) => {
                    let problem = extract_pair_full(spec, i, j, view).expect("partition indices validated");
                    let sol = pair_solve(&problem, &config.solver, sols[n].as_ref())
                        .map_err(|source| RmfError::Pair { i, j, source })?;
                    res = res.max((sol.beta_i - rates[i]).abs()).max((sol.beta_j - rates[j]).abs());
                    rates[i] += d * (sol.beta_i - rates[i]);
                    rates[j] += d * (sol.beta_j - rates[j]);
                    sols[n] = Some(sol);
                }
            }
        }
        report.iterations = it;
        report.final_residual = res;
        report.residual_history.push(res);
        if res <= config.tolerance {
            report.converged = true;
            break;
        }
    }
    let pairs = partition
        .pairs
        .iter()
        .zip(&sols)
        .filter_map(|(&(i, j), s)| s.as_ref().map(|s| PairStats::from_solution(i, j, s)))
        .collect();
    debug_assert_eq!(rates.len(), k);
    let sol = RmfSolution { rates, contextual: None, pairs, report, initial };
    if sol.report.converged {
        Ok(sol)
    } else {
        Err(RmfError::NotConverged(Box::new(sol)))
    }
}

/// Connected pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn connected_pairs(spec: &NetworkSpec) -> Vec<(usize, usize)> {
    let k = spec.len();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if spec.connected(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

fn aggregate(ctx: &[Vec<Option<f64>>], fallback: &[f64]) -> Vec<f64> {
    ctx.iter()
        .zip(fallback)
        .map(|(row, &f)| {
            let (s, n) = row.iter().flatten().fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
            if n == 0 {
                f
            } else {
                s / n as f64
            }
        })
        .collect()
}

/// All-pair limit over every connected pair, each driven by the aggregate
/// rates of the other neurons. Neurons without a partner fall back to the
/// one-neuron map.
pub fn solve_all_pair(spec: &NetworkSpec, config: &RmfConfig) -> Result<RmfSolution, RmfError> {
    let initial = check(spec, config)?;
    let k = spec.len();
    let pairs = connected_pairs(spec);
    let mut ctx: Vec<Vec<Option<f64>>> = vec![vec![None; k]; k];
    for &(i, j) in &pairs {
        ctx[i][j] = Some(initial[i]);
        ctx[j][i] = Some(initial[j]);
    }
    let lonely: Vec<usize> = (0..k).filter(|&i| ctx[i].iter().all(|c| c.is_none())).collect();
    let mut singles = initial.clone();
    let mut agg = aggregate(&ctx, &singles);
    let mut sols: Vec<Option<PairSolution>> = vec![None; pairs.len()];
    let mut report = new_report(config.damping);
    let d = config.damping;

    for it in 1..=config.max_iter {
        let snapshot = agg.clone();
        // Undamped map values, to measure the residual on aggregates.
        let mut mapped = ctx.clone();
        for (n, &(i, j)) in pairs.iter().enumerate() {
            let view: &[f64] = if config.sweep == Sweep::Jacobi { &snapshot } else { &agg };
            let problem = extract_pair_full(spec, i, j, view).expect("connected pair indices are valid");
            let sol = pair_solve(&problem, &config.solver, sols[n].as_ref())
                .map_err(|source| RmfError::Pair { i, j, source })?;
            mapped[i][j] = Some(sol.beta_i);
            mapped[j][i] = Some(sol.beta_j);
            let (old_i, old_j) = (ctx[i][j].unwrap(), ctx[j][i].unwrap());
            ctx[i][j] = Some(old_i + d * (sol.beta_i - old_i));
            ctx[j][i] = Some(old_j + d * (sol.beta_j - old_j));
            sols[n] = Some(sol);
            if config.sweep == Sweep::GaussSeidel {
                agg = aggregate(&ctx, &singles);
            }
        }
        let mut res: f64 = 0.0;
        for &s in &lonely {
            let view: &[f64] = if config.sweep == Sweep::Jacobi { &snapshot } else { &agg };
            let new = single(spec, s, view)?;
            res = res.max((new - singles[s]).abs());
            singles[s] += d * (new - singles[s]);
        }
        let mapped_agg = aggregate(&mapped, &singles);
        for i in 0..k {
            if !lonely.contains(&i) {
                res = res.max((mapped_agg[i] - snapshot[i]).abs());
            }
        }
        agg = aggregate(&ctx, &singles);
        report.iterations = it;
        report.final_residual = res;
        report.residual_history.push(res);
        if res <= config.tolerance {
            report.converged = true;
            break;
        }
    }
    let stats = pairs
        .iter()
        .zip(&sols)
        .filter_map(|(&(i, j), s)| s.as_ref().map(|s| PairStats::from_solution(i, j, s)))
        .collect();
    let sol = RmfSolution {
        rates: agg.clone(),
        contextual: Some(AllPairRates { beta_ctx: ctx, aggregate: agg }),
        pairs: stats,
        report,
        initial,
    };
    if sol.report.converged {
        Ok(sol)
    } else {
        Err(RmfError::NotConverged(Box::new(sol)))
    }
}

/// Solution of the homogeneous symmetric consistency problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSolution {
    pub beta: f64,
    pub correlation: f64,
    pub covariance: f64,
    pub report: FixedPointReport,
}

/// Symmetric pair `(b, r)` with intra weight `mu`, where each neuron also
/// receives `kappa` private Poisson streams of weight `mu` at the unknown
/// rate `β` itself.
pub fn symmetric_chain_rate(r: f64, b: f64, mu: f64, kappa: usize, config: &RmfConfig) -> Result<ChainSolution, RmfError> {
    let problem_at = |beta: f64| {
        let mut p = PairProblem::isolated(b, r, b, r, mu, mu);
        for _ in 0..kappa {
            p.drive.push(Drive::new(beta, mu, 0.0));
            p.drive.push(Drive::new(beta, 0.0, mu));
        }
        p
    };
    let err = |source| RmfError::Pair { i: 0, j: 1, source };
    if kappa == 0 || mu == 0.0 {
        let mut report = new_report(config.damping);
        report.converged = true;
        report.final_residual = 0.0;
        if mu == 0.0 {
            return Ok(ChainSolution { beta: r, correlation: 0.0, covariance: 0.0, report });
        }
        let s = pair_exact_with(&problem_at(0.0), &config.solver).map_err(err)?;
        return Ok(ChainSolution { beta: s.beta_i, correlation: s.correlation, covariance: s.covariance(), report });
    }
    let mut beta = config.initial.as_ref().and_then(|v| v.first().copied()).unwrap_or(b);
    let mut warm: Option<PairSolution> = None;
    let mut report = new_report(config.damping);
    for it in 1..=config.max_iter {
        let s = pair_solve(&problem_at(beta), &config.solver, warm.as_ref()).map_err(err)?;
        let res = (s.beta_i - beta).abs();
        beta += config.damping * (s.beta_i - beta);
        warm = Some(s);
        report.iterations = it;
        report.final_residual = res;
        report.residual_history.push(res);
        if res <= config.tolerance {
            report.converged = true;
            break;
        }
    }
    let s = warm.expect("at least one iteration");
    let out = ChainSolution { beta, correlation: s.correlation, covariance: s.covariance(), report };
    if out.report.converged {
        Ok(out)
    } else {
        Err(RmfError::NotConverged(Box::new(RmfSolution {
            rates: vec![beta, beta],
            contextual: None,
            pairs: Vec::new(),
            report: out.report,
            initial: vec![b, b],
        })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NeuronParams;

    fn net(k: usize, edges: &[(usize, usize, f64)]) -> NetworkSpec {
        let mut w = vec![vec![0.0; k]; k];
        for &(i, j, m) in edges {
            w[i][j] = m;
        }
        NetworkSpec { neurons: vec![NeuronParams::new(1.0, 1.0); k], weights: w }
    }

    #[test]
    fn uncoupled_first_order() {
        let s = net(3, &[]);
        let cfg = RmfConfig { damping: 1.0, ..RmfConfig::default() };
        let sol = solve_first_order(&s, &cfg).unwrap();
        assert_eq!(sol.rates, vec![1.0; 3]);
        assert_eq!(sol.report.iterations, 1);
    }

    #[test]
    fn first_order_differs_from_pair() {
        let s = net(2, &[(0, 1, 1.0), (1, 0, 1.0)]);
        let fo = solve_first_order(&s, &RmfConfig::default()).unwrap();
        let part = PartitionSpec { pairs: vec![(0, 1)], singletons: vec![] };
        let pp = solve_pair_partition(&s, &part, &RmfConfig::default()).unwrap();
        let exact = crate::pairsolve::pair_exact(&crate::model::PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((pp.rates[0] - exact.beta_i).abs() < 1e-6);
        assert!((fo.rates[0] - pp.rates[0]).abs() > 1e-3);
    }

    #[test]
    fn all_pair_uncoupled_triangle() {
        let s = net(3, &[]);
        let sol = solve_all_pair(&s, &RmfConfig::default()).unwrap();
        assert_eq!(sol.rates, vec![1.0; 3]);
    }

    #[test]
    fn chain_limits() {
        let cfg = RmfConfig::default();
        let c = symmetric_chain_rate(1.0, 1.0, 0.0, 1, &cfg).unwrap();
        assert!((c.beta - 1.0).abs() < 1e-9);
        let c0 = symmetric_chain_rate(1.0, 1.0, 2.0, 0, &cfg).unwrap();
        let e = crate::pairsolve::pair_exact(&PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 2.0, 2.0)).unwrap();
        assert!((c0.beta - e.beta_i).abs() < 1e-12);
    }
}
