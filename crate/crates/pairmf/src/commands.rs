//! Command implementations. Each writes its CSV files and a manifest and
//! reports whether every solver converged.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use pairmf_core::pairsolve::{pair_exact_with, solve_pair, PairSolution, SolveError, SolverConfig};
use pairmf_core::rmf::{RmfError, Sweep};
use pairmf_core::simulate::{Estimate, SampleMode, SimEstimate};
use pairmf_core::{
    simulate, solve_all_pair, solve_first_order, solve_pair_partition, PairProblem, ReplicaMode, RmfConfig, RmfSolution,
    SimConfig,
};
use rayon::prelude::*;

use crate::cli::{
    Command, CompareArgs, ExportArgs, GridArgs, NetworkArgs, OutputArgs, PairArgs, ReplicaArg, RerunArgs, RmfArgs, RmfMode,
    SampleArg, SimArgs, SimulateArgs, SolverArgs, SweepOrder,
};
use crate::format::{num, write_json, NetworkFile};
use crate::manifest::{Manifest, SCHEMA};
use crate::presets;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    NotConverged,
}

impl Status {
    fn and(self, other: Status) -> Status {
        if self == Status::Ok {
            other
        } else {
            self
        }
    }
}

pub fn run(cmd: &Command) -> Result<Status> {
    let cmd = canonical_paths(cmd)?;
    match &cmd {
        Command::PairSolve(a) => pair_command(&cmd, a, false),
        Command::PairExact(a) => pair_command(&cmd, a, true),
        Command::Rmf(a) => rmf_command(&cmd, a),
        Command::Simulate(a) => simulate_command(&cmd, a),
        Command::Compare(a) => compare_command(&cmd, a),
        Command::ExportNetwork(a) => export_command(a),
        Command::Rerun(a) => rerun_command(a),
    }
}

/// Input files are recorded by absolute path so manifests re-run from
/// anywhere.
fn canonical_paths(cmd: &Command) -> Result<Command> {
    let mut cmd = cmd.clone();
    let fix = |p: &mut Option<PathBuf>| -> Result<()> {
        if let Some(path) = p {
            *path = fs::canonicalize(&*path).with_context(|| format!("{}", path.display()))?;
        }
        Ok(())
    };
    match &mut cmd {
        Command::PairSolve(a) | Command::PairExact(a) => fix(&mut a.config)?,
        Command::Rmf(a) => fix(&mut a.network.network)?,
        Command::Simulate(a) => fix(&mut a.network.network)?,
        Command::Compare(a) => fix(&mut a.network.network)?,
        Command::ExportNetwork(a) => fix(&mut a.network.network)?,
        Command::Rerun(_) => {}
    }
    Ok(cmd)
}

struct Outputs {
    dir: PathBuf,
    stem: String,
    files: Vec<PathBuf>,
    start: Instant,
}

impl Outputs {
    fn new(args: &OutputArgs, default_stem: &str) -> Result<Self> {
        let stem = args.name.clone().unwrap_or_else(|| default_stem.to_string());
        ensure!(!stem.is_empty() && !stem.contains(['/', '\\']), "--name must be a plain file stem");
        fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
        Ok(Outputs { dir: args.out.clone(), stem, files: Vec::new(), start: Instant::now() })
    }

    fn path(&self, suffix: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.{ext}", self.stem))
    }

    fn csv(&mut self, suffix: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(suffix, "csv");
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("{}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn finish(self, cmd: &Command, seeds: Vec<u64>) -> Result<()> {
        let path = self.path(".manifest", "json");
        let m = Manifest::new(cmd, seeds, self.start.elapsed().as_secs_f64(), self.files);
        m.write(&path)?;
        Ok(())
    }
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building the worker pool")
}

fn solver_config(g: &GridArgs) -> Result<SolverConfig> {
    ensure!(g.ppe > 0.0 && g.ppe.is_finite(), "--ppe must be positive");
    ensure!(g.pair_tolerance > 0.0, "--pair-tolerance must be positive");
    ensure!(g.pair_max_iter > 0, "--pair-max-iter must be positive");
    Ok(SolverConfig { points_per_efold: g.ppe, tolerance: g.pair_tolerance, max_iter: g.pair_max_iter, ..SolverConfig::default() })
}

fn rmf_config(s: &SolverArgs) -> Result<RmfConfig> {
    ensure!(s.tolerance > 0.0, "--tolerance must be positive");
    ensure!(s.damping > 0.0 && s.damping <= 1.0, "--damping must lie in (0, 1]");
    ensure!(s.max_iter > 0, "--max-iter must be positive");
    let sweep = match s.sweep_order {
        SweepOrder::GaussSeidel => Sweep::GaussSeidel,
        SweepOrder::Jacobi => Sweep::Jacobi,
    };
    Ok(RmfConfig {
        tolerance: s.tolerance,
        damping: s.damping,
        max_iter: s.max_iter,
        sweep,
        initial: None,
        solver: solver_config(&s.grid)?,
    })
}

const PAIR_HEADER: [&str; 14] = [
    "point",
    "x",
    "y",
    "beta_1",
    "beta_2",
    "second_moment_1",
    "second_moment_2",
    "cross_moment",
    "covariance",
    "correlation",
    "normalization_residual",
    "fixed_point_residual",
    "iterations",
    "converged",
];

fn pair_row(n: usize, xy: Option<(f64, f64)>, s: &PairSolution) -> Vec<String> {
    let (x, y) = match xy {
        Some((x, y)) => (num(x), num(y)),
        None => (String::new(), String::new()),
    };
    vec![
        n.to_string(),
        x,
        y,
        num(s.beta_i),
        num(s.beta_j),
        num(s.second_moment_i),
        num(s.second_moment_j),
        num(s.cross_moment),
        num(s.covariance()),
        num(s.correlation),
        num(s.normalization_residual),
        num(s.report.final_residual),
        s.report.iterations.to_string(),
        s.report.converged.to_string(),
    ]
}

fn solve_point(p: &PairProblem, config: &SolverConfig, exact: bool) -> Result<PairSolution, SolveError> {
    if exact {
        pair_exact_with(p, config)
    } else {
        solve_pair(p, config)
    }
}

fn pair_command(cmd: &Command, args: &PairArgs, exact: bool) -> Result<Status> {
    let plan = presets::pair_plan(args)?;
    let config = solver_config(&args.grid)?;
    let mut out = Outputs::new(&args.output, if exact { "pair_exact" } else { "pair_solve" })?;
    let points = plan.points();
    let results: Vec<Result<PairSolution, SolveError>> =
        pool(args.output.jobs)?.install(|| points.par_iter().map(|(_, p)| solve_point(p, &config, exact)).collect());
    let mut status = Status::Ok;
    let mut rows = Vec::with_capacity(points.len());
    for (n, ((xy, _), r)) in points.iter().zip(results).enumerate() {
        let s = match r {
            Ok(s) => s,
            Err(SolveError::NotConverged(s)) => {
                status = Status::NotConverged;
                *s
            }
            Err(e) => bail!("point {n}: {e}"),
        };
        rows.push(pair_row(n, *xy, &s));
    }
    out.csv("", &strings(&PAIR_HEADER), &rows)?;
    out.finish(cmd, Vec::new())?;
    Ok(status)
}

fn split_rmf(r: Result<RmfSolution, RmfError>) -> Result<(RmfSolution, Status)> {
    match r {
        Ok(s) => Ok((s, Status::Ok)),
        Err(RmfError::NotConverged(s)) => Ok((*s, Status::NotConverged)),
        Err(e) => Err(e.into()),
    }
}

fn rmf_command(cmd: &Command, args: &RmfArgs) -> Result<Status> {
    let net = presets::network(&args.network)?;
    let config = rmf_config(&args.solver)?;
    let mut out = Outputs::new(&args.output, "rmf")?;
    let result = match args.mode {
        RmfMode::First => solve_first_order(&net.spec, &config),
        RmfMode::Pair => solve_pair_partition(&net.spec, &presets::pair_partition(&args.network, &net)?, &config),
        RmfMode::All => solve_all_pair(&net.spec, &config),
    };
    let (sol, status) = split_rmf(result)?;
    let rows: Vec<Vec<String>> = sol.rates.iter().enumerate().map(|(k, b)| vec![(k + 1).to_string(), num(*b)]).collect();
    out.csv("", &strings(&["neuron", "rate"]), &rows)?;
    let header = strings(&["i", "j", "beta_i", "beta_j", "cross_moment", "covariance", "correlation"]);
    let rows: Vec<Vec<String>> = sol
        .pairs
        .iter()
        .map(|p| {
            vec![
                (p.i + 1).to_string(),
                (p.j + 1).to_string(),
                num(p.beta_i),
                num(p.beta_j),
                num(p.cross_moment),
                num(p.covariance),
                num(p.correlation),
            ]
        })
        .collect();
    out.csv("_pairs", &header, &rows)?;
    out.finish(cmd, Vec::new())?;
    Ok(status)
}

fn seeds(net: &NetworkArgs, sim: &SimArgs) -> Result<Vec<u64>> {
    ensure!(sim.seeds >= 1, "--seeds must be at least 1");
    let first = sim.sim_seed.unwrap_or(net.seed);
    (0..sim.seeds).map(|n| first.checked_add(n).context("seed overflow")).collect()
}

fn sim_config(sim: &SimArgs, seed: u64, pairs: Vec<(usize, usize)>) -> SimConfig {
    let mut c = SimConfig::new(seed, sim.t_measure).with_pairs(pairs);
    if let Some(w) = sim.t_warmup {
        c.t_warmup = w;
    }
    c.batches = sim.batches;
    c.sample_mode = match sim.sample {
        SampleArg::Time => SampleMode::TimeIntegral,
        SampleArg::Event => SampleMode::EventEmbedded,
    };
    c
}

fn run_seeds(
    spec: &pairmf_core::NetworkSpec,
    mode: &ReplicaMode,
    configs: &[SimConfig],
    jobs: usize,
) -> Result<Vec<SimEstimate>> {
    let runs: Vec<_> = pool(jobs)?.install(|| configs.par_iter().map(|c| simulate(spec, mode, c)).collect());
    runs.into_iter().zip(configs).map(|(r, c)| r.with_context(|| format!("simulation with seed {}", c.seed))).collect()
}

/// Inverse-variance weighted mean. Estimates with zero error dominate;
/// without finite errors the plain mean is returned with an infinite error.
pub fn merge(ests: &[Estimate]) -> Estimate {
    let exact: Vec<f64> = ests.iter().filter(|e| e.se == 0.0).map(|e| e.mean).collect();
    if !exact.is_empty() {
        return Estimate { mean: exact.iter().sum::<f64>() / exact.len() as f64, se: 0.0 };
    }
    let finite: Vec<&Estimate> = ests.iter().filter(|e| e.se.is_finite()).collect();
    if finite.is_empty() {
        let mean = ests.iter().map(|e| e.mean).sum::<f64>() / ests.len() as f64;
        return Estimate { mean, se: f64::INFINITY };
    }
    let w: f64 = finite.iter().map(|e| 1.0 / (e.se * e.se)).sum();
    let mean = finite.iter().map(|e| e.mean / (e.se * e.se)).sum::<f64>() / w;
    Estimate { mean, se: 1.0 / w.sqrt() }
}

struct Merged {
    rates: Vec<Estimate>,
    cov: Vec<Estimate>,
    rho: Vec<Estimate>,
}

fn merged(runs: &[SimEstimate]) -> Merged {
    let k = runs[0].k();
    let np = runs[0].pairs.len();
    let pick = |f: &dyn Fn(&SimEstimate) -> Estimate| merge(&runs.iter().map(f).collect::<Vec<_>>());
    Merged {
        rates: (0..k).map(|i| pick(&|r| r.rates[i])).collect(),
        cov: (0..np).map(|p| pick(&|r| r.pairs[p].covariance)).collect(),
        rho: (0..np).map(|p| pick(&|r| r.pairs[p].correlation)).collect(),
    }
}

fn simulate_command(cmd: &Command, args: &SimulateArgs) -> Result<Status> {
    let net = presets::network(&args.network)?;
    let k = net.spec.len();
    let mode = match args.replica {
        ReplicaArg::Original => ReplicaMode::Original,
        ReplicaArg::First => ReplicaMode::FirstOrder { m: args.m },
        ReplicaArg::Pair => ReplicaMode::PairPartition { m: args.m, partition: presets::pair_partition(&args.network, &net)? },
        ReplicaArg::All => ReplicaMode::AllPair { m: args.m },
    };
    let pairs = match &args.sim.pairs {
        Some(s) => presets::parse_pairs(s, k)?,
        None => match &mode {
            ReplicaMode::PairPartition { partition, .. } => partition.pairs.clone(),
            _ => presets::default_pairs(&net.spec, net.partition.as_ref()),
        },
    };
    let seeds = seeds(&args.network, &args.sim)?;
    let configs: Vec<SimConfig> = seeds
        .iter()
        .map(|&s| SimConfig { record_spikes: args.spikes, ..sim_config(&args.sim, s, pairs.clone()) })
        .collect();
    let mut out = Outputs::new(&args.output, "simulate")?;
    let runs = run_seeds(&net.spec, &mode, &configs, args.output.jobs)?;

    let mut header = strings(&["seed", "K", "mode", "t_measure"]);
    for i in 1..=k {
        header.push(format!("beta_{i}"));
        header.push(format!("beta_se_{i}"));
    }
    for &(i, j) in &pairs {
        header.push(format!("cov_{}_{}", i + 1, j + 1));
        header.push(format!("cov_se_{}_{}", i + 1, j + 1));
    }
    let row = |seed: String, rates: &[Estimate], cov: &[Estimate]| -> Vec<String> {
        let mut r = vec![seed, k.to_string(), mode.label(), num(args.sim.t_measure)];
        for e in rates.iter().chain(cov) {
            r.push(num(e.mean));
            r.push(num(e.se));
        }
        r
    };
    let mut rows: Vec<Vec<String>> = runs
        .iter()
        .map(|e| {
            let cov: Vec<Estimate> = e.pairs.iter().map(|p| p.covariance).collect();
            row(e.seed.to_string(), &e.rates, &cov)
        })
        .collect();
    if runs.len() > 1 {
        let m = merged(&runs);
        rows.push(row("merged".into(), &m.rates, &m.cov));
    }
    out.csv("", &header, &rows)?;
    if args.spikes {
        let rows: Vec<Vec<String>> = runs
            .iter()
            .flat_map(|e| {
                e.spikes.iter().map(move |s| vec![e.seed.to_string(), num(s.t), (s.neuron + 1).to_string(), s.unit.to_string()])
            })
            .collect();
        out.csv("_spikes", &strings(&["seed", "t", "neuron", "unit"]), &rows)?;
    }
    out.finish(cmd, seeds)?;
    Ok(Status::Ok)
}

fn compare_command(cmd: &Command, args: &CompareArgs) -> Result<Status> {
    let net = presets::network(&args.network)?;
    let config = rmf_config(&args.solver)?;
    let pairs = match &args.sim.pairs {
        Some(s) => presets::parse_pairs(s, net.spec.len())?,
        None => presets::default_pairs(&net.spec, net.partition.as_ref()),
    };
    let seeds = seeds(&args.network, &args.sim)?;
    let configs: Vec<SimConfig> = seeds.iter().map(|&s| sim_config(&args.sim, s, pairs.clone())).collect();
    let mut out = Outputs::new(&args.output, "compare")?;

    let runs = run_seeds(&net.spec, &ReplicaMode::Original, &configs, args.output.jobs)?;
    let sim = merged(&runs);
    let (first, s1) = split_rmf(solve_first_order(&net.spec, &config))?;
    let (second, s2) = match &net.partition {
        Some(p) => split_rmf(solve_pair_partition(&net.spec, p, &config))?,
        None => split_rmf(solve_all_pair(&net.spec, &config))?,
    };

    let header = strings(&["neuron", "sim_rate", "sim_se", "first_rate", "pair_rate", "first_abs_err", "pair_abs_err"]);
    let rows: Vec<Vec<String>> = (0..net.spec.len())
        .map(|k| {
            let s = sim.rates[k];
            vec![
                (k + 1).to_string(),
                num(s.mean),
                num(s.se),
                num(first.rates[k]),
                num(second.rates[k]),
                num((first.rates[k] - s.mean).abs()),
                num((second.rates[k] - s.mean).abs()),
            ]
        })
        .collect();
    out.csv("_rates", &header, &rows)?;

    let stats: HashMap<(usize, usize), (f64, f64)> = second
        .pairs
        .iter()
        .flat_map(|p| [((p.i, p.j), (p.covariance, p.correlation)), ((p.j, p.i), (p.covariance, p.correlation))])
        .collect();
    let header = strings(&[
        "i",
        "j",
        "sim_cov",
        "sim_cov_se",
        "first_cov",
        "pair_cov",
        "first_cov_abs_err",
        "pair_cov_abs_err",
        "sim_rho",
        "sim_rho_se",
        "pair_rho",
    ]);
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .enumerate()
        .map(|(n, &(i, j))| {
            let (c, r) = (sim.cov[n], sim.rho[n]);
            let (pc, pr) = stats.get(&(i, j)).copied().unwrap_or((f64::NAN, f64::NAN));
            vec![
                (i + 1).to_string(),
                (j + 1).to_string(),
                num(c.mean),
                num(c.se),
                num(0.0),
                num(pc),
                num(c.mean.abs()),
                num((pc - c.mean).abs()),
                num(r.mean),
                num(r.se),
                num(pr),
            ]
        })
        .collect();
    out.csv("_pairs", &header, &rows)?;
    out.finish(cmd, seeds)?;
    Ok(s1.and(s2))
}

fn export_command(args: &ExportArgs) -> Result<Status> {
    let net = presets::network(&args.network)?;
    write_json(&args.file, &NetworkFile::from_spec(&net.spec, net.partition.as_ref()))?;
    Ok(Status::Ok)
}

fn rerun_command(args: &RerunArgs) -> Result<Status> {
    let m = Manifest::read(&args.manifest)?;
    ensure!(m.schema == SCHEMA, "unsupported manifest schema `{}`", m.schema);
    let mut cmd = m.config;
    if let Some(dir) = &args.out {
        set_out(&mut cmd, dir)?;
    }
    run(&cmd)
}

fn set_out(cmd: &mut Command, dir: &Path) -> Result<()> {
    let out = match cmd {
        Command::PairSolve(a) | Command::PairExact(a) => &mut a.output,
        Command::Rmf(a) => &mut a.output,
        Command::Simulate(a) => &mut a.output,
        Command::Compare(a) => &mut a.output,
        Command::ExportNetwork(_) | Command::Rerun(_) => bail!("manifest records a command without outputs"),
    };
    out.out = dir.to_path_buf();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_variance_merge() {
        let m = merge(&[Estimate { mean: 1.0, se: 1.0 }, Estimate { mean: 3.0, se: 1.0 }]);
        assert_eq!(m.mean, 2.0);
        assert!((m.se - 0.5f64.sqrt()).abs() < 1e-15);
        let m = merge(&[Estimate { mean: 1.0, se: 0.1 }, Estimate { mean: 2.0, se: 0.2 }]);
        assert!((m.mean - 1.2).abs() < 1e-12);
        assert_eq!(merge(&[Estimate { mean: 4.0, se: 0.0 }, Estimate { mean: 1.0, se: 1.0 }]).mean, 4.0);
    }
}
