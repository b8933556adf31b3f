//! Sweep presets (`--fig2`, `--fig3a/b/c`) and turning command-line
//! arguments into concrete problems.
//!
//! Every sweep preset uses values in `(0, 10]`.

use anyhow::{bail, ensure, Context, Result};
use pairmf_core::model::PairProblem;
use pairmf_core::rmf::connected_pairs;
use pairmf_core::simulate::{generate_ring, generate_tree};
use pairmf_core::{Drive, NetworkSpec, PartitionSpec};

use crate::cli::{NetworkArgs, PairArgs};
use crate::format::{read_json, read_network, PairFile};

pub const SWEEP_RANGE: (f64, f64) = (0.0, 10.0);
pub const FIG2_GRID: (usize, usize) = (40, 40);
pub const FIG3_GRID: (usize, usize) = (20, 20);

/// Undriven pair with `b = r = 1`.
pub fn fig2() -> PairProblem {
    PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 0.0, 0.0)
}

/// Pair with `b = r = 1` receiving private streams 3 → 1 and 4 → 2 and a
/// shared stream 5 → {1, 2}, all with unit weights. Rates are left at zero
/// for the sweep to fill in: x drives streams 1 and 2, y drives stream 3.
pub fn fig3(mu_12: f64, mu_21: f64) -> PairProblem {
    let mut p = PairProblem::isolated(1.0, 1.0, 1.0, 1.0, mu_12, mu_21);
    p.drive = vec![Drive::new(0.0, 1.0, 0.0), Drive::new(0.0, 0.0, 1.0), Drive::new(0.0, 1.0, 1.0)];
    p
}

pub fn fig3a() -> PairProblem {
    fig3(0.0, 0.0)
}

pub fn fig3b() -> PairProblem {
    fig3(1.0, 0.0)
}

pub fn fig3c() -> PairProblem {
    fig3(1.0, 1.0)
}

/// What one sweep axis sets.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Mu12,
    Mu21,
    /// Rates of these drive streams (0-based).
    Drives(Vec<usize>),
}

impl Axis {
    fn apply(&self, p: &mut PairProblem, v: f64) {
        match self {
            Axis::Mu12 => p.mu_ij = v,
            Axis::Mu21 => p.mu_ji = v,
            Axis::Drives(ds) => {
                for &d in ds {
                    p.drive[d].beta = v;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub x: Axis,
    pub y: Axis,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// A single problem or a row-major grid of problems.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPlan {
    pub base: PairProblem,
    pub sweep: Option<Sweep>,
}

/// One grid point: its axis values and the problem there.
pub type Point = (Option<(f64, f64)>, PairProblem);

impl PairPlan {
    pub fn points(&self) -> Vec<Point> {
        let Some(s) = &self.sweep else {
            return vec![(None, self.base.clone())];
        };
        let mut out = Vec::with_capacity(s.xs.len() * s.ys.len());
        for &x in &s.xs {
            for &y in &s.ys {
                let mut p = self.base.clone();
                s.x.apply(&mut p, x);
                s.y.apply(&mut p, y);
                out.push((Some((x, y)), p));
            }
        }
        out
    }
}

/// `k = 1..=n` values `lo + (hi - lo) k / n`.
pub fn axis_values(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(['x', 'X']).with_context(|| format!("--sweep expects NxM, got `{s}`"))?;
    let n: usize = a.trim().parse().with_context(|| format!("--sweep: bad size `{a}`"))?;
    let m: usize = b.trim().parse().with_context(|| format!("--sweep: bad size `{b}`"))?;
    ensure!(n > 0 && m > 0, "--sweep sizes must be positive");
    Ok((n, m))
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').with_context(|| format!("--range expects LO:HI, got `{s}`"))?;
    let lo: f64 = a.trim().parse().with_context(|| format!("--range: bad bound `{a}`"))?;
    let hi: f64 = b.trim().parse().with_context(|| format!("--range: bad bound `{b}`"))?;
    ensure!(lo.is_finite() && hi.is_finite() && lo < hi, "--range needs LO < HI");
    Ok((lo, hi))
}

fn drive_axis(ids: &[usize], n_drive: usize) -> Result<Axis> {
    let mut out = Vec::with_capacity(ids.len());
    for &d in ids {
        ensure!(d >= 1 && d <= n_drive, "drive stream {d} does not exist (there are {n_drive})");
        out.push(d - 1);
    }
    Ok(Axis::Drives(out))
}

pub fn pair_plan(args: &PairArgs) -> Result<PairPlan> {
    let (base, preset_grid, preset_axes) = if let Some(path) = &args.config {
        let file: PairFile = read_json(path)?;
        (file.to_problem()?, None, None)
    } else if args.fig2 {
        (fig2(), Some(FIG2_GRID), None)
    } else if args.fig3a || args.fig3b || args.fig3c {
        let p = if args.fig3a {
            fig3a()
        } else if args.fig3b {
            fig3b()
        } else {
            fig3c()
        };
        (p, Some(FIG3_GRID), Some((vec![1, 2], vec![3])))
    } else {
        let mut p = PairProblem::isolated(args.b1, args.r1, args.b2, args.r2, args.mu12, args.mu21);
        p.drive = args.drive.iter().map(|d| Drive::new(d.beta, d.mu_1, d.mu_2)).collect();
        (p, None, None)
    };
    base.check().context("invalid pair problem")?;

    let grid = match &args.sweep {
        Some(s) => Some(parse_grid(s)?),
        None => preset_grid,
    };
    let Some((n, m)) = grid else {
        ensure!(args.x_drives.is_empty() && args.y_drives.is_empty(), "drive axes need --sweep");
        return Ok(PairPlan { base, sweep: None });
    };
    let (lo, hi) = match &args.range {
        Some(r) => parse_range(r)?,
        None => SWEEP_RANGE,
    };
    let (xd, yd) = match (&preset_axes, args.x_drives.is_empty() && args.y_drives.is_empty()) {
        (Some((x, y)), true) => (x.clone(), y.clone()),
        _ => (args.x_drives.clone(), args.y_drives.clone()),
    };
    let (x, y) = match (xd.is_empty(), yd.is_empty()) {
        (true, true) => (Axis::Mu12, Axis::Mu21),
        (false, false) => (drive_axis(&xd, base.drive.len())?, drive_axis(&yd, base.drive.len())?),
        _ => bail!("give both --x-drives and --y-drives, or neither to sweep the weights"),
    };
    Ok(PairPlan { base, sweep: Some(Sweep { x, y, xs: axis_values(lo, hi, n), ys: axis_values(lo, hi, m) }) })
}

/// Resolved network source. `partition` is the one stored with the network
/// (tree or file); rings have none.
pub struct Network {
    pub spec: NetworkSpec,
    pub partition: Option<PartitionSpec>,
}

pub fn network(args: &NetworkArgs) -> Result<Network> {
    if let Some(path) = &args.network {
        let (spec, partition) = read_network(path)?;
        return Ok(Network { spec, partition });
    }
    if let Some(levels) = args.tree {
        ensure!(levels <= 20, "--tree {levels} is too deep");
        ensure!(args.lo >= 0.0 && args.lo <= args.hi, "tree weights need 0 <= LO <= HI");
        let (spec, part) = generate_tree(levels, args.lo, args.hi, args.seed);
        return Ok(Network { spec, partition: Some(part) });
    }
    if let Some(k) = args.ring {
        ensure!(k >= 2, "a ring needs at least two neurons");
        ensure!(args.mu >= 0.0 && args.mu.is_finite(), "ring weight must be non-negative");
        ensure!(args.reset >= 0.0 && args.reset.is_finite(), "ring reset must be non-negative");
        return Ok(Network { spec: generate_ring(k, args.mu, args.reset), partition: None });
    }
    bail!("no network given: use --network FILE, --tree LEVELS or --ring K")
}

/// Neighbour pairs `(1,2), (3,4), …` and a trailing singleton when `k` is odd.
pub fn ring_partition(k: usize) -> PartitionSpec {
    let pairs = (0..k / 2).map(|n| (2 * n, 2 * n + 1)).collect();
    let singletons = if k % 2 == 1 { vec![k - 1] } else { vec![] };
    PartitionSpec { pairs, singletons }
}

/// Partition for pair modes: the stored one, else neighbour pairs on a ring.
pub fn pair_partition(args: &NetworkArgs, net: &Network) -> Result<PartitionSpec> {
    match (&net.partition, args.ring) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(k)) => Ok(ring_partition(k)),
        (None, None) => bail!("pair mode needs a partition in the network file"),
    }
}

/// Parses `1-2,3-4` into 0-based pairs.
pub fn parse_pairs(s: &str, k: usize) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (a, b) = item.split_once('-').with_context(|| format!("--pairs: expected I-J, got `{item}`"))?;
        let i: usize = a.trim().parse().with_context(|| format!("--pairs: bad index `{a}`"))?;
        let j: usize = b.trim().parse().with_context(|| format!("--pairs: bad index `{b}`"))?;
        ensure!(i >= 1 && j >= 1 && i <= k && j <= k && i != j, "--pairs: `{item}` is not a pair of neurons 1..={k}");
        out.push((i - 1, j - 1));
    }
    Ok(out)
}

/// Pairs measured by default: partition pairs, else connected pairs.
pub fn default_pairs(spec: &NetworkSpec, partition: Option<&PartitionSpec>) -> Vec<(usize, usize)> {
    match partition {
        Some(p) => p.pairs.clone(),
        None => connected_pairs(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_values_exclude_lower_end() {
        assert_eq!(axis_values(0.0, 10.0, 4), vec![2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn grids_and_ranges() {
        assert_eq!(parse_grid("40x20").unwrap(), (40, 20));
        assert!(parse_grid("40").is_err() && parse_grid("0x3").is_err());
        assert_eq!(parse_range("0.5:2").unwrap(), (0.5, 2.0));
        assert!(parse_range("2:1").is_err());
    }

    #[test]
    fn pairs_are_one_based() {
        assert_eq!(parse_pairs("1-2, 4-3", 4).unwrap(), vec![(0, 1), (3, 2)]);
        assert!(parse_pairs("0-1", 4).is_err() && parse_pairs("1-5", 4).is_err() && parse_pairs("2-2", 4).is_err());
    }

    #[test]
    fn odd_ring_partition() {
        let p = ring_partition(5);
        assert_eq!(p.pairs, vec![(0, 1), (2, 3)]);
        assert_eq!(p.singletons, vec![4]);
        p.validate(5).unwrap();
    }
}
