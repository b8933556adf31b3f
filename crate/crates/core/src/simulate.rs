//! Exact event-driven simulation of LGL networks and of their finite
//! replica versions.
//!
//! Without relaxation intensities are constant between events, so the next
//! event time is exponential with the total intensity and the spiking unit is
//! a categorical draw. Relaxing units use thinning against the envelope
//! `max(λ(t_0), b)`, which bounds a trajectory relaxing monotonically toward
//! `b`.
//!
//! Statistics are exact time integrals of `λ`, `λ²` and `λ_u λ_v`,
//! accumulated lazily: a unit's integrals are brought up to date only when its
//! intensity changes or a batch closes.
//!
//! Random draws come from one ChaCha8 stream per run. Per event: the waiting
//! time, the unit choice, the thinning test when the chosen unit relaxes,
//! then routing draws for target neurons in increasing index.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::model::{validate, NetworkSpec, NeuronParams, PartitionSpec, Tau, ValidationError};

/// What is averaged between events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Exact time averages over inter-event intervals.
    TimeIntegral,
    /// Averages of the pre-event state over event epochs (Palm-biased).
    EventEmbedded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub t_warmup: f64,
    pub t_measure: f64,
    /// Number of equal batches the measurement window is cut into for
    /// standard errors.
    pub batches: usize,
    pub sample_mode: SampleMode,
    /// Neuron pairs whose joint statistics are accumulated.
    pub pairs: Vec<(usize, usize)>,
    /// Pair whose next-spiker frequencies are tracked.
    pub palm_pair: Option<(usize, usize)>,
    /// Keep every spike of the measurement window.
    pub record_spikes: bool,
}

impl SimConfig {
    /// Time-integral sampling, 100 batches, warmup a tenth of the window.
    pub fn new(seed: u64, t_measure: f64) -> Self {
        SimConfig {
            seed,
            t_warmup: t_measure / 10.0,
            t_measure,
            batches: 100,
            sample_mode: SampleMode::TimeIntegral,
            pairs: Vec::new(),
            palm_pair: None,
            record_spikes: false,
        }
    }

    pub fn with_pairs(mut self, pairs: Vec<(usize, usize)>) -> Self {
        self.pairs = pairs;
        self
    }
}

/// Network to simulate: the original one or a finite-`M` replica network.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicaMode {
    Original,
    /// Every neuron is a constituent; `m` replicas.
    FirstOrder { m: usize },
    /// Pairs and singletons of `partition` are the constituents.
    PairPartition { m: usize, partition: PartitionSpec },
    /// Every connected pair is a constituent.
    AllPair { m: usize },
}

impl ReplicaMode {
    pub fn label(&self) -> String {
        use alloc::format;
        match self {
            ReplicaMode::Original => "original".into(),
            ReplicaMode::FirstOrder { m } => format!("first_order(M={m})"),
            ReplicaMode::PairPartition { m, .. } => format!("pair_partition(M={m})"),
            ReplicaMode::AllPair { m } => format!("all_pair(M={m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Invalid(#[from] ValidationError),
    #[error("invalid mode: {0}")]
    InvalidMode(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("pair ({0},{1}) is not available in this mode")]
    UnknownPair(usize, usize),
    #[error("total intensity vanished at t = {0}")]
    ZeroTotalIntensity(f64),
}

/// Point estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    /// Mean of per-batch values with the batch-means standard error.
    pub fn from_batches(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Estimate { mean, se: f64::INFINITY };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Estimate { mean, se: libm::sqrt(var / n) }
    }

    /// Jackknife over batches: `full` is the statistic on all batches,
    /// `leave_out[b]` the statistic without batch `b`.
    pub fn jackknife(full: f64, leave_out: &[f64]) -> Self {
        let n = leave_out.len() as f64;
        if leave_out.len() < 2 {
            return Estimate { mean: full, se: f64::INFINITY };
        }
        let m = leave_out.iter().sum::<f64>() / n;
        let var = leave_out.iter().map(|v| (v - m) * (v - m)).sum::<f64>() * (n - 1.0) / n;
        Estimate { mean: full, se: libm::sqrt(var) }
    }

    /// `|mean - x| / se`.
    pub fn z_score(&self, x: f64) -> f64 {
        (self.mean - x).abs() / self.se
    }
}

/// Raw sums of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub duration: f64,
    /// Normalizer of the intensity sums: the duration for time integrals, the
    /// number of events for event sampling.
    pub weight: f64,
    /// Per neuron, summed over its copies.
    pub spikes: Vec<u64>,
    pub lam: Vec<f64>,
    pub lam2: Vec<f64>,
    /// Per tracked pair: sums of `λ_u, λ_v, λ_u², λ_v², λ_u λ_v` over copies.
    pub pairs: Vec<[f64; 5]>,
    /// Next-spiker counts: `[followed by the first member, transitions]`.
    pub palm: [u64; 2],
}

/// One recorded spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spike {
    pub t: f64,
    pub neuron: usize,
    /// Index of the simulated copy within the replica network.
    pub unit: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEstimate {
    pub i: usize,
    pub j: usize,
    pub cross: Estimate,
    pub covariance: Estimate,
    pub correlation: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalmEstimate {
    pub pi_i: Estimate,
    pub pi_j: Estimate,
    pub transitions: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub seed: u64,
    pub mode: String,
    pub t_measure: f64,
    /// Number of simulated units carrying each neuron.
    pub copies: Vec<usize>,
    /// Spike-count rates.
    pub rates: Vec<Estimate>,
    /// Time-averaged intensities.
    pub mean_intensity: Vec<Estimate>,
    pub second_moments: Vec<Estimate>,
    /// `E[λ_i²] - r_i β_i - Σ_j μ_ij β_j - (b_i - E[λ_i])/τ_i`, per batch.
    pub second_moment_gap: Vec<Estimate>,
    pub pairs: Vec<PairEstimate>,
    pub spike_counts: Vec<u64>,
    pub events: u64,
    pub elapsed_model_time: f64,
    pub palm: Option<PalmEstimate>,
    pub batches: Vec<BatchStats>,
    pub spikes: Vec<Spike>,
}

impl SimEstimate {
    pub fn k(&self) -> usize {
        self.rates.len()
    }
}

struct SumTree {
    n: usize,
    t: Vec<f64>,
}

impl SumTree {
    fn new(len: usize) -> Self {
        let n = len.next_power_of_two().max(1);
        SumTree { n, t: vec![0.0; 2 * n] }
    }

    fn set(&mut self, i: usize, v: f64) {
        let mut p = i + self.n;
        self.t[p] = v;
        p /= 2;
        while p >= 1 {
            self.t[p] = self.t[2 * p] + self.t[2 * p + 1];
            p /= 2;
        }
    }

    fn total(&self) -> f64 {
        if self.n == 1 {
            self.t[1]
        } else {
            self.t[1]
        }
    }

    fn find(&self, mut x: f64) -> usize {
        let mut p = 1;
        while p < self.n {
            if x < self.t[2 * p] {
                p *= 2;
            } else {
                x -= self.t[2 * p];
                p = 2 * p + 1;
            }
        }
        let mut i = p - self.n;
        // Rounding can push the search onto an empty leaf at the right end.
        while self.t[i + self.n] <= 0.0 && i > 0 {
            i -= 1;
        }
        i
    }
}

struct Rng(ChaCha8Rng);

impl Rng {
    /// Uniform on the open interval (0, 1).
    fn open01(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    fn below(&mut self, n: usize) -> usize {
        let range = n as u64;
        let threshold = range.wrapping_neg() % range;
        loop {
            let m = (self.0.next_u64() as u128) * (range as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Uniform replica other than `m` among `count`.
    fn other_replica(&mut self, m: usize, count: usize) -> usize {
        let x = self.below(count - 1);
        if x >= m {
            x + 1
        } else {
            x
        }
    }
}

#[derive(Clone, Copy)]
struct Unit {
    neuron: usize,
    replica: usize,
    /// Context index and side in all-pair mode.
    ctx: Option<(usize, usize)>,
    kappa: f64,
    b: f64,
    r: f64,
    lam: f64,
    t_ref: f64,
}

impl Unit {
    fn at(&self, t: f64) -> f64 {
        if self.kappa == 0.0 {
            self.lam
        } else {
            self.b + (self.lam - self.b) * libm::exp(-self.kappa * (t - self.t_ref))
        }
    }

    /// Baseline `b` used in the closed-form integrals (0 without relaxation).
    fn base(&self) -> f64 {
        if self.kappa == 0.0 {
            0.0
        } else {
            self.b
        }
    }
}

/// `∫_0^Δ e^{-κ s} ds`.
fn phi(kappa: f64, dt: f64) -> f64 {
    if kappa == 0.0 {
        dt
    } else {
        -libm::expm1(-kappa * dt) / kappa
    }
}

enum Routing {
    Original,
    Partition { m: usize, partner: Vec<Option<usize>> },
    AllPair { m: usize, ctxs: Vec<(usize, usize)>, ctx_of: Vec<Vec<usize>>, lonely_base: Vec<usize> },
}

struct Topology {
    units: Vec<Unit>,
    copies: Vec<usize>,
    /// `out[i]` lists `(k, μ_ki)` with `μ_ki > 0`, increasing `k`.
    out: Vec<Vec<(usize, f64)>>,
    routing: Routing,
    /// Unit pairs of every tracked neuron pair.
    pair_units: Vec<Vec<(usize, usize)>>,
}

fn unit_from(p: &NeuronParams, neuron: usize, replica: usize, ctx: Option<(usize, usize)>) -> Unit {
    let kappa = match p.tau {
        Tau::Infinite => 0.0,
        Tau::Finite(t) => 1.0 / t,
    };
    Unit { neuron, replica, ctx, kappa, b: p.b, r: p.r, lam: p.b, t_ref: 0.0 }
}

fn connected_pairs(spec: &NetworkSpec) -> Vec<(usize, usize)> {
    crate::rmf::connected_pairs(spec)
}

impl Topology {
    fn build(spec: &NetworkSpec, mode: &ReplicaMode, pairs: &[(usize, usize)]) -> Result<Self, SimError> {
        let k = spec.len();
        let out: Vec<Vec<(usize, f64)>> = (0..k)
            .map(|i| (0..k).filter(|&t| spec.weights[t][i] > 0.0).map(|t| (t, spec.weights[t][i])).collect())
            .collect();
        for &(i, j) in pairs {
            if i >= k || j >= k || i == j {
                return Err(SimError::UnknownPair(i, j));
            }
        }
        let replicated = |m: usize, partition: PartitionSpec| -> Result<Topology, SimError> {
            if m < 2 {
                return Err(SimError::InvalidMode("replica count must be at least 2"));
            }
            partition.validate(k).map_err(|_| SimError::InvalidMode("partition does not cover the network"))?;
            let mut units = Vec::with_capacity(k * m);
            for (i, p) in spec.neurons.iter().enumerate() {
                for rep in 0..m {
                    units.push(unit_from(p, i, rep, None));
                }
            }
            let pair_units =
                pairs.iter().map(|&(i, j)| (0..m).map(|rep| (i * m + rep, j * m + rep)).collect()).collect();
            Ok(Topology {
                units,
                copies: vec![m; k],
                out: out.clone(),
                routing: Routing::Partition { m, partner: partition.partners(k) },
                pair_units,
            })
        };
        match mode {
            ReplicaMode::Original => {
                let units = spec.neurons.iter().enumerate().map(|(i, p)| unit_from(p, i, 0, None)).collect();
                Ok(Topology {
                    units,
                    copies: vec![1; k],
                    out,
                    routing: Routing::Original,
                    pair_units: pairs.iter().map(|&p| vec![p]).collect(),
                })
            }
            ReplicaMode::FirstOrder { m } => replicated(*m, PartitionSpec::all_singletons(k)),
            ReplicaMode::PairPartition { m, partition } => replicated(*m, partition.clone()),
            ReplicaMode::AllPair { m } => {
                let m = *m;
                if m < 2 {
                    return Err(SimError::InvalidMode("replica count must be at least 2"));
                }
                let ctxs = connected_pairs(spec);
                let mut ctx_of = vec![Vec::new(); k];
                for (c, &(i, j)) in ctxs.iter().enumerate() {
                    ctx_of[i].push(c);
                    ctx_of[j].push(c);
                }
                let mut units = Vec::new();
                for (c, &(i, j)) in ctxs.iter().enumerate() {
                    for rep in 0..m {
                        units.push(unit_from(&spec.neurons[i], i, rep, Some((c, 0))));
                        units.push(unit_from(&spec.neurons[j], j, rep, Some((c, 1))));
                    }
                }
                let mut lonely_base = vec![usize::MAX; k];
                let mut copies: Vec<usize> = ctx_of.iter().map(|c| c.len() * m).collect();
                for i in 0..k {
                    if ctx_of[i].is_empty() {
                        lonely_base[i] = units.len();
                        copies[i] = m;
                        for rep in 0..m {
                            units.push(unit_from(&spec.neurons[i], i, rep, None));
                        }
                    }
                }
                let mut pair_units = Vec::new();
                for &(i, j) in pairs {
                    let (a, b) = (i.min(j), i.max(j));
                    let c = ctxs.iter().position(|&p| p == (a, b)).ok_or(SimError::UnknownPair(i, j))?;
                    let (si, sj) = if i < j { (0, 1) } else { (1, 0) };
                    pair_units.push((0..m).map(|rep| ((c * m + rep) * 2 + si, (c * m + rep) * 2 + sj)).collect());
                }
                Ok(Topology { units, copies, out, routing: Routing::AllPair { m, ctxs, ctx_of, lonely_base }, pair_units })
            }
        }
    }
}

#[derive(Clone, Copy)]
enum Change {
    Reset,
    Jump(f64),
}

struct Engine<'a> {
    topo: Topology,
    tree: SumTree,
    relaxing: Vec<bool>,
    unit_acc: Vec<[f64; 2]>,
    pair_list: Vec<(usize, usize, usize)>,
    pair_acc: Vec<[f64; 5]>,
    pair_t: Vec<f64>,
    pairs_of: Vec<Vec<usize>>,
    stamp: Vec<u64>,
    stamp_rep: Vec<usize>,
    changes: Vec<(usize, Change)>,
    rng: Rng,
    config: &'a SimConfig,
}

impl<'a> Engine<'a> {
    fn new(topo: Topology, config: &'a SimConfig) -> Self {
        let n = topo.units.len();
        let mut tree = SumTree::new(n);
        for (u, unit) in topo.units.iter().enumerate() {
            tree.set(u, unit.lam.max(if unit.kappa > 0.0 { unit.b } else { 0.0 }));
        }
        let relaxing = topo.units.iter().map(|u| u.kappa > 0.0).collect();
        let mut pair_list = Vec::new();
        let mut pairs_of = vec![Vec::new(); n];
        for (s, list) in topo.pair_units.iter().enumerate() {
            for &(u, v) in list {
                pairs_of[u].push(pair_list.len());
                pairs_of[v].push(pair_list.len());
                pair_list.push((u, v, s));
            }
        }
        let np = pair_list.len();
        let k = topo.copies.len();
        Engine {
            topo,
            tree,
            relaxing,
            unit_acc: vec![[0.0; 2]; n],
            pair_list,
            pair_acc: vec![[0.0; 5]; np],
            pair_t: vec![0.0; np],
            pairs_of,
            stamp: vec![u64::MAX; k],
            stamp_rep: vec![0; k],
            changes: Vec::new(),
            rng: Rng(ChaCha8Rng::seed_from_u64(config.seed)),
            config,
        }
    }

    fn integrate(&self) -> bool {
        self.config.sample_mode == SampleMode::TimeIntegral
    }

    fn flush_pair(&mut self, p: usize, t: f64) {
        let dt = t - self.pair_t[p];
        if dt > 0.0 && self.integrate() {
            let (u, v, _) = self.pair_list[p];
            let (a, b) = (&self.topo.units[u], &self.topo.units[v]);
            let t0 = self.pair_t[p];
            let (bu, bv) = (a.base(), b.base());
            let (au, av) = (a.at(t0) - bu, b.at(t0) - bv);
            let (pu, pv) = (phi(a.kappa, dt), phi(b.kappa, dt));
            let acc = &mut self.pair_acc[p];
            acc[0] += bu * dt + au * pu;
            acc[1] += bv * dt + av * pv;
            acc[2] += bu * bu * dt + 2.0 * bu * au * pu + au * au * phi(2.0 * a.kappa, dt);
            acc[3] += bv * bv * dt + 2.0 * bv * av * pv + av * av * phi(2.0 * b.kappa, dt);
            acc[4] += bu * bv * dt + bu * av * pv + bv * au * pu + au * av * phi(a.kappa + b.kappa, dt);
        }
        self.pair_t[p] = t;
    }

    fn flush_unit(&mut self, u: usize, t: f64) {
        let unit = self.topo.units[u];
        let dt = t - unit.t_ref;
        if dt > 0.0 && self.integrate() {
            let b = unit.base();
            let a = unit.lam - b;
            let p = phi(unit.kappa, dt);
            self.unit_acc[u][0] += b * dt + a * p;
            self.unit_acc[u][1] += b * b * dt + 2.0 * b * a * p + a * a * phi(2.0 * unit.kappa, dt);
        }
        let unit = &mut self.topo.units[u];
        unit.lam = unit.at(t);
        unit.t_ref = t;
    }

    fn flush_all(&mut self, t: f64) {
        for p in 0..self.pair_list.len() {
            self.flush_pair(p, t);
        }
        for u in 0..self.topo.units.len() {
            self.flush_unit(u, t);
        }
    }

    fn apply(&mut self, v: usize, change: Change, t: f64) {
        for idx in 0..self.pairs_of[v].len() {
            let p = self.pairs_of[v][idx];
            self.flush_pair(p, t);
        }
        self.flush_unit(v, t);
        let unit = &mut self.topo.units[v];
        unit.lam = match change {
            Change::Reset => unit.r,
            Change::Jump(mu) => unit.lam + mu,
        };
        let env = if unit.kappa > 0.0 { unit.lam.max(unit.b) } else { unit.lam };
        self.tree.set(v, env);
    }

    /// Fills `self.changes` with the consequences of a spike of unit `u`.
    fn route(&mut self, u: usize, event: u64) {
        self.changes.clear();
        self.changes.push((u, Change::Reset));
        let unit = self.topo.units[u];
        let i = unit.neuron;
        let m_rep = unit.replica;
        match &self.topo.routing {
            Routing::Original => {
                for &(k, mu) in &self.topo.out[i] {
                    self.changes.push((k, Change::Jump(mu)));
                }
            }
            Routing::Partition { m, partner } => {
                let m = *m;
                let own = partner[i];
                for &(k, mu) in &self.topo.out[i] {
                    if Some(k) == own {
                        self.changes.push((k * m + m_rep, Change::Jump(mu)));
                        continue;
                    }
                    let rep = if self.stamp[k] == event {
                        self.stamp_rep[k]
                    } else {
                        let rep = self.rng.other_replica(m_rep, m);
                        self.stamp[k] = event;
                        self.stamp_rep[k] = rep;
                        if let Some(k2) = partner[k] {
                            self.stamp[k2] = event;
                            self.stamp_rep[k2] = rep;
                        }
                        rep
                    };
                    self.changes.push((k * m + rep, Change::Jump(mu)));
                }
            }
            Routing::AllPair { m, ctxs, ctx_of, lonely_base } => {
                let m = *m;
                let partner = unit.ctx.map(|(c, side)| {
                    let (a, b) = ctxs[c];
                    (if side == 0 { b } else { a }, c, 1 - side)
                });
                if let Some((j, c, side)) = partner {
                    let w = self.topo.out[i].iter().find(|&&(t, _)| t == j).map(|&(_, w)| w);
                    if let Some(w) = w {
                        self.changes.push(((c * m + m_rep) * 2 + side, Change::Jump(w)));
                    }
                }
                debug_assert!(lonely_base[i] == usize::MAX || self.topo.out[i].is_empty());
                for &(k, mu) in &self.topo.out[i] {
                    if partner.map(|p| p.0) == Some(k) {
                        continue;
                    }
                    let options: Vec<usize> = ctx_of[k]
                        .iter()
                        .copied()
                        .filter(|&c| {
                            let (a, b) = ctxs[c];
                            a != i && b != i
                        })
                        .collect();
                    if options.is_empty() {
                        continue;
                    }
                    let c = options[self.rng.below(options.len())];
                    let rep = self.rng.other_replica(m_rep, m);
                    let side = if ctxs[c].0 == k { 0 } else { 1 };
                    self.changes.push(((c * m + rep) * 2 + side, Change::Jump(mu)));
                }
            }
        }
    }

    fn close_batch(&mut self, t: f64, duration: f64, weight: f64, spikes: &mut Vec<u64>, palm: &mut [u64; 2]) -> BatchStats {
        self.flush_all(t);
        let k = self.topo.copies.len();
        let mut lam = vec![0.0; k];
        let mut lam2 = vec![0.0; k];
        for (u, acc) in self.unit_acc.iter_mut().enumerate() {
            let n = self.topo.units[u].neuron;
            lam[n] += acc[0];
            lam2[n] += acc[1];
            *acc = [0.0; 2];
        }
        let mut pairs = vec![[0.0; 5]; self.topo.pair_units.len()];
        for (p, acc) in self.pair_acc.iter_mut().enumerate() {
            let s = self.pair_list[p].2;
            for q in 0..5 {
                pairs[s][q] += acc[q];
            }
            *acc = [0.0; 5];
        }
        let out = BatchStats {
            duration,
            weight,
            spikes: core::mem::replace(spikes, vec![0; k]),
            lam,
            lam2,
            pairs,
            palm: core::mem::replace(palm, [0, 0]),
        };
        out
    }

    fn sample_event(&mut self, t: f64) {
        for u in 0..self.topo.units.len() {
            let x = self.topo.units[u].at(t);
            self.unit_acc[u][0] += x;
            self.unit_acc[u][1] += x * x;
        }
        for p in 0..self.pair_list.len() {
            let (u, v, _) = self.pair_list[p];
            let (x, y) = (self.topo.units[u].at(t), self.topo.units[v].at(t));
            let acc = &mut self.pair_acc[p];
            acc[0] += x;
            acc[1] += y;
            acc[2] += x * x;
            acc[3] += y * y;
            acc[4] += x * y;
        }
    }

    fn run(&mut self) -> Result<(Vec<BatchStats>, u64, Vec<Spike>), SimError> {
        let cfg = self.config;
        let k = self.topo.copies.len();
        let nb = cfg.batches;
        let width = cfg.t_measure / nb as f64;
        let mut batches = Vec::with_capacity(nb);
        let mut t = 0.0;
        // Phase 0 is the warmup; phase b + 1 is batch b.
        let mut phase = if cfg.t_warmup > 0.0 { 0 } else { 1 };
        let boundary = |phase: usize| if phase == 0 { cfg.t_warmup } else { cfg.t_warmup + phase as f64 * width };
        let mut next_boundary = boundary(phase);
        let mut spikes = vec![0u64; k];
        let mut palm = [0u64; 2];
        let mut last_palm: Option<usize> = None;
        let mut events_in_batch = 0u64;
        let mut events = 0u64;
        let mut record = Vec::new();

        loop {
            let total = self.tree.total();
            if !(total > 0.0) {
                return Err(SimError::ZeroTotalIntensity(t));
            }
            let t_next = t - libm::log(self.rng.open01()) / total;
            if t_next >= next_boundary {
                t = next_boundary;
                if phase == 0 {
                    self.flush_all(t);
                    for acc in &mut self.unit_acc {
                        *acc = [0.0; 2];
                    }
                    for acc in &mut self.pair_acc {
                        *acc = [0.0; 5];
                    }
                    spikes.fill(0);
                    last_palm = None;
                } else {
                    let weight = if self.integrate() { width } else { events_in_batch as f64 };
                    batches.push(self.close_batch(t, width, weight, &mut spikes, &mut palm));
                    events_in_batch = 0;
                    if phase == nb {
                        break;
                    }
                }
                phase += 1;
                next_boundary = boundary(phase);
                continue;
            }
            t = t_next;
            let u = self.tree.find(self.rng.open01() * total);
            if self.relaxing[u] {
                let lam = self.topo.units[u].at(t);
                let env = self.tree.t[u + self.tree.n];
                if self.rng.open01() * env > lam {
                    let unit = &self.topo.units[u];
                    self.tree.set(u, lam.max(unit.b));
                    continue;
                }
            }
            events += 1;
            let measuring = phase > 0;
            if measuring {
                events_in_batch += 1;
                if !self.integrate() {
                    self.sample_event(t);
                }
                let n = self.topo.units[u].neuron;
                spikes[n] += 1;
                if cfg.record_spikes {
                    record.push(Spike { t, neuron: n, unit: u });
                }
                if let Some((a, b)) = cfg.palm_pair {
                    if n == a || n == b {
                        if last_palm.is_some() {
                            palm[1] += 1;
                            if n == a {
                                palm[0] += 1;
                            }
                        }
                        last_palm = Some(n);
                    }
                }
            }
            self.route(u, events);
            let changes = core::mem::take(&mut self.changes);
            for &(v, c) in &changes {
                self.apply(v, c, t);
            }
            self.changes = changes;
        }
        Ok((batches, events, record))
    }
}

fn check_config(config: &SimConfig) -> Result<(), SimError> {
    if !(config.t_measure > 0.0) || !config.t_measure.is_finite() {
        return Err(SimError::InvalidConfig("measurement time must be positive"));
    }
    if !(config.t_warmup >= 0.0) || !config.t_warmup.is_finite() {
        return Err(SimError::InvalidConfig("warmup must be nonnegative"));
    }
    if config.batches < 2 {
        return Err(SimError::InvalidConfig("need at least two batches"));
    }
    Ok(())
}

/// Runs one simulation and summarizes it.
pub fn simulate(spec: &NetworkSpec, mode: &ReplicaMode, config: &SimConfig) -> Result<SimEstimate, SimError> {
    validate(spec)?;
    check_config(config)?;
    if let Some((a, b)) = config.palm_pair {
        if a >= spec.len() || b >= spec.len() || a == b {
            return Err(SimError::UnknownPair(a, b));
        }
    }
    let topo = Topology::build(spec, mode, &config.pairs)?;
    let copies = topo.copies.clone();
    let pair_counts: Vec<usize> = topo.pair_units.iter().map(|l| l.len()).collect();
    let mut engine = Engine::new(topo, config);
    let (batches, events, spikes) = engine.run()?;
    let mut est = summarize(spec, mode, config, copies, &pair_counts, batches, events);
    est.spikes = spikes;
    Ok(est)
}

fn summarize(
    spec: &NetworkSpec,
    mode: &ReplicaMode,
    config: &SimConfig,
    copies: Vec<usize>,
    pair_counts: &[usize],
    batches: Vec<BatchStats>,
    events: u64,
) -> SimEstimate {
    let k = spec.len();
    let nb = batches.len();
    let total_time: f64 = batches.iter().map(|b| b.duration).sum();
    let total_weight: f64 = batches.iter().map(|b| b.weight).sum();
    let spike_counts: Vec<u64> = (0..k).map(|i| batches.iter().map(|b| b.spikes[i]).sum()).collect();

    let per_batch = |f: &dyn Fn(&BatchStats, usize) -> f64, i: usize| -> Vec<f64> {
        batches.iter().map(|b| f(b, i)).collect()
    };
    let rate_b = |b: &BatchStats, i: usize| b.spikes[i] as f64 / (copies[i] as f64 * b.duration);
    let mean_b = |b: &BatchStats, i: usize| b.lam[i] / (copies[i] as f64 * b.weight);
    let m2_b = |b: &BatchStats, i: usize| b.lam2[i] / (copies[i] as f64 * b.weight);

    let mut rates = Vec::with_capacity(k);
    let mut mean_intensity = Vec::with_capacity(k);
    let mut second_moments = Vec::with_capacity(k);
    let mut second_moment_gap = Vec::with_capacity(k);
    for i in 0..k {
        let mut r = Estimate::from_batches(&per_batch(&rate_b, i));
        r.mean = spike_counts[i] as f64 / (copies[i] as f64 * total_time);
        rates.push(r);
        mean_intensity.push(Estimate::from_batches(&per_batch(&mean_b, i)));
        second_moments.push(Estimate::from_batches(&per_batch(&m2_b, i)));
        let n = &spec.neurons[i];
        let kappa = match n.tau {
            Tau::Infinite => 0.0,
            Tau::Finite(t) => 1.0 / t,
        };
        let gap: Vec<f64> = batches
            .iter()
            .map(|b| {
                let inputs: f64 = (0..k).map(|j| spec.weights[i][j] * rate_b(b, j)).sum();
                m2_b(b, i) - n.r * rate_b(b, i) - inputs - kappa * (n.b - mean_b(b, i))
            })
            .collect();
        second_moment_gap.push(Estimate::from_batches(&gap));
    }

    let pair_stat = |sums: &[f64; 5], w: f64| -> [f64; 3] {
        let e: [f64; 5] = core::array::from_fn(|q| sums[q] / w);
        let cov = e[4] - e[0] * e[1];
        let var = (e[2] - e[0] * e[0]) * (e[3] - e[1] * e[1]);
        let corr = if var > 0.0 { cov / libm::sqrt(var) } else { 0.0 };
        [e[4], cov, corr]
    };
    let mut pairs = Vec::new();
    for (s, &(i, j)) in config.pairs.iter().enumerate() {
        let n = pair_counts[s] as f64;
        let mut total = [0.0; 5];
        for b in &batches {
            for q in 0..5 {
                total[q] += b.pairs[s][q];
            }
        }
        let full = pair_stat(&total, n * total_weight);
        let leave: Vec<[f64; 3]> = batches
            .iter()
            .map(|b| {
                let sums: [f64; 5] = core::array::from_fn(|q| total[q] - b.pairs[s][q]);
                pair_stat(&sums, n * (total_weight - b.weight))
            })
            .collect();
        let jk = |q: usize| Estimate::jackknife(full[q], &leave.iter().map(|l| l[q]).collect::<Vec<_>>());
        pairs.push(PairEstimate { i, j, cross: jk(0), covariance: jk(1), correlation: jk(2) });
    }

    let palm = config.palm_pair.map(|_| {
        let (hits, total) = batches.iter().fold((0u64, 0u64), |(h, t), b| (h + b.palm[0], t + b.palm[1]));
        let full = hits as f64 / total as f64;
        let leave: Vec<f64> =
            batches.iter().map(|b| (hits - b.palm[0]) as f64 / (total - b.palm[1]) as f64).collect();
        let pi_i = Estimate::jackknife(full, &leave);
        PalmEstimate { pi_i, pi_j: Estimate { mean: 1.0 - full, se: pi_i.se }, transitions: total }
    });
    debug_assert_eq!(nb, config.batches);

    SimEstimate {
        seed: config.seed,
        mode: mode.label(),
        t_measure: config.t_measure,
        copies,
        rates,
        mean_intensity,
        second_moments,
        second_moment_gap,
        pairs,
        spike_counts,
        events,
        elapsed_model_time: config.t_warmup + config.t_measure,
        palm,
        batches,
        spikes: Vec::new(),
    }
}

/// Next-spiker frequency of neurons 0 and 1 at pair-spike epochs.
pub fn palm_next_spiker(spec: &NetworkSpec, config: &SimConfig) -> Result<PalmEstimate, SimError> {
    let mut cfg = config.clone();
    cfg.palm_pair = Some((0, 1));
    let est = simulate(spec, &ReplicaMode::Original, &cfg)?;
    Ok(est.palm.expect("palm tracking requested"))
}

/// Binary feedforward tree with `levels` layers below the root: each node
/// drives its two children, which interact as a pair. Neurons are numbered
/// breadth first (children of `n` are `2n+1`, `2n+2`); all have `b = r = 1`
/// and no relaxation. Weights are i.i.d. uniform on `(lo, hi)`, drawn per
/// pair in the order parent→left, parent→right, right→left, left→right.
pub fn generate_tree(levels: usize, lo: f64, hi: f64, seed: u64) -> (NetworkSpec, PartitionSpec) {
    let k = (1usize << (levels + 1)) - 1;
    let mut rng = Rng(ChaCha8Rng::seed_from_u64(seed));
    let mut weights = vec![vec![0.0; k]; k];
    let mut pairs = Vec::new();
    for parent in 0..(k - 1) / 2 {
        let (l, r) = (2 * parent + 1, 2 * parent + 2);
        let mut draw = || lo + (hi - lo) * rng.open01();
        weights[l][parent] = draw();
        weights[r][parent] = draw();
        weights[l][r] = draw();
        weights[r][l] = draw();
        pairs.push((l, r));
    }
    let spec = NetworkSpec { neurons: vec![NeuronParams::new(1.0, 1.0); k], weights };
    (spec, PartitionSpec { pairs, singletons: vec![0] })
}

/// Ring of `k` neurons, each coupled both ways to its two neighbours with
/// weight `mu`; reset `r`, base rate `r` (1 when `r = 0`), no relaxation.
pub fn generate_ring(k: usize, mu: f64, r: f64) -> NetworkSpec {
    let b = if r > 0.0 { r } else { 1.0 };
    let mut weights = vec![vec![0.0; k]; k];
    for i in 0..k {
        let next = (i + 1) % k;
        weights[i][next] = mu;
        weights[next][i] = mu;
    }
    NetworkSpec { neurons: vec![NeuronParams::new(b, r); k], weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_tree_sampling() {
        let mut t = SumTree::new(5);
        for (i, w) in [1.0, 0.0, 2.0, 3.0, 0.0].iter().enumerate() {
            t.set(i, *w);
        }
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 2);
        assert_eq!(t.find(3.5), 3);
        assert_eq!(t.find(6.0), 3);
    }

    #[test]
    fn replica_draw_excludes_own() {
        let mut rng = Rng(ChaCha8Rng::seed_from_u64(3));
        for _ in 0..1000 {
            let x = rng.other_replica(2, 4);
            assert!(x < 4 && x != 2);
        }
    }

    #[test]
    fn integrals_of_relaxing_unit() {
        let u = Unit { neuron: 0, replica: 0, ctx: None, kappa: 0.5, b: 1.0, r: 0.0, lam: 3.0, t_ref: 0.0 };
        // λ(t) = 1 + 2 e^{-t/2}: ∫_0^2 = 2 + 4(1 - e^{-1}).
        let a = u.lam - u.base();
        let got = u.base() * 2.0 + a * phi(u.kappa, 2.0);
        assert!((got - (2.0 + 4.0 * (1.0 - libm::exp(-1.0)))).abs() < 1e-14);
        assert!((u.at(2.0) - (1.0 + 2.0 * libm::exp(-1.0))).abs() < 1e-15);
    }

    #[test]
    fn tree_shape() {
        let (s, p) = generate_tree(7, 0.0, 10.0, 1);
        assert_eq!(s.len(), 255);
        assert_eq!(p.pairs.len(), 127);
        assert_eq!(p.singletons, vec![0]);
        let (s, p) = generate_tree(1, 0.0, 10.0, 1);
        assert_eq!((s.len(), p.pairs.len()), (3, 1));
        assert_eq!(generate_tree(5, 0.0, 10.0, 9), generate_tree(5, 0.0, 10.0, 9));
        assert!(validate(&generate_tree(3, 0.0, 10.0, 2).0).is_ok());
    }

    #[test]
    fn ring_shape() {
        let s = generate_ring(3, 1.0, 1.0);
        assert!(validate(&s).is_ok());
        assert_eq!(s.weights[0], vec![0.0, 1.0, 1.0]);
    }
}
