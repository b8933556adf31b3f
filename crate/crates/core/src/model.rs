//! Network and pair-problem types.
//!
//! Indices are 0-based here. Anything user facing (JSON, CSV, CLI) shifts
//! them by one.

use alloc::vec::Vec;

/// Relaxation time of a neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    /// No relaxation: the intensity is piecewise constant between events.
    Infinite,
    /// Exponential relaxation toward the base rate with this time constant.
    Finite(f64),
}

impl Tau {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Tau::Infinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    pub tau: Tau,
    /// Base rate, the initial intensity and the relaxation target.
    pub b: f64,
    /// Reset value taken by the intensity right after the neuron spikes.
    pub r: f64,
}

impl NeuronParams {
    /// Neuron without relaxation.
    pub fn new(b: f64, r: f64) -> Self {
        NeuronParams { tau: Tau::Infinite, b, r }
    }

    /// A Poisson source of the given rate: no inputs reach it and `b = r`.
    pub fn poisson(rate: f64) -> Self {
        NeuronParams::new(rate, rate)
    }
}

/// Full network description.
///
/// `weights[i][j]` is the jump of `λ_i` when `j` spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub neurons: Vec<NeuronParams>,
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("network has no neurons")]
    EmptyNetwork,
    #[error("weight matrix must be {k}x{k}")]
    ShapeMismatch { k: usize },
    #[error("neuron {i}: non-finite parameter")]
    NonFinite { i: usize },
    #[error("neuron {i}: base rate must be positive")]
    NonPositiveBase { i: usize },
    #[error("neuron {i}: reset must be nonnegative")]
    NegativeReset { i: usize },
    #[error("neuron {i}: reset exceeds base rate")]
    ResetAboveBase { i: usize },
    #[error("neuron {i}: relaxation time must be positive")]
    NonPositiveTau { i: usize },
    #[error("weight ({i},{j}) is negative")]
    NegativeWeight { i: usize, j: usize },
    #[error("weight ({i},{j}) is not finite")]
    NonFiniteWeight { i: usize, j: usize },
    #[error("neuron {i} has a nonzero self-weight")]
    NonzeroDiagonal { i: usize },
}

/// Checks every structural invariant of `spec`, reporting the first failure.
///
/// Neurons are checked before weights, each in index order.
pub fn validate(spec: &NetworkSpec) -> Result<(), ValidationError> {
    let k = spec.neurons.len();
    if k == 0 {
        return Err(ValidationError::EmptyNetwork);
    }
    if spec.weights.len() != k || spec.weights.iter().any(|row| row.len() != k) {
        return Err(ValidationError::ShapeMismatch { k });
    }
    for (i, n) in spec.neurons.iter().enumerate() {
        let tau_ok = match n.tau {
            Tau::Infinite => true,
            Tau::Finite(t) => !t.is_nan(),
        };
        if !n.b.is_finite() || !n.r.is_finite() || !tau_ok {
            return Err(ValidationError::NonFinite { i });
        }
        if n.b <= 0.0 {
            return Err(ValidationError::NonPositiveBase { i });
        }
        if n.r < 0.0 {
            return Err(ValidationError::NegativeReset { i });
        }
        if n.r > n.b {
            return Err(ValidationError::ResetAboveBase { i });
        }
        if let Tau::Finite(t) = n.tau {
            if t <= 0.0 {
                return Err(ValidationError::NonPositiveTau { i });
            }
        }
    }
    for (i, row) in spec.weights.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if !w.is_finite() {
                return Err(ValidationError::NonFiniteWeight { i, j });
            }
            if w < 0.0 {
                return Err(ValidationError::NegativeWeight { i, j });
            }
            if i == j && w != 0.0 {
                return Err(ValidationError::NonzeroDiagonal { i });
            }
        }
    }
    Ok(())
}

impl NetworkSpec {
    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    /// `true` when no neuron relaxes.
    pub fn no_relaxation(&self) -> bool {
        self.neurons.iter().all(|n| n.tau.is_infinite())
    }

    /// `true` when `i` and `j` interact directly in at least one direction.
    pub fn connected(&self, i: usize, j: usize) -> bool {
        i != j && self.weights[i][j] + self.weights[j][i] > 0.0
    }

    /// Neurons `l` with a nonzero weight toward `i` (`μ_il > 0`).
    pub fn inputs(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.weights[i]
            .iter()
            .enumerate()
            .filter(|&(_, &w)| w > 0.0)
            .map(|(l, _)| l)
    }

    /// Relabels neurons: neuron `i` of `self` becomes neuron `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> NetworkSpec {
        let k = self.len();
        let mut neurons = self.neurons.clone();
        let mut weights = alloc::vec![alloc::vec![0.0; k]; k];
        for i in 0..k {
            neurons[perm[i]] = self.neurons[i];
            for j in 0..k {
                weights[perm[i]][perm[j]] = self.weights[i][j];
            }
        }
        NetworkSpec { neurons, weights }
    }
}

/// External Poisson stream feeding a pair: rate `beta`, weights onto `i`
/// and `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub beta: f64,
    pub mu_i: f64,
    pub mu_j: f64,
}

impl Drive {
    pub fn new(beta: f64, mu_i: f64, mu_j: f64) -> Self {
        Drive { beta, mu_i, mu_j }
    }
}

/// One pair `(i, j)` under independent Poisson drive.
#[derive(Debug, Clone, PartialEq)]
pub struct PairProblem {
    pub params_i: NeuronParams,
    pub params_j: NeuronParams,
    /// Jump of `λ_i` when `j` spikes.
    pub mu_ij: f64,
    /// Jump of `λ_j` when `i` spikes.
    pub mu_ji: f64,
    pub drive: Vec<Drive>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairError {
    #[error("neuron index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("pair indices must differ")]
    IdenticalIndices,
    #[error("expected {expected} external rates, got {got}")]
    RateCount { expected: usize, got: usize },
    #[error("pair problem has a negative or non-finite rate or weight")]
    InvalidValue,
}

impl PairProblem {
    /// Pair without drive and without relaxation.
    pub fn isolated(b_i: f64, r_i: f64, b_j: f64, r_j: f64, mu_ij: f64, mu_ji: f64) -> Self {
        PairProblem {
            params_i: NeuronParams::new(b_i, r_i),
            params_j: NeuronParams::new(b_j, r_j),
            mu_ij,
            mu_ji,
            drive: Vec::new(),
        }
    }

    /// The same problem seen from `j`.
    pub fn swapped(&self) -> PairProblem {
        PairProblem {
            params_i: self.params_j,
            params_j: self.params_i,
            mu_ij: self.mu_ji,
            mu_ji: self.mu_ij,
            drive: self.drive.iter().map(|d| Drive::new(d.beta, d.mu_j, d.mu_i)).collect(),
        }
    }

    pub fn check(&self) -> Result<(), PairError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        let params_ok = |p: &NeuronParams| ok(p.b) && ok(p.r);
        if !params_ok(&self.params_i)
            || !params_ok(&self.params_j)
            || !ok(self.mu_ij)
            || !ok(self.mu_ji)
            || self.drive.iter().any(|d| !ok(d.beta) || !ok(d.mu_i) || !ok(d.mu_j))
        {
            return Err(PairError::InvalidValue);
        }
        Ok(())
    }

    pub fn no_relaxation(&self) -> bool {
        self.params_i.tau.is_infinite() && self.params_j.tau.is_infinite()
    }

    /// Total drive rate `Σ β_k`.
    pub fn total_drive(&self) -> f64 {
        self.drive.iter().map(|d| d.beta).sum()
    }

    /// Embeds the problem into a network: neurons 0 and 1 are the pair, each
    /// drive with positive rate becomes a Poisson source neuron.
    pub fn to_network(&self) -> NetworkSpec {
        let sources: Vec<&Drive> = self.drive.iter().filter(|d| d.beta > 0.0).collect();
        let k = 2 + sources.len();
        let mut neurons = alloc::vec![self.params_i, self.params_j];
        let mut weights = alloc::vec![alloc::vec![0.0; k]; k];
        weights[0][1] = self.mu_ij;
        weights[1][0] = self.mu_ji;
        for (n, d) in sources.iter().enumerate() {
            neurons.push(NeuronParams::poisson(d.beta));
            weights[0][2 + n] = d.mu_i;
            weights[1][2 + n] = d.mu_j;
        }
        NetworkSpec { neurons, weights }
    }
}

/// Builds the pair problem for `(i, j)` in `spec`.
///
/// `external_rates` lists `β_k` for every `k ∉ {i, j}` in increasing `k`.
/// Streams with zero weight on both neurons are dropped.
pub fn extract_pair(
    spec: &NetworkSpec,
    i: usize,
    j: usize,
    external_rates: &[f64],
) -> Result<PairProblem, PairError> {
    let k = spec.len();
    for idx in [i, j] {
        if idx >= k {
            return Err(PairError::IndexOutOfRange(idx));
        }
    }
    if i == j {
        return Err(PairError::IdenticalIndices);
    }
    if external_rates.len() != k - 2 {
        return Err(PairError::RateCount { expected: k - 2, got: external_rates.len() });
    }
    let others = (0..k).filter(|&l| l != i && l != j);
    let drive = others
        .zip(external_rates)
        .filter(|&(l, _)| spec.weights[i][l] + spec.weights[j][l] > 0.0)
        .map(|(l, &beta)| Drive::new(beta, spec.weights[i][l], spec.weights[j][l]))
        .collect();
    Ok(PairProblem {
        params_i: spec.neurons[i],
        params_j: spec.neurons[j],
        mu_ij: spec.weights[i][j],
        mu_ji: spec.weights[j][i],
        drive,
    })
}

/// Same as [`extract_pair`] but reads `β_k` from a full length-`K` vector.
pub fn extract_pair_full(
    spec: &NetworkSpec,
    i: usize,
    j: usize,
    rates: &[f64],
) -> Result<PairProblem, PairError> {
    let ext: Vec<f64> = (0..rates.len()).filter(|&l| l != i && l != j).map(|l| rates[l]).collect();
    extract_pair(spec, i, j, &ext)
}

/// Partition of the neurons into pairs and singletons.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PartitionSpec {
    pub pairs: Vec<(usize, usize)>,
    pub singletons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("pair ({0},{0}) repeats an index")]
    DegeneratePair(usize),
    #[error("neuron {0} appears more than once")]
    Duplicate(usize),
    #[error("neuron {0} is not covered")]
    Missing(usize),
}

impl PartitionSpec {
    pub fn all_singletons(k: usize) -> Self {
        PartitionSpec { pairs: Vec::new(), singletons: (0..k).collect() }
    }

    /// Checks that the blocks partition `0..k`.
    pub fn validate(&self, k: usize) -> Result<(), PartitionError> {
        let mut seen = alloc::vec![false; k];
        let mut mark = |x: usize| -> Result<(), PartitionError> {
            if x >= k {
                return Err(PartitionError::IndexOutOfRange(x));
            }
            if seen[x] {
                return Err(PartitionError::Duplicate(x));
            }
            seen[x] = true;
            Ok(())
        };
        for &(i, j) in &self.pairs {
            if i == j {
                return Err(PartitionError::DegeneratePair(i));
            }
            mark(i)?;
            mark(j)?;
        }
        for &s in &self.singletons {
            mark(s)?;
        }
        match seen.iter().position(|&s| !s) {
            Some(x) => Err(PartitionError::Missing(x)),
            None => Ok(()),
        }
    }

    /// For each neuron, `Some(partner)` if paired.
    pub fn partners(&self, k: usize) -> Vec<Option<usize>> {
        let mut p = alloc::vec![None; k];
        for &(i, j) in &self.pairs {
            p[i] = Some(j);
            p[j] = Some(i);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn single(b: f64, r: f64) -> NetworkSpec {
        NetworkSpec { neurons: vec![NeuronParams::new(b, r)], weights: vec![vec![0.0]] }
    }

    #[test]
    fn minimal_network_is_valid() {
        assert_eq!(validate(&single(1.0, 1.0)), Ok(()));
    }

    #[test]
    fn reset_above_base_rejected() {
        assert_eq!(validate(&single(1.0, 2.0)), Err(ValidationError::ResetAboveBase { i: 0 }));
    }

    #[test]
    fn self_weight_rejected() {
        let mut s = single(1.0, 1.0);
        s.weights[0][0] = 0.5;
        assert_eq!(validate(&s), Err(ValidationError::NonzeroDiagonal { i: 0 }));
    }

    #[test]
    fn empty_and_negative_weight() {
        let empty = NetworkSpec { neurons: vec![], weights: vec![] };
        assert_eq!(validate(&empty), Err(ValidationError::EmptyNetwork));
        let s = NetworkSpec {
            neurons: vec![NeuronParams::new(1.0, 1.0); 2],
            weights: vec![vec![0.0, -1.0], vec![0.0, 0.0]],
        };
        assert_eq!(validate(&s), Err(ValidationError::NegativeWeight { i: 0, j: 1 }));
    }

    #[test]
    fn chain_extraction() {
        // 3 -> (1, 2) in 1-based numbering.
        let s = NetworkSpec {
            neurons: vec![NeuronParams::new(1.0, 1.0); 3],
            weights: vec![vec![0.0, 0.0, 1.5], vec![0.0, 0.0, 0.5], vec![0.0; 3]],
        };
        let p = extract_pair(&s, 0, 1, &[2.0]).unwrap();
        assert_eq!(p.drive, vec![Drive::new(2.0, 1.5, 0.5)]);
        assert_eq!(extract_pair(&s, 0, 0, &[2.0]), Err(PairError::IdenticalIndices));
        assert_eq!(extract_pair(&s, 0, 3, &[2.0]), Err(PairError::IndexOutOfRange(3)));
    }

    #[test]
    fn isolated_pair_has_empty_drive() {
        let s = NetworkSpec {
            neurons: vec![NeuronParams::new(1.0, 1.0); 2],
            weights: vec![vec![0.0, 2.0], vec![1.0, 0.0]],
        };
        let p = extract_pair(&s, 0, 1, &[]).unwrap();
        assert!(p.drive.is_empty());
        assert_eq!((p.mu_ij, p.mu_ji), (2.0, 1.0));
    }

    #[test]
    fn fig3_topology() {
        let mut w = vec![vec![0.0; 5]; 5];
        w[0][2] = 1.0;
        w[1][3] = 1.0;
        w[0][4] = 1.0;
        w[1][4] = 1.0;
        let s = NetworkSpec { neurons: vec![NeuronParams::new(1.0, 1.0); 5], weights: w };
        let p = extract_pair(&s, 0, 1, &[0.5, 0.7, 3.0]).unwrap();
        assert_eq!(
            p.drive,
            vec![Drive::new(0.5, 1.0, 0.0), Drive::new(0.7, 0.0, 1.0), Drive::new(3.0, 1.0, 1.0)]
        );
    }

    #[test]
    fn partition_checks() {
        let p = PartitionSpec { pairs: vec![(1, 2)], singletons: vec![0] };
        assert_eq!(p.validate(3), Ok(()));
        let p = PartitionSpec { pairs: vec![(1, 2)], singletons: vec![1] };
        assert_eq!(p.validate(3), Err(PartitionError::Duplicate(1)));
        let p = PartitionSpec { pairs: vec![(1, 2)], singletons: vec![] };
        assert_eq!(p.validate(3), Err(PartitionError::Missing(0)));
        let p = PartitionSpec { pairs: vec![(1, 1)], singletons: vec![0] };
        assert_eq!(p.validate(2), Err(PartitionError::DegeneratePair(1)));
    }
}
