//! JSON network and pair-problem files, CSV number formatting.
//!
//! Neuron indices in files are 1-based, matching the labels used when
//! talking about a network ("neuron 1 drives neuron 2"). Everything is
//! converted to 0-based indices on load.

use std::fs;
use std::path::Path;

use pairmf_core::model::{validate, PartitionError, ValidationError};
use pairmf_core::{Drive, NetworkSpec, NeuronParams, PairProblem, PartitionSpec, Tau};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("invalid network: {0}")]
    Network(#[from] ValidationError),
    #[error("invalid partition: {0}")]
    Partition(#[from] PartitionError),
    #[error("neuron index 0 in file; indices start at 1")]
    ZeroIndex,
    #[error("tau must be positive or null (no relaxation), got {0}")]
    BadTau(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuronDto {
    pub b: f64,
    pub r: f64,
    /// Relaxation time; `null` or absent means no relaxation.
    #[serde(default)]
    pub tau: Option<f64>,
}

impl NeuronDto {
    pub fn to_params(self) -> Result<NeuronParams, FormatError> {
        let tau = match self.tau {
            None => Tau::Infinite,
            Some(t) if t > 0.0 && t.is_finite() => Tau::Finite(t),
            Some(t) => return Err(FormatError::BadTau(t)),
        };
        Ok(NeuronParams { tau, b: self.b, r: self.r })
    }

    pub fn from_params(p: &NeuronParams) -> Self {
        let tau = match p.tau {
            Tau::Infinite => None,
            Tau::Finite(t) => Some(t),
        };
        NeuronDto { b: p.b, r: p.r, tau }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionDto {
    pub pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub singletons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub neurons: Vec<NeuronDto>,
    /// `weights[i][j]`: jump of neuron `i+1`'s intensity when neuron `j+1`
    /// spikes.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionDto>,
}

fn zero_based(i: usize) -> Result<usize, FormatError> {
    i.checked_sub(1).ok_or(FormatError::ZeroIndex)
}

impl NetworkFile {
    pub fn from_spec(spec: &NetworkSpec, partition: Option<&PartitionSpec>) -> Self {
        NetworkFile {
            neurons: spec.neurons.iter().map(NeuronDto::from_params).collect(),
            weights: spec.weights.clone(),
            partition: partition.map(|p| PartitionDto {
                pairs: p.pairs.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
                singletons: p.singletons.iter().map(|k| k + 1).collect(),
            }),
        }
    }

    pub fn to_spec(&self) -> Result<(NetworkSpec, Option<PartitionSpec>), FormatError> {
        let neurons = self.neurons.iter().map(|n| n.to_params()).collect::<Result<Vec<_>, _>>()?;
        let spec = NetworkSpec { neurons, weights: self.weights.clone() };
        validate(&spec)?;
        let partition = match &self.partition {
            None => None,
            Some(p) => {
                let pairs = p
                    .pairs
                    .iter()
                    .map(|&[i, j]| Ok((zero_based(i)?, zero_based(j)?)))
                    .collect::<Result<Vec<_>, FormatError>>()?;
                let singletons = p.singletons.iter().map(|&k| zero_based(k)).collect::<Result<Vec<_>, _>>()?;
                let part = PartitionSpec { pairs, singletons };
                part.validate(spec.len())?;
                Some(part)
            }
        };
        Ok((spec, partition))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveDto {
    pub beta: f64,
    pub mu_1: f64,
    pub mu_2: f64,
}

/// A pair `(1, 2)` with its external Poisson drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFile {
    pub neuron_1: NeuronDto,
    pub neuron_2: NeuronDto,
    pub mu_12: f64,
    pub mu_21: f64,
    #[serde(default)]
    pub drive: Vec<DriveDto>,
}

impl PairFile {
    pub fn to_problem(&self) -> Result<PairProblem, FormatError> {
        Ok(PairProblem {
            params_i: self.neuron_1.to_params()?,
            params_j: self.neuron_2.to_params()?,
            mu_ij: self.mu_12,
            mu_ji: self.mu_21,
            drive: self.drive.iter().map(|d| Drive::new(d.beta, d.mu_1, d.mu_2)).collect(),
        })
    }

    pub fn from_problem(p: &PairProblem) -> Self {
        PairFile {
            neuron_1: NeuronDto::from_params(&p.params_i),
            neuron_2: NeuronDto::from_params(&p.params_j),
            mu_12: p.mu_ij,
            mu_21: p.mu_ji,
            drive: p.drive.iter().map(|d| DriveDto { beta: d.beta, mu_1: d.mu_i, mu_2: d.mu_j }).collect(),
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, FormatError> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| FormatError::Io { path: name.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json { path: name, source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let name = path.display().to_string();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json { path: name.clone(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| FormatError::Io { path: name, source })
}

pub fn read_network(path: &Path) -> Result<(NetworkSpec, Option<PartitionSpec>), FormatError> {
    read_json::<NetworkFile>(path)?.to_spec()
}

/// Locale-independent number formatting for CSV cells: plain decimals in
/// the usual range, exponent notation for very small or very large values.
/// Both forms are the shortest string that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}
