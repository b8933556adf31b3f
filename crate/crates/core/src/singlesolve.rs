//! Stationary rate of a single neuron under independent Poisson input.
//!
//! Without relaxation the stationary MGF solves
//! `L' = Σ_l β_l (e^{μ_l u} - 1) L + β e^{r u}`, and boundedness as
//! `u → -∞` forces
//!
//! ```text
//! 1/β = ∫_{-∞}^0 exp(r s + Σ_l β_l [s + (1 - e^{μ_l s})/μ_l]) ds.
//! ```

use alloc::vec::Vec;

use crate::model::NeuronParams;
use crate::numerics::{make_grid, NumericsError};

/// One input stream: rate `beta`, weight `mu` onto the neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Input {
    pub beta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleProblem {
    pub params: NeuronParams,
    pub drive: Vec<Input>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SingleError {
    #[error("closed-form rate requires a neuron without relaxation")]
    RelaxationUnsupported,
    #[error("rate integral is not finite")]
    NonFiniteIntegral,
    #[error("negative or non-finite input")]
    InvalidInput,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Grid nodes per e-fold of the fastest scale of the integrand.
const DENSITY_PER_RATE: f64 = 16.0;
const TRUNCATION: f64 = 1e-14;

/// Stationary rate `β = F_k(β_[k])`.
///
/// A neuron with zero reset and no effective input fires once and then
/// stays silent; its stationary rate is 0.
pub fn single_rate(problem: &SingleProblem) -> Result<f64, SingleError> {
    if !problem.params.tau.is_infinite() {
        return Err(SingleError::RelaxationUnsupported);
    }
    let r = problem.params.r;
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !ok(r) || problem.drive.iter().any(|d| !ok(d.beta) || !ok(d.mu)) {
        return Err(SingleError::InvalidInput);
    }
    let active: Vec<Input> = problem.drive.iter().copied().filter(|d| d.beta > 0.0 && d.mu > 0.0).collect();
    let decay = r + active.iter().map(|d| d.beta).sum::<f64>();
    if decay == 0.0 {
        return Ok(0.0);
    }
    if active.is_empty() {
        return Ok(r);
    }
    let fast = decay + active.iter().map(|d| d.mu).fold(0.0, f64::max);
    let grid = make_grid(decay, TRUNCATION, (DENSITY_PER_RATE * fast).max(2.0))?;
    let mut integral = 0.0;
    for (&s, &w) in grid.nodes.iter().zip(&grid.weights) {
        let mut e = r * s;
        for d in &active {
            e += d.beta * (s - libm::expm1(d.mu * s) / d.mu);
        }
        integral += w * libm::exp(e);
    }
    if !integral.is_finite() || integral <= 0.0 {
        return Err(SingleError::NonFiniteIntegral);
    }
    Ok(1.0 / integral)
}

/// `E[λ²] = r β + Σ_l β_l μ_l`.
pub fn single_second_moment(problem: &SingleProblem, beta: f64) -> f64 {
    problem.params.r * beta + problem.drive.iter().map(|d| d.beta * d.mu).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn prob(r: f64, drive: Vec<(f64, f64)>) -> SingleProblem {
        SingleProblem {
            params: NeuronParams::new(r.max(1.0), r),
            drive: drive.into_iter().map(|(beta, mu)| Input { beta, mu }).collect(),
        }
    }

    #[test]
    fn no_drive_gives_reset() {
        assert_eq!(single_rate(&prob(1.7, vec![])).unwrap(), 1.7);
        assert_eq!(single_rate(&prob(0.8, vec![(0.0, 3.0), (0.0, 1.0)])).unwrap(), 0.8);
        assert_eq!(single_rate(&prob(0.0, vec![])).unwrap(), 0.0);
    }

    #[test]
    fn zero_reset_with_drive() {
        // Reset 0, one stream (β, μ): ∫ exp(β s + β(1 - e^{μ s})/μ) ds.
        let b = single_rate(&prob(0.0, vec![(2.0, 1.0)])).unwrap();
        assert!(b > 0.0 && b < 2.0);
    }

    #[test]
    fn closed_form_for_one_stream() {
        // r=1, β=2, μ=1: substitute t = 2 e^{s} -> ∫ = e^2 2^{-3} γ(3, 2).
        let b = single_rate(&prob(1.0, vec![(2.0, 1.0)])).unwrap();
        let expect = 1.0 / (libm::exp(2.0) / 8.0 * crate::numerics::lower_incomplete_gamma(3.0, 2.0).unwrap());
        assert!((b / expect - 1.0).abs() < 1e-10, "{b} {expect}");
    }

    #[test]
    fn monotone_and_above_reset() {
        let base = single_rate(&prob(1.0, vec![(1.0, 1.0), (0.5, 2.0)])).unwrap();
        assert!(base > 1.0);
        for k in 0..5 {
            let x = 0.1 * (k + 1) as f64;
            assert!(single_rate(&prob(1.0, vec![(1.0 + x, 1.0), (0.5, 2.0)])).unwrap() > base);
            assert!(single_rate(&prob(1.0, vec![(1.0, 1.0 + x), (0.5, 2.0)])).unwrap() > base);
        }
    }

    #[test]
    fn relaxation_rejected() {
        let mut p = prob(1.0, vec![]);
        p.params.tau = crate::model::Tau::Finite(1.0);
        assert_eq!(single_rate(&p), Err(SingleError::RelaxationUnsupported));
    }
}
