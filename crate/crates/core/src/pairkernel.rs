//! Kernels of the pair Fredholm system without relaxation.
//!
//! For a pair `(i, j)` with drive streams `k`, the boundary functions satisfy
//!
//! ```text
//! h_i(z) = β_i e^{r_i z} - ∫_{-∞}^z Q_ij(z,u) h_i(u) du - ∫_{-∞}^0 R_ij(z,u) h_j(u) du
//! 1      = ∫ K_ij(0,u) h_i(u) du + ∫ M_ij(0,u) h_j(u) du
//! ```
//!
//! and symmetrically for `h_j`. Everything here is a closed form in the
//! auxiliary functions `c_ijk`, `d_ijk`.

use alloc::vec::Vec;

use crate::model::PairProblem;

/// Below this value of `μ_ik + μ_jk` the auxiliary functions switch to their
/// limit forms.
pub const SMALL_DENOMINATOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("closed-form kernels require both neurons without relaxation")]
    RelaxationUnsupported,
    #[error(transparent)]
    Invalid(#[from] crate::model::PairError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    beta: f64,
    mu_ik: f64,
    mu_jk: f64,
    sum: f64,
    small: bool,
}

/// Parameters of one orientation `(i, j)` of a pair problem.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelContext {
    pub r_i: f64,
    pub r_j: f64,
    pub mu_ij: f64,
    pub mu_ji: f64,
    terms: Vec<Term>,
}

impl KernelContext {
    pub fn new(problem: &PairProblem) -> Result<Self, KernelError> {
        problem.check()?;
        if !problem.no_relaxation() {
            return Err(KernelError::RelaxationUnsupported);
        }
        let terms = problem
            .drive
            .iter()
            .map(|d| {
                let sum = d.mu_i + d.mu_j;
                Term { beta: d.beta, mu_ik: d.mu_i, mu_jk: d.mu_j, sum, small: sum.abs() < SMALL_DENOMINATOR }
            })
            .collect();
        Ok(KernelContext {
            r_i: problem.params_i.r,
            r_j: problem.params_j.r,
            mu_ij: problem.mu_ij,
            mu_ji: problem.mu_ji,
            terms,
        })
    }

    /// The `(j, i)` orientation.
    pub fn swapped(&self) -> Self {
        KernelContext {
            r_i: self.r_j,
            r_j: self.r_i,
            mu_ij: self.mu_ji,
            mu_ji: self.mu_ij,
            terms: self
                .terms
                .iter()
                .map(|t| Term { mu_ik: t.mu_jk, mu_jk: t.mu_ik, ..*t })
                .collect(),
        }
    }

    pub fn drive_count(&self) -> usize {
        self.terms.len()
    }

    /// `Σ β_k`.
    pub fn total_drive(&self) -> f64 {
        self.terms.iter().map(|t| t.beta).sum()
    }

    /// `(Σ_{μ_ik > 0} β_k, Σ_{μ_jk > 0} β_k)`.
    pub fn side_drive(&self) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |(a, b), t| {
            (a + if t.mu_ik > 0.0 { t.beta } else { 0.0 }, b + if t.mu_jk > 0.0 { t.beta } else { 0.0 })
        })
    }

    /// Largest weight appearing anywhere in the problem.
    pub fn max_weight(&self) -> f64 {
        self.terms
            .iter()
            .flat_map(|t| [t.mu_ik, t.mu_jk])
            .fold(self.mu_ij.max(self.mu_ji), f64::max)
    }

    /// `c_ijk(z,u) = e^{μ_ik z} (1 - e^{(u-z)(μ_ik+μ_jk)}) / (μ_ik+μ_jk)`.
    pub fn aux_c(&self, k: usize, z: f64, u: f64) -> f64 {
        c_val(&self.terms[k], libm::exp(self.terms[k].mu_ik * z), z, u)
    }

    /// `d_ijk(z,u) = e^{μ_ik z} (1 - e^{u(μ_ik+μ_jk)}) / (μ_ik+μ_jk)`.
    pub fn aux_d(&self, k: usize, z: f64, u: f64) -> f64 {
        d_val(&self.terms[k], libm::exp(self.terms[k].mu_ik * z), u)
    }

    /// Source term `k_i(z) = e^{r_i z}`.
    pub fn source(&self, z: f64) -> f64 {
        libm::exp(self.r_i * z)
    }

    /// Normalization kernel `K_ij(0,u)`, multiplies `h_i`.
    pub fn kernel_k0(&self, u: f64) -> f64 {
        let mut e = (self.mu_ij + self.r_j) * u;
        for t in &self.terms {
            e += t.beta * (u + c_val(t, 1.0, 0.0, u));
        }
        libm::exp(e)
    }

    /// Normalization kernel `M_ij(0,u) = K_ji(0,u)`, multiplies `h_j`.
    pub fn kernel_m0(&self, u: f64) -> f64 {
        let mut e = (self.mu_ji + self.r_i) * u;
        for t in &self.terms {
            e += t.beta * (u + d_val(t, 1.0, u));
        }
        libm::exp(e)
    }

    /// Volterra kernel `Q_ij(z,u)`, `u ≤ z ≤ 0`.
    pub fn kernel_q(&self, z: f64, u: f64) -> f64 {
        self.q_parts(z, u).0
    }

    /// Fredholm kernel `R_ij(z,u)`, `z, u ≤ 0`.
    pub fn kernel_r(&self, z: f64, u: f64) -> f64 {
        self.r_parts(z, u).0
    }

    /// `∂_z Q_ij(z,u)`.
    pub fn kernel_dq(&self, z: f64, u: f64) -> f64 {
        self.q_parts(z, u).1
    }

    /// `∂_z R_ij(z,u)`.
    pub fn kernel_dr(&self, z: f64, u: f64) -> f64 {
        self.r_parts(z, u).1
    }

    pub fn kernel_dq0(&self, u: f64) -> f64 {
        self.kernel_dq(0.0, u)
    }

    pub fn kernel_dr0(&self, u: f64) -> f64 {
        self.kernel_dr(0.0, u)
    }

    /// `(Q, ∂_z Q)` at `(z, u)`.
    fn q_parts(&self, z: f64, u: f64) -> (f64, f64) {
        // Q = -P E with P = r_j + Σ β μ_jk c and ln E = r_j(u-z) + μ_ij u + Σ β (u - z + c).
        let mut p = self.r_j;
        let mut dp = 0.0;
        let mut ln_e = self.r_j * (u - z) + self.mu_ij * u;
        let mut dln_e = -self.r_j;
        for t in &self.terms {
            let ez = libm::exp(t.mu_ik * z);
            let c = c_val(t, ez, z, u);
            let dc = t.mu_ik * c + ez * libm::exp((u - z) * t.sum);
            p += t.beta * t.mu_jk * c;
            dp += t.beta * t.mu_jk * dc;
            ln_e += t.beta * (u - z + c);
            dln_e += t.beta * (dc - 1.0);
        }
        let e = libm::exp(ln_e);
        (-p * e, -(dp + p * dln_e) * e)
    }

    /// `(R, ∂_z R)` at `(z, u)`.
    fn r_parts(&self, z: f64, u: f64) -> (f64, f64) {
        // R = S F with S = r_i + Σ β (1 - e^{μ_ik z} + μ_ik d) and ln F = r_i(u+z) + μ_ji u + Σ β (u + d).
        let mut s = self.r_i;
        let mut ds = 0.0;
        let mut ln_f = self.r_i * (u + z) + self.mu_ji * u;
        let mut dln_f = self.r_i;
        for t in &self.terms {
            let ez = libm::exp(t.mu_ik * z);
            let d = d_val(t, ez, u);
            s += t.beta * (1.0 - ez + t.mu_ik * d);
            ds += t.beta * t.mu_ik * (t.mu_ik * d - ez);
            ln_f += t.beta * (u + d);
            dln_f += t.beta * t.mu_ik * d;
        }
        let f = libm::exp(ln_f);
        (s * f, (ds + s * dln_f) * f)
    }

    /// Row evaluator for fixed `z`, reused across many `u`.
    pub(crate) fn row(&self, z: f64) -> Row<'_> {
        Row { ctx: self, z, ez: self.terms.iter().map(|t| libm::exp(t.mu_ik * z)).collect() }
    }
}

pub(crate) struct Row<'a> {
    ctx: &'a KernelContext,
    z: f64,
    ez: Vec<f64>,
}

impl Row<'_> {
    pub(crate) fn q(&self, u: f64) -> f64 {
        let c = self.ctx;
        let z = self.z;
        let mut p = c.r_j;
        let mut ln_e = c.r_j * (u - z) + c.mu_ij * u;
        for (t, &ez) in c.terms.iter().zip(&self.ez) {
            let cv = c_val(t, ez, z, u);
            p += t.beta * t.mu_jk * cv;
            ln_e += t.beta * (u - z + cv);
        }
        -p * libm::exp(ln_e)
    }

    pub(crate) fn r(&self, u: f64) -> f64 {
        let c = self.ctx;
        let z = self.z;
        let mut s = c.r_i;
        let mut ln_f = c.r_i * (u + z) + c.mu_ji * u;
        for (t, &ez) in c.terms.iter().zip(&self.ez) {
            let dv = d_val(t, ez, u);
            s += t.beta * (1.0 - ez + t.mu_ik * dv);
            ln_f += t.beta * (u + dv);
        }
        s * libm::exp(ln_f)
    }
}

#[inline]
fn c_val(t: &Term, ez: f64, z: f64, u: f64) -> f64 {
    if t.small {
        ez * (z - u)
    } else {
        ez * -libm::expm1((u - z) * t.sum) / t.sum
    }
}

#[inline]
fn d_val(t: &Term, ez: f64, u: f64) -> f64 {
    if t.small {
        -u * ez
    } else {
        ez * -libm::expm1(u * t.sum) / t.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Drive, PairProblem};
    use alloc::vec;

    fn ctx(r_i: f64, r_j: f64, mu_ij: f64, mu_ji: f64, drive: Vec<Drive>) -> KernelContext {
        let mut p = PairProblem::isolated(r_i, r_i, r_j, r_j, mu_ij, mu_ji);
        p.drive = drive;
        KernelContext::new(&p).unwrap()
    }

    #[test]
    fn aux_examples() {
        let c = ctx(1.0, 1.0, 0.0, 0.0, vec![Drive::new(1.0, 0.0, 0.0), Drive::new(1.0, 1.0, 1.0), Drive::new(1.0, 1.0, 0.0)]);
        assert_eq!(c.aux_c(0, 0.0, -1.0), 1.0);
        assert_eq!(c.aux_c(1, -0.3, -0.3), 0.0);
        assert!((c.aux_c(1, 0.0, -1.0) - 0.432_332_358_381_693_6).abs() < 1e-15);
        assert_eq!(c.aux_d(1, -0.5, 0.0), 0.0);
        assert_eq!(c.aux_d(0, -1.0, -1.0), 1.0);
        let e1 = libm::exp(-1.0);
        assert!((c.aux_d(2, -1.0, -1.0) - e1 * (1.0 - e1)).abs() < 1e-15);
        assert!((c.aux_d(2, -1.0, -1.0) - 0.232_544_157_934_830_5).abs() < 1e-15);
    }

    #[test]
    fn kernel_k0_examples() {
        let c = ctx(1.0, 1.0, 0.0, 0.0, vec![]);
        assert_eq!(c.kernel_k0(0.0), 1.0);
        assert!((c.kernel_k0(-1.0) - libm::exp(-1.0)).abs() < 1e-16);
        let c = ctx(1.0, 1.0, 1.0, 0.0, vec![Drive::new(2.0, 1.0, 1.0)]);
        let expect = libm::exp(-2.0 + 2.0 * (-1.0 + (1.0 - libm::exp(-2.0)) / 2.0));
        assert!((c.kernel_k0(-1.0) / expect - 1.0).abs() < 1e-14);
    }

    #[test]
    fn no_drive_q() {
        let c = ctx(1.0, 1.0, 2.0, 0.5, vec![]);
        assert_eq!(c.kernel_q(0.0, 0.0), -1.0);
        assert!((c.kernel_q(-1.0, -2.0) + libm::exp(-5.0)).abs() < 1e-17);
        let c = ctx(1.0, 1.5, 2.0, 0.5, vec![]);
        let u = -0.7;
        let expect = 1.5 * 1.5 * libm::exp((1.5 + 2.0) * u);
        assert!((c.kernel_dq0(u) - expect).abs() < 1e-14);
    }

    #[test]
    fn relaxation_rejected() {
        let mut p = PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        p.params_i.tau = crate::model::Tau::Finite(2.0);
        assert_eq!(KernelContext::new(&p), Err(KernelError::RelaxationUnsupported));
    }

    #[test]
    fn row_matches_pointwise() {
        let c = ctx(0.7, 1.3, 2.0, 0.4, vec![Drive::new(2.0, 1.0, 0.0), Drive::new(0.5, 0.3, 2.0)]);
        let row = c.row(-0.8);
        for u in [-3.0, -1.0, -0.8] {
            assert_eq!(row.q(u), c.kernel_q(-0.8, u));
        }
        for u in [-3.0, -1.0, -0.1] {
            assert_eq!(row.r(u), c.kernel_r(-0.8, u));
        }
    }
}
