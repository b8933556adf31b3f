use pairmf_core::model::{Drive, PairProblem};
use pairmf_core::pairkernel::KernelContext;
use proptest::prelude::*;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-300
}

fn problem(r_i: f64, r_j: f64, mu_ij: f64, mu_ji: f64, drive: Vec<(f64, f64, f64)>) -> PairProblem {
    let mut p = PairProblem::isolated(r_i.max(1.0), r_i, r_j.max(1.0), r_j, mu_ij, mu_ji);
    p.drive = drive.into_iter().map(|(b, mi, mj)| Drive::new(b, mi, mj)).collect();
    p
}

// Weights are zero a quarter of the time so the one-sided branches get hit.
fn weight() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 3 => 0.01f64..8.0]
}

fn any_problem() -> impl Strategy<Value = PairProblem> {
    (0.05f64..3.0, 0.05f64..3.0, weight(), weight(), prop::collection::vec((0.0f64..4.0, weight(), weight()), 0..4))
        .prop_map(|(ri, rj, mij, mji, d)| problem(ri, rj, mij, mji, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn swap_identities(p in any_problem(), u in -6.0f64..0.0) {
        let c = KernelContext::new(&p).unwrap();
        let s = c.swapped();
        prop_assert!(close(c.kernel_k0(u), s.kernel_m0(u), 1e-12));
        prop_assert!(close(c.kernel_q(0.0, u), -s.kernel_r(0.0, u), 1e-12));
        prop_assert!(close(c.kernel_r(0.0, u), -s.kernel_q(0.0, u), 1e-12));
        prop_assert!(close(c.kernel_dq0(u), s.kernel_dr0(u), 1e-12));
        prop_assert!(close(c.kernel_dr0(u), s.kernel_dq0(u), 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn z_derivatives_match_central_differences(p in any_problem(), z in -3.0f64..-0.01, gap in 0.01f64..3.0, u2 in -4.0f64..0.0) {
        let c = KernelContext::new(&p).unwrap();
        let h = 1e-6;
        let u = z - gap;
        let fd_q = (c.kernel_q(z + h, u) - c.kernel_q(z - h, u)) / (2.0 * h);
        let fd_r = (c.kernel_r(z + h, u2) - c.kernel_r(z - h, u2)) / (2.0 * h);
        // Differences lose about eps/h relative to the kernel itself.
        let slack_q = 1e-8 * c.kernel_q(z, u).abs();
        let slack_r = 1e-8 * c.kernel_r(z, u2).abs();
        prop_assert!((fd_q - c.kernel_dq(z, u)).abs() <= 1e-6 * c.kernel_dq(z, u).abs() + slack_q,
            "dQ {} vs {}", fd_q, c.kernel_dq(z, u));
        prop_assert!((fd_r - c.kernel_dr(z, u2)).abs() <= 1e-6 * c.kernel_dr(z, u2).abs() + slack_r,
            "dR {} vs {}", fd_r, c.kernel_dr(z, u2));
    }
}

#[test]
fn derivative_at_zero_matches_one_sided_limit() {
    let p = problem(1.0, 0.7, 2.0, 0.5, vec![(1.5, 1.0, 0.3), (0.4, 0.0, 2.0)]);
    let c = KernelContext::new(&p).unwrap();
    let h = 1e-6;
    for u in [-0.2, -1.0, -3.0] {
        let fd = (c.kernel_q(h, u) - c.kernel_q(-h, u)) / (2.0 * h);
        assert!(close(fd, c.kernel_dq0(u), 1e-6), "{fd} {}", c.kernel_dq0(u));
        let fd = (c.kernel_r(h, u) - c.kernel_r(-h, u)) / (2.0 * h);
        assert!(close(fd, c.kernel_dr0(u), 1e-6));
    }
}

#[test]
fn aux_functions_continuous_across_small_denominator() {
    for (z, u) in [(0.0, -1.0), (-0.5, -2.0), (-2.0, -2.5)] {
        let above = problem(1.0, 1.0, 1.0, 1.0, vec![(1.0, 1.0e-10 * 1.001, 0.0)]);
        let below = problem(1.0, 1.0, 1.0, 1.0, vec![(1.0, 1.0e-10 * 0.999, 0.0)]);
        let (a, b) = (KernelContext::new(&above).unwrap(), KernelContext::new(&below).unwrap());
        assert!(close(a.aux_c(0, z, u), b.aux_c(0, z, u), 1e-8));
        assert!(close(a.aux_d(0, z, u), b.aux_d(0, z, u), 1e-8));
    }
}

fn log_slope(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    (f(hi).abs().ln() - f(lo).abs().ln()) / (hi - lo)
}

#[test]
fn kernels_decay_at_predicted_rates() {
    let cases = [
        problem(1.0, 0.5, 2.0, 0.0, vec![]),
        problem(0.3, 1.2, 0.5, 3.0, vec![(2.0, 1.0, 1.0)]),
        problem(1.0, 1.0, 0.0, 1.0, vec![(0.7, 0.0, 2.0), (1.1, 3.0, 0.0)]),
    ];
    for p in &cases {
        let c = KernelContext::new(p).unwrap();
        let b = p.total_drive();
        let (lo, hi) = (-40.0, -30.0);
        let k_rate = p.mu_ij + p.params_j.r + b;
        let r_rate = p.mu_ji + p.params_i.r + b;
        assert!(close(log_slope(|u| c.kernel_k0(u), lo, hi), k_rate, 0.05));
        assert!(close(log_slope(|u| c.kernel_q(0.0, u), lo, hi), k_rate, 0.05));
        assert!(close(log_slope(|u| c.kernel_r(0.0, u), lo, hi), r_rate, 0.05));
        assert!(close(log_slope(|u| c.kernel_m0(u), lo, hi), r_rate, 0.05));
    }
}

#[test]
fn no_drive_closed_forms() {
    let c = KernelContext::new(&problem(0.8, 1.3, 2.0, 0.4, vec![])).unwrap();
    for &(z, u) in &[(0.0f64, 0.0f64), (-1.0, -2.0), (-0.3, -0.4)] {
        let q = -1.3 * (1.3 * (u - z) + 2.0 * u).exp();
        assert!(close(c.kernel_q(z, u), q, 1e-14));
    }
    assert_eq!(c.kernel_q(0.0, 0.0), -1.3);
    let u: f64 = -0.9;
    assert!(close(c.kernel_dq0(u), 1.3 * 1.3 * ((1.3 + 2.0) * u).exp(), 1e-14));
}
