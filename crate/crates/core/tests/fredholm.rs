use pairmf_core::model::{Drive, PairProblem};
use pairmf_core::numerics::{Grid, Rule};
use pairmf_core::pairkernel::KernelContext;
use pairmf_core::pairsolve::{
    fredholm_step, ln_a_integral, pair_exact, pair_exact_with, solve_pair, PairSystem, SolveError, SolverConfig,
};

fn sup_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn closed_form_h_is_a_fixed_point_of_the_step() {
    let config = SolverConfig { points_per_efold: 32.0, ..SolverConfig::default() };
    for p in [PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 2.0, 2.0), PairProblem::isolated(1.0, 0.5, 2.0, 2.0, 5.0, 1.0)] {
        let exact = pair_exact_with(&p, &config).unwrap();
        let system = PairSystem::on_grid(KernelContext::new(&p).unwrap(), exact.h_i.grid.clone(), &p);
        let step = fredholm_step(&system, &exact.h_i.values, &exact.h_j.values).unwrap();
        assert!((step.normalization - 1.0).abs() < 1e-8, "{}", step.normalization);
        assert!(sup_rel(&step.h_i, &exact.h_i.values) < 1e-8);
        assert!(sup_rel(&step.h_j, &exact.h_j.values) < 1e-8);
    }
}

#[test]
fn decoupled_fixed_point() {
    // Uncoupled, A = e^{r z}/r and the closed form reduces to h_i = r_j e^{r_i z}.
    let p = PairProblem::isolated(1.0, 0.7, 2.0, 1.6, 0.0, 0.0);
    let system = PairSystem::new(&p, &SolverConfig::default()).unwrap();
    let z = &system.grid.nodes;
    let h_i: Vec<f64> = z.iter().map(|&z| 1.6 * (0.7 * z).exp()).collect();
    let h_j: Vec<f64> = z.iter().map(|&z| 0.7 * (1.6 * z).exp()).collect();
    let step = fredholm_step(&system, &h_i, &h_j).unwrap();
    assert!(sup_rel(&step.h_i, &h_i) < 1e-6);
    assert!(sup_rel(&step.h_j, &h_j) < 1e-6);
    let s = solve_pair(&p, &SolverConfig::default()).unwrap();
    assert!((s.beta_i - 0.7).abs() < 1e-6 && (s.beta_j - 1.6).abs() < 1e-6);
    assert_eq!(s.correlation, 0.0);
}

#[test]
fn one_step_on_three_node_grid_matches_hand_quadrature() {
    let mut p = PairProblem::isolated(1.5, 1.0, 2.0, 0.5, 1.0, 2.0);
    p.drive.push(Drive::new(0.8, 1.0, 0.5));
    let ctx = KernelContext::new(&p).unwrap();
    let grid = Grid::uniform(-1.0, 2, Rule::Trapezoid).unwrap();
    let system = PairSystem::on_grid(ctx.clone(), grid, &p);
    let (h_i, h_j) = system.initial_guess(&p);

    let z = [-1.0f64, -0.5, 0.0];
    let g_i: Vec<f64> = z.iter().map(|&z| 0.5 * (1.5 * z).exp()).collect();
    let g_j: Vec<f64> = z.iter().map(|&z| 1.0 * (2.0 * z).exp()).collect();
    assert_eq!(h_i, g_i);
    assert_eq!(h_j, g_j);

    let w = [0.25, 0.5, 0.25];
    let norm: f64 = (0..3).map(|l| w[l] * (ctx.kernel_k0(z[l]) * g_i[l] + ctx.kernel_m0(z[l]) * g_j[l])).sum();
    let sw = ctx.swapped();
    let (beta_i, beta_j) = (g_j[2], g_i[2]);
    let volterra = |c: &KernelContext, m: usize, h: &[f64]| -> f64 {
        match m {
            0 => 0.0,
            1 => 0.25 * (c.kernel_q(z[1], z[0]) * h[0] + c.kernel_q(z[1], z[1]) * h[1]),
            _ => 0.25 * c.kernel_q(z[2], z[0]) * h[0] + 0.5 * c.kernel_q(z[2], z[1]) * h[1] + 0.25 * c.kernel_q(z[2], z[2]) * h[2],
        }
    };
    let fredholm = |c: &KernelContext, m: usize, h: &[f64]| -> f64 { (0..3).map(|l| w[l] * c.kernel_r(z[m], z[l]) * h[l]).sum() };

    let step = fredholm_step(&system, &h_i, &h_j).unwrap();
    assert!((step.normalization - norm).abs() < 1e-14);
    for m in 0..3 {
        let hand_i = (beta_i * (1.0 * z[m]).exp() - volterra(&ctx, m, &g_i) - fredholm(&ctx, m, &g_j)) / norm;
        let hand_j = (beta_j * (0.5 * z[m]).exp() - volterra(&sw, m, &g_j) - fredholm(&sw, m, &g_i)) / norm;
        assert!((step.h_i[m] - hand_i).abs() < 1e-14 * hand_i.abs().max(1.0), "{m}: {} {hand_i}", step.h_i[m]);
        assert!((step.h_j[m] - hand_j).abs() < 1e-14 * hand_j.abs().max(1.0));
    }
}

#[test]
fn solution_swaps_with_labels() {
    let mut p = PairProblem::isolated(1.0, 0.6, 2.0, 1.5, 3.0, 0.8);
    p.drive.push(Drive::new(1.2, 2.0, 0.0));
    p.drive.push(Drive::new(0.5, 1.0, 1.0));
    let a = solve_pair(&p, &SolverConfig::default()).unwrap();
    let b = solve_pair(&p.swapped(), &SolverConfig::default()).unwrap();
    assert!((a.beta_i / b.beta_j - 1.0).abs() < 1e-9);
    assert!((a.beta_j / b.beta_i - 1.0).abs() < 1e-9);
    assert!((a.correlation - b.correlation).abs() < 1e-9);
    assert!(a.h_i.is_positive_nondecreasing() && a.h_j.is_positive_nondecreasing());
    assert!(a.normalization_residual < 1e-9);
    assert!(a.cross_moment_gap < 1e-6 * a.cross_moment);
}

#[test]
fn error_shrinks_under_refinement() {
    let p = PairProblem::isolated(1.0, 1.0, 1.0, 0.5, 4.0, 1.0);
    let e = pair_exact(&p).unwrap();
    let err = |ppe: f64| {
        let s = solve_pair(&p, &SolverConfig { points_per_efold: ppe, ..SolverConfig::default() }).unwrap();
        (s.beta_i / e.beta_i - 1.0).abs().max((s.beta_j / e.beta_j - 1.0).abs())
    };
    let (e2, e4, e8) = (err(2.0), err(4.0), err(8.0));
    assert!(e4 < e2 && e8 < e4, "{e2} {e4} {e8}");
    assert!(e8 < 1e-6);
}

#[test]
fn a_integral_matches_quadrature() {
    // Direct quadrature of ∫_{-∞}^0 exp(r_a u + r_b ∫_u^0 (e^{μ v} - 1) dv) du.
    for &(ra, rb, mu) in &[(1.0, 1.0, 1.0), (0.5, 2.0, 10.0), (2.0, 0.5, 0.5), (1.0, 3.0, 0.1)] {
        let f = |u: f64| (ra * u + rb * ((1.0 - (mu * u).exp()) / mu + u)).exp();
        let n = 400_000;
        let lo = -60.0 / (ra + rb).min(ra);
        let h = -lo / n as f64;
        let mut s = 0.5 * (f(lo) + f(0.0));
        for k in 1..n {
            s += f(lo + k as f64 * h);
        }
        // Richardson on the trapezoid rule.
        let mut s2 = 0.5 * (f(lo) + f(0.0));
        for k in 1..n / 2 {
            s2 += f(lo + 2.0 * k as f64 * h);
        }
        let quad = (4.0 * s * h - s2 * 2.0 * h) / 3.0;
        let a = ln_a_integral(ra, rb, mu, 0.0).unwrap().exp();
        assert!((a / quad - 1.0).abs() < 1e-9, "{ra} {rb} {mu}: {a} {quad}");
    }
}

#[test]
fn best_iterate_returned_when_not_converged() {
    let p = PairProblem::isolated(1.0, 1.0, 1.0, 1.0, 5.0, 5.0);
    let r = solve_pair(&p, &SolverConfig { max_iter: 2, ..SolverConfig::default() });
    match r {
        Err(SolveError::NotConverged(s)) => {
            assert_eq!(s.report.iterations, 2);
            assert!(!s.report.converged && s.beta_i > 0.0);
        }
        other => panic!("expected NotConverged, got {other:?}"),
    }
}
