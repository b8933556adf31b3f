//! Grids on `(-∞, 0]`, quadrature, the lower incomplete gamma function and a
//! damped fixed-point driver.

use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("tolerance must lie in (0, 1)")]
    InvalidTolerance,
    #[error("invalid grid argument: {0}")]
    InvalidGrid(&'static str),
    #[error("sample {0} is not finite")]
    NonFiniteSample(usize),
    #[error("sample count {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("incomplete gamma outside its domain (s > 0, x >= 0)")]
    DomainError,
}

/// Quadrature rule attached to a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Composite trapezoid, second order.
    Trapezoid,
    /// Trapezoid with Gregory end corrections, sixth order. Short grids fall
    /// back to fourth order, then to plain trapezoid.
    Gregory,
}

/// Uniform grid `z_0 < ... < z_N = 0` with quadrature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub rule: Rule,
}

const GREGORY6: [f64; 5] = [95.0 / 288.0, 317.0 / 240.0, 23.0 / 30.0, 793.0 / 720.0, 157.0 / 160.0];
const GREGORY4: [f64; 3] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];

/// Weights of `rule` for `n` intervals of width `h` (`n + 1` nodes), written
/// into `out[..=n]`.
pub fn rule_weights(rule: Rule, n: usize, h: f64, out: &mut [f64]) {
    let w = &mut out[..=n];
    if n == 0 {
        w[0] = 0.0;
        return;
    }
    w.fill(h);
    let ends: &[f64] = match rule {
        Rule::Gregory if n + 1 >= 2 * GREGORY6.len() => &GREGORY6,
        Rule::Gregory if n + 1 >= 2 * GREGORY4.len() => &GREGORY4,
        _ => &[0.5],
    };
    let m = ends.len();
    for (k, &e) in ends.iter().enumerate() {
        w[k] = e * h;
        w[n - k] = e * h;
    }
    debug_assert!(2 * m <= n + 1);
}

impl Grid {
    /// `intervals` equal steps from `z_min < 0` to 0.
    pub fn uniform(z_min: f64, intervals: usize, rule: Rule) -> Result<Grid, NumericsError> {
        if !(z_min < 0.0) || !z_min.is_finite() {
            return Err(NumericsError::InvalidGrid("z_min must be finite and negative"));
        }
        if intervals == 0 {
            return Err(NumericsError::InvalidGrid("need at least one interval"));
        }
        let n = intervals;
        let nodes: Vec<f64> = (0..=n)
            .map(|k| if k == n { 0.0 } else { z_min * (n - k) as f64 / n as f64 })
            .collect();
        let mut weights = alloc::vec![0.0; n + 1];
        rule_weights(rule, n, -z_min / n as f64, &mut weights);
        Ok(Grid { nodes, weights, rule })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn z_min(&self) -> f64 {
        self.nodes[0]
    }

    /// Node spacing.
    pub fn step(&self) -> f64 {
        -self.nodes[0] / (self.nodes.len() - 1) as f64
    }
}

/// Grid truncated where `e^{decay_rate · z}` falls below `tolerance`, with
/// spacing at most `1/density` and end-corrected trapezoid weights.
pub fn make_grid(decay_rate: f64, tolerance: f64, density: f64) -> Result<Grid, NumericsError> {
    make_grid_with(decay_rate, tolerance, density, Rule::Gregory)
}

/// [`make_grid`] with an explicit quadrature rule.
pub fn make_grid_with(
    decay_rate: f64,
    tolerance: f64,
    density: f64,
    rule: Rule,
) -> Result<Grid, NumericsError> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(NumericsError::InvalidTolerance);
    }
    if !(decay_rate > 0.0) || !decay_rate.is_finite() {
        return Err(NumericsError::InvalidGrid("decay rate must be positive"));
    }
    if !(density >= 2.0) || !density.is_finite() {
        return Err(NumericsError::InvalidGrid("density must be at least 2"));
    }
    let z_min = libm::log(tolerance) / decay_rate;
    let n = libm::ceil(-z_min * density) as usize;
    Grid::uniform(z_min, n.max(1), rule)
}

/// Quadrature of samples `f` taken at the grid nodes.
pub fn integrate(grid: &Grid, f: &[f64]) -> Result<f64, NumericsError> {
    if f.len() != grid.len() {
        return Err(NumericsError::LengthMismatch { expected: grid.len(), got: f.len() });
    }
    if let Some(k) = f.iter().position(|v| !v.is_finite()) {
        return Err(NumericsError::NonFiniteSample(k));
    }
    Ok(dot(&grid.weights, f))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_TERMS: usize = 100_000;

/// `ln γ(s, x)`; `-∞` at `x = 0`.
pub fn ln_lower_incomplete_gamma(s: f64, x: f64) -> Result<f64, NumericsError> {
    if !(s > 0.0) || !(x >= 0.0) || !s.is_finite() {
        return Err(NumericsError::DomainError);
    }
    if x == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if x == f64::INFINITY {
        return Ok(libm::lgamma(s));
    }
    if x < s + 1.0 {
        // γ(s,x) = x^s e^{-x} Σ x^n / (s (s+1) ... (s+n))
        let mut term = 1.0 / s;
        let mut sum = term;
        for n in 1..GAMMA_MAX_TERMS {
            term *= x / (s + n as f64);
            sum += term;
            if term < sum * GAMMA_EPS {
                break;
            }
        }
        Ok(s * libm::log(x) - x + libm::log(sum))
    } else {
        // Lentz evaluation of the continued fraction for Γ(s,x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..GAMMA_MAX_TERMS {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        let ln_q = s * libm::log(x) - x + libm::log(h) - libm::lgamma(s);
        Ok(libm::lgamma(s) + libm::log1p(-libm::exp(ln_q)))
    }
}

/// Lower incomplete gamma `γ(s, x) = ∫_0^x t^{s-1} e^{-t} dt`.
pub fn lower_incomplete_gamma(s: f64, x: f64) -> Result<f64, NumericsError> {
    ln_lower_incomplete_gamma(s, x).map(libm::exp)
}

/// Outcome of [`damped_fixed_point`].
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Last change between iterates, `‖Δx‖∞ / max(1, ‖x‖∞)`.
    pub final_residual: f64,
    pub converged: bool,
    pub damping: f64,
    /// Residual after every iteration.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixedPointError<E> {
    /// The map produced NaN or infinity at this iteration.
    NonFiniteIterate(usize),
    InvalidDamping,
    /// The map itself failed.
    Map(E),
}

impl<E: core::fmt::Display> core::fmt::Display for FixedPointError<E> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FixedPointError::NonFiniteIterate(k) => write!(f, "non-finite iterate at step {k}"),
            FixedPointError::InvalidDamping => write!(f, "damping must lie in (0, 1]"),
            FixedPointError::Map(e) => write!(f, "{e}"),
        }
    }
}

/// Iterates `x ← (1-d) x + d map(x)` until the sup-norm change, relative to
/// `max(1, ‖x‖∞)`, drops to `tolerance` or `max_iter` is reached. Not
/// converging is not an error: the report says so.
pub fn damped_fixed_point<F, E>(
    initial: Vec<f64>,
    mut map: F,
    damping: f64,
    tolerance: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, FixedPointReport), FixedPointError<E>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, E>,
{
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(FixedPointError::InvalidDamping);
    }
    let mut x = initial;
    let mut report = FixedPointReport {
        iterations: 0,
        final_residual: f64::INFINITY,
        converged: false,
        damping,
        residual_history: Vec::new(),
    };
    for it in 1..=max_iter {
        let mut next = map(&x).map_err(FixedPointError::Map)?;
        let mut res: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for (n, o) in next.iter_mut().zip(&x) {
            if damping < 1.0 {
                *n = (1.0 - damping) * o + damping * *n;
            }
            if !n.is_finite() {
                return Err(FixedPointError::NonFiniteIterate(it));
            }
            res = res.max((*n - o).abs());
            scale = scale.max(n.abs());
        }
        let res = res / scale;
        x = next;
        report.iterations = it;
        report.final_residual = res;
        report.residual_history.push(res);
        if res <= tolerance {
            report.converged = true;
            break;
        }
    }
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(grid: &Grid, f: impl Fn(f64) -> f64) -> Vec<f64> {
        grid.nodes.iter().map(|&z| f(z)).collect()
    }

    #[test]
    fn grid_truncation() {
        let g = make_grid(1.0, 1e-12, 4.0).unwrap();
        assert!((g.z_min() + 27.631021115928547).abs() < 1e-12);
        assert_eq!(*g.nodes.last().unwrap(), 0.0);
        let g = make_grid(2.0, 1e-12, 4.0).unwrap();
        assert!((g.z_min() + 13.815510557964274).abs() < 1e-12);
        let g = make_grid(1.0, 1e-12, 32.0).unwrap();
        assert!(g.len() >= 884);
        assert!(g.step() <= 1.0 / 32.0);
        assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(g.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn grid_argument_errors() {
        assert_eq!(make_grid(1.0, 1.0, 4.0), Err(NumericsError::InvalidTolerance));
        assert_eq!(make_grid(1.0, 0.0, 4.0), Err(NumericsError::InvalidTolerance));
        assert!(make_grid(0.0, 1e-3, 4.0).is_err());
        assert!(make_grid(1.0, 1e-3, 1.0).is_err());
    }

    #[test]
    fn integrate_exponentials() {
        let g = make_grid(1.0, 1e-12, 64.0).unwrap();
        let exact = 1.0 - libm::exp(g.z_min());
        assert!((integrate(&g, &sample(&g, libm::exp)).unwrap() - exact).abs() < 1e-6);
        assert_eq!(integrate(&g, &vec![0.0; g.len()]).unwrap(), 0.0);
        let e2 = integrate(&g, &sample(&g, |z| libm::exp(2.0 * z))).unwrap();
        assert!((e2 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn integrate_rejects_bad_samples() {
        let g = make_grid(1.0, 1e-3, 4.0).unwrap();
        let mut f = vec![1.0; g.len()];
        f[3] = f64::NAN;
        assert_eq!(integrate(&g, &f), Err(NumericsError::NonFiniteSample(3)));
        assert!(matches!(integrate(&g, &[1.0]), Err(NumericsError::LengthMismatch { .. })));
    }

    #[test]
    fn trapezoid_is_second_order() {
        let err = |d: f64| {
            let g = make_grid_with(1.0, 1e-12, d, Rule::Trapezoid).unwrap();
            let exact = 1.0 - libm::exp(g.z_min());
            (integrate(&g, &sample(&g, libm::exp)).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(16.0), err(32.0));
        let ratio = e1 / e2;
        assert!(ratio > 3.8 && ratio < 4.2, "ratio {ratio}");
    }

    #[test]
    fn gregory_refinement_beats_second_order() {
        let err = |d: f64| {
            let g = make_grid(1.0, 1e-12, d).unwrap();
            let exact = 1.0 - libm::exp(g.z_min());
            (integrate(&g, &sample(&g, libm::exp)).unwrap() - exact).abs()
        };
        assert!(err(8.0) < err(4.0) / 4.0);
    }

    #[test]
    fn rule_weights_short_ranges() {
        let mut w = [0.0; 10];
        rule_weights(Rule::Gregory, 0, 0.1, &mut w);
        assert_eq!(w[0], 0.0);
        rule_weights(Rule::Gregory, 1, 0.1, &mut w);
        assert_eq!(&w[..2], &[0.05, 0.05]);
        // Polynomials up to degree 5 are exact with 6th order weights.
        for n in [3usize, 6, 9, 20] {
            let mut w = vec![0.0; n + 1];
            rule_weights(Rule::Gregory, n, 1.0 / n as f64, &mut w);
            let deg = if n + 1 >= 10 { 5 } else if n + 1 >= 6 { 3 } else { 1 };
            for p in 0..=deg {
                let s: f64 = (0..=n).map(|k| w[k] * libm::pow(k as f64 / n as f64, p as f64)).sum();
                assert!((s - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn gamma_closed_forms() {
        for x in [0.0, 1e-3, 0.5, 1.0, 3.0, 20.0, 100.0] {
            let g = lower_incomplete_gamma(1.0, x).unwrap();
            assert!((g - (-libm::expm1(-x))).abs() < 1e-15 * (1.0 + g));
        }
        assert_eq!(lower_incomplete_gamma(2.5, 0.0).unwrap(), 0.0);
        assert_eq!(lower_incomplete_gamma(0.0, 1.0), Err(NumericsError::DomainError));
        assert_eq!(lower_incomplete_gamma(1.0, -1.0), Err(NumericsError::DomainError));
    }

    /// Adaptive Simpson on `t^{-1/2} e^{-t}` after `t = v²`, which removes the
    /// endpoint singularity: `γ(1/2, x) = 2 ∫_0^{√x} e^{-v²} dv`.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn gamma_half_quarter_vs_quadrature() {
        let q = 2.0 * simpson(&|v: f64| libm::exp(-v * v), 0.0, 0.5, 1e-15);
        let g = lower_incomplete_gamma(0.5, 0.25).unwrap();
        assert!((g - q).abs() < 1e-10, "{g} vs {q}");
    }

    #[test]
    fn gamma_monotone_and_limit() {
        for s in [0.3, 1.0, 2.5, 7.0, 40.0] {
            let mut prev = 0.0;
            for k in 1..200 {
                let x = s * 3.0 * k as f64 / 200.0;
                let g = lower_incomplete_gamma(s, x).unwrap();
                assert!(g > prev || (x > 2.0 * s + 10.0 && g >= prev));
                prev = g;
            }
            let full = lower_incomplete_gamma(s, 50.0 * s + 50.0).unwrap();
            let gamma = libm::tgamma(s);
            assert!((full / gamma - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_point_examples() {
        let (x, rep) = damped_fixed_point(vec![0.0], |x| Ok::<_, ()>(vec![x[0] / 2.0 + 1.0]), 1.0, 1e-12, 200).unwrap();
        assert!(rep.converged && (x[0] - 2.0).abs() < 1e-11);

        let (x, rep) = damped_fixed_point(vec![3.0, 4.0], |x| Ok::<_, ()>(x.to_vec()), 1.0, 1e-12, 10).unwrap();
        assert_eq!((rep.iterations, rep.final_residual), (1, 0.0));
        assert_eq!(x, vec![3.0, 4.0]);

        let (x, rep) = damped_fixed_point(vec![1.0], |x| Ok::<_, ()>(vec![libm::cos(x[0])]), 1.0, 1e-12, 1000).unwrap();
        assert!(rep.converged);
        // Dottie number from a Newton iteration on cos(x) - x.
        let mut d: f64 = 1.0;
        for _ in 0..50 {
            d -= (libm::cos(d) - d) / (-libm::sin(d) - 1.0);
        }
        assert!((x[0] - d).abs() < 1e-11);
        assert!((d - 0.7390851332).abs() < 1e-10);
    }

    #[test]
    fn fixed_point_geometric_residuals() {
        let q = 0.6;
        let (_, rep) = damped_fixed_point(vec![0.0], |x| Ok::<_, ()>(vec![q * x[0] + 1.0]), 1.0, 1e-12, 500).unwrap();
        for w in rep.residual_history.windows(2) {
            assert!(w[1] / w[0] <= q + 0.05);
        }
    }

    #[test]
    fn fixed_point_divergence_and_damping_errors() {
        let r = damped_fixed_point(vec![1.0], |x| Ok::<_, ()>(vec![x[0] * 1e300]), 1.0, 1e-12, 10);
        assert_eq!(r.unwrap_err(), FixedPointError::NonFiniteIterate(2));
        let r = damped_fixed_point(vec![1.0], |x| Ok::<_, ()>(x.to_vec()), 0.0, 1e-12, 10);
        assert_eq!(r.unwrap_err(), FixedPointError::InvalidDamping);
    }
}
