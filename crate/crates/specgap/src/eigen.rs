//! Reference eigenvalues from direct discretization, used to check the
//! analytic bounds, plus Rayleigh quotients of explicit test functions.
//!
//! The equation a u″ + b u′ = −λ u is kept in flux form: couplings between
//! neighbouring nodes are reciprocal scale masses 1/ν(cell), the exact
//! harmonic average of e^C over the cell, and node weights are speed masses
//! of the surrounding half-cells. The pencil A u = λ W u is symmetrized by
//! the diagonal scaling W^{-1/2}, the requested eigenvalue isolated by
//! Sturm-count bisection, and the eigenvector recovered by inverse
//! iteration. Reflecting rows drop the outer flux; absorbing rows pin the
//! boundary sample to zero. Infinite endpoints are first cut where the
//! relevant tail mass drops below a threshold.

use crate::basic::{BoundError, BoundaryCase, EndpointCode};
use crate::measure::CumulativeMeasure;
use crate::problem::{Density, DiffusionProblem};
use crate::testfn::TestFunction;

/// Cuts with |x| beyond this bound are refused; the tail decays too slowly
/// for a truncated surrogate to be trustworthy.
const CUT_CAP: f64 = 1e8;

/// Where an infinite endpoint was cut and how much mass fell outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailCut {
    pub at: f64,
    pub dropped: f64,
}

/// Cuts applied by `truncate_domain`; empty on finite intervals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TruncationReport {
    pub left: Option<TailCut>,
    pub right: Option<TailCut>,
}

impl TruncationReport {
    pub fn is_empty(&self) -> bool {
        self.left.is_none() && self.right.is_none()
    }
}

/// A discrete principal eigenvalue with its eigenfunction samples.
#[derive(Clone, Debug)]
pub struct EigenEstimate {
    pub lambda: f64,
    pub case: BoundaryCase,
    pub grid: Vec<f64>,
    /// Samples at `grid`, scaled so the peak sample is exactly +1.
    pub eigenfunction: Vec<f64>,
    pub truncation: TruncationReport,
    /// Richardson error estimate from the half-resolution solve.
    pub error_estimate: f64,
}

fn pick_tail_measure<'a>(
    p: &'a DiffusionProblem,
    code: EndpointCode,
    left_side: bool,
) -> Result<&'a CumulativeMeasure, BoundError> {
    // Reflecting ends are governed by the speed mass beyond the cut;
    // absorbing ends by the scale mass when it converges, falling back to
    // speed when it does not (the boundary is then unreachable anyway).
    if code == EndpointCode::D {
        let diverges = if left_side {
            p.nu().left_tail_infinite()
        } else {
            p.nu().right_tail_infinite()
        }
        .map_err(|e| p.resolve(e))?;
        if !diverges {
            return Ok(p.nu());
        }
    }
    Ok(p.mu())
}

fn find_cut(
    p: &DiffusionProblem,
    code: EndpointCode,
    left_side: bool,
    eps: f64,
) -> Result<TailCut, BoundError> {
    let side = if left_side { "left" } else { "right" };
    let slow = || BoundError::TailNotDecaying { side, cap: CUT_CAP, eps, label: p.label.clone() };
    let m = pick_tail_measure(p, code, left_side)?;
    let diverges = if left_side { m.left_tail_infinite() } else { m.right_tail_infinite() }
        .map_err(|e| p.resolve(e))?;
    if diverges {
        return Err(slow());
    }
    let tail = |t: f64| {
        let r = if left_side { m.mass(f64::NEG_INFINITY, t) } else { m.mass(t, f64::INFINITY) };
        r.map_err(|e| p.resolve(e))
    };
    let dir = if left_side { -1.0 } else { 1.0 };
    let mut step = 1.0;
    let mut outer = p.theta + dir * step;
    while tail(outer)? > eps {
        step *= 2.0;
        outer = p.theta + dir * step;
        if outer.abs() > CUT_CAP {
            return Err(slow());
        }
    }
    let mut inner = p.theta;
    for _ in 0..200 {
        let mid = 0.5 * (inner + outer);
        if mid == inner || mid == outer {
            break;
        }
        if tail(mid)? > eps {
            inner = mid;
        } else {
            outer = mid;
        }
        if (outer - inner).abs() <= 1e-9 * (1.0 + outer.abs()) {
            break;
        }
    }
    Ok(TailCut { at: outer, dropped: tail(outer)? })
}

/// Replace infinite endpoints by finite cuts where the relevant tail mass
/// drops below `tail_eps`. Finite intervals pass through untouched.
pub fn truncate_domain(
    problem: &DiffusionProblem,
    case: BoundaryCase,
    tail_eps: f64,
) -> Result<(DiffusionProblem, TruncationReport), BoundError> {
    if !(tail_eps > 0.0 && tail_eps.is_finite()) {
        return Err(BoundError::BadTailEps { value: tail_eps });
    }
    let mut report = TruncationReport::default();
    let mut lo = problem.left;
    let mut hi = problem.right;
    if lo.is_infinite() {
        let cut = find_cut(problem, case.left_code, true, tail_eps)?;
        lo = cut.at;
        report.left = Some(cut);
    }
    if hi.is_infinite() {
        let cut = find_cut(problem, case.right_code, false, tail_eps)?;
        hi = cut.at;
        report.right = Some(cut);
    }
    if report.is_empty() {
        return Ok((problem.clone(), report));
    }
    Ok((problem.restricted(lo, hi)?, report))
}

fn fail(p: &DiffusionProblem, message: impl Into<String>) -> BoundError {
    BoundError::EigenSolve { label: p.label.clone(), message: message.into() }
}

fn gershgorin(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let m = diag.len();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        let mut rad = 0.0;
        if i > 0 {
            rad += off[i - 1].abs();
        }
        if i < m - 1 {
            rad += off[i].abs();
        }
        lo = lo.min(diag[i] - rad);
        hi = hi.max(diag[i] + rad);
    }
    let pad = 1e-12 * (hi - lo).abs().max(1e-300);
    (lo - pad, hi + pad)
}

/// Eigenvalues strictly below sigma, by the LDLᵀ pivot sign count.
fn count_below(diag: &[f64], off: &[f64], sigma: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0f64;
    for i in 0..diag.len() {
        let e2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
        d = (diag[i] - sigma) - e2 / d;
        if d.abs() < 1e-300 {
            d = -1e-300;
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn bisect_eigenvalue(diag: &[f64], off: &[f64], k: usize, span: (f64, f64)) -> f64 {
    let (mut lo, mut hi) = span;
    for _ in 0..600 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solve (T - sigma I) x = rhs for symmetric tridiagonal T, with partial
/// pivoting. Near-singular shifts produce huge, finite solutions, which is
/// exactly what inverse iteration feeds on; None signals overflow.
fn solve_shifted(diag: &[f64], off: &[f64], sigma: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let m = diag.len();
    let mut main: Vec<f64> = diag.iter().map(|d| d - sigma).collect();
    let mut upper: Vec<f64> = off.to_vec();
    upper.push(0.0);
    let lower: Vec<f64> = off.to_vec();
    let mut upper2 = vec![0.0; m];
    let mut x: Vec<f64> = rhs.to_vec();
    for i in 0..m - 1 {
        if main[i].abs() >= lower[i].abs() {
            if main[i] == 0.0 {
                main[i] = 1e-300;
            }
            let f = lower[i] / main[i];
            main[i + 1] -= f * upper[i];
            x[i + 1] -= f * x[i];
        } else {
            // Swap rows i and i+1, then eliminate.
            let f = main[i] / lower[i];
            let om = main[i + 1];
            let ou = upper[i + 1];
            main[i] = lower[i];
            main[i + 1] = upper[i] - f * om;
            upper[i] = om;
            upper2[i] = ou;
            upper[i + 1] = -f * ou;
            let xt = x[i];
            x[i] = x[i + 1];
            x[i + 1] = xt - f * x[i];
        }
    }
    if main[m - 1] == 0.0 {
        main[m - 1] = 1e-300;
    }
    x[m - 1] /= main[m - 1];
    if m >= 2 {
        x[m - 2] = (x[m - 2] - upper[m - 2] * x[m - 1]) / main[m - 2];
    }
    for i in (0..m.saturating_sub(2)).rev() {
        x[i] = (x[i] - upper[i] * x[i + 1] - upper2[i] * x[i + 2]) / main[i];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

fn inverse_iteration(diag: &[f64], off: &[f64], lambda: f64, kernel: Option<&[f64]>) -> Vec<f64> {
    let m = diag.len();
    let kn2 = kernel.map(|k| k.iter().map(|v| v * v).sum::<f64>());
    let project = |v: &mut Vec<f64>| {
        if let (Some(k), Some(n2)) = (kernel, kn2) {
            let dot: f64 = v.iter().zip(k).map(|(a, b)| a * b).sum();
            let c = dot / n2;
            for (val, kv) in v.iter_mut().zip(k) {
                *val -= c * kv;
            }
        }
    };
    let mut v: Vec<f64> = (0..m).map(|i| (1.0 + 0.7 * i as f64).sin() + 0.3).collect();
    for _ in 0..5 {
        project(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        for val in &mut v {
            *val /= norm;
        }
        match solve_shifted(diag, off, lambda, &v) {
            Some(next) => v = next,
            None => break,
        }
    }
    project(&mut v);
    v
}

const GAUSS7: [(f64, f64); 7] = [
    (-0.949107912342759, 0.129484966168870),
    (-0.741531185599394, 0.279705391489277),
    (-0.405845151377397, 0.381830050505119),
    (0.0, 0.417959183673469),
    (0.405845151377397, 0.381830050505119),
    (0.741531185599394, 0.279705391489277),
    (0.949107912342759, 0.129484966168870),
];

/// ln of the cell mass ∫ e^{logdens} over [lo, hi], by a fixed Gauss rule
/// factored about the midpoint value. Truncated problems carry densities
/// like e^{±70} that a plain integral cannot hold; the log survives, and
/// neighbouring logs cancel when the matrix entries are formed.
fn log_cell_mass(logdens: &Density, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let anchor = logdens(mid);
    if anchor.is_nan() {
        return f64::NAN;
    }
    let reference = if anchor.is_finite() { anchor } else { 0.0 };
    let mut sum = 0.0;
    for (t, w) in GAUSS7 {
        sum += w * (logdens(mid + half * t) - reference).exp();
    }
    reference + (sum * half).ln()
}

/// One discretization at a fixed node count: (lambda, nodes, samples).
fn discrete_eigen(
    p: &DiffusionProblem,
    case: BoundaryCase,
    n: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>), BoundError> {
    let (l, r) = (p.left, p.right);
    let h = (r - l) / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| if i == n - 1 { r } else { l + i as f64 * h }).collect();
    let log_mu = p.log_mu_density_arc();
    let log_nu = p.log_nu_density_arc();
    let bad_cell = |p: &DiffusionProblem, kind: &str, at: f64| {
        if let Some(e) = p.take_poison() {
            return BoundError::Problem(e);
        }
        fail(p, format!("{kind} mass on the cell at x = {at:.6} is degenerate"))
    };

    // lcoup[i] = ln coupling over (x_i, x_{i+1}), the reciprocal scale mass.
    let mut lcoup = Vec::with_capacity(n - 1);
    for w in xs.windows(2) {
        let lm = log_cell_mass(&log_nu, w[0], w[1]);
        if !lm.is_finite() {
            return Err(bad_cell(p, "scale", w[0]));
        }
        lcoup.push(-lm);
    }

    let first = if case.left_code == EndpointCode::D { 1 } else { 0 };
    let last = if case.right_code == EndpointCode::D { n - 2 } else { n - 1 };
    let m = last + 1 - first;
    if m < 3 {
        return Err(fail(p, "fewer than three free nodes after boundary rows"));
    }

    // lweight[k] = ln speed mass of the half-cells around the free node.
    let mut lweight = Vec::with_capacity(m);
    for j in first..=last {
        let lo_b = if j == 0 { xs[0] } else { 0.5 * (xs[j - 1] + xs[j]) };
        let hi_b = if j == n - 1 { xs[n - 1] } else { 0.5 * (xs[j] + xs[j + 1]) };
        let lw = log_cell_mass(&log_mu, lo_b, hi_b);
        if !lw.is_finite() {
            return Err(bad_cell(p, "speed", xs[j]));
        }
        lweight.push(lw);
    }

    let mut diag = Vec::with_capacity(m);
    let mut off = Vec::with_capacity(m - 1);
    for (k, j) in (first..=last).enumerate() {
        let mut d = 0.0;
        if j > 0 {
            d += (lcoup[j - 1] - lweight[k]).exp();
        }
        if j < n - 1 {
            d += (lcoup[j] - lweight[k]).exp();
        }
        diag.push(d);
        if j < last {
            off.push(-(lcoup[j] - 0.5 * (lweight[k] + lweight[k + 1])).exp());
        }
    }
    if !diag.iter().chain(off.iter()).all(|v| v.is_finite()) {
        return Err(fail(p, "matrix entries overflow; the coefficients span too wide a dynamic range"));
    }

    let span = gershgorin(&diag, &off);
    let lambda = if case == BoundaryCase::NN {
        let zero = bisect_eigenvalue(&diag, &off, 0, span);
        let second = bisect_eigenvalue(&diag, &off, 1, span);
        if !(zero.abs() < 1e-8 * second.abs()) {
            return Err(fail(
                p,
                format!(
                    "the reflecting pencil's smallest eigenvalue {zero:.3e} is not negligible against the next {second:.3e}"
                ),
            ));
        }
        second
    } else {
        bisect_eigenvalue(&diag, &off, 0, span)
    };
    if !lambda.is_finite() || lambda < -1e-9 * span.1.abs().max(1.0) {
        return Err(fail(p, format!("bisection produced {lambda:.3e}; the pencil is indefinite")));
    }
    let lambda = lambda.max(0.0);

    let kernel: Option<Vec<f64>> = if case == BoundaryCase::NN {
        Some(lweight.iter().map(|lw| (0.5 * lw).exp()).collect())
    } else {
        None
    };
    let v = inverse_iteration(&diag, &off, lambda, kernel.as_deref());
    let mut g = vec![0.0; n];
    for (k, j) in (first..=last).enumerate() {
        g[j] = v[k] * (-0.5 * lweight[k]).exp();
    }
    let mut peak = 0usize;
    for (i, val) in g.iter().enumerate() {
        if val.abs() > g[peak].abs() {
            peak = i;
        }
    }
    if g[peak] != 0.0 {
        let scale = g[peak];
        for val in &mut g {
            *val /= scale;
        }
    }
    Ok((lambda, xs, g))
}

/// Discrete principal eigenvalue on a finite interval: the smallest for
/// cases with an absorbing end, the smallest nonzero for NN. Solves at
/// `n_grid` and `2 n_grid` nodes; the finer result is reported with a
/// Richardson error estimate from the pair.
pub fn solve_eigen_fd(
    problem: &DiffusionProblem,
    case: BoundaryCase,
    n_grid: usize,
) -> Result<EigenEstimate, BoundError> {
    if !(problem.left.is_finite() && problem.right.is_finite()) {
        return Err(fail(problem, "the interval is unbounded; truncate it first"));
    }
    if n_grid < 64 {
        return Err(fail(problem, format!("n_grid = {n_grid} is below the minimum of 64")));
    }
    let (coarse, _, _) = discrete_eigen(problem, case, n_grid)?;
    let (lambda, grid, eigenfunction) = discrete_eigen(problem, case, 2 * n_grid)?;
    let error_estimate = ((coarse - lambda).abs() / 3.0).max(f64::EPSILON * lambda.abs());
    Ok(EigenEstimate {
        lambda,
        case,
        grid,
        eigenfunction,
        truncation: TruncationReport::default(),
        error_estimate,
    })
}

/// Truncate infinite endpoints, solve, and carry the truncation report.
pub fn solve_eigen(
    problem: &DiffusionProblem,
    case: BoundaryCase,
    n_grid: usize,
    tail_eps: f64,
) -> Result<EigenEstimate, BoundError> {
    let (cut, report) = truncate_domain(problem, case, tail_eps)?;
    let mut est = solve_eigen_fd(&cut, case, n_grid)?;
    est.truncation = report;
    Ok(est)
}

/// The quotient ∫ f′² e^C / ∫ (f − c)² dμ, an upper bound on the principal
/// eigenvalue for admissible f. The mean c = μ(f)/μ(E) is removed in the NN
/// case and zero otherwise; absorbing finite endpoints require a vanishing
/// boundary value.
pub fn rayleigh_quotient(
    problem: &DiffusionProblem,
    case: BoundaryCase,
    f: &TestFunction,
) -> Result<f64, BoundError> {
    let (l, r) = (problem.left, problem.right);
    let tol = problem.tolerance();
    let mut scale = 0.0f64;
    for k in 1..64 {
        let x = problem.mu().to_x(k as f64 / 64.0);
        let v = f.eval(x).abs();
        if v.is_finite() {
            scale = scale.max(v);
        }
    }
    if scale == 0.0 {
        return Err(BoundError::DegenerateNorm { label: problem.label.clone() });
    }
    for (end, code) in [(l, case.left_code), (r, case.right_code)] {
        if code == EndpointCode::D && end.is_finite() {
            let v = f.eval(end);
            if !(v.abs() <= 1e-6 * scale) {
                return Err(BoundError::AbsorbingEnd { x: end, value: v });
            }
        }
    }
    let log_mu = problem.log_mu_density_arc();
    let log_nu = problem.log_nu_density_arc();
    let theta = problem.theta;

    // e^C is the reciprocal scale density; assemble the products in log
    // space so opposing exponentials cannot meet as inf*0.
    let fd = f.clone();
    let energy = CumulativeMeasure::from_density(
        l,
        r,
        theta,
        move |z: f64| {
            let d = fd.eval_deriv(z);
            if d == 0.0 { 0.0 } else { (2.0 * d.abs().ln() - log_nu(z)).exp() }
        },
        tol,
    );
    let num = energy.total().map_err(|e| problem.resolve(e))?;
    if !num.is_finite() {
        return Err(BoundError::EnergyDivergent { label: problem.label.clone() });
    }

    let center = if case == BoundaryCase::NN {
        let total = problem.mu_mass(l, r)?;
        if !total.is_finite() {
            return Err(BoundError::SpeedMassInfinite {
                op: "rayleigh_quotient",
                label: problem.label.clone(),
            });
        }
        let split = |positive: bool| {
            let lm = log_mu.clone();
            let fv = f.clone();
            CumulativeMeasure::from_density(
                l,
                r,
                theta,
                move |z: f64| {
                    let v = if positive { fv.eval(z) } else { -fv.eval(z) };
                    if v > 0.0 { (lm(z) + v.ln()).exp() } else { 0.0 }
                },
                tol,
            )
        };
        let plus = split(true).total().map_err(|e| problem.resolve(e))?;
        let minus = split(false).total().map_err(|e| problem.resolve(e))?;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(BoundError::SpeedMassInfinite {
                op: "rayleigh_quotient",
                label: problem.label.clone(),
            });
        }
        (plus - minus) / total
    } else {
        0.0
    };

    let fv = f.clone();
    let norm = CumulativeMeasure::from_density(
        l,
        r,
        theta,
        move |z: f64| {
            let v = fv.eval(z) - center;
            if v == 0.0 { 0.0 } else { (log_mu(z) + 2.0 * v.abs().ln()).exp() }
        },
        tol,
    );
    let den = norm.total().map_err(|e| problem.resolve(e))?;
    if !(den.is_finite() && den > 0.0) {
        return Err(BoundError::DegenerateNorm { label: problem.label.clone() });
    }
    Ok(num / den)
}
