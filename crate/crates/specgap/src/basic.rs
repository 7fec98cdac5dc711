//! The four boundary cases' kappa constants and the factor-4 sandwich
//! (inverse/4, inverse) around the principal eigenvalue.
//!
//! DN and ND are one-parameter suprema of a product of opposite-side masses;
//! NN and DD are two-parameter infima of a harmonic-sum objective. All four
//! are computed from their own variational forms, so the duality identities
//! (NN against the dual's DD, DN against the dual's ND) are genuine
//! cross-checks rather than restatements.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::optimize;
use crate::problem::{DiffusionProblem, ProblemError};

/// Objective values past this are treated as an infinite kappa: the estimate
/// is reported as trivial instead of refining a scale the arithmetic cannot
/// support.
const KAPPA_CAP: f64 = 1e12;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum EndpointCode {
    D,
    N,
}

impl EndpointCode {
    fn flipped(self) -> EndpointCode {
        match self {
            EndpointCode::D => EndpointCode::N,
            EndpointCode::N => EndpointCode::D,
        }
    }
}

/// Boundary condition pair; the estimates differ per case.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct BoundaryCase {
    pub left_code: EndpointCode,
    pub right_code: EndpointCode,
}

impl BoundaryCase {
    pub const NN: BoundaryCase = BoundaryCase { left_code: EndpointCode::N, right_code: EndpointCode::N };
    pub const DD: BoundaryCase = BoundaryCase { left_code: EndpointCode::D, right_code: EndpointCode::D };
    pub const DN: BoundaryCase = BoundaryCase { left_code: EndpointCode::D, right_code: EndpointCode::N };
    pub const ND: BoundaryCase = BoundaryCase { left_code: EndpointCode::N, right_code: EndpointCode::D };

    pub fn all() -> [BoundaryCase; 4] {
        [Self::NN, Self::DD, Self::DN, Self::ND]
    }

    /// Exchange D and N at both ends; the case solved by the dual problem.
    pub fn flipped(self) -> BoundaryCase {
        BoundaryCase { left_code: self.left_code.flipped(), right_code: self.right_code.flipped() }
    }

    pub fn is_mixed(self) -> bool {
        self.left_code != self.right_code
    }
}

impl fmt::Display for BoundaryCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |e: EndpointCode| match e {
            EndpointCode::D => 'D',
            EndpointCode::N => 'N',
        };
        write!(f, "{}{}", c(self.left_code), c(self.right_code))
    }
}

impl FromStr for BoundaryCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NN" => Ok(Self::NN),
            "DD" => Ok(Self::DD),
            "DN" => Ok(Self::DN),
            "ND" => Ok(Self::ND),
            other => Err(format!("unknown boundary case {other:?}; expected NN, DD, DN or ND")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Method {
    Basic,
    Bar,
    Underline,
    Iterated,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Basic => "basic",
            Method::Bar => "bar",
            Method::Underline => "underline",
            Method::Iterated => "iterated",
        };
        f.write_str(s)
    }
}

/// Where an estimate's optimum sits.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum Optimizer {
    Point { x: f64 },
    Pair { x: f64, y: f64 },
    Triple { x: f64, y: f64, theta: f64 },
}

/// One computed kappa constant. `inverse` is the eigenvalue-scale side;
/// `kappa = +inf` with `inverse = 0` encodes a trivial estimate, explained
/// by `flag`.
#[derive(Clone, Debug)]
pub struct KappaResult {
    pub case: BoundaryCase,
    pub method: Method,
    pub kappa: f64,
    pub inverse: f64,
    pub optimizer: Option<Optimizer>,
    pub evaluations: u64,
    pub tolerance_achieved: f64,
    pub flag: Option<String>,
}

impl KappaResult {
    pub(crate) fn trivial(case: BoundaryCase, method: Method, evaluations: u64, msg: String) -> Self {
        KappaResult {
            case,
            method,
            kappa: f64::INFINITY,
            inverse: 0.0,
            optimizer: None,
            evaluations,
            tolerance_achieved: 0.0,
            flag: Some(msg),
        }
    }

    pub fn is_trivial(&self) -> bool {
        self.inverse == 0.0 && self.flag.is_some()
    }
}

/// A two-sided eigenvalue band and the constants witnessing each side.
#[derive(Clone, Debug)]
pub struct BoundResult {
    pub case: BoundaryCase,
    pub lower: f64,
    pub upper: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub enum Provenance {
    /// Both sides from one constant: (inverse/4, inverse).
    Sandwich(KappaResult),
    /// Distinct constants witness each side.
    Band { lower: Box<KappaResult>, upper: Box<KappaResult> },
}

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("{op} expects {expected}, got {case}")]
    WrongCase { op: &'static str, expected: &'static str, case: BoundaryCase },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    TestFn(#[from] crate::testfn::TestFnError),
    #[error("{op} needs a finite total scale mass on `{label}`; the lower-bound machinery is undefined when it diverges")]
    ScaleMassInfinite { op: &'static str, label: String },
    #[error("the accumulations never balance on `{label}`: {dominant}")]
    NoBalance { label: String, dominant: &'static str },
    #[error("iterate {iteration} lost positivity at x = {x} (value {value}); improvement aborted")]
    PositivityLost { iteration: usize, x: f64, value: f64 },
    #[error("tail_eps must be positive and finite, got {value}")]
    BadTailEps { value: f64 },
    #[error("no cut below |x| = {cap:.0e} brings the {side} tail mass under {eps:.1e} on `{label}`; pass finite endpoints instead")]
    TailNotDecaying { side: &'static str, cap: f64, eps: f64, label: String },
    #[error("eigenvalue solve failed on `{label}`: {message}")]
    EigenSolve { label: String, message: String },
    #[error("the test function must vanish at the absorbing endpoint x = {x}; it evaluates to {value}")]
    AbsorbingEnd { x: f64, value: f64 },
    #[error("the energy integral of the test function diverges on `{label}`")]
    EnergyDivergent { label: String },
    #[error("{op} needs a finite total speed mass on `{label}`; the centered quotient is undefined when it diverges")]
    SpeedMassInfinite { op: &'static str, label: String },
    #[error("the test function has no mass against the speed measure on `{label}`; the quotient is undefined")]
    DegenerateNorm { label: String },
}

/// Records the first mass-query failure seen inside an objective; the
/// optimizer keeps running on +inf values and the error is surfaced after.
pub(crate) struct ErrCell(RefCell<Option<ProblemError>>);

impl ErrCell {
    pub(crate) fn new() -> Self {
        ErrCell(RefCell::new(None))
    }

    pub(crate) fn grab(&self, r: Result<f64, ProblemError>) -> f64 {
        match r {
            Ok(v) => v,
            Err(e) => {
                let mut slot = self.0.borrow_mut();
                if slot.is_none() {
                    *slot = Some(e);
                }
                f64::NAN
            }
        }
    }

    pub(crate) fn take(self) -> Option<ProblemError> {
        self.0.into_inner()
    }

    /// `take` without consuming the cell, for use inside closures.
    pub(crate) fn take_ref(&self) -> Option<ProblemError> {
        self.0.borrow_mut().take()
    }
}

/// Scan seeds: quantiles of the speed measure when its total is finite,
/// else of the scale measure, else uniform in map space.
pub(crate) fn seed_points(p: &DiffusionProblem, n: usize) -> Result<Vec<f64>, ProblemError> {
    if let Some(s) = p.mu().quantile_seeds(n).map_err(|e| p.resolve(e))? {
        return Ok(s);
    }
    if let Some(s) = p.nu().quantile_seeds(n).map_err(|e| p.resolve(e))? {
        return Ok(s);
    }
    Ok(optimize::uniform_seeds(n))
}

/// One-parameter supremum for the mixed cases: over interior x, the scale
/// mass from the Dirichlet end times the speed mass to the Neumann end.
pub fn kappa_half(problem: &DiffusionProblem, case: BoundaryCase) -> Result<KappaResult, BoundError> {
    if !case.is_mixed() {
        return Err(BoundError::WrongCase { op: "kappa_half", expected: "DN or ND", case });
    }
    let dirichlet_left = case == BoundaryCase::DN;
    let (l, r) = (problem.left, problem.right);
    let (mu, nu) = (problem.mu(), problem.nu());

    let speed_tail_infinite = if dirichlet_left {
        mu.right_tail_infinite().map_err(|e| problem.resolve(e))?
    } else {
        mu.left_tail_infinite().map_err(|e| problem.resolve(e))?
    };
    if speed_tail_infinite {
        return Ok(KappaResult::trivial(
            case,
            Method::Basic,
            0,
            "speed mass near the Neumann endpoint is infinite; estimate is trivial".into(),
        ));
    }
    let scale_tail_infinite = if dirichlet_left {
        nu.left_tail_infinite().map_err(|e| problem.resolve(e))?
    } else {
        nu.right_tail_infinite().map_err(|e| problem.resolve(e))?
    };
    if scale_tail_infinite {
        return Ok(KappaResult::trivial(
            case,
            Method::Basic,
            0,
            "scale mass near the Dirichlet endpoint is infinite; estimate is trivial".into(),
        ));
    }

    let errs = ErrCell::new();
    let mut obj = |s: f64| {
        let x = mu.to_x(s);
        let v = if dirichlet_left {
            errs.grab(problem.nu_mass(l, x)) * errs.grab(problem.mu_mass(x, r))
        } else {
            errs.grab(problem.mu_mass(l, x)) * errs.grab(problem.nu_mass(x, r))
        };
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    let seeds = seed_points(problem, 64)?;
    let out = optimize::scan_golden_min(&mut obj, &seeds, 1e-8);
    if let Some(e) = errs.take() {
        return Err(e.into());
    }
    let sup = -out.best.value;
    if !sup.is_finite() || sup <= 0.0 {
        return Ok(KappaResult {
            case,
            method: Method::Basic,
            kappa: 0.0,
            inverse: f64::INFINITY,
            optimizer: None,
            evaluations: out.evals,
            tolerance_achieved: out.tol_achieved,
            flag: Some("objective vanished at every admissible point; no estimate".into()),
        });
    }
    if sup > KAPPA_CAP {
        return Ok(KappaResult::trivial(
            case,
            Method::Basic,
            out.evals,
            format!("kappa exceeds {KAPPA_CAP:e}; reporting the trivial estimate"),
        ));
    }
    Ok(KappaResult {
        case,
        method: Method::Basic,
        kappa: sup,
        inverse: 1.0 / sup,
        optimizer: Some(Optimizer::Point { x: mu.to_x(out.best.s) }),
        evaluations: out.evals,
        tolerance_achieved: out.tol_achieved,
        flag: if out.converged { None } else { Some("optimizer budget exhausted; best value reported".into()) },
    })
}

/// Two-parameter infimum for the matched cases. For NN the outer intervals
/// carry speed mass and the inner one scale mass; DD exchanges the roles.
/// The returned `inverse` is the infimum itself.
pub fn kappa_double(problem: &DiffusionProblem, case: BoundaryCase) -> Result<KappaResult, BoundError> {
    if case.is_mixed() {
        return Err(BoundError::WrongCase { op: "kappa_double", expected: "NN or DD", case });
    }
    let neumann = case == BoundaryCase::NN;
    let (l, r) = (problem.left, problem.right);
    let (mu, nu) = (problem.mu(), problem.nu());

    if neumann {
        let total = problem.mu_mass(l, r)?;
        if !total.is_finite() {
            return Ok(KappaResult::trivial(
                case,
                Method::Basic,
                0,
                "total speed-measure mass is infinite; estimate is trivial".into(),
            ));
        }
    }
    // Outer-tail scale masses may be genuinely infinite in the DD objective;
    // those reciprocals are exact zeros. An interior mass that overflowed is
    // a different matter: its reciprocal is unknown, so the point is skipped.
    let (left_tail_inf, right_tail_inf) = if neumann {
        (false, false)
    } else {
        (
            nu.left_tail_infinite().map_err(|e| problem.resolve(e))?,
            nu.right_tail_infinite().map_err(|e| problem.resolve(e))?,
        )
    };

    let errs = ErrCell::new();
    let mut obj = |sx: f64, sy: f64| {
        let x = mu.to_x(sx);
        let y = mu.to_x(sy);
        if !(x < y) {
            return f64::INFINITY;
        }
        let v = if neumann {
            let outer = 1.0 / errs.grab(problem.mu_mass(l, x)) + 1.0 / errs.grab(problem.mu_mass(y, r));
            outer / errs.grab(problem.nu_mass(x, y))
        } else {
            let lo = if left_tail_inf { 0.0 } else { reciprocal(errs.grab(problem.nu_mass(l, x))) };
            let hi = if right_tail_inf { 0.0 } else { reciprocal(errs.grab(problem.nu_mass(y, r))) };
            (lo + hi) / errs.grab(problem.mu_mass(x, y))
        };
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let seeds = seed_points(problem, 32)?;
    let out = optimize::grid_sweep_min(&mut obj, &seeds, 1e-9, 200, 1e-12);
    if let Some(e) = errs.take() {
        return Err(e.into());
    }
    if out.value <= 1e-12 {
        return Ok(KappaResult::trivial(
            case,
            Method::Basic,
            out.evals,
            "objective infimum is numerically zero; kappa is infinite".into(),
        ));
    }
    if !out.value.is_finite() {
        return Ok(KappaResult {
            case,
            method: Method::Basic,
            kappa: 0.0,
            inverse: f64::INFINITY,
            optimizer: None,
            evaluations: out.evals,
            tolerance_achieved: out.tol_achieved,
            flag: Some("objective was inadmissible at every scanned pair; no estimate".into()),
        });
    }
    Ok(KappaResult {
        case,
        method: Method::Basic,
        kappa: 1.0 / out.value,
        inverse: out.value,
        optimizer: Some(Optimizer::Pair { x: mu.to_x(out.sx), y: mu.to_x(out.sy) }),
        evaluations: out.evals,
        tolerance_achieved: out.tol_achieved,
        flag: if out.converged { None } else { Some("optimizer budget exhausted; best value reported".into()) },
    })
}

/// One evaluation of the kappa objective on the scan grid. Mixed cases
/// sample the one-parameter product (`y` is None); matched cases sample the
/// two-parameter ratio over admissible pairs x < y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanSample {
    pub x: f64,
    pub y: Option<f64>,
    pub value: f64,
}

/// Sample the kappa objective at `n` seed points (mixed) or over all
/// admissible pairs from `n` seeds (matched), for plotting the landscape
/// the optimizer worked on. Inadmissible and overflowed points are skipped.
pub fn kappa_scan(
    problem: &DiffusionProblem,
    case: BoundaryCase,
    n: usize,
) -> Result<Vec<ScanSample>, BoundError> {
    let (l, r) = (problem.left, problem.right);
    let mu = problem.mu();
    let nu = problem.nu();
    let seeds = seed_points(problem, n.max(2))?;
    let errs = ErrCell::new();
    let mut out = Vec::new();

    if case.is_mixed() {
        let dirichlet_left = case == BoundaryCase::DN;
        for &s in &seeds {
            let x = mu.to_x(s);
            let v = if dirichlet_left {
                errs.grab(problem.nu_mass(l, x)) * errs.grab(problem.mu_mass(x, r))
            } else {
                errs.grab(problem.mu_mass(l, x)) * errs.grab(problem.nu_mass(x, r))
            };
            if v.is_finite() {
                out.push(ScanSample { x, y: None, value: v });
            }
        }
    } else {
        let neumann = case == BoundaryCase::NN;
        let (left_tail_inf, right_tail_inf) = if neumann {
            (false, false)
        } else {
            (
                nu.left_tail_infinite().map_err(|e| problem.resolve(e))?,
                nu.right_tail_infinite().map_err(|e| problem.resolve(e))?,
            )
        };
        for (i, &sx) in seeds.iter().enumerate() {
            for &sy in &seeds[i + 1..] {
                let x = mu.to_x(sx);
                let y = mu.to_x(sy);
                if !(x < y) {
                    continue;
                }
                let v = if neumann {
                    let outer =
                        1.0 / errs.grab(problem.mu_mass(l, x)) + 1.0 / errs.grab(problem.mu_mass(y, r));
                    outer / errs.grab(problem.nu_mass(x, y))
                } else {
                    let lo = if left_tail_inf { 0.0 } else { reciprocal(errs.grab(problem.nu_mass(l, x))) };
                    let hi = if right_tail_inf { 0.0 } else { reciprocal(errs.grab(problem.nu_mass(y, r))) };
                    (lo + hi) / errs.grab(problem.mu_mass(x, y))
                };
                if v.is_finite() {
                    out.push(ScanSample { x, y: Some(y), value: v });
                }
            }
        }
    }
    if let Some(e) = errs.take() {
        return Err(e.into());
    }
    Ok(out)
}

/// Reciprocal of a mass that is known finite-by-flag: an overflowed value
/// poisons the evaluation point instead of faking an exact zero.
fn reciprocal(v: f64) -> f64 {
    if v.is_finite() {
        1.0 / v
    } else {
        f64::NAN
    }
}

/// The factor-4 sandwich: lower = inverse/4, upper = inverse. A degenerate
/// infinite inverse yields the vacuous band [0, inf).
pub fn basic_interval(problem: &DiffusionProblem, case: BoundaryCase) -> Result<BoundResult, BoundError> {
    let kr = if case.is_mixed() { kappa_half(problem, case)? } else { kappa_double(problem, case)? };
    let upper = kr.inverse;
    let lower = if upper.is_finite() { upper / 4.0 } else { 0.0 };
    Ok(BoundResult { case, lower, upper, provenance: Provenance::Sandwich(kr) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::QuadTol;

    fn laplace_unit() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(0.0, 1.0, |_| 1.0, |_| 0.0, 0.5, "laplace").unwrap()
    }

    fn ou_half() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(0.0, f64::INFINITY, |_| 0.5, |x| -x, 1.0, "ou_half").unwrap()
    }

    fn ou_whole() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(f64::NEG_INFINITY, f64::INFINITY, |_| 0.5, |x| -x, 0.0, "ou")
            .unwrap()
    }

    fn drift_down() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(0.0, f64::INFINITY, |_| 1.0, |_| -1.0, 1.0, "drift").unwrap()
    }

    fn cauchy_euler(n: f64) -> DiffusionProblem {
        DiffusionProblem::from_coefficients(1.0, n, |x| x * x, |x| x, n.sqrt(), "cauchy").unwrap()
    }

    fn hardy() -> DiffusionProblem {
        DiffusionProblem::from_densities(0.0, f64::INFINITY, |x| 1.0 / (x * x), |_| 1.0, 1.0, "hardy")
            .unwrap()
    }

    #[test]
    fn laplace_double_bounds() {
        for case in [BoundaryCase::DD, BoundaryCase::NN] {
            let k = kappa_double(&laplace_unit(), case).unwrap();
            assert!((k.inverse - 16.0).abs() < 1e-6 * 16.0, "{case}: {}", k.inverse);
            let Some(Optimizer::Pair { x, y }) = k.optimizer else { panic!("no pair") };
            assert!((x - 0.25).abs() < 1e-4 && (y - 0.75).abs() < 1e-4, "({x}, {y})");
            assert!(k.flag.is_none());
            assert!((k.kappa * k.inverse - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_half_bounds() {
        for case in [BoundaryCase::DN, BoundaryCase::ND] {
            let k = kappa_half(&laplace_unit(), case).unwrap();
            assert!((k.inverse - 4.0).abs() < 1e-7, "{case}: {}", k.inverse);
            let Some(Optimizer::Point { x }) = k.optimizer else { panic!("no point") };
            assert!((x - 0.5).abs() < 1e-4);
        }
    }

    #[test]
    fn ou_half_nn_matches_known_value() {
        let k = kappa_double(&ou_half(), BoundaryCase::NN).unwrap();
        assert!((k.inverse - 4.367488).abs() < 2e-5, "{}", k.inverse);
        let Some(Optimizer::Pair { x, y }) = k.optimizer else { panic!("no pair") };
        assert!((x - 0.3163717).abs() < 1e-3, "x = {x}");
        assert!((y - 1.1853227).abs() < 1e-3, "y = {y}");
    }

    #[test]
    fn ou_whole_nn_matches_known_value() {
        let k = kappa_double(&ou_whole(), BoundaryCase::NN).unwrap();
        assert!((k.inverse - 2.088498473).abs() < 1e-5, "{}", k.inverse);
        let Some(Optimizer::Pair { x, y }) = k.optimizer else { panic!("no pair") };
        assert!((x + 0.6359664).abs() < 1e-3, "x = {x}");
        assert!((y - 0.6359664).abs() < 1e-3, "y = {y}");
    }

    #[test]
    fn ou_half_dn_equals_whole_line_nn() {
        // Splitting the symmetric whole-line problem at the origin turns its
        // NN estimate into the half-line DN one.
        let k = kappa_half(&ou_half(), BoundaryCase::DN).unwrap();
        assert!((k.inverse - 2.088498473).abs() < 1e-5, "{}", k.inverse);
        let Some(Optimizer::Point { x }) = k.optimizer else { panic!("no point") };
        assert!((x - 0.6359664).abs() < 1e-3, "x = {x}");
    }

    #[test]
    fn drift_bounds_chased_at_the_open_end() {
        let dd = kappa_double(&drift_down(), BoundaryCase::DD).unwrap();
        assert!((dd.inverse - 1.0).abs() < 1e-6, "{}", dd.inverse);
        let dn = kappa_half(&drift_down(), BoundaryCase::DN).unwrap();
        assert!((dn.inverse - 1.0).abs() < 1e-9, "{}", dn.inverse);
    }

    #[test]
    fn cauchy_euler_rescales_the_laplacian() {
        let n = std::f64::consts::E.powi(2);
        let k = kappa_double(&cauchy_euler(n), BoundaryCase::DD).unwrap();
        assert!((k.inverse - 4.0).abs() < 1e-6, "{}", k.inverse);
        let Some(Optimizer::Pair { x, y }) = k.optimizer else { panic!("no pair") };
        assert!((x - 0.5f64.exp()).abs() < 1e-3, "x = {x}");
        assert!((y - 1.5f64.exp()).abs() < 1e-3, "y = {y}");
    }

    #[test]
    fn hardy_dn_objective_is_constant_one() {
        let k = kappa_half(&hardy(), BoundaryCase::DN).unwrap();
        assert!((k.inverse - 1.0).abs() < 1e-9, "{}", k.inverse);
    }

    #[test]
    fn infinite_speed_mass_gives_trivial_nn() {
        let k = kappa_double(&hardy(), BoundaryCase::NN).unwrap();
        assert!(k.is_trivial());
        assert_eq!(k.inverse, 0.0);
        assert!(k.kappa.is_infinite());
        assert!(k.optimizer.is_none());
    }

    #[test]
    fn trivial_dn_when_neumann_side_speed_mass_diverges() {
        // Dual of the half-line OU problem: speed density exp(x^2).
        let k = kappa_half(&ou_half().dualize(), BoundaryCase::DN).unwrap();
        assert!(k.is_trivial(), "{:?}", k.flag);
    }

    #[test]
    fn duality_identities() {
        for p in [laplace_unit(), ou_half(), cauchy_euler(7.0)] {
            let nn = kappa_double(&p, BoundaryCase::NN).unwrap();
            let dd_dual = kappa_double(&p.dualize(), BoundaryCase::DD).unwrap();
            if nn.is_trivial() {
                assert!(dd_dual.is_trivial());
                continue;
            }
            assert!(
                (nn.kappa - dd_dual.kappa).abs() < 1e-6 * nn.kappa.abs(),
                "{}: {} vs {}",
                p.label,
                nn.kappa,
                dd_dual.kappa
            );
        }
    }

    #[test]
    fn code_swap_identity() {
        for p in [laplace_unit(), ou_half(), cauchy_euler(7.0)] {
            let dn = kappa_half(&p, BoundaryCase::DN).unwrap();
            let nd_dual = kappa_half(&p.dualize(), BoundaryCase::ND).unwrap();
            assert!(
                (dn.kappa - nd_dual.kappa).abs() < 1e-6 * dn.kappa.abs(),
                "{}: {} vs {}",
                p.label,
                dn.kappa,
                nd_dual.kappa
            );
        }
    }

    #[test]
    fn dn_optimum_dominates_finer_scan() {
        for p in [laplace_unit(), ou_half()] {
            let k = kappa_half(&p, BoundaryCase::DN).unwrap();
            let seeds = seed_points(&p, 640).unwrap();
            let mut worst = 0.0f64;
            for s in seeds {
                let x = p.mu().to_x(s);
                let v = p.nu_mass(p.left, x).unwrap() * p.mu_mass(x, p.right).unwrap();
                worst = worst.max(v);
            }
            assert!(worst <= k.kappa * (1.0 + 1e-7), "{}: {} vs {}", p.label, worst, k.kappa);
        }
    }

    #[test]
    fn sandwich_construction() {
        let b = basic_interval(&laplace_unit(), BoundaryCase::DD).unwrap();
        assert_eq!(b.lower, b.upper / 4.0);
        let lambda = std::f64::consts::PI.powi(2);
        assert!(b.lower <= lambda && lambda <= b.upper);
        let Provenance::Sandwich(k) = &b.provenance else { panic!("wrong provenance") };
        assert_eq!(k.inverse, b.upper);
    }

    #[test]
    fn sandwich_collapses_for_trivial_estimates() {
        let b = basic_interval(&hardy(), BoundaryCase::NN).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn wrong_case_rejected() {
        assert!(matches!(
            kappa_half(&laplace_unit(), BoundaryCase::NN),
            Err(BoundError::WrongCase { .. })
        ));
        assert!(matches!(
            kappa_double(&laplace_unit(), BoundaryCase::DN),
            Err(BoundError::WrongCase { .. })
        ));
    }

    #[test]
    fn case_parsing_and_display() {
        assert_eq!("nd".parse::<BoundaryCase>().unwrap(), BoundaryCase::ND);
        assert_eq!("NN".parse::<BoundaryCase>().unwrap().to_string(), "NN");
        assert!("XY".parse::<BoundaryCase>().is_err());
        assert_eq!(BoundaryCase::DN.flipped(), BoundaryCase::ND);
        assert_eq!(BoundaryCase::NN.flipped(), BoundaryCase::DD);
    }

    #[test]
    fn custom_tolerance_is_respected() {
        let p = DiffusionProblem::from_coefficients_with_tol(
            0.0,
            1.0,
            |_| 1.0,
            |_| 0.0,
            0.5,
            "laplace",
            QuadTol { abs: 1e-9, rel: 1e-7 },
        )
        .unwrap();
        let k = kappa_double(&p, BoundaryCase::DD).unwrap();
        assert!((k.inverse - 16.0).abs() < 1e-4 * 16.0);
    }
}
