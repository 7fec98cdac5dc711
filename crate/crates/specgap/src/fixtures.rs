//! Built-in example problems with their reference values, plus the
//! expression-backed constructors the CLI shares with them.

use crate::basic::BoundaryCase;
use crate::expr::{ExprAst, ExprError};
use crate::problem::{DiffusionProblem, ProblemError};
use crate::quad::QuadTol;
use std::f64::consts::{E, PI};

/// Pipeline step a reference value is checked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodName {
    Basic,
    Bar,
    Underline,
    Iterate,
    Oracle,
    Rayleigh,
}

impl MethodName {
    pub const ALL: [MethodName; 6] = [
        MethodName::Basic,
        MethodName::Bar,
        MethodName::Underline,
        MethodName::Iterate,
        MethodName::Oracle,
        MethodName::Rayleigh,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Basic => "basic",
            MethodName::Bar => "bar",
            MethodName::Underline => "underline",
            MethodName::Iterate => "iterate",
            MethodName::Oracle => "oracle",
            MethodName::Rayleigh => "rayleigh",
        }
    }
}

impl std::fmt::Display for MethodName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("unknown method {0:?}; expected basic, bar, underline, iterate, oracle or rayleigh")]
pub struct UnknownMethod(pub String);

impl std::str::FromStr for MethodName {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, UnknownMethod> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(MethodName::Basic),
            "bar" => Ok(MethodName::Bar),
            "underline" => Ok(MethodName::Underline),
            "iterate" => Ok(MethodName::Iterate),
            "oracle" => Ok(MethodName::Oracle),
            "rayleigh" => Ok(MethodName::Rayleigh),
            other => Err(UnknownMethod(other.to_string())),
        }
    }
}

/// Tolerance attached to a reference value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tol {
    Abs(f64),
    Rel(f64),
}

impl Tol {
    pub fn ok(self, want: f64, got: f64) -> bool {
        (got - want).abs() <= self.abs_margin(want)
    }

    /// The tolerance as an absolute margin around `want`.
    pub fn abs_margin(self, want: f64) -> f64 {
        match self {
            Tol::Abs(t) => t,
            Tol::Rel(t) => t * want.abs(),
        }
    }
}

/// One reference value: what a method should produce for a case, within a
/// tolerance, and optionally where its optimizer should land.
#[derive(Clone, Copy, Debug)]
pub struct Expected {
    pub case: BoundaryCase,
    pub method: MethodName,
    /// 1-based round for iterated bounds, 0 elsewhere.
    pub step: usize,
    /// Test function expression for rayleigh rows.
    pub f: Option<&'static str>,
    pub value: f64,
    pub tol: Tol,
    /// Optimizer coordinates with absolute tolerances, matched as a prefix
    /// of (x, y, theta).
    pub at: &'static [(f64, f64)],
}

impl Expected {
    const fn new(case: BoundaryCase, method: MethodName, value: f64, tol: Tol) -> Self {
        Expected { case, method, step: 0, f: None, value, tol, at: &[] }
    }

    const fn at(mut self, at: &'static [(f64, f64)]) -> Self {
        self.at = at;
        self
    }

    const fn step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    const fn with_f(mut self, f: &'static str) -> Self {
        self.f = Some(f);
        self
    }
}

/// Whether each measure diverges toward each endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TailStatus {
    pub mu_left: bool,
    pub mu_right: bool,
    pub nu_left: bool,
    pub nu_right: bool,
}

/// Substituted coordinates for the reference eigensolve, used when the
/// original variable puts the truncation cut out of floating-point reach.
/// The spectrum and case are unchanged; grids in emitted samples are in the
/// substituted variable.
#[derive(Clone, Copy, Debug)]
pub struct Transform {
    pub left: f64,
    pub right: f64,
    pub theta: f64,
    pub a: &'static str,
    pub b: &'static str,
}

/// Settings for the reference eigensolve on this problem.
#[derive(Clone, Copy, Debug)]
pub struct OraclePlan {
    pub n_grid: usize,
    pub tail_eps: f64,
    pub transform: Option<Transform>,
}

const DEFAULT_PLAN: OraclePlan = OraclePlan { n_grid: 1024, tail_eps: 1e-10, transform: None };

/// A named example problem together with every reference value recorded
/// for it.
#[derive(Clone, Copy, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub left: f64,
    pub right: f64,
    pub theta: f64,
    pub a: &'static str,
    pub b: &'static str,
    pub cases: &'static [BoundaryCase],
    pub tails: TailStatus,
    pub expected: &'static [Expected],
    pub oracle: OraclePlan,
}

impl Fixture {
    pub fn problem(&self) -> Result<DiffusionProblem, ProblemError> {
        self.problem_with_tol(QuadTol::default())
    }

    pub fn problem_with_tol(&self, tol: QuadTol) -> Result<DiffusionProblem, ProblemError> {
        problem_from_exprs(self.left, self.right, self.theta, self.a, self.b, self.name, tol)
    }

    /// The problem the reference eigensolve runs on: the fixture itself, or
    /// its substituted form when the plan carries one.
    pub fn oracle_problem(&self, tol: QuadTol) -> Result<DiffusionProblem, ProblemError> {
        match self.oracle.transform {
            None => self.problem_with_tol(tol),
            Some(t) => {
                let label = format!("{}~log", self.name);
                problem_from_exprs(t.left, t.right, t.theta, t.a, t.b, &label, tol)
            }
        }
    }

    /// Methods appearing in the expected table, in pipeline order.
    pub fn methods(&self) -> Vec<MethodName> {
        let mut out = Vec::new();
        for m in MethodName::ALL {
            if self.expected.iter().any(|e| e.method == m) {
                out.push(m);
            }
        }
        out
    }
}

/// Build a problem from coefficient expressions in `x`. Evaluation faults
/// inside the quadrature surface through the problem's poison slot.
pub fn problem_from_exprs(
    left: f64,
    right: f64,
    theta: f64,
    a: &str,
    b: &str,
    label: &str,
    tol: QuadTol,
) -> Result<DiffusionProblem, ProblemError> {
    let fa = compile(a)?;
    let fb = compile(b)?;
    DiffusionProblem::from_coefficients_with_tol(
        left,
        right,
        move |x| fa.eval(x).unwrap_or(f64::NAN),
        move |x| fb.eval(x).unwrap_or(f64::NAN),
        theta,
        label,
        tol,
    )
}

/// Build a problem from speed and scale density expressions in `x`.
pub fn problem_from_density_exprs(
    left: f64,
    right: f64,
    theta: f64,
    mu: &str,
    nu: &str,
    label: &str,
    tol: QuadTol,
) -> Result<DiffusionProblem, ProblemError> {
    let fm = compile(mu)?;
    let fn_ = compile(nu)?;
    DiffusionProblem::from_densities_with_tol(
        left,
        right,
        move |x| fm.eval(x).unwrap_or(f64::NAN),
        move |x| fn_.eval(x).unwrap_or(f64::NAN),
        theta,
        label,
        tol,
    )
}

fn compile(text: &str) -> Result<ExprAst, ProblemError> {
    ExprAst::parse(text).map_err(|e: ExprError| ProblemError::CoefficientEval {
        x: f64::NAN,
        message: e.to_string(),
    })
}

use BoundaryCase::{DD, DN, ND, NN};
use MethodName::{Bar, Basic, Iterate, Oracle, Rayleigh, Underline};
use Tol::{Abs, Rel};

const PI2: f64 = PI * PI;
const NO_TAILS: TailStatus = TailStatus { mu_left: false, mu_right: false, nu_left: false, nu_right: false };

static FIXTURES: &[Fixture] = &[
    Fixture {
        name: "laplace_unit",
        summary: "second derivative on (0,1)",
        left: 0.0,
        right: 1.0,
        theta: 0.5,
        a: "1",
        b: "0",
        cases: &[NN, DD, DN, ND],
        tails: NO_TAILS,
        expected: &[
            Expected::new(DD, Basic, 16.0, Rel(1e-6)).at(&[(0.25, 1e-3), (0.75, 1e-3)]),
            Expected::new(NN, Basic, 16.0, Rel(1e-6)).at(&[(0.25, 1e-3), (0.75, 1e-3)]),
            Expected::new(DN, Basic, 4.0, Rel(1e-6)).at(&[(0.5, 1e-3)]),
            Expected::new(ND, Basic, 4.0, Rel(1e-6)).at(&[(0.5, 1e-3)]),
            Expected::new(DD, Bar, 32.0 / 3.0, Rel(1e-6)).at(&[(0.375, 1e-4)]),
            Expected::new(NN, Bar, 32.0 / 3.0, Rel(1e-6)),
            Expected::new(DD, Underline, 9.43693, Abs(2e-3)).at(&[(0.436273, 1e-3)]),
            Expected::new(NN, Underline, 9.43693, Abs(2e-3)),
            Expected::new(DD, Iterate, 9.80392, Abs(2e-3)).step(1),
            Expected::new(DD, Iterate, 9.86193, Abs(2e-3)).step(2),
            Expected::new(DD, Oracle, PI2, Abs(0.01)),
            Expected::new(NN, Oracle, PI2, Abs(0.01)),
            Expected::new(DN, Oracle, PI2 / 4.0, Rel(0.01)),
            Expected::new(ND, Oracle, PI2 / 4.0, Rel(0.01)),
        ],
        oracle: DEFAULT_PLAN,
    },
    Fixture {
        name: "ou_whole",
        summary: "mean-reverting linear drift on the whole line",
        left: f64::NEG_INFINITY,
        right: f64::INFINITY,
        theta: 0.0,
        a: "0.5",
        b: "-x",
        cases: &[NN],
        tails: TailStatus { mu_left: false, mu_right: false, nu_left: true, nu_right: true },
        expected: &[
            Expected::new(NN, Basic, 2.1, Abs(0.05)),
            Expected::new(NN, Oracle, 1.0, Abs(0.01)),
            Expected::new(NN, Rayleigh, 1.0, Abs(1e-6)).with_f("x"),
        ],
        oracle: DEFAULT_PLAN,
    },
    Fixture {
        name: "ou_half",
        summary: "mean-reverting linear drift on the half line",
        left: 0.0,
        right: f64::INFINITY,
        theta: 1.0,
        a: "0.5",
        b: "-x",
        cases: &[NN, DN],
        tails: TailStatus { mu_left: false, mu_right: false, nu_left: false, nu_right: true },
        expected: &[
            Expected::new(NN, Basic, 4.367, Abs(0.01)).at(&[(0.316, 0.01), (1.185, 0.01)]),
            Expected::new(DN, Basic, 2.1, Abs(0.05)),
            Expected::new(NN, Bar, 2.6, Abs(0.05)),
            Expected::new(NN, Underline, 1.83, Abs(0.02))
                .at(&[(0.6405, 0.01), (0.938, 0.01), (0.721194, 0.01)]),
            Expected::new(NN, Oracle, 2.0, Abs(0.02)),
        ],
        oracle: DEFAULT_PLAN,
    },
    Fixture {
        name: "drift_p1",
        summary: "unit positive drift on the half line",
        left: 0.0,
        right: f64::INFINITY,
        theta: 1.0,
        a: "1",
        b: "1",
        cases: &[DD, ND],
        tails: TailStatus { mu_left: false, mu_right: true, nu_left: false, nu_right: false },
        expected: &[
            Expected::new(ND, Basic, 1.0, Rel(1e-6)),
            Expected::new(DD, Basic, 1.0, Rel(1e-6)),
            Expected::new(DD, Bar, 0.5, Rel(1e-6)),
            Expected::new(ND, Oracle, 0.25, Rel(0.01)),
            Expected::new(DD, Oracle, 0.25, Rel(0.01)),
        ],
        oracle: OraclePlan { n_grid: 1024, tail_eps: 1e-40, transform: None },
    },
    Fixture {
        name: "drift_m1",
        summary: "unit negative drift on the half line",
        left: 0.0,
        right: f64::INFINITY,
        theta: 1.0,
        a: "1",
        b: "-1",
        cases: &[NN, DN],
        tails: TailStatus { mu_left: false, mu_right: false, nu_left: false, nu_right: true },
        expected: &[
            Expected::new(DN, Basic, 1.0, Rel(1e-6)),
            Expected::new(NN, Basic, 1.0, Rel(1e-6)),
            Expected::new(NN, Bar, 0.5, Rel(1e-6)),
            Expected::new(DN, Oracle, 0.25, Rel(0.01)),
            Expected::new(NN, Oracle, 0.25, Rel(0.01)),
        ],
        oracle: OraclePlan { n_grid: 1024, tail_eps: 1e-40, transform: None },
    },
    Fixture {
        name: "drift_p2",
        summary: "double positive drift on the half line",
        left: 0.0,
        right: f64::INFINITY,
        theta: 1.0,
        a: "1",
        b: "2",
        cases: &[DD, ND],
        tails: TailStatus { mu_left: false, mu_right: true, nu_left: false, nu_right: false },
        expected: &[
            Expected::new(ND, Basic, 4.0, Rel(1e-6)),
            Expected::new(DD, Basic, 4.0, Rel(1e-6)),
            Expected::new(DD, Bar, 2.0, Rel(1e-6)),
            Expected::new(ND, Oracle, 1.0, Rel(0.01)),
            Expected::new(DD, Oracle, 1.0, Rel(0.01)),
        ],
        oracle: OraclePlan { n_grid: 1024, tail_eps: 1e-80, transform: None },
    },
    Fixture {
        name: "drift_m2",
        summary: "double negative drift on the half line",
        left: 0.0,
        right: f64::INFINITY,
        theta: 1.0,
        a: "1",
        b: "-2",
        cases: &[NN, DN],
        tails: TailStatus { mu_left: false, mu_right: false, nu_left: false, nu_right: true },
        expected: &[
            Expected::new(DN, Basic, 4.0, Rel(1e-6)),
            Expected::new(NN, Basic, 4.0, Rel(1e-6)),
            Expected::new(NN, Bar, 2.0, Rel(1e-6)),
            Expected::new(DN, Oracle, 1.0, Rel(0.01)),
            Expected::new(NN, Oracle, 1.0, Rel(0.01)),
        ],
        oracle: OraclePlan { n_grid: 1024, tail_eps: 1e-80, transform: None },
    },
    Fixture {
        name: "hardy",
        summary: "quadratic coefficient on the half line",
        left: 0.0,
        right: f64::INFINITY,
        theta: 1.0,
        a: "x^2",
        b: "0",
        cases: &[DN],
        tails: TailStatus { mu_left: true, mu_right: false, nu_left: false, nu_right: true },
        expected: &[
            Expected::new(DN, Basic, 1.0, Rel(1e-6)),
            Expected::new(DN, Oracle, 0.25, Rel(0.01)),
        ],
        oracle: OraclePlan {
            n_grid: 1024,
            tail_eps: 1e-32,
            transform: Some(Transform {
                left: f64::NEG_INFINITY,
                right: f64::INFINITY,
                theta: 0.0,
                a: "1",
                b: "-1",
            }),
        },
    },
    Fixture {
        name: "hardy_tail",
        summary: "quadratic coefficient beyond one",
        left: 1.0,
        right: f64::INFINITY,
        theta: E,
        a: "x^2",
        b: "0",
        cases: &[NN],
        tails: TailStatus { mu_left: false, mu_right: false, nu_left: false, nu_right: true },
        expected: &[
            Expected::new(NN, Basic, 1.0, Rel(1e-6)),
            Expected::new(NN, Bar, 0.5, Rel(1e-6)),
            Expected::new(NN, Oracle, 0.25, Rel(0.01)),
        ],
        oracle: OraclePlan {
            n_grid: 1024,
            tail_eps: 1e-40,
            transform: Some(Transform {
                left: 0.0,
                right: f64::INFINITY,
                theta: 1.0,
                a: "1",
                b: "-1",
            }),
        },
    },
    Fixture {
        name: "cauchy_euler_e2",
        summary: "log-uniform operator out to e^2",
        left: 1.0,
        right: E * E,
        theta: E,
        a: "x^2",
        b: "x",
        cases: &[NN, DD, DN, ND],
        tails: NO_TAILS,
        expected: &[
            Expected::new(DD, Basic, 4.0, Rel(1e-5)).at(&[(1.6487212707001282, 1e-3), (4.4816890703380645, 1e-3)]),
            Expected::new(NN, Basic, 4.0, Rel(1e-5)),
            Expected::new(DN, Basic, 1.0, Rel(1e-5)),
            Expected::new(ND, Basic, 1.0, Rel(1e-5)),
            Expected::new(DD, Bar, 8.0 / 3.0, Rel(1e-4)),
            Expected::new(DD, Underline, 9.4369 / 4.0, Rel(5e-3)),
            Expected::new(DD, Oracle, PI2 / 4.0, Rel(0.01)),
            Expected::new(NN, Oracle, PI2 / 4.0, Rel(0.01)),
            Expected::new(DN, Oracle, PI2 / 16.0, Rel(0.01)),
            Expected::new(ND, Oracle, PI2 / 16.0, Rel(0.01)),
        ],
        oracle: DEFAULT_PLAN,
    },
    Fixture {
        name: "cauchy_euler_e4",
        summary: "log-uniform operator out to e^4",
        left: 1.0,
        right: E * E * E * E,
        theta: E * E,
        a: "x^2",
        b: "x",
        cases: &[NN, DD, DN, ND],
        tails: NO_TAILS,
        expected: &[
            Expected::new(DD, Basic, 1.0, Rel(1e-5)),
            Expected::new(NN, Basic, 1.0, Rel(1e-5)),
            Expected::new(DN, Basic, 0.25, Rel(1e-5)),
            Expected::new(ND, Basic, 0.25, Rel(1e-5)),
            Expected::new(DD, Bar, 2.0 / 3.0, Rel(1e-4)),
            Expected::new(DD, Underline, 9.4369 / 16.0, Rel(5e-3)),
            Expected::new(DD, Oracle, PI2 / 16.0, Rel(0.01)),
            Expected::new(NN, Oracle, PI2 / 16.0, Rel(0.01)),
            Expected::new(DN, Oracle, PI2 / 64.0, Rel(0.01)),
            Expected::new(ND, Oracle, PI2 / 64.0, Rel(0.01)),
        ],
        oracle: DEFAULT_PLAN,
    },
];

pub fn all() -> &'static [Fixture] {
    FIXTURES
}

pub fn find(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}

/// Registry names, for listings and unknown-name errors.
pub fn names() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.name).collect()
}
