//! Positive test functions driving the variational bounds.
//!
//! A test function is either a contiguous run of closed-form pieces or a
//! grid of samples joined by a monotone cubic. Positivity can only be
//! checked at points actually evaluated; `validate` spot-checks a sample
//! net and the bound engines guard every ratio they form.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::ExprAst;
use crate::measure::IntervalMap;
use crate::problem::{DiffusionProblem, ProblemError};

pub type PieceFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TestFnError {
    #[error("test function is not positive at x = {x}: f(x) = {value}")]
    NonPositive { x: f64, value: f64 },
    #[error("test function jumps at x = {x}: {left} from the left, {right} from the right")]
    Discontinuous { x: f64, left: f64, right: f64 },
    #[error("grid needs at least two strictly increasing nodes with finite values")]
    BadGrid,
    #[error("pieces must cover one interval in order; gap or overlap at x = {x}")]
    BadPieces { x: f64 },
}

#[derive(Clone)]
struct Piece {
    lo: f64,
    hi: f64,
    f: PieceFn,
}

/// Monotone cubic (Fritsch-Carlson) interpolant over strictly increasing
/// nodes. Constant beyond the first and last node.
#[derive(Clone, Debug)]
struct GridInterp {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl GridInterp {
    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&t| t <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1) = (self.ys[i], self.ys[i + 1]);
        let (d0, d1) = (self.ds[i], self.ds[i + 1]);
        let t2 = t * t;
        let t3 = t2 * t;
        y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
            + d0 * h * (t3 - 2.0 * t2 + t)
            + y1 * (3.0 * t2 - 2.0 * t3)
            + d1 * h * (t3 - t2)
    }

    fn eval_deriv(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] || x >= self.xs[n - 1] {
            return 0.0;
        }
        let i = self.xs.partition_point(|&t| t <= x) - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        (self.ys[i] - self.ys[i + 1]) * (6.0 * t2 - 6.0 * t) / h
            + self.ds[i] * (3.0 * t2 - 4.0 * t + 1.0)
            + self.ds[i + 1] * (3.0 * t2 - 2.0 * t)
    }
}

fn pchip_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    if n == 2 {
        let d = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return vec![d, d];
    }
    let h: Vec<f64> = (0..n - 1).map(|i| xs[i + 1] - xs[i]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        if delta[i - 1] * delta[i] > 0.0 {
            let w1 = 2.0 * h[i] + h[i - 1];
            let w2 = h[i] + 2.0 * h[i - 1];
            d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
        }
    }
    d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d * d0 <= 0.0 {
        0.0
    } else if d0 * d1 < 0.0 && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[derive(Clone)]
enum Repr {
    Pieces(Arc<Vec<Piece>>),
    Grid(Arc<GridInterp>),
}

/// A positive function on an interval, used as variational input.
#[derive(Clone)]
pub struct TestFunction {
    repr: Repr,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Pieces(p) => write!(f, "TestFunction({} piece(s))", p.len()),
            Repr::Grid(g) => write!(f, "TestFunction(grid of {} nodes)", g.xs.len()),
        }
    }
}

impl TestFunction {
    /// One closed-form piece covering any interval.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let piece = Piece { lo: f64::NEG_INFINITY, hi: f64::INFINITY, f: Arc::new(f) };
        TestFunction { repr: Repr::Pieces(Arc::new(vec![piece])) }
    }

    /// A parsed expression of x; evaluation failures surface as NaN and are
    /// caught by the positivity guards.
    pub fn from_expr(ast: ExprAst) -> Self {
        Self::from_fn(move |x| ast.eval(x).unwrap_or(f64::NAN))
    }

    /// Contiguous pieces in increasing order. Adjacent pieces must agree at
    /// the shared breakpoint to 1e-9 relative.
    pub fn from_pieces(pieces: Vec<(f64, f64, PieceFn)>) -> Result<Self, TestFnError> {
        if pieces.is_empty() {
            return Err(TestFnError::BadPieces { x: f64::NAN });
        }
        let mut run: Vec<Piece> = Vec::with_capacity(pieces.len());
        for (lo, hi, f) in pieces {
            if !(lo < hi) {
                return Err(TestFnError::BadPieces { x: lo });
            }
            if let Some(prev) = run.last() {
                if prev.hi != lo {
                    return Err(TestFnError::BadPieces { x: lo });
                }
                let a = (prev.f)(lo);
                let b = f(lo);
                let scale = a.abs().max(b.abs()).max(1e-300);
                if !((a - b).abs() <= 1e-9 * scale) {
                    return Err(TestFnError::Discontinuous { x: lo, left: a, right: b });
                }
            }
            run.push(Piece { lo, hi, f });
        }
        Ok(TestFunction { repr: Repr::Pieces(Arc::new(run)) })
    }

    /// Grid samples joined by a monotone cubic, constant outside the nodes.
    pub fn from_grid(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, TestFnError> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(TestFnError::BadGrid);
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || xs.iter().any(|v| !v.is_finite()) {
            return Err(TestFnError::BadGrid);
        }
        if ys.iter().any(|v| !v.is_finite()) {
            return Err(TestFnError::BadGrid);
        }
        let ds = pchip_slopes(&xs, &ys);
        Ok(TestFunction { repr: Repr::Grid(Arc::new(GridInterp { xs, ys, ds })) })
    }

    /// The square-root-of-scale family: constant at sqrt of the scale mass
    /// right of y on [x,y], matched sqrt-of-scale decay outside.
    pub fn sqrt_scale(p: &DiffusionProblem, x: f64, y: f64) -> Result<Self, ProblemError> {
        let (l, r) = (p.left, p.right);
        if !(l < x && x < y && y < r) {
            return Err(ProblemError::OutsideInterval { x, left: l, right: r });
        }
        let nm_x = p.nu_mass(l, x)?;
        let np_y = p.nu_mass(y, r)?;
        if !(nm_x.is_finite() && np_y.is_finite() && nm_x > 0.0 && np_y > 0.0) {
            return Err(ProblemError::OutsideInterval { x: y, left: l, right: r });
        }
        let nu = p.nu().clone();
        Ok(Self::from_fn(move |s| {
            if s >= y {
                nu.mass(s, r).map(f64::sqrt).unwrap_or(f64::NAN)
            } else if s >= x {
                np_y.sqrt()
            } else {
                nu.mass(l, s).map(|v| (np_y * v / nm_x).sqrt()).unwrap_or(f64::NAN)
            }
        }))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Pieces(pieces) => {
                let i = pieces.partition_point(|p| p.hi < x).min(pieces.len() - 1);
                (pieces[i].f)(x)
            }
            Repr::Grid(g) => g.eval(x),
        }
    }

    /// Derivative at x. Grid interpolants differentiate their cubic in
    /// closed form and are flat outside the nodes; closed-form pieces use a
    /// central difference clamped to the piece, so kinks at breakpoints do
    /// not smear into the neighbours.
    pub fn eval_deriv(&self, x: f64) -> f64 {
        match &self.repr {
            Repr::Pieces(pieces) => {
                let i = pieces.partition_point(|p| p.hi < x).min(pieces.len() - 1);
                let p = &pieces[i];
                let h = 6e-6 * (1.0 + x.abs());
                let lo = if p.lo.is_finite() { (x - h).max(p.lo) } else { x - h };
                let hi = if p.hi.is_finite() { (x + h).min(p.hi) } else { x + h };
                if hi > lo {
                    ((p.f)(hi) - (p.f)(lo)) / (hi - lo)
                } else {
                    0.0
                }
            }
            Repr::Grid(g) => g.eval_deriv(x),
        }
    }

    /// Spot-check positivity on a net of interior points. An exact zero is
    /// tolerated: positive functions with Gaussian-type tails underflow to
    /// 0.0 far out on unbounded intervals, and the bound machinery treats
    /// such points as carrying no mass.
    pub fn validate(&self, left: f64, right: f64) -> Result<(), TestFnError> {
        let map = IntervalMap::new(left, right);
        for k in 1..128u32 {
            let x = map.to_x(k as f64 / 128.0);
            let v = self.eval(x);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TestFnError::NonPositive { x, value: v });
            }
        }
        if let Repr::Grid(g) = &self.repr {
            for (x, y) in g.xs.iter().zip(&g.ys) {
                if !(*y > 0.0) {
                    return Err(TestFnError::NonPositive { x: *x, value: *y });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn laplace() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(0.0, 1.0, |_| 1.0, |_| 0.0, 0.5, "laplace").unwrap()
    }

    #[test]
    fn single_closure_covers_everything() {
        let f = TestFunction::from_fn(|x| 1.0 + x * x);
        assert_eq!(f.eval(-3.0), 10.0);
        assert_eq!(f.eval(2.0), 5.0);
        f.validate(-5.0, 5.0).unwrap();
    }

    #[test]
    fn expression_backed_function() {
        let f = TestFunction::from_expr(parse_expr("sin(pi*x)").unwrap());
        assert!((f.eval(0.5) - 1.0).abs() < 1e-15);
        f.validate(0.0, 1.0).unwrap();
    }

    #[test]
    fn pieces_must_be_contiguous_and_continuous() {
        let a: PieceFn = Arc::new(|x| x);
        let b: PieceFn = Arc::new(|x| 1.0 - x);
        let err = TestFunction::from_pieces(vec![(0.0, 0.4, a.clone()), (0.5, 1.0, b.clone())]);
        assert!(matches!(err, Err(TestFnError::BadPieces { .. })));
        let err = TestFunction::from_pieces(vec![(0.0, 0.4, a.clone()), (0.4, 1.0, b.clone())]);
        assert!(matches!(err, Err(TestFnError::Discontinuous { .. })));
        let ok = TestFunction::from_pieces(vec![(0.0, 0.5, a), (0.5, 1.0, b)]).unwrap();
        assert!((ok.eval(0.25) - 0.25).abs() < 1e-15);
        assert!((ok.eval(0.75) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn validate_flags_a_zero_crossing() {
        let f = TestFunction::from_fn(|x| x - 0.3);
        let err = f.validate(0.0, 1.0).unwrap_err();
        assert!(matches!(err, TestFnError::NonPositive { .. }));
    }

    #[test]
    fn grid_interpolates_and_extends_flat() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys = vec![1.0, 2.0, 4.0, 5.0];
        let f = TestFunction::from_grid(xs, ys).unwrap();
        assert_eq!(f.eval(1.0), 2.0);
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.eval(9.0), 5.0);
        let v = f.eval(1.5);
        assert!(v > 2.0 && v < 4.0, "midpoint {v} outside node range");
    }

    #[test]
    fn grid_preserves_monotone_data() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * (3.0 - 2.0 * x)).collect();
        let f = TestFunction::from_grid(xs, ys).unwrap();
        let mut prev = f.eval(0.0);
        for k in 1..400 {
            let v = f.eval(k as f64 / 399.0);
            assert!(v >= prev - 1e-12, "interpolant dips at k={k}");
            prev = v;
        }
    }

    #[test]
    fn grid_rejects_bad_nodes() {
        assert!(TestFunction::from_grid(vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]).is_err());
        assert!(TestFunction::from_grid(vec![0.0], vec![1.0]).is_err());
        assert!(TestFunction::from_grid(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn sqrt_scale_on_the_unit_interval() {
        let p = laplace();
        let f = TestFunction::sqrt_scale(&p, 0.25, 0.75).unwrap();
        assert!((f.eval(0.1) - (0.25f64 * 0.1 / 0.25).sqrt()).abs() < 1e-10);
        assert!((f.eval(0.5) - 0.25f64.sqrt()).abs() < 1e-10);
        assert!((f.eval(0.9) - 0.1f64.sqrt()).abs() < 1e-10);
        f.validate(0.0, 1.0).unwrap();
    }

    #[test]
    fn sqrt_scale_is_continuous_at_the_joins() {
        let p = laplace();
        let f = TestFunction::sqrt_scale(&p, 0.3, 0.6).unwrap();
        for b in [0.3, 0.6] {
            let lo = f.eval(b - 1e-9);
            let hi = f.eval(b + 1e-9);
            assert!((lo - hi).abs() < 1e-6, "jump at {b}: {lo} vs {hi}");
        }
    }
}
