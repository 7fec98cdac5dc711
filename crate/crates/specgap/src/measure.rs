//! Cumulative measures on an interval, with lazy panel caches.
//!
//! The interval (L,R), finite or not, is mapped monotonically onto s ∈ (0,1)
//! and split into K equal panels in s. Full-panel integrals are computed
//! adaptively once and accumulated into prefix sums; a query pays one
//! fixed-order partial-panel integral on top. Three anchorings cover the
//! use cases without catastrophic cancellation:
//!
//! * a signed prefix from an interior anchor edge (interior masses, C(x)),
//! * a forward accumulation from the left endpoint (left tails),
//! * a backward accumulation from the right endpoint (right tails).
//!
//! An end panel whose integral exceeds `DIVERGENCE_CAP`, or whose error
//! keeps concentrating at the endpoint, classifies that endpoint's tail as
//! infinite; the flag is permanent and every interval touching the endpoint
//! then reports infinite mass. Interior masses are never capped: values
//! beyond f64 range simply saturate to infinity.

use crate::quad::{self, QuadTol};
use std::sync::{Arc, Mutex};
use thiserror::Error;

/// Partial sums beyond this classify a tail as infinite.
pub const DIVERGENCE_CAP: f64 = 1e12;

/// Panels per measure; queries cost one fixed-order rule after warmup.
const PANELS: usize = 4096;

/// Errors surfaced by measure queries.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum MeasureError {
    #[error("quadrature failed to converge on [{lo:.6e}, {hi:.6e}] (error estimate {err:.2e})")]
    Quadrature { lo: f64, hi: f64, err: f64 },
    #[error("integrand returned NaN near [{lo:.6e}, {hi:.6e}]")]
    NanIntegrand { lo: f64, hi: f64 },
    #[error("query [{s}, {t}] falls outside the interval [{left}, {right}]")]
    OutOfRange { s: f64, t: f64, left: f64, right: f64 },
}

/// Monotone bijection s ∈ (0,1) ↔ x ∈ (L,R) with L,R possibly infinite.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IntervalMap {
    pub left: f64,
    pub right: f64,
}

impl IntervalMap {
    pub fn new(left: f64, right: f64) -> Self {
        debug_assert!(left < right);
        IntervalMap { left, right }
    }

    pub fn to_x(self, s: f64) -> f64 {
        match (self.left.is_finite(), self.right.is_finite()) {
            (true, true) => self.left + s * (self.right - self.left),
            (true, false) => self.left + s / (1.0 - s),
            (false, true) => self.right - (1.0 - s) / s,
            (false, false) => (std::f64::consts::PI * (s - 0.5)).tan(),
        }
    }

    pub fn to_s(self, x: f64) -> f64 {
        let s = match (self.left.is_finite(), self.right.is_finite()) {
            (true, true) => (x - self.left) / (self.right - self.left),
            (true, false) => {
                let d = x - self.left;
                d / (1.0 + d)
            }
            (false, true) => 1.0 / (1.0 + (self.right - x)),
            (false, false) => x.atan() / std::f64::consts::PI + 0.5,
        };
        s.clamp(0.0, 1.0)
    }

    /// dx/ds, used to transport densities into s-space.
    pub fn jacobian(self, s: f64) -> f64 {
        match (self.left.is_finite(), self.right.is_finite()) {
            (true, true) => self.right - self.left,
            (true, false) => {
                let d = 1.0 - s;
                1.0 / (d * d)
            }
            (false, true) => 1.0 / (s * s),
            (false, false) => {
                let c = (std::f64::consts::PI * (s - 0.5)).cos();
                std::f64::consts::PI / (c * c)
            }
        }
    }
}

type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

struct Inner {
    /// Signed prefix over full panels: fwd[i] = sum of panels anchor..=anchor+i.
    fwd: Vec<f64>,
    /// bwd[i] = sum of panels anchor-1-i..=anchor-1.
    bwd: Vec<f64>,
    /// from_left[i] = mass of panels 0..=i; None until classified.
    from_left: Vec<f64>,
    left_infinite: Option<bool>,
    from_right: Vec<f64>,
    right_infinite: Option<bool>,
}

/// Lazy cumulative cache for one density over one interval.
pub(crate) struct PanelCache {
    map: IntervalMap,
    dens: Density,
    tol: QuadTol,
    /// Index of the anchor edge (edge j sits at s = j/PANELS).
    anchor: usize,
    inner: Mutex<Inner>,
}

impl PanelCache {
    pub fn new(map: IntervalMap, anchor_x: f64, dens: Density, tol: QuadTol) -> Self {
        let s = map.to_s(anchor_x);
        let anchor = ((s * PANELS as f64).round() as usize).clamp(1, PANELS - 1);
        PanelCache {
            map,
            dens,
            tol,
            anchor,
            inner: Mutex::new(Inner {
                fwd: Vec::new(),
                bwd: Vec::new(),
                from_left: Vec::new(),
                left_infinite: None,
                from_right: Vec::new(),
                right_infinite: None,
            }),
        }
    }

    fn edge(&self, j: usize) -> f64 {
        j as f64 / PANELS as f64
    }

    /// Density transported to s-space. A density that underflowed to zero
    /// contributes nothing even where the jacobian overflows; the jacobian
    /// grows only polynomially, so the product is genuinely negligible.
    fn g(&self, s: f64) -> f64 {
        let d = (self.dens)(self.map.to_x(s));
        if d == 0.0 {
            return 0.0;
        }
        d * self.map.jacobian(s)
    }

    fn panel_quad(&self, lo: f64, hi: f64) -> Result<f64, MeasureError> {
        let q = quad::integrate(|s| self.g(s), lo, hi, self.tol);
        if q.value.is_nan() {
            return Err(MeasureError::NanIntegrand { lo: self.map.to_x(lo), hi: self.map.to_x(hi) });
        }
        if !q.converged && q.value.is_finite() && q.abs_err > 1e-6 * q.value.abs().max(1.0) {
            return Err(MeasureError::Quadrature {
                lo: self.map.to_x(q.worst.0),
                hi: self.map.to_x(q.worst.1),
                err: q.abs_err,
            });
        }
        Ok(q.value)
    }

    /// Fixed-order partial panel; endpoints must sit strictly inside (0,1).
    fn partial(&self, lo: f64, hi: f64) -> Result<f64, MeasureError> {
        let v = quad::panel(&|s| self.g(s), lo, hi);
        if v.is_nan() {
            return Err(MeasureError::NanIntegrand { lo: self.map.to_x(lo), hi: self.map.to_x(hi) });
        }
        Ok(v)
    }

    /// Signed antiderivative anchored at the anchor edge: prefix(x) is the
    /// signed mass from the anchor edge to x. Requires x strictly interior.
    pub fn prefix(&self, x: f64) -> Result<f64, MeasureError> {
        let s = self.map.to_s(x);
        let j = ((s * PANELS as f64) as usize).min(PANELS - 1);
        let mut inner = self.inner.lock().unwrap();
        if j >= self.anchor {
            // Full panels anchor..j-1, then a partial up to s.
            let full = if j > self.anchor {
                self.fill_fwd(&mut inner, j - self.anchor - 1)?;
                inner.fwd[j - self.anchor - 1]
            } else {
                0.0
            };
            Ok(full + self.partial(self.edge(j), s)?)
        } else {
            // Partial from s up to the next edge, then full panels to anchor.
            let full = if j + 1 < self.anchor {
                self.fill_bwd(&mut inner, self.anchor - j - 2)?;
                inner.bwd[self.anchor - j - 2]
            } else {
                0.0
            };
            Ok(-(full + self.partial(s, self.edge(j + 1))?))
        }
    }

    fn fill_fwd(&self, inner: &mut Inner, upto: usize) -> Result<(), MeasureError> {
        while inner.fwd.len() <= upto {
            let i = inner.fwd.len();
            let lo = self.edge(self.anchor + i);
            let hi = self.edge(self.anchor + i + 1);
            let v = self.panel_quad(lo, hi)?;
            let prev = if i == 0 { 0.0 } else { inner.fwd[i - 1] };
            inner.fwd.push(prev + v);
        }
        Ok(())
    }

    fn fill_bwd(&self, inner: &mut Inner, upto: usize) -> Result<(), MeasureError> {
        while inner.bwd.len() <= upto {
            let i = inner.bwd.len();
            let hi = self.edge(self.anchor - i);
            let lo = self.edge(self.anchor - i - 1);
            let v = self.panel_quad(lo, hi)?;
            let prev = if i == 0 { 0.0 } else { inner.bwd[i - 1] };
            inner.bwd.push(prev + v);
        }
        Ok(())
    }

    /// Mass accumulated from the left endpoint to t. Infinite when the left
    /// tail is divergent.
    pub fn from_left(&self, t: f64) -> Result<f64, MeasureError> {
        let s = self.map.to_s(t);
        let j = ((s * PANELS as f64) as usize).min(PANELS - 1);
        let mut inner = self.inner.lock().unwrap();
        if inner.left_infinite == Some(true) {
            return Ok(f64::INFINITY);
        }
        if inner.left_infinite.is_none() {
            // Classify by integrating the first panel adaptively.
            match self.classify_end(false) {
                EndPanel::Divergent => {
                    inner.left_infinite = Some(true);
                    return Ok(f64::INFINITY);
                }
                EndPanel::Finite(v) => {
                    inner.left_infinite = Some(false);
                    if inner.from_left.is_empty() {
                        inner.from_left.push(v);
                    }
                }
                EndPanel::Error(e) => return Err(e),
            }
        }
        if j == 0 {
            return match self.end_panel(0.0, s) {
                EndPanel::Divergent => {
                    inner.left_infinite = Some(true);
                    Ok(f64::INFINITY)
                }
                EndPanel::Finite(v) => Ok(v),
                EndPanel::Error(e) => Err(e),
            };
        }
        while inner.from_left.len() <= j - 1 {
            let i = inner.from_left.len();
            let v = self.panel_quad(self.edge(i), self.edge(i + 1))?;
            let prev = inner.from_left[i - 1];
            inner.from_left.push(prev + v);
        }
        let full = inner.from_left[j - 1];
        let part = self.partial(self.edge(j), s)?;
        Ok((full + part).max(0.0))
    }

    /// Mass accumulated from the right endpoint down to t.
    pub fn from_right(&self, t: f64) -> Result<f64, MeasureError> {
        let s = self.map.to_s(t);
        let j = ((s * PANELS as f64) as usize).min(PANELS - 1);
        let mut inner = self.inner.lock().unwrap();
        if inner.right_infinite == Some(true) {
            return Ok(f64::INFINITY);
        }
        if inner.right_infinite.is_none() {
            match self.classify_end(true) {
                EndPanel::Divergent => {
                    inner.right_infinite = Some(true);
                    return Ok(f64::INFINITY);
                }
                EndPanel::Finite(v) => {
                    inner.right_infinite = Some(false);
                    if inner.from_right.is_empty() {
                        inner.from_right.push(v);
                    }
                }
                EndPanel::Error(e) => return Err(e),
            }
        }
        if j == PANELS - 1 {
            return match self.end_panel(s, 1.0) {
                EndPanel::Divergent => {
                    inner.right_infinite = Some(true);
                    Ok(f64::INFINITY)
                }
                EndPanel::Finite(v) => Ok(v),
                EndPanel::Error(e) => Err(e),
            };
        }
        // from_right[i] = mass of panels PANELS-1-i ..= PANELS-1.
        while inner.from_right.len() <= PANELS - 2 - j {
            let i = inner.from_right.len();
            let hi = self.edge(PANELS - i);
            let lo = self.edge(PANELS - i - 1);
            let v = self.panel_quad(lo, hi)?;
            let prev = inner.from_right[i - 1];
            inner.from_right.push(prev + v);
        }
        let full = inner.from_right[PANELS - 2 - j];
        let part = self.partial(s, self.edge(j + 1))?;
        Ok((full + part).max(0.0))
    }

    /// Classify one endpoint: adaptive end-panel integral, then, for an
    /// infinite endpoint, a dyadic-block probe. The probe catches slow
    /// divergences (1/x tails) whose transported integrand underflows to
    /// zero before the partial sums can reveal growth.
    fn classify_end(&self, rightward: bool) -> EndPanel {
        let panel = if rightward {
            self.end_panel(self.edge(PANELS - 1), 1.0)
        } else {
            self.end_panel(0.0, self.edge(1))
        };
        let endpoint = if rightward { self.map.right } else { self.map.left };
        match panel {
            EndPanel::Finite(v) if endpoint.is_infinite() => match self.tail_probe(rightward) {
                TailProbe::Decays => EndPanel::Finite(v),
                TailProbe::Diverges => EndPanel::Divergent,
                TailProbe::Error(e) => EndPanel::Error(e),
            },
            other => other,
        }
    }

    /// Walk dyadically growing blocks toward an infinite endpoint and watch
    /// whether block masses decay. Sustained non-decay, or partial sums past
    /// the cap, classify the tail as infinite.
    fn tail_probe(&self, rightward: bool) -> TailProbe {
        let x0 = if rightward {
            self.map.to_x(self.edge(PANELS - 1))
        } else {
            self.map.to_x(self.edge(1))
        };
        let mut step = x0.abs().max(1.0);
        let mut x = x0;
        let mut acc = 0.0_f64;
        let mut prev = f64::INFINITY;
        let mut sustained = 0;
        for _ in 0..70 {
            let (a, b) = if rightward { (x, x + step) } else { (x - step, x) };
            if !a.is_finite() || !b.is_finite() {
                // Still contributing at the edge of f64 range.
                return TailProbe::Diverges;
            }
            let q = quad::integrate(|t| (self.dens)(t), a, b, self.tol);
            if q.value.is_nan() {
                return TailProbe::Error(MeasureError::NanIntegrand { lo: a, hi: b });
            }
            let v = q.value.max(0.0);
            acc += v;
            if acc > DIVERGENCE_CAP {
                return TailProbe::Diverges;
            }
            if v <= self.tol.abs.max(1e-13 * acc) {
                return TailProbe::Decays;
            }
            if v >= 0.7 * prev {
                sustained += 1;
                if sustained >= 4 {
                    return TailProbe::Diverges;
                }
            } else {
                sustained = 0;
            }
            prev = v;
            x = if rightward { x + step } else { x - step };
            step *= 2.0;
        }
        TailProbe::Diverges
    }

    /// Adaptive integral of an end panel with divergence classification.
    fn end_panel(&self, lo: f64, hi: f64) -> EndPanel {
        if lo >= hi {
            return EndPanel::Finite(0.0);
        }
        let q = quad::integrate_capped(|s| self.g(s), lo, hi, self.tol, DIVERGENCE_CAP);
        if q.value.is_nan() {
            return EndPanel::Error(MeasureError::NanIntegrand {
                lo: self.map.to_x(lo),
                hi: self.map.to_x(hi),
            });
        }
        if q.value > DIVERGENCE_CAP || q.value == f64::INFINITY {
            return EndPanel::Divergent;
        }
        if !q.converged {
            // Error still concentrated at the outer boundary after full
            // refinement is the signature of a divergent (or numerically
            // indistinguishable) tail.
            let at_boundary = q.worst.0 <= lo + (hi - lo) * 1e-12 || q.worst.1 >= hi - (hi - lo) * 1e-12;
            if at_boundary && q.abs_err > 0.05 * q.value.abs().max(1e-300) {
                return EndPanel::Divergent;
            }
            if q.abs_err > 1e-6 * q.value.abs().max(1.0) {
                return EndPanel::Error(MeasureError::Quadrature {
                    lo: self.map.to_x(q.worst.0),
                    hi: self.map.to_x(q.worst.1),
                    err: q.abs_err,
                });
            }
        }
        EndPanel::Finite(q.value)
    }

    pub fn left_infinite(&self) -> Result<bool, MeasureError> {
        self.from_left(self.map.to_x(self.edge(1))).map(|v| v.is_infinite())
    }

    pub fn right_infinite(&self) -> Result<bool, MeasureError> {
        self.from_right(self.map.to_x(self.edge(PANELS - 1))).map(|v| v.is_infinite())
    }

    /// Cumulative mass from the left endpoint at every panel edge, or None
    /// when either tail is infinite. Index j holds the mass up to edge j.
    fn edge_cumulative(&self) -> Result<Option<Vec<f64>>, MeasureError> {
        if self.left_infinite()? || self.right_infinite()? {
            return Ok(None);
        }
        let mut inner = self.inner.lock().unwrap();
        while inner.from_left.len() <= PANELS - 2 {
            let i = inner.from_left.len();
            let v = self.panel_quad(self.edge(i), self.edge(i + 1))?;
            let prev = inner.from_left[i - 1];
            inner.from_left.push(prev + v);
        }
        let mut cum = Vec::with_capacity(PANELS + 1);
        cum.push(0.0);
        for i in 0..PANELS - 1 {
            let v = inner.from_left[i].max(cum[i]);
            cum.push(v);
        }
        let last = inner.from_right[0].max(0.0);
        cum.push(cum[PANELS - 1] + last);
        Ok(Some(cum))
    }
}

enum EndPanel {
    Finite(f64),
    Divergent,
    Error(MeasureError),
}

enum TailProbe {
    Decays,
    Diverges,
    Error(MeasureError),
}

/// A nonnegative measure on (left,right) with cumulative interval masses.
///
/// `mass(s,t)` accepts extended-real endpoints: any query reaching an
/// endpoint is routed through the tail accumulators, so tiny tails of
/// near-probability measures come out at full relative precision.
#[derive(Clone)]
pub struct CumulativeMeasure {
    cache: Arc<PanelCache>,
    left: f64,
    right: f64,
}

impl CumulativeMeasure {
    pub(crate) fn new(cache: Arc<PanelCache>) -> Self {
        let (left, right) = (cache.map.left, cache.map.right);
        CumulativeMeasure { cache, left, right }
    }

    /// Build a measure from a nonnegative density on (left,right).
    pub fn from_density<F>(left: f64, right: f64, anchor: f64, dens: F, tol: QuadTol) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let map = IntervalMap::new(left, right);
        CumulativeMeasure::new(Arc::new(PanelCache::new(map, anchor, Arc::new(dens), tol)))
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.left, self.right)
    }

    /// Mass of [s,t]; s ≤ t, both within the closed extended interval.
    pub fn mass(&self, s: f64, t: f64) -> Result<f64, MeasureError> {
        if !(s <= t) || s < self.left || t > self.right {
            return Err(MeasureError::OutOfRange { s, t, left: self.left, right: self.right });
        }
        if s == t {
            return Ok(0.0);
        }
        let at_left = s == self.left;
        let at_right = t == self.right;
        match (at_left, at_right) {
            (true, true) => {
                let l = self.cache.from_left(self.cache.map.to_x(0.5))?;
                let r = self.cache.from_right(self.cache.map.to_x(0.5))?;
                Ok(l + r)
            }
            (true, false) => self.cache.from_left(t),
            (false, true) => self.cache.from_right(s),
            (false, false) => {
                let hi = self.cache.prefix(t)?;
                let lo = self.cache.prefix(s)?;
                let mut value = (hi - lo).max(0.0);
                let mut spread = hi.abs().max(lo.abs());
                // A pair far out in one tail cancels against the bulk when
                // differenced through the anchor; a difference of endpoint
                // accumulators keeps full relative precision there. Tail
                // machinery failures just leave the anchored value in place.
                if spread > 4.0 * value {
                    if let (Ok(a), Ok(b)) = (self.cache.from_left(s), self.cache.from_left(t)) {
                        if a.is_finite() && b.is_finite() && a.abs().max(b.abs()) < spread {
                            value = (b - a).max(0.0);
                            spread = a.abs().max(b.abs());
                        }
                    }
                    if let (Ok(a), Ok(b)) = (self.cache.from_right(s), self.cache.from_right(t)) {
                        if a.is_finite() && b.is_finite() && a.abs().max(b.abs()) < spread {
                            value = (a - b).max(0.0);
                        }
                    }
                }
                Ok(value)
            }
        }
    }

    /// Total mass of the interval.
    pub fn total(&self) -> Result<f64, MeasureError> {
        self.mass(self.left, self.right)
    }

    /// True when the mass accumulated toward the left endpoint diverges.
    pub fn left_tail_infinite(&self) -> Result<bool, MeasureError> {
        self.cache.left_infinite()
    }

    pub fn right_tail_infinite(&self) -> Result<bool, MeasureError> {
        self.cache.right_infinite()
    }

    /// Map-space coordinate of x; s runs over (0,1) regardless of whether
    /// the interval is bounded.
    pub(crate) fn to_s(&self, x: f64) -> f64 {
        self.cache.map.to_s(x)
    }

    pub(crate) fn to_x(&self, s: f64) -> f64 {
        self.cache.map.to_x(s)
    }

    /// n interior points at equal mass quantiles, in map-space coordinates,
    /// strictly increasing. None when the total mass is infinite, zero, or
    /// too concentrated to yield distinct points.
    pub(crate) fn quantile_seeds(&self, n: usize) -> Result<Option<Vec<f64>>, MeasureError> {
        let cum = match self.cache.edge_cumulative()? {
            Some(c) => c,
            None => return Ok(None),
        };
        let total = cum[PANELS];
        if !total.is_finite() || total <= 0.0 {
            return Ok(None);
        }
        let mut seeds: Vec<f64> = Vec::with_capacity(n);
        let mut j = 0usize;
        for k in 1..=n {
            let target = total * k as f64 / (n + 1) as f64;
            while j < PANELS - 1 && cum[j + 1] < target {
                j += 1;
            }
            let (lo, hi) = (cum[j], cum[j + 1]);
            let frac = if hi > lo { ((target - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
            let s = ((j as f64 + frac) / PANELS as f64).clamp(1e-9, 1.0 - 1e-9);
            if seeds.last().map_or(true, |&p| s > p) {
                seeds.push(s);
            }
        }
        if seeds.len() < 4 {
            return Ok(None);
        }
        Ok(Some(seeds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> QuadTol {
        QuadTol::default()
    }

    #[test]
    fn uniform_on_unit_interval() {
        let m = CumulativeMeasure::from_density(0.0, 1.0, 0.5, |_| 1.0, tol());
        assert!((m.mass(0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.mass(0.25, 0.75).unwrap() - 0.5).abs() < 1e-12);
        assert!((m.mass(0.0, 0.3).unwrap() - 0.3).abs() < 1e-12);
        assert!((m.mass(0.7, 1.0).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn exponential_tail_on_half_line() {
        // density e^{-x} on (0,inf): mass(s,inf) = e^{-s}.
        let m = CumulativeMeasure::from_density(0.0, f64::INFINITY, 1.0, |x| (-x).exp(), tol());
        for s in [0.0, 0.5, 3.0, 10.0, 30.0] {
            let got = m.mass(s, f64::INFINITY).unwrap();
            let want = (-s).exp();
            assert!(
                (got - want).abs() < 1e-10 * want.max(1e-30) + 1e-14,
                "tail at {s}: got {got}, want {want}"
            );
        }
        assert!(!m.right_tail_infinite().unwrap());
    }

    #[test]
    fn tiny_tail_keeps_relative_precision() {
        // Gaussian-like density: tail at 6 is ~1e-16 of the total; the
        // right-anchored accumulation must resolve it to full precision.
        let m = CumulativeMeasure::from_density(
            f64::NEG_INFINITY,
            f64::INFINITY,
            0.0,
            |x| (-x * x).exp(),
            tol(),
        );
        let got = m.mass(6.0, f64::INFINITY).unwrap();
        // 0.5*sqrt(pi)*erfc(6)
        let want = 1.907_137_010_3e-17;
        assert!((got - want).abs() < 1e-8 * want, "got {got:e}, want {want:e}");
    }

    #[test]
    fn divergent_tail_flagged_and_sticky() {
        // density e^{x} on (0,inf): right tail infinite.
        let m = CumulativeMeasure::from_density(0.0, f64::INFINITY, 1.0, |x| x.exp(), tol());
        assert!(m.right_tail_infinite().unwrap());
        assert_eq!(m.mass(2.0, f64::INFINITY).unwrap(), f64::INFINITY);
        assert_eq!(m.mass(0.0, f64::INFINITY).unwrap(), f64::INFINITY);
        // Interior masses stay finite.
        let v = m.mass(1.0, 3.0).unwrap();
        assert!((v - (3.0_f64.exp() - 1.0_f64.exp())).abs() < 1e-9 * v);
    }

    #[test]
    fn divergent_finite_endpoint() {
        // density 1/x^2 on (0,1): infinite mass toward 0, finite elsewhere.
        let m = CumulativeMeasure::from_density(0.0, 1.0, 0.5, |x| 1.0 / (x * x), tol());
        assert!(m.left_tail_infinite().unwrap());
        assert_eq!(m.mass(0.0, 0.5).unwrap(), f64::INFINITY);
        let v = m.mass(0.25, 1.0).unwrap();
        assert!((v - 3.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn additivity_and_monotonicity() {
        let m = CumulativeMeasure::from_density(0.0, f64::INFINITY, 1.0, |x| (-x).exp() * (1.0 + x), tol());
        let pts = [0.1, 0.7, 1.3, 2.9, 8.0];
        for w in pts.windows(2) {
            let (s, t) = (w[0], w[1]);
            let a = m.mass(0.0, s).unwrap();
            let b = m.mass(s, t).unwrap();
            let c = m.mass(0.0, t).unwrap();
            assert!((a + b - c).abs() < 1e-10 * c.max(1.0));
            assert!(b >= 0.0);
            assert!(c >= a);
        }
    }

    #[test]
    fn slowly_divergent_tail_flagged() {
        // density 1/(1+x) on (0,inf): logarithmic divergence at infinity,
        // far below any magnitude cap; classification must still catch it.
        let m = CumulativeMeasure::from_density(0.0, f64::INFINITY, 1.0, |x| 1.0 / (1.0 + x), tol());
        assert!(m.right_tail_infinite().unwrap());
        assert_eq!(m.mass(5.0, f64::INFINITY).unwrap(), f64::INFINITY);
        let v = m.mass(0.0, 3.0).unwrap();
        assert!((v - 4.0_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn interior_pair_deep_in_a_tail_keeps_relative_precision() {
        // Both endpoints interior but far into the decaying tail: anchored
        // prefix differences would cancel against the bulk; the endpoint
        // accumulators must take over.
        let m = CumulativeMeasure::from_density(0.0, f64::INFINITY, 1.0, |x| (-x).exp(), tol());
        let v = m.mass(20.0, 30.0).unwrap();
        let want = (-20.0f64).exp() - (-30.0f64).exp();
        assert!((v - want).abs() < 1e-9 * want, "got {v:e}, want {want:e}");
        let deep = m.mass(40.0, 45.0).unwrap();
        let want_deep = (-40.0f64).exp() - (-45.0f64).exp();
        assert!((deep - want_deep).abs() < 1e-9 * want_deep, "got {deep:e}");
    }

    #[test]
    fn huge_finite_interior_masses_saturate() {
        // density e^{x^2} on (0,inf): interior masses are finite but grow
        // past 1e12 quickly; they must be returned, not misclassified.
        let m = CumulativeMeasure::from_density(0.0, f64::INFINITY, 1.0, |x| (x * x).exp(), tol());
        let v6 = m.mass(0.0, 6.0).unwrap();
        assert!(v6.is_finite() && v6 > 1e13, "got {v6:e}");
        let v5 = m.mass(0.0, 5.0).unwrap();
        assert!(v5.is_finite() && v5 < v6);
        assert!(m.right_tail_infinite().unwrap());
    }

    #[test]
    fn out_of_range_rejected() {
        let m = CumulativeMeasure::from_density(0.0, 1.0, 0.5, |_| 1.0, tol());
        assert!(matches!(m.mass(-0.1, 0.5), Err(MeasureError::OutOfRange { .. })));
        assert!(matches!(m.mass(0.5, 0.2), Err(MeasureError::OutOfRange { .. })));
        assert!(matches!(m.mass(0.5, 1.5), Err(MeasureError::OutOfRange { .. })));
    }

    #[test]
    fn nan_density_reported() {
        let m = CumulativeMeasure::from_density(0.0, 1.0, 0.5, |x| if x > 0.9 { f64::NAN } else { 1.0 }, tol());
        assert!(matches!(m.mass(0.2, 0.95), Err(MeasureError::NanIntegrand { .. })));
    }

    #[test]
    fn whole_line_map_roundtrip() {
        let map = IntervalMap::new(f64::NEG_INFINITY, f64::INFINITY);
        for x in [-50.0, -1.0, 0.0, 0.3, 7.0, 200.0] {
            let s = map.to_s(x);
            assert!((map.to_x(s) - x).abs() < 1e-9 * x.abs().max(1.0));
        }
    }
}
