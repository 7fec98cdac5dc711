//! Diffusion problems: interval, coefficients, speed and scale measures.
//!
//! A problem is `L = a(x) d²/dx² + b(x) d/dx` on (left,right), or
//! equivalently the pair of measures it induces:
//!
//! * speed   μ(dx) = e^{C(x)}/a(x) dx,
//! * scale   ν(dx) = e^{−C(x)} dx,
//!
//! where C(x) = ∫_θ^x b/a and θ is a reference point with C(θ) = 0.
//! Internally every problem is held in density form; problems built from
//! (a,b) additionally keep the potential cache so C(x) stays queryable.
//! All caches sit behind `Arc`s, so clones and duals share work.

use crate::measure::{CumulativeMeasure, IntervalMap, MeasureError, PanelCache};
use crate::quad::QuadTol;
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Errors from problem construction and measure queries.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProblemError {
    #[error("a({x}) = {value}; the diffusion coefficient must be positive on the interior")]
    NonPositiveA { x: f64, value: f64 },
    #[error("coefficient evaluation failed at x = {x}: {message}")]
    CoefficientEval { x: f64, message: String },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error("potential C(x) needs a problem built from (a,b); `{label}` holds densities only")]
    NoCoefficientForm { label: String },
    #[error("invalid interval: need left < theta < right, got ({left}, {right}) with theta = {theta}")]
    BadInterval { left: f64, right: f64, theta: f64 },
    #[error("x = {x} is outside the open interval ({left}, {right})")]
    OutsideInterval { x: f64, left: f64, right: f64 },
}

type Poison = Arc<Mutex<Option<ProblemError>>>;

/// A one-dimensional diffusion on an interval, in canonical density form.
#[derive(Clone)]
pub struct DiffusionProblem {
    pub left: f64,
    pub right: f64,
    pub theta: f64,
    pub label: String,
    tol: QuadTol,
    a: Density,
    mu_dens: Density,
    nu_dens: Density,
    /// log of the densities, evaluated without forming e^C first. Weighted
    /// products of opposing exponentials must be assembled in log space or
    /// they hit inf*0 far out on unbounded intervals.
    log_mu_dens: Density,
    log_nu_dens: Density,
    mu_cm: CumulativeMeasure,
    nu_cm: CumulativeMeasure,
    /// Potential cache; present only when built from (a,b).
    c: Option<(Arc<PanelCache>, f64)>,
    poison: Poison,
}

impl std::fmt::Debug for DiffusionProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionProblem")
            .field("label", &self.label)
            .field("left", &self.left)
            .field("right", &self.right)
            .field("theta", &self.theta)
            .field("coefficient_form", &self.c.is_some())
            .finish()
    }
}

fn check_interval(left: f64, right: f64, theta: f64) -> Result<(), ProblemError> {
    if !(left < theta && theta < right) || theta.is_nan() || !theta.is_finite() {
        return Err(ProblemError::BadInterval { left, right, theta });
    }
    Ok(())
}

impl DiffusionProblem {
    /// Build from coefficients a(x) > 0 and b(x).
    pub fn from_coefficients<A, B>(
        left: f64,
        right: f64,
        a: A,
        b: B,
        theta: f64,
        label: &str,
    ) -> Result<Self, ProblemError>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::from_coefficients_with_tol(left, right, a, b, theta, label, QuadTol::default())
    }

    pub fn from_coefficients_with_tol<A, B>(
        left: f64,
        right: f64,
        a: A,
        b: B,
        theta: f64,
        label: &str,
        tol: QuadTol,
    ) -> Result<Self, ProblemError>
    where
        A: Fn(f64) -> f64 + Send + Sync + 'static,
        B: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_interval(left, right, theta)?;
        let poison: Poison = Arc::new(Mutex::new(None));
        let a: Density = Arc::new(a);
        let b: Density = Arc::new(b);
        let map = IntervalMap::new(left, right);

        // Density b/a feeding the potential; a violation poisons the run.
        let drift = {
            let (a, b, poison) = (a.clone(), b.clone(), poison.clone());
            Arc::new(move |x: f64| {
                let av = a(x);
                if !(av > 0.0) {
                    poison_with(&poison, ProblemError::NonPositiveA { x, value: av });
                    return f64::NAN;
                }
                b(x) / av
            }) as Density
        };
        let c_cache = Arc::new(PanelCache::new(map, theta, drift, tol));
        let c_theta = c_cache
            .prefix(theta)
            .map_err(|e| resolve_poison(&poison, e))?;

        let mu_dens: Density = {
            let (a, c_cache, poison) = (a.clone(), c_cache.clone(), poison.clone());
            Arc::new(move |x: f64| {
                let av = a(x);
                if !(av > 0.0) {
                    poison_with(&poison, ProblemError::NonPositiveA { x, value: av });
                    return f64::NAN;
                }
                match c_cache.prefix(x) {
                    Ok(c) => (c - c_theta).exp() / av,
                    Err(e) => {
                        poison_with(&poison, ProblemError::Measure(e));
                        f64::NAN
                    }
                }
            })
        };
        let nu_dens: Density = {
            let (c_cache, poison) = (c_cache.clone(), poison.clone());
            Arc::new(move |x: f64| match c_cache.prefix(x) {
                Ok(c) => (c_theta - c).exp(),
                Err(e) => {
                    poison_with(&poison, ProblemError::Measure(e));
                    f64::NAN
                }
            })
        };
        let log_mu_dens: Density = {
            let (a, c_cache, poison) = (a.clone(), c_cache.clone(), poison.clone());
            Arc::new(move |x: f64| {
                let av = a(x);
                if !(av > 0.0) {
                    poison_with(&poison, ProblemError::NonPositiveA { x, value: av });
                    return f64::NAN;
                }
                match c_cache.prefix(x) {
                    Ok(c) => (c - c_theta) - av.ln(),
                    Err(e) => {
                        poison_with(&poison, ProblemError::Measure(e));
                        f64::NAN
                    }
                }
            })
        };
        let log_nu_dens: Density = {
            let (c_cache, poison) = (c_cache.clone(), poison.clone());
            Arc::new(move |x: f64| match c_cache.prefix(x) {
                Ok(c) => c_theta - c,
                Err(e) => {
                    poison_with(&poison, ProblemError::Measure(e));
                    f64::NAN
                }
            })
        };

        Ok(Self::assemble(
            left,
            right,
            theta,
            label,
            tol,
            a,
            mu_dens,
            nu_dens,
            log_mu_dens,
            log_nu_dens,
            Some((c_cache, c_theta)),
            poison,
        ))
    }

    /// Build directly from the speed and scale densities.
    pub fn from_densities<M, N>(
        left: f64,
        right: f64,
        mu_density: M,
        nu_density: N,
        theta: f64,
        label: &str,
    ) -> Result<Self, ProblemError>
    where
        M: Fn(f64) -> f64 + Send + Sync + 'static,
        N: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::from_densities_with_tol(left, right, mu_density, nu_density, theta, label, QuadTol::default())
    }

    pub fn from_densities_with_tol<M, N>(
        left: f64,
        right: f64,
        mu_density: M,
        nu_density: N,
        theta: f64,
        label: &str,
        tol: QuadTol,
    ) -> Result<Self, ProblemError>
    where
        M: Fn(f64) -> f64 + Send + Sync + 'static,
        N: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_interval(left, right, theta)?;
        let poison: Poison = Arc::new(Mutex::new(None));
        let mu_dens: Density = Arc::new(mu_density);
        let nu_dens: Density = Arc::new(nu_density);
        // a = 1/(mu_density * nu_density), the consistency relation inverted.
        let a: Density = {
            let (m, n) = (mu_dens.clone(), nu_dens.clone());
            Arc::new(move |x: f64| 1.0 / (m(x) * n(x)))
        };
        let log_mu_dens: Density = {
            let m = mu_dens.clone();
            Arc::new(move |x: f64| m(x).ln())
        };
        let log_nu_dens: Density = {
            let n = nu_dens.clone();
            Arc::new(move |x: f64| n(x).ln())
        };
        Ok(Self::assemble(
            left,
            right,
            theta,
            label,
            tol,
            a,
            mu_dens,
            nu_dens,
            log_mu_dens,
            log_nu_dens,
            None,
            poison,
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        left: f64,
        right: f64,
        theta: f64,
        label: &str,
        tol: QuadTol,
        a: Density,
        mu_dens: Density,
        nu_dens: Density,
        log_mu_dens: Density,
        log_nu_dens: Density,
        c: Option<(Arc<PanelCache>, f64)>,
        poison: Poison,
    ) -> Self {
        let map = IntervalMap::new(left, right);
        let mu_cm = CumulativeMeasure::new(Arc::new(PanelCache::new(map, theta, mu_dens.clone(), tol)));
        let nu_cm = CumulativeMeasure::new(Arc::new(PanelCache::new(map, theta, nu_dens.clone(), tol)));
        DiffusionProblem {
            left,
            right,
            theta,
            label: label.to_string(),
            tol,
            a,
            mu_dens,
            nu_dens,
            log_mu_dens,
            log_nu_dens,
            mu_cm,
            nu_cm,
            c,
            poison,
        }
    }

    pub fn tolerance(&self) -> QuadTol {
        self.tol
    }

    /// The potential C(x) = ∫_θ^x b/a, with C(θ) = 0 exactly.
    pub fn potential_c(&self, x: f64) -> Result<f64, ProblemError> {
        let (cache, c_theta) = self
            .c
            .as_ref()
            .ok_or_else(|| ProblemError::NoCoefficientForm { label: self.label.clone() })?;
        if x == self.theta {
            return Ok(0.0);
        }
        if !(x > self.left && x < self.right) {
            return Err(ProblemError::OutsideInterval { x, left: self.left, right: self.right });
        }
        let v = cache.prefix(x).map_err(|e| resolve_poison(&self.poison, e))?;
        Ok(v - c_theta)
    }

    /// Speed measure of [s,t]; +∞ when the integral diverges at an endpoint.
    pub fn mu_mass(&self, s: f64, t: f64) -> Result<f64, ProblemError> {
        self.mu_cm
            .mass(s, t)
            .map_err(|e| resolve_poison(&self.poison, e))
    }

    /// Scale measure of [s,t].
    pub fn nu_mass(&self, s: f64, t: f64) -> Result<f64, ProblemError> {
        self.nu_cm
            .mass(s, t)
            .map_err(|e| resolve_poison(&self.poison, e))
    }

    /// Cumulative speed measure with its tail flags.
    pub fn mu(&self) -> &CumulativeMeasure {
        &self.mu_cm
    }

    pub fn nu(&self) -> &CumulativeMeasure {
        &self.nu_cm
    }

    /// The dual problem: μ and ν exchanged, same interval and θ.
    /// Dualizing twice restores the original densities (and label).
    pub fn dualize(&self) -> DiffusionProblem {
        let label = match self.label.strip_suffix('*') {
            Some(base) => base.to_string(),
            None => format!("{}*", self.label),
        };
        DiffusionProblem {
            left: self.left,
            right: self.right,
            theta: self.theta,
            label,
            tol: self.tol,
            a: self.a.clone(),
            mu_dens: self.nu_dens.clone(),
            nu_dens: self.mu_dens.clone(),
            log_mu_dens: self.log_nu_dens.clone(),
            log_nu_dens: self.log_mu_dens.clone(),
            mu_cm: self.nu_cm.clone(),
            nu_cm: self.mu_cm.clone(),
            c: None,
            poison: self.poison.clone(),
        }
    }

    #[cfg(test)]
    pub(crate) fn mu_density(&self, x: f64) -> f64 {
        (self.mu_dens)(x)
    }

    #[cfg(test)]
    pub(crate) fn nu_density(&self, x: f64) -> f64 {
        (self.nu_dens)(x)
    }

    /// Log densities for the bound engines, which assemble products of the
    /// form exp(log_mu + g) to keep opposing exponentials out of the float
    /// range. NaN marks a poisoned evaluation; callers surface it via
    /// `take_poison`.
    pub(crate) fn log_mu_density_arc(&self) -> Density {
        self.log_mu_dens.clone()
    }

    pub(crate) fn log_nu_density_arc(&self) -> Density {
        self.log_nu_dens.clone()
    }

    /// The same diffusion on a narrower interval. Densities, coefficient
    /// and potential caches are shared; the cumulative measures are rebuilt
    /// over the new interval.
    pub(crate) fn restricted(&self, left: f64, right: f64) -> Result<DiffusionProblem, ProblemError> {
        if !(left >= self.left && right <= self.right) {
            return Err(ProblemError::BadInterval { left, right, theta: self.theta });
        }
        check_interval(left, right, self.theta)?;
        Ok(Self::assemble(
            left,
            right,
            self.theta,
            &self.label,
            self.tol,
            self.a.clone(),
            self.mu_dens.clone(),
            self.nu_dens.clone(),
            self.log_mu_dens.clone(),
            self.log_nu_dens.clone(),
            self.c.clone(),
            self.poison.clone(),
        ))
    }

    /// a(x) with the positivity check applied.
    pub fn a_value(&self, x: f64) -> Result<f64, ProblemError> {
        let v = (self.a)(x);
        if !(v > 0.0) {
            return Err(ProblemError::NonPositiveA { x, value: v });
        }
        Ok(v)
    }

    /// First coefficient failure recorded by a density closure, if any.
    pub(crate) fn take_poison(&self) -> Option<ProblemError> {
        self.poison.lock().unwrap().clone()
    }

    /// Wrap a raw measure error, preferring a recorded coefficient failure.
    pub(crate) fn resolve(&self, e: MeasureError) -> ProblemError {
        resolve_poison(&self.poison, e)
    }
}

fn poison_with(poison: &Poison, err: ProblemError) {
    let mut guard = poison.lock().unwrap();
    if guard.is_none() {
        *guard = Some(err);
    }
}

fn resolve_poison(poison: &Poison, e: MeasureError) -> ProblemError {
    if let Some(p) = poison.lock().unwrap().clone() {
        return p;
    }
    ProblemError::Measure(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ou_whole() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(
            f64::NEG_INFINITY,
            f64::INFINITY,
            |_| 0.5,
            |x| -x,
            0.0,
            "ou_whole",
        )
        .unwrap()
    }

    fn hardy() -> DiffusionProblem {
        DiffusionProblem::from_coefficients(0.0, f64::INFINITY, |x| x * x, |_| 0.0, 1.0, "hardy")
            .unwrap()
    }

    #[test]
    fn potential_at_reference_point_is_zero() {
        assert_eq!(ou_whole().potential_c(0.0).unwrap(), 0.0);
    }

    #[test]
    fn potential_matches_closed_forms() {
        // OU: C(x) = ∫ (−x)/(1/2) = −x².
        let p = ou_whole();
        assert!((p.potential_c(1.0).unwrap() + 1.0).abs() < 1e-10);
        assert!((p.potential_c(-2.0).unwrap() + 4.0).abs() < 1e-9);
        // Constant drift: C(x) = b·x.
        let d = DiffusionProblem::from_coefficients(0.0, f64::INFINITY, |_| 1.0, |_| -1.0, 1.0, "drift")
            .unwrap();
        assert!((d.potential_c(2.0).unwrap() - (-2.0 + 1.0)).abs() < 1e-10);
        let d0 = DiffusionProblem::from_coefficients(
            f64::NEG_INFINITY,
            f64::INFINITY,
            |_| 1.0,
            |_| -1.0,
            0.0,
            "drift0",
        )
        .unwrap();
        assert!((d0.potential_c(2.0).unwrap() + 2.0).abs() < 1e-10);
    }

    #[test]
    fn density_form_has_no_potential() {
        let p = DiffusionProblem::from_densities(0.0, 1.0, |_| 1.0, |_| 1.0, 0.5, "flat").unwrap();
        assert!(matches!(p.potential_c(0.3), Err(ProblemError::NoCoefficientForm { .. })));
    }

    #[test]
    fn lebesgue_masses_on_unit_interval() {
        let p = DiffusionProblem::from_coefficients(0.0, 1.0, |_| 1.0, |_| 0.0, 0.5, "laplace")
            .unwrap();
        assert!((p.mu_mass(0.2, 0.7).unwrap() - 0.5).abs() < 1e-12);
        assert!((p.nu_mass(0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ou_total_speed_mass() {
        // density 2e^{−x²}: total 2√π.
        let p = ou_whole();
        let want = 2.0 * std::f64::consts::PI.sqrt();
        let got = p.mu_mass(f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert!((got - want).abs() < 1e-8, "got {got}, want {want}");
    }

    #[test]
    fn hardy_masses() {
        let p = hardy();
        assert!((p.mu_mass(1.0, f64::INFINITY).unwrap() - 1.0).abs() < 1e-9);
        for x in [0.25, 1.0, 4.0] {
            let got = p.nu_mass(0.0, x).unwrap();
            assert!((got - x).abs() < 1e-9 * x.max(1.0), "nu(0,{x}) = {got}");
        }
        // Speed measure blows up at 0: density x^{-2}.
        assert_eq!(p.mu_mass(0.0, 1.0).unwrap(), f64::INFINITY);
        assert!(p.mu().left_tail_infinite().unwrap());
    }

    #[test]
    fn ou_half_scale_divergence_detected() {
        let p = DiffusionProblem::from_coefficients(0.0, f64::INFINITY, |_| 0.5, |x| -x, 1.0, "ou_half")
            .unwrap();
        assert_eq!(p.nu_mass(0.0, f64::INFINITY).unwrap(), f64::INFINITY);
        assert!(p.nu().right_tail_infinite().unwrap());
        assert!(!p.mu().right_tail_infinite().unwrap());
    }

    #[test]
    fn consistency_relation() {
        let mut seed = 0x9e3779b97f4a7c15_u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let p = ou_whole();
        for _ in 0..100 {
            let x = 8.0 * next() - 4.0;
            let prod = p.mu_density(x) * p.nu_density(x) * p.a_value(x).unwrap();
            assert!((prod - 1.0).abs() < 1e-12, "consistency at {x}: {prod}");
        }
        let h = hardy();
        for _ in 0..100 {
            let x = 0.05 + 10.0 * next();
            let prod = h.mu_density(x) * h.nu_density(x) * h.a_value(x).unwrap();
            assert!((prod - 1.0).abs() < 1e-12, "consistency at {x}: {prod}");
        }
    }

    #[test]
    fn dual_swaps_measures_and_label() {
        let p = ou_whole();
        let d = p.dualize();
        assert_eq!(d.label, "ou_whole*");
        assert_eq!(d.dualize().label, "ou_whole");
        for x in [-1.5, 0.3, 2.0] {
            assert_eq!(p.mu_density(x), d.nu_density(x));
            assert_eq!(p.nu_density(x), d.mu_density(x));
        }
        // Laplacian is self-dual.
        let l = DiffusionProblem::from_coefficients(0.0, 1.0, |_| 1.0, |_| 0.0, 0.5, "laplace")
            .unwrap();
        let ld = l.dualize();
        for x in [0.1, 0.5, 0.9] {
            assert!((ld.mu_density(x) - l.mu_density(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn dual_of_drift_negates_drift() {
        // a=1, b=const: the dual's densities coincide with those of drift −b.
        let p = DiffusionProblem::from_coefficients(
            f64::NEG_INFINITY,
            f64::INFINITY,
            |_| 1.0,
            |_| -1.0,
            0.0,
            "drift",
        )
        .unwrap();
        let d = p.dualize();
        let q = DiffusionProblem::from_coefficients(
            f64::NEG_INFINITY,
            f64::INFINITY,
            |_| 1.0,
            |_| 1.0,
            0.0,
            "drift_flipped",
        )
        .unwrap();
        for x in [-2.0, -0.5, 0.0, 1.0, 3.0] {
            assert!((d.mu_density(x) - q.mu_density(x)).abs() < 1e-10 * q.mu_density(x));
            assert!((d.nu_density(x) - q.nu_density(x)).abs() < 1e-10 * q.nu_density(x));
        }
    }

    #[test]
    fn nonpositive_a_poisons() {
        let p = DiffusionProblem::from_coefficients(-1.0, 1.0, |x| x, |_| 0.0, 0.5, "bad");
        // a(x) = x is negative left of zero; the potential integral from θ
        // to a negative x must surface the positivity error.
        let p = p.unwrap();
        let err = p.mu_mass(-0.9, 0.9).unwrap_err();
        assert!(matches!(err, ProblemError::NonPositiveA { .. }), "{err}");
    }

    #[test]
    fn interval_validation() {
        assert!(matches!(
            DiffusionProblem::from_coefficients(1.0, 0.0, |_| 1.0, |_| 0.0, 0.5, "x"),
            Err(ProblemError::BadInterval { .. })
        ));
        assert!(matches!(
            DiffusionProblem::from_coefficients(0.0, 1.0, |_| 1.0, |_| 0.0, 2.0, "x"),
            Err(ProblemError::BadInterval { .. })
        ));
    }

    #[test]
    fn clone_shares_caches() {
        let p = ou_whole();
        let total = p.mu_mass(f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let q = p.clone();
        assert_eq!(q.mu_mass(f64::NEG_INFINITY, f64::INFINITY).unwrap(), total);
    }
}
