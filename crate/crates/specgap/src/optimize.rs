//! Derivative-free minimization in map-space coordinates.
//!
//! All searches run over s ∈ (0,1); callers transport to x themselves, so
//! unbounded intervals need no special handling here. Objectives must return
//! +∞ (not NaN) at inadmissible points. Walls of +∞ repel the bracket, which
//! is also how suprema attained only in a limit at an endpoint get chased as
//! far as f64 arithmetic resolves them.

/// Closest approach to the interval ends, in map space.
pub(crate) const EDGE: f64 = 1e-9;

/// Minimal map-space separation kept between the two coordinates of a pair.
const PAIR_GAP: f64 = 1e-12;

const INV_PHI: f64 = 0.618_033_988_749_894_8;
const WIDTH_TOL: f64 = 1e-13;
const MAX_GOLDEN_ITERS: u32 = 400;

#[derive(Clone, Copy, Debug)]
pub(crate) struct MinPoint {
    pub s: f64,
    pub value: f64,
}

#[derive(Debug)]
pub(crate) struct MinOutcome {
    pub best: MinPoint,
    pub evals: u64,
    /// Relative objective spread across the final bracket.
    pub tol_achieved: f64,
    pub converged: bool,
}

#[derive(Debug)]
pub(crate) struct PairOutcome {
    pub sx: f64,
    pub sy: f64,
    pub value: f64,
    pub evals: u64,
    /// Relative improvement of the final sweep.
    pub tol_achieved: f64,
    pub converged: bool,
}

/// Golden-section refinement on [a,b]. Stops once the bracket's objective
/// spread falls under `rel_tol` relative to the best value, or the bracket
/// narrows to machine resolution.
fn golden_refine(
    f: &mut impl FnMut(f64) -> f64,
    mut a: f64,
    mut b: f64,
    rel_tol: f64,
    evals: &mut u64,
) -> (MinPoint, f64, bool) {
    debug_assert!(a < b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    *evals += 2;
    let mut best = if f1 <= f2 {
        MinPoint { s: x1, value: f1 }
    } else {
        MinPoint { s: x2, value: f2 }
    };
    for _ in 0..MAX_GOLDEN_ITERS {
        let spread = f1.max(f2) - best.value;
        if best.value.is_finite() && spread.is_finite() && spread <= rel_tol * (best.value.abs() + 1e-300) {
            return (best, spread / (best.value.abs() + 1e-300), true);
        }
        if b - a <= WIDTH_TOL {
            let tol = if spread.is_finite() { spread / (best.value.abs() + 1e-300) } else { 0.0 };
            return (best, tol, true);
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        *evals += 1;
        let (cs, cv) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if cv < best.value || (cv == best.value && cs < best.s) {
            best = MinPoint { s: cs, value: cv };
        }
    }
    (best, f64::INFINITY, false)
}

/// Scan the seed points, then refine around the best one by golden section.
/// Seeds must be strictly increasing within (0,1). Ties keep the smallest s.
pub(crate) fn scan_golden_min(
    f: &mut impl FnMut(f64) -> f64,
    seeds: &[f64],
    rel_tol: f64,
) -> MinOutcome {
    assert!(!seeds.is_empty());
    let mut evals = 0u64;
    let mut bi = 0usize;
    let mut bv = f64::INFINITY;
    for (i, &s) in seeds.iter().enumerate() {
        let v = f(s);
        evals += 1;
        if v < bv {
            bv = v;
            bi = i;
        }
    }
    if !bv.is_finite() {
        return MinOutcome {
            best: MinPoint { s: f64::NAN, value: f64::INFINITY },
            evals,
            tol_achieved: f64::INFINITY,
            converged: false,
        };
    }
    let lo = if bi == 0 { EDGE } else { seeds[bi - 1] };
    let hi = if bi + 1 == seeds.len() { 1.0 - EDGE } else { seeds[bi + 1] };
    let (gbest, tol_achieved, converged) = golden_refine(f, lo, hi, rel_tol, &mut evals);
    let best = if gbest.value < bv || (gbest.value == bv && gbest.s < seeds[bi]) {
        gbest
    } else {
        MinPoint { s: seeds[bi], value: bv }
    };
    MinOutcome { best, evals, tol_achieved, converged }
}

/// Coarse grid over ordered pairs, then alternating coordinate golden
/// sections. `bail_below`: stop right after the grid stage when its best is
/// already at or under this value (the caller has decided such values are
/// degenerate and refining them is pointless).
pub(crate) fn grid_sweep_min(
    f: &mut impl FnMut(f64, f64) -> f64,
    seeds: &[f64],
    rel_tol: f64,
    max_sweeps: u32,
    bail_below: f64,
) -> PairOutcome {
    assert!(seeds.len() >= 2);
    let mut evals = 0u64;
    let mut bx = f64::NAN;
    let mut by = f64::NAN;
    let mut bv = f64::INFINITY;
    for i in 0..seeds.len() {
        for j in (i + 1)..seeds.len() {
            let v = f(seeds[i], seeds[j]);
            evals += 1;
            if v < bv {
                bv = v;
                bx = seeds[i];
                by = seeds[j];
            }
        }
    }
    if !bv.is_finite() || bv <= bail_below {
        return PairOutcome {
            sx: bx,
            sy: by,
            value: bv,
            evals,
            tol_achieved: f64::INFINITY,
            converged: bv <= bail_below,
        };
    }
    let mut tol_achieved = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let prev = bv;
        let y_now = by;
        if EDGE < y_now - PAIR_GAP {
            let (p, _, _) = golden_refine(&mut |s| f(s, y_now), EDGE, y_now - PAIR_GAP, rel_tol, &mut evals);
            if p.value < bv {
                bv = p.value;
                bx = p.s;
            }
        }
        let x_now = bx;
        if x_now + PAIR_GAP < 1.0 - EDGE {
            let (p, _, _) = golden_refine(&mut |s| f(x_now, s), x_now + PAIR_GAP, 1.0 - EDGE, rel_tol, &mut evals);
            if p.value < bv {
                bv = p.value;
                by = p.s;
            }
        }
        tol_achieved = (prev - bv).abs() / (bv.abs() + 1e-300);
        if tol_achieved <= rel_tol {
            converged = true;
            break;
        }
        if bv <= bail_below {
            converged = true;
            break;
        }
    }
    PairOutcome { sx: bx, sy: by, value: bv, evals, tol_achieved, converged }
}

/// Uniform interior seeds, the fallback when no finite measure provides
/// quantiles.
pub(crate) fn uniform_seeds(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

/// Nelder--Mead polish for ordered pairs. Coordinate sweeps stall on the
/// kinks of max-of-pieces objectives; the moving simplex does not. Points
/// violating sx < sy evaluate to +∞, which the usual contraction rules
/// treat as a wall.
pub(crate) fn nelder_mead_pair(
    f: &mut impl FnMut(f64, f64) -> f64,
    sx0: f64,
    sy0: f64,
    scale: f64,
    rel_tol: f64,
    max_evals: u64,
) -> PairOutcome {
    let mut evals = 0u64;
    let mut eval = |p: [f64; 2], evals: &mut u64| -> f64 {
        *evals += 1;
        let x = p[0].clamp(EDGE, 1.0 - EDGE);
        let y = p[1].clamp(EDGE, 1.0 - EDGE);
        if !(x + PAIR_GAP <= y) {
            return f64::INFINITY;
        }
        let v = f(x, y);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut pts = [[sx0, sy0], [sx0 + scale, sy0], [sx0, sy0 + scale]];
    let mut vals = [0.0f64; 3];
    for i in 0..3 {
        vals[i] = eval(pts[i], &mut evals);
    }
    let mut tol_achieved = f64::INFINITY;
    let mut converged = false;
    while evals < max_evals {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let (b, m, w) = (order[0], order[1], order[2]);
        let spread = vals[w] - vals[b];
        let diameter = (0..2)
            .map(|k| {
                let lo = pts[0][k].min(pts[1][k]).min(pts[2][k]);
                let hi = pts[0][k].max(pts[1][k]).max(pts[2][k]);
                hi - lo
            })
            .fold(0.0f64, f64::max);
        if vals[b].is_finite() {
            tol_achieved = spread / (vals[b].abs() + 1e-300);
            if spread.is_finite() && (tol_achieved <= rel_tol || diameter <= 1e-11) {
                converged = true;
                break;
            }
        } else if diameter <= 1e-11 {
            break;
        }

        let cen = [
            0.5 * (pts[b][0] + pts[m][0]),
            0.5 * (pts[b][1] + pts[m][1]),
        ];
        let refl = [2.0 * cen[0] - pts[w][0], 2.0 * cen[1] - pts[w][1]];
        let fr = eval(refl, &mut evals);
        if fr < vals[b] {
            let exp = [3.0 * cen[0] - 2.0 * pts[w][0], 3.0 * cen[1] - 2.0 * pts[w][1]];
            let fe = eval(exp, &mut evals);
            if fe < fr {
                pts[w] = exp;
                vals[w] = fe;
            } else {
                pts[w] = refl;
                vals[w] = fr;
            }
        } else if fr < vals[m] {
            pts[w] = refl;
            vals[w] = fr;
        } else {
            let con = if fr < vals[w] {
                [cen[0] + 0.5 * (refl[0] - cen[0]), cen[1] + 0.5 * (refl[1] - cen[1])]
            } else {
                [cen[0] + 0.5 * (pts[w][0] - cen[0]), cen[1] + 0.5 * (pts[w][1] - cen[1])]
            };
            let fc = eval(con, &mut evals);
            if fc < vals[w].min(fr) {
                pts[w] = con;
                vals[w] = fc;
            } else {
                for i in [m, w] {
                    pts[i] = [
                        pts[b][0] + 0.5 * (pts[i][0] - pts[b][0]),
                        pts[b][1] + 0.5 * (pts[i][1] - pts[b][1]),
                    ];
                    vals[i] = eval(pts[i], &mut evals);
                }
            }
        }
    }
    let mut bi = 0;
    for i in 1..3 {
        if vals[i] < vals[bi] {
            bi = i;
        }
    }
    PairOutcome {
        sx: pts[bi][0].clamp(EDGE, 1.0 - EDGE),
        sy: pts[bi][1].clamp(EDGE, 1.0 - EDGE),
        value: vals[bi],
        evals,
        tol_achieved,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let mut f = |s: f64| (s - 0.37) * (s - 0.37);
        let out = scan_golden_min(&mut f, &uniform_seeds(64), 1e-12);
        assert!((out.best.s - 0.37).abs() < 1e-6);
        assert!(out.best.value < 1e-12);
        assert!(out.converged);
    }

    #[test]
    fn scan_guards_against_local_minima() {
        use std::f64::consts::PI;
        let mut f = |s: f64| (8.0 * PI * s).sin() + s;
        let out = scan_golden_min(&mut f, &uniform_seeds(64), 1e-12);
        let u = 2.0 * PI - (-1.0 / (8.0 * PI)).acos();
        let s_star = u / (8.0 * PI);
        assert!((out.best.s - s_star).abs() < 1e-7, "s = {}", out.best.s);
        assert!((out.best.value - (u.sin() + s_star)).abs() < 1e-9);
    }

    #[test]
    fn wall_is_chased_to_the_edge() {
        let mut f = |s: f64| if s <= 0.8 { 1.0 / s } else { f64::INFINITY };
        let out = scan_golden_min(&mut f, &uniform_seeds(64), 1e-14);
        assert!(out.best.s <= 0.8 && out.best.s > 0.8 - 1e-4);
        assert!(out.best.value >= 1.25 && out.best.value < 1.2502);
    }

    #[test]
    fn constant_objective_keeps_smallest_s() {
        let mut f = |_s: f64| 1.0;
        let seeds = uniform_seeds(64);
        let out = scan_golden_min(&mut f, &seeds, 1e-10);
        assert_eq!(out.best.value, 1.0);
        assert!(out.best.s <= seeds[0]);
    }

    #[test]
    fn nothing_admissible_reported() {
        let mut f = |_s: f64| f64::INFINITY;
        let out = scan_golden_min(&mut f, &uniform_seeds(8), 1e-10);
        assert!(!out.converged);
        assert!(out.best.s.is_nan());
    }

    #[test]
    fn simplex_crosses_the_kink_that_stalls_sweeps() {
        // V-shaped valley running diagonally: each single coordinate is
        // already optimal at (0.25, 0.65) yet the joint minimum is elsewhere.
        let mut f = |x: f64, y: f64| (x - y + 0.4).abs().max((x + y - 1.1).abs()) + 0.1 * (x - 0.35).abs();
        let out = nelder_mead_pair(&mut f, 0.25, 0.65, 0.03, 1e-12, 4000);
        assert!(out.converged);
        assert!((out.sx - 0.35).abs() < 1e-6, "sx = {}", out.sx);
        assert!((out.sy - 0.75).abs() < 1e-6, "sy = {}", out.sy);
    }

    #[test]
    fn pair_sweeps_converge_on_coupled_quadratic() {
        let mut f = |x: f64, y: f64| {
            (x - 0.3) * (x - 0.3) + (y - 0.7) * (y - 0.7) + 0.3 * (x - 0.3) * (y - 0.7)
        };
        let out = grid_sweep_min(&mut f, &uniform_seeds(32), 1e-12, 200, f64::NEG_INFINITY);
        assert!((out.sx - 0.3).abs() < 1e-5, "sx = {}", out.sx);
        assert!((out.sy - 0.7).abs() < 1e-5, "sy = {}", out.sy);
        assert!(out.value < 1e-10);
        assert!(out.converged);
        assert!(out.sx < out.sy);
    }

    #[test]
    fn pair_budget_exhaustion_reports_grid_best() {
        let mut f = |x: f64, y: f64| (x - 0.3) * (x - 0.3) + (y - 0.7) * (y - 0.7);
        let out = grid_sweep_min(&mut f, &uniform_seeds(8), 0.0, 0, f64::NEG_INFINITY);
        assert!(!out.converged);
        assert!(out.value.is_finite());
        assert!(out.sx < out.sy);
    }

    #[test]
    fn pair_bails_below_threshold_after_grid() {
        let mut calls = 0u64;
        let mut f = |x: f64, y: f64| {
            calls += 1;
            (x - 0.3).abs().min((y - 0.7).abs()) * 1e-20
        };
        let seeds = uniform_seeds(8);
        let grid_evals = (seeds.len() * (seeds.len() - 1) / 2) as u64;
        let out = grid_sweep_min(&mut f, &seeds, 1e-12, 200, 1e-12);
        assert!(out.converged);
        assert_eq!(out.evals, grid_evals);
        assert_eq!(calls, grid_evals);
    }
}
