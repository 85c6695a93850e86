//! The two-weight balance condition, the exponent condition that implies
//! it, and `p`-admissibility of weight pairs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Ball, Cube, Grid, Region};
use crate::sum::Kahan;
use crate::weight_char::{cube_sums, level_scalar, refinement_study, scalar_ap, sup_over, CharacteristicEstimate, CubeFamily};

pub const DEFAULT_SLOPE_TOL: f64 = 0.02;
/// Smallest sub-ball radius, in cell widths.
pub const MIN_RADIUS_CELLS: f64 = 4.0;

fn ball_mass(f: &ScalarField, b: &Ball) -> Option<f64> {
    let g = &f.grid;
    let mut acc = Kahan::new();
    let mut hit = false;
    Region::Ball(b.clone()).for_each_cell(g, |i| {
        hit = true;
        acc.add(g.weight(i) * f.values[i]);
    });
    hit.then(|| acc.value())
}

fn check_exponents(p: f64, q: f64) -> Result<()> {
    if !(p >= 1.0) || !(q > p) {
        return Err(Error::Exponent(format!("balance needs 1 <= p < q, got p = {p}, q = {q}")));
    }
    Ok(())
}

/// `r (v(rB)/v(B))^{1/q} / (w(rB)/w(B))^{1/p}` with balls clipped to the
/// domain.
pub fn balance_ratio(w: &ScalarField, v: &ScalarField, p: f64, q: f64, ball: &Ball, r: f64) -> Result<f64> {
    check_exponents(p, q)?;
    if !w.grid.same_shape(&v.grid) {
        return Err(Error::GridMismatch);
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Parameter(format!("r must lie in (0,1), got {r}")));
    }
    let small = ball.scaled(r);
    let under = || Error::UnderResolved(format!("no cell centre in the ball of radius {}", small.radius));
    let (vb, wb) = (ball_mass(v, ball).ok_or_else(under)?, ball_mass(w, ball).ok_or_else(under)?);
    let (vr, wr) = (ball_mass(v, &small).ok_or_else(under)?, ball_mass(w, &small).ok_or_else(under)?);
    Ok(r * (vr / vb).powf(1.0 / q) / (wr / wb).powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceVerdict {
    Holds,
    Fails,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallTrace {
    pub center: Vec<f64>,
    pub radius: f64,
    /// `(r, ratio)` rows.
    pub rows: Vec<(f64, f64)>,
    pub slope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceReport {
    pub p: f64,
    pub q: f64,
    pub sampled_balls: usize,
    pub radii: Vec<f64>,
    pub sup_ratio: f64,
    pub loglog_slope: f64,
    pub slope_tol: f64,
    pub verdict: BalanceVerdict,
    pub worst: BallTrace,
    pub traces: Vec<BallTrace>,
}

/// Latin-hypercube centres over the domain, the domain centre, the corners
/// of the bounding box that belong to the domain's closure, and the cells
/// at those corners. Every ball has radius half the smallest extent.
pub fn default_ball_samples(grid: &Grid, count: usize, seed: u64) -> Vec<Ball> {
    let n = grid.n();
    let radius = 0.5 * (0..n).map(|a| grid.extent(a)).fold(f64::INFINITY, f64::min);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let mut p: Vec<usize> = (0..count).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let cell_of = |x: &[f64]| -> usize {
        let m: Vec<usize> = (0..n)
            .map(|a| (((x[a] - grid.lo()[a]) / grid.h(a)).floor().max(0.0) as usize).min(grid.cells()[a] - 1))
            .collect();
        grid.index(&m)
    };
    let mut centers: Vec<Vec<f64>> = vec![];
    for k in 0..count {
        for _attempt in 0..32 {
            let x: Vec<f64> = (0..n)
                .map(|a| grid.lo()[a] + (perms[a][k] as f64 + rng.gen::<f64>()) / count as f64 * grid.extent(a))
                .collect();
            if grid.is_active(cell_of(&x)) {
                centers.push(x);
                break;
            }
        }
    }
    centers.push(grid.domain_center());
    for c in 0..(1usize << n) {
        let corner: Vec<f64> = (0..n).map(|a| if c >> a & 1 == 1 { grid.hi()[a] } else { grid.lo()[a] }).collect();
        let cell = cell_of(&corner);
        if grid.is_active(cell) {
            centers.push(corner);
            centers.push(grid.center(cell));
        }
    }
    centers.into_iter().map(|c| Ball::new(c, radius)).collect()
}

/// `2^{-1}, 2^{-2}, ...` while the sub-ball keeps four cell widths.
pub fn default_radii(grid: &Grid, ball_radius: f64) -> Vec<f64> {
    let mut out = vec![];
    let mut r = 0.5;
    while r * ball_radius >= MIN_RADIUS_CELLS * grid.min_h() * (1.0 - 1e-12) {
        out.push(r);
        r *= 0.5;
    }
    out
}

fn lsq_slope(rows: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().filter(|(_, y)| *y > 0.0 && y.is_finite()).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Ball and sub-ball masses, reused across exponents.
struct MassTable {
    balls: Vec<Ball>,
    radii: Vec<f64>,
    /// per ball: `(v(B), w(B))` and per radius `Some((v(rB), w(rB)))`.
    rows: Vec<((f64, f64), Vec<Option<(f64, f64)>>)>,
}

impl MassTable {
    fn build(w: &ScalarField, v: &ScalarField, balls: &[Ball], radii: &[f64]) -> Result<Self> {
        if !w.grid.same_shape(&v.grid) {
            return Err(Error::GridMismatch);
        }
        if radii.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return Err(Error::Parameter("radii must lie in (0,1)".into()));
        }
        let mut kept = vec![];
        let mut rows = vec![];
        for b in balls {
            let (Some(vb), Some(wb)) = (ball_mass(v, b), ball_mass(w, b)) else { continue };
            let per: Vec<Option<(f64, f64)>> = radii
                .iter()
                .map(|&r| {
                    let s = b.scaled(r);
                    match (ball_mass(v, &s), ball_mass(w, &s)) {
                        (Some(a), Some(c)) => Some((a, c)),
                        _ => None,
                    }
                })
                .collect();
            kept.push(b.clone());
            rows.push(((vb, wb), per));
        }
        if kept.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(MassTable { balls: kept, radii: radii.to_vec(), rows })
    }

    fn scan(&self, p: f64, q: f64, slope_tol: f64) -> BalanceReport {
        let mut traces = vec![];
        let mut sup = f64::NEG_INFINITY;
        for (b, ((vb, wb), per)) in self.balls.iter().zip(&self.rows) {
            let rows: Vec<(f64, f64)> = self
                .radii
                .iter()
                .zip(per)
                .filter_map(|(&r, m)| m.map(|(vr, wr)| (r, r * (vr / vb).powf(1.0 / q) / (wr / wb).powf(1.0 / p))))
                .collect();
            for &(_, x) in &rows {
                sup = sup.max(x);
            }
            let slope = lsq_slope(&rows);
            traces.push(BallTrace { center: b.center.clone(), radius: b.radius, rows, slope });
        }
        let worst = traces
            .iter()
            .filter(|t| !t.slope.is_nan())
            .min_by(|a, b| a.slope.total_cmp(&b.slope))
            .cloned()
            .unwrap_or_else(|| traces[0].clone());
        let slope = worst.slope;
        let verdict = if slope >= -slope_tol && sup.is_finite() { BalanceVerdict::Holds } else { BalanceVerdict::Fails };
        BalanceReport {
            p,
            q,
            sampled_balls: traces.len(),
            radii: self.radii.clone(),
            sup_ratio: sup,
            loglog_slope: slope,
            slope_tol,
            verdict,
            worst,
            traces,
        }
    }
}

/// Log-log slope of the balance ratio at the worst sampled ball.
pub fn balance_scan(w: &ScalarField, v: &ScalarField, p: f64, q: f64, balls: &[Ball], radii: &[f64]) -> Result<BalanceReport> {
    check_exponents(p, q)?;
    Ok(MassTable::build(w, v, balls, radii)?.scan(p, q, DEFAULT_SLOPE_TOL))
}

/// [`balance_scan`] over [`default_ball_samples`] and [`default_radii`].
pub fn balance_scan_default(w: &ScalarField, v: &ScalarField, p: f64, q: f64, seed: u64) -> Result<BalanceReport> {
    let balls = default_ball_samples(&w.grid, 32, seed);
    let radii = default_radii(&w.grid, balls[0].radius);
    balance_scan(w, v, p, q, &balls, &radii)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExponentCondition {
    pub t: f64,
    pub s: f64,
    pub p: f64,
    pub n: usize,
    /// `t − p/n`
    pub lhs: f64,
    /// `1/s'`
    pub rhs: f64,
    pub satisfied: bool,
    pub equality: bool,
    pub epsilon: f64,
    /// `(n/s') / ((t−ε) n/p − 1)` when the denominator is positive.
    pub q: Option<f64>,
    pub reason: Option<String>,
}

/// `0 < t − p/n ≤ 1/s'` and the associated balance exponent `q`.
pub fn exponent_condition(t: f64, s: f64, p: f64, n: usize, epsilon: Option<f64>) -> ExponentCondition {
    let nf = n as f64;
    let lhs = t - p / nf;
    let rhs = if s > 1.0 { 1.0 - 1.0 / s } else { f64::NAN };
    let eps = epsilon.unwrap_or(0.5 * lhs);
    let denom = (t - eps) * nf / p - 1.0;
    let q = (denom > 0.0 && rhs.is_finite()).then(|| nf * rhs / denom);
    let tol = 1e-12;
    let mut reason = None;
    let satisfied = if !(t > 1.0 && s > 1.0) {
        reason = Some("t and s must exceed 1".into());
        false
    } else if !(lhs > 0.0) {
        reason = Some(format!("t − p/n = {lhs} is not positive"));
        false
    } else if lhs > rhs + tol {
        reason = Some(format!("t − p/n = {lhs} exceeds 1/s' = {rhs}"));
        false
    } else {
        true
    };
    ExponentCondition {
        t,
        s,
        p,
        n,
        lhs,
        rhs,
        satisfied,
        equality: satisfied && (lhs - rhs).abs() <= tol,
        epsilon: eps,
        q,
        reason,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibleReport {
    pub p: f64,
    /// Domain cells where `w > v`.
    pub pointwise_failures: usize,
    pub ap: CharacteristicEstimate,
    pub doubling: CharacteristicEstimate,
    pub balance: Vec<BalanceReport>,
    pub best_q: Option<f64>,
    /// (1) `w ≤ v`, (2) `w ∈ A_p`, (3) `v` doubling, (4) balance for some q.
    pub items: [bool; 4],
    pub all_hold: bool,
}

/// Doubling constant `sup_Q v(2Q ∩ Ω) / v(Q)` as a refinement study.
pub fn doubling_estimate(v: &ScalarField, family: &CubeFamily) -> Result<CharacteristicEstimate> {
    v.check_weight()?;
    refinement_study("doubling", vec![], family, &v.grid, v.generator().is_some(), |g, cubes| {
        let f = level_scalar(v, g)?;
        let wt = g.weights();
        Ok(sup_over(cubes, |c| {
            let (m, [s]) = cube_sums(g, &wt, [&f.values], c);
            if m <= 0.0 {
                return None;
            }
            let big = Cube { center: c.center.clone(), side: 2.0 * c.side, level: c.level };
            let (_, [sb]) = cube_sums(g, &wt, [&f.values], &big);
            Some(sb / s)
        }))
    })
}

pub fn admissible_pair_report(w: &ScalarField, v: &ScalarField, p: f64, family: &CubeFamily, q_grid: &[f64], seed: u64) -> Result<AdmissibleReport> {
    if !(p > 1.0) {
        return Err(Error::Exponent(format!("admissibility needs p > 1, got {p}")));
    }
    if !w.grid.same_shape(&v.grid) {
        return Err(Error::GridMismatch);
    }
    let g = &w.grid;
    let pointwise_failures = (0..g.len()).filter(|&i| g.is_active(i) && w.values[i] > v.values[i] * (1.0 + 1e-12)).count();
    let ap = scalar_ap(w, p, family)?;
    let doubling = doubling_estimate(v, family)?;
    let balls = default_ball_samples(g, 32, seed);
    let radii = default_radii(g, balls[0].radius);
    let table = MassTable::build(w, v, &balls, &radii)?;
    let mut balance = vec![];
    for &q in q_grid {
        check_exponents(p, q)?;
        balance.push(table.scan(p, q, DEFAULT_SLOPE_TOL));
    }
    let best_q = balance
        .iter()
        .filter(|b| b.verdict == BalanceVerdict::Holds)
        .max_by(|a, b| a.loglog_slope.total_cmp(&b.loglog_slope))
        .map(|b| b.q);
    let items = [pointwise_failures == 0, ap.is_finite(), doubling.is_finite(), best_q.is_some()];
    Ok(AdmissibleReport { p, pointwise_failures, ap, doubling, balance, best_q, items, all_hold: items.iter().all(|&b| b) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lebesgue_scaling() {
        let g = Grid::unit_square(128).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        let b = Ball::new(vec![0.5, 0.5], 0.4);
        let r = balance_ratio(&one, &one, 2.0, 4.0, &b, 0.5).unwrap();
        // discrete areas only approximate πr²; the exponent is 2/q
        assert!((r - 0.5f64.sqrt()).abs() < 0.02, "{r}");
        let rep = balance_scan_default(&one, &one, 2.0, 4.0, 1).unwrap();
        assert!((rep.loglog_slope - 0.5).abs() < 0.05, "{}", rep.loglog_slope);
        assert_eq!(rep.verdict, BalanceVerdict::Holds);
    }

    #[test]
    fn ratio_errors() {
        let g = Grid::unit_square(16).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        let b = Ball::new(vec![0.5, 0.5], 0.4);
        assert!(matches!(balance_ratio(&one, &one, 2.0, 2.0, &b, 0.5), Err(Error::Exponent(_))));
        assert!(matches!(balance_ratio(&one, &one, 2.0, 3.0, &b, 0.01), Err(Error::UnderResolved(_))));
    }

    #[test]
    fn exponent_condition_cases() {
        let c = exponent_condition(1.5, 2.0, 2.0, 2, None);
        assert!(c.satisfied && c.equality);
        assert!((c.epsilon - 0.25).abs() < 1e-15);
        assert!((c.q.unwrap() - 4.0).abs() < 1e-12);
        for n in 2..5 {
            let nf = n as f64;
            let np = nf / (nf - 1.0);
            let c = exponent_condition(1.0 + 1.0 / np, nf, nf, n, None);
            assert!(c.satisfied && c.equality, "{c:?}");
        }
        let c = exponent_condition(1.01, 1.01, 2.0, 2, None);
        assert!(!c.satisfied && c.reason.is_some());
        let c = exponent_condition(0.9, 2.0, 2.0, 2, None);
        assert!(!c.satisfied);
    }

    #[test]
    fn constant_pair_admissible() {
        let g = Grid::unit_square(128).unwrap();
        let one = ScalarField::constant(&g, 1.0);
        let rep = admissible_pair_report(&one, &one, 2.0, &CubeFamily::for_grid(&g), &[3.0, 4.0, 6.0], 0).unwrap();
        assert!(rep.all_hold);
        assert_eq!(rep.best_q, Some(3.0));
    }

    #[test]
    fn doubling_of_constant() {
        let g = Grid::unit_square(128).unwrap();
        let e = doubling_estimate(&ScalarField::constant(&g, 2.0), &CubeFamily::for_grid(&g)).unwrap();
        // 2Q ∩ Ω holds at most 4 times the cells of Q, with equality inside
        assert!((e.value - 4.0).abs() < 1e-12 && e.is_finite(), "{:?}", e.per_level_sup);
    }
}
