//! Matrix-weighted norms, the disjoint-cube averaging operator, mollifiers
//! and the operator bounds they satisfy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, SpdField, VectorField};
use crate::grid::{Cube, Grid};
use crate::sum::Kahan;
use crate::weight_char::{derived_scalars, per_cube_matrix_ap};

fn check_shapes(f: &VectorField, w: &SpdField) -> Result<()> {
    if !f.grid.same_shape(&w.grid) || f.comps != w.d {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Per-cell `|W^{1/p} f|^p = ⟨W^{2/p} f, f⟩^{p/2}`.
pub fn weighted_density(f: &VectorField, w: &SpdField, p: f64) -> Result<Vec<f64>> {
    check_shapes(f, w)?;
    let d = w.d;
    let pw = w.power_entries(2.0 / p);
    Ok((0..f.grid.len())
        .map(|i| {
            let v = f.at(i);
            let m = &pw[i * d * d..(i + 1) * d * d];
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += v[a] * m[a * d + b] * v[b];
                }
            }
            q.max(0.0).powf(0.5 * p)
        })
        .collect())
}

fn masked_sum(grid: &Grid, density: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut acc = Kahan::new();
    for i in 0..grid.len() {
        let wt = grid.weight(i);
        if wt > 0.0 && mask.map_or(true, |m| m[i]) {
            acc.add(wt * density[i]);
        }
    }
    acc.value() * grid.cell_volume()
}

/// `∫ |W^{1/p} f|^p`.
pub fn lp_w_norm_pow(f: &VectorField, w: &SpdField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Exponent(format!("L^p_W needs p >= 1, got {p}")));
    }
    Ok(masked_sum(&f.grid, &weighted_density(f, w, p)?, None))
}

/// `‖f‖_{L^p_W}`.
pub fn lp_w_norm(f: &VectorField, w: &SpdField, p: f64) -> Result<f64> {
    Ok(lp_w_norm_pow(f, w, p)?.powf(1.0 / p))
}

fn lp_w_norm_masked(f: &VectorField, w: &SpdField, p: f64, mask: &[bool]) -> Result<f64> {
    Ok(masked_sum(&f.grid, &weighted_density(f, w, p)?, Some(mask)).powf(1.0 / p))
}

/// `∫ |f|^p u` for a scalar weight `u`.
pub fn lp_scalar_norm_pow(f: &VectorField, u: &ScalarField, p: f64) -> Result<f64> {
    if !f.grid.same_shape(&u.grid) {
        return Err(Error::GridMismatch);
    }
    let dens: Vec<f64> = (0..f.grid.len())
        .map(|i| {
            let n2: f64 = f.at(i).iter().map(|x| x * x).sum();
            n2.powf(0.5 * p) * u.values[i]
        })
        .collect();
    Ok(masked_sum(&f.grid, &dens, None))
}

/// `‖f‖_{L^p(u)}`.
pub fn lp_scalar_norm(f: &VectorField, u: &ScalarField, p: f64) -> Result<f64> {
    Ok(lp_scalar_norm_pow(f, u, p)?.powf(1.0 / p))
}

/// Centred differences, one-sided on the edge cells of the grid.
pub fn centered_gradient(u: &ScalarField) -> VectorField {
    let g = &u.grid;
    let n = g.n();
    let mut out = VectorField::zeros(g, n);
    for i in 0..g.len() {
        let mi = g.multi(i);
        for a in 0..n {
            let s = g.stride(a);
            let h = g.h(a);
            let v = if g.cells()[a] < 2 {
                0.0
            } else if mi[a] == 0 {
                (u.values[i + s] - u.values[i]) / h
            } else if mi[a] + 1 == g.cells()[a] {
                (u.values[i] - u.values[i - s]) / h
            } else {
                (u.values[i + s] - u.values[i - s]) / (2.0 * h)
            };
            out.values[i * n + a] = v;
        }
    }
    out
}

/// Cells not on the edge of the grid.
pub fn interior_mask(g: &Grid) -> Vec<bool> {
    (0..g.len()).map(|i| g.multi(i).iter().zip(g.cells()).all(|(&m, &c)| m > 0 && m + 1 < c)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevNorm {
    pub total: f64,
    pub lp_v_part: f64,
    pub grad_part: f64,
}

/// `‖u‖_{L^p(v)} + ‖∇u‖_{L^p_W}` with `v = |W|_op`.
pub fn sobolev_w_norm(u: &ScalarField, w: &SpdField, p: f64) -> Result<SobolevNorm> {
    if !u.grid.same_shape(&w.grid) {
        return Err(Error::GridMismatch);
    }
    let (v, _) = derived_scalars(w);
    let as_vec = VectorField::new(u.grid.clone(), 1, u.values.clone())?;
    let lp_v_part = lp_scalar_norm(&as_vec, &v, p)?;
    let grad_part = lp_w_norm(&centered_gradient(u), w, p)?;
    Ok(SobolevNorm { total: lp_v_part + grad_part, lp_v_part, grad_part })
}

fn cube_cells(g: &Grid, cubes: &[Cube]) -> Result<Vec<Vec<usize>>> {
    let mut owner = vec![usize::MAX; g.len()];
    let mut out = Vec::with_capacity(cubes.len());
    for (k, c) in cubes.iter().enumerate() {
        let mut cells = vec![];
        let mut clash = None;
        g.for_each_in_box(&c.ranges(g), |i| {
            if owner[i] != usize::MAX && clash.is_none() {
                clash = Some(owner[i]);
            }
            owner[i] = k;
            cells.push(i);
        });
        if let Some(j) = clash {
            return Err(Error::Overlap(j, k));
        }
        out.push(cells);
    }
    Ok(out)
}

/// `A_Q f = Σ_Q (⨍_Q f) χ_Q`; zero off the union.
pub fn averaging_apply(f: &VectorField, cubes: &[Cube]) -> Result<VectorField> {
    let g = &f.grid;
    let c = f.comps;
    let mut out = VectorField::zeros(g, c);
    for cells in cube_cells(g, cubes)? {
        let mut m = Kahan::new();
        let mut s = vec![Kahan::new(); c];
        for &i in &cells {
            let wt = g.weight(i);
            if wt > 0.0 {
                m.add(wt);
                for (k, acc) in s.iter_mut().enumerate() {
                    acc.add(wt * f.values[i * c + k]);
                }
            }
        }
        let m = m.value();
        if m <= 0.0 {
            continue;
        }
        let avg: Vec<f64> = s.iter().map(|a| a.value() / m).collect();
        for &i in &cells {
            out.values[i * c..(i + 1) * c].copy_from_slice(&avg);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AveragingBound {
    pub lhs: f64,
    pub rhs: f64,
    /// Largest per-cube discrete `A_p` quantity.
    pub ap_max: f64,
    pub pass: bool,
}

/// `‖A_Q f‖_{L^p_W} ≤ (max_Q [W]_{A_p,Q})^{1/p} ‖f‖_{L^p_W}`.
pub fn averaging_bound_check(f: &VectorField, w: &SpdField, p: f64, cubes: &[Cube]) -> Result<AveragingBound> {
    check_shapes(f, w)?;
    let af = averaging_apply(f, cubes)?;
    let lhs = lp_w_norm(&af, w, p)?;
    let ap_max = per_cube_matrix_ap(w, p, cubes)?.into_iter().flatten().fold(1.0f64, f64::max);
    let rhs = ap_max.powf(1.0 / p) * lp_w_norm(f, w, p)?;
    Ok(AveragingBound { lhs, rhs, ap_max, pass: lhs <= rhs * (1.0 + 1e-9) })
}

/// Seeded disjoint family: each cell of a random dyadic depth is kept with
/// probability 1/2.
pub fn random_disjoint_family(g: &Grid, seed: u64) -> Vec<Cube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.n();
    let min_cells = g.cells().iter().copied().min().unwrap_or(1);
    let max_depth = (usize::BITS - 1 - min_cells.leading_zeros()).saturating_sub(1) as usize;
    let depth = rng.gen_range(0..=max_depth.max(0));
    let per = 1usize << depth;
    let side = g.extent(0) / per as f64;
    let mut out = vec![];
    for t in 0..per.pow(n as u32) {
        if depth > 0 && !rng.gen_bool(0.5) {
            continue;
        }
        let mut rest = t;
        let center = (0..n)
            .map(|a| {
                let j = rest % per;
                rest /= per;
                g.lo()[a] + (j as f64 + 0.5) * side
            })
            .collect();
        out.push(Cube { center, side, level: depth });
    }
    out
}

/// Discrete bump `exp(-1/(1-|x/t|²))` on grid offsets, normalised to mass 1.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub t: f64,
    /// `(offset, weight)` pairs.
    pub taps: Vec<(Vec<i64>, f64)>,
}

impl Kernel {
    pub fn new(g: &Grid, t: f64) -> Result<Kernel> {
        let n = g.n();
        if !(t >= 2.0 * g.min_h() * (1.0 - 1e-12)) {
            return Err(Error::UnderResolved(format!("kernel radius {t} is below two cell widths ({})", 2.0 * g.min_h())));
        }
        let k: Vec<i64> = (0..n).map(|a| (t / g.h(a)).ceil() as i64).collect();
        let total: usize = k.iter().map(|&v| (2 * v + 1) as usize).product();
        let mut taps = vec![];
        let mut sum = Kahan::new();
        for t_idx in 0..total {
            let mut rest = t_idx;
            let off: Vec<i64> = (0..n)
                .map(|a| {
                    let w = (2 * k[a] + 1) as usize;
                    let o = (rest % w) as i64 - k[a];
                    rest /= w;
                    o
                })
                .collect();
            let r2: f64 = off.iter().enumerate().map(|(a, &o)| (o as f64 * g.h(a) / t).powi(2)).sum();
            if r2 < 1.0 {
                let v = (-1.0 / (1.0 - r2)).exp();
                sum.add(v);
                taps.push((off, v));
            }
        }
        let s = sum.value();
        for tap in &mut taps {
            tap.1 /= s;
        }
        Ok(Kernel { t, taps })
    }
}

#[derive(Clone, Debug)]
pub struct Mollified {
    pub field: VectorField,
    /// Cells whose kernel ball stays inside the domain.
    pub trusted: Vec<bool>,
}

/// `φ_t * f` with `f` extended by zero off the domain.
pub fn mollify(f: &VectorField, t: f64) -> Result<Mollified> {
    let g = &f.grid;
    let kern = Kernel::new(g, t)?;
    let n = g.n();
    let c = f.comps;
    let wts = g.weights();
    let mut out = VectorField::zeros(g, c);
    let cells = g.cells().to_vec();
    let mut acc = vec![0.0; c];
    for i in 0..g.len() {
        let mi = g.multi(i);
        acc.iter_mut().for_each(|a| *a = 0.0);
        'tap: for (off, w) in &kern.taps {
            let mut j = 0usize;
            for a in (0..n).rev() {
                let m = mi[a] as i64 + off[a];
                if m < 0 || m >= cells[a] as i64 {
                    continue 'tap;
                }
                j = j * cells[a] + m as usize;
            }
            let wt = wts[j];
            if wt > 0.0 {
                for k in 0..c {
                    acc[k] += w * wt * f.values[j * c + k];
                }
            }
        }
        out.values[i * c..(i + 1) * c].copy_from_slice(&acc);
    }
    let trusted = (0..g.len()).map(|i| g.is_active(i) && g.distance_to_boundary(&g.center(i)) >= t).collect();
    Ok(Mollified { field: out, trusted })
}

pub fn mollify_scalar(f: &ScalarField, t: f64) -> Result<(ScalarField, Vec<bool>)> {
    let m = mollify(&VectorField::new(f.grid.clone(), 1, f.values.clone())?, t)?;
    Ok((ScalarField::new(f.grid.clone(), m.field.values)?, m.trusted))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MollifierRow {
    pub t: f64,
    /// `‖φ_t * f‖ / ‖f‖` over the whole domain.
    pub norm_ratio: f64,
    /// `‖φ_t * f − f‖ / ‖f‖` over trusted cells.
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MollifierTrace {
    pub rows: Vec<MollifierRow>,
    pub sup_ratio: f64,
    /// `sup_ratio / ap^{1/p}` when an `A_p` estimate is given.
    pub observed_c: Option<f64>,
    pub monotone: bool,
    pub final_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Bound and convergence trace over a decreasing `t` sequence; kernels
/// below two cell widths are skipped.
pub fn mollifier_bound_and_convergence(f: &VectorField, w: &SpdField, p: f64, ts: &[f64], ap: Option<f64>, tolerance: f64) -> Result<MollifierTrace> {
    check_shapes(f, w)?;
    if ts.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::Parameter("t sequence must decrease".into()));
    }
    let norm = lp_w_norm(f, w, p)?;
    if !(norm > 0.0) {
        return Err(Error::Parameter("f has zero norm".into()));
    }
    // Deviations are compared on the cells trusted at every t, so the
    // sequence is measured over one fixed set.
    let mut smoothed = vec![];
    for &t in ts {
        match mollify(f, t) {
            Ok(m) => smoothed.push((t, m)),
            Err(Error::UnderResolved(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let common: Vec<bool> = (0..f.grid.len()).map(|i| smoothed.iter().all(|(_, m)| m.trusted[i])).collect();
    let mut rows = vec![];
    for (t, m) in &smoothed {
        let ratio = lp_w_norm(&m.field, w, p)? / norm;
        let diff = m.field.sub(f)?;
        let deviation = lp_w_norm_masked(&diff, w, p, &common)? / norm;
        rows.push(MollifierRow { t: *t, norm_ratio: ratio, deviation });
    }
    if rows.is_empty() {
        return Err(Error::UnderResolved("every t is below two cell widths".into()));
    }
    let sup_ratio = rows.iter().map(|r| r.norm_ratio).fold(f64::NEG_INFINITY, f64::max);
    let monotone = rows.windows(2).all(|r| r[1].deviation <= r[0].deviation);
    let final_deviation = rows.last().map(|r| r.deviation).unwrap_or(f64::NAN);
    Ok(MollifierTrace {
        observed_c: ap.map(|a| sup_ratio / a.powf(1.0 / p)),
        pass: monotone && final_deviation < tolerance && sup_ratio.is_finite(),
        rows,
        sup_ratio,
        monotone,
        final_deviation,
        tolerance,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticitySample {
    pub cell: usize,
    pub xi: Vec<f64>,
    pub lower: f64,
    pub value: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub trials: usize,
    pub violations: Vec<EllipticitySample>,
    /// Sample with the smallest relative margin.
    pub tightest: Option<EllipticitySample>,
    pub pass: bool,
}

/// `w |ξ|^p ≤ |W^{1/p} ξ|^p ≤ v |ξ|^p` at seeded random cells and unit
/// vectors.
pub fn ellipticity_check(w: &SpdField, p: f64, trials: usize, seed: u64) -> Result<EllipticityReport> {
    let g = &w.grid;
    let active: Vec<usize> = (0..g.len()).filter(|&i| g.is_active(i)).collect();
    if active.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let (v, lo) = derived_scalars(w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = vec![];
    let mut tight: Option<(f64, EllipticitySample)> = None;
    for _ in 0..trials {
        let i = active[rng.gen_range(0..active.len())];
        let mut xi: Vec<f64> = (0..w.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nrm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm < 1e-3 {
            continue;
        }
        xi.iter_mut().for_each(|x| *x /= nrm);
        let m = w.power_at(i, 2.0 / p);
        let value = m.apply(&xi).iter().zip(&xi).map(|(a, b)| a * b).sum::<f64>().powf(0.5 * p);
        let s = EllipticitySample { cell: i, xi, lower: lo.values[i], value, upper: v.values[i] };
        let margin = ((value - s.lower) / s.lower).min((s.upper - value) / s.upper);
        if margin < -1e-9 {
            violations.push(s.clone());
        }
        if tight.as_ref().map_or(true, |(t, _)| margin < *t) {
            tight = Some((margin, s));
        }
    }
    Ok(EllipticityReport { trials, pass: violations.is_empty(), violations, tightest: tight.map(|t| t.1) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{sample_family, FamilySpec, Sampled, Sampling};
    use crate::spd::Mat;

    fn ex51(n: usize) -> SpdField {
        let g = Grid::unit_square(n).unwrap();
        match sample_family(&FamilySpec::Example51 { alpha: 0.5, sampling: Sampling::CellCenter }, &g).unwrap() {
            Sampled::Matrix(w) => w,
            _ => unreachable!(),
        }
    }

    fn random_field(g: &Grid, comps: usize, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VectorField::new(g.clone(), comps, (0..g.len() * comps).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_weight_is_plain_norm() {
        let g = Grid::unit_square(16).unwrap();
        let f = random_field(&g, 2, 1);
        let plain: f64 = (0..g.len()).map(|i| f.at(i).iter().map(|x| x * x).sum::<f64>().powf(1.5)).sum::<f64>() * g.cell_volume();
        let w = lp_w_norm(&f, &SpdField::identity(&g, 2), 3.0).unwrap();
        assert!((w - plain.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn triangle_inequality() {
        let w = ex51(16);
        for s in 0..10 {
            let a = random_field(&w.grid, 2, s);
            let b = random_field(&w.grid, 2, s + 100);
            let lhs = lp_w_norm(&a.add(&b).unwrap(), &w, 1.5).unwrap();
            assert!(lhs <= lp_w_norm(&a, &w, 1.5).unwrap() + lp_w_norm(&b, &w, 1.5).unwrap() + 1e-12);
        }
    }

    #[test]
    fn averaging_matches_brute_force_and_is_idempotent() {
        let g = Grid::unit_square(16).unwrap();
        let f = random_field(&g, 2, 3);
        let cubes = random_disjoint_family(&g, 7);
        let a = averaging_apply(&f, &cubes).unwrap();
        let aa = averaging_apply(&a, &cubes).unwrap();
        for (x, y) in a.values.iter().zip(&aa.values) {
            assert!((x - y).abs() < 1e-14);
        }
        for c in &cubes {
            let cells = crate::grid::Region::Cube(c.clone()).cells(&g);
            let mean: f64 = cells.iter().map(|&i| f.at(i)[1]).sum::<f64>() / cells.len() as f64;
            for &i in &cells {
                assert!((a.at(i)[1] - mean).abs() < 1e-12);
            }
        }
        let whole = [Cube { center: vec![0.5, 0.5], side: 1.0, level: 0 }];
        let one = averaging_apply(&f, &whole).unwrap();
        let mean: f64 = (0..g.len()).map(|i| f.at(i)[0]).sum::<f64>() / g.len() as f64;
        assert!(one.values.chunks(2).all(|v| (v[0] - mean).abs() < 1e-12));
    }

    #[test]
    fn overlapping_cubes_rejected() {
        let g = Grid::unit_square(8).unwrap();
        let f = random_field(&g, 1, 0);
        let cubes = [Cube { center: vec![0.5, 0.5], side: 1.0, level: 0 }, Cube { center: vec![0.25, 0.25], side: 0.5, level: 1 }];
        assert_eq!(averaging_apply(&f, &cubes).unwrap_err(), Error::Overlap(0, 1));
    }

    #[test]
    fn averaging_bound_identity_is_jensen() {
        let g = Grid::unit_square(16).unwrap();
        let f = random_field(&g, 2, 5);
        let r = averaging_bound_check(&f, &SpdField::identity(&g, 2), 2.0, &random_disjoint_family(&g, 1)).unwrap();
        assert!((r.ap_max - 1.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn averaging_bound_single_cube_support() {
        let w = ex51(16);
        let g = w.grid.clone();
        let cubes = random_disjoint_family(&g, 11);
        let target = crate::grid::Region::Cube(cubes[0].clone()).cells(&g);
        let mut f = VectorField::zeros(&g, 2);
        for &i in &target {
            f.values[2 * i] = 1.0 + i as f64 * 1e-3;
            f.values[2 * i + 1] = -0.5;
        }
        assert!(averaging_bound_check(&f, &w, 2.0, &cubes).unwrap().pass);
    }

    #[test]
    fn mollify_constant_and_linear() {
        let g = Grid::unit_square(32).unwrap();
        let c = ScalarField::constant(&g, 2.5);
        let (m, trusted) = mollify_scalar(&c, 0.125).unwrap();
        for i in 0..g.len() {
            if trusted[i] {
                assert!((m.values[i] - 2.5).abs() < 1e-13);
            }
        }
        let lin = ScalarField::from_fn(&g, |x| 1.0 + 2.0 * x[0] - x[1]);
        let (m, trusted) = mollify_scalar(&lin, 0.125).unwrap();
        for i in 0..g.len() {
            if trusted[i] {
                assert!((m.values[i] - lin.values[i]).abs() < 1e-10);
            }
        }
        assert!(matches!(mollify_scalar(&c, 0.05), Err(Error::UnderResolved(_))));
    }

    #[test]
    fn mollify_second_order() {
        let g = Grid::unit_square(128).unwrap();
        let f = ScalarField::from_fn(&g, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let err = |t: f64| {
            let (m, trusted) = mollify_scalar(&f, t).unwrap();
            (0..g.len()).filter(|&i| trusted[i]).map(|i| (m.values[i] - f.values[i]).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(0.25), err(0.125));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.3, "{order}");
    }

    #[test]
    fn mollify_commutes_with_differences() {
        let g = Grid::unit_square(48).unwrap();
        let u = ScalarField::from_fn(&g, |x| (2.0 * x[0]).sin() + x[0] * x[1] * x[1]);
        let t = 0.125;
        let (mu, _) = mollify_scalar(&u, t).unwrap();
        let lhs = centered_gradient(&mu);
        let rhs = mollify(&centered_gradient(&u), t).unwrap().field;
        let band = t + 2.0 * g.min_h();
        for i in 0..g.len() {
            if g.distance_to_boundary(&g.center(i)) > band {
                for k in 0..2 {
                    assert!((lhs.at(i)[k] - rhs.at(i)[k]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn identity_mollifier_ratio_at_most_one() {
        let g = Grid::unit_square(32).unwrap();
        let f = random_field(&g, 2, 9);
        let tr = mollifier_bound_and_convergence(&f, &SpdField::identity(&g, 2), 2.0, &[0.25, 0.125, 0.0625], None, 10.0).unwrap();
        assert!(tr.sup_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn ellipticity_equalities_for_diagonal() {
        let g = Grid::unit_square(8).unwrap();
        let w = SpdField::from_fn(&g, |x| Mat::diag(&[1.0 + x[0], 3.0])).unwrap();
        let r = ellipticity_check(&w, 2.0, 500, 2).unwrap();
        assert!(r.pass);
        let v = w.quadratic_form(&[1.0, 0.0], 1.0);
        let (hi, lo) = derived_scalars(&w);
        assert!((0..g.len()).all(|i| v.values[i] >= lo.values[i] - 1e-15 && v.values[i] <= hi.values[i] + 1e-15));
        assert!((0..g.len()).all(|i| (v.values[i] - lo.values[i]).abs() < 1e-15));
    }

    #[test]
    fn sobolev_zero() {
        let w = ex51(8);
        let z = ScalarField::constant(&w.grid, 0.0);
        let s = sobolev_w_norm(&z, &w, 2.0).unwrap();
        assert_eq!((s.total, s.lp_v_part, s.grad_part), (0.0, 0.0, 0.0));
    }
}
