//! Scalar and matrix Muckenhoupt characteristics, reverse Hölder and
//! Fujii–Wilson constants on dyadic cube families.
//!
//! Each estimate is a refinement study. Level `l` works on a grid with
//! `N / 2^{L-l}` cells per axis (re-sampled from the field's generator, or
//! block averaged for data-only fields) and takes the sup over the dyadic
//! cubes of depth `0..=l`. Every level therefore has the same number of
//! cells in its smallest cubes, and a weight outside the class shows up as
//! growth of the per-level sup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ScalarField, SpdField};
use crate::grid::{Cube, Grid};
use crate::maximal::box_maximal;
use crate::spd::{spd_decompose, spectral_norm, Mat};
use crate::sum::Kahan;

/// Cells per cube above which `matrix_ap` block-averages the weight inside
/// the cube before the double sum.
pub const PAIR_CELL_CAP: usize = 128 * 128;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictRule {
    /// Every one of the last `window` growth factors at least this large.
    pub growth_threshold: f64,
    /// Or: the geometric mean of the last `window` growth factors is at
    /// least this ...
    pub mean_growth_threshold: f64,
    /// ... and the increments of the cumulative sup fail to shrink (mean
    /// ratio of successive increments at least this).
    pub decay_threshold: f64,
    pub window: usize,
}

impl Default for VerdictRule {
    fn default() -> Self {
        VerdictRule { growth_threshold: 1.5, mean_growth_threshold: 1.02, decay_threshold: 0.85, window: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Finite,
    Diverging,
}

/// Increments below this fraction of the current sup count as settled.
const SETTLED: f64 = 1e-9;

impl VerdictRule {
    pub fn judge(&self, per_level: &[f64]) -> Verdict {
        if per_level.iter().any(|v| !v.is_finite()) {
            return Verdict::Diverging;
        }
        let f = growth_factors(per_level);
        if f.len() < self.window {
            return Verdict::Finite;
        }
        let last_f = &f[f.len() - self.window..];
        if last_f.iter().all(|&g| g >= self.growth_threshold) {
            return Verdict::Diverging;
        }
        let mean = (last_f.iter().map(|g| g.ln()).sum::<f64>() / self.window as f64).exp();
        if mean < self.mean_growth_threshold {
            return Verdict::Finite;
        }
        // a converging sup has increments decaying geometrically (h^β
        // convergence); logarithmic or power divergence does not
        let d: Vec<f64> = per_level.windows(2).map(|w| w[1] - w[0]).collect();
        let last = *per_level.last().unwrap_or(&0.0);
        match d.last() {
            None => return Verdict::Finite,
            Some(&x) if x <= SETTLED * last.abs() => return Verdict::Finite,
            _ => {}
        }
        if d.len() < 2 {
            return Verdict::Finite;
        }
        let k = self.window.min(d.len() - 1);
        let (first, end) = (d[d.len() - 1 - k], d[d.len() - 1]);
        if first <= SETTLED * last.abs() {
            // stalled, then moved again
            return Verdict::Diverging;
        }
        if (end / first).powf(1.0 / k as f64) >= self.decay_threshold {
            Verdict::Diverging
        } else {
            Verdict::Finite
        }
    }
}

pub fn growth_factors(per_level: &[f64]) -> Vec<f64> {
    per_level.windows(2).map(|w| w[1] / w[0]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeFamily {
    pub max_level: usize,
    /// Include the 3^n − 1 translates of each dyadic grid by thirds of a side.
    #[serde(default)]
    pub shifted: bool,
    /// Re-sample per level (refinement study) instead of evaluating every
    /// level on the input grid.
    #[serde(default = "yes")]
    pub refine: bool,
    #[serde(default)]
    pub rule: VerdictRule,
}

fn yes() -> bool {
    true
}

impl CubeFamily {
    /// Deepest level whose cubes still hold at least 4 cells per axis.
    pub fn for_grid(grid: &Grid) -> Self {
        let n = *grid.cells().iter().min().unwrap_or(&4);
        let l = if n >= 4 { (n / 4).ilog2() as usize } else { 0 };
        CubeFamily::with_levels(l)
    }

    pub fn with_levels(max_level: usize) -> Self {
        CubeFamily { max_level, shifted: false, refine: true, rule: VerdictRule::default() }
    }

    pub fn shifted(mut self, on: bool) -> Self {
        self.shifted = on;
        self
    }

    pub fn fixed_grid(mut self) -> Self {
        self.refine = false;
        self
    }

    pub fn with_rule(mut self, rule: VerdictRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let e0 = grid.extent(0);
        if (1..grid.n()).any(|a| (grid.extent(a) - e0).abs() > 1e-12 * e0) {
            return Err(Error::Dimension("cube families need a cubical domain".into()));
        }
        Ok(())
    }

    /// Cells per axis of the working grid at `level`.
    pub fn level_cells(&self, grid: &Grid, level: usize, analytic: bool) -> Vec<usize> {
        if !self.refine || level >= self.max_level {
            return grid.cells().to_vec();
        }
        let shift = self.max_level - level;
        grid.cells()
            .iter()
            .map(|&n| {
                let c = if shift >= usize::BITS as usize { 0 } else { n >> shift };
                if analytic {
                    c.max(2.min(n))
                } else {
                    c.max(1)
                }
            })
            .collect()
    }

    /// Cubes of one dyadic depth (plus translates when `shifted`).
    pub fn cubes_at_depth(&self, grid: &Grid, depth: usize) -> Vec<Cube> {
        let n = grid.n();
        let side = grid.extent(0) / (1u64 << depth) as f64;
        let per_axis = 1usize << depth;
        let mut out = Vec::new();
        let offsets: Vec<Vec<usize>> = if self.shifted && depth > 0 {
            (0..3usize.pow(n as u32))
                .map(|mut k| {
                    (0..n)
                        .map(|_| {
                            let o = k % 3;
                            k /= 3;
                            o
                        })
                        .collect()
                })
                .collect()
        } else {
            vec![vec![0; n]]
        };
        for off in &offsets {
            let shifted = off.iter().any(|&o| o > 0);
            let (j0, j1) = if shifted { (-1i64, per_axis as i64) } else { (0, per_axis as i64) };
            let count = (j1 - j0) as usize;
            let total = count.pow(n as u32);
            for t in 0..total {
                let mut rest = t;
                let mut center = vec![0.0; n];
                for a in 0..n {
                    let j = j0 + (rest % count) as i64;
                    rest /= count;
                    center[a] = grid.lo()[a] + (j as f64 + off[a] as f64 / 3.0 + 0.5) * side;
                }
                let cube = Cube { center, side, level: depth };
                let r = cube.ranges(grid);
                if r.iter().all(|&(a, b)| b > a) {
                    out.push(cube);
                }
            }
        }
        out
    }

    /// All cubes of depth `0..=level` on `grid`.
    pub fn cubes_upto(&self, grid: &Grid, level: usize) -> Vec<Cube> {
        (0..=level).flat_map(|d| self.cubes_at_depth(grid, d)).collect()
    }

    /// The full family on the input grid (the finest level).
    pub fn cubes(&self, grid: &Grid) -> Vec<Cube> {
        self.cubes_upto(grid, self.max_level)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicEstimate {
    pub kind: String,
    #[serde(rename = "characteristic")]
    pub value: f64,
    /// Cumulative sup up to each level (nondecreasing).
    pub per_level_sup: Vec<f64>,
    /// Sup of each level on its own.
    pub level_sup: Vec<f64>,
    pub growth: Vec<f64>,
    pub verdict: Verdict,
    pub argmax_cube: Option<Cube>,
    pub exponents: Vec<f64>,
    #[serde(rename = "family_descriptor")]
    pub family: CubeFamily,
}

impl CharacteristicEstimate {
    pub fn is_finite(&self) -> bool {
        self.verdict == Verdict::Finite
    }
}

/// Per-level sup of `eval` over the family. `eval(level, working_grid,
/// cubes)` returns the level's sup and maximising cube.
pub(crate) fn refinement_study(
    kind: &str,
    exponents: Vec<f64>,
    family: &CubeFamily,
    grid: &Grid,
    analytic: bool,
    mut eval: impl FnMut(&Grid, &[Cube]) -> Result<(f64, Option<Cube>)>,
) -> Result<CharacteristicEstimate> {
    family.validate(grid)?;
    let mut level_sup = Vec::with_capacity(family.max_level + 1);
    let mut per_level = Vec::with_capacity(family.max_level + 1);
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for level in 0..=family.max_level {
        let cells = family.level_cells(grid, level, analytic);
        let g = if cells == grid.cells() { grid.clone() } else { grid.resized(cells) };
        let cubes = family.cubes_upto(&g, level);
        let (s, c) = eval(&g, &cubes)?;
        level_sup.push(s);
        if s > best || s.is_nan() {
            best = s;
            arg = c;
        }
        per_level.push(best);
    }
    let verdict = family.rule.judge(&per_level);
    Ok(CharacteristicEstimate {
        kind: kind.into(),
        value: best,
        growth: growth_factors(&per_level),
        per_level_sup: per_level,
        level_sup,
        verdict,
        argmax_cube: arg,
        exponents,
        family: family.clone(),
    })
}

pub(crate) fn level_scalar(w: &ScalarField, g: &Grid) -> Result<ScalarField> {
    if g.same_shape(&w.grid) && g.domain() == w.grid.domain() {
        return Ok(w.clone());
    }
    let f = w.on_grid(g)?;
    f.check_weight()?;
    Ok(f)
}

pub(crate) fn sup_over<'a>(cubes: &'a [Cube], mut f: impl FnMut(&'a Cube) -> Option<f64>) -> (f64, Option<Cube>) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = None;
    for c in cubes {
        if let Some(v) = f(c) {
            if v > best || (v.is_nan() && !best.is_nan()) {
                best = v;
                arg = Some(c.clone());
            }
        }
    }
    (best, arg)
}

/// Weighted sums over the domain cells of a cube: `(Σ wt, Σ wt·a_k ...)`.
pub(crate) fn cube_sums<const K: usize>(g: &Grid, wt: &[f64], arrays: [&[f64]; K], cube: &Cube) -> (f64, [f64; K]) {
    let mut m = Kahan::new();
    let mut s = [Kahan::new(); K];
    g.for_each_in_box(&cube.ranges(g), |i| {
        let w = wt[i];
        if w > 0.0 {
            m.add(w);
            for k in 0..K {
                s[k].add(w * arrays[k][i]);
            }
        }
    });
    (m.value(), s.map(|k| k.value()))
}

/// `[w]_{A_p}` for `p > 1`.
pub fn scalar_ap(w: &ScalarField, p: f64, family: &CubeFamily) -> Result<CharacteristicEstimate> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::Exponent(format!("scalar_ap needs p > 1 (use scalar_a1 for p = 1), got {p}")));
    }
    w.check_weight()?;
    let dual = -1.0 / (p - 1.0);
    refinement_study("A_p", vec![p], family, &w.grid, w.generator().is_some(), |g, cubes| {
        let f = level_scalar(w, g)?;
        let wt = g.weights();
        let a = f.values.clone();
        let b: Vec<f64> = f.values.iter().map(|v| v.powf(dual)).collect();
        Ok(sup_over(cubes, |c| {
            let (m, [s1, s2]) = cube_sums(g, &wt, [&a, &b], c);
            (m > 0.0).then(|| (s1 / m) * (s2 / m).powf(p - 1.0))
        }))
    })
}

/// `[w]_{A_1}`: average over the minimum at the cell centres.
pub fn scalar_a1(w: &ScalarField, family: &CubeFamily) -> Result<CharacteristicEstimate> {
    w.check_weight()?;
    refinement_study("A_1", vec![1.0], family, &w.grid, w.generator().is_some(), |g, cubes| {
        let f = level_scalar(w, g)?;
        let wt = g.weights();
        Ok(sup_over(cubes, |c| {
            let (m, [s]) = cube_sums(g, &wt, [&f.values], c);
            let mut min = f64::INFINITY;
            g.for_each_in_box(&c.ranges(g), |i| {
                if wt[i] > 0.0 {
                    min = min.min(f.values[i]);
                }
            });
            (m > 0.0).then(|| (s / m) / min)
        }))
    })
}

/// `[w]_{RH_s}`.
pub fn reverse_holder(w: &ScalarField, s: f64, family: &CubeFamily) -> Result<CharacteristicEstimate> {
    if !(s > 1.0) {
        return Err(Error::Exponent(format!("reverse Hölder needs s > 1, got {s}")));
    }
    w.check_weight()?;
    refinement_study("RH_s", vec![s], family, &w.grid, w.generator().is_some(), |g, cubes| {
        let f = level_scalar(w, g)?;
        let wt = g.weights();
        let ws: Vec<f64> = f.values.iter().map(|v| v.powf(s)).collect();
        Ok(sup_over(cubes, |c| {
            let (m, [s1, ss]) = cube_sums(g, &wt, [&f.values, &ws], c);
            (m > 0.0).then(|| (ss / m).powf(1.0 / s) / (s1 / m))
        }))
    })
}

/// Fujii–Wilson `[w]_{A_∞}`: `sup_Q w(Q)^{-1} ∫_Q M(wχ_Q)` with the local
/// maximal function over sub-cubes of `Q`.
pub fn a_infinity(w: &ScalarField, family: &CubeFamily) -> Result<CharacteristicEstimate> {
    w.check_weight()?;
    refinement_study("A_inf", vec![], family, &w.grid, w.generator().is_some(), |g, cubes| {
        let f = level_scalar(w, g)?;
        let wt = g.weights();
        Ok(sup_over(cubes, |c| {
            let ranges = c.ranges(g);
            let dims: Vec<usize> = ranges.iter().map(|r| r.1 - r.0).collect();
            let mut vals = Vec::with_capacity(dims.iter().product());
            let mut wts = Vec::with_capacity(vals.capacity());
            g.for_each_in_box(&ranges, |i| {
                vals.push(f.values[i]);
                wts.push(wt[i]);
            });
            let m = box_maximal(&vals, &wts, &dims);
            let mut num = Kahan::new();
            let mut den = Kahan::new();
            for k in 0..vals.len() {
                if wts[k] > 0.0 {
                    num.add(wts[k] * m[k]);
                    den.add(wts[k] * vals[k]);
                }
            }
            (den.value() > 0.0).then(|| num.value() / den.value())
        }))
    })
}

/// `s = 1 + 1/(2^{n+11} [w]_{A_∞})`.
pub fn sharp_rh_exponent(a_inf: f64, n: usize) -> Result<f64> {
    if !(a_inf >= 1.0) {
        return Err(Error::InvalidConstant(format!("A_inf constant must be >= 1, got {a_inf}")));
    }
    Ok(1.0 + 1.0 / (2f64.powi(n as i32 + 11) * a_inf))
}

/// Per-cell data for the pair kernel of `matrix_ap`.
struct PairData {
    d: usize,
    wt: Vec<f64>,
    /// `W^{2/p}` (`W^2` for p = 1) entries, used at the outer point.
    pm: Vec<f64>,
    /// `W^{-2/p}` (`W^{-2}` for p = 1) entries, used at the inner point.
    qm: Vec<f64>,
    det_p: Vec<f64>,
    det_q: Vec<f64>,
}

impl PairData {
    fn build(wt: Vec<f64>, eig: impl Fn(usize) -> crate::spd::Eigen, len: usize, d: usize, sp: f64, sq: f64) -> PairData {
        let dd = d * d;
        let mut pm = Vec::with_capacity(len * dd);
        let mut qm = Vec::with_capacity(len * dd);
        let mut det_p = Vec::with_capacity(len);
        let mut det_q = Vec::with_capacity(len);
        for i in 0..len {
            if wt[i] <= 0.0 {
                pm.extend(Mat::identity(d).a);
                qm.extend(Mat::identity(d).a);
                det_p.push(1.0);
                det_q.push(1.0);
                continue;
            }
            let e = eig(i);
            pm.extend(e.map(|l| l.powf(sp)).a);
            qm.extend(e.map(|l| l.powf(sq)).a);
            det_p.push(e.values.iter().map(|l| l.powf(sp)).product());
            det_q.push(e.values.iter().map(|l| l.powf(sq)).product());
        }
        PairData { d, wt, pm, qm, det_p, det_q }
    }

    /// `λ_max(P_x Q_y)`.
    #[inline]
    fn lmax(&self, x: usize, y: usize) -> f64 {
        match self.d {
            1 => self.pm[x] * self.qm[y],
            2 => {
                let p = &self.pm[4 * x..4 * x + 4];
                let q = &self.qm[4 * y..4 * y + 4];
                let tr = p[0] * q[0] + 2.0 * p[1] * q[1] + p[3] * q[3];
                let det = self.det_p[x] * self.det_q[y];
                let h = 0.5 * tr;
                h + (h * h - det).max(0.0).sqrt()
            }
            d => {
                let dd = d * d;
                // λ_max(P Q) = |P^{1/2} Q^{1/2}|², computed from the explicit product
                let pe = spd_decompose(&Mat { d, a: self.pm[x * dd..(x + 1) * dd].to_vec() }).expect("spd");
                let qe = spd_decompose(&Mat { d, a: self.qm[y * dd..(y + 1) * dd].to_vec() }).expect("spd");
                let a = pe.map(|l| l.max(0.0).sqrt());
                let b = qe.map(|l| l.max(0.0).sqrt());
                spectral_norm(&a.mul(&b)).powi(2)
            }
        }
    }
}

/// Block-average a sub-box of an SPD field by `factor` per axis.
fn coarsen_box(w: &SpdField, g: &Grid, ranges: &[(usize, usize)], factor: usize) -> (Vec<f64>, Vec<Mat>) {
    let n = g.n();
    let d = w.d;
    let dims: Vec<usize> = ranges.iter().map(|r| (r.1 - r.0).div_ceil(factor)).collect();
    let len: usize = dims.iter().product();
    let mut wsum = vec![0.0; len];
    let mut msum = vec![Mat::zeros(d); len];
    let mut cnt = vec![0usize; len];
    let mut x = vec![0usize; n];
    g.for_each_in_box(ranges, |i| {
        let mi = g.multi(i);
        for a in 0..n {
            x[a] = (mi[a] - ranges[a].0) / factor;
        }
        let mut k = 0;
        for a in (0..n).rev() {
            k = k * dims[a] + x[a];
        }
        let wt = g.weight(i);
        cnt[k] += 1;
        if wt > 0.0 {
            wsum[k] += wt;
            let m = w.matrix_slice(i);
            for (t, v) in msum[k].a.iter_mut().zip(m) {
                *t += wt * v;
            }
        }
    });
    let mut wts = Vec::with_capacity(len);
    let mut mats = Vec::with_capacity(len);
    for k in 0..len {
        if wsum[k] > 0.0 {
            mats.push(msum[k].scale(1.0 / wsum[k]));
            wts.push(wsum[k] / cnt[k] as f64);
        } else {
            mats.push(Mat::identity(d));
            wts.push(0.0);
        }
    }
    (wts, mats)
}

/// Discrete `[W]_{A_p}` of one cube from prepared pair data.
fn cube_matrix_ap(data: &PairData, cells: &[usize], p: f64) -> Option<f64> {
    let mut m = Kahan::new();
    for &i in cells {
        m.add(data.wt[i]);
    }
    let m = m.value();
    if m <= 0.0 {
        return None;
    }
    if p == 1.0 {
        let mut best = f64::NEG_INFINITY;
        for &x in cells {
            if data.wt[x] <= 0.0 {
                continue;
            }
            let mut s = Kahan::new();
            for &y in cells {
                if data.wt[y] > 0.0 {
                    s.add(data.wt[y] * data.lmax(y, x).sqrt());
                }
            }
            best = best.max(s.value() / m);
        }
        return Some(best);
    }
    let pp = p / (p - 1.0);
    let half = 0.5 * pp;
    let outer = p / pp;
    let mut total = Kahan::new();
    for &x in cells {
        if data.wt[x] <= 0.0 {
            continue;
        }
        let mut s = Kahan::new();
        for &y in cells {
            let wy = data.wt[y];
            if wy > 0.0 {
                let l = data.lmax(x, y);
                s.add(wy * if half == 1.0 { l } else { l.powf(half) });
            }
        }
        total.add(data.wt[x] * (s.value() / m).powf(outer));
    }
    Some(total.value() / m)
}

/// Discrete `[W]_{A_p}` over the family; `p = 1` uses the esssup form.
pub fn matrix_ap(w: &SpdField, p: f64, family: &CubeFamily) -> Result<CharacteristicEstimate> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Exponent(format!("matrix_ap needs p >= 1, got {p}")));
    }
    let (sp, sq) = if p == 1.0 { (2.0, -2.0) } else { (2.0 / p, -2.0 / p) };
    refinement_study("matrix A_p", vec![p], family, &w.grid, w.generator().is_some(), |g, cubes| {
        let f = if g.same_shape(&w.grid) && g.domain() == w.grid.domain() { w.clone() } else { w.on_grid(g)? };
        let n = g.n();
        let fine = PairData::build(g.weights(), |i| f.eigen(i), g.len(), f.d, sp, sq);
        Ok(sup_over(cubes, |c| {
            let ranges = c.ranges(g);
            let count: usize = ranges.iter().map(|r| r.1 - r.0).product();
            if count <= PAIR_CELL_CAP {
                let mut cells = Vec::with_capacity(count);
                g.for_each_in_box(&ranges, |i| cells.push(i));
                cube_matrix_ap(&fine, &cells, p)
            } else {
                let mut factor: usize = 2;
                while count.div_ceil(factor.pow(n as u32)) > PAIR_CELL_CAP {
                    factor *= 2;
                }
                let (wts, mats) = coarsen_box(&f, g, &ranges, factor);
                let len = mats.len();
                let data = PairData::build(wts, |k| spd_decompose(&mats[k]).expect("averaged SPD"), len, f.d, sp, sq);
                let cells: Vec<usize> = (0..len).collect();
                cube_matrix_ap(&data, &cells, p)
            }
        }))
    })
}

/// Exact discrete `A_p` quantity of each cube on the field's own grid
/// (no refinement, no block averaging); `None` for cubes without domain
/// cells.
pub fn per_cube_matrix_ap(w: &SpdField, p: f64, cubes: &[Cube]) -> Result<Vec<Option<f64>>> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::Exponent(format!("matrix A_p needs p >= 1, got {p}")));
    }
    let (sp, sq) = if p == 1.0 { (2.0, -2.0) } else { (2.0 / p, -2.0 / p) };
    let g = &w.grid;
    let data = PairData::build(g.weights(), |i| w.eigen(i), g.len(), w.d, sp, sq);
    Ok(cubes
        .iter()
        .map(|c| {
            let mut cells = vec![];
            g.for_each_in_box(&c.ranges(g), |i| cells.push(i));
            cube_matrix_ap(&data, &cells, p)
        })
        .collect())
}

/// `v = |W|_op`, `w = |W^{-1}|_op^{-1}` (largest and smallest eigenvalue).
pub fn derived_scalars(w: &SpdField) -> (ScalarField, ScalarField) {
    let v = w.eigen_scalar(|l| l[0]);
    let lo = w.eigen_scalar(|l| l[l.len() - 1]);
    (v, lo)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DualityReport {
    pub p: f64,
    pub dual_p: f64,
    pub primal: CharacteristicEstimate,
    pub dual: CharacteristicEstimate,
    pub agree: bool,
}

/// `[W]_{A_p}` against `[W^{-p'/p}]_{A_{p'}}`; verdicts must agree.
pub fn duality_check(w: &SpdField, p: f64, family: &CubeFamily) -> Result<DualityReport> {
    if !(p > 1.0) {
        return Err(Error::Exponent(format!("duality needs p > 1, got {p}")));
    }
    let pp = p / (p - 1.0);
    let primal = matrix_ap(w, p, family)?;
    let dual_w = w.power_field(-pp / p)?;
    let dual = matrix_ap(&dual_w, pp, family)?;
    Ok(DualityReport { p, dual_p: pp, agree: primal.verdict == dual.verdict, primal, dual })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub angle: f64,
    pub forward: f64,
    pub inverse: f64,
    pub forward_verdict: Verdict,
    pub inverse_verdict: Verdict,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LauzonTreilReport {
    pub directions: Vec<DirectionEstimate>,
    pub sup: f64,
    pub worst_angle: f64,
    pub verdict: Verdict,
}

/// Scalar `A_2` of `⟨W v, v⟩` and `⟨W^{-1} v, v⟩` over evenly spaced unit
/// vectors on the half circle.
pub fn lauzon_treil_a2(w: &SpdField, family: &CubeFamily, directions: usize) -> Result<LauzonTreilReport> {
    if w.d != 2 {
        return Err(Error::Dimension(format!("criterion is two-dimensional, matrix size is {}", w.d)));
    }
    if directions < 16 {
        return Err(Error::Parameter(format!("need at least 16 directions, got {directions}")));
    }
    let mut out = Vec::with_capacity(directions);
    let mut sup = f64::NEG_INFINITY;
    let mut worst = 0.0;
    let mut verdict = Verdict::Finite;
    for k in 0..directions {
        let angle = std::f64::consts::PI * k as f64 / directions as f64;
        let v = [angle.cos(), angle.sin()];
        let fwd = scalar_ap(&w.quadratic_form(&v, 1.0), 2.0, family)?;
        let inv = scalar_ap(&w.quadratic_form(&v, -1.0), 2.0, family)?;
        let m = fwd.value.max(inv.value);
        if m > sup {
            sup = m;
            worst = angle;
        }
        if !fwd.is_finite() || !inv.is_finite() {
            verdict = Verdict::Diverging;
        }
        out.push(DirectionEstimate {
            angle,
            forward: fwd.value,
            inverse: inv.value,
            forward_verdict: fwd.verdict,
            inverse_verdict: inv.verdict,
        });
    }
    Ok(LauzonTreilReport { directions: out, sup, worst_angle: worst, verdict })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InclusionReport {
    pub trials: usize,
    pub ap: f64,
    pub rh: f64,
    /// max over trials of LHS/RHS for `|E|/|Q| ≤ [w]_{A_p}^{1/p} (w(E)/w(Q))^{1/p}`
    pub max_ratio_ap: f64,
    /// max over trials of LHS/RHS for `w(E)/w(Q) ≤ [w]_{RH_s} (|E|/|Q|)^{1/s'}`
    pub max_ratio_rh: f64,
    pub pass: bool,
}

/// Random cell subsets `E` of random family cubes `Q` against the two
/// set-size inequalities, using characteristics from the same family.
pub fn set_inclusion_checks(w: &ScalarField, p: f64, s: f64, family: &CubeFamily, trials: usize, seed: u64) -> Result<InclusionReport> {
    let ap = scalar_ap(w, p, family)?;
    let rh = reverse_holder(w, s, family)?;
    if !ap.is_finite() || !rh.is_finite() {
        return Err(Error::Hypothesis("A_p and RH_s estimates must be finite".into()));
    }
    let g = &w.grid;
    let cubes = family.cubes(g);
    let wt = g.weights();
    let sp = s / (s - 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ap: f64 = 0.0;
    let mut max_rh: f64 = 0.0;
    for t in 0..trials {
        let q = &cubes[rng.gen_range(0..cubes.len())];
        let density: f64 = if t == 0 { 1.0 } else { rng.gen_range(0.05..1.0) };
        let (mut mq, mut me, mut wq, mut we) = (Kahan::new(), Kahan::new(), Kahan::new(), Kahan::new());
        let mut any = false;
        let mut first = None;
        g.for_each_in_box(&q.ranges(g), |i| {
            if wt[i] <= 0.0 {
                return;
            }
            first.get_or_insert(i);
            mq.add(wt[i]);
            wq.add(wt[i] * w.values[i]);
            if density >= 1.0 || rng.gen::<f64>() < density {
                any = true;
                me.add(wt[i]);
                we.add(wt[i] * w.values[i]);
            }
        });
        if !any {
            if let Some(i) = first {
                me.add(wt[i]);
                we.add(wt[i] * w.values[i]);
            }
        }
        let e_frac = me.value() / mq.value();
        let w_frac = we.value() / wq.value();
        max_ap = max_ap.max(e_frac / (ap.value.powf(1.0 / p) * w_frac.powf(1.0 / p)));
        max_rh = max_rh.max(w_frac / (rh.value * e_frac.powf(1.0 / sp)));
    }
    Ok(InclusionReport {
        trials,
        ap: ap.value,
        rh: rh.value,
        max_ratio_ap: max_ap,
        max_ratio_rh: max_rh,
        pass: max_ap <= 1.0 + 1e-12 && max_rh <= 1.0 + 1e-12,
    })
}

/// Rung offsets for `A_q^* = ∩_{t>q} A_t`, coarsest first.
pub const STAR_LADDER: [f64; 4] = [0.5, 0.25, 0.1, 0.05];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LadderRung {
    pub exponent: f64,
    pub estimate: CharacteristicEstimate,
}

/// `scalar_ap` at `q + δ` for each `δ` in [`STAR_LADDER`]. Finitely many rungs
/// cannot certify membership in the intersection; the verdicts are reported
/// per rung.
pub fn a_star_ladder(w: &ScalarField, q: f64, family: &CubeFamily) -> Result<Vec<LadderRung>> {
    if !(q >= 1.0) || !q.is_finite() {
        return Err(Error::Exponent(format!("A_q^* needs q >= 1, got {q}")));
    }
    STAR_LADDER
        .iter()
        .map(|d| Ok(LadderRung { exponent: q + d, estimate: scalar_ap(w, q + d, family)? }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{ball_map_pair, product_power_gen, Sampling};
    use std::sync::Arc;

    fn power_1d(n: usize, beta: f64) -> ScalarField {
        let g = Grid::unit_interval(n).unwrap();
        ScalarField::from_gen(&g, product_power_gen(vec![beta], Sampling::CellCenter))
    }

    #[test]
    fn star_ladder_rungs() {
        let w = power_1d(1024, 0.2);
        let fam = CubeFamily::for_grid(&w.grid);
        let rungs = a_star_ladder(&w, 1.0, &fam).unwrap();
        assert_eq!(rungs.iter().map(|r| r.exponent).collect::<Vec<_>>(), vec![1.5, 1.25, 1.1, 1.05]);
        // x^{0.2} is in A_t exactly for t > 1.2
        assert_eq!(rungs[0].estimate.verdict, Verdict::Finite);
        assert_eq!(rungs[3].estimate.verdict, Verdict::Diverging);
        assert!(a_star_ladder(&w, 0.5, &fam).is_err());
    }

    #[test]
    fn verdict_rule() {
        let r = VerdictRule::default();
        assert_eq!(r.judge(&[1.0, 1.0, 1.0, 1.0]), Verdict::Finite);
        assert_eq!(r.judge(&[1.0, 2.0, 4.0, 8.0]), Verdict::Diverging);
        assert_eq!(r.judge(&[1.0, 1.1, 1.21, 1.331]), Verdict::Diverging);
        assert_eq!(r.judge(&[1.0, 1.001, 1.002, 1.003]), Verdict::Finite);
        // fast but converging: increments halve
        assert_eq!(r.judge(&[1.0, 1.2, 1.3, 1.35, 1.375]), Verdict::Finite);
        // steady log-like growth
        assert_eq!(r.judge(&[1.0, 1.1, 1.2, 1.3, 1.4]), Verdict::Diverging);
        assert_eq!(r.judge(&[1.0, 2.0]), Verdict::Finite);
        assert_eq!(r.judge(&[1.0, f64::INFINITY]), Verdict::Diverging);
    }

    #[test]
    fn family_tiles_each_depth() {
        let g = Grid::unit_square(16).unwrap();
        let f = CubeFamily::for_grid(&g);
        assert_eq!(f.max_level, 2);
        for depth in 0..=2 {
            let mut seen = vec![0; g.len()];
            for c in f.cubes_at_depth(&g, depth) {
                g.for_each_in_box(&c.ranges(&g), |i| seen[i] += 1);
            }
            assert!(seen.iter().all(|&k| k == 1));
        }
        let s = f.clone().shifted(true);
        assert!(s.cubes(&g).len() > f.cubes(&g).len());
    }

    #[test]
    fn constants_give_one() {
        let g = Grid::unit_square(32).unwrap();
        let f = CubeFamily::for_grid(&g);
        let w = ScalarField::constant(&g, 3.7);
        for p in [1.5, 2.0, 3.0] {
            assert!((scalar_ap(&w, p, &f).unwrap().value - 1.0).abs() < 1e-12);
        }
        assert!((scalar_a1(&w, &f).unwrap().value - 1.0).abs() < 1e-12);
        assert!((reverse_holder(&w, 2.0, &f).unwrap().value - 1.0).abs() < 1e-12);
        assert!((a_infinity(&w, &f).unwrap().value - 1.0).abs() < 1e-12);
        let id = SpdField::identity(&g, 2);
        for p in [1.0, 1.5, 2.0, 3.0] {
            assert!((matrix_ap(&id, p, &f).unwrap().value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn p_at_most_one_rejected() {
        let g = Grid::unit_interval(8).unwrap();
        let w = ScalarField::constant(&g, 1.0);
        assert!(matches!(scalar_ap(&w, 1.0, &CubeFamily::for_grid(&g)), Err(Error::Exponent(_))));
        assert!(matches!(sharp_rh_exponent(0.5, 2), Err(Error::InvalidConstant(_))));
    }

    #[test]
    fn sqrt_weight_matches_enumeration() {
        let levels = 12;
        let n = 4 << levels;
        let w = power_1d(n, 0.5);
        let fam = CubeFamily::with_levels(levels);
        let est = scalar_ap(&w, 2.0, &fam).unwrap();
        assert_eq!(est.verdict, Verdict::Finite);
        // independent enumeration: level l samples N/2^{L-l} centres and
        // visits every dyadic interval of depth <= l
        let mut best: f64 = 0.0;
        for l in 0..=levels {
            let m = n >> (levels - l);
            let xs: Vec<f64> = (0..m).map(|i| ((i as f64 + 0.5) / m as f64).sqrt()).collect();
            for d in 0..=l {
                let len = m >> d;
                for k in 0..(1usize << d) {
                    let seg = &xs[k * len..(k + 1) * len];
                    let a: f64 = seg.iter().sum::<f64>() / len as f64;
                    let b: f64 = seg.iter().map(|v| 1.0 / v).sum::<f64>() / len as f64;
                    best = best.max(a * b);
                }
            }
        }
        assert!((est.value - best).abs() <= 1e-12 * best, "{} vs {best}", est.value);
    }

    #[test]
    fn a1_power_weights() {
        let fam = CubeFamily::with_levels(8);
        let ok = scalar_a1(&power_1d(4 << 8, -0.5), &fam).unwrap();
        assert_eq!(ok.verdict, Verdict::Finite, "{:?}", ok.growth);
        // the continuum A_1 constant of x^{-1/2} is 2 (mean over (0,t) is 2 t^{-1/2})
        assert!(ok.value <= 2.0 && ok.value > 1.7, "{}", ok.value);
        let bad = scalar_a1(&power_1d(4 << 8, -1.5), &fam).unwrap();
        assert_eq!(bad.verdict, Verdict::Diverging, "{:?}", bad.growth);
    }

    #[test]
    fn reverse_holder_power_weights() {
        let fam = CubeFamily::with_levels(8);
        let w = power_1d(4 << 8, -0.5);
        let ok = reverse_holder(&w, 1.5, &fam).unwrap();
        assert_eq!(ok.verdict, Verdict::Finite, "{:?}", ok.growth);
        let bad = reverse_holder(&w, 2.5, &fam).unwrap();
        assert_eq!(bad.verdict, Verdict::Diverging, "{:?}", bad.growth);
    }

    #[test]
    fn a_infinity_below_a2() {
        let w = power_1d(4 << 8, 0.5);
        let fam = CubeFamily::with_levels(8);
        let ainf = a_infinity(&w, &fam).unwrap();
        let a2 = scalar_ap(&w, 2.0, &fam).unwrap();
        assert!(ainf.value <= a2.value, "{} {}", ainf.value, a2.value);
        let s = sharp_rh_exponent(ainf.value, 1).unwrap();
        assert_eq!(reverse_holder(&w, s, &fam).unwrap().verdict, Verdict::Finite);
    }

    #[test]
    fn sharp_exponent_values() {
        assert_eq!(sharp_rh_exponent(1.0, 2).unwrap(), 1.0 + 2f64.powi(-13));
        assert_eq!(sharp_rh_exponent(2.0, 2).unwrap(), 1.0 + 1.0 / 16384.0);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let s = sharp_rh_exponent(2f64.powi(k), 2).unwrap();
            assert!(s < prev && s > 1.0);
            prev = s;
        }
    }

    #[test]
    fn matrix_d1_equals_scalar() {
        let g = Grid::unit_square(32).unwrap();
        let w = ScalarField::from_fn(&g, |x| (x[0] * x[1]).powf(-0.3) + 0.1);
        let m = SpdField::from_scalar(&w).unwrap();
        let fam = CubeFamily::for_grid(&g);
        for p in [1.5, 2.0, 3.0] {
            let a = scalar_ap(&w, p, &fam).unwrap();
            let b = matrix_ap(&m, p, &fam).unwrap();
            assert!((a.value - b.value).abs() <= 1e-12 * a.value, "p={p}: {} {}", a.value, b.value);
        }
    }

    #[test]
    fn derived_scalars_sandwich() {
        let g = Grid::unit_square(8).unwrap();
        let w = SpdField::from_fn(&g, |x| Mat::from_rows(&[&[2.0 + x[0], x[1]], &[x[1], 1.0]])).unwrap();
        let (v, lo) = derived_scalars(&w);
        for i in 0..g.len() {
            assert!(lo.values[i] <= v.values[i]);
            let e = crate::spd::spd_decompose(&w.matrix(i)).unwrap();
            assert_eq!(v.values[i], e.values[0]);
        }
    }

    #[test]
    fn lauzon_treil_identity_and_errors() {
        let g = Grid::unit_square(16).unwrap();
        let fam = CubeFamily::for_grid(&g);
        let r = lauzon_treil_a2(&SpdField::identity(&g, 2), &fam, 16).unwrap();
        assert!(r.directions.iter().all(|d| (d.forward - 1.0).abs() < 1e-12 && (d.inverse - 1.0).abs() < 1e-12));
        assert!(matches!(lauzon_treil_a2(&SpdField::identity(&g, 3), &fam, 16), Err(Error::Dimension(_))));
        assert!(lauzon_treil_a2(&SpdField::identity(&g, 2), &fam, 8).is_err());
    }

    #[test]
    fn inclusion_checks_sqrt_weight() {
        let w = power_1d(1024, 0.5);
        let fam = CubeFamily::for_grid(&w.grid);
        let r = set_inclusion_checks(&w, 2.0, 2.0, &fam, 1000, 17).unwrap();
        assert!(r.pass, "{r:?}");
        let c = ScalarField::constant(&w.grid, 1.0);
        let r = set_inclusion_checks(&c, 2.0, 2.0, &fam, 50, 1).unwrap();
        assert!(r.pass);
        // E = Q on the first trial gives equality for w ≡ 1
        assert!((r.max_ratio_ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_map_weights_sharpness() {
        let g = Grid::cube(2, -1.0, 1.0, 256).unwrap().with_ball_domain(vec![0.0, 0.0], 1.0).unwrap();
        let pair = ball_map_pair(&g);
        let fam = CubeFamily::for_grid(&g);
        let a12 = scalar_ap(&pair.w, 1.2, &fam).unwrap();
        let a15 = scalar_ap(&pair.w, 1.5, &fam).unwrap();
        assert_eq!(a12.verdict, Verdict::Diverging, "{:?}", a12.growth);
        assert_eq!(a15.verdict, Verdict::Finite, "{:?}", a15.growth);
    }

    #[test]
    fn data_only_fields_block_average() {
        let g = Grid::unit_interval(256).unwrap();
        let w = ScalarField::new(g.clone(), (0..256).map(|i| g.coord(0, i).sqrt()).collect()).unwrap();
        let fam = CubeFamily::for_grid(&g);
        let est = scalar_ap(&w, 2.0, &fam).unwrap();
        assert_eq!(est.verdict, Verdict::Finite);
        let gen = ScalarField::from_gen(&g, Arc::new(|g: &Grid| (0..g.len()).map(|i| g.coord(0, i).sqrt()).collect()));
        let est2 = scalar_ap(&gen, 2.0, &fam).unwrap();
        assert_eq!(est.per_level_sup.last(), est2.per_level_sup.last());
    }
}
